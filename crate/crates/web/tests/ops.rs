use rxa_web::{capture, capture_js, open_set_roc, receiver_shift};

#[test]
fn capture_is_detected_and_equalized() {
    let v = capture(2024, 1, 0, 35.0, 3).unwrap();
    assert_eq!(v.received.re.len(), 360);
    assert_eq!(v.equalized.re.len(), 320);
    assert_eq!(v.reference.im.len(), 320);
    let total = v.tx_cfo_hz + v.rx_lo_offset_hz;
    // autocorrelation estimate over the short training field: ~300 Hz std at 35 dB
    assert!((v.cfo_hz_estimate - total).abs() < 1_500.0, "{} vs {total}", v.cfo_hz_estimate);
    // the fingerprint survives equalization but is small next to the preamble
    assert!(v.residual > 1e-4 && v.residual < 0.5, "{}", v.residual);
    assert_eq!(capture_js(2024, 1, 0, 35.0, 3).unwrap(), serde_json::to_string(&v).unwrap());
}

#[test]
fn roc_tracks_separation_and_false_alarm() {
    let none = open_set_roc(0.0, 4000, 0.15, 1).unwrap();
    let wide = open_set_roc(3.0, 4000, 0.15, 1).unwrap();
    assert!((none.auc - 0.5).abs() < 0.03, "{}", none.auc);
    assert!(wide.auc > 0.9, "{}", wide.auc);
    assert!(wide.false_alarm <= 0.15 && wide.false_alarm > 0.14);
    assert!(wide.detection > none.detection);
    assert_eq!((wide.fpr[0], wide.tpr[0]), (0.0, 0.0));
    assert_eq!((*wide.fpr.last().unwrap(), *wide.tpr.last().unwrap()), (1.0, 1.0));
    assert!(open_set_roc(1.0, 0, 0.15, 1).is_err());
}

#[test]
fn fingerprints_shift_between_receivers() {
    let v = receiver_shift(5, 12, 30.0, 4).unwrap();
    assert!(v.same_receiver > v.cross_receiver, "{v:?}");
    assert!(v.same_receiver > v.chance);
    assert!(receiver_shift(1, 12, 30.0, 4).is_err());
}
