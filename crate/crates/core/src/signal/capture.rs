use num_complex::Complex64;
use rand::Rng;

use super::impairments::{add_awgn, convolve_taps, noise_variance};
use super::{
    apply_receiver, apply_transmitter, synth_preamble, ChannelProfile, IqSignal, PreambleTemplate,
    ReceiverProfile, TransmitterProfile,
};
use crate::error::Result;
use crate::rng::{stream_rng, streams};

/// Upper bound on the random pre-packet padding.
pub const MAX_PAD: usize = 64;

/// Full transmit → channel → receive composition with up to [`MAX_PAD`]
/// samples of noise-only padding ahead of the packet.
pub fn generate_capture(
    template: &PreambleTemplate,
    tx: &TransmitterProfile,
    ch: &ChannelProfile,
    rx: &ReceiverProfile,
    seed: u64,
) -> Result<IqSignal> {
    generate_capture_with_pad_limit(template, tx, ch, rx, seed, MAX_PAD)
}

pub fn generate_capture_with_pad_limit(
    template: &PreambleTemplate,
    tx: &TransmitterProfile,
    ch: &ChannelProfile,
    rx: &ReceiverProfile,
    seed: u64,
    max_pad: usize,
) -> Result<IqSignal> {
    let pad = if max_pad == 0 { 0 } else { stream_rng(seed, streams::PADDING).gen_range(0..=max_pad) };
    generate_capture_with_pad(template, tx, ch, rx, seed, pad)
}

/// Fixed-length capture of `frame_len` samples: random noise-only lead-in,
/// the packet, then noise-only tail.
pub fn generate_capture_framed(
    template: &PreambleTemplate,
    tx: &TransmitterProfile,
    ch: &ChannelProfile,
    rx: &ReceiverProfile,
    seed: u64,
    frame_len: usize,
) -> Result<IqSignal> {
    let slack = frame_len.checked_sub(template.total_len()).ok_or_else(|| {
        crate::error::Error::InvalidArgument(format!(
            "frame of {frame_len} samples cannot hold a {}-sample packet",
            template.total_len()
        ))
    })?;
    let pad = stream_rng(seed, streams::PADDING).gen_range(0..=slack);
    build(template, tx, ch, rx, seed, pad, frame_len)
}

/// As [`generate_capture`] with an explicit padding length.
pub fn generate_capture_with_pad(
    template: &PreambleTemplate,
    tx: &TransmitterProfile,
    ch: &ChannelProfile,
    rx: &ReceiverProfile,
    seed: u64,
    pad: usize,
) -> Result<IqSignal> {
    build(template, tx, ch, rx, seed, pad, pad + template.total_len())
}

fn build(
    template: &PreambleTemplate,
    tx: &TransmitterProfile,
    ch: &ChannelProfile,
    rx: &ReceiverProfile,
    seed: u64,
    pad: usize,
    frame_len: usize,
) -> Result<IqSignal> {
    let fs = template.sample_rate_hz();
    let clean = synth_preamble(template);
    let peak = clean.samples().iter().map(|s| s.norm()).fold(0.0, f64::max);
    tx.validate(fs, 1.5 * peak)?;
    ch.validate()?;
    rx.validate(fs)?;

    let transmitted = apply_transmitter(&clean, tx)?;
    let packet = convolve_taps(transmitted.samples(), &ch.taps);
    let power = packet.iter().map(|s| s.norm_sqr()).sum::<f64>() / packet.len() as f64;
    let mut samples = vec![Complex64::new(0.0, 0.0); pad];
    samples.extend(packet);
    samples.resize(frame_len.max(samples.len()), Complex64::new(0.0, 0.0));
    add_awgn(&mut samples, noise_variance(power, ch.snr_db), seed);
    apply_receiver(&IqSignal::new(samples, fs)?, rx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::apply_channel;

    fn profiles() -> (TransmitterProfile, ChannelProfile, ReceiverProfile) {
        let tx = TransmitterProfile {
            pa_coeffs: vec![Complex64::new(1.0, 0.0), Complex64::new(-0.05, 0.01)],
            iq_gain_mismatch_db: 0.3,
            iq_phase_mismatch_rad: 0.02,
            cfo_hz: 4_000.0,
            dc_offset: Complex64::new(0.01, -0.02),
        };
        let ch = ChannelProfile {
            taps: vec![(0, Complex64::new(0.9, 0.2)), (2, Complex64::new(0.1, -0.2))],
            snr_db: 20.0,
        };
        let rx = ReceiverProfile {
            iq_gain_mismatch_db: -0.4,
            iq_phase_mismatch_rad: 0.05,
            lo_offset_hz: -7_000.0,
            dc_offset: Complex64::new(0.03, 0.0),
            gain: 1.3,
        };
        (tx, ch, rx)
    }

    #[test]
    fn identity_noiseless_capture_is_clean_preamble() {
        let t = PreambleTemplate::desk();
        let y = generate_capture_with_pad(
            &t,
            &TransmitterProfile::identity(),
            &ChannelProfile::identity(),
            &ReceiverProfile::identity(),
            5,
            0,
        )
        .unwrap();
        let x = synth_preamble(&t);
        assert_eq!(y, x);
        assert!((y.energy() - x.energy()).abs() < 1e-12);
    }

    #[test]
    fn capture_is_deterministic() {
        let t = PreambleTemplate::desk();
        let (tx, ch, rx) = profiles();
        let a = generate_capture(&t, &tx, &ch, &rx, 99).unwrap();
        let b = generate_capture(&t, &tx, &ch, &rx, 99).unwrap();
        assert_eq!(a, b);
        let c = generate_capture(&t, &tx, &ch, &rx, 100).unwrap();
        assert_ne!(a, c);
        assert!(a.len() >= t.total_len() && a.len() <= t.total_len() + MAX_PAD);
    }

    #[test]
    fn composition_equals_manual_chaining() {
        let t = PreambleTemplate::desk();
        let (tx, ch, rx) = profiles();
        let seed = 17;
        let y = generate_capture_with_pad(&t, &tx, &ch, &rx, seed, 0).unwrap();
        let manual = apply_receiver(
            &apply_channel(&apply_transmitter(&synth_preamble(&t), &tx).unwrap(), &ch, seed).unwrap(),
            &rx,
        )
        .unwrap();
        assert_eq!(y, manual);
    }

    #[test]
    fn framed_capture_has_fixed_length() {
        let t = PreambleTemplate::desk();
        let (tx, ch, rx) = profiles();
        for seed in 0..5 {
            assert_eq!(generate_capture_framed(&t, &tx, &ch, &rx, seed, 360).unwrap().len(), 360);
        }
        assert!(generate_capture_framed(&t, &tx, &ch, &rx, 0, 100).is_err());
    }

    #[test]
    fn padding_precedes_packet() {
        let t = PreambleTemplate::desk();
        let (tx, mut ch, rx) = profiles();
        ch.snr_db = f64::INFINITY;
        let rx = ReceiverProfile { dc_offset: Complex64::new(0.0, 0.0), ..rx };
        let y = generate_capture_with_pad(&t, &tx, &ch, &rx, 1, 37).unwrap();
        assert_eq!(y.len(), 357);
        assert!(y.samples()[..37].iter().all(|s| s.norm() == 0.0));
        assert!(y.samples()[37].norm() > 0.0);
    }
}
