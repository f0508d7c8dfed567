use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::{rotate, IqSignal, PreambleTemplate};

/// Default peak threshold on the normalized lag-P autocorrelation.
pub const DEFAULT_DETECT_THRESHOLD: f64 = 0.5;

/// Normalized lag-`period` autocorrelation metric for every candidate start
/// `d` in `0..=last`, computed with running sums over a `window`-sample span.
fn autocorrelation_metric(s: &[Complex64], period: usize, window: usize, last: usize) -> Vec<f64> {
    let mut corr = Complex64::new(0.0, 0.0);
    let mut e_a = 0.0;
    let mut e_b = 0.0;
    for n in 0..window {
        corr += s[n] * s[n + period].conj();
        e_a += s[n].norm_sqr();
        e_b += s[n + period].norm_sqr();
    }
    let mut out = Vec::with_capacity(last + 1);
    for d in 0..=last {
        if d > 0 {
            let (old_a, old_b) = (s[d - 1], s[d - 1 + period]);
            let (new_a, new_b) = (s[d - 1 + window], s[d - 1 + window + period]);
            corr += new_a * new_b.conj() - old_a * old_b.conj();
            e_a += new_a.norm_sqr() - old_a.norm_sqr();
            e_b += new_b.norm_sqr() - old_b.norm_sqr();
        }
        let denom = (e_a.max(0.0) * e_b.max(0.0)).sqrt();
        out.push(if denom > 1e-300 { (corr.norm() / denom).min(1.0) } else { 0.0 });
    }
    out
}

/// Start index of the packet: the argmax (earliest on ties) of the normalized
/// STF autocorrelation over all starts that leave room for a full preamble.
pub fn detect_packet(y: &IqSignal, template: &PreambleTemplate, threshold: f64) -> Result<usize> {
    let total = template.total_len();
    if y.len() < total {
        return Err(Error::InvalidSignal(format!(
            "capture of {} samples is shorter than the {total}-sample preamble",
            y.len()
        )));
    }
    let period = template.stf_period();
    let window = template.stf_len() - period;
    let metric = autocorrelation_metric(y.samples(), period, window, y.len() - total);
    let (best, peak) = metric
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &m)| if m > acc.1 + 1e-12 { (i, m) } else { acc });
    if peak < threshold {
        return Err(Error::NoPacket { peak, threshold });
    }
    Ok(best)
}

/// CFO from the phase of the lag-`stf_period` autocorrelation of the
/// packet-aligned STF: `fs * angle / (2 pi P)`.
pub fn estimate_cfo(y: &IqSignal, stf_period: usize, stf_len: usize) -> f64 {
    let s = y.samples();
    let end = stf_len.min(s.len());
    if end <= stf_period {
        return 0.0;
    }
    let r: Complex64 = (0..end - stf_period).map(|n| s[n + stf_period] * s[n].conj()).sum();
    if r.norm() == 0.0 {
        return 0.0;
    }
    y.sample_rate_hz() * r.arg() / (2.0 * PI * stf_period as f64)
}

/// Multiplies sample n by `exp(j 2 pi hz n / fs)`.
pub fn apply_cfo(y: &IqSignal, hz: f64) -> IqSignal {
    let mut s = y.samples().to_vec();
    rotate(&mut s, hz, y.sample_rate_hz());
    y.with_samples(s).expect("rotation keeps samples finite")
}
