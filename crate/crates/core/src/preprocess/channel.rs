use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{IqSignal, PreambleTemplate};

/// Per-reference-bin channel estimate on the LTF symbol grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEstimate {
    pub symbol_len: usize,
    pub bins: Vec<usize>,
    pub freq_response: Vec<Complex64>,
    /// Per-bin noise variance used by the estimator.
    pub noise_var: f64,
}

impl ChannelEstimate {
    /// Flat response `h` on every reference bin of `template`.
    pub fn flat(template: &PreambleTemplate, h: Complex64) -> Self {
        Self {
            symbol_len: template.ltf_symbol_len(),
            bins: template.reference().iter().map(|r| r.bin).collect(),
            freq_response: vec![h; template.reference().len()],
            noise_var: 0.0,
        }
    }
}

/// MMSE estimate `Y_k conj(X_k) / (|X_k|^2 + noise_var)` averaged over the
/// repeated LTF symbols. `y_ltf` is the aligned, CFO-corrected LTF field
/// including its cyclic prefix.
pub fn estimate_channel_mmse(
    y_ltf: &IqSignal,
    template: &PreambleTemplate,
    noise_var: f64,
) -> Result<ChannelEstimate> {
    let n = template.ltf_symbol_len();
    let cp = template.ltf_cp_len();
    let reps = template.ltf_repetitions();
    if y_ltf.len() < cp + reps * n {
        return Err(Error::InvalidSignal(format!(
            "LTF of {} samples is shorter than {}",
            y_ltf.len(),
            cp + reps * n
        )));
    }
    if let Some(r) = template.reference().iter().find(|r| r.value.norm_sqr() == 0.0) {
        return Err(Error::ZeroReferenceBin(r.bin));
    }
    let fft = FftPlanner::new().plan_fft_forward(n);
    let mut acc = vec![Complex64::new(0.0, 0.0); template.reference().len()];
    for rep in 0..reps {
        let start = cp + rep * n;
        let mut buf = y_ltf.samples()[start..start + n].to_vec();
        fft.process(&mut buf);
        for (a, r) in acc.iter_mut().zip(template.reference()) {
            let y = buf[r.bin] * template.bin_scale();
            *a += y * r.value.conj() / (r.value.norm_sqr() + noise_var);
        }
    }
    let inv = 1.0 / reps as f64;
    Ok(ChannelEstimate {
        symbol_len: n,
        bins: template.reference().iter().map(|r| r.bin).collect(),
        freq_response: acc.into_iter().map(|a| a * inv).collect(),
        noise_var,
    })
}

fn signed(bin: usize, n: usize) -> i64 {
    let b = bin as i64;
    if b > n as i64 / 2 { b - n as i64 } else { b }
}

/// One-tap equalizer per bin. Reference bins use the regularized inverse
/// `conj(H) / (|H|^2 + lambda^2)`, `lambda = 1e-6 max|H|`; every other bin
/// takes the value of the nearest reference bin (mean of both on a tie).
pub fn equalizer_taps(est: &ChannelEstimate) -> Result<Vec<Complex64>> {
    let n = est.symbol_len;
    if est.bins.is_empty() || est.bins.len() != est.freq_response.len() {
        return Err(Error::InvalidArgument("channel estimate has no reference bins".into()));
    }
    let max_h = est.freq_response.iter().map(|h| h.norm()).fold(0.0, f64::max);
    let lambda = 1e-6 * max_h;
    let inv: Vec<Complex64> = est
        .freq_response
        .iter()
        .map(|h| {
            let d = h.norm_sqr() + lambda * lambda;
            if d > 0.0 { h.conj() / d } else { Complex64::new(0.0, 0.0) }
        })
        .collect();
    let mut taps = vec![Complex64::new(0.0, 0.0); n];
    for (k, tap) in taps.iter_mut().enumerate() {
        if let Some(i) = est.bins.iter().position(|&b| b == k) {
            *tap = inv[i];
            continue;
        }
        let sk = signed(k, n);
        let mut best = i64::MAX;
        let mut sum = Complex64::new(0.0, 0.0);
        let mut count = 0.0;
        for (i, &b) in est.bins.iter().enumerate() {
            let d = (signed(b, n) - sk).abs();
            if d < best {
                best = d;
                sum = inv[i];
                count = 1.0;
            } else if d == best {
                sum += inv[i];
                count += 1.0;
            }
        }
        *tap = sum / count;
    }
    Ok(taps)
}

/// Frequency-domain equalization over consecutive symbol-length blocks
/// aligned to the end of `y`, so LTF symbols fall on block boundaries.
pub fn equalize(y: &IqSignal, est: &ChannelEstimate) -> Result<IqSignal> {
    let n = est.symbol_len;
    if y.len() < n {
        return Err(Error::InvalidSignal(format!("signal shorter than one {n}-sample block")));
    }
    let taps = equalizer_taps(est)?;
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let scale = 1.0 / n as f64;
    let run = |block: &[Complex64]| -> Vec<Complex64> {
        let mut buf = block.to_vec();
        fwd.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&taps) {
            *b *= g;
        }
        inv.process(&mut buf);
        buf.iter().map(|v| v * scale).collect()
    };
    let s = y.samples();
    let mut out = vec![Complex64::new(0.0, 0.0); s.len()];
    let lead = s.len() % n;
    if lead > 0 {
        out[..lead].copy_from_slice(&run(&s[..n])[..lead]);
    }
    for start in (lead..s.len()).step_by(n) {
        out[start..start + n].copy_from_slice(&run(&s[start..start + n]));
    }
    y.with_samples(out)
}
