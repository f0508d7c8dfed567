use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A finite complex baseband sample sequence at a known sample rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IqSignal {
    samples: Vec<Complex64>,
    sample_rate_hz: f64,
}

impl IqSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate_hz: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidSignal("signal has no samples".into()));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::InvalidSignal(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::InvalidSignal(format!("sample {i} is not finite")));
        }
        Ok(Self { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s.norm_sqr()).sum()
    }

    pub fn mean_power(&self) -> f64 {
        self.energy() / self.samples.len() as f64
    }

    /// Builds a signal with the same sample rate from new samples.
    pub fn with_samples(&self, samples: Vec<Complex64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz)
    }

    /// Samples `[start, start + len)` as a new signal.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.samples.len() {
            return Err(Error::InvalidSignal(format!(
                "slice {start}..{} exceeds signal length {}",
                start + len,
                self.samples.len()
            )));
        }
        Self::new(self.samples[start..start + len].to_vec(), self.sample_rate_hz)
    }

    /// Interleaved `[re, im]` pairs as single-precision floats.
    pub fn to_interleaved_f32(&self) -> Vec<f32> {
        self.samples
            .iter()
            .flat_map(|s| [s.re as f32, s.im as f32])
            .collect()
    }

    /// Two-channel real layout `[re_0 .. re_{n-1}, im_0 .. im_{n-1}]`, scaled to unit RMS.
    pub fn to_channels_normalized(&self) -> Vec<f64> {
        let rms = self.mean_power().sqrt();
        let scale = if rms > 0.0 { 1.0 / rms } else { 1.0 };
        let n = self.samples.len();
        let mut out = vec![0.0; 2 * n];
        for (i, s) in self.samples.iter().enumerate() {
            out[i] = s.re * scale;
            out[n + i] = s.im * scale;
        }
        out
    }
}

/// Squared-error energy between two sample sequences over their common length.
pub fn error_energy(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

/// `‖a − b‖ / ‖b‖`.
pub fn relative_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    let denom: f64 = b.iter().map(|s| s.norm_sqr()).sum();
    (error_energy(a, b) / denom).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_non_finite() {
        assert!(IqSignal::new(vec![], 1.0).is_err());
        assert!(IqSignal::new(vec![Complex64::new(f64::NAN, 0.0)], 1.0).is_err());
        assert!(IqSignal::new(vec![Complex64::new(1.0, 0.0)], 0.0).is_err());
        assert!(IqSignal::new(vec![Complex64::new(1.0, 0.0)], 1.0).is_ok());
    }

    #[test]
    fn normalized_channels_have_unit_rms() {
        let s = IqSignal::new(vec![Complex64::new(3.0, 4.0), Complex64::new(0.0, 5.0)], 1.0).unwrap();
        let ch = s.to_channels_normalized();
        let p: f64 = ch.iter().map(|v| v * v).sum::<f64>() / 2.0;
        assert!((p - 1.0).abs() < 1e-12);
        assert!((ch[0] - 0.6).abs() < 1e-12);
        assert!((ch[2] - 0.8).abs() < 1e-12);
    }
}
