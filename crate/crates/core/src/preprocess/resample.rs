use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::signal::IqSignal;

/// Zero crossings of the prototype sinc on each side of its center.
const ZERO_CROSSINGS: f64 = 48.0;
/// Cutoff as a fraction of the narrower Nyquist band.
const CUTOFF_FRACTION: f64 = 0.95;
const KAISER_BETA: f64 = 9.0;
const MAX_DENOMINATOR: u64 = 1_000;

/// Smallest `(up, down)` with `up / down == to / from`, if the ratio is
/// rational with denominator at most 1000.
pub fn rational_ratio(from: f64, to: f64) -> Result<(u64, u64)> {
    let ratio = to / from;
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(Error::IrrationalRatio { from, to });
    }
    for down in 1..=MAX_DENOMINATOR {
        let up = (ratio * down as f64).round();
        if up >= 1.0 && (up / down as f64 - ratio).abs() <= 1e-12 * ratio {
            return Ok((up as u64, down));
        }
    }
    Err(Error::IrrationalRatio { from, to })
}

fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= (half / k as f64).powi(2);
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Polyphase rational resampling with a Kaiser-windowed sinc prototype.
pub fn resample(y: &IqSignal, target_rate: f64) -> Result<IqSignal> {
    let from = y.sample_rate_hz();
    let (up, down) = rational_ratio(from, target_rate)?;
    if up == 1 && down == 1 {
        return Ok(y.clone());
    }
    let (up_f, down_f) = (up as f64, down as f64);
    // Cutoff in cycles per sample at the upsampled rate.
    let fc = 0.5 * CUTOFF_FRACTION / up_f.max(down_f);
    let half_width = ZERO_CROSSINGS / (2.0 * fc);
    let i0_beta = bessel_i0(KAISER_BETA);
    let h = |t: f64| -> f64 {
        let r = t / half_width;
        if r.abs() >= 1.0 {
            return 0.0;
        }
        let arg = 2.0 * fc * t;
        let sinc = if arg == 0.0 { 1.0 } else { (PI * arg).sin() / (PI * arg) };
        let w = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
        2.0 * fc * sinc * w
    };
    let x = y.samples();
    let out_len = (x.len() as u64 * up).div_ceil(down) as usize;
    let reach = (half_width / up_f).ceil() as i64 + 1;
    let mut out = Vec::with_capacity(out_len);
    for m in 0..out_len {
        let t = m as f64 * down_f;
        let center = (m as u64 * down / up) as i64;
        let mut acc = Complex64::new(0.0, 0.0);
        for n in (center - reach).max(0)..=(center + reach).min(x.len() as i64 - 1) {
            let w = h(t - n as f64 * up_f);
            if w != 0.0 {
                acc += x[n as usize] * w;
            }
        }
        out.push(acc * up_f);
    }
    IqSignal::new(out, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn band_limited(n: usize, fs: f64, max_hz: f64, seed: u64) -> IqSignal {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let tones: Vec<(f64, Complex64)> = (0..12)
            .map(|_| {
                (
                    rng.gen_range(-max_hz..max_hz),
                    Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI)),
                )
            })
            .collect();
        let s = (0..n)
            .map(|i| {
                let w = (PI * i as f64 / (n - 1) as f64).sin().powi(4);
                tones
                    .iter()
                    .map(|(f, a)| a * Complex64::from_polar(1.0, 2.0 * PI * f * i as f64 / fs))
                    .sum::<Complex64>()
                    * w
            })
            .collect();
        IqSignal::new(s, fs).unwrap()
    }

    #[test]
    fn same_rate_is_identity() {
        let x = band_limited(100, 20e6, 5e6, 1);
        assert_eq!(resample(&x, 20e6).unwrap(), x);
    }

    #[test]
    fn twenty_five_to_twenty_msps_length() {
        let x = band_limited(400, 25e6, 8e6, 2);
        let y = resample(&x, 20e6).unwrap();
        assert_eq!(y.len(), 320);
        assert_eq!(y.sample_rate_hz(), 20e6);
    }

    #[test]
    fn round_trip_error_is_small() {
        for seed in 0..4 {
            let x = band_limited(400, 25e6, 8.125e6, seed);
            let back = resample(&resample(&x, 20e6).unwrap(), 25e6).unwrap();
            assert_eq!(back.len(), 400);
            let err: f64 = back.samples().iter().zip(x.samples()).map(|(a, b)| (a - b).norm_sqr()).sum();
            assert!(err / x.energy() < 1e-3, "seed {seed}: {}", err / x.energy());
        }
    }

    #[test]
    fn irrational_ratio_rejected() {
        let x = band_limited(64, 20e6, 5e6, 3);
        assert!(matches!(resample(&x, 20e6 * 2f64.sqrt()), Err(Error::IrrationalRatio { .. })));
        assert_eq!(rational_ratio(25e6, 20e6).unwrap(), (4, 5));
    }
}
