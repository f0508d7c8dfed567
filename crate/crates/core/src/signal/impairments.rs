use std::f64::consts::PI;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::IqSignal;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Transmitter fingerprint: IQ imbalance, DC offset, memoryless PA and CFO.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransmitterProfile {
    /// Odd-order coefficients `[a1, a3, a5, ..]`: out = x * sum a_{2k+1} |x|^{2k}.
    pub pa_coeffs: Vec<Complex64>,
    pub iq_gain_mismatch_db: f64,
    pub iq_phase_mismatch_rad: f64,
    pub cfo_hz: f64,
    pub dc_offset: Complex64,
}

/// Propagation channel: sparse FIR taps plus AWGN.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelProfile {
    pub taps: Vec<(usize, Complex64)>,
    /// AWGN level relative to the post-convolution signal power; `inf` disables noise.
    pub snr_db: f64,
}

/// Receiver fingerprint: front-end gain, LO offset, IQ imbalance and DC offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceiverProfile {
    pub iq_gain_mismatch_db: f64,
    pub iq_phase_mismatch_rad: f64,
    pub lo_offset_hz: f64,
    pub dc_offset: Complex64,
    pub gain: f64,
}

impl TransmitterProfile {
    pub fn identity() -> Self {
        Self {
            pa_coeffs: vec![Complex64::new(1.0, 0.0)],
            iq_gain_mismatch_db: 0.0,
            iq_phase_mismatch_rad: 0.0,
            cfo_hz: 0.0,
            dc_offset: Complex64::new(0.0, 0.0),
        }
    }

    /// Checks profile invariants for a signal at `sample_rate_hz` whose
    /// pre-PA amplitude does not exceed `max_amplitude`.
    pub fn validate(&self, sample_rate_hz: f64, max_amplitude: f64) -> Result<()> {
        let a1 = self
            .pa_coeffs
            .first()
            .ok_or_else(|| Error::InvalidProfile("PA polynomial has no coefficients".into()))?;
        if !(0.5..=2.0).contains(&a1.norm()) {
            return Err(Error::InvalidProfile(format!("|a1| = {} outside [0.5, 2]", a1.norm())));
        }
        if self.cfo_hz.abs() >= sample_rate_hz / 10.0 {
            return Err(Error::InvalidProfile(format!(
                "CFO {} Hz exceeds fs/10",
                self.cfo_hz
            )));
        }
        let finite = [self.iq_gain_mismatch_db, self.iq_phase_mismatch_rad, self.cfo_hz]
            .iter()
            .all(|v| v.is_finite())
            && self.dc_offset.is_finite()
            && self.pa_coeffs.iter().all(|c| c.is_finite());
        if !finite {
            return Err(Error::InvalidProfile("non-finite transmitter parameter".into()));
        }
        let mut prev = 0.0;
        for i in 1..=256 {
            let r = max_amplitude * i as f64 / 256.0;
            let mag = pa_gain(&self.pa_coeffs, r * r).norm() * r;
            if mag <= prev {
                return Err(Error::InvalidProfile(format!(
                    "PA output not monotone at amplitude {r:.4}"
                )));
            }
            prev = mag;
        }
        Ok(())
    }
}

impl ChannelProfile {
    pub fn identity() -> Self {
        Self { taps: vec![(0, Complex64::new(1.0, 0.0))], snr_db: f64::INFINITY }
    }

    pub fn flat(gain: Complex64, snr_db: f64) -> Self {
        Self { taps: vec![(0, gain)], snr_db }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::InvalidProfile("channel has no taps".into()));
        }
        if self.taps.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::InvalidProfile("tap delays must be strictly increasing".into()));
        }
        let energy: f64 = self.taps.iter().map(|t| t.1.norm_sqr()).sum();
        if !(0.1..=10.0).contains(&energy) {
            return Err(Error::InvalidProfile(format!("tap energy {energy} outside [0.1, 10]")));
        }
        if self.snr_db.is_nan() {
            return Err(Error::InvalidProfile("SNR is NaN".into()));
        }
        Ok(())
    }
}

impl ReceiverProfile {
    pub fn identity() -> Self {
        Self {
            iq_gain_mismatch_db: 0.0,
            iq_phase_mismatch_rad: 0.0,
            lo_offset_hz: 0.0,
            dc_offset: Complex64::new(0.0, 0.0),
            gain: 1.0,
        }
    }

    pub fn validate(&self, sample_rate_hz: f64) -> Result<()> {
        if !(0.25..=4.0).contains(&self.gain) {
            return Err(Error::InvalidProfile(format!("gain {} outside [0.25, 4]", self.gain)));
        }
        if self.lo_offset_hz.abs() >= sample_rate_hz / 10.0 {
            return Err(Error::InvalidProfile(format!(
                "LO offset {} Hz exceeds fs/10",
                self.lo_offset_hz
            )));
        }
        if !(self.iq_gain_mismatch_db.is_finite()
            && self.iq_phase_mismatch_rad.is_finite()
            && self.dc_offset.is_finite())
        {
            return Err(Error::InvalidProfile("non-finite receiver parameter".into()));
        }
        Ok(())
    }
}

fn pa_gain(coeffs: &[Complex64], amp_sq: f64) -> Complex64 {
    // Horner in |x|^2.
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * amp_sq + c)
}

/// Direct and image coefficients `(mu, nu)` of `y = mu x + nu conj(x)` for a
/// quadrature branch with gain `10^(db/20)` and phase skew `phase`.
pub fn iq_imbalance_coeffs(gain_db: f64, phase_rad: f64) -> (Complex64, Complex64) {
    let g = 10f64.powf(gain_db / 20.0);
    let mu = (Complex64::new(1.0, 0.0) + Complex64::from_polar(g, -phase_rad)) * 0.5;
    let nu = (Complex64::new(1.0, 0.0) - Complex64::from_polar(g, phase_rad)) * 0.5;
    (mu, nu)
}

fn apply_iq_imbalance(samples: &mut [Complex64], gain_db: f64, phase_rad: f64) {
    if gain_db == 0.0 && phase_rad == 0.0 {
        return;
    }
    let (mu, nu) = iq_imbalance_coeffs(gain_db, phase_rad);
    for s in samples.iter_mut() {
        *s = mu * *s + nu * s.conj();
    }
}

pub(crate) fn rotate(samples: &mut [Complex64], hz: f64, sample_rate_hz: f64) {
    if hz == 0.0 {
        return;
    }
    let w = 2.0 * PI * hz / sample_rate_hz;
    for (n, s) in samples.iter_mut().enumerate() {
        *s *= Complex64::from_polar(1.0, w * n as f64);
    }
}

fn ensure_finite(samples: &[Complex64], what: &str) -> Result<()> {
    if samples.iter().all(|s| s.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteOutput(what.to_string()))
    }
}

/// Transmitter chain: IQ imbalance, DC offset, PA polynomial, CFO rotation.
pub fn apply_transmitter(x: &IqSignal, tx: &TransmitterProfile) -> Result<IqSignal> {
    let mut s = x.samples().to_vec();
    apply_iq_imbalance(&mut s, tx.iq_gain_mismatch_db, tx.iq_phase_mismatch_rad);
    if tx.dc_offset != Complex64::new(0.0, 0.0) {
        s.iter_mut().for_each(|v| *v += tx.dc_offset);
    }
    if !(tx.pa_coeffs.len() == 1 && tx.pa_coeffs[0] == Complex64::new(1.0, 0.0)) {
        for v in s.iter_mut() {
            *v *= pa_gain(&tx.pa_coeffs, v.norm_sqr());
        }
    }
    rotate(&mut s, tx.cfo_hz, x.sample_rate_hz());
    ensure_finite(&s, "transmitter profile diverged")?;
    x.with_samples(s)
}

/// Linear convolution with the channel taps, truncated to the input length.
pub fn convolve_taps(x: &[Complex64], taps: &[(usize, Complex64)]) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    for &(delay, g) in taps {
        for n in delay..x.len() {
            out[n] += g * x[n - delay];
        }
    }
    out
}

/// Noise variance for `snr_db` relative to a mean signal power.
pub fn noise_variance(signal_power: f64, snr_db: f64) -> f64 {
    if snr_db.is_infinite() && snr_db > 0.0 {
        0.0
    } else {
        signal_power / 10f64.powf(snr_db / 10.0)
    }
}

pub(crate) fn add_awgn(samples: &mut [Complex64], variance: f64, seed: u64) {
    if variance <= 0.0 {
        return;
    }
    let mut rng = stream_rng(seed, streams::NOISE);
    let sigma = (variance / 2.0).sqrt();
    for s in samples.iter_mut() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *s += Complex64::new(re * sigma, im * sigma);
    }
}

/// Multipath convolution then AWGN referenced to the post-convolution power.
pub fn apply_channel(x: &IqSignal, ch: &ChannelProfile, rng_seed: u64) -> Result<IqSignal> {
    let mut y = convolve_taps(x.samples(), &ch.taps);
    let power = y.iter().map(|s| s.norm_sqr()).sum::<f64>() / y.len() as f64;
    add_awgn(&mut y, noise_variance(power, ch.snr_db), rng_seed);
    ensure_finite(&y, "channel output")?;
    x.with_samples(y)
}

/// Receiver chain: gain, LO rotation, IQ imbalance, DC offset.
pub fn apply_receiver(x: &IqSignal, rx: &ReceiverProfile) -> Result<IqSignal> {
    let mut s = x.samples().to_vec();
    if rx.gain != 1.0 {
        s.iter_mut().for_each(|v| *v *= rx.gain);
    }
    rotate(&mut s, rx.lo_offset_hz, x.sample_rate_hz());
    apply_iq_imbalance(&mut s, rx.iq_gain_mismatch_db, rx.iq_phase_mismatch_rad);
    if rx.dc_offset != Complex64::new(0.0, 0.0) {
        s.iter_mut().for_each(|v| *v += rx.dc_offset);
    }
    ensure_finite(&s, "receiver profile diverged")?;
    x.with_samples(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{synth_preamble, PreambleTemplate};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn preamble() -> IqSignal {
        synth_preamble(&PreambleTemplate::desk())
    }

    #[test]
    fn identity_profiles_are_exact() {
        let x = preamble();
        assert_eq!(apply_transmitter(&x, &TransmitterProfile::identity()).unwrap(), x);
        assert_eq!(apply_receiver(&x, &ReceiverProfile::identity()).unwrap(), x);
        assert_eq!(apply_channel(&x, &ChannelProfile::identity(), 3).unwrap(), x);
    }

    #[test]
    fn pa_on_real_tone_follows_polynomial() {
        let a = 0.8;
        let x = IqSignal::new(
            (0..64).map(|n| c(a * (2.0 * PI * n as f64 / 16.0).cos(), 0.0)).collect(),
            1e6,
        )
        .unwrap();
        let (a1, a3) = (1.1, -0.15);
        let tx = TransmitterProfile { pa_coeffs: vec![c(a1, 0.0), c(a3, 0.0)], ..TransmitterProfile::identity() };
        let y = apply_transmitter(&x, &tx).unwrap();
        let peak = y.samples().iter().map(|s| s.norm()).fold(0.0, f64::max);
        assert!((peak - (a1 * a + a3 * a * a * a)).abs() < 1e-12);
    }

    #[test]
    fn cfo_gives_constant_phase_slope() {
        let x = preamble();
        let df = 12_345.0;
        let tx = TransmitterProfile { cfo_hz: df, ..TransmitterProfile::identity() };
        let y = apply_transmitter(&x, &tx).unwrap();
        let expected = 2.0 * PI * df / x.sample_rate_hz();
        for n in 1..x.len() {
            let r1 = y.samples()[n] / x.samples()[n];
            let r0 = y.samples()[n - 1] / x.samples()[n - 1];
            let d = (r1 / r0).arg();
            assert!((d - expected).abs() < 1e-9, "n={n} d={d}");
        }
    }

    #[test]
    fn single_tap_noiseless_channel_scales() {
        let x = preamble();
        let g = c(0.7, -0.4);
        let y = apply_channel(&x, &ChannelProfile::flat(g, f64::INFINITY), 0).unwrap();
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - g * b).norm() < 1e-15);
        }
    }

    #[test]
    fn two_tap_channel_matches_direct_convolution() {
        let x = preamble();
        let taps = vec![(0, c(0.9, 0.1)), (3, c(-0.2, 0.3))];
        let y = apply_channel(&x, &ChannelProfile { taps: taps.clone(), snr_db: f64::INFINITY }, 0).unwrap();
        let xs = x.samples();
        for n in 0..xs.len() {
            let mut acc = c(0.0, 0.0);
            for k in 0..=n {
                for &(d, g) in &taps {
                    if d == k {
                        acc += g * xs[n - k];
                    }
                }
            }
            assert!((y.samples()[n] - acc).norm() < 1e-12);
        }
    }

    #[test]
    fn channel_noise_is_seeded_and_scaled() {
        let x = preamble();
        let ch = ChannelProfile::flat(c(1.0, 0.0), 10.0);
        let a = apply_channel(&x, &ch, 11).unwrap();
        let b = apply_channel(&x, &ch, 11).unwrap();
        assert_eq!(a, b);
        let noise: Vec<Complex64> = a.samples().iter().zip(x.samples()).map(|(p, q)| p - q).collect();
        let p = noise.iter().map(|s| s.norm_sqr()).sum::<f64>() / noise.len() as f64;
        assert!((p - 0.1).abs() < 0.03, "noise power {p}");
    }

    #[test]
    fn receiver_gain_scales() {
        let x = preamble();
        let rx = ReceiverProfile { gain: 1.7, ..ReceiverProfile::identity() };
        let y = apply_receiver(&x, &rx).unwrap();
        for (a, b) in y.samples().iter().zip(x.samples()) {
            assert!((a - b * 1.7).norm() < 1e-15);
        }
    }

    #[test]
    fn receiver_iq_imbalance_matches_real_mixing_matrix() {
        let x = preamble();
        let (eps_db, phi) = (0.8, 0.07);
        let rx = ReceiverProfile {
            iq_gain_mismatch_db: eps_db,
            iq_phase_mismatch_rad: phi,
            ..ReceiverProfile::identity()
        };
        let y = apply_receiver(&x, &rx).unwrap();
        let g = 10f64.powf(eps_db / 20.0);
        // [I'; Q'] = [[1, 0], [-g sin(phi), g cos(phi)]] [I; Q]
        let m = [[1.0, 0.0], [-g * phi.sin(), g * phi.cos()]];
        for (out, inp) in y.samples().iter().zip(x.samples()) {
            let i = m[0][0] * inp.re + m[0][1] * inp.im;
            let q = m[1][0] * inp.re + m[1][1] * inp.im;
            assert!((out.re - i).abs() < 1e-12 && (out.im - q).abs() < 1e-12);
        }
    }

    #[test]
    fn diverging_pa_is_rejected() {
        let x = IqSignal::new(vec![c(1e200, 0.0)], 1e6).unwrap();
        let tx = TransmitterProfile {
            pa_coeffs: vec![c(1.0, 0.0), c(1e200, 0.0)],
            ..TransmitterProfile::identity()
        };
        assert!(matches!(apply_transmitter(&x, &tx), Err(Error::NonFiniteOutput(_))));
    }

    #[test]
    fn profile_validation() {
        let mut tx = TransmitterProfile::identity();
        assert!(tx.validate(20e6, 2.0).is_ok());
        tx.pa_coeffs[0] = c(0.3, 0.0);
        assert!(tx.validate(20e6, 2.0).is_err());
        tx.pa_coeffs = vec![c(1.0, 0.0), c(-0.5, 0.0)];
        assert!(tx.validate(20e6, 1.0).is_err(), "saturating PA is not monotone up to 1.0");
        let rx = ReceiverProfile { gain: 5.0, ..ReceiverProfile::identity() };
        assert!(rx.validate(20e6).is_err());
        let ch = ChannelProfile { taps: vec![(2, c(1.0, 0.0)), (1, c(0.1, 0.0))], snr_db: 20.0 };
        assert!(ch.validate().is_err());
    }
}
