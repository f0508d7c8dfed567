use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::IqSignal;
use crate::error::{Error, Result};

/// Legacy long training field subcarrier values for k = -26..=26.
const LTF_SEQ: [i8; 53] = [
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 0, 1,
    -1, -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
];

/// Legacy short training field: (subcarrier, sign) with value sign * (1 + j) * sqrt(13/6).
const STF_SEQ: [(i32, i8); 12] = [
    (-24, 1),
    (-20, -1),
    (-16, 1),
    (-12, -1),
    (-8, -1),
    (-4, 1),
    (4, -1),
    (8, -1),
    (12, 1),
    (16, 1),
    (20, 1),
    (24, 1),
];

const SUBCARRIER_SPACING_HZ: f64 = 312_500.0;
const USED_SUBCARRIERS: f64 = 52.0;

/// A reference bin of the long training field: DFT index and its unit-magnitude value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceBin {
    pub bin: usize,
    pub value: Complex64,
}

/// Short + long training fields used for detection, CFO and channel estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreambleTemplate {
    stf: IqSignal,
    ltf: IqSignal,
    stf_period: usize,
    ltf_symbol_len: usize,
    ltf_cp_len: usize,
    ltf_repetitions: usize,
    reference: Vec<ReferenceBin>,
    /// DFT of one clean LTF symbol equals `reference.value / bin_scale`.
    bin_scale: f64,
}

impl PreambleTemplate {
    /// WiFi legacy preamble evaluated at `sample_rate_hz`; the rate must give an
    /// integer number of samples per 0.8 µs short-symbol period.
    pub fn legacy_wifi(sample_rate_hz: f64) -> Result<Self> {
        let period_f = sample_rate_hz / SUBCARRIER_SPACING_HZ / 4.0;
        let period = period_f.round() as usize;
        if period == 0 || (period_f - period as f64).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "sample rate {sample_rate_hz} Hz does not give an integer STF period"
            )));
        }
        let n_sym = 4 * period;
        let norm = 1.0 / USED_SUBCARRIERS.sqrt();
        let tone = |k: i32, n: usize| {
            Complex64::from_polar(1.0, 2.0 * PI * k as f64 * n as f64 / n_sym as f64)
        };
        let stf_amp = (13.0f64 / 6.0).sqrt();
        let stf: Vec<Complex64> = (0..10 * period)
            .map(|n| {
                STF_SEQ
                    .iter()
                    .map(|&(k, s)| Complex64::new(1.0, 1.0) * (f64::from(s) * stf_amp) * tone(k, n))
                    .sum::<Complex64>()
                    * norm
            })
            .collect();
        let ltf_symbol: Vec<Complex64> = (0..n_sym)
            .map(|n| {
                LTF_SEQ
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| tone(i as i32 - 26, n) * f64::from(v))
                    .sum::<Complex64>()
                    * norm
            })
            .collect();
        let cp = n_sym / 2;
        let mut ltf = ltf_symbol[n_sym - cp..].to_vec();
        ltf.extend_from_slice(&ltf_symbol);
        ltf.extend_from_slice(&ltf_symbol);
        let reference = LTF_SEQ
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0)
            .map(|(i, &v)| ReferenceBin {
                bin: (i as i64 - 26).rem_euclid(n_sym as i64) as usize,
                value: Complex64::new(f64::from(v), 0.0),
            })
            .collect();
        Ok(Self {
            stf: IqSignal::new(stf, sample_rate_hz)?,
            ltf: IqSignal::new(ltf, sample_rate_hz)?,
            stf_period: period,
            ltf_symbol_len: n_sym,
            ltf_cp_len: cp,
            ltf_repetitions: 2,
            reference,
            bin_scale: USED_SUBCARRIERS.sqrt() / n_sym as f64,
        })
    }

    /// 320 samples at 20 Msps.
    pub fn desk() -> Self {
        Self::legacy_wifi(20e6).expect("20 Msps is a valid preamble rate")
    }

    /// 400 samples at 25 Msps.
    pub fn paper_shaped() -> Self {
        Self::legacy_wifi(25e6).expect("25 Msps is a valid preamble rate")
    }

    pub fn stf(&self) -> &IqSignal {
        &self.stf
    }

    pub fn ltf(&self) -> &IqSignal {
        &self.ltf
    }

    pub fn stf_period(&self) -> usize {
        self.stf_period
    }

    pub fn stf_len(&self) -> usize {
        self.stf.len()
    }

    pub fn ltf_symbol_len(&self) -> usize {
        self.ltf_symbol_len
    }

    pub fn ltf_cp_len(&self) -> usize {
        self.ltf_cp_len
    }

    pub fn ltf_repetitions(&self) -> usize {
        self.ltf_repetitions
    }

    pub fn reference(&self) -> &[ReferenceBin] {
        &self.reference
    }

    pub fn bin_scale(&self) -> f64 {
        self.bin_scale
    }

    pub fn total_len(&self) -> usize {
        self.stf.len() + self.ltf.len()
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.stf.sample_rate_hz()
    }

    /// Offset of the first full LTF symbol from the start of the preamble.
    pub fn ltf_symbols_start(&self) -> usize {
        self.stf.len() + self.ltf_cp_len
    }
}

/// Concatenates STF and LTF into the clean transmitted preamble.
pub fn synth_preamble(template: &PreambleTemplate) -> IqSignal {
    let mut samples = template.stf.samples().to_vec();
    samples.extend_from_slice(template.ltf.samples());
    IqSignal::new(samples, template.sample_rate_hz()).expect("template fields are finite")
}
