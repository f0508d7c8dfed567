use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ChannelProfile, ReceiverProfile, TransmitterProfile};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, streams};

/// Closed interval `[lo, hi]`.
pub type Span = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransmitterRanges {
    /// Magnitude of the (compressive) third-order PA coefficient.
    pub pa_a3_mag: Span,
    pub pa_a3_phase_rad: Span,
    pub iq_gain_db: Span,
    pub iq_phase_rad: Span,
    pub cfo_hz: Span,
    pub dc_mag: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverRanges {
    pub iq_gain_db: Span,
    pub iq_phase_rad: Span,
    pub lo_offset_hz: Span,
    pub dc_mag: Span,
    pub gain: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelRanges {
    /// Number of consecutive taps starting at delay 0.
    pub taps: usize,
    /// Mean power of tap k relative to the line-of-sight tap is `decay^k`.
    pub decay: f64,
    pub snr_db: f64,
}

/// Parameter ranges for the synthetic device population. The separations are
/// minimum Euclidean distances between profiles in range-normalized units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSpec {
    pub transmitter: TransmitterRanges,
    pub receiver: ReceiverRanges,
    pub channel: ChannelRanges,
    pub tx_min_separation: f64,
    pub rx_min_separation: f64,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self {
            transmitter: TransmitterRanges {
                pa_a3_mag: [0.0, 0.06],
                pa_a3_phase_rad: [-0.3, 0.3],
                iq_gain_db: [-0.6, 0.6],
                iq_phase_rad: [-0.06, 0.06],
                cfo_hz: [-8_000.0, 8_000.0],
                dc_mag: [0.0, 0.04],
            },
            receiver: ReceiverRanges {
                iq_gain_db: [-1.0, 1.0],
                iq_phase_rad: [-0.1, 0.1],
                lo_offset_hz: [-40_000.0, 40_000.0],
                dc_mag: [0.0, 0.08],
                gain: [0.5, 2.0],
            },
            channel: ChannelRanges { taps: 3, decay: 0.1, snr_db: 25.0 },
            tx_min_separation: 0.3,
            rx_min_separation: 0.3,
        }
    }
}

impl Default for TransmitterRanges {
    fn default() -> Self {
        PopulationSpec::default().transmitter
    }
}

impl Default for ReceiverRanges {
    fn default() -> Self {
        PopulationSpec::default().receiver
    }
}

impl Default for ChannelRanges {
    fn default() -> Self {
        PopulationSpec::default().channel
    }
}

fn lerp(span: Span, u: f64) -> f64 {
    span[0] + (span[1] - span[0]) * u
}

const TX_DIMS: usize = 7;
const RX_DIMS: usize = 6;

fn tx_from_unit(r: &TransmitterRanges, u: &[f64]) -> TransmitterProfile {
    let a3 = -Complex64::from_polar(lerp(r.pa_a3_mag, u[0]), lerp(r.pa_a3_phase_rad, u[1]));
    TransmitterProfile {
        pa_coeffs: vec![Complex64::new(1.0, 0.0), a3],
        iq_gain_mismatch_db: lerp(r.iq_gain_db, u[2]),
        iq_phase_mismatch_rad: lerp(r.iq_phase_rad, u[3]),
        cfo_hz: lerp(r.cfo_hz, u[4]),
        dc_offset: Complex64::from_polar(lerp(r.dc_mag, u[5]), 2.0 * PI * u[6]),
    }
}

fn rx_from_unit(r: &ReceiverRanges, u: &[f64]) -> ReceiverProfile {
    ReceiverProfile {
        iq_gain_mismatch_db: lerp(r.iq_gain_db, u[0]),
        iq_phase_mismatch_rad: lerp(r.iq_phase_rad, u[1]),
        lo_offset_hz: lerp(r.lo_offset_hz, u[2]),
        dc_offset: Complex64::from_polar(lerp(r.dc_mag, u[3]), 2.0 * PI * u[4]),
        gain: lerp(r.gain, u[5]),
    }
}

/// Rejection-samples `count` unit vectors with pairwise distance ≥ `separation`.
fn sample_separated(dims: usize, count: usize, separation: f64, seed: u64, stream: u64) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream_rng(seed, stream);
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
    let budget = 2_000 * count.max(1);
    let mut attempts = 0;
    while accepted.len() < count {
        if attempts >= budget {
            return Err(Error::InfeasibleSeparation { count, separation });
        }
        attempts += 1;
        let cand: Vec<f64> = (0..dims).map(|_| rng.gen::<f64>()).collect();
        let ok = accepted.iter().all(|a| {
            a.iter().zip(&cand).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() >= separation
        });
        if ok {
            accepted.push(cand);
        }
    }
    Ok(accepted)
}

/// Draws `count` distinct transmitter profiles.
pub fn sample_transmitters(spec: &PopulationSpec, count: usize, seed: u64) -> Result<Vec<TransmitterProfile>> {
    Ok(sample_separated(TX_DIMS, count, spec.tx_min_separation, seed, streams::TX_PROFILES)?
        .iter()
        .map(|u| tx_from_unit(&spec.transmitter, u))
        .collect())
}

/// Draws `count` distinct receiver profiles.
pub fn sample_receivers(spec: &PopulationSpec, count: usize, seed: u64) -> Result<Vec<ReceiverProfile>> {
    Ok(sample_separated(RX_DIMS, count, spec.rx_min_separation, seed, streams::RX_PROFILES)?
        .iter()
        .map(|u| rx_from_unit(&spec.receiver, u))
        .collect())
}

/// One channel realization: unit line-of-sight tap with random phase plus
/// Rayleigh echoes, normalized to unit energy.
pub fn sample_channel(spec: &PopulationSpec, seed: u64) -> ChannelProfile {
    let mut rng = stream_rng(seed, streams::CHANNELS);
    let mut taps = Vec::with_capacity(spec.channel.taps.max(1));
    taps.push((0usize, Complex64::from_polar(1.0, 2.0 * PI * rng.gen::<f64>())));
    for k in 1..spec.channel.taps {
        let sigma = (spec.channel.decay.powi(k as i32) / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        taps.push((k, Complex64::new(re * sigma, im * sigma)));
    }
    let energy: f64 = taps.iter().map(|t| t.1.norm_sqr()).sum();
    let scale = 1.0 / energy.sqrt();
    for t in taps.iter_mut() {
        t.1 *= scale;
    }
    ChannelProfile { taps, snr_db: spec.channel.snr_db }
}
