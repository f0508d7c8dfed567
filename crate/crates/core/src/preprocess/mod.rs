//! Detect → CFO-correct → MMSE-equalize → CFO-reapply → resample.
//!
//! The channel is estimated on the LTF and removed, but the carrier offset is
//! put back afterwards: it belongs to the transmitter (and receiver)
//! fingerprint rather than to the channel.

mod channel;
mod resample;
mod sync;

use serde::{Deserialize, Serialize};

pub use channel::{equalize, equalizer_taps, estimate_channel_mmse, ChannelEstimate};
pub use resample::{rational_ratio, resample};
pub use sync::{apply_cfo, detect_packet, estimate_cfo, DEFAULT_DETECT_THRESHOLD};

use crate::error::{Error, Result};
use crate::signal::{IqSignal, PreambleTemplate};

/// Where the MMSE estimator gets its noise variance from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseVarSource {
    /// Sample variance of the noise-only padding ahead of the detected packet
    /// (zero when fewer than [`MIN_PAD_FOR_NOISE`] samples are available).
    FromPadding,
    /// Fixed per-bin variance.
    Fixed(f64),
}

pub const MIN_PAD_FOR_NOISE: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Template at the working (equalization) rate.
    pub template: PreambleTemplate,
    pub detect_threshold: f64,
    pub noise_var: NoiseVarSource,
    /// Resample the equalized packet back to the capture rate.
    pub resample_output: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            template: PreambleTemplate::desk(),
            detect_threshold: DEFAULT_DETECT_THRESHOLD,
            noise_var: NoiseVarSource::FromPadding,
            resample_output: false,
        }
    }
}

/// Equalized packet plus the side information recovered on the way.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizedSignal {
    pub samples: IqSignal,
    pub cfo_hz_estimate: f64,
    /// Packet start in working-rate samples.
    pub detect_offset: usize,
}

fn padding_noise_var(pad: &[num_complex::Complex64], template: &PreambleTemplate) -> f64 {
    if pad.len() < MIN_PAD_FOR_NOISE {
        return 0.0;
    }
    let n = pad.len() as f64;
    let mean: num_complex::Complex64 = pad.iter().sum::<num_complex::Complex64>() / n;
    let time_var = pad.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (n - 1.0);
    // Per-bin variance of the scaled symbol DFT.
    time_var * template.bin_scale().powi(2) * template.ltf_symbol_len() as f64
}

pub fn preprocess_pipeline(y: &IqSignal, cfg: &PipelineConfig) -> Result<EqualizedSignal> {
    let t = &cfg.template;
    let input_rate = y.sample_rate_hz();
    let working = if input_rate != t.sample_rate_hz() {
        resample(y, t.sample_rate_hz())?
    } else {
        y.clone()
    };
    let offset = detect_packet(&working, t, cfg.detect_threshold)?;
    let packet = working.slice(offset, t.total_len())?;
    let cfo = estimate_cfo(&packet, t.stf_period(), t.stf_len());
    let corrected = apply_cfo(&packet, -cfo);
    let noise_var = match cfg.noise_var {
        NoiseVarSource::FromPadding => padding_noise_var(&working.samples()[..offset], t),
        NoiseVarSource::Fixed(v) if v >= 0.0 => v,
        NoiseVarSource::Fixed(v) => {
            return Err(Error::InvalidArgument(format!("negative noise variance {v}")))
        }
    };
    let est = estimate_channel_mmse(&corrected.slice(t.stf_len(), t.ltf().len())?, t, noise_var)?;
    let equalized = apply_cfo(&equalize(&corrected, &est)?, cfo);
    let samples = if cfg.resample_output && input_rate != t.sample_rate_hz() {
        resample(&equalized, input_rate)?
    } else {
        equalized
    };
    Ok(EqualizedSignal { samples, cfo_hz_estimate: cfo, detect_offset: offset })
}
