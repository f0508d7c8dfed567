//! Browser demo: synthesize and preprocess a capture, score an open-set
//! threshold, and show how fingerprints shift between receivers.
//!
//! Each operation is a plain function returning a serializable result; the
//! `#[wasm_bindgen]` wrappers hand it to JavaScript as JSON.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rxa_core::classifiers::{calibrate_threshold, rejection_rate};
use rxa_core::eval::{cells, roc_auc, synthesize, Pools};
use rxa_core::preprocess::{apply_cfo, preprocess_pipeline, PipelineConfig};
use rxa_core::signal::{generate_capture_framed, sample_channel, synth_preamble, PopulationSpec, PreambleTemplate};
use rxa_core::training::prepare_records;
use rxa_core::{Error, Result};
use serde::Serialize;
use wasm_bindgen::prelude::*;

const FRAME_LEN: usize = 360;

#[derive(Debug, Clone, Serialize)]
pub struct Trace {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl Trace {
    fn of(s: &[Complex64]) -> Self {
        Self { re: s.iter().map(|c| c.re).collect(), im: s.iter().map(|c| c.im).collect() }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CaptureView {
    pub received: Trace,
    pub equalized: Trace,
    pub reference: Trace,
    pub tx_cfo_hz: f64,
    pub rx_lo_offset_hz: f64,
    /// Estimated offset; the sum of the two above plus noise.
    pub cfo_hz_estimate: f64,
    pub detect_offset: usize,
    /// Energy of (equalized - reference) over the reference energy: what the
    /// fingerprint leaves behind after equalization. The reference carries
    /// the estimated offset.
    pub residual: f64,
}

/// One capture of transmitter `tx` on receiver `rx` from the default
/// population, before and after preprocessing.
pub fn capture(population_seed: u64, tx: usize, rx: usize, snr_db: f64, seed: u64) -> Result<CaptureView> {
    let spec = PopulationSpec::default();
    let pools = Pools::synthetic(&spec, tx + 1, rx + 1, population_seed)?;
    let t = PreambleTemplate::desk();
    let mut ch = sample_channel(&spec, seed);
    ch.snr_db = snr_db;
    let (tx_p, rx_p) = (&pools.transmitters[tx].1, &pools.receivers[rx].1);
    let y = generate_capture_framed(&t, tx_p, &ch, rx_p, seed, FRAME_LEN)?;
    let out = preprocess_pipeline(&y, &PipelineConfig::default())?;
    // the pipeline hands the offset back to the signal, so compare against a
    // reference carrying the same offset
    let clean = apply_cfo(&synth_preamble(&t), out.cfo_hz_estimate);
    let residual = rxa_core::signal::error_energy(out.samples.samples(), clean.samples()) / clean.energy();
    Ok(CaptureView {
        received: Trace::of(y.samples()),
        equalized: Trace::of(out.samples.samples()),
        reference: Trace::of(clean.samples()),
        tx_cfo_hz: tx_p.cfo_hz,
        rx_lo_offset_hz: rx_p.lo_offset_hz,
        cfo_hz_estimate: out.cfo_hz_estimate,
        detect_offset: out.detect_offset,
        residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RocView {
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auc: f64,
    pub tau: f64,
    /// Known signals rejected at `tau`.
    pub false_alarm: f64,
    /// Outliers rejected at `tau`.
    pub detection: f64,
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Max-probability scores of `n` known and `n` outlier signals, the outliers
/// shifted down by `separation` logits; threshold set for `target_fa`.
pub fn open_set_roc(separation: f64, n: usize, target_fa: f64, seed: u64) -> Result<RocView> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one score per class".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let known: Vec<f64> = (0..n).map(|_| logistic(2.0 + noise.sample(&mut rng))).collect();
    let outliers: Vec<f64> = (0..n).map(|_| logistic(2.0 - separation + noise.sample(&mut rng))).collect();
    let tau = calibrate_threshold(&known, target_fa)?;
    let scores: Vec<f64> = known.iter().chain(&outliers).map(|p| 1.0 - p).collect();
    let is_outlier: Vec<bool> = (0..2 * n).map(|i| i >= n).collect();
    let (points, auc) = roc_auc(&scores, &is_outlier)?;
    Ok(RocView {
        fpr: points.iter().map(|p| p.fpr).collect(),
        tpr: points.iter().map(|p| p.tpr).collect(),
        auc,
        tau,
        false_alarm: rejection_rate(&known, tau),
        detection: rejection_rate(&outliers, tau),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ShiftView {
    pub transmitters: usize,
    /// Nearest-centroid accuracy when training and test share a receiver.
    pub same_receiver: f64,
    /// Same centroids applied to captures from another receiver.
    pub cross_receiver: f64,
    pub chance: f64,
}

/// Nearest-centroid transmitter identification on equalized captures:
/// centroids from receiver 0, tested on fresh captures from receivers 0 and 1.
pub fn receiver_shift(transmitters: usize, per_cell: usize, snr_db: f64, seed: u64) -> Result<ShiftView> {
    if transmitters < 2 || per_cell == 0 {
        return Err(Error::InvalidArgument("need 2+ transmitters and 1+ capture per cell".into()));
    }
    let mut spec = PopulationSpec::default();
    spec.channel.snr_db = snr_db;
    let pools = Pools::synthetic(&spec, transmitters, 2, seed)?;
    let t = PreambleTemplate::desk();
    let txs: Vec<u32> = (0..transmitters as u32).collect();
    let recs = synthesize(&pools, &spec, &t, &cells(&txs, &[0, 1], &[1, 2]), per_cell, FRAME_LEN, seed)?;
    let set = prepare_records(&recs, t.sample_rate_hz(), &PipelineConfig::default())?;
    let width = set.inputs.row_len();

    let mut centroids = vec![vec![0.0; width]; transmitters];
    let mut counts = vec![0usize; transmitters];
    for i in (0..set.len()).filter(|&i| set.rx[i] == 0 && set.day[i] == 1) {
        let k = set.tx[i] as usize;
        counts[k] += 1;
        centroids[k].iter_mut().zip(set.inputs.row(i)).for_each(|(c, v)| *c += v);
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= *n as f64);
    }
    let nearest = |row: &[f64]| {
        let dist = |c: &Vec<f64>| c.iter().zip(row).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        (0..transmitters).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b]))).expect("transmitters")
    };
    let score = |rx: u32| {
        let test: Vec<usize> = (0..set.len()).filter(|&i| set.rx[i] == rx && set.day[i] == 2).collect();
        test.iter().filter(|&&i| nearest(set.inputs.row(i)) == set.tx[i] as usize).count() as f64 / test.len() as f64
    };
    Ok(ShiftView {
        transmitters,
        same_receiver: score(0),
        cross_receiver: score(1),
        chance: 1.0 / transmitters as f64,
    })
}

fn to_js<T: Serialize>(r: Result<T>) -> std::result::Result<String, JsValue> {
    let v = r.map_err(|e| JsValue::from_str(&e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| JsValue::from_str(&e.to_string()))
}

#[wasm_bindgen(js_name = capture)]
pub fn capture_js(population_seed: u32, tx: u32, rx: u32, snr_db: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(capture(population_seed.into(), tx as usize, rx as usize, snr_db, seed.into()))
}

#[wasm_bindgen(js_name = openSetRoc)]
pub fn open_set_roc_js(separation: f64, n: u32, target_fa: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(open_set_roc(separation, n as usize, target_fa, seed.into()))
}

#[wasm_bindgen(js_name = receiverShift)]
pub fn receiver_shift_js(transmitters: u32, per_cell: u32, snr_db: f64, seed: u32) -> std::result::Result<String, JsValue> {
    to_js(receiver_shift(transmitters as usize, per_cell as usize, snr_db, seed.into()))
}
