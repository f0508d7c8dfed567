use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::preprocess::{preprocess_pipeline, PipelineConfig};
use crate::rng::{stream_rng, streams};
use crate::store::Record;

pub const VALIDATION_FRACTION: f64 = 0.2;
pub const LAB_DAYS: [u16; 2] = [1, 2];
pub const FIELD_TRAIN_DAY: u16 = 3;
pub const TEST_DAY: u16 = 4;

/// Network-ready captures with their provenance tags.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    /// `[N, 2, len]`: unit-RMS I channel then Q channel.
    pub inputs: Tensor,
    pub tx: Vec<u32>,
    pub rx: Vec<u32>,
    pub day: Vec<u16>,
}

impl LabeledSet {
    pub fn empty(len: usize) -> Self {
        Self { inputs: Tensor::zeros(&[0, 2, len]), tx: Vec::new(), rx: Vec::new(), day: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }

    pub fn input_len(&self) -> usize {
        self.inputs.shape()[2]
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            inputs: self.inputs.select_rows(idx),
            tx: idx.iter().map(|&i| self.tx[i]).collect(),
            rx: idx.iter().map(|&i| self.rx[i]).collect(),
            day: idx.iter().map(|&i| self.day[i]).collect(),
        }
    }

    pub fn concat(sets: &[&LabeledSet]) -> Result<Self> {
        let len = sets.first().map_or(0, |s| s.input_len());
        if sets.iter().any(|s| s.input_len() != len) {
            return Err(Error::Dataset("cannot concatenate sets of different input length".into()));
        }
        let rows: Vec<&[f64]> = sets.iter().flat_map(|s| (0..s.len()).map(move |i| s.inputs.row(i))).collect();
        Ok(Self {
            inputs: Tensor::stack(&rows, &[2, len])?,
            tx: sets.iter().flat_map(|s| s.tx.iter().copied()).collect(),
            rx: sets.iter().flat_map(|s| s.rx.iter().copied()).collect(),
            day: sets.iter().flat_map(|s| s.day.iter().copied()).collect(),
        })
    }

    pub fn filter(&self, keep: impl Fn(u32, u32, u16) -> bool) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| keep(self.tx[i], self.rx[i], self.day[i])).collect();
        self.subset(&idx)
    }

    pub fn tx_ids(&self) -> Vec<u32> {
        self.tx.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn rx_ids(&self) -> Vec<u32> {
        self.rx.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    pub fn days(&self) -> Vec<u16> {
        self.day.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
    }

    /// Class index of each record's transmitter within `ids`.
    pub fn labels(ids: &[u32], of: &[u32]) -> Result<Vec<usize>> {
        of.iter()
            .map(|v| ids.binary_search(v).map_err(|_| Error::Dataset(format!("device {v} has no class"))))
            .collect()
    }

    /// Deterministic train/validation split stratified by (tx, rx) cell.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let mut cells: BTreeMap<(u32, u32), Vec<usize>> = BTreeMap::new();
        for i in 0..self.len() {
            cells.entry((self.tx[i], self.rx[i])).or_default().push(i);
        }
        let mut rng = stream_rng(seed, streams::SPLIT);
        let (mut train, mut val) = (Vec::new(), Vec::new());
        for idx in cells.values_mut() {
            idx.shuffle(&mut rng);
            let n_val = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
            val.extend_from_slice(&idx[..n_val]);
            train.extend_from_slice(&idx[n_val..]);
        }
        train.sort_unstable();
        val.sort_unstable();
        (self.subset(&train), self.subset(&val))
    }
}

/// Runs the preprocessing chain on every record and encodes the result as
/// network input. Records must all share one length after preprocessing.
pub fn prepare_records(records: &[Record], sample_rate_hz: f64, pipeline: &PipelineConfig) -> Result<LabeledSet> {
    let len = pipeline.template.total_len();
    let rows: Vec<Vec<f64>> = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let y = r.to_signal(sample_rate_hz)?;
            let eq = preprocess_pipeline(&y, pipeline).map_err(|e| {
                Error::Dataset(format!("record {i} (tx {}, rx {}, day {}): {e}", r.tx, r.rx, r.day))
            })?;
            if eq.samples.len() != len {
                return Err(Error::Dataset(format!("record {i} preprocesses to {} samples", eq.samples.len())));
            }
            Ok(eq.samples.to_channels_normalized())
        })
        .collect::<Result<_>>()?;
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    Ok(LabeledSet {
        inputs: Tensor::stack(&refs, &[2, len])?,
        tx: records.iter().map(|r| r.tx).collect(),
        rx: records.iter().map(|r| r.rx).collect(),
        day: records.iter().map(|r| r.day).collect(),
    })
}

/// Lab calibration data: days 1-2, split 80/20 into train and validation.
#[derive(Debug, Clone, PartialEq)]
pub struct LabDataset {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub tx_ids: Vec<u32>,
    pub rx_ids: Vec<u32>,
}

impl LabDataset {
    pub fn new(set: &LabeledSet, seed: u64) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::Dataset("empty lab dataset".into()));
        }
        if let Some(d) = set.day.iter().find(|d| !LAB_DAYS.contains(d)) {
            return Err(Error::Dataset(format!("lab record from day {d}; lab data must come from days 1-2")));
        }
        let (train, val) = set.split(VALIDATION_FRACTION, seed);
        if val.is_empty() {
            return Err(Error::Dataset("lab dataset too small for a validation split".into()));
        }
        Ok(Self { tx_ids: set.tx_ids(), rx_ids: set.rx_ids(), train, val })
    }

    pub fn tx_labels(&self, set: &LabeledSet) -> Result<Vec<usize>> {
        LabeledSet::labels(&self.tx_ids, &set.tx)
    }

    pub fn rx_labels(&self, set: &LabeledSet) -> Result<Vec<usize>> {
        LabeledSet::labels(&self.rx_ids, &set.rx)
    }
}

/// Field training data (day 3, split 80/20) on the field receivers.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldDataset {
    pub train: LabeledSet,
    pub val: LabeledSet,
    pub tx_ids: Vec<u32>,
    pub rx_ids: Vec<u32>,
}

impl FieldDataset {
    pub fn new(set: &LabeledSet, seed: u64) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::Dataset("empty field dataset".into()));
        }
        if let Some(d) = set.day.iter().find(|d| **d != FIELD_TRAIN_DAY) {
            return Err(Error::Dataset(format!("field training record from day {d}; expected day 3")));
        }
        let (train, val) = set.split(VALIDATION_FRACTION, seed);
        if val.is_empty() {
            return Err(Error::Dataset("field dataset too small for a validation split".into()));
        }
        Ok(Self { tx_ids: set.tx_ids(), rx_ids: set.rx_ids(), train, val })
    }

    pub fn labels(&self, set: &LabeledSet) -> Result<Vec<usize>> {
        LabeledSet::labels(&self.tx_ids, &set.tx)
    }
}

/// Checks the stage separation: lab and field transmitters disjoint; lab,
/// field and deployment receivers pairwise disjoint; deployment data from
/// day 4 only. Test transmitters outside the field set are outliers and
/// only need to be absent from the lab.
pub fn check_disjoint(lab: Option<&LabDataset>, field: &FieldDataset, test: &LabeledSet) -> Result<()> {
    let field_rx: BTreeSet<u32> = field.rx_ids.iter().copied().collect();
    let test_rx: BTreeSet<u32> = test.rx_ids().into_iter().collect();
    if let Some(r) = field_rx.intersection(&test_rx).next() {
        return Err(Error::Dataset(format!("receiver {r} is both a field and a deployment receiver")));
    }
    if let Some(d) = test.day.iter().find(|d| **d != TEST_DAY) {
        return Err(Error::Dataset(format!("test record from day {d}; expected day 4")));
    }
    if let Some(lab) = lab {
        let lab_tx: BTreeSet<u32> = lab.tx_ids.iter().copied().collect();
        let lab_rx: BTreeSet<u32> = lab.rx_ids.iter().copied().collect();
        let test_tx: BTreeSet<u32> = test.tx_ids().into_iter().collect();
        if let Some(t) = field.tx_ids.iter().chain(&test_tx).find(|t| lab_tx.contains(t)) {
            return Err(Error::Dataset(format!("transmitter {t} appears in both lab and field sets")));
        }
        if let Some(r) = field_rx.iter().chain(&test_rx).find(|r| lab_rx.contains(r)) {
            return Err(Error::Dataset(format!("receiver {r} appears in both lab and field sets")));
        }
    }
    Ok(())
}
