//! Stage 1 (lab calibration of a transmitter feature extractor) and stage 2
//! (field classifier on the frozen extractor), plus the naive and exhaustive
//! baselines.

mod calibrate;
mod data;
mod engine;
mod field;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use calibrate::{
    calibrate, calibrate_basic, calibrate_gan, calibrate_sd, probe_head_accuracy, CalibratedFE, CalibrationMethod,
    CheckEvent, LogEvent, PhaseEvent, ProbeTarget,
};
pub use data::{
    check_disjoint, prepare_records, FieldDataset, LabDataset, LabeledSet, FIELD_TRAIN_DAY, LAB_DAYS, TEST_DAY,
    VALIDATION_FRACTION,
};
pub use field::{train_exhaustive, train_field_classifier, train_naive, FieldClassifier};

/// Epoch counts, rates and stopping rules. `e1..e5` and `loops` follow the
/// adversarial schedule; Basic and SD use `max_epochs` with the same
/// patience rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSchedule {
    pub e1: usize,
    pub e2: usize,
    pub e3: usize,
    pub e4: usize,
    pub e5: usize,
    /// Cap on part-2 iterations.
    pub loops: usize,
    pub lr_part1: f64,
    pub lr_part2: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub chance_margin: f64,
    /// Cap on outer iterations while the validation loss keeps improving.
    pub max_epochs: usize,
    /// Epoch cap for heads trained on frozen features.
    pub head_epochs: usize,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        Self {
            e1: 2,
            e2: 2,
            e3: 2,
            e4: 1,
            e5: 1,
            loops: 20,
            lr_part1: 1e-3,
            lr_part2: 1e-4,
            batch_size: 64,
            patience: 3,
            min_delta: 1e-3,
            chance_margin: 0.05,
            max_epochs: 30,
            head_epochs: 40,
        }
    }
}

impl TrainingSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.e1 == 0 {
            return bad("e1 must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad(format!("batch_size {} < 2", self.batch_size));
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if !(self.lr_part1 > 0.0 && self.lr_part1.is_finite()) || !(self.lr_part2 > 0.0) {
            return bad(format!("learning rates must be positive (got {}, {})", self.lr_part1, self.lr_part2));
        }
        if self.lr_part2 >= self.lr_part1 {
            return bad(format!("lr_part2 {} must be below lr_part1 {}", self.lr_part2, self.lr_part1));
        }
        if !(self.min_delta >= 0.0) || !(0.0..1.0).contains(&self.chance_margin) {
            return bad("min_delta must be >= 0 and chance_margin in [0, 1)".into());
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod toy {
    use super::LabeledSet;
    use crate::nn::{FeConfig, Tensor};
    use rand::Rng;
    use rand_distr::StandardNormal;

    pub const LEN: usize = 32;

    pub fn arch() -> FeConfig {
        FeConfig {
            input_channels: 2,
            input_len: LEN,
            stem_channels: 4,
            stem_kernel: 3,
            stem_stride: 1,
            stem_pool: false,
            widths: vec![4, 8],
            blocks: vec![1, 1],
            feature_len: 8,
        }
    }

    /// Transmitters differ in tone frequency and amplitude, receivers add a
    /// DC offset and a phase ramp.
    pub fn set(txs: &[u32], rxs: &[u32], days: &[u16], per_cell: usize, seed: u64) -> LabeledSet {
        let mut rng = crate::rng::stream_rng(seed, 99);
        let (mut rows, mut tx, mut rx, mut day) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for &d in days {
            for &t in txs {
                for &r in rxs {
                    for _ in 0..per_cell {
                        let f = 1.0 + (t % 5) as f64;
                        let a = 0.6 + 0.15 * (t % 4) as f64;
                        let phi: f64 = rng.gen::<f64>() * 0.3;
                        let dc = 0.4 * (r % 3) as f64;
                        let ramp = 0.5 * (r % 4) as f64;
                        let mut v = vec![0.0; 2 * LEN];
                        for k in 0..LEN {
                            let x = k as f64 / LEN as f64;
                            let n1: f64 = rng.sample(StandardNormal);
                            let n2: f64 = rng.sample(StandardNormal);
                            v[k] = a * (std::f64::consts::TAU * f * x + phi).sin() + dc + 0.1 * n1;
                            v[LEN + k] = a * (std::f64::consts::TAU * f * x + phi).cos() + ramp * x + 0.1 * n2;
                        }
                        rows.push(v);
                        tx.push(t);
                        rx.push(r);
                        day.push(d);
                    }
                }
            }
        }
        let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
        LabeledSet { inputs: Tensor::stack(&refs, &[2, LEN]).unwrap(), tx, rx, day }
    }
}
