use rayon::prelude::*;

use super::calibrate::{train_end_to_end, CalibratedFE, LogEvent};
use super::data::FieldDataset;
use super::engine::{fit_head, infer_all, BinarySampler, Sampler, Stopper};
use super::TrainingSchedule;
use crate::classifiers::{calibrate_threshold, predict_closed, predict_open, ClassifierMode, Decision, Verdict};
use crate::error::{Error, Result};
use crate::nn::{build_head, Adam, AdamConfig, FeConfig, ModelGraph, Tensor};
use crate::rng::{derive_seed, streams};
use crate::store::{Checkpoint, CheckpointKind, ClassifierMeta, Provenance};

/// Index of the positive output of a one-versus-all head.
const OVA_POSITIVE: usize = 1;

/// A field authenticator: a frozen feature extractor plus either one
/// `|T_field|`-way head (closed) or one binary head per known transmitter
/// (open).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldClassifier {
    pub fe: ModelGraph,
    /// Digest of `fe` when the heads were trained.
    pub fe_digest: String,
    pub mode: ClassifierMode,
    /// Transmitter id of each class index.
    pub classes: Vec<u32>,
    pub heads: Vec<ModelGraph>,
    /// Rejection threshold (open mode).
    pub tau: Option<f64>,
    pub provenance: Provenance,
    pub log: Vec<LogEvent>,
}

impl FieldClassifier {
    /// Per-class probabilities `[N, C]`. Open mode reports each binary
    /// head's positive-class probability, so rows need not sum to one.
    pub fn probabilities(&self, inputs: &Tensor) -> Result<Tensor> {
        let feats = infer_all(&self.fe, inputs)?;
        match self.mode {
            ClassifierMode::Closed => infer_all(&self.heads[0], &feats),
            ClassifierMode::Open => {
                let n = feats.rows();
                let c = self.heads.len();
                let mut out = vec![0.0; n * c];
                for (k, head) in self.heads.iter().enumerate() {
                    let p = infer_all(head, &feats)?;
                    for i in 0..n {
                        out[i * c + k] = p.at2(i, OVA_POSITIVE);
                    }
                }
                Tensor::new(vec![n, c], out)
            }
        }
    }

    /// Closed mode always accepts the argmax; open mode applies `tau`.
    pub fn decide(&self, inputs: &Tensor) -> Result<Vec<Decision>> {
        let p = self.probabilities(inputs)?;
        (0..p.rows())
            .map(|i| match (self.mode, self.tau) {
                (ClassifierMode::Open, Some(tau)) => predict_open(p.row(i), tau),
                _ => {
                    let c = predict_closed(p.row(i))?;
                    Ok(Decision { verdict: Verdict::Accept(c), max_prob: p.row(i)[c], threshold_used: 0.0 })
                }
            })
            .collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut models = vec![("fe".to_string(), self.fe.clone())];
        match self.mode {
            ClassifierMode::Closed => models.push(("head".into(), self.heads[0].clone())),
            ClassifierMode::Open => {
                models.extend(self.heads.iter().enumerate().map(|(k, h)| (format!("ova.{k}"), h.clone())))
            }
        }
        let mut provenance = self.provenance.clone();
        provenance.fe_digest = Some(self.fe_digest.clone());
        Checkpoint {
            kind: CheckpointKind::Classifier,
            models,
            provenance,
            classifier: Some(ClassifierMeta { mode: self.mode, classes: self.classes.clone(), tau: self.tau }),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::Classifier {
            return Err(Error::ArchMismatch("not a classifier checkpoint".into()));
        }
        let meta = ckpt.classifier.ok_or_else(|| Error::Integrity("classifier checkpoint without metadata".into()))?;
        let mut models = ckpt.models.into_iter();
        let (role, fe) = models.next().ok_or_else(|| Error::Integrity("empty classifier checkpoint".into()))?;
        if role != "fe" {
            return Err(Error::Integrity(format!("first model is {role:?}, expected \"fe\"")));
        }
        let heads: Vec<ModelGraph> = models.map(|(_, m)| m).collect();
        let expected = match meta.mode {
            ClassifierMode::Closed => 1,
            ClassifierMode::Open => meta.classes.len(),
        };
        if heads.len() != expected {
            return Err(Error::ArchMismatch(format!("{} heads for {:?} mode, expected {expected}", heads.len(), meta.mode)));
        }
        let fe_digest = fe.digest();
        if let Some(d) = &ckpt.provenance.fe_digest {
            if *d != fe_digest {
                return Err(Error::Integrity("feature extractor digest does not match the recorded one".into()));
            }
        }
        Ok(Self {
            fe,
            fe_digest,
            mode: meta.mode,
            classes: meta.classes,
            heads,
            tau: meta.tau,
            provenance: ckpt.provenance,
            log: Vec::new(),
        })
    }
}

fn adam(model: &ModelGraph, lr: f64) -> Adam {
    Adam::new(model, AdamConfig { lr, ..AdamConfig::default() })
}

/// One binary head per known transmitter on fixed features.
fn train_ova_heads(
    feats: &Tensor,
    val_feats: &Tensor,
    labels: &[usize],
    val_labels: &[usize],
    classes: usize,
    sched: &TrainingSchedule,
    seed: u64,
) -> Result<Vec<ModelGraph>> {
    (0..classes)
        .into_par_iter()
        .map(|c| {
            let s = derive_seed(seed, &format!("ova.{c}"));
            let pos: Vec<bool> = labels.iter().map(|&l| l == c).collect();
            let bin: Vec<usize> = pos.iter().map(|&p| usize::from(p)).collect();
            let val_bin: Vec<usize> = val_labels.iter().map(|&l| usize::from(l == c)).collect();
            let mut sampler = BinarySampler::new(&pos, s, streams::BATCHES)?;
            let head = build_head(feats.row_len(), 2, s, streams::INIT_TX_HEAD)?;
            let mut opt = adam(&head, sched.lr_part1);
            let mut stop = Stopper::new(sched.patience, sched.min_delta);
            let fit = fit_head(
                head,
                &mut opt,
                feats,
                &bin,
                val_feats,
                &val_bin,
                2,
                |b| sampler.batch(b),
                sched.batch_size,
                sched.head_epochs,
                &mut stop,
            )?;
            Ok(fit.head)
        })
        .collect()
}

fn max_probs(p: &Tensor) -> Vec<f64> {
    (0..p.rows()).map(|i| p.row(i).iter().cloned().fold(f64::MIN, f64::max)).collect()
}

/// Threshold for open mode from the field validation split.
fn open_threshold(clf: &FieldClassifier, field: &FieldDataset, target_fa: f64) -> Result<f64> {
    let p = clf.probabilities(&field.val.inputs)?;
    calibrate_threshold(&max_probs(&p), target_fa)
}

fn check_field(field: &FieldDataset, fe: &ModelGraph) -> Result<()> {
    if field.tx_ids.len() < 2 {
        return Err(Error::Dataset(format!("field training needs at least 2 transmitters, got {}", field.tx_ids.len())));
    }
    let want = fe.input_shape().last().copied().unwrap_or(0);
    if field.train.input_len() != want {
        return Err(Error::Shape(format!("extractor expects {want} samples, data has {}", field.train.input_len())));
    }
    Ok(())
}

/// Stage 2: heads on the frozen calibrated extractor. `target_fa` sets the
/// open-mode threshold on the field validation split.
pub fn train_field_classifier(
    fe: &CalibratedFE,
    field: &FieldDataset,
    mode: ClassifierMode,
    sched: &TrainingSchedule,
    seed: u64,
    target_fa: f64,
) -> Result<FieldClassifier> {
    sched.validate()?;
    if field.rx_ids.len() != 1 {
        return Err(Error::Dataset(format!(
            "field classifier trains on exactly one receiver, got {}",
            field.rx_ids.len()
        )));
    }
    heads_on_frozen(fe, field, mode, sched, seed, target_fa)
}

fn heads_on_frozen(
    fe: &CalibratedFE,
    field: &FieldDataset,
    mode: ClassifierMode,
    sched: &TrainingSchedule,
    seed: u64,
    target_fa: f64,
) -> Result<FieldClassifier> {
    check_field(field, &fe.model)?;
    let fe_digest = fe.digest();
    let feats = infer_all(&fe.model, &field.train.inputs)?;
    let val_feats = infer_all(&fe.model, &field.val.inputs)?;
    let labels = field.labels(&field.train)?;
    let val_labels = field.labels(&field.val)?;
    let classes = field.tx_ids.len();
    let heads = match mode {
        ClassifierMode::Closed => {
            let s = derive_seed(seed, "field");
            let head = build_head(feats.row_len(), classes, s, streams::INIT_TX_HEAD)?;
            let mut opt = adam(&head, sched.lr_part1);
            let mut sampler = Sampler::new(&labels, s, streams::BATCHES);
            let mut stop = Stopper::new(sched.patience, sched.min_delta);
            let fit = fit_head(
                head,
                &mut opt,
                &feats,
                &labels,
                &val_feats,
                &val_labels,
                classes,
                |b| sampler.batch(b),
                sched.batch_size,
                sched.head_epochs,
                &mut stop,
            )?;
            vec![fit.head]
        }
        ClassifierMode::Open => train_ova_heads(&feats, &val_feats, &labels, &val_labels, classes, sched, seed)?,
    };
    if fe.digest() != fe_digest {
        return Err(Error::Integrity("feature extractor changed during field training".into()));
    }
    let mut provenance = fe.provenance.clone();
    provenance.fe_digest = Some(fe_digest.clone());
    provenance.notes.insert("stage".into(), "field".into());
    let mut clf = FieldClassifier {
        fe: fe.model.clone(),
        fe_digest,
        mode,
        classes: field.tx_ids.clone(),
        heads,
        tau: None,
        provenance,
        log: Vec::new(),
    };
    if mode == ClassifierMode::Open {
        clf.tau = Some(open_threshold(&clf, field, target_fa)?);
    }
    Ok(clf)
}

fn field_only(
    method: &str,
    field: &FieldDataset,
    arch: &FeConfig,
    mode: ClassifierMode,
    sched: &TrainingSchedule,
    seed: u64,
    target_fa: f64,
) -> Result<FieldClassifier> {
    sched.validate()?;
    if field.tx_ids.len() < 2 {
        return Err(Error::Dataset(format!("field training needs at least 2 transmitters, got {}", field.tx_ids.len())));
    }
    if field.train.input_len() != arch.input_len {
        return Err(Error::Shape(format!(
            "architecture expects {} samples, data has {}",
            arch.input_len,
            field.train.input_len()
        )));
    }
    let classes = field.tx_ids.len();
    let (fe, head, log) = train_end_to_end(
        &field.train,
        &field.val,
        field.labels(&field.train)?,
        field.labels(&field.val)?,
        classes,
        arch,
        sched,
        seed,
    )?;
    let provenance = Provenance {
        method: method.into(),
        seed,
        schedule: Some(sched.clone()),
        ..Provenance::default()
    };
    match mode {
        ClassifierMode::Closed => Ok(FieldClassifier {
            fe_digest: fe.digest(),
            fe,
            mode,
            classes: field.tx_ids.clone(),
            heads: vec![head],
            tau: None,
            provenance,
            log,
        }),
        ClassifierMode::Open => {
            // The end-to-end extractor is frozen and one-versus-all heads are fitted on it.
            let cal = CalibratedFE { arch: arch.clone(), model: fe, provenance, log };
            let mut clf = heads_on_frozen(&cal, field, mode, sched, seed, target_fa)?;
            clf.log = cal.log;
            Ok(clf)
        }
    }
}

/// Baseline without calibration: extractor and head trained end to end on
/// one field receiver.
pub fn train_naive(
    field: &FieldDataset,
    arch: &FeConfig,
    mode: ClassifierMode,
    sched: &TrainingSchedule,
    seed: u64,
    target_fa: f64,
) -> Result<FieldClassifier> {
    if field.rx_ids.len() != 1 {
        return Err(Error::Dataset(format!("naive training uses one receiver, got {}", field.rx_ids.len())));
    }
    field_only("naive", field, arch, mode, sched, seed, target_fa)
}

/// Baseline with many field receivers pooled; `k = 1` is the naive method.
pub fn train_exhaustive(
    field: &FieldDataset,
    arch: &FeConfig,
    mode: ClassifierMode,
    sched: &TrainingSchedule,
    seed: u64,
    target_fa: f64,
) -> Result<FieldClassifier> {
    if field.rx_ids.is_empty() {
        return Err(Error::Dataset("exhaustive training needs at least one receiver".into()));
    }
    let method = if field.rx_ids.len() == 1 { "naive" } else { "exhaustive" };
    field_only(method, field, arch, mode, sched, seed, target_fa)
}
