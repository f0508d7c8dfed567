use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::data::{LabDataset, LabeledSet};
use super::engine::{
    batches_per_epoch, evaluate_head, fit_head, gather, head_step, infer_all, supervised_step, Sampler, Stopper,
};
use super::TrainingSchedule;
use crate::error::{Error, Result};
use crate::losses::{
    crossentropy, discriminator_confusion_loss, distance_loss_with_grad, occurrence_distribution, one_hot,
    DistanceMetric, LossWeights,
};
use crate::nn::{build_feature_extractor_on_stream, build_head, Adam, AdamConfig, FeConfig, ModelGraph, Tensor};
use crate::rng::streams;
use crate::store::{Checkpoint, CheckpointKind, Provenance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMethod {
    Basic,
    Sd,
    Gan,
}

impl CalibrationMethod {
    pub fn name(self) -> &'static str {
        match self {
            Self::Basic => "basic",
            Self::Sd => "sd",
            Self::Gan => "gan",
        }
    }
}

impl std::str::FromStr for CalibrationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Self::Basic),
            "sd" => Ok(Self::Sd),
            "gan" => Ok(Self::Gan),
            _ => Err(Error::InvalidArgument(format!("unknown calibration method {s:?} (basic|sd|gan)"))),
        }
    }
}

/// One training phase: which components were updated and which were held,
/// with their state digests before and after.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub part: u8,
    pub iteration: usize,
    /// `E1`..`E5` for the adversarial schedule, `epoch` otherwise.
    pub step: String,
    pub updated: Vec<String>,
    pub frozen: Vec<String>,
    pub epochs: usize,
    pub train_loss: f64,
    pub digests_before: BTreeMap<String, String>,
    pub digests_after: BTreeMap<String, String>,
}

/// A loop-control measurement and the decision taken on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckEvent {
    pub part: u8,
    pub iteration: usize,
    pub metric: String,
    pub value: f64,
    pub proceed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LogEvent {
    Phase(PhaseEvent),
    Check(CheckEvent),
    /// Best checkpoint restored for the named components.
    Restore { part: u8, components: Vec<String>, val_loss: f64 },
}

fn short(d: &str) -> &str {
    &d[..d.len().min(12)]
}

impl LogEvent {
    /// One machine-readable line, prefixed `rxa.phase`, `rxa.check` or `rxa.restore`.
    pub fn line(&self) -> String {
        match self {
            LogEvent::Phase(p) => {
                let mut s = format!(
                    "rxa.phase part={} iter={} step={} update={} freeze={} epochs={} loss={:.6}",
                    p.part,
                    p.iteration,
                    p.step,
                    p.updated.join(","),
                    if p.frozen.is_empty() { "-".to_string() } else { p.frozen.join(",") },
                    p.epochs,
                    p.train_loss
                );
                for (name, before) in &p.digests_before {
                    let after = p.digests_after.get(name).map_or("?", |d| short(d));
                    s.push_str(&format!(" {name}={}->{}", short(before), after));
                }
                s
            }
            LogEvent::Check(c) => format!(
                "rxa.check part={} iter={} metric={} value={:.6} proceed={}",
                c.part, c.iteration, c.metric, c.value, c.proceed
            ),
            LogEvent::Restore { part, components, val_loss } => {
                format!("rxa.restore part={part} components={} val_loss={val_loss:.6}", components.join(","))
            }
        }
    }
}

#[derive(Default)]
struct Log {
    events: Vec<LogEvent>,
}

impl Log {
    fn push(&mut self, e: LogEvent) {
        log::info!("{}", e.line());
        self.events.push(e);
    }
}

/// A frozen transmitter feature extractor with its training record.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedFE {
    pub model: ModelGraph,
    pub arch: FeConfig,
    pub provenance: Provenance,
    pub log: Vec<LogEvent>,
}

impl CalibratedFE {
    pub fn digest(&self) -> String {
        self.model.digest()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            kind: CheckpointKind::FeatureExtractor,
            models: vec![("fe".into(), self.model.clone())],
            provenance: self.provenance.clone(),
            classifier: None,
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.kind != CheckpointKind::FeatureExtractor || ckpt.models.len() != 1 {
            return Err(Error::ArchMismatch("not a feature-extractor checkpoint".into()));
        }
        let (_, model) = ckpt.models.into_iter().next().expect("one model");
        let arch = match model.arch() {
            crate::nn::Arch::FeatureExtractor(cfg) => cfg.clone(),
            crate::nn::Arch::Head(_) => return Err(Error::ArchMismatch("checkpoint holds a head".into())),
        };
        Ok(Self { model, arch, provenance: ckpt.provenance, log: Vec::new() })
    }
}

fn digests(models: &[(&str, &ModelGraph)]) -> BTreeMap<String, String> {
    models.iter().map(|(n, m)| (n.to_string(), m.digest())).collect()
}

fn check_lab(lab: &LabDataset, arch: &FeConfig, need_rx: bool) -> Result<()> {
    if lab.tx_ids.len() < 2 {
        return Err(Error::Dataset(format!(
            "calibration needs at least 2 lab transmitters, got {}",
            lab.tx_ids.len()
        )));
    }
    if need_rx && lab.rx_ids.len() < 2 {
        return Err(Error::Dataset(format!(
            "this method needs at least 2 lab receivers, got {}",
            lab.rx_ids.len()
        )));
    }
    if lab.train.input_len() != arch.input_len {
        return Err(Error::Shape(format!(
            "architecture expects {} samples, data has {}",
            arch.input_len,
            lab.train.input_len()
        )));
    }
    Ok(())
}

fn provenance(method: CalibrationMethod, seed: u64, sched: &TrainingSchedule, w: Option<LossWeights>) -> Provenance {
    Provenance {
        method: method.name().into(),
        seed,
        schedule: Some(sched.clone()),
        weights: w,
        ..Provenance::default()
    }
}

fn adam(model: &ModelGraph, lr: f64) -> Adam {
    Adam::new(model, AdamConfig { lr, ..AdamConfig::default() })
}

/// Transmitter branch shared by every method: `f_tx`, `c_tx` and the
/// transmitter-balanced batch stream.
struct TxBranch {
    fe: ModelGraph,
    head: ModelGraph,
    opt_fe: Adam,
    opt_head: Adam,
    sampler: Sampler,
    labels: Vec<usize>,
    val_labels: Vec<usize>,
    classes: usize,
}

impl TxBranch {
    fn new(lab: &LabDataset, arch: &FeConfig, sched: &TrainingSchedule, seed: u64) -> Result<Self> {
        Self::with_labels(lab.tx_labels(&lab.train)?, lab.tx_labels(&lab.val)?, lab.tx_ids.len(), arch, sched, seed)
    }

    fn with_labels(
        labels: Vec<usize>,
        val_labels: Vec<usize>,
        classes: usize,
        arch: &FeConfig,
        sched: &TrainingSchedule,
        seed: u64,
    ) -> Result<Self> {
        let fe = build_feature_extractor_on_stream(arch, seed, streams::INIT_FE)?;
        let head = build_head(arch.feature_len, classes, seed, streams::INIT_TX_HEAD)?;
        Ok(Self {
            opt_fe: adam(&fe, sched.lr_part1),
            opt_head: adam(&head, sched.lr_part1),
            sampler: Sampler::new(&labels, seed, streams::BATCHES),
            val_labels,
            classes,
            labels,
            fe,
            head,
        })
    }

    /// E1-style epochs: `f_tx + c_tx` on crossentropy.
    fn supervised_epochs(&mut self, train: &LabeledSet, epochs: usize, batch: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0;
        for _ in 0..epochs {
            for _ in 0..batches_per_epoch(train.len(), batch) {
                let idx = self.sampler.batch(batch);
                let x = train.inputs.select_rows(&idx);
                total += supervised_step(
                    &mut self.fe,
                    &mut self.head,
                    &mut self.opt_fe,
                    &mut self.opt_head,
                    &x,
                    &gather(&self.labels, &idx),
                    self.classes,
                )?;
                count += 1;
            }
        }
        Ok(if count > 0 { total / count as f64 } else { 0.0 })
    }

    fn val_loss(&self, val: &LabeledSet) -> Result<(f64, f64)> {
        let feats = infer_all(&self.fe, &val.inputs)?;
        evaluate_head(&self.head, &feats, &self.val_labels, self.classes)
    }
}

/// Basic-RXA: `f_tx + c_tx` on the transmitter crossentropy until the
/// validation loss stops improving; the best checkpoint is kept.
pub fn calibrate_basic(lab: &LabDataset, arch: &FeConfig, sched: &TrainingSchedule, seed: u64) -> Result<CalibratedFE> {
    sched.validate()?;
    check_lab(lab, arch, false)?;
    let tx = TxBranch::new(lab, arch, sched, seed)?;
    let (fe, _, log) = supervised_run(tx, &lab.train, &lab.val, sched)?;
    Ok(CalibratedFE {
        model: fe,
        arch: arch.clone(),
        provenance: provenance(CalibrationMethod::Basic, seed, sched, None),
        log: log.events,
    })
}

/// End-to-end extractor + head training with best-checkpoint restore.
fn supervised_run(
    mut tx: TxBranch,
    train: &LabeledSet,
    val: &LabeledSet,
    sched: &TrainingSchedule,
) -> Result<(ModelGraph, ModelGraph, Log)> {
    let mut log = Log::default();
    let mut stop = Stopper::new(sched.patience, sched.min_delta);
    let mut best = (tx.fe.clone(), tx.head.clone());
    for epoch in 0..sched.max_epochs {
        let before = digests(&[("f_tx", &tx.fe), ("c_tx", &tx.head)]);
        let loss = tx.supervised_epochs(train, 1, sched.batch_size)?;
        log.push(LogEvent::Phase(PhaseEvent {
            part: 1,
            iteration: epoch,
            step: "epoch".into(),
            updated: vec!["f_tx".into(), "c_tx".into()],
            frozen: vec![],
            epochs: 1,
            train_loss: loss,
            digests_before: before,
            digests_after: digests(&[("f_tx", &tx.fe), ("c_tx", &tx.head)]),
        }));
        let (v, _) = tx.val_loss(val)?;
        if stop.observe(v) {
            best = (tx.fe.clone(), tx.head.clone());
        }
        let proceed = stop.still_decreasing();
        log.push(LogEvent::Check(CheckEvent { part: 1, iteration: epoch, metric: "val_l_tx".into(), value: v, proceed }));
        if !proceed {
            break;
        }
    }
    log.push(LogEvent::Restore { part: 1, components: vec!["f_tx".into(), "c_tx".into()], val_loss: stop.best });
    Ok((best.0, best.1, log))
}

/// Feature extractor and head trained end to end on `train` (no calibration).
#[allow(clippy::too_many_arguments)]
pub(crate) fn train_end_to_end(
    train: &LabeledSet,
    val: &LabeledSet,
    labels: Vec<usize>,
    val_labels: Vec<usize>,
    classes: usize,
    arch: &FeConfig,
    sched: &TrainingSchedule,
    seed: u64,
) -> Result<(ModelGraph, ModelGraph, Vec<LogEvent>)> {
    let tx = TxBranch::with_labels(labels, val_labels, classes, arch, sched, seed)?;
    let (fe, head, log) = supervised_run(tx, train, val, sched)?;
    Ok((fe, head, log.events))
}

/// SD-RXA: transmitter and receiver branches trained together on
/// `L_tx + alpha L_rx + beta L_dist`. The distance term feeds only the two
/// feature extractors.
pub fn calibrate_sd(
    lab: &LabDataset,
    arch: &FeConfig,
    w: &LossWeights,
    metric: DistanceMetric,
    sched: &TrainingSchedule,
    seed: u64,
) -> Result<CalibratedFE> {
    sched.validate()?;
    w.validate()?;
    check_lab(lab, arch, true)?;
    let mut tx = TxBranch::new(lab, arch, sched, seed)?;
    let mut f_rx = build_feature_extractor_on_stream(arch, seed, streams::INIT_RX_FE)?;
    let n_rx = lab.rx_ids.len();
    let mut d_head = build_head(arch.feature_len, n_rx, seed, streams::INIT_RX_HEAD)?;
    let mut opt_frx = adam(&f_rx, sched.lr_part1);
    let mut opt_dh = adam(&d_head, sched.lr_part1);
    let rx_labels = lab.rx_labels(&lab.train)?;
    let mut log = Log::default();
    let mut stop = Stopper::new(sched.patience, sched.min_delta);
    let mut best = (tx.fe.clone(), tx.head.clone());
    let names = ["f_tx", "c_tx", "f_rx", "d_rx"];
    for epoch in 0..sched.max_epochs {
        let before = digests(&[(names[0], &tx.fe), (names[1], &tx.head), (names[2], &f_rx), (names[3], &d_head)]);
        let mut total = 0.0;
        let n_batches = batches_per_epoch(lab.train.len(), sched.batch_size);
        for _ in 0..n_batches {
            let idx = tx.sampler.batch(sched.batch_size);
            let x = lab.train.inputs.select_rows(&idx);
            for m in [&mut tx.fe, &mut tx.head, &mut f_rx, &mut d_head] {
                m.zero_grad();
            }
            let h_tx = tx.fe.forward(&x)?;
            let h_rx = f_rx.forward(&x)?;
            let p_tx = tx.head.forward(&h_tx)?;
            let p_rx = d_head.forward(&h_rx)?;
            let (l_tx, g_tx) = crossentropy(&p_tx, &one_hot(&gather(&tx.labels, &idx), tx.classes)?)?;
            let (l_rx, mut g_rx) = crossentropy(&p_rx, &one_hot(&gather(&rx_labels, &idx), n_rx)?)?;
            g_rx.scale(w.alpha);
            let mut gh_tx = tx.head.backward(&g_tx)?;
            let mut gh_rx = d_head.backward(&g_rx)?;
            let mut l_dist = 0.0;
            if w.beta != 0.0 {
                let (l, gd_tx, gd_rx) = distance_loss_with_grad(&h_tx, &h_rx, metric)?;
                gh_tx.add_scaled(&gd_tx, w.beta)?;
                gh_rx.add_scaled(&gd_rx, w.beta)?;
                l_dist = l;
            }
            tx.fe.backward(&gh_tx)?;
            f_rx.backward(&gh_rx)?;
            tx.opt_head.step(&mut tx.head)?;
            tx.opt_fe.step(&mut tx.fe)?;
            opt_dh.step(&mut d_head)?;
            opt_frx.step(&mut f_rx)?;
            total += crate::losses::sd_rxa_loss(l_tx, l_rx, l_dist, w);
        }
        log.push(LogEvent::Phase(PhaseEvent {
            part: 1,
            iteration: epoch,
            step: "epoch".into(),
            updated: names.iter().map(|s| s.to_string()).collect(),
            frozen: vec![],
            epochs: 1,
            train_loss: total / n_batches as f64,
            digests_before: before,
            digests_after: digests(&[(names[0], &tx.fe), (names[1], &tx.head), (names[2], &f_rx), (names[3], &d_head)]),
        }));
        let (val, _) = tx.val_loss(&lab.val)?;
        if lab.val.len() >= 2 {
            let a = infer_all(&tx.fe, &lab.val.inputs)?;
            let b = infer_all(&f_rx, &lab.val.inputs)?;
            let (d, _, _) = distance_loss_with_grad(&a, &b, metric)?;
            log.push(LogEvent::Check(CheckEvent {
                part: 1,
                iteration: epoch,
                metric: "val_l_dist".into(),
                value: d,
                proceed: true,
            }));
        }
        if stop.observe(val) {
            best = (tx.fe.clone(), tx.head.clone());
        }
        let proceed = stop.still_decreasing();
        log.push(LogEvent::Check(CheckEvent { part: 1, iteration: epoch, metric: "val_l_tx".into(), value: val, proceed }));
        if !proceed {
            break;
        }
    }
    log.push(LogEvent::Restore { part: 1, components: vec!["f_tx".into(), "c_tx".into()], val_loss: stop.best });
    Ok(CalibratedFE {
        model: best.0,
        arch: arch.clone(),
        provenance: provenance(CalibrationMethod::Sd, seed, sched, Some(*w)),
        log: log.events,
    })
}

/// Discriminator `d_rx` on fixed features (the extractor is frozen).
fn discriminator_epochs(
    d_rx: &mut ModelGraph,
    opt: &mut Adam,
    feats: &Tensor,
    rx_labels: &[usize],
    n_rx: usize,
    sampler: &mut Sampler,
    epochs: usize,
    batch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for _ in 0..epochs {
        for _ in 0..batches_per_epoch(feats.rows(), batch) {
            let idx = sampler.batch(batch);
            total += head_step(d_rx, opt, &feats.select_rows(&idx), &gather(rx_labels, &idx), n_rx)?;
            count += 1;
        }
    }
    Ok(if count > 0 { total / count as f64 } else { 0.0 })
}

/// `f_tx` alone on `L_disc + gamma L_tx`; `c_tx` and `d_rx` only pass
/// gradients through.
#[allow(clippy::too_many_arguments)]
fn adversarial_epochs(
    tx: &mut TxBranch,
    d_rx: &mut ModelGraph,
    train: &LabeledSet,
    z: &[f64],
    gamma: f64,
    sampler: &mut Sampler,
    epochs: usize,
    batch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0;
    for _ in 0..epochs {
        for _ in 0..batches_per_epoch(train.len(), batch) {
            let idx = sampler.batch(batch);
            let x = train.inputs.select_rows(&idx);
            tx.fe.zero_grad();
            let h = tx.fe.forward(&x)?;
            let p_rx = d_rx.forward(&h)?;
            let (l_disc, g_disc) = discriminator_confusion_loss(&p_rx, z)?;
            let mut gh = d_rx.backward(&g_disc)?;
            let p_tx = tx.head.forward(&h)?;
            let (l_tx, mut g_tx) = crossentropy(&p_tx, &one_hot(&gather(&tx.labels, &idx), tx.classes)?)?;
            g_tx.scale(gamma);
            gh.add_scaled(&tx.head.backward(&g_tx)?, 1.0)?;
            tx.fe.backward(&gh)?;
            tx.opt_fe.step(&mut tx.fe)?;
            d_rx.zero_grad();
            tx.head.zero_grad();
            total += l_disc + gamma * l_tx;
            count += 1;
        }
    }
    Ok(if count > 0 { total / count as f64 } else { 0.0 })
}

/// GAN-RXA, two parts.
///
/// Part 1 repeats {E1: `f_tx + c_tx` on `L_tx`, `d_rx` frozen; E2: `d_rx` on
/// `L_rx`, `f_tx, c_tx` frozen; E3: `f_tx` on `L_GAN`, `d_rx, c_tx` frozen}
/// while the validation `L_tx` is still decreasing, then restores the best
/// `f_tx, c_tx`. Part 2 freezes `c_tx` and repeats {E4: `d_rx` on `L_rx`;
/// E5: `f_tx` on `L_GAN` at the smaller rate} while `d_rx` still beats
/// chance by the margin, at most `loops` times.
pub fn calibrate_gan(
    lab: &LabDataset,
    arch: &FeConfig,
    w: &LossWeights,
    sched: &TrainingSchedule,
    seed: u64,
) -> Result<CalibratedFE> {
    sched.validate()?;
    w.validate()?;
    check_lab(lab, arch, true)?;
    let mut tx = TxBranch::new(lab, arch, sched, seed)?;
    let n_rx = lab.rx_ids.len();
    let mut d_rx = build_head(arch.feature_len, n_rx, seed, streams::INIT_RX_HEAD)?;
    let mut opt_d = adam(&d_rx, sched.lr_part1);
    let rx_labels = lab.rx_labels(&lab.train)?;
    let rx_val = lab.rx_labels(&lab.val)?;
    let z = occurrence_distribution(&rx_labels, n_rx)?;
    let mut disc_sampler = Sampler::new(&tx.labels, seed, streams::DISC_BATCHES);
    let mut adv_sampler = Sampler::new(&tx.labels, seed, streams::ADV_BATCHES);
    let mut log = Log::default();
    let b = sched.batch_size;

    let snapshot = |tx: &TxBranch, d: &ModelGraph| digests(&[("f_tx", &tx.fe), ("c_tx", &tx.head), ("d_rx", d)]);
    let phase = |part: u8, it: usize, step: &str, up: &[&str], fr: &[&str], epochs: usize, loss: f64, b: BTreeMap<String, String>, a: BTreeMap<String, String>| {
        LogEvent::Phase(PhaseEvent {
            part,
            iteration: it,
            step: step.into(),
            updated: up.iter().map(|s| s.to_string()).collect(),
            frozen: fr.iter().map(|s| s.to_string()).collect(),
            epochs,
            train_loss: loss,
            digests_before: b,
            digests_after: a,
        })
    };

    let mut stop = Stopper::new(sched.patience, sched.min_delta);
    let mut best = (tx.fe.clone(), tx.head.clone());
    for it in 0..sched.max_epochs {
        let before = snapshot(&tx, &d_rx);
        let loss = tx.supervised_epochs(&lab.train, sched.e1, b)?;
        log.push(phase(1, it, "E1", &["f_tx", "c_tx"], &["d_rx"], sched.e1, loss, before, snapshot(&tx, &d_rx)));

        let before = snapshot(&tx, &d_rx);
        let loss = if sched.e2 > 0 {
            let feats = infer_all(&tx.fe, &lab.train.inputs)?;
            discriminator_epochs(&mut d_rx, &mut opt_d, &feats, &rx_labels, n_rx, &mut disc_sampler, sched.e2, b)?
        } else {
            0.0
        };
        log.push(phase(1, it, "E2", &["d_rx"], &["f_tx", "c_tx"], sched.e2, loss, before, snapshot(&tx, &d_rx)));

        let before = snapshot(&tx, &d_rx);
        let loss = adversarial_epochs(&mut tx, &mut d_rx, &lab.train, &z, w.gamma, &mut adv_sampler, sched.e3, b)?;
        log.push(phase(1, it, "E3", &["f_tx"], &["d_rx", "c_tx"], sched.e3, loss, before, snapshot(&tx, &d_rx)));

        let (val, _) = tx.val_loss(&lab.val)?;
        if stop.observe(val) {
            best = (tx.fe.clone(), tx.head.clone());
        }
        let proceed = stop.still_decreasing();
        log.push(LogEvent::Check(CheckEvent { part: 1, iteration: it, metric: "val_l_tx".into(), value: val, proceed }));
        if !proceed {
            break;
        }
    }
    tx.fe = best.0;
    tx.head = best.1;
    log.push(LogEvent::Restore { part: 1, components: vec!["f_tx".into(), "c_tx".into()], val_loss: stop.best });

    tx.opt_fe.set_lr(sched.lr_part2);
    let chance = 1.0 / n_rx as f64 + sched.chance_margin;
    for it in 0..sched.loops {
        let before = snapshot(&tx, &d_rx);
        let feats = infer_all(&tx.fe, &lab.train.inputs)?;
        let loss = discriminator_epochs(&mut d_rx, &mut opt_d, &feats, &rx_labels, n_rx, &mut disc_sampler, sched.e4, b)?;
        log.push(phase(2, it, "E4", &["d_rx"], &["f_tx", "c_tx"], sched.e4, loss, before, snapshot(&tx, &d_rx)));

        let val_feats = infer_all(&tx.fe, &lab.val.inputs)?;
        let (_, acc) = evaluate_head(&d_rx, &val_feats, &rx_val, n_rx)?;
        let proceed = acc > chance;
        log.push(LogEvent::Check(CheckEvent { part: 2, iteration: it, metric: "val_acc_d_rx".into(), value: acc, proceed }));
        if !proceed {
            break;
        }

        let before = snapshot(&tx, &d_rx);
        let loss = adversarial_epochs(&mut tx, &mut d_rx, &lab.train, &z, w.gamma, &mut adv_sampler, sched.e5, b)?;
        log.push(phase(2, it, "E5", &["f_tx"], &["d_rx", "c_tx"], sched.e5, loss, before, snapshot(&tx, &d_rx)));
    }

    Ok(CalibratedFE {
        model: tx.fe,
        arch: arch.clone(),
        provenance: provenance(CalibrationMethod::Gan, seed, sched, Some(*w)),
        log: log.events,
    })
}

pub fn calibrate(
    method: CalibrationMethod,
    lab: &LabDataset,
    arch: &FeConfig,
    w: &LossWeights,
    metric: DistanceMetric,
    sched: &TrainingSchedule,
    seed: u64,
) -> Result<CalibratedFE> {
    match method {
        CalibrationMethod::Basic => calibrate_basic(lab, arch, sched, seed),
        CalibrationMethod::Sd => calibrate_sd(lab, arch, w, metric, sched, seed),
        CalibrationMethod::Gan => calibrate_gan(lab, arch, w, sched, seed),
    }
}

/// Which label a probe head learns from frozen features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeTarget {
    Transmitter,
    Receiver,
}

/// Trains a fresh head on frozen features of the lab training split and
/// returns its validation accuracy.
pub fn probe_head_accuracy(
    fe: &ModelGraph,
    lab: &LabDataset,
    target: ProbeTarget,
    sched: &TrainingSchedule,
    seed: u64,
) -> Result<f64> {
    let (ids, stream) = match target {
        ProbeTarget::Transmitter => (&lab.tx_ids, streams::INIT_TX_HEAD),
        ProbeTarget::Receiver => (&lab.rx_ids, streams::INIT_RX_HEAD),
    };
    let classes = ids.len();
    let labels = |s: &LabeledSet| match target {
        ProbeTarget::Transmitter => lab.tx_labels(s),
        ProbeTarget::Receiver => lab.rx_labels(s),
    };
    let (y_train, y_val) = (labels(&lab.train)?, labels(&lab.val)?);
    let feats = infer_all(fe, &lab.train.inputs)?;
    let val_feats = infer_all(fe, &lab.val.inputs)?;
    let probe_seed = crate::rng::derive_seed(seed, "probe");
    let head = build_head(fe.output_len(), classes, probe_seed, stream)?;
    let mut opt = adam(&head, sched.lr_part1);
    let mut sampler = Sampler::new(&y_train, probe_seed, streams::BATCHES);
    let mut stop = Stopper::new(sched.patience, sched.min_delta);
    let fit = fit_head(
        head,
        &mut opt,
        &feats,
        &y_train,
        &val_feats,
        &y_val,
        classes,
        |b| sampler.batch(b),
        sched.batch_size,
        sched.head_epochs,
        &mut stop,
    )?;
    Ok(fit.val_acc)
}
