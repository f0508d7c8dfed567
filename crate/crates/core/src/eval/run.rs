use std::collections::BTreeMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, mean_std, rejection_score, roc_auc, RocPoint};
use super::plan::{sample_experiment, Assignment, ExperimentPlan, Method, Pools};
use super::synth::{cells, synthesize};
use crate::classifiers::{predict_closed, rejection_rate, ClassifierMode};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::preprocess::PipelineConfig;
use crate::training::{
    calibrate, check_disjoint, prepare_records, train_exhaustive, train_field_classifier, train_naive, CalibratedFE,
    CalibrationMethod, FieldClassifier, FieldDataset, LabDataset, LabeledSet, FIELD_TRAIN_DAY, LAB_DAYS, TEST_DAY,
};

/// Network-ready data of one seed, split by stage.
#[derive(Debug, Clone)]
pub struct SeedData {
    pub assignment: Assignment,
    pub lab: Option<LabDataset>,
    /// Day 3, known field transmitters on every field receiver.
    pub field: LabeledSet,
    /// Day 4, known field transmitters on the deployment receivers.
    pub test_known: LabeledSet,
    /// Day 4, outlier transmitters on the deployment receivers.
    pub test_outliers: LabeledSet,
    /// Day 4, known transmitters on the first field receiver.
    pub field_check: LabeledSet,
}

fn prepare(
    plan: &ExperimentPlan,
    pools: &Pools,
    pipeline: &PipelineConfig,
    txs: &[u32],
    rxs: &[u32],
    days: &[u16],
    per_cell: usize,
    seed: u64,
) -> Result<LabeledSet> {
    if txs.is_empty() || rxs.is_empty() {
        return Ok(LabeledSet::empty(pipeline.template.total_len()));
    }
    let t = &pipeline.template;
    let recs = synthesize(pools, &plan.population, t, &cells(txs, rxs, days), per_cell, plan.frame_len, seed)?;
    prepare_records(&recs, t.sample_rate_hz(), pipeline)
}

/// Samples the assignment and synthesizes, preprocesses and splits the data
/// of one seed following the day mapping: lab days 1-2, field day 3, test day 4.
pub fn prepare_seed(plan: &ExperimentPlan, pools: &Pools, seed: u64) -> Result<SeedData> {
    let pipeline = PipelineConfig::default();
    if plan.arch.input_len != pipeline.template.total_len() {
        return Err(Error::Config(format!(
            "architecture input_len {} does not match the {}-sample preamble",
            plan.arch.input_len,
            pipeline.template.total_len()
        )));
    }
    let a = sample_experiment(plan, pools, seed)?;
    let lab = if plan.needs_lab() {
        let set = prepare(plan, pools, &pipeline, &a.lab_tx, &a.lab_rx, &LAB_DAYS, plan.per_cell, seed)?;
        Some(LabDataset::new(&set, seed)?)
    } else {
        None
    };
    let field = prepare(plan, pools, &pipeline, &a.field_tx, &a.field_rx, &[FIELD_TRAIN_DAY], plan.per_cell, seed)?;
    let test_known = prepare(plan, pools, &pipeline, &a.field_tx, &a.test_rx, &[TEST_DAY], plan.test_per_cell, seed)?;
    let test_outliers =
        prepare(plan, pools, &pipeline, &a.outlier_tx, &a.test_rx, &[TEST_DAY], plan.test_per_cell, seed)?;
    let field_check =
        prepare(plan, pools, &pipeline, &a.field_tx, &a.field_rx[..1], &[TEST_DAY], plan.test_per_cell, seed)?;
    Ok(SeedData { assignment: a, lab, field, test_known, test_outliers, field_check })
}

impl SeedData {
    /// Field training set on the first `k` field receivers.
    pub fn field_dataset(&self, k: usize, seed: u64) -> Result<FieldDataset> {
        let rx = &self.assignment.field_rx[..k.min(self.assignment.field_rx.len())];
        let set = self.field.filter(|_, r, _| rx.contains(&r));
        let f = FieldDataset::new(&set, seed)?;
        let test = LabeledSet::concat(&[&self.test_known, &self.test_outliers])?;
        check_disjoint(self.lab.as_ref(), &f, &test)?;
        Ok(f)
    }
}

#[derive(Serialize)]
struct LabKey<'a> {
    seed: u64,
    lab_tx: &'a [u32],
    lab_rx: &'a [u32],
    per_cell: usize,
    frame_len: usize,
    population_seed: u64,
    population: &'a crate::signal::PopulationSpec,
    arch: &'a crate::nn::FeConfig,
    schedule: &'a crate::training::TrainingSchedule,
    weights: &'a crate::losses::LossWeights,
    metric: crate::losses::DistanceMetric,
}

/// Calibrated extractors keyed by everything that determines them, so
/// plans sharing their lab side (e.g. a closed and an open plan) calibrate once.
#[derive(Debug, Default)]
pub struct CalibrationCache {
    entries: BTreeMap<(String, CalibrationMethod), (CalibratedFE, f64)>,
}

impl CalibrationCache {
    fn key(plan: &ExperimentPlan, a: &Assignment, seed: u64) -> String {
        serde_json::to_string(&LabKey {
            seed,
            lab_tx: &a.lab_tx,
            lab_rx: &a.lab_rx,
            per_cell: plan.per_cell,
            frame_len: plan.frame_len,
            population_seed: plan.population_seed,
            population: &plan.population,
            arch: &plan.arch,
            schedule: &plan.schedule,
            weights: &plan.weights,
            metric: plan.metric,
        })
        .expect("plan serializes")
    }

    /// Extractor for `(seed, method)` under `plan`, calibrating on a miss.
    /// Returns it with the calibration time in seconds and whether it was cached.
    pub fn get_or_calibrate(
        &mut self,
        plan: &ExperimentPlan,
        data: &SeedData,
        method: CalibrationMethod,
        seed: u64,
    ) -> Result<(CalibratedFE, f64, bool)> {
        let key = (Self::key(plan, &data.assignment, seed), method);
        if let Some((fe, secs)) = self.entries.get(&key) {
            return Ok((fe.clone(), *secs, true));
        }
        let lab = data.lab.as_ref().ok_or_else(|| Error::Dataset("no lab data prepared".into()))?;
        let start = Instant::now();
        let fe = calibrate(method, lab, &plan.arch, &plan.weights, plan.metric, &plan.schedule, seed)?;
        let secs = start.elapsed().as_secs_f64();
        self.entries.insert(key, (fe.clone(), secs));
        Ok((fe, secs, false))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Metrics of one (seed, method) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub seed: u64,
    pub method: Method,
    pub mode: ClassifierMode,
    /// Closed-set accuracy on known transmitters at the deployment receivers.
    pub accuracy: Option<f64>,
    /// Outlier-detection AUC (open mode).
    pub auc: Option<f64>,
    /// Rejected fraction of known-transmitter signals at the deployment receivers.
    pub false_alarm: Option<f64>,
    /// Same on fresh day-4 signals at the field receiver the threshold was set on.
    pub field_false_alarm: Option<f64>,
    pub runtime_s: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(v: &[f64]) -> Option<Self> {
        let (mean, std) = mean_std(v)?;
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Some(Self { mean, std, min, max })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Seeds that completed.
    pub completed: usize,
    pub accuracy: Option<Stat>,
    pub auc: Option<Stat>,
    pub false_alarm: Option<Stat>,
    pub field_false_alarm: Option<Stat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub rows: Vec<MetricRow>,
    pub summaries: Vec<MethodSummary>,
    /// ROC over the pooled test scores of all seeds, per method (open mode).
    pub roc: BTreeMap<String, Vec<RocPoint>>,
    /// Some seed/method failed.
    pub partial: bool,
}

impl ExperimentReport {
    /// Aggregates rows; `scores` holds the pooled (rejection score, is outlier) pairs per method name.
    pub fn from_rows(
        plan: ExperimentPlan,
        rows: Vec<MetricRow>,
        scores: BTreeMap<String, Vec<(f64, bool)>>,
    ) -> Result<Self> {
        let mut roc = BTreeMap::new();
        for (m, sc) in scores {
            let (s, o): (Vec<f64>, Vec<bool>) = sc.into_iter().unzip();
            if o.iter().any(|x| *x) && o.iter().any(|x| !*x) {
                roc.insert(m, roc_auc(&s, &o)?.0);
            }
        }
        Ok(Self {
            summaries: summarize(&plan, &rows),
            partial: rows.iter().any(|r| r.error.is_some()),
            plan,
            rows,
            roc,
        })
    }

    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }
}

struct Scored {
    row: MetricRow,
    scores: Vec<(f64, bool)>,
}

fn predictions(p: &Tensor) -> Result<Vec<usize>> {
    (0..p.rows()).map(|i| predict_closed(p.row(i))).collect()
}

/// Test metrics of a trained classifier: accuracy on known transmitters and,
/// in open mode, outlier AUC and false alarms. `field_check` holds fresh
/// known signals at the receiver the threshold was set on.
pub fn evaluate_classifier(
    clf: &FieldClassifier,
    known: &LabeledSet,
    outliers: &LabeledSet,
    field_check: Option<&LabeledSet>,
) -> Result<(MetricRow, Vec<(f64, bool)>)> {
    if known.is_empty() {
        return Err(Error::Dataset("empty test split".into()));
    }
    let truth = LabeledSet::labels(&clf.classes, &known.tx)?;
    let p_known = clf.probabilities(&known.inputs)?;
    let acc = accuracy(&predictions(&p_known)?, &truth)?;
    let mut row = MetricRow {
        seed: clf.provenance.seed,
        method: clf.provenance.method.parse().unwrap_or(Method::Naive),
        mode: clf.mode,
        accuracy: Some(acc),
        auc: None,
        false_alarm: None,
        field_false_alarm: None,
        runtime_s: 0.0,
        error: None,
    };
    let mut scores = Vec::new();
    if clf.mode == ClassifierMode::Open {
        let tau = clf.tau.ok_or_else(|| Error::Dataset("open classifier without threshold".into()))?;
        let known: Vec<f64> = (0..p_known.rows()).map(|i| rejection_score(p_known.row(i))).collect();
        let max_known: Vec<f64> = known.iter().map(|s| 1.0 - s).collect();
        row.false_alarm = Some(rejection_rate(&max_known, tau));
        scores.extend(known.iter().map(|s| (*s, false)));
        if !outliers.is_empty() {
            let p_out = clf.probabilities(&outliers.inputs)?;
            scores.extend((0..p_out.rows()).map(|i| (rejection_score(p_out.row(i)), true)));
            let (s, o): (Vec<f64>, Vec<bool>) = scores.iter().cloned().unzip();
            row.auc = Some(roc_auc(&s, &o)?.1);
        }
        if let Some(fc) = field_check.filter(|f| !f.is_empty()) {
            let p = clf.probabilities(&fc.inputs)?;
            let m: Vec<f64> = (0..p.rows()).map(|i| 1.0 - rejection_score(p.row(i))).collect();
            row.field_false_alarm = Some(rejection_rate(&m, tau));
        }
    }
    Ok((row, scores))
}

fn run_method(
    plan: &ExperimentPlan,
    data: &SeedData,
    method: Method,
    seed: u64,
    cache: &mut CalibrationCache,
) -> Result<Scored> {
    let start = Instant::now();
    let mut extra = 0.0;
    let k = method.field_receivers(plan.rx_field);
    let field = data.field_dataset(k, seed)?;
    let clf = match method {
        Method::Naive => train_naive(&field, &plan.arch, plan.mode, &plan.schedule, seed, plan.target_fa)?,
        Method::Exhaustive(_) => {
            train_exhaustive(&field, &plan.arch, plan.mode, &plan.schedule, seed, plan.target_fa)?
        }
        Method::Basic | Method::Sd | Method::Gan => {
            let cm = method.calibration().expect("calibrated method");
            let (fe, secs, hit) = cache.get_or_calibrate(plan, data, cm, seed)?;
            // Count the calibration time even when an earlier plan paid it.
            if hit {
                extra = secs;
            }
            train_field_classifier(&fe, &field, plan.mode, &plan.schedule, seed, plan.target_fa)?
        }
    };
    let (mut row, scores) =
        evaluate_classifier(&clf, &data.test_known, &data.test_outliers, Some(&data.field_check))?;
    row.method = method;
    row.seed = seed;
    row.runtime_s = start.elapsed().as_secs_f64() + extra;
    Ok(Scored { row, scores })
}

fn summarize(plan: &ExperimentPlan, rows: &[MetricRow]) -> Vec<MethodSummary> {
    plan.methods
        .iter()
        .map(|&m| {
            let ok: Vec<&MetricRow> = rows.iter().filter(|r| r.method == m && r.error.is_none()).collect();
            let col = |f: fn(&MetricRow) -> Option<f64>| Stat::of(&ok.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            MethodSummary {
                method: m,
                completed: ok.len(),
                accuracy: col(|r| r.accuracy),
                auc: col(|r| r.auc),
                false_alarm: col(|r| r.false_alarm),
                field_false_alarm: col(|r| r.field_false_alarm),
            }
        })
        .collect()
}

pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    run_experiment_with(plan, &mut CalibrationCache::default())
}

/// Runs every seed and method. A failing seed/method is recorded in its row
/// and marks the report partial; only an invalid plan aborts.
pub fn run_experiment_with(plan: &ExperimentPlan, cache: &mut CalibrationCache) -> Result<ExperimentReport> {
    plan.validate()?;
    let pools = Pools::for_plan(plan)?;
    let mut rows = Vec::new();
    let mut pooled: BTreeMap<String, Vec<(f64, bool)>> = BTreeMap::new();
    for &seed in &plan.seeds {
        let start = Instant::now();
        let data = prepare_seed(plan, &pools, seed);
        log::info!("rxa.seed seed={seed} data_s={:.2}", start.elapsed().as_secs_f64());
        for &method in &plan.methods {
            let outcome = match &data {
                Ok(d) => run_method(plan, d, method, seed, cache).map_err(|e| e.to_string()),
                Err(e) => Err(format!("data preparation failed: {e}")),
            };
            match outcome {
                Ok(s) => {
                    log::info!(
                        "rxa.result seed={seed} method={method} accuracy={} auc={} runtime_s={:.2}",
                        fmt_opt(s.row.accuracy),
                        fmt_opt(s.row.auc),
                        s.row.runtime_s
                    );
                    pooled.entry(method.to_string()).or_default().extend(s.scores);
                    rows.push(s.row);
                }
                Err(e) => {
                    log::warn!("rxa.result seed={seed} method={method} error={e}");
                    rows.push(MetricRow {
                        seed,
                        method,
                        mode: plan.mode,
                        accuracy: None,
                        auc: None,
                        false_alarm: None,
                        field_false_alarm: None,
                        runtime_s: 0.0,
                        error: Some(e),
                    });
                }
            }
        }
    }
    ExperimentReport::from_rows(plan.clone(), rows, pooled)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |v| format!("{v:.4}"))
}
