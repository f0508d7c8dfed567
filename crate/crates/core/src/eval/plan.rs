use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::classifiers::ClassifierMode;
use crate::error::{Error, Result};
use crate::losses::{DistanceMetric, LossWeights};
use crate::nn::FeConfig;
use crate::rng::{stream_rng, streams};
use crate::signal::{sample_receivers, sample_transmitters, PopulationSpec, ReceiverProfile, TransmitterProfile};
use crate::training::{CalibrationMethod, TrainingSchedule};

/// How the field classifier's extractor is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    /// Extractor trained on the single field receiver.
    Naive,
    /// Extractor trained on `k` pooled field receivers.
    Exhaustive(usize),
    Basic,
    Sd,
    Gan,
}

impl Method {
    pub fn calibration(self) -> Option<CalibrationMethod> {
        match self {
            Method::Basic => Some(CalibrationMethod::Basic),
            Method::Sd => Some(CalibrationMethod::Sd),
            Method::Gan => Some(CalibrationMethod::Gan),
            Method::Naive | Method::Exhaustive(_) => None,
        }
    }

    /// Field receivers the method trains on.
    pub fn field_receivers(self, plan_rx_field: usize) -> usize {
        match self {
            Method::Exhaustive(k) => k,
            _ => plan_rx_field,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Naive => write!(f, "naive"),
            Method::Exhaustive(k) => write!(f, "exhaustive{k}"),
            Method::Basic => write!(f, "basic"),
            Method::Sd => write!(f, "sd"),
            Method::Gan => write!(f, "gan"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "naive" => return Ok(Method::Naive),
            "basic" => return Ok(Method::Basic),
            "sd" => return Ok(Method::Sd),
            "gan" => return Ok(Method::Gan),
            _ => {}
        }
        let k = s.strip_prefix("exhaustive").map(|r| r.trim_start_matches([':', '=']));
        match k.map(str::parse::<usize>) {
            Some(Ok(k)) if k >= 1 => Ok(Method::Exhaustive(k)),
            _ => Err(Error::InvalidArgument(format!(
                "unknown method {s:?} (naive|exhaustive<k>|basic|sd|gan)"
            ))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

/// Everything one experiment needs: set sizes, methods, seeds, the device
/// population and the training setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentPlan {
    pub tx_lab: usize,
    pub rx_lab: usize,
    /// Known field transmitters.
    pub tx_field: usize,
    pub rx_field: usize,
    /// Deployment receivers the classifier is tested on.
    pub rx_test: usize,
    /// Unseen transmitters injected at test time (open mode).
    pub outliers: usize,
    pub mode: ClassifierMode,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    /// Captures per (transmitter, receiver, day) cell for training data.
    pub per_cell: usize,
    /// Captures per cell for test data.
    pub test_per_cell: usize,
    /// Device pool sizes; 0 means exactly as many as the plan needs.
    pub pool_tx: usize,
    pub pool_rx: usize,
    /// Seed of the device pool (fixed across experiment seeds).
    pub population_seed: u64,
    pub population: PopulationSpec,
    /// Capture length in samples (packet plus noise-only slack).
    pub frame_len: usize,
    pub arch: FeConfig,
    pub schedule: TrainingSchedule,
    pub weights: LossWeights,
    pub metric: DistanceMetric,
    /// Open-mode false-alarm target for the threshold.
    pub target_fa: f64,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            tx_lab: 12,
            rx_lab: 6,
            tx_field: 5,
            rx_field: 1,
            rx_test: 2,
            outliers: 0,
            mode: ClassifierMode::Closed,
            methods: vec![Method::Naive, Method::Basic, Method::Gan],
            seeds: vec![1, 2, 3, 4, 5],
            per_cell: 200,
            test_per_cell: 50,
            pool_tx: 0,
            pool_rx: 0,
            population_seed: 2024,
            population: PopulationSpec::default(),
            frame_len: 360,
            arch: FeConfig::default(),
            schedule: TrainingSchedule::default(),
            weights: LossWeights::default(),
            metric: DistanceMetric::default(),
            target_fa: 0.15,
        }
    }
}

impl ExperimentPlan {
    pub fn needs_lab(&self) -> bool {
        self.methods.iter().any(|m| m.calibration().is_some())
    }

    /// Size of the field receiver pool: the largest receiver count any method trains on.
    pub fn field_rx_pool(&self) -> usize {
        self.methods.iter().map(|m| m.field_receivers(self.rx_field)).max().unwrap_or(self.rx_field).max(self.rx_field)
    }

    pub fn tx_needed(&self) -> usize {
        self.tx_lab + self.tx_field + self.outliers
    }

    pub fn rx_needed(&self) -> usize {
        self.rx_lab + self.rx_test + self.field_rx_pool()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.methods.is_empty() {
            return bad("no methods requested".into());
        }
        if self.seeds.is_empty() {
            return bad("no seeds".into());
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return bad(format!("seeds must be distinct: {:?}", self.seeds));
        }
        if self.tx_field < 2 || self.rx_field < 1 || self.rx_test < 1 {
            return bad("need at least 2 field transmitters, 1 field receiver and 1 test receiver".into());
        }
        if self.needs_lab() && self.tx_lab < 2 {
            return bad(format!("calibration needs at least 2 lab transmitters, plan has {}", self.tx_lab));
        }
        let needs_rx = self.methods.iter().any(|m| matches!(m, Method::Sd | Method::Gan));
        if needs_rx && self.rx_lab < 2 {
            return bad(format!("sd/gan need at least 2 lab receivers, plan has {}", self.rx_lab));
        }
        if self.needs_lab() && self.rx_lab < 1 {
            return bad("calibration needs at least 1 lab receiver".into());
        }
        match self.mode {
            ClassifierMode::Open if self.outliers == 0 => return bad("open mode needs at least one outlier".into()),
            ClassifierMode::Closed if self.outliers != 0 => {
                return bad("outliers are only used in open mode".into())
            }
            _ => {}
        }
        if self.per_cell < 5 || self.test_per_cell < 1 {
            return bad("per_cell must be at least 5 (for a validation split) and test_per_cell at least 1".into());
        }
        if !(self.target_fa > 0.0 && self.target_fa < 1.0) {
            return bad(format!("target_fa {} outside (0, 1)", self.target_fa));
        }
        if self.pool_tx != 0 && self.pool_tx < self.tx_needed() {
            return bad(format!("pool_tx {} smaller than the {} transmitters needed", self.pool_tx, self.tx_needed()));
        }
        if self.pool_rx != 0 && self.pool_rx < self.rx_needed() {
            return bad(format!("pool_rx {} smaller than the {} receivers needed", self.pool_rx, self.rx_needed()));
        }
        self.schedule.validate()?;
        self.weights.validate()?;
        Ok(())
    }
}

/// Devices available to an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pools {
    pub transmitters: Vec<(u32, TransmitterProfile)>,
    pub receivers: Vec<(u32, ReceiverProfile)>,
}

impl Pools {
    /// Synthetic devices numbered from 0.
    pub fn synthetic(spec: &PopulationSpec, n_tx: usize, n_rx: usize, seed: u64) -> Result<Self> {
        let tx = sample_transmitters(spec, n_tx, seed)?;
        let rx = sample_receivers(spec, n_rx, seed)?;
        Ok(Self {
            transmitters: tx.into_iter().enumerate().map(|(i, p)| (i as u32, p)).collect(),
            receivers: rx.into_iter().enumerate().map(|(i, p)| (i as u32, p)).collect(),
        })
    }

    pub fn for_plan(plan: &ExperimentPlan) -> Result<Self> {
        let n_tx = if plan.pool_tx == 0 { plan.tx_needed() } else { plan.pool_tx };
        let n_rx = if plan.pool_rx == 0 { plan.rx_needed() } else { plan.pool_rx };
        Self::synthetic(&plan.population, n_tx, n_rx, plan.population_seed)
    }

    pub fn transmitter(&self, id: u32) -> Result<&TransmitterProfile> {
        self.transmitters
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Dataset(format!("transmitter {id} not in pool")))
    }

    pub fn receiver(&self, id: u32) -> Result<&ReceiverProfile> {
        self.receivers
            .iter()
            .find(|(i, _)| *i == id)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Dataset(format!("receiver {id} not in pool")))
    }
}

/// Concrete devices of each role for one seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub lab_tx: Vec<u32>,
    pub lab_rx: Vec<u32>,
    pub field_tx: Vec<u32>,
    /// Field receivers in order; a method training on `k` receivers uses the first `k`.
    pub field_rx: Vec<u32>,
    pub test_rx: Vec<u32>,
    pub outlier_tx: Vec<u32>,
}

impl Assignment {
    /// Lab/field(+outlier) transmitters disjoint; lab, field and test receivers pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        let overlap = |what: &str, a: &[u32], b: &[u32]| -> Result<()> {
            match a.iter().find(|x| b.contains(x)) {
                Some(x) => Err(Error::Dataset(format!("device {x} assigned to both {what}"))),
                None => Ok(()),
            }
        };
        overlap("lab and field transmitters", &self.lab_tx, &self.field_tx)?;
        overlap("lab transmitters and outliers", &self.lab_tx, &self.outlier_tx)?;
        overlap("field transmitters and outliers", &self.field_tx, &self.outlier_tx)?;
        overlap("lab and field receivers", &self.lab_rx, &self.field_rx)?;
        overlap("lab and test receivers", &self.lab_rx, &self.test_rx)?;
        overlap("field and test receivers", &self.field_rx, &self.test_rx)?;
        for (what, v) in [
            ("lab transmitters", &self.lab_tx),
            ("lab receivers", &self.lab_rx),
            ("field transmitters", &self.field_tx),
            ("field receivers", &self.field_rx),
            ("test receivers", &self.test_rx),
            ("outliers", &self.outlier_tx),
        ] {
            if v.iter().collect::<BTreeSet<_>>().len() != v.len() {
                return Err(Error::Dataset(format!("duplicate device among {what}")));
            }
        }
        Ok(())
    }
}

/// Random role assignment. The pools are shuffled once per seed and cut in a
/// fixed order (lab, field, outliers; lab, test, field receivers), so plans
/// that differ only in their field side share the lab devices.
pub fn sample_experiment(plan: &ExperimentPlan, pools: &Pools, seed: u64) -> Result<Assignment> {
    let tx_ids: Vec<u32> = pools.transmitters.iter().map(|(i, _)| *i).collect();
    let rx_ids: Vec<u32> = pools.receivers.iter().map(|(i, _)| *i).collect();
    for (what, ids) in [("transmitter", &tx_ids), ("receiver", &rx_ids)] {
        if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
            return Err(Error::Dataset(format!("{what} pool lists a device twice")));
        }
    }
    if tx_ids.len() < plan.tx_needed() {
        return Err(Error::Dataset(format!(
            "plan needs {} transmitters ({} lab + {} field + {} outliers), pool has {}",
            plan.tx_needed(),
            plan.tx_lab,
            plan.tx_field,
            plan.outliers,
            tx_ids.len()
        )));
    }
    if rx_ids.len() < plan.rx_needed() {
        return Err(Error::Dataset(format!(
            "plan needs {} receivers ({} lab + {} test + {} field), pool has {}",
            plan.rx_needed(),
            plan.rx_lab,
            plan.rx_test,
            plan.field_rx_pool(),
            rx_ids.len()
        )));
    }
    let mut rng = stream_rng(seed, streams::ASSIGNMENT);
    let mut tx = tx_ids;
    tx.sort_unstable();
    tx.shuffle(&mut rng);
    let mut rx = rx_ids;
    rx.sort_unstable();
    rx.shuffle(&mut rng);
    let take = |v: &[u32], from: usize, n: usize| v[from..from + n].to_vec();
    let a = Assignment {
        lab_tx: take(&tx, 0, plan.tx_lab),
        field_tx: take(&tx, plan.tx_lab, plan.tx_field),
        outlier_tx: take(&tx, plan.tx_lab + plan.tx_field, plan.outliers),
        lab_rx: take(&rx, 0, plan.rx_lab),
        test_rx: take(&rx, plan.rx_lab, plan.rx_test),
        field_rx: take(&rx, plan.rx_lab + plan.rx_test, plan.field_rx_pool()),
    };
    a.validate()?;
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in [Method::Naive, Method::Exhaustive(5), Method::Basic, Method::Sd, Method::Gan] {
            assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        }
        assert_eq!("exhaustive:10".parse::<Method>().unwrap(), Method::Exhaustive(10));
        assert!("exhaustive0".parse::<Method>().is_err());
        assert!("svm".parse::<Method>().is_err());
    }

    #[test]
    fn paper_shaped_plan_is_feasible() {
        let plan = ExperimentPlan {
            tx_lab: 40,
            rx_lab: 25,
            tx_field: 10,
            rx_field: 1,
            rx_test: 2,
            population: PopulationSpec { tx_min_separation: 0.1, rx_min_separation: 0.1, ..PopulationSpec::default() },
            ..ExperimentPlan::default()
        };
        plan.validate().unwrap();
        let pools = Pools::for_plan(&plan).unwrap();
        let a = sample_experiment(&plan, &pools, 3).unwrap();
        assert_eq!((a.lab_tx.len(), a.lab_rx.len(), a.field_tx.len(), a.field_rx.len(), a.test_rx.len()), (40, 25, 10, 1, 2));
    }

    #[test]
    fn assignment_is_disjoint_and_seeded() {
        let plan = ExperimentPlan { methods: vec![Method::Naive, Method::Exhaustive(3), Method::Gan], ..Default::default() };
        let pools = Pools::for_plan(&plan).unwrap();
        let a = sample_experiment(&plan, &pools, 1).unwrap();
        assert_eq!(a, sample_experiment(&plan, &pools, 1).unwrap());
        assert_ne!(a, sample_experiment(&plan, &pools, 2).unwrap());
        assert_eq!(a.field_rx.len(), 3);
        a.validate().unwrap();
    }

    #[test]
    fn overlaps_and_shortfalls_are_rejected() {
        let plan = ExperimentPlan::default();
        let pools = Pools::for_plan(&plan).unwrap();
        let mut a = sample_experiment(&plan, &pools, 1).unwrap();
        a.test_rx[0] = a.lab_rx[0];
        let err = a.validate().unwrap_err().to_string();
        assert!(err.contains("lab and test receivers"), "{err}");

        let mut small = pools.clone();
        small.receivers.truncate(3);
        assert!(sample_experiment(&plan, &small, 1).is_err());
        let mut dup = pools;
        dup.transmitters[1].0 = dup.transmitters[0].0;
        assert!(sample_experiment(&plan, &dup, 1).is_err());
    }

    #[test]
    fn closed_and_open_plans_share_lab_devices() {
        let closed = ExperimentPlan::default();
        let open = ExperimentPlan { tx_field: 3, outliers: 2, mode: ClassifierMode::Open, ..Default::default() };
        let pools = Pools::for_plan(&closed).unwrap();
        assert_eq!(pools, Pools::for_plan(&open).unwrap());
        let a = sample_experiment(&closed, &pools, 4).unwrap();
        let b = sample_experiment(&open, &pools, 4).unwrap();
        assert_eq!((a.lab_tx.clone(), a.lab_rx.clone(), a.test_rx.clone()), (b.lab_tx, b.lab_rx, b.test_rx));
        assert_eq!(a.field_tx[..3], b.field_tx[..]);
        assert_eq!(a.field_tx[3..], b.outlier_tx[..]);
    }

    #[test]
    fn plan_validation() {
        assert!(ExperimentPlan::default().validate().is_ok());
        let p = ExperimentPlan { mode: ClassifierMode::Open, ..Default::default() };
        assert!(p.validate().is_err());
        let p = ExperimentPlan { seeds: vec![1, 1], ..Default::default() };
        assert!(p.validate().is_err());
        let p = ExperimentPlan { rx_lab: 1, ..Default::default() };
        assert!(p.validate().is_err());
        let p = ExperimentPlan { rx_lab: 1, methods: vec![Method::Basic], ..Default::default() };
        assert!(p.validate().is_ok());
    }
}
