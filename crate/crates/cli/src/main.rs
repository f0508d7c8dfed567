use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, FromArgMatches, Parser, Subcommand};
use rxa_core::classifiers::ClassifierMode;
use rxa_core::config::RunConfig;
use rxa_core::eval::{
    cells, emit_report, evaluate_classifier, run_experiment, synthesize, ExperimentReport, Method, Pools,
};
use rxa_core::preprocess::PipelineConfig;
use rxa_core::signal::PreambleTemplate;
use rxa_core::store::{
    load_checkpoint, read_dataset, save_checkpoint, write_dataset, CheckpointKind, DatasetManifest, Device, Record,
};
use rxa_core::training::{
    calibrate, prepare_records, train_field_classifier, CalibratedFE, CalibrationMethod, FieldClassifier,
    FieldDataset, LabDataset, LabeledSet, FIELD_TRAIN_DAY, LAB_DAYS, TEST_DAY,
};
use rxa_core::Error;

/// Receiver-agnostic transmitter fingerprinting workbench.
#[derive(Parser, Debug)]
#[command(name = "rxa", version)]
struct Cli {
    /// TOML run configuration (see the key list below).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `seed` from the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Synthesize a dataset (manifest.json + records.bin).
    Generate {
        /// Output directory (default: paths.data).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Stage 1: calibrate a transmitter feature extractor on lab days 1-2.
    TrainFe {
        #[arg(long, value_parser = parse_method)]
        method: CalibrationMethod,
        /// Dataset directory (default: paths.data).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        select: Selection,
    },
    /// Stage 2: train the field classifier on day 3 over a frozen extractor.
    TrainClassifier {
        /// Feature-extractor checkpoint.
        #[arg(long)]
        fe: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_parser = parse_mode, default_value = "closed")]
        mode: ClassifierMode,
        /// Open mode: fraction of known signals allowed to be rejected (default: target_fa).
        #[arg(long)]
        target_fa: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        select: Selection,
    },
    /// Test a classifier on day 4 and write metrics, ROC points and plots.
    Evaluate {
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report directory (default: paths.out).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        select: Selection,
    },
    /// Full protocol: generate, calibrate, train and test for every seed.
    Experiment {
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated methods, e.g. naive,basic,gan or exhaustive5.
        #[arg(long, value_delimiter = ',', value_parser = parse_plan_method)]
        methods: Option<Vec<Method>>,
        /// Comma-separated experiment seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
}

/// Restricts which devices of a dataset are used.
#[derive(clap::Args, Debug, Default)]
struct Selection {
    /// Comma-separated transmitter ids (default: all).
    #[arg(long, value_delimiter = ',')]
    transmitters: Option<Vec<u32>>,
    /// Comma-separated receiver ids (default: all).
    #[arg(long, value_delimiter = ',')]
    receivers: Option<Vec<u32>>,
}

impl Selection {
    fn keep(&self, r: &Record) -> bool {
        self.transmitters.as_ref().map_or(true, |t| t.contains(&r.tx))
            && self.receivers.as_ref().map_or(true, |v| v.contains(&r.rx))
    }
}

fn parse_method(s: &str) -> Result<CalibrationMethod, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_plan_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<ClassifierMode, String> {
    match s {
        "closed" => Ok(ClassifierMode::Closed),
        "open" | "ova" => Ok(ClassifierMode::Open),
        _ => Err(format!("unknown mode {s:?} (closed|open)")),
    }
}

/// Exit status per failure class: 1 usage/config, 2 data, 3 training.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::Training(_)
        | Error::NonFiniteGradient(_)
        | Error::NonFiniteOutput(_)
        | Error::NoForward
        | Error::InfeasibleSeparation { .. } => 3,
        _ => 2,
    }
}

fn config_help() -> String {
    format!(
        "Configuration (TOML, every key optional; unknown keys are rejected). Defaults:\n\n{}\n\
         Environment: RXA_THREADS caps worker threads. RUST_LOG sets log verbosity (default info).\n\
         Exit codes: 0 ok, 1 usage, 2 data error, 3 training error.",
        RunConfig::documented_defaults()
    )
}

fn main() -> ExitCode {
    let matches = match Cli::command().after_long_help(config_help()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, rec| writeln!(buf, "{}", rec.args()))
        .init();
    if let Some(n) = std::env::var("RXA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> rxa_core::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn need(path: Option<PathBuf>, fallback: &Option<PathBuf>, what: &str) -> rxa_core::Result<PathBuf> {
    path.or_else(|| fallback.clone())
        .ok_or_else(|| Error::Config(format!("no {what} path given (flag or [paths] in the config)")))
}

fn run(cli: Cli) -> rxa_core::Result<()> {
    let cfg = load_config(&cli)?;
    match cli.command {
        Cmd::Generate { out } => generate(&cfg, &need(out, &cfg.paths.data, "output")?),
        Cmd::TrainFe { method, data, out, select } => {
            train_fe(&cfg, method, &need(data, &cfg.paths.data, "dataset")?, &out, &select)
        }
        Cmd::TrainClassifier { fe, data, mode, target_fa, out, select } => {
            let data = need(data, &cfg.paths.data, "dataset")?;
            train_classifier(&cfg, &fe, &data, mode, target_fa.unwrap_or(cfg.target_fa), &out, &select)
        }
        Cmd::Evaluate { classifier, data, out, select } => {
            let data = need(data, &cfg.paths.data, "dataset")?;
            evaluate(&cfg, &classifier, &data, &need(out, &cfg.paths.out, "report")?, &select)
        }
        Cmd::Experiment { out, methods, seeds } => {
            let out = need(out, &cfg.paths.out, "report")?;
            let mut plan = cfg.to_plan();
            if let Some(m) = methods {
                plan.methods = m;
            }
            if let Some(s) = seeds {
                plan.seeds = s;
            }
            let report = run_experiment(&plan)?;
            for p in emit_report(&report, &out)? {
                println!("wrote {}", p.display());
            }
            print_summary(&report);
            if report.rows.iter().all(|r| r.error.is_some()) {
                return Err(Error::Training("every seed/method failed; see report.json".into()));
            }
            Ok(())
        }
    }
}

fn generate(cfg: &RunConfig, out: &Path) -> rxa_core::Result<()> {
    let g = &cfg.generate;
    let pools = Pools::synthetic(&cfg.population, g.transmitters, g.receivers, g.population_seed)?;
    let template = PreambleTemplate::desk();
    let txs: Vec<u32> = pools.transmitters.iter().map(|(i, _)| *i).collect();
    let rxs: Vec<u32> = pools.receivers.iter().map(|(i, _)| *i).collect();
    let records = synthesize(&pools, &cfg.population, &template, &cells(&txs, &rxs, &g.days), g.per_cell, g.frame_len, cfg.seed)?;
    let mut notes = BTreeMap::new();
    notes.insert("generator".into(), "synthetic".into());
    notes.insert("seed".into(), cfg.seed.to_string());
    notes.insert("per_cell".into(), g.per_cell.to_string());
    notes.insert("population_seed".into(), g.population_seed.to_string());
    let manifest = DatasetManifest {
        format_version: 0,
        sample_rate_hz: template.sample_rate_hz(),
        record_len: g.frame_len,
        transmitters: pools.transmitters.into_iter().map(|(i, p)| (i, Device::Profile(p))).collect(),
        receivers: pools.receivers.into_iter().map(|(i, p)| (i, Device::Profile(p))).collect(),
        days: Vec::new(),
        record_count: 0,
        digest: String::new(),
        notes,
    };
    let m = write_dataset(out, &manifest, &records)?;
    println!("wrote {} records to {} (digest {})", m.record_count, out.display(), m.digest);
    Ok(())
}

/// Preprocessed records of the given days that pass the selection.
fn load_split(
    dir: &Path,
    days: &[u16],
    select: &Selection,
) -> rxa_core::Result<(DatasetManifest, LabeledSet)> {
    let (m, records) = read_dataset(dir)?;
    let chosen: Vec<Record> = records.into_iter().filter(|r| days.contains(&r.day) && select.keep(r)).collect();
    if chosen.is_empty() {
        return Err(Error::Dataset(format!("no records from day(s) {days:?} match the selection in {}", dir.display())));
    }
    let set = prepare_records(&chosen, m.sample_rate_hz, &PipelineConfig::default())?;
    Ok((m, set))
}

fn train_fe(
    cfg: &RunConfig,
    method: CalibrationMethod,
    data: &Path,
    out: &Path,
    select: &Selection,
) -> rxa_core::Result<()> {
    let (m, set) = load_split(data, &LAB_DAYS, select)?;
    let lab = LabDataset::new(&set, cfg.seed)?;
    log::info!(
        "rxa.data lab_records={} transmitters={} receivers={}",
        set.len(),
        lab.tx_ids.len(),
        lab.rx_ids.len()
    );
    let mut fe = calibrate(method, &lab, &cfg.arch, &cfg.weights, cfg.distance, &cfg.schedule, cfg.seed)?;
    fe.provenance.data_digest = Some(m.digest);
    save_checkpoint(out, &fe.to_checkpoint())?;
    println!("wrote {} feature extractor to {} (digest {})", method.name(), out.display(), fe.digest());
    Ok(())
}

fn train_classifier(
    cfg: &RunConfig,
    fe_path: &Path,
    data: &Path,
    mode: ClassifierMode,
    target_fa: f64,
    out: &Path,
    select: &Selection,
) -> rxa_core::Result<()> {
    let fe = CalibratedFE::from_checkpoint(load_checkpoint(fe_path, CheckpointKind::FeatureExtractor)?)?;
    let (m, set) = load_split(data, &[FIELD_TRAIN_DAY], select)?;
    let field = FieldDataset::new(&set, cfg.seed)?;
    let before = fe.digest();
    let mut clf = train_field_classifier(&fe, &field, mode, &cfg.schedule, cfg.seed, target_fa)?;
    if clf.fe_digest != before {
        return Err(Error::Integrity("feature extractor changed during field training".into()));
    }
    clf.provenance.data_digest = Some(m.digest);
    save_checkpoint(out, &clf.to_checkpoint())?;
    println!(
        "wrote {:?} classifier ({} classes, tau {}) to {}; fe digest {} unchanged",
        mode,
        clf.classes.len(),
        clf.tau.map_or("-".into(), |t| format!("{t:.6}")),
        out.display(),
        before
    );
    Ok(())
}

fn evaluate(cfg: &RunConfig, path: &Path, data: &Path, out: &Path, select: &Selection) -> rxa_core::Result<()> {
    let clf = FieldClassifier::from_checkpoint(load_checkpoint(path, CheckpointKind::Classifier)?)?;
    let (_, set) = load_split(data, &[TEST_DAY], select)?;
    let known = set.filter(|t, _, _| clf.classes.contains(&t));
    let outliers = set.filter(|t, _, _| !clf.classes.contains(&t));
    let (mut row, scores) = evaluate_classifier(&clf, &known, &outliers, None)?;
    row.seed = cfg.seed;
    let method: Method = clf.provenance.method.parse().unwrap_or(Method::Naive);
    row.method = method;
    let mut plan = cfg.to_plan();
    plan.methods = vec![method];
    plan.seeds = vec![cfg.seed];
    plan.mode = clf.mode;
    let mut pooled = BTreeMap::new();
    pooled.insert(method.to_string(), scores);
    let report = ExperimentReport::from_rows(plan, vec![row], pooled)?;
    for p in emit_report(&report, out)? {
        println!("wrote {}", p.display());
    }
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &ExperimentReport) {
    for s in &report.summaries {
        let f = |v: &Option<rxa_core::eval::Stat>| v.as_ref().map_or("-".into(), |v| format!("{:.4}±{:.4}", v.mean, v.std));
        println!(
            "{}: accuracy {} auc {} false_alarm {} ({} seeds ok)",
            s.method,
            f(&s.accuracy),
            f(&s.auc),
            f(&s.false_alarm),
            s.completed
        );
    }
    if report.partial {
        println!("report is partial: some runs failed (see report.json)");
    }
}
