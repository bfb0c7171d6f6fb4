//! Experiment configuration and the run-matrix executor.
//!
//! An `[experiment name]` section in a config file expands to one cell per
//! (attack × policy × repetition). Cells are independent and run in
//! parallel; each writes its own run CSV. The summary table lists final
//! and best accuracies plus epochs-to-threshold per successful cell, and a
//! trailing errors section lists failed cells.
//!
//! Schedule time parameters (step sizes, restart periods, step
//! boundaries) are given in epochs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::accelat::{decisions_csv, AccelAtConfig};
use crate::attacks::{AttackKind, AttackSpec};
use crate::config::{ConfigFile, Section};
use crate::data::{load_cifar_binary, load_idx, make_synthetic, CifarVariant, DatasetBundle, SyntheticKind};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::runlog::{Metric, RunLog};
use crate::schedule::{ScheduleKind, ScheduleSpec, DEFAULT_MOMENTUM};
use crate::train::{train, LrPolicy, TrainConfig, TrainMode};

/// Seeds network initialisation separately from the training streams.
const INIT_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic {
        kind: SyntheticKind,
        samples: usize,
        noise: f64,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
    Cifar {
        variant: CifarVariant,
        train: Vec<PathBuf>,
        test: Vec<PathBuf>,
    },
}

impl DatasetSource {
    pub fn label(&self) -> String {
        match self {
            DatasetSource::Synthetic { kind: SyntheticKind::TwoMoons, .. } => "two_moons".into(),
            DatasetSource::Synthetic { kind: SyntheticKind::GaussianBlobs { .. }, .. } => "blobs".into(),
            DatasetSource::Idx { .. } => "idx".into(),
            DatasetSource::Cifar { variant: CifarVariant::Cifar10, .. } => "cifar10".into(),
            DatasetSource::Cifar { variant: CifarVariant::Cifar100, .. } => "cifar100".into(),
        }
    }

    fn paths(&self) -> Vec<&Path> {
        match self {
            DatasetSource::Synthetic { .. } => Vec::new(),
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => vec![train_images, train_labels, test_images, test_labels],
            DatasetSource::Cifar { train, test, .. } => train.iter().chain(test).map(PathBuf::as_path).collect(),
        }
    }

    pub fn load(&self) -> Result<DatasetBundle> {
        match self {
            DatasetSource::Synthetic {
                kind,
                samples,
                noise,
                seed,
            } => make_synthetic(*kind, *samples, *noise, *seed),
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => DatasetBundle::new(load_idx(train_images, train_labels)?, load_idx(test_images, test_labels)?),
            DatasetSource::Cifar { variant, train, test } => {
                DatasetBundle::new(load_cifar_binary(train, *variant)?, load_cifar_binary(test, *variant)?)
            }
        }
    }
}

/// One matrix cell: a dataset, a model, one attack, one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: DatasetSource,
    /// `(train, test)` sample counts kept from the loaded data.
    pub subset: Option<(usize, usize)>,
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    pub repetitions: usize,
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("hidden widths must be >= 1".into()));
        }
        for p in self.dataset.paths() {
            if !p.exists() {
                return Err(Error::io(
                    p,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "file does not exist"),
                ));
            }
        }
        self.train.validate()
    }

    pub fn attack_label(&self) -> String {
        match &self.train.attack {
            Some(a) => format!("{}@{}", a.kind.name(), a.epsilon),
            None => "none".into(),
        }
    }

    /// Runs every key except the policy and repetition.
    pub fn group(&self) -> String {
        let widths: Vec<String> = self.hidden.iter().map(usize::to_string).collect();
        format!(
            "{}/{}/{}/{}/{}",
            self.name,
            self.dataset.label(),
            widths.join("x"),
            self.train.mode.name(),
            self.attack_label()
        )
    }

    pub fn load_data(&self) -> Result<DatasetBundle> {
        let data = self.dataset.load()?;
        match self.subset {
            Some((tr, te)) => {
                // usize::MAX keeps the whole split
                let tr = if tr == usize::MAX { data.train.len() } else { tr };
                let te = if te == usize::MAX { data.test.len() } else { te };
                data.subset(tr, te)
            }
            None => Ok(data),
        }
    }

    /// Fresh MLP sized for `data`, initialised from `seed`.
    pub fn init_network(&self, data: &DatasetBundle, seed: u64) -> Result<Network> {
        let mut widths = vec![data.features];
        widths.extend(&self.hidden);
        widths.push(data.num_classes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_STREAM_SALT);
        Network::mlp(&widths, &mut rng)
    }

    /// Trains one repetition; the seed is `train.seed + repetition`.
    pub fn run_once(&self, data: &DatasetBundle, repetition: usize) -> Result<RunLog> {
        let mut cfg = self.train.clone();
        cfg.seed = cfg.seed.wrapping_add(repetition as u64);
        let mut net = self.init_network(data, cfg.seed)?;
        train(&mut net, data, &cfg)
    }
}

pub const EXPERIMENT_KEYS: &[&str] = &[
    "dataset",
    "samples",
    "noise",
    "data_seed",
    "classes",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "train_files",
    "test_files",
    "subset_train",
    "subset_test",
    "hidden",
    "mode",
    "attacks",
    "epsilon",
    "eval_epsilon",
    "pgd_steps",
    "pgd_alpha",
    "pgd_random_start",
    "deepfool_iters",
    "deepfool_overshoot",
    "clamp_min",
    "clamp_max",
    "policies",
    "lr_max",
    "lr_min",
    "step_boundaries",
    "step_factor",
    "step_size",
    "gamma",
    "t0",
    "t_mult",
    "period",
    "decay",
    "accelat_n",
    "accelat_delta",
    "accelat_p",
    "accelat_cooldown",
    "accelat_reset",
    "accelat_metric",
    "epochs",
    "batch_size",
    "momentum",
    "weight_decay",
    "free_m",
    "early_stop",
    "eval_train_limit",
    "wall_time",
    "repetitions",
    "seed",
];

fn required<T>(s: &Section, key: &str) -> Result<T>
where
    T: std::str::FromStr,
    T::Err: std::fmt::Display,
{
    s.parse(key)?
        .ok_or_else(|| Error::InvalidConfig(format!("[{}] missing required key '{key}'", s.kind)))
}

fn paths(s: &Section, key: &str) -> Result<Vec<PathBuf>> {
    let list = s
        .list(key)
        .ok_or_else(|| Error::InvalidConfig(format!("[{}] missing required key '{key}'", s.kind)))?;
    Ok(list.into_iter().map(PathBuf::from).collect())
}

fn dataset_from(s: &Section) -> Result<DatasetSource> {
    let name = s.get("dataset").unwrap_or("two_moons");
    Ok(match name {
        "idx" => DatasetSource::Idx {
            train_images: required(s, "train_images")?,
            train_labels: required(s, "train_labels")?,
            test_images: required(s, "test_images")?,
            test_labels: required(s, "test_labels")?,
        },
        "cifar10" | "cifar100" => DatasetSource::Cifar {
            variant: if name == "cifar10" {
                CifarVariant::Cifar10
            } else {
                CifarVariant::Cifar100
            },
            train: paths(s, "train_files")?,
            test: paths(s, "test_files")?,
        },
        other => {
            let kind = match other.parse::<SyntheticKind>() {
                Ok(SyntheticKind::GaussianBlobs { .. }) => SyntheticKind::GaussianBlobs {
                    classes: s.parse_or("classes", 3)?,
                },
                Ok(k) => k,
                Err(_) => {
                    return Err(Error::Unknown {
                        what: "dataset",
                        name: other.into(),
                        valid: "two_moons, blobs, idx, cifar10, cifar100".into(),
                    })
                }
            };
            DatasetSource::Synthetic {
                kind,
                samples: s.parse_or("samples", 1000)?,
                noise: s.parse_or("noise", 0.1)?,
                seed: s.parse_or("data_seed", 0)?,
            }
        }
    })
}

fn attack_from(s: &Section, kind: AttackKind, epsilon: f64) -> Result<AttackSpec> {
    let mut a = match kind {
        AttackKind::Fgsm => AttackSpec::fgsm(epsilon),
        AttackKind::Pgd => AttackSpec::pgd(epsilon),
        AttackKind::DeepFool => AttackSpec::deepfool(epsilon),
    };
    a.pgd_steps = s.parse_or("pgd_steps", a.pgd_steps)?;
    a.pgd_alpha = s.parse_or("pgd_alpha", a.pgd_alpha)?;
    a.pgd_random_start = s.parse_or("pgd_random_start", a.pgd_random_start)?;
    a.deepfool_max_iters = s.parse_or("deepfool_iters", a.deepfool_max_iters)?;
    a.deepfool_overshoot = s.parse_or("deepfool_overshoot", a.deepfool_overshoot)?;
    let (lo, hi) = a.clamp.unwrap_or((0.0, 1.0));
    a.clamp = Some((s.parse_or("clamp_min", lo)?, s.parse_or("clamp_max", hi)?));
    Ok(a)
}

/// Builds the policy named `name` with parameters from `s`, in epochs.
pub fn policy_from(s: &Section, name: &str, epochs: usize) -> Result<LrPolicy> {
    let lr_max: f64 = s.parse_or("lr_max", 0.1)?;
    let lr_min: f64 = s.parse_or("lr_min", lr_max / 100.0)?;
    if name == "accelat" {
        let mut c = AccelAtConfig::new(
            lr_max,
            lr_min,
            s.parse_or("accelat_delta", 0.01)?,
            s.parse_or("accelat_p", 0.9)?,
            s.parse_or("accelat_n", 10)?,
        );
        c.cooldown = s.parse_or("accelat_cooldown", 0)?;
        c.reset_window_on_reduce = s.parse_or("accelat_reset", false)?;
        c.validate()?;
        return Ok(LrPolicy::AccelAt(c));
    }
    let e = epochs as f64;
    let kind = match name.parse::<ScheduleKind>()? {
        ScheduleKind::ThreeStep { .. } => {
            let b = match s.list("step_boundaries") {
                Some(v) if v.len() == 2 => [parse_f64(s, "step_boundaries", &v[0])?, parse_f64(s, "step_boundaries", &v[1])?],
                Some(_) => return Err(Error::InvalidConfig("step_boundaries needs two values".into())),
                None => [0.5 * e, 0.75 * e],
            };
            ScheduleKind::ThreeStep {
                boundaries: b,
                factor: s.parse_or("step_factor", 0.1)?,
            }
        }
        ScheduleKind::CyclicalTriangular { step_size } => ScheduleKind::CyclicalTriangular {
            step_size: s.parse_or("step_size", step_size)?,
        },
        ScheduleKind::CyclicalDecreasingMax { step_size, gamma } => ScheduleKind::CyclicalDecreasingMax {
            step_size: s.parse_or("step_size", step_size)?,
            gamma: s.parse_or("gamma", gamma)?,
        },
        ScheduleKind::WarmRestartCosine { t0, t_mult } => ScheduleKind::WarmRestartCosine {
            t0: s.parse_or("t0", t0)?,
            t_mult: s.parse_or("t_mult", t_mult)?,
        },
        ScheduleKind::WarmRestartLinear { period, decay } => ScheduleKind::WarmRestartLinear {
            period: s.parse_or("period", period)?,
            decay: s.parse_or("decay", decay)?,
        },
        k => k,
    };
    let lr_min = if kind == ScheduleKind::OneCycle {
        s.parse_or("lr_min", lr_max / 1000.0)?
    } else {
        lr_min
    };
    let mut spec = ScheduleSpec::new(kind, lr_max, lr_min, epochs.max(1))?;
    if kind != ScheduleKind::OneCycle {
        spec = spec.with_momentum(s.parse_or("momentum", DEFAULT_MOMENTUM)?)?;
    }
    Ok(LrPolicy::Schedule(spec))
}

fn parse_f64(s: &Section, key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|e| Error::InvalidConfig(format!("[{}] {key}: '{v}': {e}", s.kind)))
}

/// Expands one `[experiment]` section into its cells.
pub fn experiments_from_section(s: &Section, output_dir: Option<&Path>) -> Result<Vec<ExperimentConfig>> {
    s.check_keys(EXPERIMENT_KEYS)?;
    let name = s.name.clone().unwrap_or_else(|| "experiment".into());
    let dataset = dataset_from(s)?;
    let subset = match (s.parse::<usize>("subset_train")?, s.parse::<usize>("subset_test")?) {
        (None, None) => None,
        (tr, te) => Some((tr.unwrap_or(usize::MAX), te.unwrap_or(usize::MAX))),
    };
    let hidden = match s.list("hidden") {
        Some(v) => v
            .iter()
            .map(|w| w.parse().map_err(|e| Error::InvalidConfig(format!("hidden width '{w}': {e}"))))
            .collect::<Result<Vec<usize>>>()?,
        None => vec![64, 64],
    };
    let mode: TrainMode = s.parse_or("mode", TrainMode::Standard)?;
    let epochs: usize = s.parse_or("epochs", 30)?;
    let epsilon: f64 = s.parse_or("epsilon", 0.1)?;
    let eval_epsilon: Option<f64> = s.parse("eval_epsilon")?;
    let attacks: Vec<Option<AttackKind>> = match s.list("attacks") {
        Some(v) if v.iter().any(|a| a != "none") => v
            .iter()
            .map(|a| if a == "none" { Ok(None) } else { a.parse().map(Some) })
            .collect::<Result<_>>()?,
        _ => vec![None],
    };
    let policies = s.list("policies").unwrap_or_else(|| vec!["constant".into()]);
    if policies.is_empty() {
        return Err(Error::InvalidConfig(format!("[experiment {name}] lists no policies")));
    }
    let free_m: usize = s.parse_or("free_m", 1)?;
    let schedule_epochs = match mode {
        TrainMode::Free => epochs / free_m.max(1),
        _ => epochs,
    };

    let mut out = Vec::new();
    for attack in &attacks {
        for policy_name in &policies {
            let policy = policy_from(s, policy_name, schedule_epochs)?;
            let mut t = TrainConfig::new(mode, policy, epochs, s.parse_or("seed", 0)?);
            if let Some(kind) = attack {
                t.attack = Some(attack_from(s, *kind, epsilon)?);
                if let Some(ev) = eval_epsilon {
                    t.eval_attack = Some(attack_from(s, *kind, ev)?);
                }
            }
            t.free_m = free_m;
            t.batch_size = s.parse_or("batch_size", t.batch_size)?;
            t.momentum = s.parse_or("momentum", t.momentum)?;
            t.weight_decay = s.parse_or("weight_decay", t.weight_decay)?;
            t.early_stop_epochs = s.parse("early_stop")?;
            t.accelat_metric = s.parse_or("accelat_metric", t.accelat_metric)?;
            t.eval_train_limit = s.parse("eval_train_limit")?;
            t.record_wall_time = s.parse_or("wall_time", false)?;
            let cfg = ExperimentConfig {
                name: name.clone(),
                dataset: dataset.clone(),
                subset,
                hidden: hidden.clone(),
                train: t,
                repetitions: s.parse_or("repetitions", 1)?,
                output_dir: output_dir.map(Path::to_path_buf),
            };
            cfg.train.validate()?;
            out.push(cfg);
        }
    }
    Ok(out)
}

/// Global keys of a matrix config file.
pub const MATRIX_KEYS: &[&str] = &["output_dir", "threshold", "baseline", "metric"];

#[derive(Debug, Clone, PartialEq)]
pub struct MatrixOptions {
    pub output_dir: Option<PathBuf>,
    /// Fixed accuracy threshold for epochs-to-threshold.
    pub threshold: Option<f64>,
    /// Policy whose final accuracy sets the threshold in its group and
    /// against which speedups are reported.
    pub baseline: Option<String>,
    /// Accuracy column used for thresholds; defaults to adversarial test
    /// accuracy when recorded, clean test accuracy otherwise.
    pub metric: Option<Metric>,
}

impl Default for MatrixOptions {
    fn default() -> Self {
        Self {
            output_dir: None,
            threshold: None,
            baseline: Some("constant".into()),
            metric: None,
        }
    }
}

/// Reads a matrix config file: global options plus `[experiment]` sections.
pub fn load_matrix_config(text: &str) -> Result<(Vec<ExperimentConfig>, MatrixOptions)> {
    let file = ConfigFile::parse(text)?;
    let g = file.global();
    g.check_keys(MATRIX_KEYS)?;
    let options = MatrixOptions {
        output_dir: g.get("output_dir").map(PathBuf::from),
        threshold: g.parse("threshold")?,
        baseline: match g.get("baseline") {
            Some("none") => None,
            Some(b) => Some(b.to_string()),
            None => Some("constant".into()),
        },
        metric: g.parse("metric")?,
    };
    let mut configs = Vec::new();
    for s in &file.sections[1..] {
        if s.kind != "experiment" {
            return Err(Error::Parse {
                line: s.line,
                msg: format!("unknown section [{}]; expected [experiment]", s.kind),
            });
        }
        configs.extend(experiments_from_section(s, options.output_dir.as_deref())?);
    }
    Ok((configs, options))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellRun {
    /// Unique file-safe identifier.
    pub id: String,
    pub group: String,
    pub policy: String,
    pub repetition: usize,
    pub seed: u64,
    pub log: RunLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellFailure {
    pub id: String,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub id: String,
    pub group: String,
    pub policy: String,
    pub repetition: usize,
    pub seed: u64,
    pub epochs: usize,
    pub backward_passes: u64,
    pub final_clean_test: Option<f64>,
    pub best_clean_test: Option<f64>,
    pub final_adv_test: Option<f64>,
    pub best_adv_test: Option<f64>,
    pub threshold: Option<f64>,
    pub epochs_to_threshold: Option<usize>,
    /// Baseline epochs-to-threshold divided by this run's.
    pub speedup_vs_baseline: Option<f64>,
}

pub const SUMMARY_HEADER: &str = "run,group,policy,repetition,seed,epochs,backward_passes,final_clean_test,best_clean_test,final_adv_test,best_adv_test,threshold,epochs_to_threshold,speedup_vs_baseline";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatrixResult {
    pub runs: Vec<CellRun>,
    pub failures: Vec<CellFailure>,
    pub summary: Vec<SummaryRow>,
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

struct Job<'a> {
    config: &'a ExperimentConfig,
    id: String,
    repetition: usize,
}

/// Runs every cell and repetition. Failed cells are recorded, not fatal.
pub fn run_matrix(configs: &[ExperimentConfig], options: &MatrixOptions) -> Result<MatrixResult> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("run matrix needs at least one config".into()));
    }
    let mut jobs = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for c in configs {
        for r in 0..c.repetitions.max(1) {
            let base = file_safe(&format!("{}-{}-r{r}", c.group(), c.train.policy.name()));
            let n = seen.entry(base.clone()).or_default();
            let id = if *n == 0 { base.clone() } else { format!("{base}-{n}") };
            *n += 1;
            jobs.push(Job {
                config: c,
                id,
                repetition: r,
            });
        }
    }

    let outcomes: Vec<std::result::Result<CellRun, CellFailure>> = jobs
        .par_iter()
        .map(|job| run_cell(job, options).map_err(|e| CellFailure {
            id: job.id.clone(),
            kind: e.kind(),
            message: e.to_string(),
        }))
        .collect();

    let mut result = MatrixResult::default();
    for o in outcomes {
        match o {
            Ok(run) => result.runs.push(run),
            Err(f) => result.failures.push(f),
        }
    }
    result.summary = summarize(&result.runs, options);
    if let Some(dir) = &options.output_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("summary.csv");
        std::fs::write(&path, summary_csv(&result)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(result)
}

fn run_cell(job: &Job<'_>, options: &MatrixOptions) -> Result<CellRun> {
    let c = job.config;
    c.validate()?;
    let data = c.load_data()?;
    let log = c.run_once(&data, job.repetition)?;
    if let Some(dir) = options.output_dir.as_ref().or(c.output_dir.as_ref()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(format!("{}.csv", job.id));
        std::fs::write(&path, log.to_csv()).map_err(|e| Error::io(&path, e))?;
        if !log.controller.is_empty() {
            let path = dir.join(format!("{}.accelat.csv", job.id));
            std::fs::write(&path, decisions_csv(&log.controller)).map_err(|e| Error::io(&path, e))?;
        }
    }
    Ok(CellRun {
        id: job.id.clone(),
        group: c.group(),
        policy: c.train.policy.name().to_string(),
        repetition: job.repetition,
        seed: c.train.seed.wrapping_add(job.repetition as u64),
        log,
    })
}

fn threshold_metric(log: &RunLog, options: &MatrixOptions) -> Metric {
    options.metric.unwrap_or_else(|| {
        if log.last(Metric::AccAdvTest).is_some() {
            Metric::AccAdvTest
        } else {
            Metric::AccCleanTest
        }
    })
}

/// Computes summary rows. With a fixed threshold every run uses it;
/// otherwise the baseline run of the same group and repetition supplies
/// its final accuracy as the threshold.
pub fn summarize(runs: &[CellRun], options: &MatrixOptions) -> Vec<SummaryRow> {
    let baseline_of = |run: &CellRun| {
        options.baseline.as_ref().and_then(|b| {
            runs.iter()
                .find(|r| &r.policy == b && r.group == run.group && r.repetition == run.repetition)
        })
    };
    runs.iter()
        .map(|run| {
            let metric = threshold_metric(&run.log, options);
            let base = baseline_of(run);
            let threshold = options
                .threshold
                .or_else(|| base.and_then(|b| b.log.last(metric)));
            let etth = threshold.and_then(|t| run.log.epochs_to_threshold(metric, t));
            let base_etth = match (base, threshold) {
                (Some(b), Some(t)) => b.log.epochs_to_threshold(metric, t),
                _ => None,
            };
            SummaryRow {
                id: run.id.clone(),
                group: run.group.clone(),
                policy: run.policy.clone(),
                repetition: run.repetition,
                seed: run.seed,
                epochs: run.log.rows.len(),
                backward_passes: run.log.backward_passes,
                final_clean_test: run.log.last(Metric::AccCleanTest),
                best_clean_test: run.log.best(Metric::AccCleanTest),
                final_adv_test: run.log.last(Metric::AccAdvTest),
                best_adv_test: run.log.best(Metric::AccAdvTest),
                threshold,
                epochs_to_threshold: etth,
                speedup_vs_baseline: match (base_etth, etth) {
                    (Some(b), Some(e)) => Some(b as f64 / e as f64),
                    _ => None,
                },
            }
        })
        .collect()
}

fn cell<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Summary CSV followed by a `# errors` section (`run,kind,message`).
pub fn summary_csv(result: &MatrixResult) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in &result.summary {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.id,
            r.group.replace(',', ";"),
            r.policy,
            r.repetition,
            r.seed,
            r.epochs,
            r.backward_passes,
            cell(r.final_clean_test),
            cell(r.best_clean_test),
            cell(r.final_adv_test),
            cell(r.best_adv_test),
            cell(r.threshold),
            cell(r.epochs_to_threshold),
            cell(r.speedup_vs_baseline),
        );
    }
    out.push_str("# errors\nrun,kind,message\n");
    for f in &result.failures {
        let _ = writeln!(out, "{},{},{}", f.id, f.kind, f.message.replace([',', '\n'], ";"));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runlog::EpochRow;

    fn run(policy: &str, accs: &[f64]) -> CellRun {
        CellRun {
            id: policy.into(),
            group: "g".into(),
            policy: policy.into(),
            repetition: 0,
            seed: 0,
            log: RunLog {
                rows: accs
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| EpochRow {
                        epoch: i + 1,
                        lr: 0.1,
                        momentum: 0.9,
                        loss: 1.0,
                        acc_clean_train: Some(a),
                        acc_clean_test: Some(a),
                        acc_adv_train: None,
                        acc_adv_test: None,
                        wall_ms: 0,
                        accelat_reduced: false,
                    })
                    .collect(),
                ..RunLog::default()
            },
        }
    }

    #[test]
    fn speedup_from_threshold_epochs() {
        // A reaches 0.90 at epoch 12, B at 25
        let ramp = |hit: usize| -> Vec<f64> { (1..=30).map(|e| if e >= hit { 0.9 } else { 0.5 }).collect() };
        let runs = [run("constant", &ramp(25)), run("one_cycle", &ramp(12))];
        let opts = MatrixOptions {
            threshold: Some(0.9),
            ..MatrixOptions::default()
        };
        let s = summarize(&runs, &opts);
        assert_eq!(s[0].epochs_to_threshold, Some(25));
        assert_eq!(s[1].epochs_to_threshold, Some(12));
        let expected = 25.0 / 12.0;
        assert!((s[1].speedup_vs_baseline.unwrap() - expected).abs() < 1e-12);
        assert!((s[1].speedup_vs_baseline.unwrap() - 2.08).abs() < 0.005);
    }

    #[test]
    fn baseline_final_sets_threshold() {
        let runs = [run("constant", &[0.2, 0.6, 0.7]), run("accelat", &[0.5, 0.8, 0.9])];
        let s = summarize(&runs, &MatrixOptions::default());
        assert_eq!(s[1].threshold, Some(0.7));
        assert_eq!(s[1].epochs_to_threshold, Some(2));
        assert_eq!(s[0].epochs_to_threshold, Some(3));
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert!(run_matrix(&[], &MatrixOptions::default()).is_err());
    }

    #[test]
    fn section_expands_attacks_times_policies() {
        let text = "[experiment m]\nmode = adv\nattacks = fgsm, pgd\npolicies = constant, one_cycle, accelat\nepochs = 4\n";
        let (configs, _) = load_matrix_config(text).unwrap();
        assert_eq!(configs.len(), 6);
        assert_eq!(configs[0].train.attack.unwrap().kind, AttackKind::Fgsm);
        assert_eq!(configs[5].train.policy.name(), "accelat");
    }

    #[test]
    fn unknown_keys_and_sections_rejected() {
        assert!(load_matrix_config("[experiment]\nepoch = 3\n").is_err());
        assert!(load_matrix_config("[run]\nepochs = 3\n").is_err());
        assert!(load_matrix_config("[experiment]\ndataset = mnist\n").is_err());
    }
}
