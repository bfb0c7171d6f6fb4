//! `accelat` command-line front end.
//!
//! Subcommands: `lr-find`, `train`, `matrix`, `plot`. Every experiment key
//! of the config format is also a `--flag` (underscores become dashes) on
//! `lr-find` and `train`. Errors are reported as a single JSON line on
//! stderr with a nonzero exit code.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use accelat_core::config::{ConfigFile, Section};
use accelat_core::harness::{
    experiments_from_section, load_matrix_config, run_matrix, summary_csv, ExperimentConfig, MatrixOptions,
    MatrixResult, EXPERIMENT_KEYS,
};
use accelat_core::lr_finder::{run_sweep, select_lr_bounds, SweepConfig};
use accelat_core::plot::{emit_plot, PlotOptions};
use accelat_core::runlog::RunLog;
use accelat_core::{Error, Result};
use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use serde_json::json;

const OUTPUT_ENV: &str = "ACCELAT_OUTPUT_DIR";
const DEFAULT_OUTPUT: &str = "accelat-out";

fn output_arg() -> Arg {
    Arg::new("output-dir")
        .long("output-dir")
        .env(OUTPUT_ENV)
        .value_parser(value_parser!(PathBuf))
        .help("Directory for CSV/SVG output")
}

fn config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(
            Arg::new("config")
                .long("config")
                .value_parser(value_parser!(PathBuf))
                .help("Config file; flags override its keys"),
        )
        .arg(
            Arg::new("experiment")
                .long("experiment")
                .help("Name of the [experiment] section to use (default: first)"),
        );
    EXPERIMENT_KEYS.iter().filter(|k| **k != "seed").fold(cmd, |cmd, key| {
        let flag: &'static str = Box::leak(key.replace('_', "-").into_boxed_str());
        cmd.arg(Arg::new(*key).long(flag).value_name("VALUE").hide_short_help(true))
    })
}

fn cli() -> Command {
    let seed = |required: bool| {
        Arg::new("seed")
            .long("seed")
            .required(required)
            .value_parser(value_parser!(u64))
            .help("Base random seed")
    };
    Command::new("accelat")
        .about("Learning-rate policies and adversarial training experiments")
        .subcommand_required(true)
        .subcommand(
            config_args(Command::new("lr-find").about("LR range test; writes sweep.csv and sweep.svg"))
                .arg(seed(false))
                .arg(output_arg())
                .arg(Arg::new("lr-start").long("lr-start").value_parser(value_parser!(f64)))
                .arg(Arg::new("lr-end").long("lr-end").value_parser(value_parser!(f64)))
                .arg(Arg::new("steps").long("steps").value_parser(value_parser!(usize)))
                .arg(Arg::new("beta").long("beta").value_parser(value_parser!(f64))),
        )
        .subcommand(
            config_args(Command::new("train").about("Train one experiment (every listed attack and policy)"))
                .arg(seed(true))
                .arg(output_arg()),
        )
        .subcommand(
            Command::new("matrix")
                .about("Run every [experiment] of a config file")
                .arg(
                    Arg::new("config")
                        .long("config")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(seed(true))
                .arg(output_arg())
                .arg(Arg::new("threshold").long("threshold").value_parser(value_parser!(f64)))
                .arg(Arg::new("baseline").long("baseline").help("Baseline policy, or 'none'")),
        )
        .subcommand(
            Command::new("plot")
                .about("Plot a metric from run CSVs as SVG")
                .arg(Arg::new("metric").long("metric").required(true))
                .arg(
                    Arg::new("out")
                        .long("out")
                        .required(true)
                        .value_parser(value_parser!(PathBuf)),
                )
                .arg(
                    Arg::new("smoothing")
                        .long("smoothing")
                        .value_parser(value_parser!(f64))
                        .help("EMA coefficient in [0, 1); off by default"),
                )
                .arg(
                    Arg::new("label")
                        .long("label")
                        .action(ArgAction::Append)
                        .help("Legend label per input, in order (default: file stem)"),
                )
                .arg(
                    Arg::new("runs")
                        .required(true)
                        .num_args(1..)
                        .value_parser(value_parser!(PathBuf)),
                ),
        )
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// The chosen `[experiment]` section with command-line keys applied.
fn section_from(m: &ArgMatches) -> Result<Section> {
    let mut section = match m.get_one::<PathBuf>("config") {
        Some(path) => {
            let file = ConfigFile::parse(&read(path)?)?;
            let wanted = m.get_one::<String>("experiment");
            let found = file
                .sections_of("experiment")
                .find(|s| wanted.is_none_or(|w| s.name.as_ref() == Some(w)))
                .cloned();
            found.ok_or_else(|| {
                    Error::InvalidConfig(match wanted {
                        Some(w) => format!("no [experiment {w}] in {}", path.display()),
                        None => format!("no [experiment] section in {}", path.display()),
                    })
                })?
        }
        None => Section::new("experiment", Some("cli".into())),
    };
    for key in EXPERIMENT_KEYS {
        if let Ok(Some(v)) = m.try_get_one::<String>(key) {
            section.set(*key, v.clone());
        }
    }
    if let Some(seed) = m.get_one::<u64>("seed") {
        section.set("seed", seed.to_string());
    }
    Ok(section)
}

fn output_dir(m: &ArgMatches, from_config: Option<PathBuf>) -> PathBuf {
    m.get_one::<PathBuf>("output-dir")
        .cloned()
        .or(from_config)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT))
}

fn lr_find(m: &ArgMatches) -> Result<serde_json::Value> {
    let section = section_from(m)?;
    let cell = experiments_from_section(&section, None)?
        .into_iter()
        .next()
        .expect("at least one cell");
    cell.validate()?;
    let data = cell.load_data()?;
    let defaults = SweepConfig::default();
    let config = SweepConfig {
        lr_start: m.get_one::<f64>("lr-start").copied().unwrap_or(defaults.lr_start),
        lr_end: m.get_one::<f64>("lr-end").copied().unwrap_or(defaults.lr_end),
        steps: m.get_one::<usize>("steps").copied().unwrap_or(defaults.steps),
        beta: m.get_one::<f64>("beta").copied().unwrap_or(defaults.beta),
        batch_size: cell.train.batch_size,
        momentum: cell.train.momentum,
        weight_decay: cell.train.weight_decay,
        seed: cell.train.seed,
    };
    let net = cell.init_network(&data, cell.train.seed)?;
    let record = run_sweep(&net, &data.train, &config)?;
    let dir = output_dir(m, None);
    write(&dir.join("sweep.csv"), &record.to_csv())?;
    write(&dir.join("sweep.svg"), &record.to_svg())?;
    let bounds = select_lr_bounds(&record)?;
    Ok(json!({
        "lr_max": bounds.lr_max,
        "lr_min_cyclical": bounds.lr_min_cyclical,
        "lr_at_min": bounds.lr_at_min,
        "samples": record.samples.len(),
        "diverged": record.diverged,
        "output_dir": dir.display().to_string(),
    }))
}

fn report(result: &MatrixResult, dir: &Path) -> serde_json::Value {
    json!({
        "runs": result.runs.len(),
        "failed": result.failures.len(),
        "summary": dir.join("summary.csv").display().to_string(),
        "results": result.summary.iter().map(|r| json!({
            "run": r.id,
            "policy": r.policy,
            "epochs": r.epochs,
            "final_clean_test": r.final_clean_test,
            "final_adv_test": r.final_adv_test,
            "epochs_to_threshold": r.epochs_to_threshold,
        })).collect::<Vec<_>>(),
        "errors": result.failures.iter().map(|f| json!({"run": f.id, "kind": f.kind, "message": f.message})).collect::<Vec<_>>(),
    })
}

fn run_cells(configs: Vec<ExperimentConfig>, options: MatrixOptions) -> Result<serde_json::Value> {
    let dir = options.output_dir.clone().expect("output dir resolved");
    let result = run_matrix(&configs, &options)?;
    write(&dir.join("summary.csv"), &summary_csv(&result))?;
    Ok(report(&result, &dir))
}

fn train(m: &ArgMatches) -> Result<serde_json::Value> {
    let section = section_from(m)?;
    let dir = output_dir(m, None);
    let configs = experiments_from_section(&section, Some(&dir))?;
    let options = MatrixOptions {
        output_dir: Some(dir),
        ..MatrixOptions::default()
    };
    run_cells(configs, options)
}

fn matrix(m: &ArgMatches) -> Result<serde_json::Value> {
    let path = m.get_one::<PathBuf>("config").expect("required");
    let (mut configs, mut options) = load_matrix_config(&read(path)?)?;
    let seed = *m.get_one::<u64>("seed").expect("required");
    let dir = output_dir(m, options.output_dir.take());
    for c in &mut configs {
        c.train.seed = seed;
        c.output_dir = Some(dir.clone());
    }
    options.output_dir = Some(dir);
    if let Some(t) = m.get_one::<f64>("threshold") {
        options.threshold = Some(*t);
    }
    if let Some(b) = m.get_one::<String>("baseline") {
        options.baseline = (b != "none").then(|| b.clone());
    }
    run_cells(configs, options)
}

fn plot(m: &ArgMatches) -> Result<serde_json::Value> {
    let paths: Vec<&PathBuf> = m.get_many::<PathBuf>("runs").expect("required").collect();
    let labels: Vec<&String> = m.get_many::<String>("label").map(|v| v.collect()).unwrap_or_default();
    if !labels.is_empty() && labels.len() != paths.len() {
        return Err(Error::InvalidConfig(format!(
            "{} labels given for {} runs",
            labels.len(),
            paths.len()
        )));
    }
    let mut runs = Vec::with_capacity(paths.len());
    for (i, p) in paths.iter().enumerate() {
        let log = RunLog::from_csv(&read(p)?)?;
        let label = match labels.get(i) {
            Some(l) => (*l).clone(),
            None => p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        runs.push((label, log));
    }
    let options = PlotOptions {
        smoothing: m.get_one::<f64>("smoothing").copied(),
    };
    let metric = m.get_one::<String>("metric").expect("required");
    let svg = emit_plot(&runs, metric, options)?;
    let out = m.get_one::<PathBuf>("out").expect("required");
    write(out, &svg)?;
    Ok(json!({"svg": out.display().to_string(), "runs": runs.len()}))
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let text: Vec<&str> = msg
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:"))
                .filter(|l| !l.is_empty())
                .collect();
            let text = text.join(" ");
            eprintln!("{}", json!({"error": "usage", "message": text.trim_start_matches("error: ")}));
            return ExitCode::from(2);
        }
    };
    let result = match matches.subcommand() {
        Some(("lr-find", m)) => lr_find(m),
        Some(("train", m)) => train(m),
        Some(("matrix", m)) => matrix(m),
        Some(("plot", m)) => plot(m),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(v) => {
            println!("{v}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({"error": e.kind(), "message": e.to_string()}));
            ExitCode::FAILURE
        }
    }
}
