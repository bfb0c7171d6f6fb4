//! Experiment matrix runs end to end.

use accelat_core::data::{make_synthetic, write_idx, SyntheticKind};
use accelat_core::harness::{load_matrix_config, run_matrix, MatrixOptions, SUMMARY_HEADER};
use accelat_core::runlog::RunLog;

const TWO_POLICIES: &str = "
[experiment small]
dataset = two_moons
samples = 300
hidden = 8
policies = constant, accelat
accelat_n = 2
epochs = 4
";

#[test]
fn two_policies_give_two_logs_and_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let (configs, mut options) = load_matrix_config(TWO_POLICIES).unwrap();
    options.output_dir = Some(dir.path().to_path_buf());
    let result = run_matrix(&configs, &options).unwrap();
    assert_eq!(result.runs.len(), 2);
    assert_eq!(result.summary.len(), 2);
    assert!(result.failures.is_empty());

    for run in &result.runs {
        let text = std::fs::read_to_string(dir.path().join(format!("{}.csv", run.id))).unwrap();
        assert_eq!(RunLog::from_csv(&text).unwrap().rows, run.log.rows);
    }
    let accelat = result.runs.iter().find(|r| r.policy == "accelat").unwrap();
    assert!(dir.path().join(format!("{}.accelat.csv", accelat.id)).exists());

    let summary = std::fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], SUMMARY_HEADER);
    assert_eq!(lines[3], "# errors");
    assert_eq!(lines.len(), 5);
    // the baseline always reaches its own final accuracy
    let base = result.summary.iter().find(|r| r.policy == "constant").unwrap();
    assert_eq!(base.speedup_vs_baseline, Some(1.0));
}

#[test]
fn failed_cells_land_in_the_errors_section() {
    let dir = tempfile::tempdir().unwrap();
    let good = make_synthetic(SyntheticKind::GaussianBlobs { classes: 2 }, 40, 0.05, 0).unwrap();
    let p = |name: &str| dir.path().join(name).display().to_string();
    write_idx(&good.train, 1, 2, p("tr-img").as_ref(), p("tr-lbl").as_ref()).unwrap();
    write_idx(&good.test, 1, 2, p("te-img").as_ref(), p("te-lbl").as_ref()).unwrap();
    let text = format!(
        "{TWO_POLICIES}
[experiment files]
dataset = idx
train_images = {}
train_labels = {}
test_images = {}
test_labels = {}
hidden = 4
epochs = 2

[experiment broken]
dataset = idx
train_images = {}
train_labels = {}
test_images = {}
test_labels = {}
epochs = 2
",
        p("tr-img"),
        p("tr-lbl"),
        p("te-img"),
        p("te-lbl"),
        p("missing-img"),
        p("tr-lbl"),
        p("te-img"),
        p("te-lbl"),
    );
    let (configs, mut options) = load_matrix_config(&text).unwrap();
    options.output_dir = Some(dir.path().join("out"));
    let result = run_matrix(&configs, &options).unwrap();
    assert_eq!(result.runs.len(), 3);
    assert_eq!(result.failures.len(), 1);
    assert_eq!(result.summary.len(), result.runs.len());
    let failure = &result.failures[0];
    assert!(failure.id.starts_with("broken"), "{}", failure.id);

    let summary = std::fs::read_to_string(dir.path().join("out/summary.csv")).unwrap();
    let errors: Vec<&str> = summary.lines().skip_while(|l| *l != "# errors").collect();
    assert_eq!(errors.len(), 3);
    assert_eq!(errors[1], "run,kind,message");
    assert!(errors[2].starts_with(&format!("{},{},", failure.id, failure.kind)));
    assert!(errors[2].contains("missing-img"));
}

#[test]
fn repetitions_use_consecutive_seeds() {
    let text = TWO_POLICIES.replace("policies = constant, accelat", "policies = constant\nrepetitions = 3\nseed = 10");
    let (configs, options) = load_matrix_config(&text).unwrap();
    let result = run_matrix(&configs, &MatrixOptions { output_dir: None, ..options }).unwrap();
    let mut seeds: Vec<u64> = result.runs.iter().map(|r| r.seed).collect();
    seeds.sort();
    assert_eq!(seeds, [10, 11, 12]);
    assert_ne!(result.runs[0].log.rows, result.runs[1].log.rows);
}

#[test]
fn matrix_runs_are_reproducible() {
    let (configs, options) = load_matrix_config(TWO_POLICIES).unwrap();
    let a = run_matrix(&configs, &options).unwrap();
    let b = run_matrix(&configs, &options).unwrap();
    assert_eq!(a.summary, b.summary);
}
