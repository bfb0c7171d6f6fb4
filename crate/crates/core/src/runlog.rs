//! Per-epoch training records and their CSV form.
//!
//! Column order is fixed:
//! `epoch,lr,momentum,loss,acc_clean_train,acc_clean_test,acc_adv_train,acc_adv_test,wall_ms,accelat_reduced`.
//! Floats are written in shortest round-trip form so re-parsing is exact.
//! Adversarial accuracies are empty when no evaluation attack is configured.

use std::fmt;
use std::str::FromStr;

use crate::accelat::Decision;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str =
    "epoch,lr,momentum,loss,acc_clean_train,acc_clean_test,acc_adv_train,acc_adv_test,wall_ms,accelat_reduced";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub loss: f64,
    pub acc_clean_train: Option<f64>,
    pub acc_clean_test: Option<f64>,
    pub acc_adv_train: Option<f64>,
    pub acc_adv_test: Option<f64>,
    pub wall_ms: u64,
    pub accelat_reduced: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunLog {
    pub rows: Vec<EpochRow>,
    /// Controller decisions, one per epoch, when the policy is AccelAT.
    pub controller: Vec<Decision>,
    /// Total backward passes spent on training (attack passes included).
    pub backward_passes: u64,
    pub stopped_early: bool,
    /// Set when training aborted, e.g. on a non-finite loss.
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    Lr,
    Momentum,
    Loss,
    AccCleanTrain,
    AccCleanTest,
    AccAdvTrain,
    AccAdvTest,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Lr,
        Metric::Momentum,
        Metric::Loss,
        Metric::AccCleanTrain,
        Metric::AccCleanTest,
        Metric::AccAdvTrain,
        Metric::AccAdvTest,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Lr => "lr",
            Metric::Momentum => "momentum",
            Metric::Loss => "loss",
            Metric::AccCleanTrain => "acc_clean_train",
            Metric::AccCleanTest => "acc_clean_test",
            Metric::AccAdvTrain => "acc_adv_train",
            Metric::AccAdvTest => "acc_adv_test",
        }
    }

    pub fn of(self, row: &EpochRow) -> Option<f64> {
        match self {
            Metric::Lr => Some(row.lr),
            Metric::Momentum => Some(row.momentum),
            Metric::Loss => Some(row.loss),
            Metric::AccCleanTrain => row.acc_clean_train,
            Metric::AccCleanTest => row.acc_clean_test,
            Metric::AccAdvTrain => row.acc_adv_train,
            Metric::AccAdvTest => row.acc_adv_test,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Unknown {
                what: "metric",
                name: s.into(),
                valid: Metric::ALL.map(Metric::name).join(", "),
            })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RunLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn series(&self, metric: Metric) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter_map(|r| metric.of(r).map(|v| (r.epoch, v)))
            .collect()
    }

    pub fn last(&self, metric: Metric) -> Option<f64> {
        self.rows.iter().rev().find_map(|r| metric.of(r))
    }

    pub fn best(&self, metric: Metric) -> Option<f64> {
        self.rows.iter().filter_map(|r| metric.of(r)).reduce(f64::max)
    }

    /// First epoch whose `metric` reaches `threshold`.
    pub fn epochs_to_threshold(&self, metric: Metric, threshold: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| metric.of(r).is_some_and(|v| v >= threshold))
            .map(|r| r.epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.epoch,
                r.lr,
                r.momentum,
                r.loss,
                opt(r.acc_clean_train),
                opt(r.acc_clean_test),
                opt(r.acc_adv_train),
                opt(r.acc_adv_test),
                r.wall_ms,
                u8::from(r.accelat_reduced)
            ));
        }
        out
    }

    /// Parses the CSV written by [`RunLog::to_csv`]. Only rows are recovered.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == CSV_HEADER => {}
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    msg: format!("expected header '{CSV_HEADER}'"),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let perr = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 10 {
                return Err(perr(format!("expected 10 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| perr(format!("'{s}': {e}")));
            let opt_num = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            let row = EpochRow {
                epoch: f[0].parse().map_err(|e| perr(format!("epoch: {e}")))?,
                lr: num(f[1])?,
                momentum: num(f[2])?,
                loss: num(f[3])?,
                acc_clean_train: opt_num(f[4])?,
                acc_clean_test: opt_num(f[5])?,
                acc_adv_train: opt_num(f[6])?,
                acc_adv_test: opt_num(f[7])?,
                wall_ms: f[8].parse().map_err(|e| perr(format!("wall_ms: {e}")))?,
                accelat_reduced: match f[9] {
                    "0" => false,
                    "1" => true,
                    other => return Err(perr(format!("accelat_reduced '{other}'"))),
                },
            };
            rows.push(row);
        }
        Ok(Self {
            rows,
            ..Self::default()
        })
    }
}

/// True once the best adversarial test accuracy (clean test accuracy when
/// no attack is evaluated) has not improved for `patience` epochs.
pub fn early_stop(log: &RunLog, patience: usize) -> bool {
    let patience = patience.max(1);
    let value = |r: &EpochRow| r.acc_adv_test.or(r.acc_clean_test);
    let mut best = f64::NEG_INFINITY;
    let mut since_best = 0;
    for r in &log.rows {
        let Some(v) = value(r) else { continue };
        if v > best {
            best = v;
            since_best = 0;
        } else {
            since_best += 1;
        }
    }
    since_best >= patience
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(epoch: usize, acc: f64) -> EpochRow {
        EpochRow {
            epoch,
            lr: 0.1,
            momentum: 0.9,
            loss: 1.0 / 3.0,
            acc_clean_train: Some(acc),
            acc_clean_test: Some(acc),
            acc_adv_train: None,
            acc_adv_test: Some(acc),
            wall_ms: 0,
            accelat_reduced: false,
        }
    }

    fn log(accs: &[f64]) -> RunLog {
        RunLog {
            rows: accs.iter().enumerate().map(|(i, &a)| row(i + 1, a)).collect(),
            ..RunLog::default()
        }
    }

    #[test]
    fn monotone_improvement_never_stops() {
        let accs: Vec<f64> = (0..30).map(|i| i as f64 / 30.0).collect();
        for n in 1..=accs.len() {
            assert!(!early_stop(&log(&accs[..n]), 3));
        }
    }

    #[test]
    fn flat_log_stops_on_sixth_plateau_epoch() {
        let accs = [0.5; 10];
        let first = (1..=10).find(|&n| early_stop(&log(&accs[..n]), 5));
        assert_eq!(first, Some(6));
    }

    #[test]
    fn alternating_improvement_never_stops() {
        // improves at epochs 1, 3, 5, ...; at most one stale epoch in a row
        let accs: Vec<f64> = (0..20).map(|i| 0.1 + 0.02 * (i / 2) as f64).collect();
        for n in 1..=accs.len() {
            assert!(!early_stop(&log(&accs[..n]), 3), "n={n}");
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut l = log(&[0.123456789012345, 0.5, 1.0]);
        l.rows[1].accelat_reduced = true;
        l.rows[2].acc_clean_train = None;
        let text = l.to_csv();
        assert!(text.starts_with(CSV_HEADER));
        assert!(text.ends_with('\n'));
        assert_eq!(RunLog::from_csv(&text).unwrap().rows, l.rows);
    }

    #[test]
    fn csv_rejects_bad_header() {
        assert!(RunLog::from_csv("epoch,lr\n1,0.1\n").is_err());
    }

    #[test]
    fn metric_names_parse() {
        for m in Metric::ALL {
            assert_eq!(m.name().parse::<Metric>().unwrap(), m);
        }
        match "accuracy".parse::<Metric>() {
            Err(Error::Unknown { valid, .. }) => assert!(valid.contains("acc_adv_test")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn threshold_epochs() {
        let l = log(&[0.2, 0.5, 0.9, 0.95]);
        assert_eq!(l.epochs_to_threshold(Metric::AccAdvTest, 0.9), Some(3));
        assert_eq!(l.epochs_to_threshold(Metric::AccAdvTest, 0.99), None);
        assert_eq!(l.best(Metric::AccCleanTest), Some(0.95));
    }
}
