//! Learning-rate range test.
//!
//! A throwaway copy of the network is trained with an exponentially
//! increasing learning rate, one minibatch step per sample. The raw loss is
//! smoothed with a bias-corrected EMA, and the sweep stops once the smoothed
//! loss exceeds four times its running minimum. [`select_lr_bounds`] then
//! reads a maximum learning rate one decade below the loss minimum and a
//! cyclical lower bound where the loss first leaves its initial plateau.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{loss_and_grads, predict, Network};
use crate::optim::{sgd_step, OptimizerState};

pub const DEFAULT_BETA: f64 = 0.98;
pub const DEFAULT_STEPS: usize = 800;
pub const DEFAULT_LR_START: f64 = 1e-9;
pub const DEFAULT_LR_END: f64 = 10.0;
/// Divergence guard: stop once smoothed loss exceeds this multiple of its minimum.
pub const DIVERGENCE_FACTOR: f64 = 4.0;
/// Fraction of samples treated as the initial plateau.
pub const PLATEAU_FRACTION: f64 = 0.1;
/// Relative drop below the plateau mean that marks the descent zone.
pub const PLATEAU_DROP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSample {
    pub lr: f64,
    pub raw_loss: f64,
    pub smoothed_loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRecord {
    pub samples: Vec<SweepSample>,
    pub lr_start: f64,
    pub lr_end: f64,
    pub beta: f64,
    /// True when the divergence guard ended the sweep.
    pub diverged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub steps: usize,
    pub beta: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lr_start: DEFAULT_LR_START,
            lr_end: DEFAULT_LR_END,
            steps: DEFAULT_STEPS,
            beta: DEFAULT_BETA,
            batch_size: 128,
            momentum: 0.9,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_start > 0.0 && self.lr_start < self.lr_end && self.lr_end.is_finite()) {
            return bad(format!(
                "need 0 < lr_start < lr_end, got {} and {}",
                self.lr_start, self.lr_end
            ));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.beta) {
            return bad(format!("beta {} outside [0, 1)", self.beta));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }

    /// `lr_i = lr_start·(lr_end/lr_start)^(i/steps)`.
    pub fn lr_at(&self, i: usize) -> f64 {
        self.lr_start * (self.lr_end / self.lr_start).powf(i as f64 / self.steps as f64)
    }
}

/// Bias-corrected exponential moving average.
#[derive(Debug, Clone, Copy)]
pub struct Ema {
    beta: f64,
    avg: f64,
    count: i32,
}

impl Ema {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            avg: 0.0,
            count: 0,
        }
    }

    pub fn push(&mut self, x: f64) -> f64 {
        self.count += 1;
        self.avg = self.beta * self.avg + (1.0 - self.beta) * x;
        self.avg / (1.0 - self.beta.powi(self.count))
    }
}

/// Runs the range test on a clone of `net`; `net` itself is not modified.
pub fn run_sweep(net: &Network, dataset: &Dataset, config: &SweepConfig) -> Result<SweepRecord> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = net.clone();
    let mut opt = OptimizerState::new(&net, config.lr_start, config.momentum, config.weight_decay)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut ema = Ema::new(config.beta);
    let mut best = f64::INFINITY;
    let mut record = SweepRecord {
        samples: Vec::with_capacity(config.steps),
        lr_start: config.lr_start,
        lr_end: config.lr_end,
        beta: config.beta,
        diverged: false,
    };

    for i in 0..config.steps {
        if cursor >= order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let end = (cursor + config.batch_size).min(order.len());
        let batch = dataset.batch(&order[cursor..end])?;
        cursor = end;

        let lr = config.lr_at(i);
        let out = match loss_and_grads(&net, &batch) {
            Ok(out) => out,
            Err(Error::NonFiniteLoss { .. }) if i == 0 => {
                return Err(Error::ImmediateDivergence { lr_start: lr })
            }
            Err(Error::NonFiniteLoss { .. }) => {
                record.diverged = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let correct = predict(&net, &batch.inputs)?
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
        let smoothed = ema.push(out.loss);
        record.samples.push(SweepSample {
            lr,
            raw_loss: out.loss,
            smoothed_loss: smoothed,
            accuracy: correct as f64 / batch.len() as f64,
        });
        best = best.min(smoothed);
        if smoothed > DIVERGENCE_FACTOR * best {
            record.diverged = true;
            break;
        }
        opt.lr = lr;
        sgd_step(&mut net, &out.param_grads, &mut opt)?;
    }
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrBounds {
    pub lr_max: f64,
    pub lr_min_cyclical: f64,
    /// Learning rate at the smoothed-loss minimum.
    pub lr_at_min: f64,
}

/// Picks `lr_max` one decade below the smoothed-loss argmin and the
/// cyclical lower bound at the first lr whose smoothed loss is at least 5%
/// below the mean over the first 10% of samples.
pub fn select_lr_bounds(record: &SweepRecord) -> Result<LrBounds> {
    let s = &record.samples;
    if s.len() < 3 {
        return Err(Error::InconclusiveSweep(format!(
            "only {} samples, widen range",
            s.len()
        )));
    }
    let (argmin, _) = s
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bv), (i, x)| {
            if x.smoothed_loss < bv {
                (i, x.smoothed_loss)
            } else {
                (bi, bv)
            }
        });
    if argmin == 0 || argmin == s.len() - 1 {
        return Err(Error::InconclusiveSweep(
            "loss minimum at sweep edge, widen range".into(),
        ));
    }
    let lr_at_min = s[argmin].lr;
    let lr_max = lr_at_min * 0.1;

    let plateau_len = ((s.len() as f64 * PLATEAU_FRACTION) as usize).max(1);
    let plateau = s[..plateau_len].iter().map(|x| x.smoothed_loss).sum::<f64>() / plateau_len as f64;
    let cutoff = (1.0 - PLATEAU_DROP) * plateau;
    let lr_min_cyclical = s
        .iter()
        .find(|x| x.smoothed_loss <= cutoff)
        .map(|x| x.lr)
        .ok_or_else(|| Error::InconclusiveSweep("no descent below the initial plateau".into()))?;
    if lr_min_cyclical >= lr_max {
        return Err(Error::InconclusiveSweep(format!(
            "descent starts at {lr_min_cyclical}, not below lr_max {lr_max}"
        )));
    }
    Ok(LrBounds {
        lr_max,
        lr_min_cyclical,
        lr_at_min,
    })
}

impl SweepRecord {
    /// CSV with header `lr,raw_loss,smoothed_loss,accuracy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lr,raw_loss,smoothed_loss,accuracy\n");
        for x in &self.samples {
            out.push_str(&format!(
                "{},{},{},{}\n",
                x.lr, x.raw_loss, x.smoothed_loss, x.accuracy
            ));
        }
        out
    }

    /// Loss (raw and smoothed) and accuracy against log10(lr).
    pub fn to_svg(&self) -> String {
        use crate::plot::{svg_chart, Series};
        let pts = |f: fn(&SweepSample) -> f64| -> Vec<(f64, f64)> {
            self.samples.iter().map(|x| (x.lr.log10(), f(x))).collect()
        };
        let series = [
            Series::new("raw loss", pts(|x| x.raw_loss)),
            Series::new("smoothed loss", pts(|x| x.smoothed_loss)),
            Series::new("accuracy", pts(|x| x.accuracy)),
        ];
        svg_chart("LR range test", "log10(lr)", "value", &series)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_lr_midpoint() {
        let c = SweepConfig {
            lr_start: 1e-7,
            lr_end: 10.0,
            steps: 800,
            ..SweepConfig::default()
        };
        assert!((c.lr_at(400) - 1e-3).abs() < 1e-15);
        assert_eq!(c.lr_at(0), 1e-7);
    }

    #[test]
    fn ema_with_zero_beta_is_identity() {
        let mut e = Ema::new(0.0);
        for x in [3.0, -1.5, 0.25] {
            assert_eq!(e.push(x), x);
        }
    }

    #[test]
    fn ema_bias_correction_on_constant_input() {
        let mut e = Ema::new(0.98);
        for _ in 0..50 {
            assert!((e.push(2.5) - 2.5).abs() < 1e-12);
        }
    }

    fn record(points: &[(f64, f64)]) -> SweepRecord {
        SweepRecord {
            samples: points
                .iter()
                .map(|&(lr, l)| SweepSample {
                    lr,
                    raw_loss: l,
                    smoothed_loss: l,
                    accuracy: 0.0,
                })
                .collect(),
            lr_start: points[0].0,
            lr_end: points[points.len() - 1].0,
            beta: 0.0,
            diverged: false,
        }
    }

    #[test]
    fn edge_minimum_is_inconclusive() {
        let r = record(&[(1e-3, 3.0), (1e-2, 2.0), (1e-1, 1.0)]);
        assert!(matches!(select_lr_bounds(&r), Err(Error::InconclusiveSweep(_))));
    }

    #[test]
    fn flat_curve_is_inconclusive() {
        let r = record(&[(1e-3, 1.0), (1e-2, 1.0), (1e-1, 1.0), (1.0, 1.0)]);
        assert!(select_lr_bounds(&r).is_err());
    }
}
