//! Accuracy-gradient learning-rate controller.
//!
//! The controller starts at `lr_max`. After each epoch it is fed that
//! epoch's validation accuracy. Once `n` accuracies have been seen it
//! compares the mean of the last `n` against the previous window mean; if
//! the gain is below `delta_acc` the learning rate is multiplied by `p`
//! and clamped at `lr_min`. The previous-window mean is refreshed every
//! epoch, so consecutive sliding windows are compared.
//!
//! The resulting learning-rate curve is a descending staircase.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelAtConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    /// Minimum accuracy gain (as a fraction) between consecutive windows.
    pub delta_acc: f64,
    /// Retention factor: `lr ← lr·p` on a plateau.
    pub p: f64,
    /// Window length in epochs.
    pub n: usize,
    /// Epochs after a reduction during which no further reduction happens.
    pub cooldown: usize,
    /// Clear the accuracy window after a reduction.
    pub reset_window_on_reduce: bool,
}

impl AccelAtConfig {
    pub fn new(lr_max: f64, lr_min: f64, delta_acc: f64, p: f64, n: usize) -> Self {
        Self {
            lr_max,
            lr_min,
            delta_acc,
            p,
            n,
            cooldown: 0,
            reset_window_on_reduce: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 < lr_min <= lr_max, got {} and {}",
                self.lr_min, self.lr_max
            ));
        }
        if !(0.0..=1.0).contains(&self.delta_acc) {
            return bad(format!("delta_acc {} outside [0, 1]", self.delta_acc));
        }
        if !(self.p > 0.0 && self.p <= 1.0) {
            return bad(format!("p {} outside (0, 1]", self.p));
        }
        if self.n == 0 {
            return bad("window length n must be >= 1".into());
        }
        Ok(())
    }

    /// Upper bound on the number of reductions before the clamp engages.
    pub fn max_reductions(&self) -> Option<usize> {
        if self.p == 1.0 {
            return Some(0);
        }
        Some(((self.lr_min / self.lr_max).ln() / self.p.ln()).ceil().max(0.0) as usize)
    }
}

/// What the controller did with one epoch's accuracy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    /// 1-based epoch whose accuracy was observed.
    pub epoch: usize,
    /// Mean of the last `n` accuracies, once the window is full.
    pub window_mean: Option<f64>,
    /// Previous window mean the current one was compared against.
    pub acc_pre: f64,
    /// Learning rate for the next epoch.
    pub lr: f64,
    pub reduced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccelAtState {
    config: AccelAtConfig,
    lr: f64,
    acc_pre: f64,
    history: VecDeque<f64>,
    epoch: usize,
    cooldown_left: usize,
}

impl AccelAtState {
    pub fn new(config: AccelAtConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            lr: config.lr_max,
            acc_pre: 0.0,
            history: VecDeque::with_capacity(config.n),
            epoch: 0,
            cooldown_left: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn acc_pre(&self) -> f64 {
        self.acc_pre
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn config(&self) -> &AccelAtConfig {
        &self.config
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    /// Feeds one epoch's accuracy and returns the learning rate for the next epoch.
    pub fn observe(&mut self, accuracy: f64) -> Result<Decision> {
        if !(0.0..=1.0).contains(&accuracy) {
            return Err(Error::AccuracyOutOfRange(accuracy));
        }
        self.epoch += 1;
        if self.history.len() == self.config.n {
            self.history.pop_front();
        }
        self.history.push_back(accuracy);

        let acc_pre = self.acc_pre;
        if self.history.len() < self.config.n {
            return Ok(Decision {
                epoch: self.epoch,
                window_mean: None,
                acc_pre,
                lr: self.lr,
                reduced: false,
            });
        }

        let mean = self.history.iter().sum::<f64>() / self.config.n as f64;
        let mut reduced = false;
        if self.cooldown_left > 0 {
            self.cooldown_left -= 1;
        } else if mean - acc_pre < self.config.delta_acc {
            let before = self.lr;
            self.lr *= self.config.p;
            if self.lr < self.config.lr_min {
                self.lr = self.config.lr_min;
            }
            reduced = self.lr < before;
            if reduced {
                self.cooldown_left = self.config.cooldown;
            }
        }
        self.acc_pre = mean;
        if reduced && self.config.reset_window_on_reduce {
            self.history.clear();
        }
        Ok(Decision {
            epoch: self.epoch,
            window_mean: Some(mean),
            acc_pre,
            lr: self.lr,
            reduced,
        })
    }
}

/// Feeds a whole accuracy trace and collects every decision.
pub fn run_trace(config: AccelAtConfig, accuracies: &[f64]) -> Result<Vec<Decision>> {
    let mut state = AccelAtState::new(config)?;
    accuracies.iter().map(|&a| state.observe(a)).collect()
}

/// Writes decisions as CSV with header
/// `epoch,window_mean_acc,acc_pre,lr,reduced`. The window mean is empty
/// until the first full window.
pub fn decisions_csv(decisions: &[Decision]) -> String {
    let mut out = String::from("epoch,window_mean_acc,acc_pre,lr,reduced\n");
    for d in decisions {
        let mean = d.window_mean.map(|m| m.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            d.epoch,
            mean,
            d.acc_pre,
            d.lr,
            u8::from(d.reduced)
        ));
    }
    out
}
