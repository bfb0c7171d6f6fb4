//! Training loops: standard, adversarial (attack-in-the-loop) and free
//! adversarial training with minibatch replay, plus evaluation.
//!
//! All three share one loop. Per minibatch the loop draws (lr, momentum)
//! from the policy, builds the training inputs for the mode, takes an SGD
//! step and counts backward passes. Per epoch it evaluates clean and
//! adversarial accuracy on train and test, feeds the AccelAT controller
//! when configured, and checks early stopping.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::accelat::{AccelAtConfig, AccelAtState};
use crate::attacks::{perturb, sign, AttackSpec};
use crate::data::{Dataset, DatasetBundle};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{loss_and_grads, predict, Batch, Network};
use crate::optim::{sgd_step, OptimizerState};
use crate::runlog::{early_stop, EpochRow, Metric, RunLog};
use crate::schedule::{LrMomentumPoint, ScheduleSpec, DEFAULT_MOMENTUM};

const ATTACK_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Standard,
    Adversarial,
    Free,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            TrainMode::Standard => "standard",
            TrainMode::Adversarial => "adv",
            TrainMode::Free => "fat",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(TrainMode::Standard),
            "adv" | "adversarial" => Ok(TrainMode::Adversarial),
            "fat" | "free" => Ok(TrainMode::Free),
            other => Err(Error::Unknown {
                what: "training mode",
                name: other.into(),
                valid: "standard, adv, fat".into(),
            }),
        }
    }
}

/// Learning-rate source for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrPolicy {
    /// A fixed-shape schedule. Its time axis is stretched so that
    /// `total_steps` maps onto the last optimizer step of the run.
    Schedule(ScheduleSpec),
    AccelAt(AccelAtConfig),
}

impl LrPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            LrPolicy::Schedule(s) => s.kind.name(),
            LrPolicy::AccelAt(_) => "accelat",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub policy: LrPolicy,
    /// Training attack (adversarial mode) or perturbation budget (free mode).
    pub attack: Option<AttackSpec>,
    /// Evaluation attack; defaults to `attack`.
    pub eval_attack: Option<AttackSpec>,
    pub free_m: usize,
    /// Epoch budget. Free training runs `epochs / free_m` epochs.
    pub epochs: usize,
    pub batch_size: usize,
    /// Momentum for the AccelAT policy (schedules carry their own).
    pub momentum: f64,
    pub weight_decay: f64,
    pub early_stop_epochs: Option<usize>,
    /// Accuracy column fed to the AccelAT controller.
    pub accelat_metric: Metric,
    /// Evaluate training-set accuracies on at most this many samples.
    pub eval_train_limit: Option<usize>,
    pub record_wall_time: bool,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(mode: TrainMode, policy: LrPolicy, epochs: usize, seed: u64) -> Self {
        Self {
            mode,
            policy,
            attack: None,
            eval_attack: None,
            free_m: 1,
            epochs,
            batch_size: 128,
            momentum: DEFAULT_MOMENTUM,
            weight_decay: 0.0002,
            early_stop_epochs: None,
            accelat_metric: Metric::AccCleanTest,
            eval_train_limit: None,
            record_wall_time: false,
            seed,
        }
    }

    pub fn with_attack(mut self, attack: AttackSpec) -> Self {
        self.attack = Some(attack);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.free_m == 0 {
            return bad("free_m must be >= 1".into());
        }
        if matches!(self.mode, TrainMode::Adversarial | TrainMode::Free) && self.attack.is_none() {
            return bad(format!("mode {} requires an attack", self.mode.name()));
        }
        if self.mode == TrainMode::Free && !self.attack.is_some_and(|a| a.epsilon.is_finite()) {
            return bad("free training requires a finite epsilon budget".into());
        }
        for a in self.attack.iter().chain(self.eval_attack.iter()) {
            a.validate()?;
        }
        match self.policy {
            LrPolicy::Schedule(s) => s.validate()?,
            LrPolicy::AccelAt(c) => c.validate()?,
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }

    /// Epochs the loop will actually run.
    pub fn run_epochs(&self) -> usize {
        match self.mode {
            TrainMode::Free => self.epochs / self.free_m,
            _ => self.epochs,
        }
    }

    fn eval_attack(&self) -> Option<&AttackSpec> {
        self.eval_attack.as_ref().or(self.attack.as_ref())
    }
}

pub fn train_standard(net: &mut Network, data: &DatasetBundle, config: &TrainConfig) -> Result<RunLog> {
    expect_mode(config, TrainMode::Standard)?;
    run(net, data, config)
}

/// Each minibatch is replaced by the configured attack's output against the
/// current network before the SGD step.
pub fn train_adversarial(net: &mut Network, data: &DatasetBundle, config: &TrainConfig) -> Result<RunLog> {
    expect_mode(config, TrainMode::Adversarial)?;
    run(net, data, config)
}

/// Free adversarial training. Every minibatch is replayed `free_m` times;
/// each replay runs one forward/backward pass whose parameter gradient
/// drives the SGD step and whose input gradient updates a perturbation
/// `δ ← clip(δ + ε·sign(∇ₓL), −ε, ε)`. One `δ` buffer per minibatch slot
/// starts at zero and persists across epochs; slots follow batch position,
/// not sample identity. With `free_m = 1` no replay exists, `δ` is never
/// updated, and the run is ordinary training.
pub fn train_fat(net: &mut Network, data: &DatasetBundle, config: &TrainConfig) -> Result<RunLog> {
    expect_mode(config, TrainMode::Free)?;
    run(net, data, config)
}

/// Dispatches on `config.mode`.
pub fn train(net: &mut Network, data: &DatasetBundle, config: &TrainConfig) -> Result<RunLog> {
    run(net, data, config)
}

fn expect_mode(config: &TrainConfig, mode: TrainMode) -> Result<()> {
    if config.mode != mode {
        return Err(Error::InvalidConfig(format!(
            "expected mode {}, config has {}",
            mode.name(),
            config.mode.name()
        )));
    }
    Ok(())
}

/// Fraction of `data` classified correctly, attacking each sample first
/// when `attack` is given.
pub fn evaluate(
    net: &Network,
    data: &Dataset,
    attack: Option<&AttackSpec>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..data.len()).collect();
    for chunk in indices.chunks(EVAL_CHUNK) {
        let batch = data.batch(chunk)?;
        let inputs = match attack {
            Some(spec) => perturb(net, &batch, spec, rng)?,
            None => batch.inputs,
        };
        correct += predict(net, &inputs)?
            .iter()
            .zip(&batch.labels)
            .filter(|(p, l)| p == l)
            .count();
    }
    Ok(correct as f64 / data.len() as f64)
}

enum LrSource {
    Schedule { spec: ScheduleSpec, scale: f64 },
    Controller { state: AccelAtState, momentum: f64 },
}

impl LrSource {
    fn new(config: &TrainConfig, total_steps: usize) -> Result<Self> {
        Ok(match config.policy {
            LrPolicy::Schedule(spec) => LrSource::Schedule {
                scale: total_steps as f64 / spec.total_steps as f64,
                spec,
            },
            LrPolicy::AccelAt(c) => LrSource::Controller {
                state: AccelAtState::new(c)?,
                momentum: config.momentum,
            },
        })
    }

    fn at(&self, step: usize) -> Result<LrMomentumPoint> {
        match self {
            LrSource::Schedule { spec, scale } => {
                let t = (step as f64 / scale).min(spec.total_steps as f64);
                spec.point(t)
            }
            LrSource::Controller { state, momentum } => Ok(LrMomentumPoint {
                lr: state.lr(),
                momentum: *momentum,
            }),
        }
    }
}

fn run(net: &mut Network, data: &DatasetBundle, config: &TrainConfig) -> Result<RunLog> {
    config.validate()?;
    let train_set = &data.train;
    let mut log = RunLog::default();
    let epochs = config.run_epochs();
    if epochs == 0 {
        return Ok(log);
    }
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train_set.features() != net.input_size() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: net.input_size(),
            found: train_set.features(),
        });
    }

    let replays = match config.mode {
        TrainMode::Free => config.free_m,
        _ => 1,
    };
    let batches_per_epoch = train_set.len().div_ceil(config.batch_size);
    let steps_per_epoch = batches_per_epoch * replays;
    let mut lr_source = LrSource::new(config, epochs * steps_per_epoch)?;

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut attack_rng = ChaCha8Rng::seed_from_u64(config.seed);
    attack_rng.set_stream(ATTACK_STREAM);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed);
    eval_rng.set_stream(EVAL_STREAM);

    let first = lr_source.at(0)?;
    let mut opt = OptimizerState::new(net, first.lr, first.momentum, config.weight_decay)?;
    let mut deltas: Vec<Option<Matrix>> = vec![None; batches_per_epoch];
    let eval_train = match config.eval_train_limit {
        Some(n) if n < train_set.len() => train_set.take(n)?,
        _ => train_set.clone(),
    };
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0usize;

    for epoch in 1..=epochs {
        let started = Instant::now();
        let epoch_point = lr_source.at(step)?;
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;

        for (slot, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch = train_set.batch(chunk)?;
            let base = match config.mode {
                TrainMode::Adversarial => {
                    let spec = config.attack.as_ref().expect("validated");
                    let adv = perturb(net, &batch, spec, &mut attack_rng)?;
                    log.backward_passes += spec.gradient_cost() as u64;
                    Batch {
                        inputs: adv,
                        labels: batch.labels,
                    }
                }
                _ => batch,
            };
            for _ in 0..replays {
                let point = lr_source.at(step)?;
                opt.lr = point.lr;
                opt.momentum = point.momentum;
                let input = match &deltas[slot] {
                    Some(delta) => perturbed_input(&base, delta, config.attack.as_ref()),
                    None => base.clone(),
                };
                let out = match loss_and_grads(net, &input) {
                    Ok(out) => out,
                    Err(Error::NonFiniteLoss { sample }) => {
                        abort(&mut log, epoch, epoch_point, format!("non-finite loss at epoch {epoch}, batch {slot}, sample {sample}"));
                        return Ok(log);
                    }
                    Err(e) => return Err(e),
                };
                log.backward_passes += 1;
                sgd_step(net, &out.param_grads, &mut opt)?;
                step += 1;
                if !net.is_finite() {
                    abort(&mut log, epoch, epoch_point, format!("non-finite parameters at epoch {epoch}, batch {slot}"));
                    return Ok(log);
                }
                loss_sum += out.loss * input.len() as f64;
                loss_count += input.len();
                if replays > 1 {
                    let eps = config.attack.as_ref().expect("validated").epsilon;
                    let delta = deltas[slot].get_or_insert_with(|| Matrix::zeros(input.len(), input.inputs.cols()));
                    update_delta(delta, &out.input_grads, eps);
                }
            }
        }

        let eval_attack = config.eval_attack();
        let mut row = EpochRow {
            epoch,
            lr: epoch_point.lr,
            momentum: epoch_point.momentum,
            loss: loss_sum / loss_count as f64,
            acc_clean_train: Some(evaluate(net, &eval_train, None, &mut eval_rng)?),
            acc_clean_test: optional_eval(net, &data.test, None, &mut eval_rng)?,
            acc_adv_train: None,
            acc_adv_test: None,
            wall_ms: 0,
            accelat_reduced: false,
        };
        if let Some(spec) = eval_attack {
            row.acc_adv_train = Some(evaluate(net, &eval_train, Some(spec), &mut eval_rng)?);
            row.acc_adv_test = optional_eval(net, &data.test, Some(spec), &mut eval_rng)?;
        }
        if let LrSource::Controller { state, .. } = &mut lr_source {
            let acc = config.accelat_metric.of(&row).ok_or_else(|| {
                Error::InvalidConfig(format!("AccelAT metric {} is not recorded", config.accelat_metric))
            })?;
            let decision = state.observe(acc)?;
            row.accelat_reduced = decision.reduced;
            log.controller.push(decision);
        }
        if config.record_wall_time {
            row.wall_ms = started.elapsed().as_millis() as u64;
        }
        log.rows.push(row);

        if let Some(patience) = config.early_stop_epochs {
            if early_stop(&log, patience) {
                log.stopped_early = true;
                break;
            }
        }
    }
    Ok(log)
}

fn optional_eval(
    net: &Network,
    data: &Dataset,
    attack: Option<&AttackSpec>,
    rng: &mut ChaCha8Rng,
) -> Result<Option<f64>> {
    if data.is_empty() {
        return Ok(None);
    }
    evaluate(net, data, attack, rng).map(Some)
}

/// `δ ← clip(δ + ε·sign(g), −ε, ε)`.
fn update_delta(delta: &mut Matrix, grads: &Matrix, eps: f64) {
    for (d, &g) in delta.as_mut_slice().iter_mut().zip(grads.as_slice()) {
        *d = (*d + eps * sign(g)).clamp(-eps, eps);
    }
}

fn perturbed_input(base: &Batch, delta: &Matrix, attack: Option<&AttackSpec>) -> Batch {
    let clamp = attack.and_then(|a| a.clamp);
    let mut inputs = base.inputs.clone();
    for (x, &d) in inputs.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        let v = *x + d;
        *x = match clamp {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        };
    }
    Batch {
        inputs,
        labels: base.labels.clone(),
    }
}

fn abort(log: &mut RunLog, epoch: usize, point: LrMomentumPoint, reason: String) {
    log.rows.push(EpochRow {
        epoch,
        lr: point.lr,
        momentum: point.momentum,
        loss: f64::NAN,
        acc_clean_train: None,
        acc_clean_test: None,
        acc_adv_train: None,
        acc_adv_test: None,
        wall_ms: 0,
        accelat_reduced: false,
    });
    log.aborted = Some(reason);
}
