//! Fixed-shape learning-rate (and momentum) policies.
//!
//! Every policy is a pure function of training progress `t`, measured in
//! optimizer steps. `t` is a real number so that fractional positions such
//! as `0.45 · total` can be evaluated exactly; training loops pass integer
//! step counts. Use [`epoch_to_step`] when a policy is specified in epochs.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Fraction of training at which the one-cycle triangle peaks.
pub const ONE_CYCLE_PEAK: f64 = 0.45;
/// Fraction of training covered by the one-cycle triangle; the rest is the tail.
pub const ONE_CYCLE_END: f64 = 0.9;
pub const ONE_CYCLE_MOMENTUM_MAX: f64 = 0.95;
pub const ONE_CYCLE_MOMENTUM_MIN: f64 = 0.85;
/// Momentum used by every policy other than one-cycle unless overridden.
pub const DEFAULT_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleKind {
    Constant,
    /// Piecewise constant on `[0, b1)`, `[b1, b2)`, `[b2, total]` with values
    /// `lr_max`, `lr_max·factor`, `lr_max·factor²`.
    ThreeStep { boundaries: [f64; 2], factor: f64 },
    LinearDecay,
    ExponentialDecay,
    OneCycle,
    /// `step_size` is the half-cycle length in steps.
    CyclicalTriangular { step_size: f64 },
    CyclicalDecreasingMax { step_size: f64, gamma: f64 },
    WarmRestartCosine { t0: f64, t_mult: f64 },
    WarmRestartLinear { period: f64, decay: f64 },
}

impl ScheduleKind {
    pub const NAMES: [&'static str; 9] = [
        "constant",
        "three_step",
        "linear_decay",
        "exponential_decay",
        "one_cycle",
        "cyclical_triangular",
        "cyclical_decreasing_max",
        "warm_restart_cosine",
        "warm_restart_linear",
    ];

    pub fn name(&self) -> &'static str {
        let idx = match self {
            ScheduleKind::Constant => 0,
            ScheduleKind::ThreeStep { .. } => 1,
            ScheduleKind::LinearDecay => 2,
            ScheduleKind::ExponentialDecay => 3,
            ScheduleKind::OneCycle => 4,
            ScheduleKind::CyclicalTriangular { .. } => 5,
            ScheduleKind::CyclicalDecreasingMax { .. } => 6,
            ScheduleKind::WarmRestartCosine { .. } => 7,
            ScheduleKind::WarmRestartLinear { .. } => 8,
        };
        Self::NAMES[idx]
    }

    /// Multiplies every time-valued parameter by `factor` (e.g. steps per epoch).
    pub fn scale_time(self, factor: f64) -> Self {
        match self {
            ScheduleKind::ThreeStep { boundaries, factor: f } => ScheduleKind::ThreeStep {
                boundaries: [boundaries[0] * factor, boundaries[1] * factor],
                factor: f,
            },
            ScheduleKind::CyclicalTriangular { step_size } => ScheduleKind::CyclicalTriangular {
                step_size: step_size * factor,
            },
            ScheduleKind::CyclicalDecreasingMax { step_size, gamma } => {
                ScheduleKind::CyclicalDecreasingMax {
                    step_size: step_size * factor,
                    gamma,
                }
            }
            ScheduleKind::WarmRestartCosine { t0, t_mult } => ScheduleKind::WarmRestartCosine {
                t0: t0 * factor,
                t_mult,
            },
            ScheduleKind::WarmRestartLinear { period, decay } => ScheduleKind::WarmRestartLinear {
                period: period * factor,
                decay,
            },
            other => other,
        }
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a kind name with default kind-specific parameters.
impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant" => ScheduleKind::Constant,
            "three_step" => ScheduleKind::ThreeStep {
                boundaries: [0.5, 0.75],
                factor: 0.1,
            },
            "linear_decay" => ScheduleKind::LinearDecay,
            "exponential_decay" => ScheduleKind::ExponentialDecay,
            "one_cycle" => ScheduleKind::OneCycle,
            "cyclical_triangular" => ScheduleKind::CyclicalTriangular { step_size: 4.0 },
            "cyclical_decreasing_max" => ScheduleKind::CyclicalDecreasingMax {
                step_size: 4.0,
                gamma: 0.5,
            },
            "warm_restart_cosine" => ScheduleKind::WarmRestartCosine { t0: 10.0, t_mult: 2.0 },
            "warm_restart_linear" => ScheduleKind::WarmRestartLinear {
                period: 10.0,
                decay: 0.7,
            },
            other => {
                return Err(Error::Unknown {
                    what: "schedule",
                    name: other.to_string(),
                    valid: Self::NAMES.join(", "),
                })
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub lr_max: f64,
    pub lr_min: f64,
    pub total_steps: usize,
    /// Constant momentum for every kind except one-cycle.
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrMomentumPoint {
    pub lr: f64,
    pub momentum: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind, lr_max: f64, lr_min: f64, total_steps: usize) -> Result<Self> {
        let spec = Self {
            kind,
            lr_max,
            lr_min,
            total_steps,
            momentum: DEFAULT_MOMENTUM,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_momentum(mut self, momentum: f64) -> Result<Self> {
        self.momentum = momentum;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!(
                "need 0 < lr_min <= lr_max, got lr_min={} lr_max={}",
                self.lr_min, self.lr_max
            ));
        }
        if self.total_steps == 0 {
            return bad("total_steps must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum {} outside [0, 1)", self.momentum));
        }
        match self.kind {
            ScheduleKind::ThreeStep { boundaries, factor } => {
                let [b1, b2] = boundaries;
                if !(0.0 <= b1 && b1 <= b2 && b2 <= self.total_steps as f64) {
                    return bad(format!("three-step boundaries {b1}, {b2} out of order"));
                }
                if !(factor > 0.0 && factor <= 1.0) {
                    return bad(format!("three-step factor {factor} outside (0, 1]"));
                }
                if self.lr_max * factor * factor < self.lr_min {
                    return bad("three-step final value falls below lr_min".into());
                }
            }
            ScheduleKind::CyclicalTriangular { step_size } if step_size < 1.0 => {
                return bad(format!("cycle step_size {step_size} < 1"));
            }
            ScheduleKind::CyclicalDecreasingMax { step_size, gamma } => {
                if step_size < 1.0 {
                    return bad(format!("cycle step_size {step_size} < 1"));
                }
                if !(gamma > 0.0 && gamma <= 1.0) {
                    return bad(format!("peak decay {gamma} outside (0, 1]"));
                }
            }
            ScheduleKind::WarmRestartCosine { t0, t_mult } => {
                if t0 < 1.0 || !(t_mult >= 1.0) {
                    return bad(format!("need T_0 >= 1 and T_mult >= 1, got {t0}, {t_mult}"));
                }
            }
            ScheduleKind::WarmRestartLinear { period, decay }
                if (period < 1.0 || !(decay > 0.0 && decay <= 1.0)) => {
                    return bad(format!("need period >= 1 and decay in (0, 1], got {period}, {decay}"));
                }
            _ => {}
        }
        Ok(())
    }

    /// Learning rate and momentum at progress `t ∈ [0, total_steps]`.
    pub fn point(&self, t: f64) -> Result<LrMomentumPoint> {
        let total = self.total_steps as f64;
        if !(0.0..=total).contains(&t) {
            return Err(Error::StepOutOfRange {
                t,
                total: self.total_steps,
            });
        }
        let (lo, hi) = (self.lr_min, self.lr_max);
        let lr = match self.kind {
            ScheduleKind::Constant => hi,
            ScheduleKind::ThreeStep { boundaries, factor } => three_step(t, hi, boundaries, factor),
            ScheduleKind::LinearDecay => linear_decay(t, total, hi, lo),
            ScheduleKind::ExponentialDecay => exponential_decay(t, total, hi, lo),
            ScheduleKind::OneCycle => return Ok(one_cycle(t, total, hi)),
            ScheduleKind::CyclicalTriangular { step_size } => triangular(t, lo, hi, step_size),
            ScheduleKind::CyclicalDecreasingMax { step_size, gamma } => {
                triangular_decreasing_max(t, lo, hi, step_size, gamma)
            }
            ScheduleKind::WarmRestartCosine { t0, t_mult } => {
                let (_, t_cur, t_i) = restart_position(t, t0, t_mult);
                cosine_anneal(hi, lo, t_cur, t_i)
            }
            ScheduleKind::WarmRestartLinear { period, decay } => {
                warm_restart_linear(t, hi, lo, period, decay)
            }
        };
        Ok(LrMomentumPoint {
            lr,
            momentum: self.momentum,
        })
    }

    pub fn lr(&self, t: f64) -> Result<f64> {
        self.point(t).map(|p| p.lr)
    }

    /// Lowest value the schedule can emit.
    pub fn floor(&self) -> f64 {
        match self.kind {
            ScheduleKind::OneCycle => self.lr_min.min(self.lr_max / 1000.0),
            _ => self.lr_min,
        }
    }
}

pub fn epoch_to_step(epoch: f64, steps_per_epoch: usize) -> f64 {
    epoch * steps_per_epoch as f64
}

/// `a` at `f = 0`, `b` at `f = 1`, both exactly.
#[inline]
fn lerp(a: f64, b: f64, f: f64) -> f64 {
    a * (1.0 - f) + b * f
}

pub fn three_step(t: f64, lr_max: f64, boundaries: [f64; 2], factor: f64) -> f64 {
    if t < boundaries[0] {
        lr_max
    } else if t < boundaries[1] {
        lr_max * factor
    } else {
        lr_max * factor * factor
    }
}

pub fn linear_decay(t: f64, total: f64, lr_max: f64, lr_min: f64) -> f64 {
    lerp(lr_max, lr_min, t / total)
}

pub fn exponential_decay(t: f64, total: f64, lr_max: f64, lr_min: f64) -> f64 {
    lr_max * (lr_min / lr_max).powf(t / total)
}

/// Linear ramp `lr_max/10 → lr_max` to 45%, back to `lr_max/10` at 90%,
/// then `→ lr_max/1000` at the end. Momentum mirrors the triangle between
/// 0.95 and 0.85 and holds 0.95 in the tail.
pub fn one_cycle(t: f64, total: f64, lr_max: f64) -> LrMomentumPoint {
    let start = lr_max / 10.0;
    let peak_t = ONE_CYCLE_PEAK * total;
    let end_t = ONE_CYCLE_END * total;
    let (m_hi, m_lo) = (ONE_CYCLE_MOMENTUM_MAX, ONE_CYCLE_MOMENTUM_MIN);
    if t <= peak_t {
        let f = t / peak_t;
        LrMomentumPoint {
            lr: lerp(start, lr_max, f),
            momentum: lerp(m_hi, m_lo, f),
        }
    } else if t <= end_t {
        let f = (t - peak_t) / (end_t - peak_t);
        LrMomentumPoint {
            lr: lerp(lr_max, start, f),
            momentum: lerp(m_lo, m_hi, f),
        }
    } else {
        let f = (t - end_t) / (total - end_t);
        LrMomentumPoint {
            lr: lerp(start, lr_max / 1000.0, f),
            momentum: m_hi,
        }
    }
}

/// 1-based cycle index and the triangular-wave phase `max(0, 1 − x)`.
fn triangle_phase(t: f64, step_size: f64) -> (f64, f64) {
    let cycle = (1.0 + t / (2.0 * step_size)).floor();
    let x = (t / step_size - 2.0 * cycle + 1.0).abs();
    (cycle, (1.0 - x).max(0.0))
}

pub fn triangular(t: f64, lr_min: f64, lr_max: f64, step_size: f64) -> f64 {
    let (_, phase) = triangle_phase(t, step_size);
    lr_min + (lr_max - lr_min) * phase
}

/// Triangular wave whose peak in cycle `k` is `lr_min + (lr_max − lr_min)·γ^(k−1)`.
pub fn triangular_decreasing_max(t: f64, lr_min: f64, lr_max: f64, step_size: f64, gamma: f64) -> f64 {
    let (cycle, phase) = triangle_phase(t, step_size);
    let amplitude = (lr_max - lr_min) * gamma.powf(cycle - 1.0);
    lr_min + amplitude * phase
}

/// Locates `t` inside a restart sequence whose run `i` lasts `t0·t_mult^i`.
/// Returns `(run index, steps since last restart, current run length)`.
pub fn restart_position(t: f64, t0: f64, t_mult: f64) -> (usize, f64, f64) {
    if t_mult == 1.0 {
        let run = (t / t0).floor();
        return (run as usize, t - run * t0, t0);
    }
    let (mut run, mut start, mut len) = (0usize, 0.0, t0);
    while t >= start + len {
        start += len;
        len *= t_mult;
        run += 1;
    }
    (run, t - start, len)
}

pub fn cosine_anneal(lr_max: f64, lr_min: f64, t_cur: f64, t_i: f64) -> f64 {
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t_cur / t_i).cos())
}

pub fn linear_anneal(peak: f64, lr_min: f64, t_cur: f64, t_i: f64) -> f64 {
    lerp(peak, lr_min, t_cur / t_i)
}

/// Linear descent to `lr_min` in every run of length `period`; the peak of
/// run `i` is `lr_max·decay^i`, floored at `lr_min`.
pub fn warm_restart_linear(t: f64, lr_max: f64, lr_min: f64, period: f64, decay: f64) -> f64 {
    let (run, t_cur, len) = restart_position(t, period, 1.0);
    let peak = (lr_max * decay.powi(run as i32)).max(lr_min);
    linear_anneal(peak, lr_min, t_cur, len)
}
