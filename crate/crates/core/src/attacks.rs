//! White-box adversarial example generators: FGSM, L∞-PGD and DeepFool.
//!
//! Budgets are in input units. Inputs live in `[0, 1]`, so a budget given
//! on the 0–255 pixel scale must be divided by 255 first (see
//! [`pixel_budget`]).

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{argmax, logit_jacobian, logits, loss_and_grads, Batch, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Pgd,
    DeepFool,
}

impl AttackKind {
    pub const NAMES: [&'static str; 3] = ["fgsm", "pgd", "deepfool"];

    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Pgd => "pgd",
            AttackKind::DeepFool => "deepfool",
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "pgd" | "linf_pgd" => Ok(AttackKind::Pgd),
            "deepfool" => Ok(AttackKind::DeepFool),
            other => Err(Error::Unknown {
                what: "attack",
                name: other.into(),
                valid: Self::NAMES.join(", "),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    /// L∞ budget. DeepFool treats `f64::INFINITY` as unbounded.
    pub epsilon: f64,
    pub pgd_steps: usize,
    pub pgd_alpha: f64,
    pub pgd_random_start: bool,
    pub deepfool_max_iters: usize,
    pub deepfool_overshoot: f64,
    /// Valid input range; `None` disables clamping.
    pub clamp: Option<(f64, f64)>,
}

pub const DEFAULT_PGD_STEPS: usize = 10;
pub const DEFAULT_DEEPFOOL_ITERS: usize = 50;
pub const DEFAULT_OVERSHOOT: f64 = 0.02;

/// Converts a budget on the 0–255 pixel scale to input units.
pub fn pixel_budget(eps_pixels: f64) -> f64 {
    eps_pixels / 255.0
}

impl AttackSpec {
    fn base(kind: AttackKind, epsilon: f64) -> Self {
        Self {
            kind,
            epsilon,
            pgd_steps: DEFAULT_PGD_STEPS,
            pgd_alpha: epsilon / 4.0,
            pgd_random_start: false,
            deepfool_max_iters: DEFAULT_DEEPFOOL_ITERS,
            deepfool_overshoot: DEFAULT_OVERSHOOT,
            clamp: Some((0.0, 1.0)),
        }
    }

    pub fn fgsm(epsilon: f64) -> Self {
        Self::base(AttackKind::Fgsm, epsilon)
    }

    /// PGD with `α = ε/4` and 10 steps.
    pub fn pgd(epsilon: f64) -> Self {
        Self::base(AttackKind::Pgd, epsilon)
    }

    pub fn pgd_with(epsilon: f64, alpha: f64, steps: usize, random_start: bool) -> Self {
        Self {
            pgd_alpha: alpha,
            pgd_steps: steps,
            pgd_random_start: random_start,
            ..Self::base(AttackKind::Pgd, epsilon)
        }
    }

    /// DeepFool with a final L∞ budget (`f64::INFINITY` for none).
    pub fn deepfool(epsilon: f64) -> Self {
        Self::base(AttackKind::DeepFool, epsilon)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon {} must be >= 0", self.epsilon));
        }
        if self.kind == AttackKind::Pgd {
            if !(self.pgd_alpha > 0.0) && self.epsilon > 0.0 {
                return bad(format!("pgd_alpha {} must be > 0", self.pgd_alpha));
            }
            if self.pgd_steps == 0 {
                return bad("pgd_steps must be >= 1".into());
            }
        }
        if !(self.deepfool_overshoot >= 0.0) {
            return bad(format!("overshoot {} must be >= 0", self.deepfool_overshoot));
        }
        if let Some((lo, hi)) = self.clamp {
            if !(lo < hi) {
                return bad(format!("clamp range [{lo}, {hi}] is empty"));
            }
        }
        Ok(())
    }

    /// Input-gradient evaluations one call on a batch costs (DeepFool: per-sample upper bound).
    pub fn gradient_cost(&self) -> usize {
        match self.kind {
            AttackKind::Fgsm => 1,
            AttackKind::Pgd => self.pgd_steps,
            AttackKind::DeepFool => self.deepfool_max_iters,
        }
    }

    fn clamp_value(&self, v: f64) -> f64 {
        match self.clamp {
            Some((lo, hi)) => v.clamp(lo, hi),
            None => v,
        }
    }
}

/// `sign(0) = 0`.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `clamp(x + ε·sign(∇ₓL))`.
pub fn fgsm(net: &Network, batch: &Batch, spec: &AttackSpec) -> Result<Matrix> {
    spec.validate()?;
    let grads = loss_and_grads(net, batch)?.input_grads;
    let mut adv = batch.inputs.clone();
    for (x, &g) in adv.as_mut_slice().iter_mut().zip(grads.as_slice()) {
        *x = spec.clamp_value(*x + spec.epsilon * sign(g));
    }
    Ok(adv)
}

/// Iterated sign-gradient ascent projected onto the L∞ ball around the
/// original inputs, with an optional uniform random start.
pub fn pgd_linf<R: Rng + ?Sized>(
    net: &Network,
    batch: &Batch,
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<Matrix> {
    spec.validate()?;
    let origin = batch.inputs.as_slice();
    let eps = spec.epsilon;
    let project = |v: f64, o: f64| v.max(o - eps).min(o + eps);

    let mut current = batch.clone();
    if spec.pgd_random_start {
        for (x, &o) in current.inputs.as_mut_slice().iter_mut().zip(origin) {
            let noise = (rng.random::<f64>() * 2.0 - 1.0) * eps;
            *x = project(spec.clamp_value(o + noise), o);
        }
    }
    for _ in 0..spec.pgd_steps {
        let grads = loss_and_grads(net, &current)?.input_grads;
        for ((x, &g), &o) in current
            .inputs
            .as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(origin)
        {
            *x = project(spec.clamp_value(*x + spec.pgd_alpha * sign(g)), o);
        }
    }
    Ok(current.inputs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeepFoolOutcome {
    pub adversarial: Vec<f64>,
    pub iterations: usize,
    pub fooled: bool,
}

/// Iterative linearisation towards the nearest decision boundary.
///
/// Each step moves by `|f'_l|/‖w_l‖²·w_l` for the closest class `l`; the
/// accumulated perturbation is scaled by `1 + overshoot`, clipped to the
/// ε-ball when the budget is finite, and clamped to the input range. A
/// sample the network already misclassifies is returned unchanged.
pub fn deepfool(net: &Network, x: &[f64], label: usize, spec: &AttackSpec) -> Result<DeepFoolOutcome> {
    spec.validate()?;
    let row = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let k0 = argmax(logits(net, &row)?.row(0));
    if k0 != label {
        return Ok(DeepFoolOutcome {
            adversarial: x.to_vec(),
            iterations: 0,
            fooled: true,
        });
    }

    let scale = 1.0 + spec.deepfool_overshoot;
    let mut r_total = vec![0.0; x.len()];
    let mut current = x.to_vec();
    let mut iterations = 0;
    let mut class = k0;
    while iterations < spec.deepfool_max_iters {
        let (f, jac) = logit_jacobian(net, &current)?;
        class = argmax(&f);
        if class != k0 {
            break;
        }
        let Some((dist_f, w)) = closest_boundary(&f, &jac, k0) else {
            break;
        };
        let norm_sq: f64 = w.iter().map(|v| v * v).sum();
        let step = dist_f / norm_sq;
        for (r, wv) in r_total.iter_mut().zip(&w) {
            *r += step * wv;
        }
        current = apply_perturbation(x, &r_total, scale, spec);
        iterations += 1;
        class = predicted(net, &current)?;
    }
    Ok(DeepFoolOutcome {
        adversarial: current,
        iterations,
        fooled: class != k0,
    })
}

/// `(|f'_l|, w_l)` for the class whose linearised boundary is nearest.
fn closest_boundary(f: &[f64], jac: &Matrix, k0: usize) -> Option<(f64, Vec<f64>)> {
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for l in (0..f.len()).filter(|&l| l != k0) {
        let w: Vec<f64> = jac.row(l).iter().zip(jac.row(k0)).map(|(a, b)| a - b).collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            continue;
        }
        let fd = (f[l] - f[k0]).abs();
        let dist = fd / norm;
        if best.as_ref().is_none_or(|(d, _, _)| dist < *d) {
            best = Some((dist, fd, w));
        }
    }
    best.map(|(_, fd, w)| (fd, w))
}

fn apply_perturbation(x: &[f64], r: &[f64], scale: f64, spec: &AttackSpec) -> Vec<f64> {
    x.iter()
        .zip(r)
        .map(|(&xv, &rv)| {
            let mut d = scale * rv;
            if spec.epsilon.is_finite() {
                d = d.clamp(-spec.epsilon, spec.epsilon);
            }
            spec.clamp_value(xv + d)
        })
        .collect()
}

fn predicted(net: &Network, x: &[f64]) -> Result<usize> {
    let row = Matrix::from_vec(1, x.len(), x.to_vec())?;
    Ok(argmax(logits(net, &row)?.row(0)))
}

/// Attacks every sample of `batch` according to `spec.kind`.
pub fn perturb<R: Rng + ?Sized>(
    net: &Network,
    batch: &Batch,
    spec: &AttackSpec,
    rng: &mut R,
) -> Result<Matrix> {
    match spec.kind {
        AttackKind::Fgsm => fgsm(net, batch, spec),
        AttackKind::Pgd => pgd_linf(net, batch, spec, rng),
        AttackKind::DeepFool => {
            let mut out = batch.inputs.clone();
            for (r, &label) in batch.labels.iter().enumerate() {
                let res = deepfool(net, batch.inputs.row(r), label, spec)?;
                out.row_mut(r).copy_from_slice(&res.adversarial);
            }
            Ok(out)
        }
    }
}
