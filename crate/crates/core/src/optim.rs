//! Momentum SGD with L2 weight decay on weights (biases are not decayed).

use crate::error::{Error, Result};
use crate::nn::{Gradients, Network};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Gradients,
}

impl OptimizerState {
    pub fn new(net: &Network, lr: f64, momentum: f64, weight_decay: f64) -> Result<Self> {
        let state = Self {
            lr,
            momentum,
            weight_decay,
            velocity: net.zero_grads(),
        };
        state.validate()?;
        Ok(state)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }

    pub fn velocity(&self) -> &Gradients {
        &self.velocity
    }
}

/// `g += wd·w` (weights only), `v ← μ·v + g`, `θ ← θ − lr·v`.
pub fn sgd_step(net: &mut Network, grads: &Gradients, opt: &mut OptimizerState) -> Result<()> {
    opt.validate()?;
    if grads.layers.len() != net.layers().len() {
        return Err(Error::ShapeMismatch(format!(
            "{} gradient layers for {} network layers",
            grads.layers.len(),
            net.layers().len()
        )));
    }
    let (lr, mu, wd) = (opt.lr, opt.momentum, opt.weight_decay);
    for (k, ((layer, g), v)) in net
        .layers_mut()
        .iter_mut()
        .zip(&grads.layers)
        .zip(&mut opt.velocity.layers)
        .enumerate()
    {
        if g.weights.shape() != layer.weights.shape() || g.biases.len() != layer.biases.len() {
            return Err(Error::ShapeMismatch(format!("gradient for layer {k}")));
        }
        for ((w, &gw), vw) in layer
            .weights
            .as_mut_slice()
            .iter_mut()
            .zip(g.weights.as_slice())
            .zip(v.weights.as_mut_slice())
        {
            let grad = gw + wd * *w;
            *vw = mu * *vw + grad;
            *w -= lr * *vw;
        }
        for ((b, &gb), vb) in layer.biases.iter_mut().zip(&g.biases).zip(&mut v.biases) {
            *vb = mu * *vb + gb;
            *b -= lr * *vb;
        }
    }
    Ok(())
}
