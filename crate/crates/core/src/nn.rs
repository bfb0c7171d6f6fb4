//! Dense feed-forward networks with a softmax cross-entropy head.
//!
//! Backpropagation yields gradients with respect to both parameters and
//! inputs; the input gradient is what every attack consumes.

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Matrix,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, biases: Vec<f64>, activation: Activation) -> Result<Self> {
        if biases.len() != weights.rows() {
            return Err(Error::ShapeMismatch(format!(
                "{} biases for {} output units",
                biases.len(),
                weights.rows()
            )));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn outputs(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<DenseLayer>,
}

/// Per-layer values saved by [`forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer; `layer_inputs[0]` is the network input.
    layer_inputs: Vec<Matrix>,
    pre_activations: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Matrix,
    pub biases: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

/// A labelled minibatch. Inputs are `batch × features`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn new(inputs: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if inputs.rows() != labels.len() {
            return Err(Error::CountMismatch {
                images: inputs.rows(),
                labels: labels.len(),
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::LabelOutOfRange { label, num_classes });
        }
        Ok(Self { inputs, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Result of [`loss_and_grads`].
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub param_grads: Gradients,
    pub input_grads: Matrix,
    pub logits: Matrix,
}

impl Network {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].inputs() != pair[0].outputs() {
                return Err(Error::DimensionMismatch {
                    layer: k + 1,
                    expected: pair[0].outputs(),
                    found: pair[1].inputs(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Multilayer perceptron with ReLU hidden layers and an identity head.
    ///
    /// `widths` lists every layer width including input and output, e.g.
    /// `[2, 32, 32, 2]`. Weights are drawn He-uniform,
    /// `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, row by row in layer order;
    /// biases start at zero.
    pub fn mlp<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        Self::build(widths, |fan_in, w| {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in w.as_mut_slice() {
                *v = rng.random_range(-bound..bound);
            }
        })
    }

    /// Same topology as [`Network::mlp`] with every parameter zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        Self::build(widths, |_, _| {})
    }

    fn build(widths: &[usize], mut init: impl FnMut(usize, &mut Matrix)) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "invalid layer widths {widths:?}"
            )));
        }
        let last = widths.len() - 2;
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(k, io)| {
                let mut weights = Matrix::zeros(io[1], io[0]);
                init(io[0], &mut weights);
                let activation = if k == last {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                DenseLayer {
                    weights,
                    biases: vec![0.0; io[1]],
                    activation,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.is_finite() && l.biases.iter().all(|b| b.is_finite()))
    }

    pub fn zero_grads(&self) -> Gradients {
        Gradients {
            layers: self
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: Matrix::zeros(l.outputs(), l.inputs()),
                    biases: vec![0.0; l.outputs()],
                })
                .collect(),
        }
    }
}

pub fn forward(net: &Network, inputs: &Matrix) -> Result<(Matrix, ForwardCache)> {
    let mut layer_inputs = Vec::with_capacity(net.layers.len());
    let mut pre_activations = Vec::with_capacity(net.layers.len());
    let mut x = inputs.clone();
    for (k, layer) in net.layers.iter().enumerate() {
        if x.cols() != layer.inputs() {
            return Err(Error::DimensionMismatch {
                layer: k,
                expected: layer.inputs(),
                found: x.cols(),
            });
        }
        let mut z = x.matmul_transposed(&layer.weights);
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&layer.biases) {
                *v += b;
            }
        }
        let a = z.map(|v| layer.activation.apply(v));
        layer_inputs.push(x);
        pre_activations.push(z);
        x = a;
    }
    Ok((
        x,
        ForwardCache {
            layer_inputs,
            pre_activations,
        },
    ))
}

/// Logits only.
pub fn logits(net: &Network, inputs: &Matrix) -> Result<Matrix> {
    forward(net, inputs).map(|(l, _)| l)
}

/// Backpropagates `d_logits` (∂L/∂logits) through the cached forward pass.
pub fn backward(net: &Network, cache: &ForwardCache, d_logits: &Matrix) -> (Gradients, Matrix) {
    let mut grads = Vec::with_capacity(net.layers.len());
    let mut upstream = d_logits.clone();
    for (k, layer) in net.layers.iter().enumerate().rev() {
        let z = &cache.pre_activations[k];
        let mut dz = upstream;
        if layer.activation != Activation::Identity {
            for (d, &zv) in dz.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *d *= layer.activation.derivative(zv);
            }
        }
        let weights = dz.transposed_matmul(&cache.layer_inputs[k]);
        let biases = dz.column_sums();
        upstream = dz.matmul(&layer.weights);
        grads.push(LayerGrad { weights, biases });
    }
    grads.reverse();
    (Gradients { layers: grads }, upstream)
}

/// Numerically stable per-row softmax.
pub fn softmax(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Cross-entropy of each row against its label, via log-sum-exp.
pub fn cross_entropy_per_sample(logits: &Matrix, labels: &[usize]) -> Vec<f64> {
    (0..logits.rows())
        .map(|r| {
            let row = logits.row(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            lse - row[labels[r]]
        })
        .collect()
}

/// Mean softmax cross-entropy plus gradients w.r.t. parameters and inputs.
pub fn loss_and_grads(net: &Network, batch: &Batch) -> Result<LossGrads> {
    let (logits, cache) = forward(net, &batch.inputs)?;
    let per_sample = cross_entropy_per_sample(&logits, &batch.labels);
    if let Some(sample) = per_sample.iter().position(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLoss { sample });
    }
    let n = batch.len() as f64;
    let loss = per_sample.iter().sum::<f64>() / n;

    let mut d_logits = softmax(&logits);
    for (r, &y) in batch.labels.iter().enumerate() {
        d_logits[(r, y)] -= 1.0;
    }
    for v in d_logits.as_mut_slice() {
        *v /= n;
    }
    let (param_grads, input_grads) = backward(net, &cache, &d_logits);
    Ok(LossGrads {
        loss,
        param_grads,
        input_grads,
        logits,
    })
}

/// Logits of a single sample and the Jacobian `∂logits/∂x` (`classes × features`).
pub fn logit_jacobian(net: &Network, x: &[f64]) -> Result<(Vec<f64>, Matrix)> {
    let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
    let (logits, cache) = forward(net, &input)?;
    let classes = logits.cols();
    let mut jac = Matrix::zeros(classes, x.len());
    for c in 0..classes {
        let mut seed = Matrix::zeros(1, classes);
        seed[(0, c)] = 1.0;
        let (_, dx) = backward(net, &cache, &seed);
        jac.row_mut(c).copy_from_slice(dx.row(0));
    }
    Ok((logits.into_vec(), jac))
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict(net: &Network, inputs: &Matrix) -> Result<Vec<usize>> {
    let l = logits(net, inputs)?;
    Ok((0..l.rows()).map(|r| argmax(l.row(r))).collect())
}
