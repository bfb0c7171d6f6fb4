//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::f64::consts::PI;

use accelat_core::matrix::Matrix;
use accelat_core::nn::{loss_and_grads, Activation, Batch, DenseLayer, Network};
use rand::Rng;

/// Plain transliteration of the controller loop: returns the lr after each epoch.
pub fn reference_accelat(
    lr_max: f64,
    lr_min: f64,
    delta_acc: f64,
    p: f64,
    n: usize,
    accs: &[f64],
) -> Vec<f64> {
    let mut lr = lr_max;
    let mut acc_pre = 0.0;
    let mut out = Vec::new();
    for e in 1..=accs.len() {
        if e >= n {
            let window = &accs[e - n..e];
            let mut sum = 0.0;
            for a in window {
                sum += a;
            }
            let mean = sum / n as f64;
            if mean - acc_pre < delta_acc {
                lr *= p;
            }
            if lr < lr_min {
                lr = lr_min;
            }
            acc_pre = mean;
        }
        out.push(lr);
    }
    out
}

/// Accuracy trace with +1.01% per epoch except flat epochs 41 and 70,
/// each followed by a catch-up epoch of +2.02%.
pub fn worked_trace() -> Vec<f64> {
    let mut a = vec![0.0];
    for e in 2..=100 {
        let d = match e {
            41 | 70 => 0.0,
            42 | 71 => 0.0202,
            _ => 0.0101,
        };
        let prev = *a.last().unwrap();
        a.push(prev + d);
    }
    a
}

pub mod sched {
    use super::PI;

    fn lin(a: f64, b: f64, f: f64) -> f64 {
        a + (b - a) * f
    }

    pub fn three_step(t: f64, lr: f64, b1: f64, b2: f64, factor: f64) -> f64 {
        if t < b1 {
            lr
        } else if t < b2 {
            lr * factor
        } else {
            lr * factor * factor
        }
    }

    pub fn linear(t: f64, total: f64, hi: f64, lo: f64) -> f64 {
        hi - (hi - lo) * t / total
    }

    pub fn exponential(t: f64, total: f64, hi: f64, lo: f64) -> f64 {
        hi * (lo / hi).powf(t / total)
    }

    /// (lr, momentum)
    pub fn one_cycle(t: f64, total: f64, lr: f64) -> (f64, f64) {
        let (a, b) = (0.45 * total, 0.9 * total);
        if t <= a {
            let f = t / a;
            (lin(lr / 10.0, lr, f), lin(0.95, 0.85, f))
        } else if t <= b {
            let f = (t - a) / (b - a);
            (lin(lr, lr / 10.0, f), lin(0.85, 0.95, f))
        } else {
            let f = (t - b) / (total - b);
            (lin(lr / 10.0, lr / 1000.0, f), 0.95)
        }
    }

    pub fn triangular(t: f64, lo: f64, hi: f64, s: f64) -> f64 {
        let cycle = (1.0 + t / (2.0 * s)).floor();
        let x = (t / s - 2.0 * cycle + 1.0).abs();
        lo + (hi - lo) * (1.0 - x).max(0.0)
    }

    pub fn decreasing_max(t: f64, lo: f64, hi: f64, s: f64, gamma: f64) -> f64 {
        let cycle = (1.0 + t / (2.0 * s)).floor();
        let x = (t / s - 2.0 * cycle + 1.0).abs();
        let peak = lo + (hi - lo) * gamma.powf(cycle - 1.0);
        lo + (peak - lo) * (1.0 - x).max(0.0)
    }

    pub fn cosine_restarts(t: f64, hi: f64, lo: f64, t0: f64, mult: f64) -> f64 {
        let mut start = 0.0;
        let mut len = t0;
        while t >= start + len {
            start += len;
            len *= mult;
        }
        lo + 0.5 * (hi - lo) * (1.0 + (PI * (t - start) / len).cos())
    }

    pub fn linear_restarts(t: f64, hi: f64, lo: f64, period: f64, decay: f64) -> f64 {
        let run = (t / period).floor();
        let peak = (hi * decay.powf(run)).max(lo);
        let t_cur = t - run * period;
        peak - (peak - lo) * t_cur / period
    }
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

pub fn random_net<R: Rng>(rng: &mut R, widths: &[usize]) -> Network {
    let mut layers = Vec::new();
    for (k, w) in widths.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let biases = (0..fan_out).map(|_| rng.random_range(-0.5..0.5)).collect();
        let act = if k + 2 == widths.len() {
            Activation::Identity
        } else {
            Activation::Relu
        };
        layers.push(DenseLayer::new(Matrix::from_vec(fan_out, fan_in, data).unwrap(), biases, act).unwrap());
    }
    Network::new(layers).unwrap()
}

pub fn random_batch<R: Rng>(rng: &mut R, n: usize, features: usize, classes: usize) -> Batch {
    let data = (0..n * features).map(|_| rng.random_range(0.0..1.0)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..classes)).collect();
    Batch::new(Matrix::from_vec(n, features, data).unwrap(), labels, classes).unwrap()
}

fn loss(net: &Network, batch: &Batch) -> f64 {
    loss_and_grads(net, batch).unwrap().loss
}

/// Max relative error between analytic and central-difference gradients
/// over every parameter and input coordinate.
pub fn gradient_check(net: &Network, batch: &Batch, h: f64) -> f64 {
    let analytic = loss_and_grads(net, batch).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for l in 0..net.layers().len() {
        let (rows, cols) = net.layers()[l].weights.shape();
        for i in 0..rows {
            for j in 0..cols {
                let w = net.layers()[l].weights[(i, j)];
                probe.layers_mut()[l].weights[(i, j)] = w + h;
                let up = loss(&probe, batch);
                probe.layers_mut()[l].weights[(i, j)] = w - h;
                let down = loss(&probe, batch);
                probe.layers_mut()[l].weights[(i, j)] = w;
                let num = (up - down) / (2.0 * h);
                worst = worst.max(rel_err(analytic.param_grads.layers[l].weights[(i, j)], num));
            }
            let b = net.layers()[l].biases[i];
            probe.layers_mut()[l].biases[i] = b + h;
            let up = loss(&probe, batch);
            probe.layers_mut()[l].biases[i] = b - h;
            let down = loss(&probe, batch);
            probe.layers_mut()[l].biases[i] = b;
            let num = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic.param_grads.layers[l].biases[i], num));
        }
    }
    // input gradient is of the mean loss over the batch
    let mut xb = batch.clone();
    for r in 0..batch.len() {
        for c in 0..batch.inputs.cols() {
            let x = batch.inputs[(r, c)];
            xb.inputs[(r, c)] = x + h;
            let up = loss(net, &xb);
            xb.inputs[(r, c)] = x - h;
            let down = loss(net, &xb);
            xb.inputs[(r, c)] = x;
            let num = (up - down) / (2.0 * h);
            worst = worst.max(rel_err(analytic.input_grads[(r, c)], num));
        }
    }
    worst
}

/// Single affine layer `logits = W x + b`.
pub fn linear_net(w: &[&[f64]], b: &[f64]) -> Network {
    let rows: Vec<Vec<f64>> = w.iter().map(|r| r.to_vec()).collect();
    Network::new(vec![DenseLayer::new(Matrix::from_rows(&rows).unwrap(), b.to_vec(), Activation::Identity).unwrap()])
        .unwrap()
}

fn be32(v: u32) -> [u8; 4] {
    [(v >> 24) as u8, (v >> 16) as u8, (v >> 8) as u8, v as u8]
}

/// Byte-level IDX image writer.
pub fn idx_images(pixels: &[u8], n: u32, rows: u32, cols: u32) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, 0x03];
    out.extend(be32(n));
    out.extend(be32(rows));
    out.extend(be32(cols));
    out.extend(pixels);
    out
}

pub fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = vec![0, 0, 0x08, 0x01];
    out.extend(be32(labels.len() as u32));
    out.extend(labels);
    out
}

/// One CIFAR record: optional coarse byte, label byte, 3072 pixel bytes.
pub fn cifar_record(coarse: Option<u8>, label: u8, pixels: &[u8; 3072]) -> Vec<u8> {
    let mut out = Vec::with_capacity(3074);
    if let Some(c) = coarse {
        out.push(c);
    }
    out.push(label);
    out.extend_from_slice(pixels);
    out
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
