//! The local learner: a one-hidden-layer MLP classifier trained with plain
//! SGD on a proximal objective.
//!
//! Parameters live in a single flat vector so they can be clipped, noised,
//! and averaged coordinate-wise. The layout is fixed and checkpoint-portable:
//!
//! ```text
//! [ layer-1 weights, row-major (hidden x input)
//! | layer-1 biases            (hidden)
//! | layer-2 weights, row-major (output x hidden)
//! | layer-2 biases            (output) ]
//! ```
//!
//! The forward pass is `softmax(W2 relu(W1 x + b1) + b2)` with mean
//! cross-entropy over the batch. Local training minimizes
//! `h(x) = l(x) + mu/2 ||x - anchor||^2` and reports the achieved
//! inexactness ratio `||grad h(final)|| / ||grad h(anchor)||`.

use crate::error::{Error, Result};
use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Layer sizes of the MLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

impl Dims {
    /// The 784-input, 10-class layout used for digit images.
    pub fn mlp(hidden: usize) -> Self {
        Self {
            input: 784,
            hidden,
            output: 10,
        }
    }

    /// Total number of parameters.
    pub fn param_count(&self) -> usize {
        self.input * self.hidden + self.hidden + self.hidden * self.output + self.output
    }
}

/// All model parameters flattened into one vector (see module docs for the
/// exact ordering). Value-semantic; freely sendable between workers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub dims: Dims,
}

impl ParamVector {
    pub fn zeros(dims: Dims) -> Self {
        Self {
            values: vec![0.0; dims.param_count()],
            dims,
        }
    }

    /// Uniform init in `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]`
    /// per layer, biases zero.
    pub fn glorot(dims: Dims, seed: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        Self::glorot_from_rng(dims, &mut rng)
    }

    pub fn glorot_from_rng(dims: Dims, rng: &mut impl Rng) -> Self {
        let mut p = Self::zeros(dims);
        let lim1 = (6.0 / (dims.input + dims.hidden) as f64).sqrt();
        let lim2 = (6.0 / (dims.hidden + dims.output) as f64).sqrt();
        let (w1_len, w2_start, w2_len) = (
            dims.input * dims.hidden,
            dims.input * dims.hidden + dims.hidden,
            dims.hidden * dims.output,
        );
        for v in &mut p.values[..w1_len] {
            *v = rng.gen_range(-lim1..=lim1);
        }
        for v in &mut p.values[w2_start..w2_start + w2_len] {
            *v = rng.gen_range(-lim2..=lim2);
        }
        p
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let d = &self.dims;
        let b1 = d.input * d.hidden;
        let w2 = b1 + d.hidden;
        let b2 = w2 + d.hidden * d.output;
        (b1, w2, b2)
    }

    pub fn w1(&self) -> ArrayView2<'_, f64> {
        let (b1, _, _) = self.offsets();
        ArrayView2::from_shape((self.dims.hidden, self.dims.input), &self.values[..b1])
            .expect("w1 layout")
    }

    pub fn b1(&self) -> ArrayView1<'_, f64> {
        let (b1, w2, _) = self.offsets();
        ArrayView1::from(&self.values[b1..w2])
    }

    pub fn w2(&self) -> ArrayView2<'_, f64> {
        let (_, w2, b2) = self.offsets();
        ArrayView2::from_shape((self.dims.output, self.dims.hidden), &self.values[w2..b2])
            .expect("w2 layout")
    }

    pub fn b2(&self) -> ArrayView1<'_, f64> {
        let (_, _, b2) = self.offsets();
        ArrayView1::from(&self.values[b2..])
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &ParamVector) {
        debug_assert_eq!(self.values.len(), other.values.len());
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    fn check_dims(&self, other: &ParamVector, what: &'static str) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.dims.param_count(),
                actual: other.dims.param_count(),
            });
        }
        Ok(())
    }
}

/// A set of samples: one 784-pixel row per image, intensities in [0, 1].
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Array2<f64>,
    pub labels: Vec<u8>,
}

impl Batch {
    pub fn new(images: Array2<f64>, labels: Vec<u8>) -> Result<Self> {
        if images.nrows() != labels.len() || labels.is_empty() {
            return Err(Error::DimensionMismatch {
                what: "batch rows vs labels",
                expected: images.nrows(),
                actual: labels.len(),
            });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gather a sub-batch by sample indices.
    pub fn select(&self, indices: &[usize]) -> Batch {
        Batch {
            images: self.images.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn check_batch(params: &ParamVector, batch: &Batch) -> Result<()> {
    if batch.images.ncols() != params.dims.input {
        return Err(Error::DimensionMismatch {
            what: "batch feature width",
            expected: params.dims.input,
            actual: batch.images.ncols(),
        });
    }
    if batch.is_empty() {
        return Err(Error::InvalidParameter {
            name: "batch",
            message: "batch is empty".into(),
        });
    }
    Ok(())
}

struct ForwardPass {
    z1: Array2<f64>,
    a1: Array2<f64>,
    logits: Array2<f64>,
    loss: f64,
    correct: usize,
}

fn forward(params: &ParamVector, batch: &Batch) -> ForwardPass {
    let mut z1 = batch.images.dot(&params.w1().t());
    z1 += &params.b1();
    let a1 = z1.mapv(|v| v.max(0.0));
    let mut logits = a1.dot(&params.w2().t());
    logits += &params.b2();

    let mut loss = 0.0;
    let mut correct = 0;
    for (row, &label) in logits.outer_iter().zip(&batch.labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let log_sum = row.fold(0.0, |s, &v| s + (v - max).exp()).ln() + max;
        loss += log_sum - row[label as usize];
        let argmax = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(i, _)| i)
            .unwrap_or(0);
        if argmax == label as usize {
            correct += 1;
        }
    }
    loss /= batch.len() as f64;
    ForwardPass {
        z1,
        a1,
        logits,
        loss,
        correct,
    }
}

/// Mean cross-entropy of the softmax outputs over the batch.
pub fn forward_loss(params: &ParamVector, batch: &Batch) -> Result<f64> {
    check_batch(params, batch)?;
    Ok(forward(params, batch).loss)
}

/// Mean cross-entropy and top-1 accuracy over the batch.
pub fn evaluate(params: &ParamVector, batch: &Batch) -> Result<(f64, f64)> {
    check_batch(params, batch)?;
    let pass = forward(params, batch);
    Ok((pass.loss, pass.correct as f64 / batch.len() as f64))
}

/// Exact backpropagation gradient of [`forward_loss`], together with the
/// loss from the same pass.
pub fn gradient_with_loss(params: &ParamVector, batch: &Batch) -> Result<(ParamVector, f64)> {
    check_batch(params, batch)?;
    let pass = forward(params, batch);
    let n = batch.len() as f64;

    // dz2 = (softmax(logits) - onehot) / n
    let mut dz2 = pass.logits;
    for (mut row, &label) in dz2.outer_iter_mut().zip(&batch.labels) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        for v in row.iter_mut() {
            *v = (*v - max).exp() / sum;
        }
        row[label as usize] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }

    let dw2 = dz2.t().dot(&pass.a1);
    let db2 = dz2.sum_axis(Axis(0));
    let da1 = dz2.dot(&params.w2());
    let mut dz1 = da1;
    dz1.zip_mut_with(&pass.z1, |g, &z| {
        if z <= 0.0 {
            *g = 0.0;
        }
    });
    let dw1 = dz1.t().dot(&batch.images);
    let db1 = dz1.sum_axis(Axis(0));

    let mut grad = ParamVector::zeros(params.dims);
    let (b1_off, w2_off, b2_off) = params.offsets();
    grad.values[..b1_off].copy_from_slice(dw1.as_standard_layout().as_slice().unwrap());
    grad.values[b1_off..w2_off].copy_from_slice(db1.as_slice().unwrap());
    grad.values[w2_off..b2_off].copy_from_slice(dw2.as_standard_layout().as_slice().unwrap());
    grad.values[b2_off..].copy_from_slice(db2.as_slice().unwrap());
    Ok((grad, pass.loss))
}

/// Exact backpropagation gradient of [`forward_loss`].
pub fn gradient(params: &ParamVector, batch: &Batch) -> Result<ParamVector> {
    gradient_with_loss(params, batch).map(|(g, _)| g)
}

/// Gradient of the proximal objective `l(x) + mu/2 ||x - anchor||^2`.
pub fn prox_gradient(
    params: &ParamVector,
    batch: &Batch,
    anchor: &ParamVector,
    mu: f64,
) -> Result<ParamVector> {
    params.check_dims(anchor, "prox anchor")?;
    let mut g = gradient(params, batch)?;
    if mu != 0.0 {
        for ((g, p), a) in g.values.iter_mut().zip(&params.values).zip(&anchor.values) {
            *g += mu * (p - a);
        }
    }
    Ok(g)
}

fn prox_grad_norm(
    params: &ParamVector,
    batch: &Batch,
    anchor: &ParamVector,
    mu: f64,
) -> Result<f64> {
    Ok(prox_gradient(params, batch, anchor, mu)?.norm())
}

/// Mini-batch SGD on the proximal objective. Runs `epochs` passes over
/// `data` (shuffled per epoch when `batch_size` is below the dataset size)
/// and returns the final parameters together with the achieved inexactness
/// `||grad h(final)|| / ||grad h(anchor)||` measured on the full dataset.
/// The ratio can exceed 1 when training moved away from the solution.
#[allow(clippy::too_many_arguments)]
pub fn local_train(
    start: &ParamVector,
    data: &Batch,
    anchor: &ParamVector,
    mu: f64,
    lr: f64,
    epochs: u32,
    batch_size: Option<usize>,
    seed: u64,
) -> Result<(ParamVector, f64)> {
    check_batch(start, data)?;
    start.check_dims(anchor, "train anchor")?;
    if !(lr >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "lr",
            message: format!("must be nonnegative, got {lr}"),
        });
    }

    let m = data.len();
    let bs = batch_size.unwrap_or(m).clamp(1, m);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..m).collect();
    let mut current = start.clone();

    for epoch in 0..epochs {
        if bs < m {
            // Fisher-Yates, driven by the caller's seed for reproducibility
            for i in (1..m).rev() {
                order.swap(i, rng.gen_range(0..=i));
            }
        }
        for chunk in order.chunks(bs) {
            let minibatch = if chunk.len() == m {
                None
            } else {
                Some(data.select(chunk))
            };
            let view = minibatch.as_ref().unwrap_or(data);
            let g = prox_gradient(&current, view, anchor, mu)?;
            current.axpy(-lr, &g);
        }
        if !current.is_finite() {
            return Err(Error::Divergence {
                round: None,
                epoch: epoch as usize,
            });
        }
    }

    let numer = prox_grad_norm(&current, data, anchor, mu)?;
    let denom = prox_grad_norm(anchor, data, anchor, mu)?;
    let gamma = if denom == 0.0 {
        if numer == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        numer / denom
    };
    if !gamma.is_finite() && denom != 0.0 {
        return Err(Error::Divergence {
            round: None,
            epoch: epochs.saturating_sub(1) as usize,
        });
    }
    Ok((current, gamma))
}

/// Scale `params` down to Euclidean norm `bound` if it exceeds it.
pub fn clip(params: &ParamVector, bound: f64) -> ParamVector {
    let mut out = params.clone();
    clip_in_place(&mut out, bound);
    out
}

pub fn clip_in_place(params: &mut ParamVector, bound: f64) {
    let norm = params.norm();
    // the relative slack keeps re-clipping an already-clipped vector a no-op
    // (rescaling can overshoot the bound by an ulp)
    if norm > bound * (1.0 + 1e-12) {
        let scale = bound / norm;
        for v in &mut params.values {
            *v *= scale;
        }
    }
}
