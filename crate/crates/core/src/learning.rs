//! A one-hidden-layer binary classifier trained from scratch: forward and
//! backward passes, Adam local training, weighted averaging of client
//! updates, and evaluation.
//!
//! Inputs are the image's pixels scaled to `[0, 1]`. The network is
//! `sigmoid(w2 . relu(W1 x + b1) + b2)` with binary cross-entropy loss.
//! Parameters are stored flat as `W1` (row-major, `hidden x input`), `b1`,
//! `w2`, `b2`.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::LabeledSample;
use crate::error::{Error, Result};
use crate::seed;

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            input_dim: 32 * 32,
            hidden_dim: 64,
            learning_rate: 1e-2,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::invariant(
                "model dimensions and batch size must be positive",
            ));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invariant("learning_rate must be finite and >= 0"));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::invariant("Adam betas must be in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invariant("Adam epsilon must be positive"));
        }
        Ok(())
    }

    /// Total number of trainable parameters.
    pub fn param_count(&self) -> usize {
        self.hidden_dim * self.input_dim + 2 * self.hidden_dim + 1
    }

    fn b1_offset(&self) -> usize {
        self.hidden_dim * self.input_dim
    }

    fn w2_offset(&self) -> usize {
        self.b1_offset() + self.hidden_dim
    }

    fn b2_offset(&self) -> usize {
        self.w2_offset() + self.hidden_dim
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invariant(format!("parameter {i} is not finite")));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            values: vec![0.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Glorot-uniform weights, zero biases.
pub fn model_init(spec: &ModelSpec, rng_seed: u64) -> ParamVector {
    let mut rng = seed::rng(rng_seed, seed::purpose::MODEL_INIT, &[]);
    let mut values = vec![0.0; spec.param_count()];
    let bound1 = (6.0 / (spec.input_dim + spec.hidden_dim) as f64).sqrt();
    for v in &mut values[..spec.b1_offset()] {
        *v = rng.gen_range(-bound1..=bound1);
    }
    let bound2 = (6.0 / (spec.hidden_dim + 1) as f64).sqrt();
    for v in &mut values[spec.w2_offset()..spec.b2_offset()] {
        *v = rng.gen_range(-bound2..=bound2);
    }
    ParamVector { values }
}

fn check_params(params: &ParamVector, spec: &ModelSpec) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(Error::LengthMismatch {
            expected: spec.param_count(),
            got: params.len(),
        });
    }
    Ok(())
}

/// Row-major `rows x input_dim` matrix of inputs scaled to `[0, 1]`.
fn input_matrix(samples: &[LabeledSample], spec: &ModelSpec) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(samples.len() * spec.input_dim);
    for s in samples {
        let px = s.image.pixels();
        if px.len() != spec.input_dim {
            return Err(Error::LengthMismatch {
                expected: spec.input_dim,
                got: px.len(),
            });
        }
        x.extend(px.iter().map(|&v| v as f64 / 255.0 - 0.5));
    }
    Ok(x)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Pre-activations of the hidden layer and output logits for a batch.
struct Forward {
    z1: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(params: &ParamVector, spec: &ModelSpec, x: &[f64], rows: usize) -> Forward {
    let (n_in, n_h) = (spec.input_dim, spec.hidden_dim);
    let p = &params.values;
    let b1 = &p[spec.b1_offset()..spec.w2_offset()];
    let w2 = &p[spec.w2_offset()..spec.b2_offset()];
    let b2 = p[spec.b2_offset()];
    let mut z1 = Vec::with_capacity(rows * n_h);
    for _ in 0..rows {
        z1.extend_from_slice(b1);
    }
    // z1 (rows x h) += x (rows x in) * W1^T (in x h)
    unsafe {
        matrixmultiply::dgemm(
            rows,
            n_in,
            n_h,
            1.0,
            x.as_ptr(),
            n_in as isize,
            1,
            p.as_ptr(),
            1,
            n_in as isize,
            1.0,
            z1.as_mut_ptr(),
            n_h as isize,
            1,
        );
    }
    let logits = z1
        .chunks_exact(n_h)
        .map(|row| {
            b2 + row
                .iter()
                .zip(w2)
                .map(|(&z, &w)| z.max(0.0) * w)
                .sum::<f64>()
        })
        .collect();
    Forward { z1, logits }
}

/// Mean loss gradient over a batch.
fn batch_gradient(params: &ParamVector, spec: &ModelSpec, x: &[f64], y: &[f64]) -> Vec<f64> {
    let rows = y.len();
    let (n_in, n_h) = (spec.input_dim, spec.hidden_dim);
    let w2 = &params.values[spec.w2_offset()..spec.b2_offset()];
    let fwd = forward(params, spec, x, rows);
    let scale = 1.0 / rows as f64;
    let mut grad = vec![0.0; spec.param_count()];
    let mut dz1 = vec![0.0; rows * n_h];
    for r in 0..rows {
        let dlogit = (sigmoid(fwd.logits[r]) - y[r]) * scale;
        let z_row = &fwd.z1[r * n_h..(r + 1) * n_h];
        let dz_row = &mut dz1[r * n_h..(r + 1) * n_h];
        for j in 0..n_h {
            grad[spec.w2_offset() + j] += dlogit * z_row[j].max(0.0);
            if z_row[j] > 0.0 {
                dz_row[j] = dlogit * w2[j];
            }
        }
        grad[spec.b2_offset()] += dlogit;
    }
    for row in dz1.chunks_exact(n_h) {
        for (g, &d) in grad[spec.b1_offset()..spec.w2_offset()].iter_mut().zip(row) {
            *g += d;
        }
    }
    // dW1 (h x in) = dz1^T (h x rows) * x (rows x in)
    unsafe {
        matrixmultiply::dgemm(
            n_h,
            rows,
            n_in,
            1.0,
            dz1.as_ptr(),
            1,
            n_h as isize,
            x.as_ptr(),
            n_in as isize,
            1,
            0.0,
            grad.as_mut_ptr(),
            n_in as isize,
            1,
        );
    }
    grad
}

/// Model output probability for one sample.
pub fn predict(params: &ParamVector, sample: &LabeledSample, spec: &ModelSpec) -> Result<f64> {
    check_params(params, spec)?;
    let x = input_matrix(std::slice::from_ref(sample), spec)?;
    Ok(sigmoid(forward(params, spec, &x, 1).logits[0]))
}

/// Cross-entropy of one sample.
pub fn sample_loss(params: &ParamVector, sample: &LabeledSample, spec: &ModelSpec) -> Result<f64> {
    Ok(bce(predict(params, sample, spec)?, sample.label.target()))
}

/// Analytic gradient of `sample_loss` with respect to every parameter.
pub fn sample_gradient(
    params: &ParamVector,
    sample: &LabeledSample,
    spec: &ModelSpec,
) -> Result<Vec<f64>> {
    check_params(params, spec)?;
    let x = input_matrix(std::slice::from_ref(sample), spec)?;
    Ok(batch_gradient(params, spec, &x, &[sample.label.target()]))
}

/// Mean sample loss over a shard.
pub fn local_loss(params: &ParamVector, shard: &[LabeledSample], spec: &ModelSpec) -> Result<f64> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    Ok(evaluate(params, shard, spec)?.mean_loss)
}

/// `epochs` passes of minibatch Adam over `shard`, reshuffled every epoch
/// from `(rng_seed, epoch)`. The optimizer state starts fresh on each call.
pub fn local_train(
    params_in: &ParamVector,
    shard: &[LabeledSample],
    spec: &ModelSpec,
    epochs: usize,
    rng_seed: u64,
) -> Result<ParamVector> {
    if shard.is_empty() {
        return Err(Error::EmptyShard);
    }
    check_params(params_in, spec)?;
    let x_all = input_matrix(shard, spec)?;
    let y_all: Vec<f64> = shard.iter().map(|s| s.label.target()).collect();
    let n_in = spec.input_dim;

    let mut params = params_in.clone();
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut step = 0i32;
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut x = Vec::with_capacity(spec.batch_size * n_in);
    let mut y = Vec::with_capacity(spec.batch_size);

    for epoch in 0..epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(
            rng_seed,
            seed::purpose::TRAINING,
            &[epoch as u64],
        ));
        for (batch, idx) in order.chunks(spec.batch_size).enumerate() {
            x.clear();
            y.clear();
            for &i in idx {
                x.extend_from_slice(&x_all[i * n_in..(i + 1) * n_in]);
                y.push(y_all[i]);
            }
            let grad = batch_gradient(&params, spec, &x, &y);
            if grad.iter().any(|g| !g.is_finite()) {
                let max_abs = grad.iter().fold(0.0f64, |a, g| a.max(g.abs()));
                return Err(Error::NonFiniteGradient {
                    epoch,
                    batch,
                    max_abs,
                });
            }
            step += 1;
            let c1 = 1.0 - spec.beta1.powi(step);
            let c2 = 1.0 - spec.beta2.powi(step);
            for (((p, g), m), v) in params.values.iter_mut().zip(&grad).zip(&mut m).zip(&mut v) {
                *m = spec.beta1 * *m + (1.0 - spec.beta1) * g;
                *v = spec.beta2 * *v + (1.0 - spec.beta2) * g * g;
                *p -= spec.learning_rate * (*m / c1) / ((*v / c2).sqrt() + spec.epsilon);
            }
        }
    }
    Ok(params)
}

/// One client's contribution to a round.
#[derive(Clone, Debug)]
pub struct Update {
    pub uav_id: u32,
    pub params: ParamVector,
    pub shard_size: usize,
}

/// Shard-size-weighted mean of the updates.
///
/// Updates are ordered by `uav_id` and combined as
/// `p_first + sum_i w_i (p_i - p_first)`, which equals the weighted mean and
/// returns identical inputs (or a single update) exactly. The result does
/// not depend on the order of `updates`.
pub fn aggregate(updates: &[Update]) -> Result<ParamVector> {
    let mut sorted: Vec<&Update> = updates.iter().collect();
    sorted.sort_by_key(|u| u.uav_id);
    let first = *sorted.first().ok_or(Error::EmptyUpdateSet)?;
    if sorted.windows(2).any(|w| w[0].uav_id == w[1].uav_id) {
        return Err(Error::invariant("duplicate uav_id in update set"));
    }
    let len = first.params.len();
    let mut total = 0usize;
    for u in &sorted {
        if u.params.len() != len {
            return Err(Error::LengthMismatch {
                expected: len,
                got: u.params.len(),
            });
        }
        if u.shard_size == 0 {
            return Err(Error::invariant(format!(
                "UAV {} reported an empty shard",
                u.uav_id
            )));
        }
        total += u.shard_size;
    }
    let base = first.params.values();
    let mut acc = vec![0.0; len];
    for u in &sorted[1..] {
        let w = u.shard_size as f64 / total as f64;
        for ((a, &p), &b) in acc.iter_mut().zip(u.params.values()).zip(base) {
            *a += w * (p - b);
        }
    }
    ParamVector::new(base.iter().zip(&acc).map(|(&b, &a)| b + a).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub mean_loss: f64,
}

/// Accuracy (output >= 0.5 predicts `Fire`) and mean loss over a sample set.
pub fn evaluate(
    params: &ParamVector,
    test_set: &[LabeledSample],
    spec: &ModelSpec,
) -> Result<Evaluation> {
    if test_set.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    check_params(params, spec)?;
    const CHUNK: usize = 256;
    let mut correct = 0usize;
    let mut loss = 0.0;
    for chunk in test_set.chunks(CHUNK) {
        let x = input_matrix(chunk, spec)?;
        let fwd = forward(params, spec, &x, chunk.len());
        for (s, &z) in chunk.iter().zip(&fwd.logits) {
            let p = sigmoid(z);
            let y = s.label.target();
            if (p >= 0.5) == (y == 1.0) {
                correct += 1;
            }
            loss += bce(p, y);
        }
    }
    let n = test_set.len() as f64;
    Ok(Evaluation {
        accuracy: correct as f64 / n,
        mean_loss: loss / n,
    })
}
