//! Fully-connected sigmoid autoencoder trained on mean squared
//! reconstruction error.
//!
//! Encoder: `z = σ(W_e x + b_e)` through any hidden layers down to the
//! latent width `m < n`; decoder mirrors it back to `x̂ = σ(W_d z + b_d)`.
//! Every layer, including the last decoder layer, is sigmoid-activated, so
//! reconstructions lie in `(0, 1)`.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::FeatureMatrix;
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
}

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// `outputs x inputs` weights, row-major, plus a bias per output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<T> {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        DenseLayer {
            inputs,
            outputs,
            weights: vec![T::zero(); inputs * outputs],
            bias: vec![T::zero(); outputs],
        }
    }

    fn forward_into(&self, x: &[T], out: &mut Vec<T>) {
        out.clear();
        for (o, w) in self.weights.chunks(self.inputs).enumerate() {
            let pre: T = w.iter().zip(x).map(|(a, b)| *a * *b).sum::<T>() + self.bias[o];
            out.push(sigmoid(pre));
        }
    }

    fn params(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel<T> {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub activation: Activation,
    pub encoder: Vec<DenseLayer<T>>,
    pub decoder: Vec<DenseLayer<T>>,
}

/// Result of a forward pass on one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward<T> {
    pub latent: Vec<T>,
    pub reconstruction: Vec<T>,
}

/// Parameter-shaped gradient (or any other per-parameter quantity); layers
/// in encoder-then-decoder order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<DenseLayer<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(model: &AutoencoderModel<T>) -> Self {
        Gradients {
            layers: model.layers().map(|l| DenseLayer::zeros(l.inputs, l.outputs)).collect(),
        }
    }

    pub fn flatten(&self) -> Vec<T> {
        self.layers.iter().flat_map(|l| l.params().copied()).collect()
    }

    fn scale(&mut self, s: T) {
        for l in &mut self.layers {
            l.params_mut().for_each(|v| *v *= s);
        }
    }
}

impl<T: Scalar> AutoencoderModel<T> {
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer<T>> {
        self.encoder.iter().chain(self.decoder.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer<T>> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    pub fn n_params(&self) -> usize {
        self.layers().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters flattened in layer order (weights then bias).
    pub fn flatten(&self) -> Vec<T> {
        self.layers().flat_map(|l| l.params().copied()).collect()
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.n_params() {
            return Err(Error::Dimension { expected: self.n_params(), found: values.len() });
        }
        let mut it = values.iter();
        for l in self.layers_mut() {
            for p in l.params_mut() {
                *p = *it.next().expect("length checked");
            }
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if self.latent_dim >= self.input_dim {
            return Err(Error::InvalidArgument(format!(
                "latent width {} must be below input width {}",
                self.latent_dim, self.input_dim
            )));
        }
        let mut width = self.input_dim;
        for l in self.layers() {
            if l.inputs != width || l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::InvalidArgument("layer shapes do not chain".into()));
            }
            width = l.outputs;
        }
        let latent = self.encoder.last().map(|l| l.outputs);
        if latent != Some(self.latent_dim) || width != self.input_dim {
            return Err(Error::InvalidArgument("layer shapes do not chain".into()));
        }
        if self.layers().flat_map(|l| l.params()).any(|p| !p.is_finite()) {
            return Err(Error::Numeric("non-finite model parameter".into()));
        }
        Ok(())
    }

    /// Outputs of every layer; `acts[0]` is the input itself.
    fn activations(&self, x: &[T]) -> Vec<Vec<T>> {
        let mut acts = Vec::with_capacity(self.encoder.len() + self.decoder.len() + 1);
        acts.push(x.to_vec());
        for l in self.layers() {
            let mut out = Vec::with_capacity(l.outputs);
            l.forward_into(acts.last().expect("input present"), &mut out);
            acts.push(out);
        }
        acts
    }

    fn check_width(&self, found: usize) -> Result<()> {
        if found != self.input_dim {
            return Err(Error::Dimension { expected: self.input_dim, found });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[T]) -> Result<Forward<T>> {
        self.check_width(x.len())?;
        let mut acts = self.activations(x);
        let reconstruction = acts.pop().expect("output layer");
        let latent = acts.swap_remove(self.encoder.len());
        Ok(Forward { latent, reconstruction })
    }

    pub fn reconstruct(&self, x: &[T]) -> Result<Vec<T>> {
        self.forward(x).map(|f| f.reconstruction)
    }

    /// Adds the gradient of one row's loss, scaled by `weight`, into `acc`.
    /// Returns the row loss.
    fn accumulate_row(&self, x: &[T], weight: T, acc: &mut Gradients<T>) -> T {
        let acts = self.activations(x);
        let out = acts.last().expect("output layer");
        let n = T::of_usize(self.input_dim);
        let two = T::of(2.0);
        let mut loss = T::zero();
        // dL/d(pre-activation) of the output layer
        let mut delta: Vec<T> = out
            .iter()
            .zip(x)
            .map(|(y, t)| {
                let d = *y - *t;
                loss += d * d;
                two * d / n * *y * (T::one() - *y)
            })
            .collect();
        let layers: Vec<&DenseLayer<T>> = self.layers().collect();
        for li in (0..layers.len()).rev() {
            let layer = layers[li];
            let input = &acts[li];
            let g = &mut acc.layers[li];
            for (o, d) in delta.iter().enumerate() {
                let wd = *d * weight;
                g.bias[o] += wd;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, a) in row.iter_mut().zip(input) {
                    *gw += wd * *a;
                }
            }
            if li > 0 {
                let mut prev = vec![T::zero(); layer.inputs];
                for (o, d) in delta.iter().enumerate() {
                    let w = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    for (p, wv) in prev.iter_mut().zip(w) {
                        *p += *wv * *d;
                    }
                }
                for (p, a) in prev.iter_mut().zip(input) {
                    *p *= *a * (T::one() - *a);
                }
                delta = prev;
            }
        }
        loss / n
    }

    /// Mean reconstruction loss over `rows` and its gradient.
    pub fn loss_and_gradients(&self, rows: &[&[T]]) -> Result<(T, Gradients<T>)> {
        if rows.is_empty() {
            return Err(Error::InvalidArgument("gradient of an empty batch".into()));
        }
        let mut acc = Gradients::zeros_like(self);
        let mut total = T::zero();
        for r in rows {
            self.check_width(r.len())?;
            total += self.accumulate_row(r, T::one(), &mut acc);
        }
        let inv = T::one() / T::of_usize(rows.len());
        acc.scale(inv);
        Ok((total * inv, acc))
    }

    pub fn gradients(&self, rows: &[&[T]]) -> Result<Gradients<T>> {
        self.loss_and_gradients(rows).map(|(_, g)| g)
    }

    /// Mean loss over the rows, without gradients.
    pub fn mean_loss(&self, rows: &[&[T]]) -> Result<T> {
        let mut total = T::zero();
        for r in rows {
            let xh = self.reconstruct(r)?;
            total += reconstruction_loss(r, &xh)?;
        }
        Ok(total / T::of_usize(rows.len().max(1)))
    }

    /// Per-row reconstruction error, in row order.
    pub fn reconstruction_errors(&self, data: &FeatureMatrix<T>) -> Result<Vec<T>> {
        self.check_width(data.n_cols())?;
        data.rows_iter()
            .map(|r| reconstruction_loss(r, &self.reconstruct(r)?))
            .collect()
    }
}

/// Mean squared error `(1/n) Σ (x_i - x̂_i)^2`.
pub fn reconstruction_loss<T: Scalar>(x: &[T], x_hat: &[T]) -> Result<T> {
    if x.len() != x_hat.len() {
        return Err(Error::Dimension { expected: x.len(), found: x_hat.len() });
    }
    if x.is_empty() {
        return Ok(T::zero());
    }
    let s: T = x.iter().zip(x_hat).map(|(a, b)| (*a - *b) * (*a - *b)).sum();
    Ok(s / T::of_usize(x.len()))
}

/// Builds an `n -> hidden.. -> m -> reversed hidden.. -> n` network with
/// weights uniform in `±sqrt(3 / fan_in)` and zero biases.
pub fn init_model<T: Scalar>(
    n: usize,
    hidden_widths: &[usize],
    m: usize,
    seed: u64,
) -> Result<AutoencoderModel<T>> {
    if m == 0 || m >= n {
        return Err(Error::InvalidArgument(format!(
            "latent width {m} must satisfy 0 < m < n = {n}"
        )));
    }
    if hidden_widths.contains(&0) {
        return Err(Error::InvalidArgument("hidden widths must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut make = |inputs: usize, outputs: usize| {
        let a = (3.0 / inputs as f64).sqrt();
        DenseLayer {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| T::of(rng.gen_range(-a..a))).collect(),
            bias: vec![T::zero(); outputs],
        }
    };
    let mut widths = vec![n];
    widths.extend_from_slice(hidden_widths);
    widths.push(m);
    let encoder: Vec<_> = widths.windows(2).map(|w| make(w[0], w[1])).collect();
    let back: Vec<usize> = widths.iter().rev().copied().collect();
    let decoder: Vec<_> = back.windows(2).map(|w| make(w[0], w[1])).collect();
    Ok(AutoencoderModel { input_dim: n, latent_dim: m, activation: Activation::Sigmoid, encoder, decoder })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
    pub hidden_widths: Vec<usize>,
    pub latent_dim: usize,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
            optimizer: Optimizer::default(),
            hidden_widths: vec![32],
            latent_dim: 16,
            validation_fraction: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidArgument("validation_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochLoss>,
}

impl TrainTrace {
    /// `epoch,train_loss,val_loss`; missing validation loss is left empty.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for e in &self.epochs {
            let val = e.val_loss.map(|v| v.to_string()).unwrap_or_default();
            let _ = writeln!(s, "{},{},{}", e.epoch, e.train_loss, val);
        }
        s
    }
}

struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

/// Mini-batch training on every row of `data`, minus a held-out
/// `validation_fraction` used only for the validation loss. Callers pass
/// normal-traffic rows only.
pub fn train<T: Scalar>(
    model: &AutoencoderModel<T>,
    data: &FeatureMatrix<T>,
    cfg: &TrainConfig,
) -> Result<(AutoencoderModel<T>, TrainTrace)> {
    cfg.validate()?;
    model.check()?;
    model.check_width(data.n_cols())?;
    if data.n_rows() == 0 {
        return Err(Error::InvalidArgument("no training rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    order.shuffle(&mut rng);
    let n_val = if data.n_rows() >= 2 {
        ((cfg.validation_fraction * data.n_rows() as f64).round() as usize).min(data.n_rows() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_rows: Vec<&[T]> = val_idx.iter().map(|&i| data.row(i)).collect();
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();

    let mut model = model.clone();
    let n_params = model.n_params();
    let mut adam = AdamState { m: vec![T::zero(); n_params], v: vec![T::zero(); n_params], t: 0 };
    let lr = T::of(cfg.learning_rate);
    let mut trace = TrainTrace::default();

    for epoch in 1..=cfg.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(cfg.batch_size) {
            let rows: Vec<&[T]> = batch.iter().map(|&i| data.row(i)).collect();
            let (loss, grads) = model.loss_and_gradients(&rows)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("loss became non-finite in epoch {epoch}")));
            }
            let g = grads.flatten();
            let mut params = model.flatten();
            match cfg.optimizer {
                Optimizer::Sgd => {
                    for (p, gi) in params.iter_mut().zip(&g) {
                        *p -= lr * *gi;
                    }
                }
                Optimizer::Adam { beta1, beta2, epsilon } => {
                    adam.t += 1;
                    let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(epsilon));
                    let c1 = T::one() - b1.powi(adam.t);
                    let c2 = T::one() - b2.powi(adam.t);
                    for (k, (p, gi)) in params.iter_mut().zip(&g).enumerate() {
                        adam.m[k] = b1 * adam.m[k] + (T::one() - b1) * *gi;
                        adam.v[k] = b2 * adam.v[k] + (T::one() - b2) * *gi * *gi;
                        let mh = adam.m[k] / c1;
                        let vh = adam.v[k] / c2;
                        *p -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
            model.set_flat(&params)?;
        }
        let train_rows: Vec<&[T]> = train_idx.iter().map(|&i| data.row(i)).collect();
        let train_loss = model.mean_loss(&train_rows)?.as_f64();
        let val_loss = if val_rows.is_empty() {
            None
        } else {
            Some(model.mean_loss(&val_rows)?.as_f64())
        };
        if !train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("loss became non-finite in epoch {epoch}")));
        }
        log::debug!("epoch {epoch}: train {train_loss:.6e} val {val_loss:?}");
        trace.epochs.push(EpochLoss { epoch, train_loss, val_loss });
    }
    Ok((model, trace))
}

/// Largest relative difference between the analytic gradient and central
/// finite differences of the batch loss, over every parameter. The
/// denominator is `max(|analytic|, |numeric|, 1e-6)` so that parameters with
/// a vanishing gradient are compared absolutely.
pub fn gradient_check(model: &AutoencoderModel<f64>, rows: &[&[f64]], eps: f64) -> Result<f64> {
    let analytic = model.gradients(rows)?.flatten();
    let base = model.flatten();
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    for (i, a) in analytic.iter().enumerate() {
        let mut shifted = base.clone();
        shifted[i] = base[i] + eps;
        probe.set_flat(&shifted)?;
        let up = probe.mean_loss(rows)?;
        shifted[i] = base[i] - eps;
        probe.set_flat(&shifted)?;
        let down = probe.mean_loss(rows)?;
        let numeric = (up - down) / (2.0 * eps);
        let denom = a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
