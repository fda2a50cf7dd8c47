//! Regression head over frozen embeddings.
//!
//! A single hidden layer (32 units by default) followed by one linear output
//! unit, trained with Adam on mean squared error under a cosine-annealed
//! learning rate. Also home to the embedding fusion modes and the
//! categorical-expectation baseline, which need no training.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, Modality, ObjectRecord};
use crate::error::{Error, Result};
use crate::par::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - z.tanh().powi(2),
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }
}

impl FromStr for Activation {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(format!("unknown activation `{s}`")),
        }
    }
}

/// How image and text embeddings are combined before the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    ImageOnly,
    TextOnly,
    Add,
    Concat,
}

impl FusionMode {
    pub const ALL: [FusionMode; 4] = [
        FusionMode::ImageOnly,
        FusionMode::TextOnly,
        FusionMode::Add,
        FusionMode::Concat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FusionMode::ImageOnly => "image_only",
            FusionMode::TextOnly => "text_only",
            FusionMode::Add => "add",
            FusionMode::Concat => "concat",
        }
    }

    /// Head input width for encoders of the given output widths.
    pub fn input_dim(self, img_dim: usize, txt_dim: usize) -> Result<usize> {
        match self {
            FusionMode::ImageOnly => Ok(img_dim),
            FusionMode::TextOnly => Ok(txt_dim),
            FusionMode::Add if img_dim == txt_dim => Ok(img_dim),
            FusionMode::Add => Err(Error::DimensionMismatch {
                expected: img_dim,
                actual: txt_dim,
            }),
            FusionMode::Concat => Ok(img_dim + txt_dim),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "image_only" | "image" => Ok(FusionMode::ImageOnly),
            "text_only" | "text" => Ok(FusionMode::TextOnly),
            "add" => Ok(FusionMode::Add),
            "concat" => Ok(FusionMode::Concat),
            _ => Err(format!("unknown fusion mode `{s}`")),
        }
    }
}

/// Combines one image and one text embedding. For the single-modality modes
/// the other argument is ignored.
pub fn fuse(img: &[f64], txt: &[f64], mode: FusionMode) -> Result<Vec<f64>> {
    match mode {
        FusionMode::ImageOnly => Ok(img.to_vec()),
        FusionMode::TextOnly => Ok(txt.to_vec()),
        FusionMode::Add => {
            if img.len() != txt.len() {
                return Err(Error::DimensionMismatch {
                    expected: img.len(),
                    actual: txt.len(),
                });
            }
            Ok(img.iter().zip(txt).map(|(a, b)| a + b).collect())
        }
        FusionMode::Concat => Ok(img.iter().chain(txt).copied().collect()),
    }
}

/// Parameters of the head, stored flat as
/// `[w_hidden (row-major hidden x input), b_hidden, w_out, b_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    input_dim: usize,
    hidden: usize,
    pub activation: Activation,
    pub fusion: FusionMode,
    flat: Vec<f64>,
}

impl HeadParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        Self {
            input_dim,
            hidden,
            activation: Activation::Relu,
            fusion: FusionMode::ImageOnly,
            flat: vec![0.0; hidden * input_dim + 2 * hidden + 1],
        }
    }

    /// Uniform fan-in initialisation: `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` per layer.
    pub fn init(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let mut p = Self::zeros(input_dim, hidden);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b1 = 1.0 / (input_dim.max(1) as f64).sqrt();
        let b2 = 1.0 / (hidden.max(1) as f64).sqrt();
        let split = hidden * input_dim + hidden;
        for (i, v) in p.flat.iter_mut().enumerate() {
            let bound = if i < split { b1 } else { b2 };
            *v = rng.random_range(-bound..bound);
        }
        p
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_units(&self) -> usize {
        self.hidden
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.flat
    }

    pub fn w_hidden(&self) -> &[f64] {
        &self.flat[..self.hidden * self.input_dim]
    }

    pub fn w_hidden_mut(&mut self) -> &mut [f64] {
        let end = self.hidden * self.input_dim;
        &mut self.flat[..end]
    }

    pub fn b_hidden(&self) -> &[f64] {
        let s = self.hidden * self.input_dim;
        &self.flat[s..s + self.hidden]
    }

    pub fn b_hidden_mut(&mut self) -> &mut [f64] {
        let s = self.hidden * self.input_dim;
        let h = self.hidden;
        &mut self.flat[s..s + h]
    }

    pub fn w_out(&self) -> &[f64] {
        let s = self.hidden * self.input_dim + self.hidden;
        &self.flat[s..s + self.hidden]
    }

    pub fn w_out_mut(&mut self) -> &mut [f64] {
        let s = self.hidden * self.input_dim + self.hidden;
        let h = self.hidden;
        &mut self.flat[s..s + h]
    }

    pub fn b_out(&self) -> f64 {
        self.flat[self.flat.len() - 1]
    }

    pub fn set_b_out(&mut self, v: f64) {
        let last = self.flat.len() - 1;
        self.flat[last] = v;
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.input_dim {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.input_dim,
                actual: x.len(),
            })
        }
    }

    fn pre_activation(&self, unit: usize, x: &[f64]) -> f64 {
        let row = &self.w_hidden()[unit * self.input_dim..(unit + 1) * self.input_dim];
        row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.b_hidden()[unit]
    }

    fn forward_unchecked(&self, x: &[f64]) -> f64 {
        let w_out = self.w_out();
        (0..self.hidden)
            .map(|j| w_out[j] * self.activation.apply(self.pre_activation(j, x)))
            .sum::<f64>()
            + self.b_out()
    }

    /// Raw (unclamped) head output.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.forward_unchecked(x))
    }

    /// Output clamped to `[0, 1]`, as used when the head acts as an estimator.
    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        Ok(self.forward(x)?.clamp(0.0, 1.0))
    }

    pub fn predict_batch(&self, xs: &[Vec<f64>], exec: Exec) -> Result<Vec<f64>> {
        exec.map(xs, |x| self.predict(x)).into_iter().collect()
    }

    /// MSE over the batch and its gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<(f64, Vec<f64>)> {
        if xs.len() != ys.len() || xs.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "batch needs matching non-empty inputs and targets ({} vs {})",
                xs.len(),
                ys.len()
            )));
        }
        let (h, d) = (self.hidden, self.input_dim);
        let mut grad = vec![0.0; self.flat.len()];
        let (gw, rest) = grad.split_at_mut(h * d);
        let (gb, rest) = rest.split_at_mut(h);
        let (gwo, gbo) = rest.split_at_mut(h);
        let w_out = self.w_out();
        let scale = 2.0 / xs.len() as f64;
        let mut loss = 0.0;
        let mut z = vec![0.0; h];
        for (x, &y) in xs.iter().zip(ys) {
            self.check_dim(x)?;
            let mut out = self.b_out();
            for j in 0..h {
                z[j] = self.pre_activation(j, x);
                out += w_out[j] * self.activation.apply(z[j]);
            }
            let err = out - y;
            loss += err * err;
            let g = scale * err;
            gbo[0] += g;
            for j in 0..h {
                gwo[j] += g * self.activation.apply(z[j]);
                let dz = g * w_out[j] * self.activation.derivative(z[j]);
                if dz != 0.0 {
                    gb[j] += dz;
                    for (gw_jk, xk) in gw[j * d..(j + 1) * d].iter_mut().zip(x) {
                        *gw_jk += dz * xk;
                    }
                }
            }
        }
        Ok((loss / xs.len() as f64, grad))
    }
}

/// Mean squared error.
pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::InvalidParameter("mse of an empty batch".into()));
    }
    if preds.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: preds.len(),
            actual: targets.len(),
        });
    }
    Ok(preds
        .iter()
        .zip(targets)
        .map(|(p, t)| (p - t).powi(2))
        .sum::<f64>()
        / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Learning rate reached at the final epoch.
    pub lr_floor: f64,
    pub hidden_units: usize,
    pub activation: Activation,
    pub seed: u64,
    /// Return the parameters from the epoch with the lowest training loss.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: None,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            lr_floor: 0.0,
            hidden_units: 32,
            activation: Activation::Relu,
            seed: 0,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidParameter("learning_rate must be > 0".into()));
        }
        if !(self.lr_floor >= 0.0) {
            return Err(Error::InvalidParameter("lr_floor must be >= 0".into()));
        }
        if self.hidden_units == 0 {
            return Err(Error::InvalidParameter("hidden_units must be >= 1".into()));
        }
        if self.batch_size == Some(0) {
            return Err(Error::InvalidParameter("batch_size must be >= 1".into()));
        }
        Ok(())
    }

    /// Cosine-annealed rate: `learning_rate` at epoch 0, `lr_floor` at the last epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs <= 1 {
            return self.learning_rate;
        }
        let t = epoch as f64 / (self.epochs - 1) as f64;
        self.lr_floor
            + 0.5 * (self.learning_rate - self.lr_floor) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Inputs and targets after fusion.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainSet {
    pub object_ids: Vec<String>,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    /// One sample per image view (shared text embedding where fused), or one
    /// per object in text-only mode. Targets are the objects' `true_alpha`.
    pub fn from_objects<'a>(
        manifest: &Manifest,
        objects: impl IntoIterator<Item = &'a ObjectRecord>,
        fusion: FusionMode,
    ) -> Result<Self> {
        let mut set = TrainSet::default();
        for o in objects {
            let alpha = o
                .true_alpha
                .ok_or_else(|| Error::MissingGroundTruth(o.object_id.clone()))?;
            for x in fused_inputs(manifest, &o.object_id, fusion)? {
                set.object_ids.push(o.object_id.clone());
                set.inputs.push(x);
                set.targets.push(alpha.get());
            }
        }
        Ok(set)
    }
}

/// Fused head inputs for an object: one per image view, or a single text vector.
pub fn fused_inputs(
    manifest: &Manifest,
    object_id: &str,
    fusion: FusionMode,
) -> Result<Vec<Vec<f64>>> {
    let store = manifest
        .embeddings()
        .ok_or_else(|| Error::Referential(vec!["manifest has no embeddings file".into()]))?;
    let text = store.get(object_id, Modality::Text, 0);
    let missing = |what: &str| {
        Error::Referential(vec![format!(
            "no {what} embedding for object `{object_id}`"
        )])
    };
    if fusion == FusionMode::TextOnly {
        return Ok(vec![text.ok_or_else(|| missing("text"))?.to_vec()]);
    }
    let views = store.image_views(object_id);
    if views.is_empty() {
        return Err(missing("image"));
    }
    let text = match fusion {
        FusionMode::ImageOnly => &[][..],
        _ => text.ok_or_else(|| missing("text"))?,
    };
    views
        .into_iter()
        .map(|(_, img)| fuse(img, text, fusion))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: HeadParams,
    /// Mean training MSE seen during each epoch (before that epoch's updates).
    pub loss_history: Vec<f64>,
    pub learning_rates: Vec<f64>,
    pub best_epoch: Option<usize>,
}

/// Trains a fresh head with Adam under cosine annealing. Deterministic in
/// `cfg.seed`; runs on a single thread.
pub fn train_head(set: &TrainSet, cfg: &TrainConfig, fusion: FusionMode) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dim = set
        .input_dim()
        .ok_or_else(|| Error::InvalidParameter("training set is empty".into()))?;
    if let Some(bad) = set.inputs.iter().find(|x| x.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: bad.len(),
        });
    }
    let mut params = HeadParams::init(dim, cfg.hidden_units, cfg.seed);
    params.activation = cfg.activation;
    params.fusion = fusion;

    let n = set.len();
    let batch = cfg.batch_size.unwrap_or(n).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f5b_1e00);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut step = 0i32;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut rates = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, HeadParams)> = None;

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        if batch < n {
            order.shuffle(&mut shuffle_rng);
        }
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(batch) {
            let xs: Vec<Vec<f64>> = chunk.iter().map(|&i| set.inputs[i].clone()).collect();
            let ys: Vec<f64> = chunk.iter().map(|&i| set.targets[i]).collect();
            let (loss, grad) = params.loss_and_gradient(&xs, &ys)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            epoch_loss += loss * chunk.len() as f64;
            step += 1;
            let c1 = 1.0 - cfg.beta1.powi(step);
            let c2 = 1.0 - cfg.beta2.powi(step);
            for (k, (p, g)) in params.as_flat_mut().iter_mut().zip(&grad).enumerate() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
                *p -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + cfg.epsilon);
            }
        }
        let epoch_loss = epoch_loss / n as f64;
        if cfg.keep_best && best.as_ref().is_none_or(|(_, l, _)| epoch_loss < *l) {
            best = Some((epoch, epoch_loss, params.clone()));
        }
        history.push(epoch_loss);
        rates.push(lr);
    }
    if params.as_flat().iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }
    let (params, best_epoch) = match best {
        Some((e, _, p)) => (p, Some(e)),
        None => (params, None),
    };
    Ok(TrainOutcome {
        params,
        loss_history: history,
        learning_rates: rates,
        best_epoch,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientCheck {
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, 1e-7)`.
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters skipped because the finite-difference stencil crossed an
    /// activation kink.
    pub skipped: usize,
}

const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-7;

/// Compares backpropagated gradients against central finite differences.
pub fn gradient_check(
    params: &HeadParams,
    xs: &[Vec<f64>],
    ys: &[f64],
    exec: Exec,
) -> Result<GradientCheck> {
    let (_, analytic) = params.loss_and_gradient(xs, ys)?;
    compare_gradient(params, xs, ys, &analytic, exec)
}

/// Finite-difference check of an arbitrary gradient vector; lets callers
/// verify that a corrupted gradient is caught.
///
/// Each perturbed loss is recomputed from the forward definition. Only the
/// hidden unit touched by the perturbation is re-evaluated; the other units'
/// activations are cached from the unperturbed forward pass.
pub fn compare_gradient(
    params: &HeadParams,
    xs: &[Vec<f64>],
    ys: &[f64],
    analytic: &[f64],
    exec: Exec,
) -> Result<GradientCheck> {
    if analytic.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: params.len(),
            actual: analytic.len(),
        });
    }
    for x in xs {
        params.check_dim(x)?;
    }
    let (h, d) = (params.hidden, params.input_dim);
    let act = params.activation;
    let z: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| (0..h).map(|j| params.pre_activation(j, x)).collect())
        .collect();
    let outs: Vec<f64> = xs.iter().map(|x| params.forward_unchecked(x)).collect();
    let loss_of = |ys_hat: &dyn Fn(usize) -> f64| -> f64 {
        ys.iter()
            .enumerate()
            .map(|(s, y)| (ys_hat(s) - y).powi(2))
            .sum::<f64>()
            / ys.len() as f64
    };

    let check = |k: usize| -> Option<f64> {
        let mut loss = [0.0; 2];
        if k < h * d + h {
            let (unit, col) = if k < h * d {
                (k / d, Some(k % d))
            } else {
                (k - h * d, None)
            };
            let w_out = params.w_out()[unit];
            for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
                let mut row: Vec<f64> = params.w_hidden()[unit * d..(unit + 1) * d].to_vec();
                let mut bias = params.b_hidden()[unit];
                match col {
                    Some(c) => row[c] += sign * FD_STEP,
                    None => bias += sign * FD_STEP,
                }
                let mut kink = false;
                let perturbed: Vec<f64> = xs
                    .iter()
                    .enumerate()
                    .map(|(s, x)| {
                        let zp = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias;
                        if act == Activation::Relu && (zp > 0.0) != (z[s][unit] > 0.0) {
                            kink = true;
                        }
                        outs[s] - w_out * act.apply(z[s][unit]) + w_out * act.apply(zp)
                    })
                    .collect();
                if kink {
                    return None;
                }
                loss[slot] = loss_of(&|s| perturbed[s]);
            }
        } else if k < h * d + 2 * h {
            let unit = k - h * d - h;
            for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
                loss[slot] = loss_of(&|s| outs[s] + sign * FD_STEP * act.apply(z[s][unit]));
            }
        } else {
            for (slot, sign) in [1.0, -1.0].into_iter().enumerate() {
                loss[slot] = loss_of(&|s| outs[s] + sign * FD_STEP);
            }
        }
        let numeric = (loss[0] - loss[1]) / (2.0 * FD_STEP);
        let a = analytic[k];
        Some((a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR))
    };

    let results = exec.map_range(params.len(), check);
    let checked: Vec<f64> = results.iter().flatten().copied().collect();
    Ok(GradientCheck {
        max_relative_error: checked.iter().copied().fold(0.0, f64::max),
        checked: checked.len(),
        skipped: results.len() - checked.len(),
    })
}

/// Likelihood-weighted reflectance over categories.
pub fn categorical_expectation(likelihoods: &[f64], category_alphas: &[f64]) -> Result<f64> {
    if likelihoods.len() != category_alphas.len() || likelihoods.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: category_alphas.len(),
            actual: likelihoods.len(),
        });
    }
    if likelihoods.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        return Err(Error::Domain(
            "likelihoods must be finite and non-negative".into(),
        ));
    }
    let total: f64 = likelihoods.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Domain(format!(
            "likelihoods must sum to 1, got {total}"
        )));
    }
    Ok(likelihoods
        .iter()
        .zip(category_alphas)
        .map(|(p, a)| p * a)
        .sum())
}

const PARAMS_MAGIC: &str = "reflect-head 1";

fn write_row(out: &mut String, vals: &[f64]) {
    let row: Vec<String> = vals.iter().map(f64::to_string).collect();
    out.push_str(&row.join(" "));
    out.push('\n');
}

/// Versioned flat text: a small header followed by row-major parameter blocks.
pub fn save_params(params: &HeadParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let _ = writeln!(out, "{PARAMS_MAGIC}");
    let _ = writeln!(out, "input_dim {}", params.input_dim);
    let _ = writeln!(out, "hidden_units {}", params.hidden);
    let _ = writeln!(out, "activation {}", params.activation.as_str());
    let _ = writeln!(out, "fusion {}", params.fusion.as_str());
    out.push_str("w_hidden\n");
    for row in params.w_hidden().chunks(params.input_dim.max(1)) {
        write_row(&mut out, row);
    }
    out.push_str("b_hidden\n");
    write_row(&mut out, params.b_hidden());
    out.push_str("w_out\n");
    write_row(&mut out, params.w_out());
    out.push_str("b_out\n");
    write_row(&mut out, &[params.b_out()]);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: impl AsRef<Path>) -> Result<HeadParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| {
        lines.next().ok_or_else(|| {
            Error::parse(path, 0, format!("unexpected end of file, expected {what}"))
        })
    };
    let (ln, magic) = next("header")?;
    if magic != PARAMS_MAGIC {
        return Err(Error::parse(path, ln, format!("expected `{PARAMS_MAGIC}`")));
    }
    let mut kv = |key: &str| -> Result<(usize, String)> {
        let (ln, l) = next(key)?;
        l.strip_prefix(key)
            .map(|v| (ln, v.trim().to_string()))
            .ok_or_else(|| Error::parse(path, ln, format!("expected `{key} <value>`")))
    };
    let (ln, v) = kv("input_dim")?;
    let input_dim: usize = v
        .parse()
        .map_err(|_| Error::parse(path, ln, "bad input_dim"))?;
    let (ln, v) = kv("hidden_units")?;
    let hidden: usize = v
        .parse()
        .map_err(|_| Error::parse(path, ln, "bad hidden_units"))?;
    let (ln, v) = kv("activation")?;
    let activation: Activation = v.parse().map_err(|e: String| Error::parse(path, ln, e))?;
    let (ln, v) = kv("fusion")?;
    let fusion: FusionMode = v.parse().map_err(|e: String| Error::parse(path, ln, e))?;

    let mut p = HeadParams::zeros(input_dim, hidden);
    p.activation = activation;
    p.fusion = fusion;
    let mut values = Vec::with_capacity(p.len());
    let mut expected_section = ["w_hidden", "b_hidden", "w_out", "b_out"].into_iter();
    for (ln, l) in lines {
        if l.is_empty() {
            continue;
        }
        if l.chars().next().is_some_and(|c| c.is_ascii_alphabetic()) {
            if Some(l) != expected_section.next() {
                return Err(Error::parse(path, ln, format!("unexpected section `{l}`")));
            }
            continue;
        }
        for tok in l.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(path, ln, format!("bad value `{tok}`")))?;
            if !v.is_finite() {
                return Err(Error::parse(path, ln, "parameter is not finite"));
            }
            values.push(v);
        }
    }
    if values.len() != p.len() {
        return Err(Error::parse(
            path,
            0,
            format!("expected {} parameters, found {}", p.len(), values.len()),
        ));
    }
    p.as_flat_mut().copy_from_slice(&values);
    Ok(p)
}

/// Loss history CSV: `epoch,learning_rate,train_mse`.
pub fn save_loss_history(outcome: &TrainOutcome, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,learning_rate,train_mse\n");
    for (e, (l, lr)) in outcome
        .loss_history
        .iter()
        .zip(&outcome.learning_rates)
        .enumerate()
    {
        let _ = writeln!(out, "{e},{lr},{l}");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
