//! Reflectance calibration from distance sweeps.
//!
//! With known intrinsics the model is linear in `alpha`, so [`fit_alpha`] is a
//! closed-form least-squares projection. [`fit_full`] additionally recovers
//! `(d0, n)` with a damped Gauss-Newton loop when the sensor is uncharacterised.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Exec;
use crate::sensor::{forward_current, Reflectance, SensorIntrinsics};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSample {
    pub distance: f64,
    pub current_mean: f64,
    pub repeat_count: u32,
}

/// Ordered current readings for one object over a set of distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSeries {
    object_id: String,
    samples: Vec<SweepSample>,
}

impl SweepSeries {
    pub fn new(object_id: impl Into<String>, samples: Vec<SweepSample>) -> Result<Self> {
        let object_id = object_id.into();
        if samples.len() < 2 {
            return Err(Error::DegenerateSweep(format!(
                "sweep for `{object_id}` needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        for (i, s) in samples.iter().enumerate() {
            if !s.distance.is_finite() || s.distance < 0.0 {
                return Err(Error::Domain(format!(
                    "sweep `{object_id}` sample {i}: bad distance {}",
                    s.distance
                )));
            }
            if !(s.current_mean.is_finite() && s.current_mean > 0.0) {
                return Err(Error::Domain(format!(
                    "sweep `{object_id}` sample {i}: current must be > 0, got {}",
                    s.current_mean
                )));
            }
            if s.repeat_count == 0 {
                return Err(Error::Domain(format!(
                    "sweep `{object_id}` sample {i}: repeat count must be >= 1"
                )));
            }
        }
        if samples.windows(2).any(|w| w[1].distance <= w[0].distance) {
            return Err(Error::DegenerateSweep(format!(
                "sweep `{object_id}` distances must be strictly increasing"
            )));
        }
        Ok(Self { object_id, samples })
    }

    pub fn object_id(&self) -> &str {
        &self.object_id
    }

    pub fn samples(&self) -> &[SweepSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Same sweep with every current multiplied by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let samples = self
            .samples
            .iter()
            .map(|s| SweepSample {
                current_mean: s.current_mean * c,
                ..*s
            })
            .collect();
        Self::new(self.object_id.clone(), samples)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Least-squares reflectance; strictly positive but may exceed 1.
    pub alpha: f64,
    pub rms_residual: f64,
    pub sample_count: usize,
    /// Set when `alpha > 1`, i.e. outside the physical reflectance range.
    pub out_of_range: bool,
}

impl CalibrationResult {
    pub fn reflectance(&self) -> Result<Reflectance> {
        Reflectance::new(self.alpha)
    }

    /// Reflectance clamped into `(0, 1]`.
    pub fn clamped(&self) -> Reflectance {
        Reflectance::new(self.alpha.min(1.0)).expect("fit_alpha guarantees alpha > 0")
    }
}

/// Closed-form least-squares reflectance for known intrinsics:
/// `alpha = sum(I_i g_i) / sum(g_i^2)` with `g_i = (d_i + d0)^-n`.
pub fn fit_alpha(intrinsics: &SensorIntrinsics, sweep: &SweepSeries) -> Result<CalibrationResult> {
    let gains = sweep
        .samples()
        .iter()
        .map(|s| intrinsics.gain(s.distance))
        .collect::<Result<Vec<_>>>()?;
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, g) in sweep.samples().iter().zip(&gains) {
        num += s.current_mean * g;
        den += g * g;
    }
    if !(den > 0.0) {
        return Err(Error::DegenerateSweep(format!(
            "sweep `{}` has zero model energy",
            sweep.object_id()
        )));
    }
    let alpha = num / den;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!(
            "fitted reflectance for `{}` is not positive ({alpha})",
            sweep.object_id()
        )));
    }
    let sse: f64 = sweep
        .samples()
        .iter()
        .zip(&gains)
        .map(|(s, g)| (s.current_mean - alpha * g).powi(2))
        .sum();
    Ok(CalibrationResult {
        alpha,
        rms_residual: (sse / sweep.len() as f64).sqrt(),
        sample_count: sweep.len(),
        out_of_range: alpha > 1.0,
    })
}

/// Fits every sweep independently; results stay in input order.
pub fn fit_many(
    intrinsics: &SensorIntrinsics,
    sweeps: &[SweepSeries],
    exec: Exec,
) -> Vec<Result<CalibrationResult>> {
    exec.map(sweeps, |s| fit_alpha(intrinsics, s))
}

/// Starting point and stopping rule for [`fit_full`].
#[derive(Debug, Clone, Copy)]
pub struct FullFitOptions {
    pub max_iterations: usize,
    /// Converged once the largest relative parameter change drops below this.
    pub param_tolerance: f64,
    pub initial_damping: f64,
}

impl Default for FullFitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            param_tolerance: 1e-10,
            initial_damping: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullFit {
    pub alpha: f64,
    pub d0: f64,
    pub n: f64,
    pub rms_residual: f64,
    /// `rms_residual` divided by the mean measured current.
    pub relative_rms: f64,
    pub iterations: usize,
    /// Sum of squared residuals after each accepted step, starting with the initial guess.
    pub sse_history: Vec<f64>,
}

impl FullFit {
    /// A fit whose residual is more than 1% of the signal does not describe a power law.
    pub fn is_poor(&self) -> bool {
        self.relative_rms > 1e-2
    }
}

fn sse_at(sweep: &SweepSeries, p: [f64; 3]) -> Option<f64> {
    let [alpha, d0, n] = p;
    if !(alpha > 0.0 && n > 0.0) {
        return None;
    }
    let mut sse = 0.0;
    for s in sweep.samples() {
        let r = s.distance + d0;
        if !(r > 0.0) {
            return None;
        }
        sse += (s.current_mean - alpha * r.powf(-n)).powi(2);
    }
    sse.is_finite().then_some(sse)
}

#[allow(clippy::needless_range_loop)]
fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[piv][col].abs() < f64::MIN_POSITIVE {
            return None;
        }
        m.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        let mut acc = m[i][3];
        for k in i + 1..3 {
            acc -= m[i][k] * x[k];
        }
        x[i] = acc / m[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Joint Levenberg-Marquardt fit of `(alpha, d0, n)` minimising
/// `sum (I_i - alpha (d_i + d0)^-n)^2`.
///
/// Steps that would make `d_i + d0 <= 0`, `n <= 0` or `alpha <= 0` are rejected
/// and the damping raised.
pub fn fit_full(
    sweep: &SweepSeries,
    initial: (f64, f64, f64),
    opts: &FullFitOptions,
) -> Result<FullFit> {
    if sweep.len() < 4 {
        return Err(Error::DegenerateSweep(format!(
            "joint fit needs at least 4 samples, got {}",
            sweep.len()
        )));
    }
    let mut p = [initial.0, initial.1, initial.2];
    let mut sse = sse_at(sweep, p).ok_or_else(|| {
        Error::Domain(format!(
            "initial guess {initial:?} is outside the model domain"
        ))
    })?;
    let mut lambda = opts.initial_damping;
    let mut history = vec![sse];
    let mean_current =
        sweep.samples().iter().map(|s| s.current_mean).sum::<f64>() / sweep.len() as f64;
    let finish = |p: [f64; 3], sse: f64, iterations: usize, history: Vec<f64>| {
        let rms = (sse / sweep.len() as f64).sqrt();
        FullFit {
            alpha: p[0],
            d0: p[1],
            n: p[2],
            rms_residual: rms,
            relative_rms: rms / mean_current,
            iterations,
            sse_history: history,
        }
    };

    for iter in 1..=opts.max_iterations {
        let [alpha, d0, n] = p;
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for s in sweep.samples() {
            let r = s.distance + d0;
            let g = r.powf(-n);
            let model = alpha * g;
            let res = s.current_mean - model;
            let jac = [g, -n * model / r, -model * r.ln()];
            for i in 0..3 {
                jtr[i] += jac[i] * res;
                for k in 0..3 {
                    jtj[i][k] += jac[i] * jac[k];
                }
            }
        }
        if jtr.iter().all(|v| *v == 0.0) {
            return Ok(finish(p, sse, iter, history));
        }

        let mut accepted = false;
        while lambda < 1e20 {
            let mut a = jtj;
            for i in 0..3 {
                a[i][i] += lambda * jtj[i][i].max(f64::MIN_POSITIVE);
            }
            let Some(step) = solve3(a, jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
            match sse_at(sweep, trial) {
                Some(trial_sse) if trial_sse <= sse => {
                    let rel_change = (0..3)
                        .map(|i| step[i].abs() / p[i].abs().max(1e-12))
                        .fold(0.0, f64::max);
                    p = trial;
                    sse = trial_sse;
                    history.push(sse);
                    lambda = (lambda / 10.0).max(1e-15);
                    accepted = true;
                    if rel_change < opts.param_tolerance {
                        return Ok(finish(p, sse, iter, history));
                    }
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        if !accepted {
            // No descent direction left at any damping: a stationary point.
            let fit = finish(p, sse, iter, history);
            if fit.is_poor() {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    params: p,
                    rms_residual: fit.rms_residual,
                });
            }
            return Ok(fit);
        }
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iterations,
        params: p,
        rms_residual: (sse / sweep.len() as f64).sqrt(),
    })
}

/// Sweep geometry and measurement noise for [`simulate_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub steps: usize,
    /// Standard deviation of the multiplicative Gaussian noise on each raw reading.
    pub noise_rel: f64,
    /// Raw readings averaged per distance.
    pub repeats: u32,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            d_min: 5.0,
            d_max: 30.0,
            steps: 6,
            noise_rel: 0.0,
            repeats: 200,
        }
    }
}

impl SweepConfig {
    pub fn distances(&self) -> Vec<f64> {
        let span = self.d_max - self.d_min;
        let last = (self.steps - 1) as f64;
        (0..self.steps)
            .map(|i| {
                if i + 1 == self.steps {
                    self.d_max
                } else {
                    self.d_min + span * i as f64 / last
                }
            })
            .collect()
    }
}

/// Synthetic sweep: equally spaced distances, each reading the mean of
/// `repeats` draws of `I * (1 + eps)`, `eps ~ N(0, noise_rel)`.
pub fn simulate_sweep(
    object_id: impl Into<String>,
    intrinsics: &SensorIntrinsics,
    alpha: Reflectance,
    cfg: &SweepConfig,
    seed: u64,
) -> Result<SweepSeries> {
    if cfg.steps < 2 {
        return Err(Error::InvalidParameter(format!(
            "steps must be >= 2, got {}",
            cfg.steps
        )));
    }
    if !(cfg.noise_rel >= 0.0) || !cfg.noise_rel.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise_rel must be >= 0, got {}",
            cfg.noise_rel
        )));
    }
    if cfg.repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be >= 1".into()));
    }
    if !(cfg.d_min >= 0.0 && cfg.d_max > cfg.d_min) {
        return Err(Error::InvalidParameter(format!(
            "need 0 <= d_min < d_max, got [{}, {}]",
            cfg.d_min, cfg.d_max
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_rel.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let samples = cfg
        .distances()
        .into_iter()
        .map(|d| {
            let clean = forward_current(intrinsics, alpha, d)?.get();
            let current_mean = if cfg.noise_rel == 0.0 {
                clean
            } else {
                let sum: f64 = (0..cfg.repeats)
                    .map(|_| clean * (1.0 + noise.sample(&mut rng)))
                    .sum();
                sum / cfg.repeats as f64
            };
            Ok(SweepSample {
                distance: d,
                current_mean,
                repeat_count: cfg.repeats,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SweepSeries::new(object_id, samples)
}

/// Relative calibration error `|alpha_hat - alpha| / alpha` for one noisy
/// sweep per seed.
pub fn monte_carlo_relative_errors(
    intrinsics: &SensorIntrinsics,
    alpha: Reflectance,
    cfg: &SweepConfig,
    seeds: &[u64],
    exec: Exec,
) -> Result<Vec<f64>> {
    exec.map(seeds, |&seed| {
        let sweep = simulate_sweep("mc", intrinsics, alpha, cfg, seed)?;
        let fit = fit_alpha(intrinsics, &sweep)?;
        Ok((fit.alpha - alpha.get()).abs() / alpha.get())
    })
    .into_iter()
    .collect()
}
