//! Simulated fingertip-advance grasping.
//!
//! The gripper reads the proximity sensor, converts the reading to a distance
//! with an estimated reflectance and advances exactly that far. Stopping
//! short leaves a distance error; advancing too far pushes into a linear
//! spring contact whose force saturates at the gripper's cap.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, ObjectRecord, PredictionRecord};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::sensor::{
    forward_current, invert_distance, CurrentReading, Reflectance, SensorIntrinsics,
};

/// Default force cap in newtons; matches the saturation level seen in
/// recorded pushes.
pub const DEFAULT_MAX_FORCE: f64 = 5.2;
pub const DEFAULT_TOLERANCE: f64 = 0.05;
pub const DEFAULT_STIFFNESS: f64 = 1.0;
/// Sensor-to-surface distance at grasp start, mm.
pub const DEFAULT_STANDOFF: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspScene {
    pub true_alpha: Reflectance,
    pub true_distance: f64,
    pub intrinsics: SensorIntrinsics,
    /// N/mm.
    pub stiffness: f64,
    /// N.
    pub max_force: f64,
}

impl GraspScene {
    pub fn validate(&self) -> Result<()> {
        if !(self.true_distance > 0.0 && self.true_distance.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "true_distance must be > 0, got {}",
                self.true_distance
            )));
        }
        if !(self.stiffness > 0.0 && self.stiffness.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "stiffness must be > 0, got {}",
                self.stiffness
            )));
        }
        if !(self.max_force > 0.0 && self.max_force.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "max_force must be > 0, got {}",
                self.max_force
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraspOutcome {
    CleanGrasp,
    /// Stopped short by `distance_error` mm.
    Underreach {
        distance_error: f64,
    },
    /// Pressed into the object with `force` N.
    Overreach {
        force: f64,
    },
}

impl GraspOutcome {
    pub fn label(&self) -> &'static str {
        match self {
            GraspOutcome::CleanGrasp => "clean_grasp",
            GraspOutcome::Underreach { .. } => "underreach",
            GraspOutcome::Overreach { .. } => "overreach",
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            GraspOutcome::CleanGrasp => None,
            GraspOutcome::Underreach { distance_error } => Some(distance_error),
            GraspOutcome::Overreach { force } => Some(force),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspTrialResult {
    pub object_id: String,
    pub method_id: String,
    pub outcome: GraspOutcome,
    pub commanded_advance: f64,
    pub trial_index: u32,
}

/// Advance the fingertip would command: the distance implied by a sensor
/// reading at the true distance, inverted with `alpha_hat`. `noise` is an
/// optional multiplicative perturbation `eps` applied as `I * (1 + eps)`.
pub fn plan_advance(scene: &GraspScene, alpha_hat: Reflectance, noise: f64) -> Result<f64> {
    let clean = forward_current(&scene.intrinsics, scene.true_alpha, scene.true_distance)?;
    let reading = if noise == 0.0 {
        clean
    } else {
        CurrentReading::new(clean.get() * (1.0 + noise))?
    };
    Ok(invert_distance(&scene.intrinsics, alpha_hat, reading))
}

/// Classifies a commanded advance against the true distance.
pub fn classify(scene: &GraspScene, commanded_advance: f64, tolerance: f64) -> GraspOutcome {
    let delta = commanded_advance - scene.true_distance;
    if delta > tolerance {
        GraspOutcome::Overreach {
            force: (scene.stiffness * delta).min(scene.max_force),
        }
    } else if delta < -tolerance {
        GraspOutcome::Underreach {
            distance_error: -delta,
        }
    } else {
        GraspOutcome::CleanGrasp
    }
}

/// One grasp with a given estimate. Returns the outcome and commanded advance.
pub fn simulate_grasp(
    scene: &GraspScene,
    alpha_hat: Reflectance,
    noise: f64,
    tolerance: f64,
) -> Result<(GraspOutcome, f64)> {
    scene.validate()?;
    let advance = plan_advance(scene, alpha_hat, noise)?;
    Ok((classify(scene, advance, tolerance), advance))
}

/// Source of `alpha_hat` for a compared method.
#[derive(Debug, Clone, PartialEq)]
pub enum MethodBinding {
    Fixed {
        method_id: String,
        alpha: f64,
    },
    GroundTruth {
        method_id: String,
    },
    /// Per-object estimates, e.g. averaged predictions.
    Table {
        method_id: String,
        estimates: BTreeMap<String, f64>,
    },
}

impl MethodBinding {
    pub fn fixed(alpha: f64) -> Self {
        MethodBinding::Fixed {
            method_id: format!("fixed-{alpha:.1}"),
            alpha,
        }
    }

    pub fn ground_truth() -> Self {
        MethodBinding::GroundTruth {
            method_id: "ground-truth".into(),
        }
    }

    /// One binding per method in a prediction set, averaging over trials.
    pub fn from_predictions(records: &[PredictionRecord]) -> Vec<Self> {
        let mut acc: BTreeMap<&str, BTreeMap<&str, (f64, usize)>> = BTreeMap::new();
        for r in records {
            let e = acc
                .entry(&r.method_id)
                .or_default()
                .entry(&r.object_id)
                .or_insert((0.0, 0));
            e.0 += r.predicted_alpha;
            e.1 += 1;
        }
        acc.into_iter()
            .map(|(m, objs)| MethodBinding::Table {
                method_id: m.to_string(),
                estimates: objs
                    .into_iter()
                    .map(|(o, (s, n))| (o.to_string(), s / n as f64))
                    .collect(),
            })
            .collect()
    }

    pub fn method_id(&self) -> &str {
        match self {
            MethodBinding::Fixed { method_id, .. }
            | MethodBinding::GroundTruth { method_id }
            | MethodBinding::Table { method_id, .. } => method_id,
        }
    }

    pub fn estimate(&self, object: &ObjectRecord) -> Result<Reflectance> {
        match self {
            MethodBinding::Fixed { alpha, .. } => Reflectance::new(*alpha),
            MethodBinding::GroundTruth { .. } => object
                .true_alpha
                .ok_or_else(|| Error::MissingGroundTruth(object.object_id.clone())),
            MethodBinding::Table {
                method_id,
                estimates,
            } => {
                let v = estimates.get(&object.object_id).ok_or_else(|| {
                    Error::Referential(vec![format!(
                        "method `{method_id}` has no estimate for `{}`",
                        object.object_id
                    )])
                })?;
                Reflectance::new(*v)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub repetitions: u32,
    pub seed: u64,
    /// Standard deviation of multiplicative sensor noise per trial.
    pub noise_rel: f64,
    pub standoff: f64,
    pub max_force: f64,
    pub tolerance: f64,
    pub exec: Exec,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            repetitions: 5,
            seed: 0,
            noise_rel: 0.0,
            standoff: DEFAULT_STANDOFF,
            max_force: DEFAULT_MAX_FORCE,
            tolerance: DEFAULT_TOLERANCE,
            exec: Exec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolFailure {
    pub method_id: String,
    pub object_id: String,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolRun {
    pub results: Vec<GraspTrialResult>,
    pub failures: Vec<ProtocolFailure>,
}

/// Seed for trial `(method, object, repetition)`, independent of execution order.
fn trial_seed(base: u64, method: usize, object: usize, rep: u32) -> u64 {
    let mut x = base ^ 0x9e37_79b9_7f4a_7c15;
    for v in [method as u64, object as u64, rep as u64] {
        x = x.wrapping_add(v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 31;
    }
    x
}

/// Runs `repetitions` grasps of every object with every method. Estimator
/// failures are recorded per `(method, object)` and skipped. Results are
/// ordered by method, object, repetition for either execution policy.
pub fn run_protocol(
    manifest: &Manifest,
    objects: &[&ObjectRecord],
    methods: &[MethodBinding],
    cfg: &ProtocolConfig,
) -> Result<ProtocolRun> {
    let intrinsics = manifest.intrinsics.ok_or_else(|| {
        Error::InvalidParameter("manifest does not declare sensor intrinsics".into())
    })?;
    if !(cfg.noise_rel >= 0.0) {
        return Err(Error::InvalidParameter("noise_rel must be >= 0".into()));
    }
    let noise = Normal::new(0.0, cfg.noise_rel.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;

    let mut jobs = Vec::new();
    let mut run = ProtocolRun::default();
    for (mi, m) in methods.iter().enumerate() {
        for (oi, o) in objects.iter().enumerate() {
            let Some(true_alpha) = o.true_alpha else {
                run.failures.push(ProtocolFailure {
                    method_id: m.method_id().into(),
                    object_id: o.object_id.clone(),
                    error: Error::MissingGroundTruth(o.object_id.clone()).to_string(),
                });
                continue;
            };
            match m.estimate(o) {
                Ok(alpha_hat) => {
                    let scene = GraspScene {
                        true_alpha,
                        true_distance: cfg.standoff,
                        intrinsics,
                        stiffness: o.stiffness.unwrap_or(DEFAULT_STIFFNESS),
                        max_force: cfg.max_force,
                    };
                    scene.validate()?;
                    for rep in 0..cfg.repetitions {
                        jobs.push((mi, oi, rep, scene, alpha_hat));
                    }
                }
                Err(e) => run.failures.push(ProtocolFailure {
                    method_id: m.method_id().into(),
                    object_id: o.object_id.clone(),
                    error: e.to_string(),
                }),
            }
        }
    }

    let results = cfg.exec.map(&jobs, |&(mi, oi, rep, scene, alpha_hat)| {
        let eps = if cfg.noise_rel == 0.0 {
            0.0
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(cfg.seed, mi, oi, rep));
            // Keep the perturbed reading positive.
            noise.sample(&mut rng).max(-0.999)
        };
        simulate_grasp(&scene, alpha_hat, eps, cfg.tolerance).map(|(outcome, commanded_advance)| {
            GraspTrialResult {
                object_id: objects[oi].object_id.clone(),
                method_id: methods[mi].method_id().to_string(),
                outcome,
                commanded_advance,
                trial_index: rep,
            }
        })
    });
    run.results = results.into_iter().collect::<Result<_>>()?;
    Ok(run)
}

pub const RESULT_HEADER: &str =
    "method_id,object_id,trial_index,outcome,value_mm_or_N,commanded_advance_mm";

/// CSV with one row per trial; `value_mm_or_N` is empty for clean grasps.
pub fn save_results(results: &[GraspTrialResult], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(RESULT_HEADER);
    out.push('\n');
    for r in results {
        let value = r.outcome.value().map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method_id,
            r.object_id,
            r.trial_index,
            r.outcome.label(),
            value,
            r.commanded_advance
        );
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_results(path: impl AsRef<Path>) -> Result<Vec<GraspTrialResult>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == RESULT_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header `{RESULT_HEADER}`"),
            ))
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(Error::parse(
                path,
                ln,
                format!("expected 6 fields, got {}", f.len()),
            ));
        }
        let num = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, ln, format!("bad {what} `{s}`")))
        };
        let outcome = match f[3] {
            "clean_grasp" => GraspOutcome::CleanGrasp,
            "underreach" => GraspOutcome::Underreach {
                distance_error: num(f[4], "distance error")?,
            },
            "overreach" => GraspOutcome::Overreach {
                force: num(f[4], "force")?,
            },
            other => return Err(Error::parse(path, ln, format!("unknown outcome `{other}`"))),
        };
        out.push(GraspTrialResult {
            method_id: f[0].to_string(),
            object_id: f[1].to_string(),
            trial_index: f[2]
                .parse()
                .map_err(|_| Error::parse(path, ln, "bad trial_index"))?,
            outcome,
            commanded_advance: num(f[5], "commanded advance")?,
        });
    }
    Ok(out)
}
