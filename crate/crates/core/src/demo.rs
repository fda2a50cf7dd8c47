//! Fully synthetic dataset generator.
//!
//! Objects get a random latent vector; reflectance is an affine function of it
//! (a planted linear teacher) and embeddings are noisy linear projections of
//! it, so a regression head can recover reflectance from embeddings. Nothing here comes from measurements;
//! generated manifests carry `synthetic = true`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::calibration::{simulate_sweep, SweepConfig};
use crate::dataset::{
    save_embeddings, save_manifest, save_sweeps, Category, EmbeddingStore, EmbeddingVector,
    Manifest, Modality, ObjectRecord, Split,
};
use crate::error::{Error, Result};
use crate::prompt::{render_reply, EstimateReply};
use crate::sensor::{Reflectance, SensorIntrinsics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemoConfig {
    pub objects: usize,
    pub test_objects: usize,
    pub embedding_dim: usize,
    pub image_views: u32,
    pub latent_dim: usize,
    /// Standard deviation of per-view embedding noise.
    pub view_noise: f64,
    pub intrinsics: SensorIntrinsics,
    pub sweep: SweepConfig,
    /// Number of mock completion replies written alongside the data.
    pub mock_trials: u32,
    /// Standard deviation of the mock replies' prediction error.
    pub mock_reply_noise: f64,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            objects: 54,
            test_objects: 14,
            embedding_dim: 512,
            image_views: 6,
            latent_dim: 2,
            view_noise: 0.02,
            intrinsics: SensorIntrinsics::EXAMPLE,
            sweep: SweepConfig {
                noise_rel: 0.01,
                ..SweepConfig::default()
            },
            mock_trials: 6,
            mock_reply_noise: 0.08,
            seed: 7,
        }
    }
}

impl DemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects == 0 || self.test_objects >= self.objects {
            return Err(Error::InvalidParameter(format!(
                "need 0 <= test_objects < objects, got {} of {}",
                self.test_objects, self.objects
            )));
        }
        if self.embedding_dim == 0 || self.latent_dim == 0 || self.image_views == 0 {
            return Err(Error::InvalidParameter(
                "embedding_dim, latent_dim and image_views must be >= 1".into(),
            ));
        }
        if !(self.view_noise >= 0.0 && self.mock_reply_noise >= 0.0) {
            return Err(Error::InvalidParameter("noise levels must be >= 0".into()));
        }
        Ok(())
    }
}

const BASE_ALPHA: [f64; 3] = [0.6, 0.5, 0.35];
const TEACHER_SLOPE: f64 = 0.1;
const ADJECTIVES: [&str; 8] = [
    "red", "blue", "white", "black", "matte", "glossy", "small", "large",
];
const NOUNS: [[&str; 6]; 3] = [
    ["box", "can", "mug", "book", "ball", "jar"],
    ["plush toy", "sponge", "towel", "shoe", "plant", "bag"],
    ["glass", "bottle", "cup", "container", "vase", "lid"],
];

/// In-memory demo data.
#[derive(Debug, Clone)]
pub struct DemoData {
    pub manifest: Manifest,
    /// One mock completion reply per trial, covering every object.
    pub mock_replies: Vec<String>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Vec<f64> {
    let n = Normal::new(0.0, std).expect("positive std");
    (0..rows * cols).map(|_| n.sample(rng)).collect()
}

fn project(m: &[f64], z: &[f64]) -> Vec<f64> {
    m.chunks(z.len())
        .map(|row| row.iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Generates a manifest with resolved sweeps and embeddings. Deterministic in `cfg`.
pub fn generate(cfg: &DemoConfig) -> Result<DemoData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let latent = cfg.latent_dim + Category::ALL.len();
    // Entries of unit variance for unit-variance latents.
    let img_proj = gaussian_matrix(
        &mut rng,
        cfg.embedding_dim,
        latent,
        (1.0 / latent as f64).sqrt(),
    );
    let txt_proj = gaussian_matrix(
        &mut rng,
        cfg.embedding_dim,
        latent,
        (1.0 / latent as f64).sqrt(),
    );
    let readout: Vec<f64> = (0..cfg.latent_dim)
        .map(|_| std_normal.sample(&mut rng))
        .collect();
    let readout_norm = readout.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut test_flags: Vec<bool> = (0..cfg.objects).map(|i| i < cfg.test_objects).collect();
    test_flags.shuffle(&mut rng);

    let mut manifest = Manifest::new(cfg.embedding_dim);
    manifest.synthetic = true;
    manifest.intrinsics = Some(cfg.intrinsics);
    let mut store = EmbeddingStore::new(cfg.embedding_dim);
    let mut sweeps = Vec::with_capacity(cfg.objects);
    let mut names = std::collections::HashSet::new();
    let view_noise = Normal::new(0.0, cfg.view_noise.max(f64::MIN_POSITIVE)).expect("positive std");

    for (i, &is_test) in test_flags.iter().enumerate() {
        let category = Category::ALL[i % Category::ALL.len()];
        let z: Vec<f64> = (0..cfg.latent_dim)
            .map(|_| std_normal.sample(&mut rng))
            .collect();
        let score = z.iter().zip(&readout).map(|(a, b)| a * b).sum::<f64>() / readout_norm;
        let alpha = (BASE_ALPHA[category.index()] + TEACHER_SLOPE * score).clamp(0.05, 0.95);
        let mut full = z.clone();
        full.extend(
            Category::ALL
                .iter()
                .map(|&c| if c == category { 1.0 } else { 0.0 }),
        );

        let object_id = format!("obj-{:03}", i + 1);
        let mut name;
        let mut attempt = 0;
        loop {
            let adj = ADJECTIVES[rng.random_range(0..ADJECTIVES.len())];
            let noun = NOUNS[category.index()][rng.random_range(0..6)];
            name = if attempt < 20 {
                format!("{adj} {noun}")
            } else {
                format!("{adj} {noun} {}", i + 1)
            };
            if names.insert(name.clone()) {
                break;
            }
            attempt += 1;
        }

        let clean_img = project(&img_proj, &full);
        for v in 0..cfg.image_views {
            let values = clean_img
                .iter()
                .map(|x| x + view_noise.sample(&mut rng))
                .collect();
            store.insert(EmbeddingVector {
                object_id: object_id.clone(),
                modality: Modality::Image,
                view_index: v,
                values,
            })?;
        }
        let text = project(&txt_proj, &full)
            .into_iter()
            .map(|x| x + view_noise.sample(&mut rng))
            .collect();
        store.insert(EmbeddingVector {
            object_id: object_id.clone(),
            modality: Modality::Text,
            view_index: 0,
            values: text,
        })?;

        let mut likelihoods: Vec<f64> = Category::ALL
            .iter()
            .map(|&c| if c == category { 2.0 } else { 0.0 } + 0.5 * std_normal.sample(&mut rng))
            .map(f64::exp)
            .collect();
        let total: f64 = likelihoods.iter().sum();
        likelihoods.iter_mut().for_each(|l| *l /= total);

        let alpha = Reflectance::new(alpha)?;
        let sweep_seed: u64 = rng.random();
        sweeps.push(simulate_sweep(
            object_id.clone(),
            &cfg.intrinsics,
            alpha,
            &cfg.sweep,
            sweep_seed,
        )?);
        manifest.objects.push(ObjectRecord {
            object_id,
            name,
            category,
            split: if is_test { Split::Test } else { Split::Train },
            true_alpha: Some(alpha),
            stiffness: Some(rng.random_range(0.5..2.0)),
            category_likelihoods: Some(likelihoods),
        });
    }

    let reply_noise =
        Normal::new(0.0, cfg.mock_reply_noise.max(f64::MIN_POSITIVE)).expect("positive std");
    let mock_replies = (0..cfg.mock_trials)
        .map(|_| {
            let entries: Vec<EstimateReply> = manifest
                .objects
                .iter()
                .map(|o| {
                    let truth = o.true_alpha.expect("demo objects carry ground truth").get();
                    let pred = ((truth + reply_noise.sample(&mut rng)) * 1000.0).round() / 1000.0;
                    let pred = pred.clamp(0.01, 0.99);
                    EstimateReply {
                        name: o.name.clone(),
                        range_lo: ((pred - 0.05).max(0.0) * 100.0).round() / 100.0,
                        range_hi: ((pred + 0.05).min(1.0) * 100.0).round() / 100.0,
                        prediction: pred,
                        reason: format!("A {} object of typical surface finish.", o.category),
                        inconsistent: false,
                    }
                })
                .collect();
            render_reply(&entries)
        })
        .collect();

    manifest.resolved.sweeps = sweeps;
    manifest.resolved.embeddings = Some(store);
    Ok(DemoData {
        manifest,
        mock_replies,
    })
}

/// Paths written by [`write_demo`].
#[derive(Debug, Clone, PartialEq)]
pub struct DemoFiles {
    pub manifest: PathBuf,
    pub sweeps: PathBuf,
    pub embeddings: PathBuf,
    pub replies: Vec<PathBuf>,
}

/// Writes `manifest.toml`, `sweeps.csv`, `embeddings.csv` and
/// `replies/trial-<k>.md` into `dir`.
pub fn write_demo(data: &DemoData, dir: impl AsRef<Path>) -> Result<DemoFiles> {
    let dir = dir.as_ref();
    let reply_dir = dir.join("replies");
    fs::create_dir_all(&reply_dir).map_err(|e| Error::io(&reply_dir, e))?;
    let files = DemoFiles {
        manifest: dir.join("manifest.toml"),
        sweeps: dir.join("sweeps.csv"),
        embeddings: dir.join("embeddings.csv"),
        replies: (0..data.mock_replies.len())
            .map(|k| reply_dir.join(format!("trial-{k}.md")))
            .collect(),
    };
    save_sweeps(&data.manifest.resolved.sweeps, &files.sweeps)?;
    if let Some(store) = data.manifest.embeddings() {
        save_embeddings(store, &files.embeddings)?;
    }
    for (path, reply) in files.replies.iter().zip(&data.mock_replies) {
        fs::write(path, reply).map_err(|e| Error::io(path, e))?;
    }
    let mut m = data.manifest.clone();
    m.base_dir = dir.to_path_buf();
    m.files.sweeps = Some(PathBuf::from("sweeps.csv"));
    m.files.embeddings = Some(PathBuf::from("embeddings.csv"));
    // The demo manifest records truth for evaluation; calibration recomputes it.
    save_manifest(&m, &files.manifest)?;
    Ok(files)
}
