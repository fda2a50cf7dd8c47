//! Interchange formats: a TOML manifest plus flat CSV files for sweeps,
//! embeddings and predictions.
//!
//! Fixed CSV headers (UTF-8, `.` decimal separator):
//!
//! | file        | columns                                               |
//! |-------------|-------------------------------------------------------|
//! | sweeps      | `object_id,distance_mm,current_mean,repeats`          |
//! | embeddings  | `object_id,modality,view_index,v0,...,v{dim-1}`       |
//! | predictions | `method_id,object_id,trial_index,predicted_alpha`     |
//!
//! Floats are written with Rust's shortest round-trip formatting so a
//! load/save cycle is lossless.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::calibration::{SweepSample, SweepSeries};
use crate::error::{Error, Result};
use crate::sensor::{Reflectance, SensorIntrinsics};

pub const SCHEMA_VERSION: u32 = 1;
pub const SWEEP_HEADER: [&str; 4] = ["object_id", "distance_mm", "current_mean", "repeats"];
pub const PREDICTION_HEADER: [&str; 4] =
    ["method_id", "object_id", "trial_index", "predicted_alpha"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Regular,
    Irregular,
    Transparent,
}

impl Category {
    pub const ALL: [Category; 3] = [
        Category::Regular,
        Category::Irregular,
        Category::Transparent,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Regular => "regular",
            Category::Irregular => "irregular",
            Category::Transparent => "transparent",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Image,
    Text,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Image => "image",
            Modality::Text => "text",
        }
    }
}

impl FromStr for Modality {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "image" => Ok(Modality::Image),
            "text" => Ok(Modality::Text),
            other => Err(format!("unknown modality `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub object_id: String,
    /// One- or two-word descriptor, used verbatim in prompts.
    pub name: String,
    pub category: Category,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_alpha: Option<Reflectance>,
    /// Contact stiffness in N/mm for the grasp simulator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness: Option<f64>,
    /// Classifier likelihoods over [`Category::ALL`] for the categorical baseline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_likelihoods: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileRefs {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweeps: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predictions: Vec<PathBuf>,
}

/// One embedding row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector {
    pub object_id: String,
    pub modality: Modality,
    /// Capture-distance index for images (0..6), always 0 for text.
    pub view_index: u32,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub method_id: String,
    pub object_id: String,
    pub trial_index: u32,
    pub predicted_alpha: f64,
}

/// Embeddings keyed by `(object_id, modality, view_index)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    rows: BTreeMap<(String, Modality, u32), Vec<f64>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn insert(&mut self, v: EmbeddingVector) -> Result<()> {
        if v.values.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: v.values.len(),
            });
        }
        self.rows
            .insert((v.object_id, v.modality, v.view_index), v.values);
        Ok(())
    }

    pub fn get(&self, object_id: &str, modality: Modality, view: u32) -> Option<&[f64]> {
        self.rows
            .get(&(object_id.to_string(), modality, view))
            .map(Vec::as_slice)
    }

    /// Image views present for an object, in view order.
    pub fn image_views(&self, object_id: &str) -> Vec<(u32, &[f64])> {
        self.rows
            .range(
                (object_id.to_string(), Modality::Image, 0)
                    ..=(object_id.to_string(), Modality::Image, u32::MAX),
            )
            .map(|((_, _, v), vals)| (*v, vals.as_slice()))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = EmbeddingVector> + '_ {
        self.rows.iter().map(|((o, m, v), vals)| EmbeddingVector {
            object_id: o.clone(),
            modality: *m,
            view_index: *v,
            values: vals.clone(),
        })
    }

    fn object_ids(&self) -> BTreeSet<&str> {
        self.rows.keys().map(|(o, _, _)| o.as_str()).collect()
    }
}

/// Files referenced by a manifest, parsed during [`load_manifest`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Resolved {
    pub sweeps: Vec<SweepSeries>,
    pub embeddings: Option<EmbeddingStore>,
    pub predictions: Vec<PredictionRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    #[serde(default)]
    pub revision: u32,
    /// Set for generated data that does not come from real measurements.
    #[serde(default)]
    pub synthetic: bool,
    pub embedding_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intrinsics: Option<SensorIntrinsics>,
    #[serde(default)]
    pub files: FileRefs,
    #[serde(default)]
    pub objects: Vec<ObjectRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
    #[serde(skip)]
    pub resolved: Resolved,
}

impl Manifest {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            revision: 0,
            synthetic: false,
            embedding_dim,
            intrinsics: None,
            files: FileRefs::default(),
            objects: Vec::new(),
            base_dir: PathBuf::from("."),
            resolved: Resolved::default(),
        }
    }

    pub fn object(&self, object_id: &str) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.object_id == object_id)
    }

    pub fn objects_in(&self, split: Split) -> impl Iterator<Item = &ObjectRecord> {
        self.objects.iter().filter(move |o| o.split == split)
    }

    /// `(train, test)` object counts.
    pub fn split_counts(&self) -> (usize, usize) {
        let train = self.objects_in(Split::Train).count();
        (train, self.objects.len() - train)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn embeddings(&self) -> Option<&EmbeddingStore> {
        self.resolved.embeddings.as_ref()
    }

    pub fn sweep(&self, object_id: &str) -> Option<&SweepSeries> {
        self.resolved
            .sweeps
            .iter()
            .find(|s| s.object_id() == object_id)
    }

    fn check_objects(&self, problems: &mut Vec<String>) {
        let mut seen = HashSet::new();
        for o in &self.objects {
            if !seen.insert(o.object_id.as_str()) {
                problems.push(format!("duplicate object_id `{}`", o.object_id));
            }
            if o.object_id.trim().is_empty() {
                problems.push("object with empty object_id".into());
            }
            if o.name.trim().is_empty() {
                problems.push(format!("object `{}` has an empty name", o.object_id));
            }
            if let Some(k) = o.stiffness {
                if !(k > 0.0 && k.is_finite()) {
                    problems.push(format!("object `{}` stiffness must be > 0", o.object_id));
                }
            }
            if let Some(l) = &o.category_likelihoods {
                if l.len() != Category::ALL.len() {
                    problems.push(format!(
                        "object `{}` needs {} category likelihoods, got {}",
                        o.object_id,
                        Category::ALL.len(),
                        l.len()
                    ));
                }
            }
        }
    }
}

fn toml_line(src: &str, err: &toml::de::Error) -> usize {
    err.span()
        .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1)
        .unwrap_or(0)
}

/// Reads, validates and resolves a manifest and every file it references.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let src = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut m: Manifest = toml::from_str(&src)
        .map_err(|e| Error::parse(path, toml_line(&src, &e), e.message().to_string()))?;
    if m.schema_version != SCHEMA_VERSION {
        return Err(Error::parse(
            path,
            0,
            format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                m.schema_version
            ),
        ));
    }
    m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();

    let mut problems = Vec::new();
    m.check_objects(&mut problems);
    let known: HashSet<&str> = m.objects.iter().map(|o| o.object_id.as_str()).collect();
    let mut resolved = Resolved::default();

    let missing = |p: &Path, what: &str, problems: &mut Vec<String>| {
        let full = m.resolve(p);
        if full.is_file() {
            Some(full)
        } else {
            problems.push(format!("{what} file `{}` does not exist", full.display()));
            None
        }
    };

    if let Some(p) = m.files.sweeps.clone() {
        if let Some(full) = missing(&p, "sweeps", &mut problems) {
            let sweeps = load_sweeps(&full)?;
            for s in &sweeps {
                if !known.contains(s.object_id()) {
                    problems.push(format!(
                        "sweeps reference unknown object `{}`",
                        s.object_id()
                    ));
                }
            }
            resolved.sweeps = sweeps;
        }
    }
    if let Some(p) = m.files.embeddings.clone() {
        if let Some(full) = missing(&p, "embeddings", &mut problems) {
            let store = load_embeddings(&full, m.embedding_dim)?;
            for id in store.object_ids() {
                if !known.contains(id) {
                    problems.push(format!("embeddings reference unknown object `{id}`"));
                }
            }
            resolved.embeddings = Some(store);
        }
    }
    for p in m.files.predictions.clone() {
        if let Some(full) = missing(&p, "predictions", &mut problems) {
            let preds = load_predictions(&full)?;
            for r in &preds {
                if !known.contains(r.object_id.as_str()) {
                    problems.push(format!(
                        "predictions reference unknown object `{}`",
                        r.object_id
                    ));
                }
            }
            resolved.predictions.extend(preds);
        }
    }
    if !problems.is_empty() {
        return Err(Error::Referential(problems));
    }
    m.resolved = resolved;
    Ok(m)
}

/// `path` relative to `dir`, climbing with `..` where needed. Both must be absolute.
fn relative_to(path: &Path, dir: &Path) -> PathBuf {
    let p: Vec<_> = path.components().collect();
    let d: Vec<_> = dir.components().collect();
    let common = p.iter().zip(&d).take_while(|(a, b)| a == b).count();
    if common == 0 {
        return path.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..d.len() {
        out.push("..");
    }
    for c in &p[common..] {
        out.push(c);
    }
    out
}

/// Writes the manifest document. File references are rewritten relative to
/// the new location when the target directory differs from `base_dir`.
pub fn save_manifest(m: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let mut doc = m.clone();
    let same_dir = fs::canonicalize(&dir).ok() == fs::canonicalize(&m.base_dir).ok();
    if !same_dir {
        let abs_dir = fs::canonicalize(&dir).unwrap_or(dir.clone());
        let rebase = |p: &PathBuf| {
            let full = fs::canonicalize(m.resolve(p)).unwrap_or_else(|_| m.resolve(p));
            relative_to(&full, &abs_dir)
        };
        doc.files.sweeps = m.files.sweeps.as_ref().map(rebase);
        doc.files.embeddings = m.files.embeddings.as_ref().map(rebase);
        doc.files.predictions = m.files.predictions.iter().map(rebase).collect();
    }
    let text = toml::to_string_pretty(&doc)
        .map_err(|e| Error::parse(path, 0, format!("cannot serialise manifest: {e}")))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path, line, format!("{other:?}")),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().collect();
    if got != want {
        return Err(Error::parse(
            path,
            1,
            format!(
                "expected header `{}`, got `{}`",
                want.join(","),
                got.join(",")
            ),
        ));
    }
    Ok(())
}

fn field<T: FromStr>(path: &Path, rec: &csv::StringRecord, idx: usize, name: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
    let raw = rec
        .get(idx)
        .ok_or_else(|| Error::parse(path, line, format!("missing field `{name}`")))?;
    raw.trim()
        .parse()
        .map_err(|e| Error::parse(path, line, format!("field `{name}` = `{raw}`: {e}")))
}

fn finite(path: &Path, rec: &csv::StringRecord, v: f64, name: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        Err(Error::parse(
            path,
            line,
            format!("field `{name}` is not finite"),
        ))
    }
}

pub fn load_sweeps(path: impl AsRef<Path>) -> Result<Vec<SweepSeries>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    check_header(
        path,
        rdr.headers().map_err(|e| csv_error(path, e))?,
        &SWEEP_HEADER,
    )?;
    let mut grouped: Vec<(String, Vec<SweepSample>)> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let id: String = field(path, &rec, 0, "object_id")?;
        let distance: f64 = field(path, &rec, 1, "distance_mm")?;
        let current_mean: f64 = field(path, &rec, 2, "current_mean")?;
        let repeat_count: u32 = field(path, &rec, 3, "repeats")?;
        let sample = SweepSample {
            distance: finite(path, &rec, distance, "distance_mm")?,
            current_mean: finite(path, &rec, current_mean, "current_mean")?,
            repeat_count,
        };
        let slot = *index.entry(id.clone()).or_insert_with(|| {
            grouped.push((id, Vec::new()));
            grouped.len() - 1
        });
        grouped[slot].1.push(sample);
    }
    grouped
        .into_iter()
        .map(|(id, mut samples)| {
            samples.sort_by(|a, b| a.distance.total_cmp(&b.distance));
            SweepSeries::new(id, samples)
        })
        .collect()
}

pub fn save_sweeps(sweeps: &[SweepSeries], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = SWEEP_HEADER.join(",");
    out.push('\n');
    for s in sweeps {
        for x in s.samples() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                s.object_id(),
                x.distance,
                x.current_mean,
                x.repeat_count
            ));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn embedding_header(dim: usize) -> Vec<String> {
    let mut h = vec![
        "object_id".to_string(),
        "modality".into(),
        "view_index".into(),
    ];
    h.extend((0..dim).map(|i| format!("v{i}")));
    h
}

/// Loads an embedding CSV; every row must carry exactly `dim` values.
pub fn load_embeddings(path: impl AsRef<Path>, dim: usize) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let header = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    let want = embedding_header(dim);
    let want: Vec<&str> = want.iter().map(String::as_str).collect();
    check_header(path, &header, &want)?;
    let mut store = EmbeddingStore::new(dim);
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        if rec.len() != dim + 3 {
            return Err(Error::parse(
                path,
                line,
                format!(
                    "expected {} values, got {}",
                    dim,
                    rec.len().saturating_sub(3)
                ),
            ));
        }
        let object_id: String = field(path, &rec, 0, "object_id")?;
        let modality: Modality = field(path, &rec, 1, "modality")?;
        let view_index: u32 = field(path, &rec, 2, "view_index")?;
        if modality == Modality::Text && view_index != 0 {
            return Err(Error::parse(
                path,
                line,
                "text embeddings must use view_index 0",
            ));
        }
        if !seen.insert((object_id.clone(), modality, view_index)) {
            return Err(Error::parse(
                path,
                line,
                format!(
                    "duplicate embedding for `{object_id}` {} view {view_index}",
                    modality.as_str()
                ),
            ));
        }
        let mut values = Vec::with_capacity(dim);
        for i in 0..dim {
            let v: f64 = field(path, &rec, i + 3, "value")?;
            values.push(finite(path, &rec, v, &format!("v{i}"))?);
        }
        store.insert(EmbeddingVector {
            object_id,
            modality,
            view_index,
            values,
        })?;
    }
    Ok(store)
}

pub fn save_embeddings(store: &EmbeddingStore, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = embedding_header(store.dim()).join(",");
    out.push('\n');
    for v in store.iter() {
        out.push_str(&format!(
            "{},{},{}",
            v.object_id,
            v.modality.as_str(),
            v.view_index
        ));
        for x in &v.values {
            out.push(',');
            out.push_str(&x.to_string());
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn sort_predictions(records: &mut [PredictionRecord]) {
    records.sort_by(|a, b| {
        (a.method_id.as_str(), a.object_id.as_str(), a.trial_index).cmp(&(
            b.method_id.as_str(),
            b.object_id.as_str(),
            b.trial_index,
        ))
    });
}

/// Writes predictions in canonical `(method_id, object_id, trial_index)` order.
pub fn save_predictions(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(bad) = records.iter().find(|r| !r.predicted_alpha.is_finite()) {
        return Err(Error::Domain(format!(
            "prediction for `{}` by `{}` (trial {}) is not finite",
            bad.object_id, bad.method_id, bad.trial_index
        )));
    }
    let mut sorted = records.to_vec();
    sort_predictions(&mut sorted);
    let mut out = PREDICTION_HEADER.join(",");
    out.push('\n');
    for r in &sorted {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.method_id, r.object_id, r.trial_index, r.predicted_alpha
        ));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    check_header(
        path,
        rdr.headers().map_err(|e| csv_error(path, e))?,
        &PREDICTION_HEADER,
    )?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let predicted_alpha: f64 = field(path, &rec, 3, "predicted_alpha")?;
        out.push(PredictionRecord {
            method_id: field(path, &rec, 0, "method_id")?,
            object_id: field(path, &rec, 1, "object_id")?,
            trial_index: field(path, &rec, 2, "trial_index")?,
            predicted_alpha: finite(path, &rec, predicted_alpha, "predicted_alpha")?,
        });
    }
    sort_predictions(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_climb() {
        assert_eq!(
            relative_to(Path::new("/a/b/c.csv"), Path::new("/a/d")),
            PathBuf::from("../b/c.csv")
        );
        assert_eq!(
            relative_to(Path::new("/a/b/c.csv"), Path::new("/a/b")),
            PathBuf::from("c.csv")
        );
    }
    use crate::calibration::{simulate_sweep, SweepConfig};
    use proptest::prelude::*;

    fn obj(id: &str, split: Split) -> ObjectRecord {
        ObjectRecord {
            object_id: id.into(),
            name: format!("thing {id}"),
            category: Category::Regular,
            split,
            true_alpha: None,
            stiffness: None,
            category_likelihoods: None,
        }
    }

    #[test]
    fn empty_manifest_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        save_manifest(&Manifest::new(512), &p).unwrap();
        let m = load_manifest(&p).unwrap();
        assert!(m.objects.is_empty());
        assert_eq!(m.split_counts(), (0, 0));
    }

    #[test]
    fn split_counts_for_full_object_set() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        let mut m = Manifest::new(512);
        m.objects = (0..54)
            .map(|i| {
                obj(
                    &format!("o{i:02}"),
                    if i < 40 { Split::Train } else { Split::Test },
                )
            })
            .collect();
        save_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap().split_counts(), (40, 14));
    }

    #[test]
    fn missing_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        let mut m = Manifest::new(4);
        m.objects.push(obj("a", Split::Train));
        m.files.embeddings = Some("nope.csv".into());
        save_manifest(&m, &p).unwrap();
        match load_manifest(&p) {
            Err(Error::Referential(v)) => assert!(v.iter().any(|s| s.contains("nope.csv"))),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_and_unknown_refs_are_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        let mut m = Manifest::new(2);
        m.objects = vec![obj("a", Split::Train), obj("a", Split::Test)];
        let sweep = simulate_sweep(
            "ghost",
            &SensorIntrinsics::EXAMPLE,
            Reflectance::HALF,
            &SweepConfig::default(),
            0,
        )
        .unwrap();
        save_sweeps(&[sweep], dir.path().join("s.csv")).unwrap();
        m.files.sweeps = Some("s.csv".into());
        save_manifest(&m, &p).unwrap();
        match load_manifest(&p) {
            Err(Error::Referential(v)) => {
                assert_eq!(v.len(), 2, "{v:?}");
                assert!(v[0].contains("duplicate"));
                assert!(v[1].contains("ghost"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.toml");
        fs::write(&p, "schema_version = 1\nembedding_dim = 4\n[[objects]]\nobject_id = \"a\"\nname = \"x\"\ncategory = \"shiny\"\nsplit = \"train\"\n").unwrap();
        match load_manifest(&p) {
            Err(Error::Parse { line, .. }) => assert!(line >= 3, "line {line}"),
            other => panic!("{other:?}"),
        }

        let c = dir.path().join("p.csv");
        fs::write(
            &c,
            "method_id,object_id,trial_index,predicted_alpha\nm,a,0,0.5\nm,a,x,0.5\n",
        )
        .unwrap();
        match load_predictions(&c) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn predictions_round_trip_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut recs = Vec::new();
        for o in 0..14 {
            for t in (0..6).rev() {
                recs.push(PredictionRecord {
                    method_id: "m".into(),
                    object_id: format!("o{o:02}"),
                    trial_index: t,
                    predicted_alpha: 0.1 + (o * 6 + t as usize) as f64 / 97.0,
                });
            }
        }
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        save_predictions(&recs, &a).unwrap();
        let loaded = load_predictions(&a).unwrap();
        assert_eq!(loaded.len(), 84);
        save_predictions(&loaded, &b).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        assert_eq!(loaded[0].trial_index, 0);
    }

    #[test]
    fn non_finite_prediction_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let r = PredictionRecord {
            method_id: "m".into(),
            object_id: "a".into(),
            trial_index: 0,
            predicted_alpha: f64::NAN,
        };
        assert!(save_predictions(&[r], dir.path().join("x.csv")).is_err());
    }

    #[test]
    fn embedding_dim_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        fs::write(&p, "object_id,modality,view_index,v0,v1\na,image,0,1,2\n").unwrap();
        assert!(load_embeddings(&p, 2).is_ok());
        assert!(load_embeddings(&p, 3).is_err());
        fs::write(&p, "object_id,modality,view_index,v0,v1\na,image,0,1\n").unwrap();
        assert!(load_embeddings(&p, 2).is_err());
        fs::write(&p, "object_id,modality,view_index,v0,v1\na,text,2,1,1\n").unwrap();
        assert!(load_embeddings(&p, 2).is_err());
    }

    proptest! {
        #[test]
        fn prediction_csv_round_trip(values in proptest::collection::vec((0u32..20, 0u32..6, -10.0..10.0f64), 1..40)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("p.csv");
            let mut recs: Vec<PredictionRecord> = values.iter().enumerate().map(|(i, (o, t, v))| PredictionRecord {
                method_id: format!("m{}", i % 3),
                object_id: format!("o{o}"),
                trial_index: *t,
                predicted_alpha: *v,
            }).collect();
            recs.sort_by(|a, b| (a.method_id.as_str(), a.object_id.as_str(), a.trial_index).cmp(&(b.method_id.as_str(), b.object_id.as_str(), b.trial_index)));
            recs.dedup_by(|a, b| a.method_id == b.method_id && a.object_id == b.object_id && a.trial_index == b.trial_index);
            save_predictions(&recs, &p).unwrap();
            prop_assert_eq!(load_predictions(&p).unwrap(), recs);
        }

        #[test]
        fn embedding_csv_round_trip(vals in proptest::collection::vec(proptest::num::f64::NORMAL, 6)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("e.csv");
            let mut s = EmbeddingStore::new(3);
            s.insert(EmbeddingVector { object_id: "a".into(), modality: Modality::Image, view_index: 1, values: vals[..3].to_vec() }).unwrap();
            s.insert(EmbeddingVector { object_id: "a".into(), modality: Modality::Text, view_index: 0, values: vals[3..].to_vec() }).unwrap();
            save_embeddings(&s, &p).unwrap();
            prop_assert_eq!(load_embeddings(&p, 3).unwrap(), s);
        }
    }
}
