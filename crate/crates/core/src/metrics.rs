//! Evaluation tables: reflectance error summaries, grasp outcome summaries
//! and pairwise significance matrices, with CSV and aligned-text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::dataset::{Category, Manifest, PredictionRecord, Split};
use crate::error::{Error, Result};
use crate::grasp::{GraspOutcome, GraspTrialResult};
use crate::head::FusionMode;

/// Divisor used for standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdEstimator {
    /// Divide by `n`.
    #[default]
    Population,
    /// Divide by `n - 1` (0 for a single sample).
    Sample,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Stat {
    pub fn from_samples(xs: &[f64], est: StdEstimator) -> Option<Stat> {
        if xs.is_empty() {
            return None;
        }
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let ss: f64 = xs.iter().map(|x| (x - mean).powi(2)).sum();
        let denom = match est {
            StdEstimator::Population => n as f64,
            StdEstimator::Sample if n > 1 => (n - 1) as f64,
            StdEstimator::Sample => return Some(Stat { mean, std: 0.0, n }),
        };
        Some(Stat {
            mean,
            std: (ss / denom).sqrt(),
            n,
        })
    }

    pub fn display(&self) -> String {
        format!("{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    Known,
    Unseen,
}

impl From<Split> for EvalSplit {
    fn from(s: Split) -> Self {
        match s {
            Split::Train => EvalSplit::Known,
            Split::Test => EvalSplit::Unseen,
        }
    }
}

impl EvalSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalSplit::Known => "known",
            EvalSplit::Unseen => "unseen",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    pub method_id: String,
    pub split: EvalSplit,
    pub mean_abs_error: f64,
    pub std_abs_error: f64,
    /// Contributing `(object, trial)` pairs.
    pub n: usize,
    pub per_category: BTreeMap<Category, Stat>,
}

/// Absolute reflectance error per prediction, aggregated per method and split
/// with a per-category breakdown. Rows are ordered by method, then split.
pub fn reflectance_error_table(
    predictions: &[PredictionRecord],
    manifest: &Manifest,
    est: StdEstimator,
) -> Result<Vec<ErrorSummary>> {
    type Key<'a> = (&'a str, EvalSplit);
    let mut groups: BTreeMap<Key, Vec<(Category, f64)>> = BTreeMap::new();
    for p in predictions {
        let obj = manifest.object(&p.object_id).ok_or_else(|| {
            Error::Referential(vec![format!(
                "prediction for unknown object `{}`",
                p.object_id
            )])
        })?;
        let truth = obj
            .true_alpha
            .ok_or_else(|| Error::MissingGroundTruth(obj.object_id.clone()))?;
        groups
            .entry((&p.method_id, obj.split.into()))
            .or_default()
            .push((obj.category, (p.predicted_alpha - truth.get()).abs()));
    }
    Ok(groups
        .into_iter()
        .map(|((method, split), errs)| {
            let all: Vec<f64> = errs.iter().map(|e| e.1).collect();
            let overall = Stat::from_samples(&all, est).expect("group is non-empty");
            let per_category = Category::ALL
                .iter()
                .filter_map(|&c| {
                    let xs: Vec<f64> = errs.iter().filter(|e| e.0 == c).map(|e| e.1).collect();
                    Stat::from_samples(&xs, est).map(|s| (c, s))
                })
                .collect();
            ErrorSummary {
                method_id: method.to_string(),
                split,
                mean_abs_error: overall.mean,
                std_abs_error: overall.std,
                n: overall.n,
                per_category,
            }
        })
        .collect())
}

/// `method_id,split,category,mean_abs_error,std_abs_error,n`; category `all`
/// carries the overall row.
pub fn error_table_csv(rows: &[ErrorSummary]) -> String {
    let mut out = String::from("method_id,split,category,mean_abs_error,std_abs_error,n\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},all,{},{},{}",
            r.method_id,
            r.split.as_str(),
            r.mean_abs_error,
            r.std_abs_error,
            r.n
        );
        for (c, s) in &r.per_category {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.method_id,
                r.split.as_str(),
                c,
                s.mean,
                s.std,
                s.n
            );
        }
    }
    out
}

/// Pads columns to equal width.
pub fn render_aligned(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for row in std::iter::once(header).chain(rows.iter().map(Vec::as_slice)) {
        for (i, cell) in row.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |row: &[String]| {
        let cells: Vec<String> = (0..cols)
            .map(|i| {
                let c = row.get(i).map(String::as_str).unwrap_or("");
                format!("{c}{}", " ".repeat(width[i] - c.chars().count()))
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(
        &width
            .iter()
            .map(|w| "-".repeat(*w))
            .collect::<Vec<_>>()
            .join("  "),
    );
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

/// Rank of each cell within its column (0 = lowest mean) for best/second-best markup.
fn column_ranks(cells: &[Option<Stat>]) -> Vec<Option<usize>> {
    let mut order: Vec<(usize, f64)> = cells
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.map(|s| (i, s.mean)))
        .collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut ranks = vec![None; cells.len()];
    for (rank, (i, _)) in order.into_iter().enumerate() {
        ranks[i] = Some(rank);
    }
    ranks
}

fn cell(stat: Option<Stat>, rank: Option<usize>, markup: bool) -> String {
    match stat {
        None => "-".into(),
        Some(s) if markup && rank == Some(0) => format!("__**{}**__", s.display()),
        Some(s) if markup && rank == Some(1) => format!("__{}__", s.display()),
        Some(s) => s.display(),
    }
}

/// Method / pre-training / known / unseen layout. With `markup`, the best
/// cell of each column is wrapped as `__**x**__` and the runner-up as `__x__`.
pub fn render_error_table(
    rows: &[ErrorSummary],
    pretraining: &BTreeMap<String, String>,
    markup: bool,
) -> String {
    let mut methods: Vec<&str> = rows.iter().map(|r| r.method_id.as_str()).collect();
    methods.dedup();
    let lookup = |m: &str, s: EvalSplit| {
        rows.iter()
            .find(|r| r.method_id == m && r.split == s)
            .map(|r| Stat {
                mean: r.mean_abs_error,
                std: r.std_abs_error,
                n: r.n,
            })
    };
    let known: Vec<Option<Stat>> = methods
        .iter()
        .map(|m| lookup(m, EvalSplit::Known))
        .collect();
    let unseen: Vec<Option<Stat>> = methods
        .iter()
        .map(|m| lookup(m, EvalSplit::Unseen))
        .collect();
    let (rk, ru) = (column_ranks(&known), column_ranks(&unseen));
    let header: Vec<String> = [
        "Method",
        "Pre-training dataset",
        "Known objects",
        "Unseen objects",
    ]
    .map(String::from)
    .to_vec();
    let body: Vec<Vec<String>> = methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            vec![
                m.to_string(),
                pretraining.get(*m).cloned().unwrap_or_else(|| "-".into()),
                cell(known[i], rk[i], markup),
                cell(unseen[i], ru[i], markup),
            ]
        })
        .collect();
    render_aligned(&header, &body)
}

/// One row of the fusion comparison layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionRow {
    pub backbone: String,
    pub pretraining: String,
    pub fusion: FusionMode,
    pub unseen: Option<Stat>,
}

impl FusionRow {
    pub fn input_modal(&self) -> &'static str {
        match self.fusion {
            FusionMode::ImageOnly => "Image-only",
            FusionMode::TextOnly => "Text-only",
            FusionMode::Add | FusionMode::Concat => "Image and text",
        }
    }

    pub fn combined_by(&self) -> &'static str {
        match self.fusion {
            FusionMode::Add => "Addition",
            FusionMode::Concat => "Concatenation",
            _ => "-",
        }
    }
}

pub const FUSION_TABLE_COLUMNS: [&str; 5] = [
    "Backbone",
    "Pre-training dataset",
    "Input modal",
    "Combined by",
    "Unseen objects",
];

pub fn render_fusion_table(rows: &[FusionRow], markup: bool) -> String {
    let stats: Vec<Option<Stat>> = rows.iter().map(|r| r.unseen).collect();
    let ranks = column_ranks(&stats);
    let header: Vec<String> = FUSION_TABLE_COLUMNS.map(String::from).to_vec();
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.backbone.clone(),
                r.pretraining.clone(),
                r.input_modal().into(),
                r.combined_by().into(),
                cell(r.unseen, ranks[i], markup),
            ]
        })
        .collect();
    render_aligned(&header, &body)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraspSummaryRow {
    pub method_id: String,
    /// Over underreach trials only; `None` renders as a hyphen.
    pub distance: Option<Stat>,
    /// Over overreach trials only.
    pub force: Option<Stat>,
    pub clean: usize,
    pub total: usize,
}

fn summarize<'a>(
    key: String,
    trials: impl Iterator<Item = &'a GraspTrialResult>,
    est: StdEstimator,
) -> GraspSummaryRow {
    let (mut dist, mut force, mut clean, mut total) = (Vec::new(), Vec::new(), 0, 0);
    for t in trials {
        total += 1;
        match t.outcome {
            GraspOutcome::Underreach { distance_error } => dist.push(distance_error),
            GraspOutcome::Overreach { force: f } => force.push(f),
            GraspOutcome::CleanGrasp => clean += 1,
        }
    }
    GraspSummaryRow {
        method_id: key,
        distance: Stat::from_samples(&dist, est),
        force: Stat::from_samples(&force, est),
        clean,
        total,
    }
}

fn first_seen_methods(results: &[GraspTrialResult]) -> Vec<&str> {
    let mut seen = Vec::new();
    for r in results {
        if !seen.contains(&r.method_id.as_str()) {
            seen.push(r.method_id.as_str());
        }
    }
    seen
}

/// Per-method distance statistics over underreach trials and force
/// statistics over overreach trials, in order of first appearance.
pub fn grasp_summary(
    results: &[GraspTrialResult],
    est: StdEstimator,
) -> Result<Vec<GraspSummaryRow>> {
    if results.is_empty() {
        return Err(Error::InsufficientSamples(
            "grasp summary of an empty result set".into(),
        ));
    }
    Ok(first_seen_methods(results)
        .into_iter()
        .map(|m| {
            summarize(
                m.to_string(),
                results.iter().filter(|r| r.method_id == m),
                est,
            )
        })
        .collect())
}

/// Same aggregation broken down per `(object, method)`.
pub fn grasp_summary_by_object(
    results: &[GraspTrialResult],
    est: StdEstimator,
) -> BTreeMap<(String, String), GraspSummaryRow> {
    let mut keys: Vec<(String, String)> = results
        .iter()
        .map(|r| (r.object_id.clone(), r.method_id.clone()))
        .collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(o, m)| {
            let row = summarize(
                m.clone(),
                results
                    .iter()
                    .filter(|r| r.object_id == o && r.method_id == m),
                est,
            );
            ((o, m), row)
        })
        .collect()
}

/// `method_id,distance_mean_mm,distance_std_mm,distance_n,force_mean_N,force_std_N,force_n,clean_n,total_n`;
/// empty cells where a statistic has no trials.
pub fn grasp_summary_csv(rows: &[GraspSummaryRow]) -> String {
    let mut out = String::from("method_id,distance_mean_mm,distance_std_mm,distance_n,force_mean_N,force_std_N,force_n,clean_n,total_n\n");
    let fmt = |s: &Option<Stat>| match s {
        Some(s) => format!("{},{},{}", s.mean, s.std, s.n),
        None => ",,0".into(),
    };
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.method_id,
            fmt(&r.distance),
            fmt(&r.force),
            r.clean,
            r.total
        );
    }
    out
}

pub fn render_grasp_summary(rows: &[GraspSummaryRow], markup: bool) -> String {
    let dist: Vec<Option<Stat>> = rows.iter().map(|r| r.distance).collect();
    let force: Vec<Option<Stat>> = rows.iter().map(|r| r.force).collect();
    let (rd, rf) = (column_ranks(&dist), column_ranks(&force));
    let header: Vec<String> = ["Method", "Distance error [mm]", "Force [N]"]
        .map(String::from)
        .to_vec();
    let body: Vec<Vec<String>> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| {
            vec![
                r.method_id.clone(),
                cell(r.distance, rd[i], markup),
                cell(r.force, rf[i], markup),
            ]
        })
        .collect();
    render_aligned(&header, &body)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignificanceTest {
    #[default]
    MannWhitney,
    WelchT,
}

impl SignificanceTest {
    pub fn describe(self) -> &'static str {
        match self {
            SignificanceTest::MannWhitney => "two-sided Mann-Whitney U (exact permutation for N <= 100, else normal approximation)",
            SignificanceTest::WelchT => "two-sided Welch t-test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Bonferroni,
    Holm,
}

impl Correction {
    pub fn describe(self) -> &'static str {
        match self {
            Correction::None => "none",
            Correction::Bonferroni => "Bonferroni",
            Correction::Holm => "Holm step-down",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairResult {
    P(f64),
    Insufficient(String),
}

/// Lower-triangular matrix of pairwise p-values.
#[derive(Debug, Clone, PartialEq)]
pub struct SignificanceMatrix {
    pub methods: Vec<String>,
    pub test: SignificanceTest,
    pub correction: Correction,
    /// `entries[i][j]` for `j < i`.
    pub entries: Vec<Vec<PairResult>>,
}

impl SignificanceMatrix {
    pub fn get(&self, a: usize, b: usize) -> Option<&PairResult> {
        match a.cmp(&b) {
            std::cmp::Ordering::Greater => self.entries[a].get(b),
            std::cmp::Ordering::Less => self.entries[b].get(a),
            std::cmp::Ordering::Equal => None,
        }
    }

    pub fn pair_count(&self) -> usize {
        self.entries.iter().map(Vec::len).sum()
    }

    pub fn p_value(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.methods.iter().position(|m| m == a)?;
        let j = self.methods.iter().position(|m| m == b)?;
        match self.get(i, j)? {
            PairResult::P(p) => Some(*p),
            PairResult::Insufficient(_) => None,
        }
    }

    pub fn csv(&self) -> String {
        let mut out = format!(
            "# test: {}; correction: {}\nrow_method,col_method,p_value,stars,note\n",
            self.test.describe(),
            self.correction.describe()
        );
        for (i, row) in self.entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                match e {
                    PairResult::P(p) => {
                        let _ = writeln!(
                            out,
                            "{},{},{},{},",
                            self.methods[i],
                            self.methods[j],
                            p,
                            stars(*p)
                        );
                    }
                    PairResult::Insufficient(why) => {
                        let _ = writeln!(
                            out,
                            "{},{},,,{}",
                            self.methods[i],
                            self.methods[j],
                            why.replace(',', ";")
                        );
                    }
                }
            }
        }
        out
    }

    /// Rows are methods `1..`, columns methods `..last`; p < 0.05 shows `*`,
    /// p < 0.01 shows `**`, pairs lacking samples show `-`.
    pub fn render(&self) -> String {
        let k = self.methods.len();
        let mut header = vec![String::new()];
        header.extend(self.methods[..k - 1].iter().cloned());
        let body: Vec<Vec<String>> = (1..k)
            .map(|i| {
                let mut row = vec![self.methods[i].clone()];
                for j in 0..k - 1 {
                    row.push(match self.get(i, j) {
                        Some(PairResult::P(p)) => {
                            let s = stars(*p);
                            if s.is_empty() {
                                format!("{p:.3}")
                            } else {
                                s.to_string()
                            }
                        }
                        Some(PairResult::Insufficient(_)) => "-".into(),
                        None => String::new(),
                    });
                }
                row
            })
            .collect();
        let mut out = render_aligned(&header, &body);
        let _ = writeln!(
            out,
            "*) p < 0.05, **) p < 0.01; test: {}; correction: {}",
            self.test.describe(),
            self.correction.describe()
        );
        out
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn midranks(pooled: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && pooled[idx[j + 1]] == pooled[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[idx[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

const EXACT_LIMIT: usize = 100;

/// Two-sided Mann-Whitney U p-value. For pooled sizes up to 100 the p-value
/// is the exact permutation probability of a rank sum at least as far from
/// its mean as observed (midranks for ties); beyond that a tie-corrected
/// normal approximation with continuity correction is used.
pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InsufficientSamples(
            "Mann-Whitney needs non-empty samples".into(),
        ));
    }
    let (n1, n2) = (x.len(), y.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    if n <= EXACT_LIMIT {
        // Doubled midranks are integers.
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let observed: usize = doubled[..n1].iter().sum();
        let max_sum: usize = doubled.iter().sum();
        // counts[k][s]: subsets of size k with doubled rank sum s.
        let mut counts = vec![vec![0u128; max_sum + 1]; n1 + 1];
        counts[0][0] = 1;
        for &r in &doubled {
            for k in (1..=n1).rev() {
                for s in (r..=max_sum).rev() {
                    let add = counts[k - 1][s - r];
                    if add != 0 {
                        counts[k][s] += add;
                    }
                }
            }
        }
        // Centre, doubled: 2 * n1 (n + 1) / 2 = n1 (n + 1).
        let centre = (n1 * (n + 1)) as i64;
        let dev_obs = (observed as i64 - centre).abs();
        let (mut extreme, mut total) = (0u128, 0u128);
        for (s, &c) in counts[n1].iter().enumerate() {
            total += c;
            if (s as i64 - centre).abs() >= dev_obs {
                extreme += c;
            }
        }
        return Ok((extreme as f64 / total as f64).min(1.0));
    }
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let mean = (n1 * n2) as f64 / 2.0;
    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let nf = n as f64;
    let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok((2.0 * (1.0 - normal.cdf(z))).min(1.0))
}

/// Two-sided Welch t-test.
pub fn welch_t_test(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InsufficientSamples(
            "Welch t-test needs >= 2 samples per group".into(),
        ));
    }
    let a = Stat::from_samples(x, StdEstimator::Sample).expect("non-empty");
    let b = Stat::from_samples(y, StdEstimator::Sample).expect("non-empty");
    let (va, vb) = (
        a.std.powi(2) / x.len() as f64,
        b.std.powi(2) / y.len() as f64,
    );
    let se2 = va + vb;
    if se2 == 0.0 {
        return Ok(if a.mean == b.mean { 1.0 } else { 0.0 });
    }
    let t = (a.mean - b.mean) / se2.sqrt();
    let df = se2 * se2 / (va * va / (x.len() - 1) as f64 + vb * vb / (y.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Domain(e.to_string()))?;
    Ok((2.0 * (1.0 - dist.cdf(t.abs()))).clamp(0.0, 1.0))
}

fn adjust(ps: &mut [f64], correction: Correction) {
    let m = ps.len() as f64;
    match correction {
        Correction::None => {}
        Correction::Bonferroni => ps.iter_mut().for_each(|p| *p = (*p * m).min(1.0)),
        Correction::Holm => {
            let mut order: Vec<usize> = (0..ps.len()).collect();
            order.sort_by(|&a, &b| ps[a].total_cmp(&ps[b]));
            let mut running: f64 = 0.0;
            let raw = ps.to_vec();
            for (rank, &i) in order.iter().enumerate() {
                running = running.max(((m - rank as f64) * raw[i]).min(1.0));
                ps[i] = running;
            }
        }
    }
}

/// Pairwise two-sample tests between methods. Pairs where either side has
/// fewer than two samples are reported as [`PairResult::Insufficient`].
pub fn significance_matrix(
    samples: &[(String, Vec<f64>)],
    test: SignificanceTest,
    correction: Correction,
) -> Result<SignificanceMatrix> {
    if samples.len() < 2 {
        return Err(Error::InsufficientSamples(format!(
            "need at least 2 methods, got {}",
            samples.len()
        )));
    }
    let mut entries: Vec<Vec<PairResult>> = Vec::with_capacity(samples.len());
    let mut valid = Vec::new();
    for i in 0..samples.len() {
        let mut row = Vec::with_capacity(i);
        for j in 0..i {
            let (a, b) = (&samples[i], &samples[j]);
            if a.1.len() < 2 || b.1.len() < 2 {
                row.push(PairResult::Insufficient(format!(
                    "{} has {} samples, {} has {}",
                    a.0,
                    a.1.len(),
                    b.0,
                    b.1.len()
                )));
                continue;
            }
            let p = match test {
                SignificanceTest::MannWhitney => mann_whitney_u(&a.1, &b.1)?,
                SignificanceTest::WelchT => welch_t_test(&a.1, &b.1)?,
            };
            valid.push((i, j));
            row.push(PairResult::P(p));
        }
        entries.push(row);
    }
    let mut ps: Vec<f64> = valid
        .iter()
        .map(|&(i, j)| match entries[i][j] {
            PairResult::P(p) => p,
            PairResult::Insufficient(_) => unreachable!(),
        })
        .collect();
    adjust(&mut ps, correction);
    for (&(i, j), p) in valid.iter().zip(ps) {
        entries[i][j] = PairResult::P(p);
    }
    Ok(SignificanceMatrix {
        methods: samples.iter().map(|s| s.0.clone()).collect(),
        test,
        correction,
        entries,
    })
}

/// Which grasp quantity a significance matrix compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspQuantity {
    Distance,
    Force,
}

/// Per-method samples of underreach distance or overreach force, in order of
/// first appearance.
pub fn grasp_samples(
    results: &[GraspTrialResult],
    quantity: GraspQuantity,
) -> Vec<(String, Vec<f64>)> {
    first_seen_methods(results)
        .into_iter()
        .map(|m| {
            let xs = results
                .iter()
                .filter(|r| r.method_id == m)
                .filter_map(|r| match (quantity, r.outcome) {
                    (GraspQuantity::Distance, GraspOutcome::Underreach { distance_error }) => {
                        Some(distance_error)
                    }
                    (GraspQuantity::Force, GraspOutcome::Overreach { force }) => Some(force),
                    _ => None,
                })
                .collect();
            (m.to_string(), xs)
        })
        .collect()
}
