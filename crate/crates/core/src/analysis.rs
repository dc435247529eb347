//! Difference-vector analysis (centered PCA, pairwise Pearson correlations)
//! and the constant-shift sensitivity sweep.

use std::fmt::Write as _;

use nalgebra::SymmetricEigen;
use serde::{Deserialize, Serialize};

use crate::embedstore::PairedCorpus;
use crate::error::{GapError, Result};
use crate::rng::derive_seed;
use crate::transferlab::{self, Condition, StepSpec, TrainConfig};
use crate::vecmath;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaReport {
    /// Eigenvalues of the sample covariance, descending.
    pub explained_variance: Vec<f64>,
    /// `explained_variance / total variance`.
    pub explained_ratio: Vec<f64>,
    /// One orthonormal row per component.
    pub components: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
}

impl PcaReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("component  variance      ratio  cumulative\n");
        let mut cum = 0.0;
        for (k, (v, r)) in self
            .explained_variance
            .iter()
            .zip(&self.explained_ratio)
            .enumerate()
        {
            cum += r;
            let _ = writeln!(out, "{:>9}  {:>8.6}  {:>9.6}  {:>10.6}", k + 1, v, r, cum);
        }
        out
    }

    /// `component,explained_variance,explained_ratio` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("component,explained_variance,explained_ratio\n");
        for (k, (v, r)) in self
            .explained_variance
            .iter()
            .zip(&self.explained_ratio)
            .enumerate()
        {
            let _ = writeln!(out, "{},{v:e},{r:e}", k + 1);
        }
        out
    }

    /// `mean + sum_k <x - mean, c_k> c_k`
    pub fn reconstruct(&self, x: &[f64]) -> Vec<f64> {
        let centered: Vec<f64> = x.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut out = self.mean.clone();
        for c in &self.components {
            let p = vecmath::dot(&centered, c);
            out.iter_mut().zip(c).for_each(|(o, ck)| *o += p * ck);
        }
        out
    }
}

/// PCA of the centered difference vectors `normalize(image_j) - normalize(text_j)`.
pub fn diff_pca(corpus: &PairedCorpus, n_components: usize) -> Result<PcaReport> {
    pca(&corpus.differences()?, n_components)
}

/// PCA of arbitrary rows by symmetric eigendecomposition of their covariance.
pub fn pca(rows: &[Vec<f64>], n_components: usize) -> Result<PcaReport> {
    let n = rows.len();
    if n < 2 {
        return Err(GapError::InsufficientData(
            "PCA needs at least 2 rows".into(),
        ));
    }
    let dim = rows[0].len();
    let max_components = (n - 1).min(dim);
    if n_components == 0 || n_components > max_components {
        return Err(GapError::Parameter(format!(
            "n_components must be in 1..={max_components}, got {n_components}"
        )));
    }
    let mean = vecmath::mean_rows(rows);
    let cov = vecmath::covariance(rows, &mean);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .total_cmp(&eig.eigenvalues[a])
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0)).collect();
    let total: f64 = values.iter().sum();

    let components = order[..n_components]
        .iter()
        .map(|&k| {
            let mut c: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            // sign convention: largest-magnitude entry positive
            let pivot = c.iter().copied().fold(
                0.0f64,
                |best, x| if x.abs() > best.abs() { x } else { best },
            );
            if pivot < 0.0 {
                c.iter_mut().for_each(|x| *x = -*x);
            }
            c
        })
        .collect();
    let explained_variance = values[..n_components].to_vec();
    let explained_ratio = explained_variance
        .iter()
        .map(|v| if total > 0.0 { v / total } else { 0.0 })
        .collect();
    Ok(PcaReport {
        explained_variance,
        explained_ratio,
        components,
        mean,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeaturePair {
    pub feature_i: usize,
    pub feature_j: usize,
    pub pearson_r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// Sorted by |r| descending, then by (i, j).
    pub pairs: Vec<FeaturePair>,
    /// Zero-variance features left out of every pair.
    pub excluded_features: Vec<usize>,
}

impl CorrelationReport {
    pub fn to_table(&self) -> String {
        let mut out = String::from("feature_i  feature_j  pearson_r\n");
        for p in &self.pairs {
            let _ = writeln!(
                out,
                "{:>9}  {:>9}  {:>9.6}",
                p.feature_i, p.feature_j, p.pearson_r
            );
        }
        if !self.excluded_features.is_empty() {
            let _ = writeln!(
                out,
                "excluded (zero variance): {:?}",
                self.excluded_features
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature_i,feature_j,pearson_r\n");
        for p in &self.pairs {
            let _ = writeln!(out, "{},{},{:e}", p.feature_i, p.feature_j, p.pearson_r);
        }
        out
    }
}

/// The `top_k` most correlated coordinate pairs of the difference vectors.
pub fn feature_correlations(corpus: &PairedCorpus, top_k: usize) -> Result<CorrelationReport> {
    correlations(&corpus.differences()?, top_k)
}

/// Pearson correlation of every coordinate pair `i < j` of `rows`.
pub fn correlations(rows: &[Vec<f64>], top_k: usize) -> Result<CorrelationReport> {
    let n = rows.len();
    if n < 3 {
        return Err(GapError::InsufficientData(
            "correlations need at least 3 rows".into(),
        ));
    }
    let dim = rows[0].len();
    let mean = vecmath::mean_rows(rows);
    let cov = vecmath::covariance(rows, &mean);
    let excluded: Vec<usize> = (0..dim).filter(|&k| !(cov[(k, k)] > 0.0)).collect();
    let mut pairs = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            if excluded.contains(&i) || excluded.contains(&j) {
                continue;
            }
            let r = cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt();
            pairs.push(FeaturePair {
                feature_i: i,
                feature_j: j,
                pearson_r: r.clamp(-1.0, 1.0),
            });
        }
    }
    pairs.sort_by(|a, b| {
        b.pearson_r
            .abs()
            .total_cmp(&a.pearson_r.abs())
            .then((a.feature_i, a.feature_j).cmp(&(b.feature_i, b.feature_j)))
    });
    pairs.truncate(top_k);
    Ok(CorrelationReport {
        pairs,
        excluded_features: excluded,
    })
}

/// A constant shift applied to every normalized training text vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShiftCondition {
    None,
    Rng { magnitude: f64 },
    Mean,
    NegMean,
}

impl ShiftCondition {
    pub fn parse(text: &str) -> Result<Self> {
        match text.trim() {
            "none" => Ok(ShiftCondition::None),
            "mean" => Ok(ShiftCondition::Mean),
            "neg_mean" | "-mean" => Ok(ShiftCondition::NegMean),
            other => match other.strip_prefix("rng:") {
                Some(m) => m
                    .parse()
                    .map(|magnitude| ShiftCondition::Rng { magnitude })
                    .map_err(|_| GapError::Parameter(format!("bad magnitude in {other:?}"))),
                None => Err(GapError::Parameter(format!(
                    "unknown shift condition {other:?}"
                ))),
            },
        }
    }

    pub fn label(&self) -> String {
        match self {
            ShiftCondition::None => "none".into(),
            ShiftCondition::Rng { magnitude } => format!("rng:{magnitude}"),
            ShiftCondition::Mean => "mean".into(),
            ShiftCondition::NegMean => "neg_mean".into(),
        }
    }

    fn as_condition(&self, noise_w: f64) -> Condition {
        let mut steps = match self {
            ShiftCondition::None => vec![],
            ShiftCondition::Rng { magnitude } => vec![StepSpec::RandomShift {
                magnitude: *magnitude,
            }],
            ShiftCondition::Mean => vec![StepSpec::MeanShift { negate: false }],
            ShiftCondition::NegMean => vec![StepSpec::MeanShift { negate: true }],
        };
        steps.push(StepSpec::Noise { w: noise_w });
        Condition::new(self.label(), steps)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub condition: ShiftCondition,
    /// Mean norm of the applied shift across runs.
    pub magnitude: f64,
    pub runs: usize,
    /// Image-side accuracy of a head trained on shifted, noised text.
    pub mean_metric: f64,
    pub std_metric: f64,
}

/// Aligned table of sweep rows.
pub fn sensitivity_table(rows: &[SensitivityRow]) -> String {
    let mut out = String::from("condition     magnitude  runs  image_acc      std\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<12}  {:>9.4}  {:>4}  {:>9.4}  {:>7.4}",
            r.condition.label(),
            r.magnitude,
            r.runs,
            r.mean_metric,
            r.std_metric
        );
    }
    out
}

/// Seeds of the individual sweep runs: `derive_seed(seed, "run/<r>")`.
pub fn run_seeds(seed: u64, runs: usize) -> Vec<u64> {
    (0..runs)
        .map(|r| derive_seed(seed, &format!("run/{r}")))
        .collect()
}

/// Train with `[shift, GaussianNoise(noise_w)]` for every condition, `runs`
/// times, and report mean and standard deviation of image-side accuracy.
/// Random shifts are redrawn for each run; mean shifts are fitted on each
/// run's validation pairs.
pub fn sensitivity_sweep(
    corpus: &PairedCorpus,
    conditions: &[ShiftCondition],
    noise_w: f64,
    runs: usize,
    seed: u64,
    hyper: &TrainConfig,
) -> Result<Vec<SensitivityRow>> {
    if corpus.labels.is_none() {
        return Err(GapError::Validation(
            "sensitivity sweep needs labels".into(),
        ));
    }
    if runs == 0 {
        return Err(GapError::Parameter("runs must be >= 1".into()));
    }
    let conds: Vec<Condition> = conditions.iter().map(|c| c.as_condition(noise_w)).collect();
    let report =
        transferlab::cross_modal_experiment(corpus, &conds, hyper, &run_seeds(seed, runs))?;
    Ok(conditions
        .iter()
        .zip(&report.conditions)
        .map(|(cond, rep)| SensitivityRow {
            condition: *cond,
            magnitude: rep.cells.iter().map(|c| c.shift_norm).sum::<f64>() / runs as f64,
            runs,
            mean_metric: rep.mean_image_eval_acc,
            std_metric: rep.std_image_eval_acc,
        })
        .collect())
}
