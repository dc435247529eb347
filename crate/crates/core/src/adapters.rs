//! Text-side adapters: transformations applied to normalized text vectors so
//! that a model trained on them transfers to image vectors.
//!
//! Every adapter maps a unit vector to a unit vector. Fitting always happens on
//! normalized rows.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedstore::PairedCorpus;
use crate::error::{GapError, Result};
use crate::vecmath::{self, check_dim, check_unit, norm};

pub const DEFAULT_NOISE_W: f64 = 0.08;
pub const DEFAULT_RIDGE_LAMBDA: f64 = 1e-4;
pub const DEFAULT_JITTER: f64 = 1e-6;
pub const DEFAULT_COV_SCALE: f64 = 1.0;

/// Relative pivot size below which an unregularized Gram matrix counts as singular.
const SINGULAR_PIVOT: f64 = 1e-12;

/// One adaptation step.
#[derive(Debug, Clone, PartialEq)]
pub enum Adapter {
    /// `normalize(v + w * z)`, `z ~ N(0, I)`.
    GaussianNoise { w: f64 },
    /// `normalize(v + shift)`; the same vector for every input.
    ConstantShift { shift: Vec<f64> },
    /// `normalize(W v + b)`.
    LinearMap {
        weights: DMatrix<f64>,
        bias: Vec<f64>,
    },
    /// `normalize(v + scale * (mu + L z))`, `z ~ N(0, I)`.
    CovarianceNoise {
        mu: Vec<f64>,
        chol_l: DMatrix<f64>,
        scale: f64,
    },
}

impl Adapter {
    /// Dimension the adapter is tied to; `None` for dimension-free noise.
    pub fn dim(&self) -> Option<usize> {
        match self {
            Adapter::GaussianNoise { .. } => None,
            Adapter::ConstantShift { shift } => Some(shift.len()),
            Adapter::LinearMap { bias, .. } => Some(bias.len()),
            Adapter::CovarianceNoise { mu, .. } => Some(mu.len()),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Adapter::GaussianNoise { .. } => "gaussian_noise",
            Adapter::ConstantShift { .. } => "constant_shift",
            Adapter::LinearMap { .. } => "linear_map",
            Adapter::CovarianceNoise { .. } => "covariance_noise",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            Adapter::GaussianNoise { w } => {
                if !(w.is_finite() && *w >= 0.0) {
                    return Err(GapError::Parameter(format!(
                        "noise w must be >= 0, got {w}"
                    )));
                }
            }
            Adapter::ConstantShift { shift } => {
                if shift.is_empty() || !finite(shift) {
                    return Err(GapError::Parameter(
                        "shift must be nonempty and finite".into(),
                    ));
                }
            }
            Adapter::LinearMap { weights, bias } => {
                let d = bias.len();
                if d == 0 || weights.nrows() != d || weights.ncols() != d {
                    return Err(GapError::Parameter(format!(
                        "linear map is {}x{} with bias of length {d}",
                        weights.nrows(),
                        weights.ncols()
                    )));
                }
                if !finite(weights.as_slice()) || !finite(bias) {
                    return Err(GapError::Parameter(
                        "linear map has non-finite entries".into(),
                    ));
                }
            }
            Adapter::CovarianceNoise { mu, chol_l, scale } => {
                let d = mu.len();
                if d == 0 || chol_l.nrows() != d || chol_l.ncols() != d {
                    return Err(GapError::Parameter(format!(
                        "covariance factor is {}x{} with mean of length {d}",
                        chol_l.nrows(),
                        chol_l.ncols()
                    )));
                }
                if !finite(mu)
                    || !finite(chol_l.as_slice())
                    || !(scale.is_finite() && *scale >= 0.0)
                {
                    return Err(GapError::Parameter(
                        "covariance noise has invalid entries".into(),
                    ));
                }
                for i in 0..d {
                    if chol_l[(i, i)] < 0.0 {
                        return Err(GapError::Parameter("Cholesky diagonal must be >= 0".into()));
                    }
                    for j in i + 1..d {
                        if chol_l[(i, j)] != 0.0 {
                            return Err(GapError::Parameter(
                                "Cholesky factor must be lower-triangular".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Apply to a unit vector.
    pub fn apply_unit<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Adapter::GaussianNoise { w } => apply_gaussian_noise(v, *w, rng),
            Adapter::ConstantShift { shift } => apply_shift(v, shift),
            Adapter::LinearMap { weights, bias } => {
                check_unit(v)?;
                check_dim(bias.len(), v.len())?;
                let mut out = (weights * DVector::from_column_slice(v))
                    .data
                    .as_vec()
                    .clone();
                out.iter_mut().zip(bias).for_each(|(o, b)| *o += b);
                vecmath::normalize_in_place(&mut out, 0)?;
                Ok(out)
            }
            Adapter::CovarianceNoise { .. } => apply_covariance_noise(v, self, rng),
        }
    }

    /// The pre-normalization perturbation `scale * (mu + L z)` of a
    /// covariance-noise adapter.
    pub fn sample_perturbation<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<f64>> {
        match self {
            Adapter::CovarianceNoise { mu, chol_l, scale } => {
                let z = DVector::from_iterator(
                    mu.len(),
                    (0..mu.len()).map(|_| rng.sample::<f64, _>(StandardNormal)),
                );
                let lz = chol_l * z;
                Ok(mu
                    .iter()
                    .zip(lz.iter())
                    .map(|(m, x)| scale * (m + x))
                    .collect())
            }
            other => Err(GapError::Parameter(format!(
                "{} has no sampled perturbation",
                other.kind()
            ))),
        }
    }

    /// Sigma = L L^T of a covariance-noise adapter.
    pub fn covariance(&self) -> Option<DMatrix<f64>> {
        match self {
            Adapter::CovarianceNoise { chol_l, .. } => Some(chol_l * chol_l.transpose()),
            _ => None,
        }
    }
}

/// `normalize(v + w z)` with one standard-normal draw per component.
/// `w = 0` returns `v` untouched without consuming the stream.
pub fn apply_gaussian_noise<R: Rng + ?Sized>(v: &[f64], w: f64, rng: &mut R) -> Result<Vec<f64>> {
    check_unit(v)?;
    if !(w.is_finite() && w >= 0.0) {
        return Err(GapError::Parameter(format!(
            "noise w must be >= 0, got {w}"
        )));
    }
    if w == 0.0 {
        return Ok(v.to_vec());
    }
    let mut out: Vec<f64> = v
        .iter()
        .map(|x| x + w * rng.sample::<f64, _>(StandardNormal))
        .collect();
    vecmath::normalize_in_place(&mut out, 0)?;
    Ok(out)
}

/// `normalize(v + shift)`. An all-zero shift is exactly the identity.
pub fn apply_shift(v: &[f64], shift: &[f64]) -> Result<Vec<f64>> {
    check_unit(v)?;
    check_dim(shift.len(), v.len())?;
    if shift.iter().all(|&s| s == 0.0) {
        return Ok(v.to_vec());
    }
    let mut out: Vec<f64> = v.iter().zip(shift).map(|(a, b)| a + b).collect();
    vecmath::normalize_in_place(&mut out, 0)?;
    Ok(out)
}

/// Mean of `normalize(image_j) - normalize(text_j)`.
pub fn fit_mean_shift(corpus: &PairedCorpus) -> Result<Adapter> {
    let diffs = corpus.differences()?;
    Ok(Adapter::ConstantShift {
        shift: vecmath::mean_rows(&diffs),
    })
}

/// A random direction of length `magnitude`, fixed for the whole experiment.
pub fn random_shift<R: Rng + ?Sized>(dim: usize, magnitude: f64, rng: &mut R) -> Result<Adapter> {
    if !(magnitude.is_finite() && magnitude >= 0.0) {
        return Err(GapError::Parameter(format!(
            "shift magnitude must be >= 0, got {magnitude}"
        )));
    }
    if dim == 0 {
        return Err(GapError::Parameter("dim must be >= 1".into()));
    }
    if magnitude == 0.0 {
        return Ok(Adapter::ConstantShift {
            shift: vec![0.0; dim],
        });
    }
    loop {
        let draw: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = norm(&draw);
        if n >= vecmath::ZERO_NORM {
            return Ok(Adapter::ConstantShift {
                shift: draw.iter().map(|x| x / n * magnitude).collect(),
            });
        }
    }
}

/// Least-squares map from normalized text rows to normalized image rows,
///
/// ```text
/// min_{W,b}  sum_j |W t_j + b - i_j|^2 + lambda |W|_F^2
/// ```
///
/// solved on mean-centered rows through the regularized normal equations; the
/// bias absorbs the means and is not penalized.
pub fn fit_linear(corpus: &PairedCorpus, ridge_lambda: f64) -> Result<Adapter> {
    if !(ridge_lambda.is_finite() && ridge_lambda >= 0.0) {
        return Err(GapError::Parameter(format!(
            "ridge_lambda must be >= 0, got {ridge_lambda}"
        )));
    }
    let text = corpus.normalized_text()?;
    let image = corpus.normalized_image()?;
    fit_linear_rows(&text, &image, ridge_lambda)
}

pub(crate) fn fit_linear_rows(
    text: &[Vec<f64>],
    image: &[Vec<f64>],
    ridge_lambda: f64,
) -> Result<Adapter> {
    let n = text.len();
    let d = text.first().map_or(0, Vec::len);
    let t_mean = vecmath::mean_rows(text);
    let i_mean = vecmath::mean_rows(image);
    let tc = DMatrix::from_fn(n, d, |r, c| text[r][c] - t_mean[c]);
    let ic = DMatrix::from_fn(n, d, |r, c| image[r][c] - i_mean[c]);

    let mut gram = tc.transpose() * &tc;
    for k in 0..d {
        gram[(k, k)] += ridge_lambda;
    }
    let cross = tc.transpose() * &ic;

    let max_diag = (0..d).map(|k| gram[(k, k)]).fold(0.0f64, f64::max);
    let chol = gram.cholesky().ok_or(GapError::Singular)?;
    let l = chol.l_dirty();
    let min_pivot = (0..d)
        .map(|k| l[(k, k)] * l[(k, k)])
        .fold(f64::INFINITY, f64::min);
    if !(max_diag > 0.0) || min_pivot < SINGULAR_PIVOT * max_diag {
        return Err(GapError::Singular);
    }
    // gram * X = cross  =>  W = X^T
    let weights = chol.solve(&cross).transpose();
    let mapped_mean = &weights * DVector::from_column_slice(&t_mean);
    let bias = i_mean
        .iter()
        .zip(mapped_mean.iter())
        .map(|(a, b)| a - b)
        .collect();
    Ok(Adapter::LinearMap { weights, bias })
}

/// `sum_j |W t_j + b - i_j|^2 + lambda |W|_F^2` over the given rows.
pub fn linear_objective(
    text: &[Vec<f64>],
    image: &[Vec<f64>],
    weights: &DMatrix<f64>,
    bias: &[f64],
    ridge_lambda: f64,
) -> f64 {
    let residual: f64 = text
        .iter()
        .zip(image)
        .map(|(t, i)| {
            let mapped = weights * DVector::from_column_slice(t);
            mapped
                .iter()
                .zip(bias)
                .zip(i)
                .map(|((m, b), y)| (m + b - y).powi(2))
                .sum::<f64>()
        })
        .sum();
    residual + ridge_lambda * weights.norm_squared()
}

/// Mean and Cholesky-factored covariance (divisor n - 1, plus `jitter * I`) of
/// the normalized text-to-image differences.
pub fn fit_covariance_noise(corpus: &PairedCorpus, jitter: f64, scale: f64) -> Result<Adapter> {
    if corpus.rows() < 2 {
        return Err(GapError::InsufficientData(
            "covariance needs at least 2 pairs".into(),
        ));
    }
    covariance_noise_from_differences(&corpus.differences()?, jitter, scale)
}

pub(crate) fn covariance_noise_from_differences(
    diffs: &[Vec<f64>],
    jitter: f64,
    scale: f64,
) -> Result<Adapter> {
    if !(jitter.is_finite() && jitter >= 0.0) {
        return Err(GapError::Parameter(format!(
            "jitter must be >= 0, got {jitter}"
        )));
    }
    if !(scale.is_finite() && scale >= 0.0) {
        return Err(GapError::Parameter(format!(
            "scale must be >= 0, got {scale}"
        )));
    }
    let mu = vecmath::mean_rows(diffs);
    let mut sigma = vecmath::covariance(diffs, &mu);
    for k in 0..mu.len() {
        sigma[(k, k)] += jitter;
    }
    let chol = sigma
        .cholesky()
        .ok_or(GapError::NotPositiveDefinite { jitter })?;
    let chol_l = chol.unpack();
    if (0..mu.len()).any(|k| !(chol_l[(k, k)] > 0.0)) {
        return Err(GapError::NotPositiveDefinite { jitter });
    }
    Ok(Adapter::CovarianceNoise { mu, chol_l, scale })
}

/// `normalize(v + scale (mu + L z))`. `scale = 0` returns `v` without drawing.
pub fn apply_covariance_noise<R: Rng + ?Sized>(
    v: &[f64],
    adapter: &Adapter,
    rng: &mut R,
) -> Result<Vec<f64>> {
    check_unit(v)?;
    let Adapter::CovarianceNoise { mu, scale, .. } = adapter else {
        return Err(GapError::Parameter(format!(
            "expected covariance noise, got {}",
            adapter.kind()
        )));
    };
    check_dim(mu.len(), v.len())?;
    if *scale == 0.0 {
        return Ok(v.to_vec());
    }
    let p = adapter.sample_perturbation(rng)?;
    let mut out: Vec<f64> = v.iter().zip(&p).map(|(a, b)| a + b).collect();
    vecmath::normalize_in_place(&mut out, 0)?;
    Ok(out)
}

/// An ordered, nonempty chain of adapters of uniform dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterPipeline {
    steps: Vec<Adapter>,
}

impl AdapterPipeline {
    pub fn new(steps: Vec<Adapter>) -> Result<Self> {
        if steps.is_empty() {
            return Err(GapError::Parameter(
                "adapter pipeline must be nonempty".into(),
            ));
        }
        let mut dim = None;
        for step in &steps {
            step.validate()?;
            if let Some(d) = step.dim() {
                match dim {
                    None => dim = Some(d),
                    Some(prev) => check_dim(prev, d)?,
                }
            }
        }
        Ok(Self { steps })
    }

    pub fn single(step: Adapter) -> Result<Self> {
        Self::new(vec![step])
    }

    pub fn steps(&self) -> &[Adapter] {
        &self.steps
    }

    pub fn dim(&self) -> Option<usize> {
        self.steps.iter().find_map(Adapter::dim)
    }

    /// Run the steps in order on an already-unit vector.
    pub fn apply_unit<R: Rng + ?Sized>(&self, v: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mut cur = self.steps[0].apply_unit(v, rng)?;
        for step in &self.steps[1..] {
            cur = step.apply_unit(&cur, rng)?;
        }
        Ok(cur)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "steps": self.steps.iter().map(Adapter::to_json).collect::<Vec<_>>()
        })
    }

    /// Accepts either `{"steps": [...]}` or a single adapter document.
    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        match value.get("steps") {
            Some(serde_json::Value::Array(steps)) => Self::new(
                steps
                    .iter()
                    .map(Adapter::from_json)
                    .collect::<Result<_>>()?,
            ),
            Some(_) => Err(GapError::Document("\"steps\" must be an array".into())),
            None => Self::single(Adapter::from_json(value)?),
        }
    }
}

/// Normalize `v`, then apply every step of the pipeline.
pub fn apply_pipeline<R: Rng + ?Sized>(
    v: &[f64],
    pipeline: &AdapterPipeline,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if let Some(d) = pipeline.dim() {
        check_dim(d, v.len())?;
    }
    let unit = vecmath::normalized(v, 0)?;
    pipeline.apply_unit(&unit, rng)
}

// Wire format: a "type" tag plus base64 of little-endian f64 arrays.
#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum AdapterDoc {
    GaussianNoise {
        w: f64,
    },
    ConstantShift {
        dim: usize,
        shift: String,
    },
    LinearMap {
        dim: usize,
        /// row-major
        weights: String,
        bias: String,
    },
    CovarianceNoise {
        dim: usize,
        mu: String,
        /// row-major
        chol_l: String,
        scale: f64,
    },
}

fn encode_f64s(xs: impl IntoIterator<Item = f64>) -> String {
    let bytes: Vec<u8> = xs.into_iter().flat_map(f64::to_le_bytes).collect();
    B64.encode(bytes)
}

fn decode_f64s(s: &str, expected: usize, field: &str) -> Result<Vec<f64>> {
    let bytes = B64
        .decode(s)
        .map_err(|e| GapError::Document(format!("{field}: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(GapError::Document(format!(
            "{field}: {} bytes, expected {}",
            bytes.len(),
            expected * 8
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |r| (0..m.ncols()).map(move |c| m[(r, c)]))
}

impl Adapter {
    pub fn to_json(&self) -> serde_json::Value {
        let doc = match self {
            Adapter::GaussianNoise { w } => AdapterDoc::GaussianNoise { w: *w },
            Adapter::ConstantShift { shift } => AdapterDoc::ConstantShift {
                dim: shift.len(),
                shift: encode_f64s(shift.iter().copied()),
            },
            Adapter::LinearMap { weights, bias } => AdapterDoc::LinearMap {
                dim: bias.len(),
                weights: encode_f64s(row_major(weights)),
                bias: encode_f64s(bias.iter().copied()),
            },
            Adapter::CovarianceNoise { mu, chol_l, scale } => AdapterDoc::CovarianceNoise {
                dim: mu.len(),
                mu: encode_f64s(mu.iter().copied()),
                chol_l: encode_f64s(row_major(chol_l)),
                scale: *scale,
            },
        };
        serde_json::to_value(doc).expect("adapter documents always serialize")
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Self> {
        let doc: AdapterDoc =
            serde_json::from_value(value.clone()).map_err(|e| GapError::Document(e.to_string()))?;
        let adapter = match doc {
            AdapterDoc::GaussianNoise { w } => Adapter::GaussianNoise { w },
            AdapterDoc::ConstantShift { dim, shift } => Adapter::ConstantShift {
                shift: decode_f64s(&shift, dim, "shift")?,
            },
            AdapterDoc::LinearMap { dim, weights, bias } => Adapter::LinearMap {
                weights: DMatrix::from_row_slice(
                    dim,
                    dim,
                    &decode_f64s(&weights, dim * dim, "weights")?,
                ),
                bias: decode_f64s(&bias, dim, "bias")?,
            },
            AdapterDoc::CovarianceNoise {
                dim,
                mu,
                chol_l,
                scale,
            } => Adapter::CovarianceNoise {
                mu: decode_f64s(&mu, dim, "mu")?,
                chol_l: DMatrix::from_row_slice(
                    dim,
                    dim,
                    &decode_f64s(&chol_l, dim * dim, "chol_l")?,
                ),
                scale,
            },
        };
        adapter.validate()?;
        Ok(adapter)
    }
}
