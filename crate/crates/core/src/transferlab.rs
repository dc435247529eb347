//! Desk-scale cross-modal transfer: a synthetic two-modality corpus with a
//! planted gap, a linear softmax head trained by mini-batch gradient descent,
//! and the train-on-text / evaluate-on-image protocol.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adapters::{self, Adapter, AdapterPipeline};
use crate::embedstore::{EmbeddingMatrix, PairedCorpus};
use crate::error::{GapError, Result};
use crate::rng::{self, derive_seed, Stream};
use crate::vecmath::{self, dot, norm};

const STANDARD_SPEC: &str = include_str!("../configs/standard.json");
const STANDARD_TRAIN: &str = include_str!("../configs/standard_train.json");

const MAX_ROW_ATTEMPTS: usize = 10;

/// Per-row extra variation on the image side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageNoise {
    Isotropic {
        sd: f64,
    },
    /// `sd_major` along `rank` fixed random orthonormal directions plus
    /// isotropic `sd_minor`.
    LowRank {
        rank: usize,
        sd_major: f64,
        sd_minor: f64,
    },
}

/// Recipe for a labelled two-modality corpus with a known modality gap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpusSpec {
    pub n_classes: usize,
    pub rows: usize,
    pub dim: usize,
    /// Norm of every class prototype.
    pub class_sep: f64,
    /// Per-row jitter of the shared semantic vector around its prototype.
    #[serde(default = "default_semantic_sd")]
    pub semantic_sd: f64,
    /// When set, the semantic jitter lives in a fixed random subspace of this
    /// rank; outside it text rows vary only by `text_noise_sd`. The gap offsets
    /// and the low-rank image directions are then drawn orthogonal to it.
    #[serde(default)]
    pub semantic_rank: Option<usize>,
    pub text_offset_norm: f64,
    pub image_offset_norm: f64,
    pub text_noise_sd: f64,
    pub image_noise: ImageNoise,
    pub seed: u64,
}

fn default_semantic_sd() -> f64 {
    0.1
}

impl SyntheticCorpusSpec {
    /// The committed reference corpus recipe (`configs/standard.json`).
    pub fn standard() -> Self {
        serde_json::from_str(STANDARD_SPEC).expect("committed standard spec parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(GapError::Parameter("n_classes must be >= 2".into()));
        }
        if self.rows < self.n_classes {
            return Err(GapError::Parameter("rows must be >= n_classes".into()));
        }
        if self.dim < 2 {
            return Err(GapError::Parameter("dim must be >= 2".into()));
        }
        let mut scales = vec![
            self.class_sep,
            self.semantic_sd,
            self.text_offset_norm,
            self.image_offset_norm,
            self.text_noise_sd,
        ];
        match self.image_noise {
            ImageNoise::Isotropic { sd } => scales.push(sd),
            ImageNoise::LowRank {
                rank,
                sd_major,
                sd_minor,
            } => {
                if rank > self.dim {
                    return Err(GapError::Parameter(
                        "low-rank noise rank exceeds dim".into(),
                    ));
                }
                scales.extend([sd_major, sd_minor]);
            }
        }
        if let Some(r) = self.semantic_rank {
            let image_rank = match self.image_noise {
                ImageNoise::LowRank { rank, .. } => rank,
                ImageNoise::Isotropic { .. } => 0,
            };
            if r == 0 || r + image_rank.max(1) > self.dim {
                return Err(GapError::Parameter(
                    "semantic_rank must be >= 1 and leave room for the gap directions".into(),
                ));
            }
        }
        if scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(GapError::Parameter(
                "all scales must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

fn gaussian_vec(dim: usize, rng: &mut Stream) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_unit(dim: usize, rng: &mut Stream) -> Vec<f64> {
    loop {
        let v = gaussian_vec(dim, rng);
        if let Ok(u) = vecmath::normalized(&v, 0) {
            return u;
        }
    }
}

/// Gram-Schmidt on Gaussian draws, orthogonal to `exclude` (itself orthonormal).
fn random_orthonormal(
    count: usize,
    dim: usize,
    exclude: &[Vec<f64>],
    rng: &mut Stream,
) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(dim, rng);
        for b in exclude.iter().chain(&basis) {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if norm(&v) > 1e-6 {
            basis.push(vecmath::normalized(&v, 0).expect("nonzero"));
        }
    }
    basis
}

/// Draw a labelled corpus from `spec`. Row `j` has class `j % n_classes`.
///
/// With semantic vector `s = prototype_c + semantic_sd * g`:
///
/// ```text
/// text_j  = normalize(s + text_offset_norm  * u_text  + text_noise)
/// image_j = normalize(s + image_offset_norm * u_image + image_noise)
/// ```
///
/// where `u_text`, `u_image` are unit offsets fixed for the whole corpus.
pub fn generate_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<PairedCorpus> {
    spec.validate()?;
    let d = spec.dim;
    let mut proto_rng = rng::substream(spec.seed, "synth/prototypes");
    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| {
            random_unit(d, &mut proto_rng)
                .into_iter()
                .map(|x| x * spec.class_sep)
                .collect()
        })
        .collect();
    let semantic_basis = spec
        .semantic_rank
        .map(|r| random_orthonormal(r, d, &[], &mut rng::substream(spec.seed, "synth/semantic")));
    let nuisance = semantic_basis.as_deref().unwrap_or(&[]);
    let mut offset_rng = rng::substream(spec.seed, "synth/offsets");
    let u_text = random_orthonormal(1, d, nuisance, &mut offset_rng).remove(0);
    let u_image = random_orthonormal(1, d, nuisance, &mut offset_rng).remove(0);
    let basis = match spec.image_noise {
        ImageNoise::LowRank { rank, .. } => random_orthonormal(
            rank,
            d,
            nuisance,
            &mut rng::substream(spec.seed, "synth/basis"),
        ),
        ImageNoise::Isotropic { .. } => Vec::new(),
    };

    let mut rows_rng = rng::substream(spec.seed, "synth/rows");
    let mut text_rows = Vec::with_capacity(spec.rows);
    let mut image_rows = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for j in 0..spec.rows {
        let class = j % spec.n_classes;
        let mut attempt = 0;
        let (t, i) = loop {
            if attempt == MAX_ROW_ATTEMPTS {
                return Err(GapError::Validation(format!(
                    "row {j} stayed degenerate after {MAX_ROW_ATTEMPTS} attempts"
                )));
            }
            attempt += 1;
            let mut s = prototypes[class].clone();
            match &semantic_basis {
                None => s.iter_mut().for_each(|x| {
                    *x += spec.semantic_sd * rows_rng.sample::<f64, _>(StandardNormal)
                }),
                Some(basis) => {
                    for b in basis {
                        let g: f64 = rows_rng.sample(StandardNormal);
                        s.iter_mut()
                            .zip(b)
                            .for_each(|(x, y)| *x += spec.semantic_sd * g * y);
                    }
                }
            }
            let t: Vec<f64> = (0..d)
                .map(|k| {
                    s[k] + spec.text_offset_norm * u_text[k]
                        + spec.text_noise_sd * rows_rng.sample::<f64, _>(StandardNormal)
                })
                .collect();
            let mut i: Vec<f64> = (0..d)
                .map(|k| s[k] + spec.image_offset_norm * u_image[k])
                .collect();
            match spec.image_noise {
                ImageNoise::Isotropic { sd } => {
                    i.iter_mut()
                        .for_each(|x| *x += sd * rows_rng.sample::<f64, _>(StandardNormal));
                }
                ImageNoise::LowRank {
                    sd_major, sd_minor, ..
                } => {
                    for b in &basis {
                        let g: f64 = rows_rng.sample(StandardNormal);
                        i.iter_mut()
                            .zip(b)
                            .for_each(|(x, y)| *x += sd_major * g * y);
                    }
                    i.iter_mut()
                        .for_each(|x| *x += sd_minor * rows_rng.sample::<f64, _>(StandardNormal));
                }
            }
            if let (Ok(t), Ok(i)) = (vecmath::normalized(&t, j), vecmath::normalized(&i, j)) {
                break (t, i);
            }
        };
        text_rows.push(t);
        image_rows.push(i);
        labels.push(class as i32);
    }
    PairedCorpus::new(
        EmbeddingMatrix::from_f64_rows(&text_rows)?,
        EmbeddingMatrix::from_f64_rows(&image_rows)?,
        (0..spec.rows).map(|j| format!("syn-{j:06}")).collect(),
        Some(labels),
        None,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    /// Linear decay from the base rate to zero over all steps.
    LinearDecay,
    Constant,
}

/// Training hyper-parameters. Defaults: Adam, learning rate 3e-4 decaying
/// linearly, betas (0.9, 0.999), batch 128, 8 epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl TrainConfig {
    /// The committed lab training recipe (`configs/standard_train.json`),
    /// run long enough for the head to settle on the standard corpus.
    pub fn standard() -> Self {
        serde_json::from_str(STANDARD_TRAIN).expect("committed training config parses")
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            learning_rate: 3e-4,
            schedule: LrSchedule::LinearDecay,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            epochs: 8,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(GapError::Parameter("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(GapError::Parameter("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(GapError::Parameter("betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Multinomial logistic regression `softmax(W x + b)`; `weights` is
/// `n_classes x dim`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadModel {
    pub n_classes: usize,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub trained_epochs: usize,
}

impl HeadModel {
    pub fn zeros(n_classes: usize, dim: usize) -> Self {
        Self {
            n_classes,
            dim,
            weights: vec![0.0; n_classes * dim],
            bias: vec![0.0; n_classes],
            trained_epochs: 0,
        }
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_classes)
            .map(|c| dot(&self.weights[c * self.dim..(c + 1) * self.dim], x) + self.bias[c])
            .collect()
    }

    /// Highest logit; ties go to the lowest class index.
    pub fn predict(&self, x: &[f64]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate().skip(1) {
            if l > logits[best] {
                best = c;
            }
        }
        best
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn param(&self, k: usize) -> f64 {
        if k < self.weights.len() {
            self.weights[k]
        } else {
            self.bias[k - self.weights.len()]
        }
    }

    fn param_mut(&mut self, k: usize) -> &mut f64 {
        let nw = self.weights.len();
        if k < nw {
            &mut self.weights[k]
        } else {
            &mut self.bias[k - nw]
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Mean cross-entropy over `(features, labels)` and its gradient, laid out as
/// `[weights (row-major) | bias]`.
pub fn loss_and_gradient(
    head: &HeadModel,
    features: &[Vec<f64>],
    labels: &[usize],
) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; head.num_params()];
    let nw = head.weights.len();
    let mut loss = 0.0;
    for (x, &y) in features.iter().zip(labels) {
        let logits = head.logits(x);
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        loss += lse - logits[y];
        let mut p = softmax(&logits);
        p[y] -= 1.0;
        for (c, pc) in p.iter().enumerate() {
            let row = &mut grad[c * head.dim..(c + 1) * head.dim];
            row.iter_mut().zip(x).for_each(|(g, xi)| *g += pc * xi);
            grad[nw + c] += pc;
        }
    }
    let n = features.len().max(1) as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    (loss / n, grad)
}

pub fn mean_cross_entropy(head: &HeadModel, features: &[Vec<f64>], labels: &[usize]) -> f64 {
    let total: f64 = features
        .iter()
        .zip(labels)
        .map(|(x, &y)| {
            let logits = head.logits(x);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() - logits[y]
        })
        .sum();
    total / features.len().max(1) as f64
}

/// Map labels onto class indices, requiring every class in `0..K` to occur.
pub fn class_indices(labels: &[i32]) -> Result<(Vec<usize>, usize)> {
    if labels.is_empty() {
        return Err(GapError::Validation("no labels".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l < 0) {
        return Err(GapError::Validation(format!("negative label {bad}")));
    }
    let k = labels.iter().copied().max().unwrap() as usize + 1;
    let mut seen = vec![false; k];
    labels.iter().for_each(|&l| seen[l as usize] = true);
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(GapError::Validation(format!(
            "labels are not contiguous: class {missing} of 0..{k} never occurs"
        )));
    }
    Ok((labels.iter().map(|&l| l as usize).collect(), k))
}

/// One adapted training vector as seen by the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct Presentation<'a> {
    pub epoch: usize,
    pub row: usize,
    pub features: &'a [f64],
}

/// Mean cross-entropy of every epoch, measured on the batches as presented
/// (before each update).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingTrace {
    pub epoch_losses: Vec<f64>,
}

/// Train a softmax head on normalized rows of `vectors`.
///
/// Every presentation of a row passes through `pipeline` with a fresh draw of
/// its noise. Batch order comes from the `(seed, "train/batches")` stream and
/// adapter noise from `(seed, "train/noise")`, so conditions trained with the
/// same seed see the same batches and the same normal draws.
pub fn train_head(
    vectors: &EmbeddingMatrix,
    labels: &[i32],
    pipeline: Option<&AdapterPipeline>,
    hyper: &TrainConfig,
    seed: u64,
) -> Result<HeadModel> {
    train_head_observed(vectors, labels, pipeline, hyper, seed, &mut |_| {}).map(|(h, _)| h)
}

/// [`train_head`] that also reports every presentation and the loss trace.
pub fn train_head_observed(
    vectors: &EmbeddingMatrix,
    labels: &[i32],
    pipeline: Option<&AdapterPipeline>,
    hyper: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(Presentation<'_>),
) -> Result<(HeadModel, TrainingTrace)> {
    hyper.validate()?;
    if labels.len() != vectors.rows() {
        return Err(GapError::Validation(format!(
            "{} labels for {} rows",
            labels.len(),
            vectors.rows()
        )));
    }
    let (classes, k) = class_indices(labels)?;
    if let Some(d) = pipeline.and_then(AdapterPipeline::dim) {
        vecmath::check_dim(d, vectors.dim())?;
    }
    let inputs = vectors.normalized_f64()?;
    let n = inputs.len();
    let mut head = HeadModel::zeros(k, vectors.dim());
    let np = head.num_params();

    let mut batch_rng = rng::substream(seed, "train/batches");
    let mut noise_rng = rng::substream(seed, "train/noise");
    let steps_per_epoch = n.div_ceil(hyper.batch_size);
    let total_steps = (steps_per_epoch * hyper.epochs).max(1);
    let mut m = vec![0.0; np];
    let mut v = vec![0.0; np];
    let mut step = 0usize;
    let mut trace = TrainingTrace::default();

    let mut features: Vec<Vec<f64>> = Vec::with_capacity(hyper.batch_size);
    let mut batch_labels: Vec<usize> = Vec::with_capacity(hyper.batch_size);
    for epoch in 0..hyper.epochs {
        let order = rng::permutation(n, &mut batch_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(hyper.batch_size) {
            features.clear();
            batch_labels.clear();
            for &row in batch {
                let x = match pipeline {
                    Some(p) => p
                        .apply_unit(&inputs[row], &mut noise_rng)
                        .map_err(|e| match e {
                            GapError::DegenerateVector { .. } => GapError::DegenerateVector { row },
                            other => other,
                        })?,
                    None => inputs[row].clone(),
                };
                observer(Presentation {
                    epoch,
                    row,
                    features: &x,
                });
                features.push(x);
                batch_labels.push(classes[row]);
            }
            let (loss, grad) = loss_and_gradient(&head, &features, &batch_labels);
            epoch_loss += loss * batch.len() as f64;

            let lr = match hyper.schedule {
                LrSchedule::Constant => hyper.learning_rate,
                LrSchedule::LinearDecay => {
                    hyper.learning_rate * (1.0 - step as f64 / total_steps as f64)
                }
            };
            step += 1;
            match hyper.optimizer {
                Optimizer::Sgd => {
                    for (kp, g) in grad.iter().enumerate() {
                        *head.param_mut(kp) -= lr * g;
                    }
                }
                Optimizer::Adam => {
                    let bc1 = 1.0 - hyper.beta1.powi(step as i32);
                    let bc2 = 1.0 - hyper.beta2.powi(step as i32);
                    for (kp, g) in grad.iter().enumerate() {
                        m[kp] = hyper.beta1 * m[kp] + (1.0 - hyper.beta1) * g;
                        v[kp] = hyper.beta2 * v[kp] + (1.0 - hyper.beta2) * g * g;
                        let m_hat = m[kp] / bc1;
                        let v_hat = v[kp] / bc2;
                        *head.param_mut(kp) -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
                    }
                }
            }
        }
        trace.epoch_losses.push(epoch_loss / n as f64);
        head.trained_epochs = epoch + 1;
    }
    Ok((head, trace))
}

/// Fraction of normalized rows whose prediction equals the label.
pub fn evaluate_head(head: &HeadModel, vectors: &EmbeddingMatrix, labels: &[i32]) -> Result<f64> {
    vecmath::check_dim(head.dim, vectors.dim())?;
    if labels.len() != vectors.rows() {
        return Err(GapError::Validation(format!(
            "{} labels for {} rows",
            labels.len(),
            vectors.rows()
        )));
    }
    let inputs = vectors.normalized_f64()?;
    Ok(accuracy(head, &inputs, labels))
}

fn accuracy(head: &HeadModel, inputs: &[Vec<f64>], labels: &[i32]) -> f64 {
    if inputs.is_empty() {
        return 0.0;
    }
    let correct = inputs
        .iter()
        .zip(labels)
        .filter(|(x, &y)| y >= 0 && head.predict(x) == y as usize)
        .count();
    correct as f64 / inputs.len() as f64
}

/// Compare the analytic loss gradient with central finite differences on
/// `probes` randomly chosen parameters of `head`. Returns the largest
/// `|g_analytic - g_fd| / max(|g_analytic|, |g_fd|, 1e-8)`.
pub fn numerical_gradient_check(
    vectors: &EmbeddingMatrix,
    labels: &[i32],
    head: &HeadModel,
    probes: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    if probes == 0 {
        return Err(GapError::Parameter("probes must be >= 1".into()));
    }
    if !(step.is_finite() && step > 0.0) {
        return Err(GapError::Parameter("step must be > 0".into()));
    }
    vecmath::check_dim(head.dim, vectors.dim())?;
    let inputs = vectors.normalized_f64()?;
    let classes: Vec<usize> = labels
        .iter()
        .map(|&l| {
            usize::try_from(l)
                .ok()
                .filter(|&c| c < head.n_classes)
                .ok_or_else(|| {
                    GapError::Validation(format!("label {l} outside 0..{}", head.n_classes))
                })
        })
        .collect::<Result<_>>()?;
    let (_, analytic) = loss_and_gradient(head, &inputs, &classes);
    let mut probe_rng = rng::substream(seed, "gradcheck/probes");
    let mut worst: f64 = 0.0;
    let mut shifted = head.clone();
    for _ in 0..probes {
        let k = probe_rng.gen_range(0..head.num_params());
        let orig = head.param(k);
        *shifted.param_mut(k) = orig + step;
        let up = mean_cross_entropy(&shifted, &inputs, &classes);
        *shifted.param_mut(k) = orig - step;
        let down = mean_cross_entropy(&shifted, &inputs, &classes);
        *shifted.param_mut(k) = orig;
        let fd = (up - down) / (2.0 * step);
        let g = analytic[k];
        let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// A pipeline step, either fixed up front or fitted per seed on the
/// validation split (the held-out paired data).
#[derive(Debug, Clone, PartialEq)]
pub enum StepSpec {
    Noise {
        w: f64,
    },
    /// Fresh random direction per seed, from the `(seed, "shift/<step>")` stream.
    RandomShift {
        magnitude: f64,
    },
    MeanShift {
        negate: bool,
    },
    Linear {
        ridge_lambda: f64,
    },
    CovNoise {
        jitter: f64,
        scale: f64,
    },
    Fixed(Adapter),
}

impl StepSpec {
    fn parse(token: &str) -> Result<Self> {
        let (head, arg) = match token.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (token, None),
        };
        let num = |default: Option<f64>| -> Result<f64> {
            match arg {
                Some(a) => a
                    .parse::<f64>()
                    .map_err(|_| GapError::Parameter(format!("bad number in {token:?}"))),
                None => {
                    default.ok_or_else(|| GapError::Parameter(format!("{token:?} needs a value")))
                }
            }
        };
        Ok(match head {
            "noise" => StepSpec::Noise {
                w: num(Some(adapters::DEFAULT_NOISE_W))?,
            },
            "rng" => StepSpec::RandomShift {
                magnitude: num(None)?,
            },
            "mean" => StepSpec::MeanShift { negate: false },
            "neg_mean" => StepSpec::MeanShift { negate: true },
            "linear" => StepSpec::Linear {
                ridge_lambda: num(Some(adapters::DEFAULT_RIDGE_LAMBDA))?,
            },
            "cov" | "cov_noise" => StepSpec::CovNoise {
                jitter: adapters::DEFAULT_JITTER,
                scale: num(Some(adapters::DEFAULT_COV_SCALE))?,
            },
            other => {
                return Err(GapError::Parameter(format!(
                    "unknown condition step {other:?}"
                )))
            }
        })
    }
}

/// A named adapter recipe; an empty step list trains on plain text vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: String,
    pub steps: Vec<StepSpec>,
}

impl Condition {
    pub fn new(name: impl Into<String>, steps: Vec<StepSpec>) -> Self {
        Self {
            name: name.into(),
            steps,
        }
    }

    /// Parse `none`, or steps joined by `+`, e.g. `mean+noise:0.08`,
    /// `rng:0.5+noise:0.08`, `cov`, `linear:1e-4+noise:0.08`.
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        if text.is_empty() {
            return Err(GapError::Parameter("empty condition".into()));
        }
        let steps = if text == "none" {
            Vec::new()
        } else {
            text.split('+')
                .map(|t| StepSpec::parse(t.trim()))
                .collect::<Result<_>>()?
        };
        Ok(Self::new(text, steps))
    }

    fn resolve(
        &self,
        dim: usize,
        held_out: &PairedCorpus,
        seed: u64,
    ) -> Result<Option<AdapterPipeline>> {
        if self.steps.is_empty() {
            return Ok(None);
        }
        let mut steps = Vec::with_capacity(self.steps.len());
        for (k, spec) in self.steps.iter().enumerate() {
            steps.push(match spec {
                StepSpec::Noise { w } => Adapter::GaussianNoise { w: *w },
                StepSpec::RandomShift { magnitude } => adapters::random_shift(
                    dim,
                    *magnitude,
                    &mut rng::substream(seed, &format!("shift/{k}")),
                )?,
                StepSpec::MeanShift { negate } => {
                    let mut a = adapters::fit_mean_shift(held_out)?;
                    if *negate {
                        if let Adapter::ConstantShift { shift } = &mut a {
                            shift.iter_mut().for_each(|s| *s = -*s);
                        }
                    }
                    a
                }
                StepSpec::Linear { ridge_lambda } => adapters::fit_linear(held_out, *ridge_lambda)?,
                StepSpec::CovNoise { jitter, scale } => {
                    adapters::fit_covariance_noise(held_out, *jitter, *scale)?
                }
                StepSpec::Fixed(a) => a.clone(),
            });
        }
        AdapterPipeline::new(steps).map(Some)
    }
}

/// Deterministic 80/10/10 train/validation/test split of `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn split_rows(n: usize, seed: u64) -> Split {
    let order = rng::permutation(n, &mut rng::substream(seed, "split"));
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    Split {
        train: order[..n_train].to_vec(),
        val: order[n_train..n_train + n_val].to_vec(),
        test: order[n_train + n_val..].to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub seed: u64,
    pub train_acc: f64,
    pub text_eval_acc: f64,
    pub image_eval_acc: f64,
    /// Norm of the summed constant shifts in the resolved pipeline.
    pub shift_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub name: String,
    pub cells: Vec<CellResult>,
    pub mean_train_acc: f64,
    pub std_train_acc: f64,
    pub mean_text_eval_acc: f64,
    pub std_text_eval_acc: f64,
    pub mean_image_eval_acc: f64,
    pub std_image_eval_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub seeds: Vec<u64>,
    pub conditions: Vec<ConditionReport>,
}

impl TransferReport {
    pub fn condition(&self, name: &str) -> Option<&ConditionReport> {
        self.conditions.iter().find(|c| c.name == name)
    }

    /// Aligned text table, one row per condition.
    pub fn to_table(&self) -> String {
        let width = self
            .conditions
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max("condition".len());
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>15}  {:>15}  {:>15}",
            "condition", "train", "text_eval", "image_eval"
        );
        for c in &self.conditions {
            let _ = writeln!(
                out,
                "{:<width$}  {:>7.4} ± {:<5.4}  {:>7.4} ± {:<5.4}  {:>7.4} ± {:<5.4}",
                c.name,
                c.mean_train_acc,
                c.std_train_acc,
                c.mean_text_eval_acc,
                c.std_text_eval_acc,
                c.mean_image_eval_acc,
                c.std_image_eval_acc
            );
        }
        out
    }
}

/// For every seed: split 80/10/10, fit seed-dependent steps on the validation
/// pairs, train on (adapted) training text, and score held-out text and
/// held-out images.
pub fn cross_modal_experiment(
    corpus: &PairedCorpus,
    conditions: &[Condition],
    hyper: &TrainConfig,
    seeds: &[u64],
) -> Result<TransferReport> {
    let labels = corpus
        .labels
        .as_ref()
        .ok_or_else(|| GapError::Validation("transfer experiments need labels".into()))?;
    if seeds.is_empty() {
        return Err(GapError::Parameter("at least one seed is required".into()));
    }
    if conditions.is_empty() {
        return Err(GapError::Parameter(
            "at least one condition is required".into(),
        ));
    }
    let text_all = corpus.normalized_text()?;
    let image_all = corpus.normalized_image()?;

    let mut cells: Vec<Vec<CellResult>> = vec![Vec::with_capacity(seeds.len()); conditions.len()];
    for &seed in seeds {
        let split = split_rows(corpus.rows(), seed);
        if split.train.is_empty() || split.test.is_empty() || split.val.len() < 2 {
            return Err(GapError::InsufficientData(format!(
                "{} rows are too few for an 80/10/10 split",
                corpus.rows()
            )));
        }
        let held_out = corpus.subset(&split.val);
        let train_text = corpus.text.select(&split.train);
        let train_labels: Vec<i32> = split.train.iter().map(|&i| labels[i]).collect();
        let test_labels: Vec<i32> = split.test.iter().map(|&i| labels[i]).collect();
        let test_text: Vec<Vec<f64>> = split.test.iter().map(|&i| text_all[i].clone()).collect();
        let test_image: Vec<Vec<f64>> = split.test.iter().map(|&i| image_all[i].clone()).collect();

        for (ci, cond) in conditions.iter().enumerate() {
            let pipeline = cond.resolve(corpus.dim(), &held_out, seed)?;
            let head = train_head(
                &train_text,
                &train_labels,
                pipeline.as_ref(),
                hyper,
                derive_seed(seed, "train"),
            )?;
            let mut eval_rng = rng::substream(seed, "train-eval");
            let train_inputs: Vec<Vec<f64>> = split
                .train
                .iter()
                .map(|&i| match &pipeline {
                    Some(p) => p.apply_unit(&text_all[i], &mut eval_rng),
                    None => Ok(text_all[i].clone()),
                })
                .collect::<Result<_>>()?;
            let shift_norm = pipeline.as_ref().map_or(0.0, |p| {
                let mut total = vec![0.0; corpus.dim()];
                for step in p.steps() {
                    if let Adapter::ConstantShift { shift } = step {
                        total.iter_mut().zip(shift).for_each(|(t, s)| *t += s);
                    }
                }
                norm(&total)
            });
            cells[ci].push(CellResult {
                seed,
                train_acc: accuracy(&head, &train_inputs, &train_labels),
                text_eval_acc: accuracy(&head, &test_text, &test_labels),
                image_eval_acc: accuracy(&head, &test_image, &test_labels),
                shift_norm,
            });
        }
    }

    let conditions = conditions
        .iter()
        .zip(cells)
        .map(|(cond, cells)| {
            let col = |f: fn(&CellResult) -> f64| {
                vecmath::mean_std(&cells.iter().map(f).collect::<Vec<_>>())
            };
            let (mean_train_acc, std_train_acc) = col(|c| c.train_acc);
            let (mean_text_eval_acc, std_text_eval_acc) = col(|c| c.text_eval_acc);
            let (mean_image_eval_acc, std_image_eval_acc) = col(|c| c.image_eval_acc);
            ConditionReport {
                name: cond.name.clone(),
                cells,
                mean_train_acc,
                std_train_acc,
                mean_text_eval_acc,
                std_text_eval_acc,
                mean_image_eval_acc,
                std_image_eval_acc,
            }
        })
        .collect();
    Ok(TransferReport {
        seeds: seeds.to_vec(),
        conditions,
    })
}
