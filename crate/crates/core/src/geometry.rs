//! Modality-gap statistics and retrieval diagnostics. Everything is computed
//! on normalized copies of the corpus rows.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adapters::AdapterPipeline;
use crate::embedstore::PairedCorpus;
use crate::error::{GapError, Result};
use crate::rng;
use crate::vecmath::{self, dot, norm, ZERO_NORM};

pub const DEFAULT_UNPAIRED_SAMPLES: usize = 10_000;

pub fn cosine_similarity(u: &[f64], v: &[f64]) -> Result<f64> {
    vecmath::check_dim(u.len(), v.len())?;
    let (nu, nv) = (norm(u), norm(v));
    if !(nu >= ZERO_NORM) {
        return Err(GapError::DegenerateVector { row: 0 });
    }
    if !(nv >= ZERO_NORM) {
        return Err(GapError::DegenerateVector { row: 1 });
    }
    Ok((dot(u, v) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub mean_paired_cos: f64,
    pub mean_unpaired_cos: f64,
    pub gap_norm: f64,
    pub pairs_sampled: usize,
    /// Mean normalized image vector minus mean normalized text vector.
    pub gap_vector: Vec<f64>,
}

/// Paired vs. unpaired cosine statistics and the mean text-to-image offset.
///
/// Unpaired cosines are taken over `unpaired_samples` uniformly drawn index
/// pairs `(i, j)`, `i != j`, comparing `text_i` with `image_j`.
pub fn gap_stats(corpus: &PairedCorpus, unpaired_samples: usize, seed: u64) -> Result<GapReport> {
    let n = corpus.rows();
    if n < 2 {
        return Err(GapError::InsufficientData(format!(
            "gap statistics need at least 2 pairs, got {n}"
        )));
    }
    let text = corpus.normalized_text()?;
    let image = corpus.normalized_image()?;

    let paired = text.iter().zip(&image).map(|(t, i)| dot(t, i)).sum::<f64>() / n as f64;

    let mut stream = rng::substream(seed, "gap-stats/unpaired");
    let mut unpaired = 0.0;
    for _ in 0..unpaired_samples {
        let i = stream.gen_range(0..n);
        let mut j = stream.gen_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        unpaired += dot(&text[i], &image[j]);
    }
    let mean_unpaired = if unpaired_samples > 0 {
        unpaired / unpaired_samples as f64
    } else {
        f64::NAN
    };

    let mean_text = vecmath::mean_rows(&text);
    let mean_image = vecmath::mean_rows(&image);
    let gap_vector: Vec<f64> = mean_image
        .iter()
        .zip(&mean_text)
        .map(|(a, b)| a - b)
        .collect();

    Ok(GapReport {
        mean_paired_cos: paired.clamp(-1.0, 1.0),
        mean_unpaired_cos: mean_unpaired.clamp(-1.0, 1.0),
        gap_norm: norm(&gap_vector),
        pairs_sampled: unpaired_samples,
        gap_vector,
    })
}

/// Fraction of text rows whose paired image is among their `k` most similar
/// images. A pair counts as retrieved when fewer than `k` images score
/// strictly higher than it, so ties resolve in its favour.
pub fn retrieval_recall_at_k(
    corpus: &PairedCorpus,
    k: usize,
    adapter: Option<&AdapterPipeline>,
    seed: u64,
) -> Result<f64> {
    let n = corpus.rows();
    if k == 0 || k > n {
        return Err(GapError::Parameter(format!(
            "k must be in 1..={n}, got {k}"
        )));
    }
    let mut queries = corpus.normalized_text()?;
    if let Some(pipeline) = adapter {
        let mut stream = rng::substream(seed, "recall/adapter");
        for (row, q) in queries.iter_mut().enumerate() {
            *q = pipeline.apply_unit(q, &mut stream).map_err(|e| match e {
                GapError::DegenerateVector { .. } => GapError::DegenerateVector { row },
                other => other,
            })?;
        }
    }
    let image = corpus.normalized_image()?;
    let hits = queries
        .iter()
        .enumerate()
        .filter(|(j, q)| {
            let target = dot(q, &image[*j]);
            let better = image.iter().filter(|im| dot(q, im) > target).count();
            better < k
        })
        .count();
    Ok(hits as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedstore::EmbeddingMatrix;

    fn corpus(text: &[&[f32]], image: &[&[f32]]) -> PairedCorpus {
        PairedCorpus::from_matrices(
            EmbeddingMatrix::from_rows(text).unwrap(),
            EmbeddingMatrix::from_rows(image).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine_similarity(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(
            cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]),
            Err(GapError::DegenerateVector { .. })
        ));
    }

    #[test]
    fn swapped_axes_toy_corpus() {
        let c = corpus(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[0.0, 1.0], &[1.0, 0.0]]);
        let r = gap_stats(&c, 100, 0).unwrap();
        assert_eq!(r.mean_paired_cos, 0.0);
        assert_eq!(r.gap_vector, vec![0.0, 0.0]);
        assert_eq!(r.gap_norm, 0.0);
        // the only unpaired combinations are (0,1) and (1,0): both cos 1
        assert_eq!(r.mean_unpaired_cos, 1.0);
    }

    #[test]
    fn identical_modalities() {
        let c = corpus(
            &[&[3.0, 1.0], &[0.5, -2.0], &[1.0, 1.0]],
            &[&[3.0, 1.0], &[0.5, -2.0], &[1.0, 1.0]],
        );
        let r = gap_stats(&c, 50, 1).unwrap();
        assert!((r.mean_paired_cos - 1.0).abs() < 1e-9);
        assert!(r.gap_norm < 1e-9);
        assert_eq!(retrieval_recall_at_k(&c, 1, None, 0).unwrap(), 1.0);
    }

    #[test]
    fn single_pair_is_insufficient() {
        let c = corpus(&[&[1.0, 0.0]], &[&[1.0, 0.0]]);
        assert!(matches!(
            gap_stats(&c, 10, 0),
            Err(GapError::InsufficientData(_))
        ));
    }

    #[test]
    fn recall_k_bounds() {
        let c = corpus(&[&[1.0, 0.0], &[0.0, 1.0]], &[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(retrieval_recall_at_k(&c, 2, None, 0).unwrap(), 1.0);
        assert_eq!(retrieval_recall_at_k(&c, 1, None, 0).unwrap(), 0.0);
        assert!(matches!(
            retrieval_recall_at_k(&c, 3, None, 0),
            Err(GapError::Parameter(_))
        ));
    }
}
