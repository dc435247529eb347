use gapkit::adapters::{
    apply_pipeline, fit_covariance_noise, fit_linear, fit_mean_shift, linear_objective,
    random_shift,
};
use gapkit::embedstore::normalize_rows;
use gapkit::geometry::gap_stats;
use gapkit::rng::{self, Stream};
use gapkit::vecmath::{norm, normalized};
use gapkit::{Adapter, AdapterPipeline, EmbeddingMatrix, GapError, PairedCorpus};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn gaussian_rows(n: usize, d: usize, rng: &mut Stream) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

fn corpus(text: &[Vec<f64>], image: &[Vec<f64>]) -> PairedCorpus {
    PairedCorpus::from_matrices(
        EmbeddingMatrix::from_f64_rows(text).unwrap(),
        EmbeddingMatrix::from_f64_rows(image).unwrap(),
    )
    .unwrap()
}

fn random_orthogonal(d: usize, rng: &mut Stream) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

fn map_rows(a: &DMatrix<f64>, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    rows.iter()
        .map(|r| {
            (a * nalgebra::DVector::from_column_slice(r))
                .iter()
                .copied()
                .collect()
        })
        .collect()
}

#[test]
fn linear_recovers_orthogonal_map() {
    let mut r = rng::stream(11);
    let a = random_orthogonal(16, &mut r);
    let text: Vec<Vec<f64>> = gaussian_rows(200, 16, &mut r)
        .iter()
        .map(|v| normalized(v, 0).unwrap())
        .collect();
    let image = map_rows(&a, &text);
    let c = corpus(&text, &image);
    let Adapter::LinearMap { weights, bias } = fit_linear(&c, 0.0).unwrap() else {
        panic!("expected a linear map");
    };
    assert!((&weights - &a).abs().max() < 1e-6);
    assert!(norm(&bias) < 1e-6);
}

#[test]
fn linear_fit_is_a_minimum() {
    let mut r = rng::stream(12);
    let text = gaussian_rows(60, 5, &mut r);
    let image = gaussian_rows(60, 5, &mut r);
    let c = corpus(&text, &image);
    let (t, i) = (c.normalized_text().unwrap(), c.normalized_image().unwrap());
    for lambda in [0.0, 1e-2, 1.0] {
        let Adapter::LinearMap { weights, bias } = fit_linear(&c, lambda).unwrap() else {
            unreachable!()
        };
        let best = linear_objective(&t, &i, &weights, &bias, lambda);
        for _ in 0..50 {
            let dw = DMatrix::from_fn(5, 5, |_, _| 1e-3 * r.sample::<f64, _>(StandardNormal));
            let db: Vec<f64> = (0..5)
                .map(|_| 1e-3 * r.sample::<f64, _>(StandardNormal))
                .collect();
            let w2 = &weights + dw;
            let b2: Vec<f64> = bias.iter().zip(&db).map(|(a, b)| a + b).collect();
            assert!(linear_objective(&t, &i, &w2, &b2, lambda) >= best - 1e-12);
        }
    }
}

#[test]
fn rank_deficient_unregularized_fit_is_singular() {
    let mut r = rng::stream(13);
    // every text row lies in the plane x2 = 0
    let text: Vec<Vec<f64>> = gaussian_rows(30, 3, &mut r)
        .into_iter()
        .map(|mut v| {
            v[2] = 0.0;
            v
        })
        .collect();
    let image = gaussian_rows(30, 3, &mut r);
    let c = corpus(&text, &image);
    assert!(matches!(fit_linear(&c, 0.0), Err(GapError::Singular)));
    assert!(fit_linear(&c, 1e-3).is_ok());
}

#[test]
fn covariance_sampling_matches_scaled_sigma() {
    let mut r = rng::stream(14);
    let d = 8;
    let mix = DMatrix::from_fn(d, d, |_, _| r.sample::<f64, _>(StandardNormal));
    let text = gaussian_rows(400, d, &mut r);
    let image: Vec<Vec<f64>> = map_rows(&mix, &gaussian_rows(400, d, &mut r))
        .into_iter()
        .zip(&text)
        .map(|(m, t)| m.iter().zip(t).map(|(a, b)| b + 0.3 * a).collect())
        .collect();
    let scale = 1.7;
    let adapter = fit_covariance_noise(&corpus(&text, &image), 1e-6, scale).unwrap();
    let target = adapter.covariance().unwrap() * (scale * scale);

    let draws = 100_000;
    let mut sums = vec![0.0; d];
    let mut outer = DMatrix::<f64>::zeros(d, d);
    for _ in 0..draws {
        let p = adapter.sample_perturbation(&mut r).unwrap();
        for a in 0..d {
            sums[a] += p[a];
            for b in 0..d {
                outer[(a, b)] += p[a] * p[b];
            }
        }
    }
    let n = draws as f64;
    let emp = DMatrix::from_fn(d, d, |a, b| {
        (outer[(a, b)] - sums[a] * sums[b] / n) / (n - 1.0)
    });
    let rel = (&emp - &target).norm() / target.norm();
    assert!(rel < 0.03, "relative Frobenius error {rel}");
}

#[test]
fn mean_shift_equals_gap_vector() {
    let mut r = rng::stream(15);
    let text = gaussian_rows(120, 7, &mut r);
    let image = gaussian_rows(120, 7, &mut r);
    let c = corpus(&text, &image);
    let Adapter::ConstantShift { shift } = fit_mean_shift(&c).unwrap() else {
        unreachable!()
    };
    let report = gap_stats(&c, 100, 0).unwrap();
    for (a, b) in shift.iter().zip(&report.gap_vector) {
        assert!((a - b).abs() < 1e-9);
    }
    assert!((norm(&shift) - report.gap_norm).abs() < 1e-9);
}

#[test]
fn zero_noise_and_zero_shift_are_identity() {
    let mut r = rng::stream(16);
    let v = normalized(&gaussian_rows(1, 6, &mut r)[0], 0).unwrap();
    let p = AdapterPipeline::new(vec![
        Adapter::GaussianNoise { w: 0.0 },
        random_shift(6, 0.0, &mut r).unwrap(),
    ])
    .unwrap();
    let mut s = rng::stream(0);
    assert_eq!(p.apply_unit(&v, &mut s).unwrap(), v);
    // no draws were consumed
    assert_eq!(s.gen::<u64>(), rng::stream(0).gen::<u64>());
}

#[test]
fn pipeline_json_roundtrip_applies_identically() {
    let mut r = rng::stream(17);
    let text = gaussian_rows(50, 4, &mut r);
    let image = gaussian_rows(50, 4, &mut r);
    let c = corpus(&text, &image);
    let p = AdapterPipeline::new(vec![
        fit_mean_shift(&c).unwrap(),
        fit_linear(&c, 1e-3).unwrap(),
        fit_covariance_noise(&c, 1e-6, 0.5).unwrap(),
        Adapter::GaussianNoise { w: 0.08 },
    ])
    .unwrap();
    let back = AdapterPipeline::from_json(&p.to_json()).unwrap();
    assert_eq!(back, p);
    for row in &text {
        let a = apply_pipeline(row, &p, &mut rng::stream(3)).unwrap();
        let b = apply_pipeline(row, &back, &mut rng::stream(3)).unwrap();
        assert_eq!(a, b);
    }
}

fn arb_vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, d).prop_filter("nonzero", |v| norm(v) > 1e-3)
}

fn any_adapter(d: usize, seed: u64) -> Adapter {
    let mut r = rng::stream(seed);
    let text = gaussian_rows(3 * d, d, &mut r);
    let image = gaussian_rows(3 * d, d, &mut r);
    let c = corpus(&text, &image);
    match seed % 5 {
        0 => Adapter::GaussianNoise {
            w: r.gen_range(0.0..2.0),
        },
        1 => random_shift(d, r.gen_range(0.0..0.99), &mut r).unwrap(),
        2 => fit_mean_shift(&c).unwrap(),
        3 => fit_linear(&c, 1e-2).unwrap(),
        _ => fit_covariance_noise(&c, 1e-6, r.gen_range(0.0..3.0)).unwrap(),
    }
}

proptest! {
    #[test]
    fn normalize_is_idempotent(rows in prop::collection::vec(arb_vector(5), 1..6)) {
        let m = EmbeddingMatrix::from_f64_rows(&rows).unwrap();
        let once = normalize_rows(&m).unwrap();
        let twice = normalize_rows(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            prop_assert!((a - b).abs() <= 1e-6);
        }
    }

    #[test]
    fn adapter_outputs_stay_unit(v in arb_vector(6), seed in 0u64..1000, stream in any::<u64>()) {
        let a = any_adapter(6, seed);
        let p = AdapterPipeline::single(a).unwrap();
        match apply_pipeline(&v, &p, &mut rng::stream(stream)) {
            Ok(out) => prop_assert!((norm(&out) - 1.0).abs() < 1e-6),
            // a shift can cancel the input exactly only on a measure-zero set
            Err(e) => prop_assert!(matches!(e, GapError::DegenerateVector { .. }), "{}", e),
        }
    }

    #[test]
    fn mean_shift_matches_gap_for_random_corpora(seed in any::<u64>(), n in 2usize..40) {
        let mut r = rng::stream(seed);
        let c = corpus(&gaussian_rows(n, 3, &mut r), &gaussian_rows(n, 3, &mut r));
        let Adapter::ConstantShift { shift } = fit_mean_shift(&c).unwrap() else { unreachable!() };
        let g = gap_stats(&c, 10, seed).unwrap();
        for (a, b) in shift.iter().zip(&g.gap_vector) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
