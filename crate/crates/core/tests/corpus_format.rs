use gapkit::embedstore::{
    decode_corpus, encode_corpus, load_corpus, load_corpus_unvalidated, save_corpus,
    save_corpus_with_meta, sidecar_path, validate_corpus, ValidationIssue,
};
use gapkit::{EmbeddingMatrix, GapError, PairedCorpus, Side};
use proptest::prelude::*;

const GOLDEN: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/three_pairs.clse");

#[test]
fn golden_three_pairs_parse() {
    let c = load_corpus(GOLDEN).unwrap();
    assert_eq!((c.rows(), c.dim()), (3, 2));
    assert_eq!(c.text.data(), &[1.0, 0.0, 0.0, 2.0, 0.6, 0.8]);
    assert_eq!(c.image.data(), &[0.5, 0.5, -1.0, 0.25, 3.0, -4.0]);
    assert_eq!(c.labels.as_deref(), Some(&[0, 1, 1][..]));
    assert_eq!(
        c.captions.as_deref().unwrap(),
        &["a cat", "two dogs", "zebra crossing"]
    );
    assert_eq!(c.ids, ["p1", "p2", "p3"]);
}

#[test]
fn golden_reencodes_to_same_bytes() {
    let bytes = std::fs::read(GOLDEN).unwrap();
    let c = decode_corpus(&bytes).unwrap();
    assert_eq!(encode_corpus(&c).unwrap(), bytes);
}

#[test]
fn truncated_and_padded_files_are_corrupt() {
    let bytes = std::fs::read(GOLDEN).unwrap();
    for cut in [bytes.len() - 1, 60, 21] {
        assert!(matches!(
            decode_corpus(&bytes[..cut]),
            Err(GapError::Corruption(_))
        ));
    }
    let mut padded = bytes.clone();
    padded.push(0);
    assert!(matches!(
        decode_corpus(&padded),
        Err(GapError::Corruption(_))
    ));
}

#[test]
fn bad_magic_and_version_rejected() {
    let mut bytes = std::fs::read(GOLDEN).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_corpus(&bytes), Err(GapError::Format(_))));
    let mut bytes = std::fs::read(GOLDEN).unwrap();
    bytes[4] = 9;
    assert!(matches!(decode_corpus(&bytes), Err(GapError::Format(_))));
}

#[test]
fn invalid_rows_listed_by_validation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.clse");
    let mut bytes = std::fs::read(GOLDEN).unwrap();
    // image row 1, col 0 -> NaN; text row 2 -> zeros
    let img = 20 + 24 + 8;
    bytes[img..img + 4].copy_from_slice(&f32::NAN.to_le_bytes());
    let t2 = 20 + 16;
    bytes[t2..t2 + 8].fill(0);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_corpus(&path).is_err());
    let report = validate_corpus(&load_corpus_unvalidated(&path).unwrap());
    assert!(report.issues.contains(&ValidationIssue::NonFinite {
        side: Side::Image,
        row: 1,
        col: 0
    }));
    assert!(report.issues.contains(&ValidationIssue::NearZeroRow {
        side: Side::Text,
        row: 2
    }));
}

#[test]
fn missing_file_is_io_error() {
    let err = load_corpus("/nonexistent/corpus.clse").unwrap_err();
    assert!(err.is_environmental());
}

#[test]
fn sidecar_written_next_to_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.clse");
    let c = load_corpus(GOLDEN).unwrap();
    save_corpus_with_meta(&c, &path, &serde_json::json!({"source": "test"})).unwrap();
    let meta = std::fs::read_to_string(sidecar_path(&path)).unwrap();
    assert!(meta.contains("\"source\""));
    assert_eq!(sidecar_path(&path), dir.path().join("c.meta.json"));
}

fn arb_corpus() -> impl Strategy<Value = PairedCorpus> {
    (1usize..12, 1usize..9, any::<bool>(), any::<bool>()).prop_flat_map(|(rows, dim, lab, cap)| {
        let n = rows * dim;
        let cell = prop_oneof![
            1.0f32..100.0,
            -100.0f32..-1.0,
            any::<f32>().prop_filter("finite, not tiny", |x| x.is_finite()
                && x.abs() > 1e-3
                && x.abs() < 1e18)
        ];
        (
            prop::collection::vec(cell.clone(), n),
            prop::collection::vec(cell, n),
            prop::collection::vec(-5i32..50, rows),
            prop::collection::vec("[a-z ]{0,12}|\\PC{0,6}", rows),
        )
            .prop_map(move |(t, i, labels, captions)| {
                let mut c = PairedCorpus::new(
                    EmbeddingMatrix::new(rows, dim, t).unwrap(),
                    EmbeddingMatrix::new(rows, dim, i).unwrap(),
                    (0..rows).map(|r| format!("id-{r}")).collect(),
                    None,
                    None,
                )
                .unwrap();
                if lab {
                    c.labels = Some(labels);
                }
                if cap {
                    c.captions = Some(captions);
                }
                c
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn save_load_roundtrip_is_bit_exact(c in arb_corpus()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.clse");
        save_corpus(&c, &path).unwrap();
        let back = load_corpus(&path).unwrap();
        let bits = |m: &EmbeddingMatrix| m.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.text), bits(&c.text));
        prop_assert_eq!(bits(&back.image), bits(&c.image));
        prop_assert_eq!(&back.ids, &c.ids);
        prop_assert_eq!(&back.labels, &c.labels);
        prop_assert_eq!(&back.captions, &c.captions);
        prop_assert_eq!(std::fs::read(&path).unwrap(), encode_corpus(&back).unwrap());
    }
}
