//! Paired embedding corpora and the `CLSE` binary container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size            field
//! 0       4               magic "CLSE"
//! 4       2               version (u16) = 1
//! 6       2               flags (u16): bit 0 labels present, bit 1 captions present
//! 8       4               dim (u32) >= 1
//! 12      8               rows (u64) >= 1
//! 20      rows*dim*4      text block, row-major f32
//! ..      rows*dim*4      image block, row-major f32
//! ..      rows*4          labels, i32            (flag bit 0)
//! ..      rows*(4+len)    captions, u32 byte length + UTF-8 (flag bit 1)
//! ..      rows*(4+len)    ids, u32 byte length + UTF-8 (always)
//! ```
//!
//! Nothing may follow the id block. Vectors are stored raw; consumers normalize.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{GapError, Result, Side};
use crate::vecmath::{self, ZERO_NORM};

pub const MAGIC: [u8; 4] = *b"CLSE";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;

pub const FLAG_LABELS: u16 = 1 << 0;
pub const FLAG_CAPTIONS: u16 = 1 << 1;

/// Row-major f32 matrix of embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(GapError::Parameter("embedding dim must be >= 1".into()));
        }
        if rows.checked_mul(dim) != Some(data.len()) {
            return Err(GapError::Parameter(format!(
                "data length {} is not rows ({rows}) x dim ({dim})",
                data.len()
            )));
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != dim {
                return Err(GapError::Parameter(format!(
                    "row {i} has length {}, expected {dim}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), dim, data)
    }

    /// Rounds f64 rows to f32 storage.
    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let converted: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&x| x as f32).collect())
            .collect();
        Self::from_rows(&converted)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| x as f64).collect()
    }

    pub fn to_f64_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row_f64(i)).collect()
    }

    /// Unit-length f64 copies of every row.
    pub fn normalized_f64(&self) -> Result<Vec<Vec<f64>>> {
        (0..self.rows)
            .map(|i| vecmath::normalized(&self.row_f64(i), i))
            .collect()
    }

    pub fn select(&self, indices: &[usize]) -> EmbeddingMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        EmbeddingMatrix {
            rows: indices.len(),
            dim: self.dim,
            data,
        }
    }

    fn first_non_finite_row(&self) -> Option<usize> {
        self.data
            .iter()
            .position(|x| !x.is_finite())
            .map(|p| p / self.dim)
    }
}

/// Normalize every row to unit Euclidean length (computed in f64, stored f32).
pub fn normalize_rows(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let rows = m.normalized_f64()?;
    let mut data = Vec::with_capacity(m.data.len());
    for r in &rows {
        data.extend(r.iter().map(|&x| x as f32));
    }
    EmbeddingMatrix::new(m.rows, m.dim, data)
}

/// Aligned text and image embeddings: row `j` of each matrix describes item `ids[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedCorpus {
    pub text: EmbeddingMatrix,
    pub image: EmbeddingMatrix,
    pub ids: Vec<String>,
    pub labels: Option<Vec<i32>>,
    pub captions: Option<Vec<String>>,
}

impl PairedCorpus {
    /// Builds a corpus and rejects it if any invariant is violated.
    pub fn new(
        text: EmbeddingMatrix,
        image: EmbeddingMatrix,
        ids: Vec<String>,
        labels: Option<Vec<i32>>,
        captions: Option<Vec<String>>,
    ) -> Result<Self> {
        let corpus = Self {
            text,
            image,
            ids,
            labels,
            captions,
        };
        corpus.ensure_valid()?;
        Ok(corpus)
    }

    /// Ids default to the decimal row index.
    pub fn from_matrices(text: EmbeddingMatrix, image: EmbeddingMatrix) -> Result<Self> {
        let ids = (0..text.rows()).map(|i| i.to_string()).collect();
        Self::new(text, image, ids, None, None)
    }

    pub fn with_labels(mut self, labels: Vec<i32>) -> Result<Self> {
        self.labels = Some(labels);
        self.ensure_valid()?;
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.text.rows()
    }

    pub fn dim(&self) -> usize {
        self.text.dim()
    }

    pub fn normalized_text(&self) -> Result<Vec<Vec<f64>>> {
        self.text.normalized_f64()
    }

    pub fn normalized_image(&self) -> Result<Vec<Vec<f64>>> {
        self.image.normalized_f64()
    }

    /// normalize(image_j) - normalize(text_j) for every row.
    pub fn differences(&self) -> Result<Vec<Vec<f64>>> {
        let text = self.normalized_text()?;
        let image = self.normalized_image()?;
        Ok(text
            .iter()
            .zip(&image)
            .map(|(t, i)| i.iter().zip(t).map(|(a, b)| a - b).collect())
            .collect())
    }

    /// The rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> PairedCorpus {
        PairedCorpus {
            text: self.text.select(indices),
            image: self.image.select(indices),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
            captions: self
                .captions
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i].clone()).collect()),
        }
    }

    fn flags(&self) -> u16 {
        let mut flags = 0;
        if self.labels.is_some() {
            flags |= FLAG_LABELS;
        }
        if self.captions.is_some() {
            flags |= FLAG_CAPTIONS;
        }
        flags
    }

    fn ensure_valid(&self) -> Result<()> {
        for (side, m) in [(Side::Text, &self.text), (Side::Image, &self.image)] {
            if let Some(row) = m.first_non_finite_row() {
                return Err(GapError::NonFinite { side, row });
            }
        }
        match validate_corpus(self).issues.into_iter().next() {
            None => Ok(()),
            Some(issue) => Err(GapError::Validation(issue.to_string())),
        }
    }
}

/// One violated corpus invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValidationIssue {
    PairingMismatch {
        text_rows: usize,
        image_rows: usize,
        ids: usize,
    },
    DimensionMismatch {
        text_dim: usize,
        image_dim: usize,
    },
    EmptyCorpus,
    NonFinite {
        side: Side,
        row: usize,
        col: usize,
    },
    NearZeroRow {
        side: Side,
        row: usize,
    },
    DuplicateId {
        id: String,
        first_row: usize,
        row: usize,
    },
    LabelCount {
        expected: usize,
        actual: usize,
    },
    CaptionCount {
        expected: usize,
        actual: usize,
    },
}

impl std::fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ValidationIssue::PairingMismatch {
                text_rows,
                image_rows,
                ids,
            } => write!(
                f,
                "pairing mismatch: {text_rows} text rows, {image_rows} image rows, {ids} ids"
            ),
            ValidationIssue::DimensionMismatch {
                text_dim,
                image_dim,
            } => write!(f, "text dim {text_dim} != image dim {image_dim}"),
            ValidationIssue::EmptyCorpus => f.write_str("corpus has no rows"),
            ValidationIssue::NonFinite { side, row, col } => {
                write!(f, "non-finite value in {side} matrix at ({row}, {col})")
            }
            ValidationIssue::NearZeroRow { side, row } => {
                write!(f, "near-zero {side} row {row}")
            }
            ValidationIssue::DuplicateId { id, first_row, row } => {
                write!(f, "duplicate id {id:?} at rows {first_row} and {row}")
            }
            ValidationIssue::LabelCount { expected, actual } => {
                write!(f, "{actual} labels for {expected} rows")
            }
            ValidationIssue::CaptionCount { expected, actual } => {
                write!(f, "{actual} captions for {expected} rows")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }
}

/// Every violated invariant, with locations. Never fails.
pub fn validate_corpus(corpus: &PairedCorpus) -> ValidationReport {
    let mut issues = Vec::new();
    let rows = corpus.text.rows();
    if rows != corpus.image.rows() || rows != corpus.ids.len() {
        issues.push(ValidationIssue::PairingMismatch {
            text_rows: rows,
            image_rows: corpus.image.rows(),
            ids: corpus.ids.len(),
        });
    }
    if corpus.text.dim() != corpus.image.dim() {
        issues.push(ValidationIssue::DimensionMismatch {
            text_dim: corpus.text.dim(),
            image_dim: corpus.image.dim(),
        });
    }
    if rows == 0 && corpus.image.rows() == 0 {
        issues.push(ValidationIssue::EmptyCorpus);
    }
    for (side, m) in [(Side::Text, &corpus.text), (Side::Image, &corpus.image)] {
        for row in 0..m.rows() {
            let r = m.row(row);
            if let Some(col) = r.iter().position(|x| !x.is_finite()) {
                issues.push(ValidationIssue::NonFinite { side, row, col });
                continue;
            }
            let norm = r
                .iter()
                .map(|&x| (x as f64) * (x as f64))
                .sum::<f64>()
                .sqrt();
            if norm < ZERO_NORM {
                issues.push(ValidationIssue::NearZeroRow { side, row });
            }
        }
    }
    let mut seen: HashMap<&str, usize> = HashMap::with_capacity(corpus.ids.len());
    for (row, id) in corpus.ids.iter().enumerate() {
        if let Some(&first_row) = seen.get(id.as_str()) {
            issues.push(ValidationIssue::DuplicateId {
                id: id.clone(),
                first_row,
                row,
            });
        } else {
            seen.insert(id, row);
        }
    }
    if let Some(labels) = &corpus.labels {
        if labels.len() != rows {
            issues.push(ValidationIssue::LabelCount {
                expected: rows,
                actual: labels.len(),
            });
        }
    }
    if let Some(captions) = &corpus.captions {
        if captions.len() != rows {
            issues.push(ValidationIssue::CaptionCount {
                expected: rows,
                actual: captions.len(),
            });
        }
    }
    ValidationReport { issues }
}

/// The fixed 20-byte file header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusHeader {
    pub version: u16,
    pub flags: u16,
    pub dim: u32,
    pub rows: u64,
}

impl CorpusHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..4].copy_from_slice(&MAGIC);
        out[4..6].copy_from_slice(&self.version.to_le_bytes());
        out[6..8].copy_from_slice(&self.flags.to_le_bytes());
        out[8..12].copy_from_slice(&self.dim.to_le_bytes());
        out[12..20].copy_from_slice(&self.rows.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(GapError::Format(format!(
                "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(GapError::Format(format!(
                "bad magic {:?}, expected \"CLSE\"",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let header = CorpusHeader {
            version: u16::from_le_bytes([bytes[4], bytes[5]]),
            flags: u16::from_le_bytes([bytes[6], bytes[7]]),
            dim: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            rows: u64::from_le_bytes(bytes[12..20].try_into().unwrap()),
        };
        if header.version != FORMAT_VERSION {
            return Err(GapError::Format(format!(
                "unsupported version {}",
                header.version
            )));
        }
        if header.flags & !(FLAG_LABELS | FLAG_CAPTIONS) != 0 {
            return Err(GapError::Format(format!(
                "unknown flags {:#06x}",
                header.flags
            )));
        }
        if header.dim == 0 || header.rows == 0 {
            return Err(GapError::Format("dim and rows must be >= 1".into()));
        }
        Ok(header)
    }
}

/// Serialize a corpus to its canonical byte form.
pub fn encode_corpus(corpus: &PairedCorpus) -> Result<Vec<u8>> {
    corpus.ensure_valid()?;
    let header = CorpusHeader {
        version: FORMAT_VERSION,
        flags: corpus.flags(),
        dim: u32::try_from(corpus.dim())
            .map_err(|_| GapError::Parameter("dim exceeds u32".into()))?,
        rows: corpus.rows() as u64,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * corpus.text.data().len());
    out.extend_from_slice(&header.encode());
    for m in [&corpus.text, &corpus.image] {
        for x in m.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    if let Some(labels) = &corpus.labels {
        for l in labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
    }
    let mut put_strings = |strings: &[String]| -> Result<()> {
        for s in strings {
            let len = u32::try_from(s.len())
                .map_err(|_| GapError::Parameter("string exceeds u32 length".into()))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        }
        Ok(())
    };
    if let Some(captions) = &corpus.captions {
        put_strings(captions)?;
    }
    put_strings(&corpus.ids)?;
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                GapError::Corruption(format!("truncated {what} at byte offset {}", self.pos))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn matrix(&mut self, rows: usize, dim: usize, what: &str) -> Result<EmbeddingMatrix> {
        let n = rows
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| GapError::Corruption("matrix size overflows".into()))?;
        let raw = self.take(n, what)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EmbeddingMatrix::new(rows, dim, data)
    }

    fn strings(&mut self, rows: usize, what: &str) -> Result<Vec<String>> {
        (0..rows)
            .map(|i| {
                let len = self.u32(what)? as usize;
                let raw = self.take(len, what)?;
                String::from_utf8(raw.to_vec())
                    .map_err(|_| GapError::Corruption(format!("{what} {i} is not valid UTF-8")))
            })
            .collect()
    }
}

/// Parse bytes without checking corpus invariants beyond the container structure.
/// [`validate_corpus`] can then report on the result.
pub fn decode_corpus_unvalidated(bytes: &[u8]) -> Result<PairedCorpus> {
    let header = CorpusHeader::decode(bytes)?;
    let rows = usize::try_from(header.rows)
        .map_err(|_| GapError::Corruption("row count exceeds address space".into()))?;
    let dim = header.dim as usize;
    let mut cur = Cursor {
        bytes,
        pos: HEADER_LEN,
    };
    // cheap bound before allocating: both blocks must fit in the file
    if (rows as u128) * (dim as u128) * 8 > (bytes.len() - HEADER_LEN) as u128 {
        return Err(GapError::Corruption(format!(
            "payload holds {} bytes, header promises {rows} x {dim} pairs",
            bytes.len() - HEADER_LEN
        )));
    }
    let text = cur.matrix(rows, dim, "text block")?;
    let image = cur.matrix(rows, dim, "image block")?;
    let labels = if header.flags & FLAG_LABELS != 0 {
        let raw = cur.take(rows * 4, "label block")?;
        Some(
            raw.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    } else {
        None
    };
    let captions = if header.flags & FLAG_CAPTIONS != 0 {
        Some(cur.strings(rows, "caption")?)
    } else {
        None
    };
    let ids = cur.strings(rows, "id")?;
    if cur.pos != bytes.len() {
        return Err(GapError::Corruption(format!(
            "{} trailing bytes after id block",
            bytes.len() - cur.pos
        )));
    }
    Ok(PairedCorpus {
        text,
        image,
        ids,
        labels,
        captions,
    })
}

pub fn decode_corpus(bytes: &[u8]) -> Result<PairedCorpus> {
    let corpus = decode_corpus_unvalidated(bytes)?;
    corpus.ensure_valid()?;
    Ok(corpus)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<PairedCorpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| GapError::io(path, e))?;
    decode_corpus(&bytes)
}

pub fn load_corpus_unvalidated(path: impl AsRef<Path>) -> Result<PairedCorpus> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| GapError::io(path, e))?;
    decode_corpus_unvalidated(&bytes)
}

pub fn save_corpus(corpus: &PairedCorpus, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_corpus(corpus)?;
    write_atomic(path.as_ref(), &bytes)
}

/// Writes the corpus plus a free-form provenance sidecar next to it.
pub fn save_corpus_with_meta(
    corpus: &PairedCorpus,
    path: impl AsRef<Path>,
    meta: &serde_json::Value,
) -> Result<()> {
    let path = path.as_ref();
    save_corpus(corpus, path)?;
    let text = serde_json::to_string_pretty(meta).map_err(|e| GapError::Document(e.to_string()))?;
    write_atomic(&sidecar_path(path), text.as_bytes())
}

/// `dir/name.clse` -> `dir/name.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// Write to a temporary sibling, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| GapError::Parameter(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(file_name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(GapError::io(path, e));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: &[&[f32]]) -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(rows).unwrap()
    }

    fn one_pair() -> PairedCorpus {
        PairedCorpus::from_matrices(matrix(&[&[1.0, 0.0]]), matrix(&[&[0.0, 1.0]])).unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let m = normalize_rows(&matrix(&[&[3.0, 4.0]])).unwrap();
        assert!((m.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((m.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_unit_vector_unchanged() {
        let v = [0.6f32, 0.0, -0.8];
        let m = normalize_rows(&matrix(&[&v])).unwrap();
        for (a, b) in m.row(0).iter().zip(v) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn normalize_zero_row_reports_index() {
        let err = normalize_rows(&matrix(&[&[1.0, 0.0], &[0.0, 0.0]])).unwrap_err();
        assert!(matches!(err, GapError::DegenerateVector { row: 1 }));
    }

    #[test]
    fn single_pair_file_size() {
        let bytes = encode_corpus(&one_pair()).unwrap();
        // header + 2 rows x 2 floats + id block ("0": 4-byte length + 1 byte)
        assert_eq!(bytes.len(), HEADER_LEN + 16 + 5);
        assert_eq!(&bytes[20..24], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[32..36], &1.0f32.to_le_bytes());
    }

    #[test]
    fn labels_set_flag_bit_zero() {
        let c = one_pair().with_labels(vec![3]).unwrap();
        let bytes = encode_corpus(&c).unwrap();
        let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
        assert_eq!(flags & FLAG_LABELS, FLAG_LABELS);
        assert_eq!(flags & FLAG_CAPTIONS, 0);
    }

    #[test]
    fn bad_magic_is_format_error() {
        let mut bytes = encode_corpus(&one_pair()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_corpus(&bytes), Err(GapError::Format(_))));
    }

    #[test]
    fn bad_version_is_format_error() {
        let mut bytes = encode_corpus(&one_pair()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_corpus(&bytes), Err(GapError::Format(_))));
    }

    #[test]
    fn truncation_is_corruption() {
        let bytes = encode_corpus(&one_pair()).unwrap();
        for cut in [HEADER_LEN + 3, bytes.len() - 1] {
            assert!(matches!(
                decode_corpus(&bytes[..cut]),
                Err(GapError::Corruption(_))
            ));
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            decode_corpus(&extra),
            Err(GapError::Corruption(_))
        ));
    }

    #[test]
    fn nan_on_load_reports_row() {
        let c = PairedCorpus::from_matrices(
            matrix(&[&[1.0, 0.0], &[0.0, 1.0]]),
            matrix(&[&[1.0, 0.0], &[0.0, 1.0]]),
        )
        .unwrap();
        let mut bytes = encode_corpus(&c).unwrap();
        // image row 1, col 0
        let off = HEADER_LEN + 16 + 8;
        bytes[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            decode_corpus(&bytes),
            Err(GapError::NonFinite {
                side: Side::Image,
                row: 1
            })
        ));
    }

    #[test]
    fn validate_reports_pairing_mismatch() {
        let c = PairedCorpus {
            text: matrix(&[&[1.0], &[1.0]]),
            image: matrix(&[&[1.0], &[1.0], &[1.0]]),
            ids: vec!["a".into(), "b".into()],
            labels: None,
            captions: None,
        };
        let report = validate_corpus(&c);
        assert!(report
            .issues
            .iter()
            .any(|i| matches!(i, ValidationIssue::PairingMismatch { .. })));
    }

    #[test]
    fn validate_cites_nan_location() {
        let mut image: Vec<Vec<f32>> = (0..7).map(|_| vec![1.0, 0.5]).collect();
        image[5][1] = f32::NAN;
        let c = PairedCorpus {
            text: EmbeddingMatrix::from_rows(&vec![vec![1.0f32, 0.5]; 7]).unwrap(),
            image: EmbeddingMatrix::from_rows(&image).unwrap(),
            ids: (0..7).map(|i| format!("r{i}")).collect(),
            labels: None,
            captions: None,
        };
        let report = validate_corpus(&c);
        assert_eq!(
            report.issues,
            vec![ValidationIssue::NonFinite {
                side: Side::Image,
                row: 5,
                col: 1
            }]
        );
    }

    #[test]
    fn validate_reports_duplicates_and_zero_rows() {
        let c = PairedCorpus {
            text: matrix(&[&[1.0, 0.0], &[0.0, 0.0]]),
            image: matrix(&[&[1.0, 0.0], &[0.0, 1.0]]),
            ids: vec!["a".into(), "a".into()],
            labels: Some(vec![0]),
            captions: None,
        };
        let report = validate_corpus(&c);
        assert!(report.issues.contains(&ValidationIssue::NearZeroRow {
            side: Side::Text,
            row: 1
        }));
        assert!(report.issues.contains(&ValidationIssue::DuplicateId {
            id: "a".into(),
            first_row: 0,
            row: 1
        }));
        assert!(report.issues.contains(&ValidationIssue::LabelCount {
            expected: 2,
            actual: 1
        }));
    }

    #[test]
    fn valid_corpus_has_empty_report() {
        assert!(validate_corpus(&one_pair()).is_valid());
    }

    #[test]
    fn sidecar_sits_next_to_corpus() {
        assert_eq!(
            sidecar_path(Path::new("/tmp/x/coco.clse")),
            PathBuf::from("/tmp/x/coco.meta.json")
        );
    }
}
