//! Captioned-image datasets: parsing, validation, and row-aligned storage of
//! records and embedding vectors.

mod binary;

pub(crate) use binary::{expect_eof, read_matrix_section, write_matrix_section};
pub use binary::{read_binary_matrix, write_binary_matrix};

use std::collections::HashMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::selector::tokenize;

/// Embedding length produced by the upstream CNN's last hidden layer.
pub const DEFAULT_EMBEDDING_DIM: usize = 4096;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed JSON: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("line {line}: inconsistent embedding length: expected {expected}, found {found}")]
    InconsistentDim {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: record {id:?} has an empty captions array")]
    EmptyCaptions { line: usize, id: String },
    #[error("line {line}: record {id:?} has a caption with no tokens: {caption:?}")]
    TokenlessCaption {
        line: usize,
        id: String,
        caption: String,
    },
    #[error("line {line}: record {id:?} has a non-finite or out-of-range embedding value")]
    NonFinite { line: usize, id: String },
    #[error("line {line}: record id must not be empty")]
    EmptyId { line: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("embedding dimension must be positive")]
    ZeroDim,
    #[error("matrix value buffer length {len} is not a multiple of dim {dim}")]
    RaggedMatrix { len: usize, dim: usize },
    #[error("matrix row {row} contains a non-finite value")]
    NonFiniteRow { row: usize },
    #[error("record count {records} does not match embedding row count {rows}")]
    CountMismatch { records: usize, rows: usize },
    #[error("bad magic bytes: expected {expected:?}")]
    BadMagic { expected: &'static str },
    #[error("unsupported format version {0}")]
    BadVersion(u16),
    #[error("file truncated: {context}")]
    Truncated { context: &'static str },
    #[error("manifest line {row} is not valid UTF-8")]
    ManifestUtf8 { row: usize },
    #[error("id {id:?} contains a newline; the manifest is line-delimited")]
    IdWithNewline { id: String },
    #[error("trailing data after expected end of file")]
    TrailingData,
    #[error("stored norm for row {row} does not match the row's L2 norm")]
    NormMismatch { row: usize },
    #[error("row {row}: index id {index_id:?} does not match dataset id {dataset_id:?}")]
    IdMismatch {
        row: usize,
        index_id: String,
        dataset_id: String,
    },
    #[error("malformed annotations JSON: {0}")]
    CocoJson(#[source] serde_json::Error),
    #[error("annotation references undeclared image id {id:?}")]
    UndeclaredImage { id: String },
    #[error("image id {id:?} is present in the embedding manifest but has no captions")]
    MissingCaptions { id: String },
    #[error(
        "image id {id:?} is declared in the annotations but absent from the embedding manifest"
    )]
    MissingEmbedding { id: String },
    #[error("image id is neither a string nor an integer: {value}")]
    BadImageId { value: String },
}

/// An image id plus its reference captions. Row i of the dataset's embedding
/// matrix belongs to record i.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRecord {
    pub id: String,
    pub captions: Vec<String>,
}

/// Contiguous row-major store of fixed-dimension f32 vectors with
/// precomputed per-row L2 norms. Values are validated finite at
/// construction; norms accumulate in f64.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    dim: usize,
    values: Vec<f32>,
    norms: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, values: Vec<f32>) -> Result<Self, CorpusError> {
        if dim == 0 {
            return Err(CorpusError::ZeroDim);
        }
        if !values.len().is_multiple_of(dim) {
            return Err(CorpusError::RaggedMatrix {
                len: values.len(),
                dim,
            });
        }
        let count = values.len() / dim;
        let mut norms = Vec::with_capacity(count);
        for row in 0..count {
            let slice = &values[row * dim..(row + 1) * dim];
            if slice.iter().any(|v| !v.is_finite()) {
                return Err(CorpusError::NonFiniteRow { row });
            }
            norms.push(l2_norm(slice));
        }
        Ok(Self { dim, values, norms })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.norms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.norms.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Precomputed L2 norm of row i.
    pub fn norm(&self, i: usize) -> f64 {
        self.norms[i]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }
}

pub(crate) fn l2_norm(row: &[f32]) -> f64 {
    row.iter()
        .map(|&v| {
            let v = f64::from(v);
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Row-aligned records and embeddings: record i describes embedding row i.
/// Immutable after construction and safe to share across readers.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<ImageRecord>,
    embeddings: EmbeddingMatrix,
    row_by_id: HashMap<String, usize>,
}

impl Dataset {
    /// Validates the row-alignment and id-uniqueness invariants. Caption
    /// content is the caller's responsibility (the parsers enforce it with
    /// line numbers attached).
    pub fn new(
        records: Vec<ImageRecord>,
        embeddings: EmbeddingMatrix,
    ) -> Result<Self, CorpusError> {
        if records.len() != embeddings.count() {
            return Err(CorpusError::CountMismatch {
                records: records.len(),
                rows: embeddings.count(),
            });
        }
        let mut row_by_id = HashMap::with_capacity(records.len());
        for (row, record) in records.iter().enumerate() {
            if row_by_id.insert(record.id.clone(), row).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: row + 1,
                    id: record.id.clone(),
                });
            }
        }
        Ok(Self {
            records,
            embeddings,
            row_by_id,
        })
    }

    pub fn records(&self) -> &[ImageRecord] {
        &self.records
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn row_of(&self, id: &str) -> Option<usize> {
        self.row_by_id.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.id.as_str())
    }
}

#[derive(Deserialize)]
struct JsonlRecord {
    id: String,
    embedding: Vec<f64>,
    captions: Vec<String>,
}

#[derive(Serialize)]
struct JsonlRecordOut<'a> {
    id: &'a str,
    embedding: Vec<f64>,
    captions: &'a [String],
}

fn validate_captions(line: usize, id: &str, captions: &[String]) -> Result<(), CorpusError> {
    if captions.is_empty() {
        return Err(CorpusError::EmptyCaptions {
            line,
            id: id.to_owned(),
        });
    }
    for caption in captions {
        if tokenize(caption).is_empty() {
            return Err(CorpusError::TokenlessCaption {
                line,
                id: id.to_owned(),
                caption: caption.clone(),
            });
        }
    }
    Ok(())
}

fn narrow_embedding(line: usize, id: &str, values: &[f64]) -> Result<Vec<f32>, CorpusError> {
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let narrowed = v as f32;
        if !v.is_finite() || !narrowed.is_finite() {
            return Err(CorpusError::NonFinite {
                line,
                id: id.to_owned(),
            });
        }
        out.push(narrowed);
    }
    Ok(out)
}

/// Parses the line-delimited JSON dataset format: one object per line with
/// `id`, `embedding`, and `captions` fields. Row order follows line order;
/// the first line's embedding length fixes the dimension.
pub fn parse_jsonl<R: BufRead>(reader: R) -> Result<Dataset, CorpusError> {
    let mut dim: Option<usize> = None;
    let mut records = Vec::new();
    let mut values: Vec<f32> = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();

    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: JsonlRecord =
            serde_json::from_str(&line).map_err(|source| CorpusError::Json {
                line: line_no,
                source,
            })?;
        if record.id.is_empty() {
            return Err(CorpusError::EmptyId { line: line_no });
        }
        match dim {
            None => {
                if record.embedding.is_empty() {
                    return Err(CorpusError::ZeroDim);
                }
                dim = Some(record.embedding.len());
            }
            Some(expected) if record.embedding.len() != expected => {
                return Err(CorpusError::InconsistentDim {
                    line: line_no,
                    expected,
                    found: record.embedding.len(),
                });
            }
            Some(_) => {}
        }
        if seen.insert(record.id.clone(), line_no).is_some() {
            return Err(CorpusError::DuplicateId {
                line: line_no,
                id: record.id,
            });
        }
        validate_captions(line_no, &record.id, &record.captions)?;
        values.extend(narrow_embedding(line_no, &record.id, &record.embedding)?);
        records.push(ImageRecord {
            id: record.id,
            captions: record.captions,
        });
    }

    let dim = dim.ok_or(CorpusError::EmptyDataset)?;
    let embeddings = EmbeddingMatrix::new(dim, values)?;
    Dataset::new(records, embeddings)
}

/// Serializes a dataset back to JSONL. Embedding values are emitted from the
/// stored f32s widened to f64, so parsing the output reproduces the matrix
/// bitwise.
pub fn write_jsonl<W: Write>(dataset: &Dataset, mut writer: W) -> Result<(), CorpusError> {
    for (row, record) in dataset.records().iter().enumerate() {
        let out = JsonlRecordOut {
            id: &record.id,
            embedding: dataset
                .embeddings()
                .row(row)
                .iter()
                .map(|&v| f64::from(v))
                .collect(),
            captions: &record.captions,
        };
        let json = serde_json::to_string(&out).expect("record serialization cannot fail");
        writer.write_all(json.as_bytes())?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: serde_json::Value,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    image_id: serde_json::Value,
    caption: String,
}

fn image_id_string(value: &serde_json::Value) -> Result<String, CorpusError> {
    match value {
        serde_json::Value::String(s) => Ok(s.clone()),
        serde_json::Value::Number(n) if n.is_i64() || n.is_u64() => Ok(n.to_string()),
        other => Err(CorpusError::BadImageId {
            value: other.to_string(),
        }),
    }
}

/// Joins a COCO-style captions file (`images` + `annotations`) with a binary
/// embedding matrix by image id. Output row order follows the matrix
/// manifest; each image's captions are sorted lexicographically so the
/// result is independent of annotation order.
pub fn parse_coco_annotations<R: BufRead, S: BufRead>(
    annotations: R,
    embeddings: S,
) -> Result<Dataset, CorpusError> {
    let coco: CocoFile = serde_json::from_reader(annotations).map_err(CorpusError::CocoJson)?;
    let (matrix, ids) = read_binary_matrix(embeddings)?;

    let mut declared: HashMap<String, Vec<String>> = HashMap::new();
    for image in &coco.images {
        declared.entry(image_id_string(&image.id)?).or_default();
    }
    for annotation in &coco.annotations {
        let id = image_id_string(&annotation.image_id)?;
        match declared.get_mut(&id) {
            Some(captions) => captions.push(annotation.caption.clone()),
            None => return Err(CorpusError::UndeclaredImage { id }),
        }
    }

    let manifest: HashMap<&str, usize> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();
    for id in declared.keys() {
        if !manifest.contains_key(id.as_str()) {
            return Err(CorpusError::MissingEmbedding { id: id.clone() });
        }
    }

    let mut records = Vec::with_capacity(ids.len());
    for (row, id) in ids.iter().enumerate() {
        let mut captions = declared
            .remove(id)
            .ok_or_else(|| CorpusError::MissingCaptions { id: id.clone() })?;
        if captions.is_empty() {
            return Err(CorpusError::MissingCaptions { id: id.clone() });
        }
        captions.sort_unstable();
        validate_captions(row + 1, id, &captions)?;
        records.push(ImageRecord {
            id: id.clone(),
            captions,
        });
    }

    Dataset::new(records, matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn jsonl(lines: &[&str]) -> Result<Dataset, CorpusError> {
        parse_jsonl(Cursor::new(lines.join("\n")))
    }

    #[test]
    fn minimal_well_formed_line() {
        let ds = jsonl(&[r#"{"id":"a","embedding":[1,0],"captions":["a cat sits"]}"#]).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.embeddings().dim(), 2);
        assert_eq!(ds.records()[0].id, "a");
        assert_eq!(ds.embeddings().row(0), &[1.0, 0.0]);
        assert_eq!(ds.row_of("a"), Some(0));
        assert_eq!(ds.row_of("b"), None);
    }

    #[test]
    fn inconsistent_embedding_length() {
        let err = jsonl(&[
            r#"{"id":"a","embedding":[1,0],"captions":["a cat"]}"#,
            r#"{"id":"b","embedding":[1,0,3],"captions":["a dog"]}"#,
        ])
        .unwrap_err();
        assert!(matches!(
            err,
            CorpusError::InconsistentDim {
                line: 2,
                expected: 2,
                found: 3
            }
        ));
    }

    #[test]
    fn duplicate_id_is_reported_with_line() {
        let err = jsonl(&[
            r#"{"id":"a","embedding":[1],"captions":["x y"]}"#,
            r#"{"id":"a","embedding":[2],"captions":["z w"]}"#,
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId { line: 2, .. }));
    }

    #[test]
    fn empty_captions_rejected() {
        let err = jsonl(&[r#"{"id":"a","embedding":[1],"captions":[]}"#]).unwrap_err();
        assert!(matches!(err, CorpusError::EmptyCaptions { line: 1, .. }));
    }

    #[test]
    fn tokenless_caption_rejected() {
        let err = jsonl(&[r#"{"id":"a","embedding":[1],"captions":["..."]}"#]).unwrap_err();
        assert!(matches!(err, CorpusError::TokenlessCaption { line: 1, .. }));
    }

    #[test]
    fn out_of_f32_range_value_rejected() {
        let err = jsonl(&[r#"{"id":"a","embedding":[1e39],"captions":["a cat"]}"#]).unwrap_err();
        assert!(matches!(err, CorpusError::NonFinite { line: 1, .. }));
    }

    #[test]
    fn malformed_json_reports_line_number() {
        let err = jsonl(&[
            r#"{"id":"a","embedding":[1],"captions":["a cat"]}"#,
            r#"{"id":"b", nope"#,
        ])
        .unwrap_err();
        assert!(matches!(err, CorpusError::Json { line: 2, .. }));
    }

    #[test]
    fn empty_stream_is_an_error() {
        assert!(matches!(jsonl(&[]), Err(CorpusError::EmptyDataset)));
    }

    #[test]
    fn blank_lines_are_skipped() {
        let ds = jsonl(&[
            r#"{"id":"a","embedding":[1],"captions":["a cat"]}"#,
            "",
            r#"{"id":"b","embedding":[2],"captions":["a dog"]}"#,
        ])
        .unwrap();
        assert_eq!(ds.len(), 2);
    }

    #[test]
    fn generated_file_round_trips_field_by_field() {
        let dim = 4096;
        let mut lines = Vec::new();
        for i in 0..50 {
            let embedding: Vec<String> = (0..dim)
                .map(|j| format!("{:.6}", ((i * dim + j) % 97) as f64 * 0.125))
                .collect();
            lines.push(format!(
                r#"{{"id":"img{:04}","embedding":[{}],"captions":["caption one for {i}","caption two for {i}"]}}"#,
                i,
                embedding.join(",")
            ));
        }
        let ds = jsonl(&lines.iter().map(|s| s.as_str()).collect::<Vec<_>>()).unwrap();
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.embeddings().dim(), dim);

        let mut buf = Vec::new();
        write_jsonl(&ds, &mut buf).unwrap();
        let reparsed = parse_jsonl(Cursor::new(buf)).unwrap();
        assert_eq!(reparsed.records(), ds.records());
        assert_eq!(reparsed.embeddings(), ds.embeddings());
    }

    #[test]
    fn matrix_validates_shape_and_finiteness() {
        assert!(matches!(
            EmbeddingMatrix::new(0, vec![]),
            Err(CorpusError::ZeroDim)
        ));
        assert!(matches!(
            EmbeddingMatrix::new(2, vec![1.0, 2.0, 3.0]),
            Err(CorpusError::RaggedMatrix { len: 3, dim: 2 })
        ));
        assert!(matches!(
            EmbeddingMatrix::new(2, vec![1.0, f32::NAN]),
            Err(CorpusError::NonFiniteRow { row: 0 })
        ));
        let m = EmbeddingMatrix::new(2, vec![3.0, 4.0]).unwrap();
        assert_eq!(m.count(), 1);
        assert!((m.norm(0) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn zero_norm_rows_are_accepted_at_ingest() {
        let ds = jsonl(&[r#"{"id":"z","embedding":[0,0],"captions":["all zeros"]}"#]).unwrap();
        assert_eq!(ds.embeddings().norm(0), 0.0);
    }

    fn coco_pair(annotations: &str, ids: &[&str], rows: &[&[f32]]) -> Result<Dataset, CorpusError> {
        let dim = rows.first().map_or(1, |r| r.len());
        let values: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let matrix = EmbeddingMatrix::new(dim, values).unwrap();
        let mut bin = Vec::new();
        write_binary_matrix(
            &matrix,
            &ids.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            &mut bin,
        )
        .unwrap();
        parse_coco_annotations(Cursor::new(annotations.as_bytes()), Cursor::new(bin))
    }

    #[test]
    fn coco_join_minimal() {
        let annotations = r#"{
            "images": [{"id": 7}, {"id": 9}],
            "annotations": [
                {"image_id": 7, "caption": "a cat sits"},
                {"image_id": 9, "caption": "a dog runs"},
                {"image_id": 7, "caption": "the cat rests"},
                {"image_id": 9, "caption": "the dog naps"}
            ]
        }"#;
        let ds = coco_pair(annotations, &["9", "7"], &[&[1.0, 0.0], &[0.0, 1.0]]).unwrap();
        assert_eq!(ds.len(), 2);
        // Manifest order wins: row 0 is image 9.
        assert_eq!(ds.records()[0].id, "9");
        assert_eq!(ds.records()[0].captions.len(), 2);
        assert_eq!(ds.records()[1].id, "7");
        assert_eq!(ds.embeddings().row(0), &[1.0, 0.0]);
    }

    #[test]
    fn coco_manifest_id_without_captions_is_named() {
        let annotations = r#"{
            "images": [{"id": 1}, {"id": 2}],
            "annotations": [{"image_id": 1, "caption": "a cat"}]
        }"#;
        let err = coco_pair(annotations, &["1", "2"], &[&[1.0], &[2.0]]).unwrap_err();
        match err {
            CorpusError::MissingCaptions { id } => assert_eq!(id, "2"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn coco_annotation_id_missing_from_manifest() {
        let annotations = r#"{
            "images": [{"id": 1}, {"id": 2}],
            "annotations": [
                {"image_id": 1, "caption": "a cat"},
                {"image_id": 2, "caption": "a dog"}
            ]
        }"#;
        let err = coco_pair(annotations, &["1"], &[&[1.0]]).unwrap_err();
        match err {
            CorpusError::MissingEmbedding { id } => assert_eq!(id, "2"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn coco_undeclared_annotation_image() {
        let annotations = r#"{
            "images": [{"id": 1}],
            "annotations": [{"image_id": 5, "caption": "a ghost"}]
        }"#;
        let err = coco_pair(annotations, &["1"], &[&[1.0]]).unwrap_err();
        assert!(matches!(err, CorpusError::UndeclaredImage { .. }));
    }

    #[test]
    fn coco_shuffled_annotations_produce_identical_dataset() {
        let forward = r#"{
            "images": [{"id": "x"}, {"id": "y"}],
            "annotations": [
                {"image_id": "x", "caption": "first cat"},
                {"image_id": "x", "caption": "second cat"},
                {"image_id": "y", "caption": "first dog"},
                {"image_id": "y", "caption": "second dog"}
            ]
        }"#;
        let shuffled = r#"{
            "images": [{"id": "y"}, {"id": "x"}],
            "annotations": [
                {"image_id": "y", "caption": "second dog"},
                {"image_id": "x", "caption": "second cat"},
                {"image_id": "y", "caption": "first dog"},
                {"image_id": "x", "caption": "first cat"}
            ]
        }"#;
        let a = coco_pair(forward, &["x", "y"], &[&[1.0], &[2.0]]).unwrap();
        let b = coco_pair(shuffled, &["x", "y"], &[&[1.0], &[2.0]]).unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(a.embeddings(), b.embeddings());
    }
}
