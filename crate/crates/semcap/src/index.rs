//! Exact top-k nearest-neighbor search over an embedding matrix.
//!
//! The scan is a single pass with a bounded max-heap of size k: O(N log k)
//! with no full sort in the production path. Cosine uses the matrix's
//! precomputed row norms and a query normalized once up front, so each row
//! costs one dot product. Distance ties break by ascending row index.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{CorpusError, Dataset, EmbeddingMatrix};

const NORMS_MAGIC: &[u8; 4] = b"NRMS";
/// Relative tolerance for validating stored norms against recomputed ones.
const NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("dimension mismatch: matrix dim {expected}, query dim {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("empty matrix")]
    EmptyMatrix,
    #[error("query vector contains a non-finite value")]
    NonFiniteQuery,
    #[error("zero-norm query vector cannot be searched under cosine distance")]
    ZeroNormQuery,
    #[error("zero-norm operand in cosine distance")]
    ZeroNormOperand,
}

/// Distance metric for the scan. Cosine is the default; the others are the
/// plain Minkowski distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    #[default]
    Cosine,
    L1,
    L2,
    Linf,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Cosine, Metric::L1, Metric::L2, Metric::Linf];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Cosine => "cosine",
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Linf => "linf",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Metric::Cosine),
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "linf" => Ok(Metric::Linf),
            other => Err(format!(
                "unknown metric {other:?} (expected cosine, l1, l2, or linf)"
            )),
        }
    }
}

/// One retrieved row and its distance from the query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    pub row: usize,
    pub distance: f64,
}

/// Neighbors in ascending distance order, ties broken by ascending row.
/// Under cosine, zero-norm rows cannot be ranked and are skipped; the skip
/// count is reported so shortfalls are explainable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
    pub zero_norm_skipped: usize,
}

impl NeighborList {
    pub fn rows(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|n| n.row)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Distance between two raw vectors, accumulated in f64.
pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> Result<f64, SearchError> {
    if a.len() != b.len() {
        return Err(SearchError::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    match metric {
        Metric::Cosine => {
            let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm_a == 0.0 || norm_b == 0.0 {
                return Err(SearchError::ZeroNormOperand);
            }
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            Ok((1.0 - dot / (norm_a * norm_b)).max(0.0))
        }
        Metric::L1 => Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()),
        Metric::L2 => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()),
        Metric::Linf => Ok(a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)),
    }
}

// Max-heap entry ordered by (distance, row); the worst candidate sits on top.
#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapEntry {
    distance: f64,
    row: usize,
}

impl Eq for HeapEntry {}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then_with(|| self.row.cmp(&other.row))
    }
}

fn scan(
    matrix: &EmbeddingMatrix,
    query: &[f64],
    k: usize,
    metric: Metric,
    exclude_row: Option<usize>,
) -> Result<NeighborList, SearchError> {
    if k == 0 {
        return Err(SearchError::ZeroK);
    }
    if matrix.is_empty() {
        return Err(SearchError::EmptyMatrix);
    }
    if query.len() != matrix.dim() {
        return Err(SearchError::DimensionMismatch {
            expected: matrix.dim(),
            found: query.len(),
        });
    }
    if query.iter().any(|v| !v.is_finite()) {
        return Err(SearchError::NonFiniteQuery);
    }

    // For cosine, normalize the query once so each row costs one dot product.
    let normalized_query: Option<Vec<f64>> = match metric {
        Metric::Cosine => {
            let norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(SearchError::ZeroNormQuery);
            }
            Some(query.iter().map(|x| x / norm).collect())
        }
        _ => None,
    };

    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::with_capacity(k + 1);
    let mut zero_norm_skipped = 0usize;

    for row in 0..matrix.count() {
        if exclude_row == Some(row) {
            continue;
        }
        let values = matrix.row(row);
        let distance = match metric {
            Metric::Cosine => {
                let row_norm = matrix.norm(row);
                if row_norm == 0.0 {
                    zero_norm_skipped += 1;
                    continue;
                }
                let nq = normalized_query.as_deref().expect("set for cosine");
                let dot: f64 = nq.iter().zip(values).map(|(q, &v)| q * f64::from(v)).sum();
                (1.0 - dot / row_norm).max(0.0)
            }
            Metric::L1 => query
                .iter()
                .zip(values)
                .map(|(q, &v)| (q - f64::from(v)).abs())
                .sum(),
            Metric::L2 => query
                .iter()
                .zip(values)
                .map(|(q, &v)| {
                    let d = q - f64::from(v);
                    d * d
                })
                .sum::<f64>()
                .sqrt(),
            Metric::Linf => query
                .iter()
                .zip(values)
                .map(|(q, &v)| (q - f64::from(v)).abs())
                .fold(0.0, f64::max),
        };

        let entry = HeapEntry { distance, row };
        if heap.len() < k {
            heap.push(entry);
        } else if let Some(worst) = heap.peek() {
            if entry < *worst {
                heap.pop();
                heap.push(entry);
            }
        }
    }

    let mut entries: Vec<HeapEntry> = heap.into_vec();
    entries.sort_unstable();
    Ok(NeighborList {
        entries: entries
            .into_iter()
            .map(|e| Neighbor {
                row: e.row,
                distance: e.distance,
            })
            .collect(),
        zero_norm_skipped,
    })
}

/// Exact top-k rows of the matrix nearest to the query under the metric.
pub fn knn(
    matrix: &EmbeddingMatrix,
    query: &[f64],
    k: usize,
    metric: Metric,
) -> Result<NeighborList, SearchError> {
    scan(matrix, query, k, metric, None)
}

/// Immutable view over a dataset's embeddings for querying. Any number of
/// searches may run concurrently.
#[derive(Debug, Clone, Copy)]
pub struct SearchIndex<'a> {
    matrix: &'a EmbeddingMatrix,
}

impl<'a> SearchIndex<'a> {
    pub fn new(matrix: &'a EmbeddingMatrix) -> Self {
        Self { matrix }
    }

    pub fn matrix(&self) -> &'a EmbeddingMatrix {
        self.matrix
    }

    pub fn count(&self) -> usize {
        self.matrix.count()
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn knn(
        &self,
        query: &[f64],
        k: usize,
        metric: Metric,
    ) -> Result<NeighborList, SearchError> {
        scan(self.matrix, query, k, metric, None)
    }

    /// Like [`SearchIndex::knn`] but never returns `exclude_row`; used for
    /// leave-one-out queries.
    pub fn knn_excluding(
        &self,
        query: &[f64],
        k: usize,
        metric: Metric,
        exclude_row: Option<usize>,
    ) -> Result<NeighborList, SearchError> {
        scan(self.matrix, query, k, metric, exclude_row)
    }
}

/// Builds the search structure over a dataset's embeddings. Row norms were
/// precomputed when the matrix was constructed, so this is a cheap view.
pub fn build_index(dataset: &Dataset) -> SearchIndex<'_> {
    SearchIndex::new(dataset.embeddings())
}

/// An index loaded from (or destined for) the persistence format: the
/// embedding matrix plus its id manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexData {
    matrix: EmbeddingMatrix,
    ids: Vec<String>,
}

impl IndexData {
    pub fn new(matrix: EmbeddingMatrix, ids: Vec<String>) -> Result<Self, CorpusError> {
        if ids.len() != matrix.count() {
            return Err(CorpusError::CountMismatch {
                records: ids.len(),
                rows: matrix.count(),
            });
        }
        Ok(Self { matrix, ids })
    }

    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            matrix: dataset.embeddings().clone(),
            ids: dataset.ids().map(str::to_owned).collect(),
        }
    }

    pub fn matrix(&self) -> &EmbeddingMatrix {
        &self.matrix
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index(&self) -> SearchIndex<'_> {
        SearchIndex::new(&self.matrix)
    }

    /// Checks row-alignment with a dataset: same count, same ids in the same
    /// order. Querying an index against a dataset it was not built from
    /// produces captions for the wrong rows.
    pub fn validate_against(&self, dataset: &Dataset) -> Result<(), CorpusError> {
        if self.ids.len() != dataset.len() {
            return Err(CorpusError::CountMismatch {
                records: dataset.len(),
                rows: self.ids.len(),
            });
        }
        for (row, (index_id, dataset_id)) in self.ids.iter().zip(dataset.ids()).enumerate() {
            if index_id != dataset_id {
                return Err(CorpusError::IdMismatch {
                    row,
                    index_id: index_id.clone(),
                    dataset_id: dataset_id.to_owned(),
                });
            }
        }
        Ok(())
    }
}

/// Writes the index persistence format: the binary matrix section followed
/// by `NRMS` and the per-row f64 norms.
pub fn write_index<W: Write>(data: &IndexData, writer: &mut W) -> Result<(), CorpusError> {
    crate::corpus::write_matrix_section(&data.matrix, &data.ids, writer)?;
    writer.write_all(NORMS_MAGIC)?;
    for &norm in data.matrix.norms() {
        writer.write_all(&norm.to_le_bytes())?;
    }
    Ok(())
}

/// Reads an index file, validating the stored norms against freshly
/// recomputed ones within relative tolerance.
pub fn read_index<R: BufRead>(mut reader: R) -> Result<IndexData, CorpusError> {
    let (matrix, ids) = crate::corpus::read_matrix_section(&mut reader)?;

    let mut magic = [0u8; 4];
    reader
        .read_exact(&mut magic)
        .map_err(|_| CorpusError::Truncated {
            context: "norms section magic",
        })?;
    if &magic != NORMS_MAGIC {
        return Err(CorpusError::BadMagic { expected: "NRMS" });
    }
    let mut stored = Vec::with_capacity(matrix.count());
    let mut buf8 = [0u8; 8];
    for _ in 0..matrix.count() {
        reader
            .read_exact(&mut buf8)
            .map_err(|_| CorpusError::Truncated {
                context: "norms payload",
            })?;
        stored.push(f64::from_le_bytes(buf8));
    }
    crate::corpus::expect_eof(&mut reader)?;

    for (row, (&on_disk, &recomputed)) in stored.iter().zip(matrix.norms()).enumerate() {
        let tolerance = NORM_TOLERANCE * recomputed.max(1.0);
        if (on_disk - recomputed).abs() > tolerance {
            return Err(CorpusError::NormMismatch { row });
        }
    }

    IndexData::new(matrix, ids)
}
