//! End-to-end captioning: retrieve the k nearest database images, bag their
//! captions into a candidate corpus, and select the most representative one.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::corpus::Dataset;
use crate::index::{Metric, NeighborList, SearchError, SearchIndex};
use crate::selector::{
    select_caption, tokenize, CandidateCorpus, CullTrace, SelectorError, StopwordList, Token,
};

/// Default neighbor count; works well for caption databases with a handful
/// of reference captions per image.
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Selector(#[from] SelectorError),
    #[error("index has {index_rows} rows but dataset has {dataset_rows}")]
    IndexDatasetMismatch {
        index_rows: usize,
        dataset_rows: usize,
    },
    #[error("query {index} failed: {source}")]
    BatchItem {
        index: usize,
        #[source]
        source: Box<EngineError>,
    },
    #[error("references list is empty")]
    EmptyReferences,
}

/// Query-time knobs: how many neighbors, which metric, which stopwords, and
/// an optional database id to leave out (for evaluation on training data).
#[derive(Debug, Clone)]
pub struct QueryParams {
    pub k: usize,
    pub metric: Metric,
    pub stopwords: StopwordList,
    pub exclude_id: Option<String>,
}

impl Default for QueryParams {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            metric: Metric::Cosine,
            stopwords: StopwordList::default_english(),
            exclude_id: None,
        }
    }
}

/// The selected caption plus everything needed to audit how it was chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaptionResult {
    pub caption: String,
    pub neighbors: NeighborList,
    /// Total captions bagged from the returned neighbors.
    pub corpus_size: usize,
    pub trace: CullTrace,
    /// True when fewer than the requested k neighbors were available.
    pub k_shortfall: bool,
}

/// Captions a query embedding against the indexed dataset.
///
/// The neighbors' captions are bagged in neighbor-then-caption order; rank
/// information does not influence selection. If the dataset holds fewer than
/// k rows the query proceeds with what is available and flags the shortfall.
pub fn caption(
    index: &SearchIndex<'_>,
    dataset: &Dataset,
    query: &[f64],
    params: &QueryParams,
) -> Result<CaptionResult, EngineError> {
    if index.count() != dataset.len() {
        return Err(EngineError::IndexDatasetMismatch {
            index_rows: index.count(),
            dataset_rows: dataset.len(),
        });
    }
    let exclude_row = params
        .exclude_id
        .as_deref()
        .and_then(|id| dataset.row_of(id));
    let neighbors = index.knn_excluding(query, params.k, params.metric, exclude_row)?;

    let texts: Vec<&str> = neighbors
        .rows()
        .flat_map(|row| dataset.records()[row].captions.iter().map(String::as_str))
        .collect();
    let corpus = CandidateCorpus::from_texts(texts)?;
    let corpus_size = corpus.len();
    let (caption, trace) = select_caption(&corpus, &params.stopwords)?;

    Ok(CaptionResult {
        caption,
        k_shortfall: neighbors.len() < params.k,
        neighbors,
        corpus_size,
        trace,
    })
}

/// Captions a batch of queries. Each query's own id is used as its
/// exclude-id, so evaluating over the training set never retrieves the query
/// row itself. Results are elementwise identical to sequential [`caption`]
/// calls; the first failing query aborts the batch with its index.
pub fn batch_caption(
    index: &SearchIndex<'_>,
    dataset: &Dataset,
    queries: &[(String, Vec<f64>)],
    params: &QueryParams,
) -> Result<Vec<CaptionResult>, EngineError> {
    let results: Vec<Result<CaptionResult, EngineError>> = queries
        .par_iter()
        .map(|(id, vector)| {
            let item_params = QueryParams {
                exclude_id: Some(id.clone()),
                ..params.clone()
            };
            caption(index, dataset, vector, &item_params)
        })
        .collect();

    let mut out = Vec::with_capacity(results.len());
    for (i, result) in results.into_iter().enumerate() {
        match result {
            Ok(r) => out.push(r),
            Err(e) => {
                return Err(EngineError::BatchItem {
                    index: i,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(out)
}

/// F1 overlap between the hypothesis's distinct non-stopword tokens and the
/// union of the references' distinct non-stopword tokens. A hypothesis with
/// no non-stopword tokens scores 0.
pub fn eval_unigram_f1(
    hypothesis: &str,
    references: &[String],
    stopwords: &StopwordList,
) -> Result<f64, EngineError> {
    if references.is_empty() {
        return Err(EngineError::EmptyReferences);
    }
    let distinct_content = |text: &str| -> std::collections::HashSet<Token> {
        tokenize(text)
            .into_iter()
            .filter(|t| !stopwords.contains(t))
            .collect()
    };
    let hypothesis_tokens = distinct_content(hypothesis);
    if hypothesis_tokens.is_empty() {
        return Ok(0.0);
    }
    let mut reference_tokens = std::collections::HashSet::new();
    for reference in references {
        reference_tokens.extend(distinct_content(reference));
    }
    let common = hypothesis_tokens.intersection(&reference_tokens).count();
    if common == 0 {
        return Ok(0.0);
    }
    let precision = common as f64 / hypothesis_tokens.len() as f64;
    let recall = common as f64 / reference_tokens.len() as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}
