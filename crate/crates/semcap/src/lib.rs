//! semcap: caption a query image embedding by retrieving the most similar
//! database images and selecting the most representative of their captions.
//!
//! The pipeline has three steps:
//!
//! 1. embeddings are ingested as precomputed vectors ([`corpus`]),
//! 2. the k nearest database rows are found by exact scan under cosine or a
//!    Minkowski distance ([`index`]),
//! 3. the neighbors' captions are bagged and culled by descending unigram
//!    frequency until one sentence survives ([`selector`]).
//!
//! [`engine`] ties the steps together and adds a unigram-F1 evaluation
//! helper; the `semcap` binary wraps it all in a CLI.

pub mod corpus;
pub mod engine;
pub mod index;
pub mod selector;

pub use corpus::{Dataset, EmbeddingMatrix, ImageRecord};
pub use engine::{batch_caption, caption, eval_unigram_f1, CaptionResult, QueryParams};
pub use index::{build_index, distance, knn, Metric, Neighbor, NeighborList, SearchIndex};
pub use selector::{select_caption, tokenize, CandidateCorpus, CullTrace, StopwordList};
