//! Shared test helpers: an independent full-sort kNN oracle, random
//! instance generators, and the caption fixture loader.

#![allow(dead_code)]

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use semcap::corpus::{Dataset, EmbeddingMatrix, ImageRecord};
use semcap::index::Metric;

/// The candidate-sentence fixture: 50 captions of 10 retrieved images.
pub fn fixture_sentences() -> Vec<String> {
    include_str!("../fixtures/candidate_corpus.txt")
        .lines()
        .map(str::to_owned)
        .collect()
}

pub const FIXTURE_SELECTED: &str = "A train traveling down a train track next to trees.";

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Straightforward reference distance: recomputed per pair, no precomputed
/// norms, no normalized query.
pub fn oracle_distance(metric: Metric, a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    match metric {
        Metric::Cosine => {
            let norm_a = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_b = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(
                norm_a > 0.0 && norm_b > 0.0,
                "oracle cosine needs nonzero norms"
            );
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            (1.0 - dot / (norm_a * norm_b)).max(0.0)
        }
        Metric::L1 => a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum(),
        Metric::L2 => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt(),
        Metric::Linf => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max),
    }
}

/// Computes every distance, sorts by (distance, row), truncates to k.
/// Zero-norm rows are skipped under cosine, mirroring the contract.
pub fn oracle_knn(rows: &[Vec<f32>], query: &[f64], k: usize, metric: Metric) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for (row, values) in rows.iter().enumerate() {
        let widened: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        if metric == Metric::Cosine {
            let norm = widened.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
        }
        scored.push((row, oracle_distance(metric, query, &widened)));
    }
    scored.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn random_rows(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f32>> {
    let dist = Uniform::new(-1.0f32, 1.0f32);
    (0..count)
        .map(|_| (0..dim).map(|_| dist.sample(rng)).collect())
        .collect()
}

pub fn matrix_from_rows(rows: &[Vec<f32>]) -> EmbeddingMatrix {
    let dim = rows.first().map_or(1, Vec::len);
    let values: Vec<f32> = rows.iter().flatten().copied().collect();
    EmbeddingMatrix::new(dim, values).unwrap()
}

/// A dataset whose rows 0..count are strictly increasingly far from the
/// probe query under cosine, so `knn` with k = count returns them in row
/// order. Captions come from the given per-row lists.
pub fn ordered_dataset(captions_per_row: &[Vec<String>]) -> (Dataset, Vec<f64>) {
    let count = captions_per_row.len();
    let rows: Vec<Vec<f32>> = (0..count)
        .map(|i| vec![1.0, 0.2 * (i as f32 + 1.0)])
        .collect();
    let records: Vec<ImageRecord> = captions_per_row
        .iter()
        .enumerate()
        .map(|(i, captions)| ImageRecord {
            id: format!("img{i:03}"),
            captions: captions.clone(),
        })
        .collect();
    let dataset = Dataset::new(records, matrix_from_rows(&rows)).unwrap();
    (dataset, vec![1.0, 0.0])
}

/// The fixture corpus arranged as 10 records x 5 captions, neighbor order
/// equal to fixture order.
pub fn fixture_dataset() -> (Dataset, Vec<f64>) {
    let sentences = fixture_sentences();
    let per_row: Vec<Vec<String>> = sentences.chunks(5).map(|c| c.to_vec()).collect();
    assert_eq!(per_row.len(), 10);
    ordered_dataset(&per_row)
}

/// Random word pool for selector property tests: small vocabulary so culling
/// has real collisions.
pub fn random_corpus(rng: &mut impl Rng) -> Vec<String> {
    const POOL: [&str; 14] = [
        "train", "track", "bus", "road", "man", "dog", "red", "long", "down", "rides", "stops",
        "fast", "old", "new",
    ];
    let sentence_count = rng.gen_range(3..=50);
    (0..sentence_count)
        .map(|_| {
            let words = rng.gen_range(1..=8);
            (0..words)
                .map(|_| POOL[rng.gen_range(0..POOL.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect()
}
