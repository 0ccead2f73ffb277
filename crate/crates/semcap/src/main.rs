//! Command-line surface: build an index from a dataset, query captions,
//! inspect neighbors, and run batch evaluation.
//!
//! stdout carries only results; progress and warnings go to stderr. Exit
//! codes: 0 on success, 2 on usage or data errors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use semcap::corpus::{self, Dataset};
use semcap::engine::{self, QueryParams, DEFAULT_K};
use semcap::index::{read_index, write_index, IndexData, Metric};
use semcap::selector::{CullTrace, StopwordList};

const STOPWORDS_ENV: &str = "SEMCAP_STOPWORDS";

#[derive(Parser)]
#[command(
    name = "semcap",
    version,
    about = "Caption images by nearest-neighbor retrieval over embeddings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a dataset and write a searchable index file.
    Build(BuildArgs),
    /// Caption a query embedding against an index + dataset pair.
    Query(QueryArgs),
    /// Print the nearest neighbors of a query embedding.
    Neighbors(NeighborsArgs),
    /// Caption every row of a held-out set and report unigram F1.
    Eval(EvalArgs),
}

#[derive(Args)]
struct BuildArgs {
    /// Dataset: JSONL file, or COCO annotations JSON when --embeddings is given.
    dataset: PathBuf,
    /// Output index file.
    index: PathBuf,
    /// Binary embedding matrix to join with COCO annotations.
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Index file written by `semcap build`.
    index: PathBuf,
    /// Dataset the index was built from (supplies the captions).
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    embedding: EmbeddingSource,
    #[command(flatten)]
    search: SearchFlags,
    /// Stopword file (falls back to $SEMCAP_STOPWORDS, then the bundled list).
    #[arg(long)]
    stopwords: Option<PathBuf>,
    /// Database id to exclude from retrieval.
    #[arg(long)]
    exclude_id: Option<String>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct NeighborsArgs {
    /// Index file written by `semcap build`.
    index: PathBuf,
    #[command(flatten)]
    embedding: EmbeddingSource,
    #[command(flatten)]
    search: SearchFlags,
    /// Database id to exclude from retrieval.
    #[arg(long)]
    exclude_id: Option<String>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct EvalArgs {
    /// Index file written by `semcap build`.
    index: PathBuf,
    /// Dataset the index was built from (supplies the captions).
    dataset: PathBuf,
    /// Held-out JSONL with embeddings and reference captions.
    heldout: PathBuf,
    #[command(flatten)]
    search: SearchFlags,
    /// Stopword file (falls back to $SEMCAP_STOPWORDS, then the bundled list).
    #[arg(long)]
    stopwords: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
}

#[derive(Args)]
struct SearchFlags {
    /// Number of neighbors to retrieve.
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Distance metric: cosine, l1, l2, or linf.
    #[arg(long, default_value = "cosine", value_parser = Metric::from_str)]
    metric: Metric,
}

#[derive(Args)]
struct EmbeddingSource {
    /// Read the query embedding from a one-row binary matrix file instead
    /// of a JSON array on stdin.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(args) => cmd_build(args),
        Command::Query(args) => cmd_query(args),
        Command::Neighbors(args) => cmd_neighbors(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn load_dataset(path: &Path, coco_embeddings: Option<&Path>) -> Result<Dataset> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let reader = BufReader::new(file);
    match coco_embeddings {
        None => corpus::parse_jsonl(reader).with_context(|| format!("parsing {}", path.display())),
        Some(bin) => {
            let embeddings =
                File::open(bin).with_context(|| format!("cannot open {}", bin.display()))?;
            corpus::parse_coco_annotations(reader, BufReader::new(embeddings))
                .with_context(|| format!("joining {} with {}", path.display(), bin.display()))
        }
    }
}

fn load_index(path: &Path) -> Result<IndexData> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    read_index(BufReader::new(file)).with_context(|| format!("reading index {}", path.display()))
}

fn resolve_stopwords(flag: Option<&Path>) -> Result<StopwordList> {
    let (source, content) = if let Some(path) = flag {
        (
            path.display().to_string(),
            Some(
                std::fs::read_to_string(path)
                    .with_context(|| format!("cannot read stopword file {}", path.display()))?,
            ),
        )
    } else if let Ok(env_path) = std::env::var(STOPWORDS_ENV) {
        let path = PathBuf::from(&env_path);
        (
            format!("{env_path} (from ${STOPWORDS_ENV})"),
            Some(std::fs::read_to_string(&path).with_context(|| {
                format!(
                    "cannot read stopword file {} (from ${STOPWORDS_ENV})",
                    path.display()
                )
            })?),
        )
    } else {
        (
            "bundled default (100 common English words)".to_string(),
            None,
        )
    };
    eprintln!("stopwords: {source}");
    match content {
        Some(text) => StopwordList::parse(&text).map_err(Into::into),
        None => Ok(StopwordList::default_english()),
    }
}

/// Reads the query embedding: a JSON array of numbers on stdin, or row 0 of
/// a one-row binary matrix file.
fn read_embedding(source: &EmbeddingSource) -> Result<Vec<f64>> {
    match &source.embedding_file {
        Some(path) => {
            let file =
                File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
            let (matrix, _ids) = corpus::read_binary_matrix(BufReader::new(file))
                .with_context(|| format!("reading embedding file {}", path.display()))?;
            if matrix.count() != 1 {
                bail!(
                    "embedding file {} must contain exactly one row, found {}",
                    path.display(),
                    matrix.count()
                );
            }
            Ok(matrix.row(0).iter().map(|&v| f64::from(v)).collect())
        }
        None => {
            let mut input = String::new();
            std::io::stdin()
                .read_to_string(&mut input)
                .context("reading query embedding from stdin")?;
            let values: Vec<f64> = serde_json::from_str(input.trim())
                .context("query embedding must be a JSON array of numbers")?;
            if values.is_empty() {
                bail!("query embedding is empty");
            }
            Ok(values)
        }
    }
}

fn cmd_build(args: BuildArgs) -> Result<()> {
    let start = Instant::now();
    let dataset = load_dataset(&args.dataset, args.embeddings.as_deref())?;
    let data = IndexData::from_dataset(&dataset);
    let file = File::create(&args.index)
        .with_context(|| format!("cannot create {}", args.index.display()))?;
    let mut writer = BufWriter::new(file);
    write_index(&data, &mut writer)?;
    writer.flush()?;
    eprintln!("{} rows, dim {}", dataset.len(), dataset.embeddings().dim());
    eprintln!("built {} in {:?}", args.index.display(), start.elapsed());
    Ok(())
}

#[derive(Serialize)]
struct NeighborOut<'a> {
    id: &'a str,
    row: usize,
    distance: f64,
}

#[derive(Serialize)]
struct CaptionOut<'a> {
    caption: &'a str,
    metric: &'a str,
    k: usize,
    k_shortfall: bool,
    corpus_size: usize,
    zero_norm_skipped: usize,
    neighbors: Vec<NeighborOut<'a>>,
    trace: &'a CullTrace,
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let data = load_index(&args.index)?;
    let dataset = load_dataset(&args.dataset, None)?;
    data.validate_against(&dataset)
        .context("index and dataset do not describe the same rows")?;
    let stopwords = resolve_stopwords(args.stopwords.as_deref())?;
    let query = read_embedding(&args.embedding)?;

    let params = QueryParams {
        k: args.search.k,
        metric: args.search.metric,
        stopwords,
        exclude_id: args.exclude_id,
    };
    let start = Instant::now();
    let result = engine::caption(&data.index(), &dataset, &query, &params)?;
    eprintln!("query took {:?}", start.elapsed());
    if result.k_shortfall {
        eprintln!(
            "requested k={} but only {} rows were available",
            params.k,
            result.neighbors.len()
        );
    }

    match args.format {
        OutputFormat::Text => println!("{}", result.caption),
        OutputFormat::Json => {
            let out = CaptionOut {
                caption: &result.caption,
                metric: params.metric.name(),
                k: params.k,
                k_shortfall: result.k_shortfall,
                corpus_size: result.corpus_size,
                zero_norm_skipped: result.neighbors.zero_norm_skipped,
                neighbors: result
                    .neighbors
                    .entries
                    .iter()
                    .map(|n| NeighborOut {
                        id: &data.ids()[n.row],
                        row: n.row,
                        distance: n.distance,
                    })
                    .collect(),
                trace: &result.trace,
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

fn cmd_neighbors(args: NeighborsArgs) -> Result<()> {
    let data = load_index(&args.index)?;
    let query = read_embedding(&args.embedding)?;
    let exclude_row = args
        .exclude_id
        .as_deref()
        .and_then(|id| data.ids().iter().position(|x| x == id));
    let list =
        data.index()
            .knn_excluding(&query, args.search.k, args.search.metric, exclude_row)?;
    if list.len() < args.search.k {
        eprintln!(
            "requested k={} but only {} rows were available",
            args.search.k,
            list.len()
        );
    }
    if list.zero_norm_skipped > 0 {
        eprintln!(
            "skipped {} zero-norm rows under cosine",
            list.zero_norm_skipped
        );
    }

    match args.format {
        OutputFormat::Text => {
            for n in &list.entries {
                println!("{}\t{}", data.ids()[n.row], n.distance);
            }
        }
        OutputFormat::Json => {
            let out: Vec<NeighborOut> = list
                .entries
                .iter()
                .map(|n| NeighborOut {
                    id: &data.ids()[n.row],
                    row: n.row,
                    distance: n.distance,
                })
                .collect();
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalItemOut<'a> {
    id: &'a str,
    caption: &'a str,
    f1: f64,
}

#[derive(Serialize)]
struct EvalOut<'a> {
    items: Vec<EvalItemOut<'a>>,
    mean_f1: f64,
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let data = load_index(&args.index)?;
    let dataset = load_dataset(&args.dataset, None)?;
    data.validate_against(&dataset)
        .context("index and dataset do not describe the same rows")?;
    let heldout = load_dataset(&args.heldout, None)?;
    if heldout.embeddings().dim() != dataset.embeddings().dim() {
        bail!(
            "held-out dim {} does not match dataset dim {}",
            heldout.embeddings().dim(),
            dataset.embeddings().dim()
        );
    }
    let stopwords = resolve_stopwords(args.stopwords.as_deref())?;

    let params = QueryParams {
        k: args.search.k,
        metric: args.search.metric,
        stopwords,
        exclude_id: None,
    };
    let queries: Vec<(String, Vec<f64>)> = heldout
        .records()
        .iter()
        .enumerate()
        .map(|(row, record)| {
            (
                record.id.clone(),
                heldout
                    .embeddings()
                    .row(row)
                    .iter()
                    .map(|&v| f64::from(v))
                    .collect(),
            )
        })
        .collect();

    let start = Instant::now();
    let results = engine::batch_caption(&data.index(), &dataset, &queries, &params)?;
    eprintln!("captioned {} rows in {:?}", results.len(), start.elapsed());

    let mut scores = Vec::with_capacity(results.len());
    for (record, result) in heldout.records().iter().zip(&results) {
        let f1 = engine::eval_unigram_f1(&result.caption, &record.captions, &params.stopwords)?;
        scores.push(f1);
    }
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;

    match args.format {
        OutputFormat::Text => {
            for (record, f1) in heldout.records().iter().zip(&scores) {
                println!("{}\t{}", record.id, f1);
            }
            println!("mean\t{mean}");
        }
        OutputFormat::Json => {
            let out = EvalOut {
                items: heldout
                    .records()
                    .iter()
                    .zip(&results)
                    .zip(&scores)
                    .map(|((record, result), &f1)| EvalItemOut {
                        id: &record.id,
                        caption: &result.caption,
                        f1,
                    })
                    .collect(),
                mean_f1: mean,
            };
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
    }
    Ok(())
}
