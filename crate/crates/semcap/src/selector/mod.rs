//! Consensus caption selection.
//!
//! Candidate sentences gathered from retrieved neighbors are tokenized into
//! lowercase unigrams, a frequency table is built once over the whole corpus,
//! and sentences are then culled by descending word frequency: each culling
//! word keeps only the sentences that contain it, until a single sentence
//! survives. Stopwords never drive culling, and a word absent from every
//! remaining sentence is skipped.

mod stopwords;

pub use stopwords::StopwordList;

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SelectorError {
    #[error("candidate corpus is empty")]
    EmptyCorpus,
    #[error("sentence {index} has no tokens: {text:?}")]
    EmptySentence { index: usize, text: String },
    #[error("stopword file line {line}: expected exactly one token, got {found}: {content:?}")]
    StopwordLine {
        line: usize,
        found: usize,
        content: String,
    },
}

/// A lowercase unigram: a maximal run of Unicode letters/digits.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Splits text into lowercase unigrams.
///
/// The whole text is lowercased first, then maximal runs of alphanumeric
/// characters become tokens; everything else separates. No stemming: "bus"
/// and "buses" are distinct tokens.
pub fn tokenize(text: &str) -> Vec<Token> {
    let lowered = text.to_lowercase();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in lowered.chars() {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else if !current.is_empty() {
            tokens.push(Token(std::mem::take(&mut current)));
        }
    }
    if !current.is_empty() {
        tokens.push(Token(current));
    }
    tokens
}

/// One candidate sentence: the original text plus its token sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    text: String,
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }
}

/// Ordered bag of candidate sentences. Duplicates are kept: repeated captions
/// from different neighbors legitimately amplify word frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateCorpus {
    sentences: Vec<Sentence>,
}

impl CandidateCorpus {
    /// Builds a corpus from sentence texts, tokenizing each. A sentence that
    /// yields no tokens is an error.
    pub fn from_texts<I, S>(texts: I) -> Result<Self, SelectorError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut sentences = Vec::new();
        for (index, text) in texts.into_iter().enumerate() {
            let text = text.into();
            let tokens = tokenize(&text);
            if tokens.is_empty() {
                return Err(SelectorError::EmptySentence { index, text });
            }
            sentences.push(Sentence { text, tokens });
        }
        Ok(Self { sentences })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct FreqEntry {
    count: u64,
    stop: bool,
}

/// Token occurrence counts over a corpus, computed once, with stopword
/// marking. Counts include multiplicity within a sentence and are never
/// recomputed during culling.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    entries: HashMap<Token, FreqEntry>,
    total: u64,
}

impl FrequencyTable {
    pub fn count(&self, token: &Token) -> u64 {
        self.entries.get(token).map_or(0, |e| e.count)
    }

    pub fn is_stop_flagged(&self, token: &Token) -> bool {
        self.entries.get(token).is_some_and(|e| e.stop)
    }

    /// Total token occurrences across all corpus sentences.
    pub fn total_occurrences(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Non-stop-flagged tokens in culling order: descending count, ties by
    /// ascending token.
    fn culling_order(&self) -> Vec<(&Token, u64)> {
        let mut words: Vec<(&Token, u64)> = self
            .entries
            .iter()
            .filter(|(_, e)| !e.stop)
            .map(|(t, e)| (t, e.count))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        words
    }
}

/// Counts every token occurrence in the corpus and flags stopword entries.
pub fn build_frequency_table(
    corpus: &CandidateCorpus,
    stopwords: &StopwordList,
) -> Result<FrequencyTable, SelectorError> {
    if corpus.is_empty() {
        return Err(SelectorError::EmptyCorpus);
    }
    let mut entries: HashMap<Token, FreqEntry> = HashMap::new();
    let mut total = 0u64;
    for sentence in corpus.sentences() {
        for token in sentence.tokens() {
            total += 1;
            entries
                .entry(token.clone())
                .or_insert(FreqEntry {
                    count: 0,
                    stop: stopwords.contains(token),
                })
                .count += 1;
        }
    }
    Ok(FrequencyTable { entries, total })
}

/// One culling step: the word applied, its initial frequency, and the number
/// of sentences alive before and after.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CullStep {
    pub word: Token,
    pub count: u64,
    pub remaining_before: usize,
    pub remaining_after: usize,
    pub skipped: bool,
}

/// Diagnostic record of a culling run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CullTrace {
    pub steps: Vec<CullStep>,
    /// Sentences still alive when the loop stopped.
    pub survivors: usize,
    /// True when the word list was exhausted with more than one survivor and
    /// the termination tie-break picked the winner.
    pub tie_break_applied: bool,
    /// Corpus index of the selected sentence.
    pub selected_index: usize,
}

/// Culls the corpus by descending word frequency until one sentence remains.
///
/// Words absent from every remaining sentence are skipped. If the word list
/// is exhausted with several survivors (their non-stopword token sets are
/// indistinguishable to the loop), the survivor with the largest sum of
/// initial counts over its distinct non-stopword tokens wins; remaining ties
/// go to the earliest sentence in corpus order.
pub fn cull(
    corpus: &CandidateCorpus,
    table: &FrequencyTable,
) -> Result<(String, CullTrace), SelectorError> {
    if corpus.is_empty() {
        return Err(SelectorError::EmptyCorpus);
    }

    let token_sets: Vec<std::collections::HashSet<&Token>> = corpus
        .sentences()
        .iter()
        .map(|s| s.tokens().iter().collect())
        .collect();

    let mut alive: Vec<usize> = (0..corpus.len()).collect();
    let mut steps = Vec::new();

    for (word, count) in table.culling_order() {
        if alive.len() == 1 {
            break;
        }
        let before = alive.len();
        let holders: Vec<usize> = alive
            .iter()
            .copied()
            .filter(|&i| token_sets[i].contains(word))
            .collect();
        if holders.is_empty() {
            steps.push(CullStep {
                word: word.clone(),
                count,
                remaining_before: before,
                remaining_after: before,
                skipped: true,
            });
            continue;
        }
        steps.push(CullStep {
            word: word.clone(),
            count,
            remaining_before: before,
            remaining_after: holders.len(),
            skipped: false,
        });
        alive = holders;
    }

    let survivors = alive.len();
    let (selected_index, tie_break_applied) = if survivors == 1 {
        (alive[0], false)
    } else {
        // Termination tie-break: largest sum of initial counts over the
        // sentence's distinct non-stopword tokens, then earliest index.
        let score = |i: usize| -> u64 {
            token_sets[i]
                .iter()
                .filter(|t| !table.is_stop_flagged(t))
                .map(|t| table.count(t))
                .sum()
        };
        let mut best = alive[0];
        let mut best_score = score(best);
        for &i in &alive[1..] {
            let s = score(i);
            if s > best_score {
                best = i;
                best_score = s;
            }
        }
        (best, true)
    };

    let trace = CullTrace {
        steps,
        survivors,
        tie_break_applied,
        selected_index,
    };
    Ok((corpus.sentences()[selected_index].text().to_owned(), trace))
}

/// Builds the frequency table and culls: returns the most representative
/// sentence's original text plus the culling trace.
pub fn select_caption(
    corpus: &CandidateCorpus,
    stopwords: &StopwordList,
) -> Result<(String, CullTrace), SelectorError> {
    let table = build_frequency_table(corpus, stopwords)?;
    cull(corpus, &table)
}
