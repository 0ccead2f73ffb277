//! Stopword lists: words too common to drive culling decisions.

use std::collections::HashSet;
use std::fs;
use std::io;
use std::path::Path;

use super::{tokenize, SelectorError, Token};

const DEFAULT_LIST: &str = include_str!("stopwords_en.txt");

/// Set of tokens ignored by the culling process. Membership is exact token
/// equality; entries are normalized through [`tokenize`] when parsed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StopwordList {
    tokens: HashSet<Token>,
}

impl StopwordList {
    /// The bundled list of 100 common English words.
    pub fn default_english() -> Self {
        Self::parse(DEFAULT_LIST).expect("bundled stopword list is well-formed")
    }

    /// An empty list: every word may drive culling.
    pub fn empty() -> Self {
        Self {
            tokens: HashSet::new(),
        }
    }

    pub fn from_tokens<I: IntoIterator<Item = Token>>(tokens: I) -> Self {
        Self {
            tokens: tokens.into_iter().collect(),
        }
    }

    /// Parses the stopword file format: UTF-8, one token per line, lines
    /// starting with `#` ignored. A non-comment line must tokenize to exactly
    /// one token.
    pub fn parse(content: &str) -> Result<Self, SelectorError> {
        let mut tokens = HashSet::new();
        for (i, line) in content.lines().enumerate() {
            if line.starts_with('#') {
                continue;
            }
            let mut line_tokens = tokenize(line);
            if line_tokens.len() != 1 {
                return Err(SelectorError::StopwordLine {
                    line: i + 1,
                    found: line_tokens.len(),
                    content: line.to_owned(),
                });
            }
            tokens.insert(line_tokens.pop().expect("length checked"));
        }
        Ok(Self { tokens })
    }

    pub fn load(path: &Path) -> io::Result<Result<Self, SelectorError>> {
        Ok(Self::parse(&fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &Token) -> bool {
        self.tokens.contains(token)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Default for StopwordList {
    fn default() -> Self {
        Self::default_english()
    }
}
