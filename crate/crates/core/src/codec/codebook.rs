//! Word↔token substitution tables used to stretch the 248-character name
//! budget.
//!
//! A codebook maps common words to short tokens; on the wire a substituted
//! word appears as `\` followed by the token. Tokens are required to be
//! prefix-free so that decoding by longest match is deterministic.

use std::collections::HashMap;
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

/// The substitution table shipped with the protocol, embedded at build time.
const DEFAULT_TABLE: &str = include_str!("../../data/default_codebook.tsv");

/// Errors raised while loading or constructing a codebook.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CodebookError {
    #[error("line {line}: expected `word<TAB>token`")]
    MissingSeparator { line: usize },
    #[error("line {line}: invalid word {word:?} (must be non-empty, without `\\` or `|`)")]
    InvalidWord { line: usize, word: String },
    #[error(
        "line {line}: invalid token {token:?} (must be non-empty, start with a letter or digit, \
         and contain neither `\\` nor `|`)"
    )]
    InvalidToken { line: usize, token: String },
    #[error("line {line}: duplicate word {word:?}")]
    DuplicateWord { line: usize, word: String },
    #[error("line {line}: duplicate token {token:?}")]
    DuplicateToken { line: usize, token: String },
    #[error("line {line}: token {token:?} is a prefix of {other:?} (or vice versa)")]
    PrefixConflict {
        line: usize,
        token: String,
        other: String,
    },
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
}

/// A validated word↔token substitution table.
///
/// Invariants enforced at construction: words are unique, non-empty and free
/// of `\` and `|`; tokens are unique, non-empty, start with a letter or
/// digit, contain neither `\` nor `|`, and no token is a prefix of another.
#[derive(Debug, Clone, Default)]
pub struct Codebook {
    /// Entries ordered by descending word length (ties by word).
    entries: Vec<(String, String)>,
    by_word: HashMap<String, String>,
    /// Tokens ordered by descending length for longest-match decoding.
    tokens_by_len: Vec<(String, String)>,
}

impl Codebook {
    /// The empty codebook: substitution is the identity.
    pub fn empty() -> Self {
        Codebook::default()
    }

    /// Builds a codebook from `(word, token)` pairs, validating all
    /// invariants. Reported line numbers are 1-based entry positions.
    pub fn from_entries<I, W, T>(pairs: I) -> Result<Self, CodebookError>
    where
        I: IntoIterator<Item = (W, T)>,
        W: Into<String>,
        T: Into<String>,
    {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (line, (word, token)) in pairs.into_iter().enumerate() {
            let line = line + 1;
            let word = word.into();
            let token = token.into();
            validate_entry(line, &word, &token, &entries)?;
            entries.push((word, token));
        }
        Ok(Self::from_validated(entries))
    }

    /// Parses the tab-separated source format: one `word<TAB>token` entry per
    /// line, `#` starts a comment line, blank lines are ignored.
    pub fn parse(source: &str) -> Result<Self, CodebookError> {
        let mut entries: Vec<(String, String)> = Vec::new();
        for (idx, raw) in source.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            let (word, token) = trimmed
                .split_once('\t')
                .ok_or(CodebookError::MissingSeparator { line })?;
            validate_entry(line, word, token, &entries)?;
            entries.push((word.to_string(), token.to_string()));
        }
        Ok(Self::from_validated(entries))
    }

    /// Reads and parses a codebook file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodebookError> {
        let path = path.as_ref();
        let source = std::fs::read_to_string(path).map_err(|e| CodebookError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&source)
    }

    /// The substitution table shipped with the crate: common English words
    /// mapped to one- and two-character tokens.
    pub fn default_table() -> &'static Codebook {
        static TABLE: OnceLock<Codebook> = OnceLock::new();
        TABLE.get_or_init(|| {
            Codebook::parse(DEFAULT_TABLE).expect("embedded codebook table is valid")
        })
    }

    fn from_validated(mut entries: Vec<(String, String)>) -> Self {
        entries.sort_by(|a, b| {
            b.0.chars()
                .count()
                .cmp(&a.0.chars().count())
                .then_with(|| a.0.cmp(&b.0))
        });
        let by_word = entries
            .iter()
            .map(|(w, t)| (w.clone(), t.clone()))
            .collect();
        let mut tokens_by_len: Vec<(String, String)> = entries
            .iter()
            .map(|(w, t)| (t.clone(), w.clone()))
            .collect();
        tokens_by_len.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        Codebook {
            entries,
            by_word,
            tokens_by_len,
        }
    }

    /// Token for an exactly matching word, if any.
    pub fn token_for(&self, word: &str) -> Option<&str> {
        self.by_word.get(word).map(String::as_str)
    }

    /// Longest token that is a prefix of `rest`, with its word. At most one
    /// token can match because tokens are prefix-free.
    pub fn match_token(&self, rest: &str) -> Option<(&str, &str)> {
        self.tokens_by_len
            .iter()
            .find(|(token, _)| rest.starts_with(token.as_str()))
            .map(|(token, word)| (token.as_str(), word.as_str()))
    }

    /// Entries ordered by descending word length.
    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn validate_entry(
    line: usize,
    word: &str,
    token: &str,
    existing: &[(String, String)],
) -> Result<(), CodebookError> {
    if word.is_empty() || word.contains('\\') || word.contains('|') {
        return Err(CodebookError::InvalidWord {
            line,
            word: word.to_string(),
        });
    }
    let starts_ok = token.chars().next().is_some_and(|c| c.is_alphanumeric());
    if !starts_ok || token.contains('\\') || token.contains('|') {
        return Err(CodebookError::InvalidToken {
            line,
            token: token.to_string(),
        });
    }
    for (w, t) in existing {
        if w == word {
            return Err(CodebookError::DuplicateWord {
                line,
                word: word.to_string(),
            });
        }
        if t == token {
            return Err(CodebookError::DuplicateToken {
                line,
                token: token.to_string(),
            });
        }
        if t.starts_with(token) || token.starts_with(t.as_str()) {
            return Err(CodebookError::PrefixConflict {
                line,
                token: token.to_string(),
                other: t.clone(),
            });
        }
    }
    Ok(())
}
