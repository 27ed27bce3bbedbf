//! Tokens, vocabularies and token sequences.

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Index of a token in a [`Vocab`].
pub type TokenId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VocabError {
    #[error("vocabulary must contain at least one token")]
    Empty,
    #[error("duplicate token label {0:?}")]
    Duplicate(String),
    #[error("token label must not be empty")]
    EmptyLabel,
    #[error("unknown token {label:?} at position {position}")]
    UnknownToken { label: String, position: usize },
}

/// Ordered set of distinct token labels.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
}

impl Vocab {
    pub fn new<I, S>(labels: I) -> Result<Self, VocabError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tokens: Vec<String> = labels.into_iter().map(Into::into).collect();
        if tokens.is_empty() {
            return Err(VocabError::Empty);
        }
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(VocabError::EmptyLabel);
            }
            if tokens[..i].contains(t) {
                return Err(VocabError::Duplicate(t.clone()));
            }
        }
        Ok(Self { tokens })
    }

    /// One single-character token per character of `letters`.
    pub fn from_chars(letters: &str) -> Result<Self, VocabError> {
        Self::new(letters.chars().map(String::from))
    }

    /// The three-token vocabulary `{A, B, C}` of the simulated testbench.
    pub fn abc() -> Self {
        Self::from_chars("ABC").expect("static vocabulary")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.tokens
    }

    pub fn label(&self, id: TokenId) -> &str {
        &self.tokens[id]
    }

    pub fn id(&self, label: &str) -> Option<TokenId> {
        self.tokens.iter().position(|t| t == label)
    }

    /// Looks a token up by a single-character label.
    pub fn id_of_char(&self, c: char) -> Option<TokenId> {
        let mut buf = [0u8; 4];
        self.id(c.encode_utf8(&mut buf))
    }

    /// True when every label is exactly one character, so sequences can be
    /// written as plain strings.
    pub fn is_single_char(&self) -> bool {
        self.tokens.iter().all(|t| t.chars().count() == 1)
    }

    /// Renders a sequence by concatenating labels.
    pub fn render(&self, seq: &[TokenId]) -> String {
        seq.iter().map(|&t| self.label(t)).collect()
    }

    /// Parses a string of single-character labels.
    pub fn parse_chars(&self, text: &str) -> Result<Sequence, VocabError> {
        text.chars()
            .enumerate()
            .map(|(position, c)| {
                self.id_of_char(c).ok_or(VocabError::UnknownToken {
                    label: c.to_string(),
                    position,
                })
            })
            .collect::<Result<Vec<_>, _>>()
            .map(Sequence::from)
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = VocabError;

    fn try_from(value: Vec<String>) -> Result<Self, Self::Error> {
        Vocab::new(value)
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// An owned token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Sequence(Vec<TokenId>);

impl Sequence {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn as_slice(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<TokenId> {
        self.0
    }

    pub fn push(&mut self, t: TokenId) {
        self.0.push(t)
    }

    pub fn extend_from_slice(&mut self, tokens: &[TokenId]) {
        self.0.extend_from_slice(tokens)
    }
}

impl Deref for Sequence {
    type Target = [TokenId];

    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl From<Vec<TokenId>> for Sequence {
    fn from(v: Vec<TokenId>) -> Self {
        Self(v)
    }
}

impl From<&[TokenId]> for Sequence {
    fn from(v: &[TokenId]) -> Self {
        Self(v.to_vec())
    }
}

impl FromIterator<TokenId> for Sequence {
    fn from_iter<I: IntoIterator<Item = TokenId>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl fmt::Display for Sequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|t| t.to_string()).collect();
        write!(f, "[{}]", parts.join(" "))
    }
}

/// All sequences of exactly `len` tokens over a vocabulary of `size`, in
/// lexicographic order.
pub fn enumerate_sequences(size: usize, len: usize) -> impl Iterator<Item = Sequence> {
    let total = size.checked_pow(len as u32).expect("enumeration overflow");
    (0..total).map(move |mut code| {
        let mut out = vec![0; len];
        for slot in out.iter_mut().rev() {
            *slot = code % size;
            code /= size;
        }
        Sequence(out)
    })
}
