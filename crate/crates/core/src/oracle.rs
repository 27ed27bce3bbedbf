//! Prefix-closed error sets.
//!
//! An [`ErrorOracle`] answers whether a sequence is an error. Samplers rely
//! on prefix closure: once a sequence is an error, every extension is too.
//!
//! Two oracles ship with the crate:
//!
//! * [`PatternSet`]: fixed-length wildcard patterns with exceptions, written
//!   in a small DSL such as `"A** except AAC"` or `"AAA, AAB"`. A sequence is
//!   an error when its first `L` tokens match an included pattern and are not
//!   listed as an exception. Shorter sequences are never errors.
//! * [`BannedSymbolSet`]: any occurrence of a banned token is an error.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::token::{enumerate_sequences, Sequence, TokenId, Vocab};

/// Black-box membership test for a prefix-closed error set.
pub trait ErrorOracle: Send + Sync {
    fn contains(&self, seq: &[TokenId]) -> bool;
}

impl<F> ErrorOracle for F
where
    F: Fn(&[TokenId]) -> bool + Send + Sync,
{
    fn contains(&self, seq: &[TokenId]) -> bool {
        self(seq)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{message} at position {position}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PatternSymbol {
    Token(TokenId),
    Wildcard,
}

/// A fixed-length pattern of tokens and wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pattern(Vec<PatternSymbol>);

impl Pattern {
    pub fn symbols(&self) -> &[PatternSymbol] {
        &self.0
    }

    pub fn matches(&self, seq: &[TokenId]) -> bool {
        self.0.len() == seq.len()
            && self.0.iter().zip(seq).all(|(s, &t)| match s {
                PatternSymbol::Wildcard => true,
                PatternSymbol::Token(p) => *p == t,
            })
    }
}

/// Error set defined by length-`L` wildcard patterns minus exact exceptions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatternSet {
    vocab: Vocab,
    length: usize,
    include: Vec<Pattern>,
    except: Vec<Sequence>,
}

impl PatternSet {
    /// The empty error set.
    pub fn empty(vocab: Vocab) -> Self {
        Self {
            vocab,
            length: 0,
            include: Vec::new(),
            except: Vec::new(),
        }
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Pattern length `L`; 0 for the empty set.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn include(&self) -> &[Pattern] {
        &self.include
    }

    pub fn except(&self) -> &[Sequence] {
        &self.except
    }

    pub fn is_empty(&self) -> bool {
        self.include.is_empty()
    }

    /// Every length-`L` sequence in the set.
    pub fn members(&self) -> Vec<Sequence> {
        if self.is_empty() {
            return Vec::new();
        }
        enumerate_sequences(self.vocab.len(), self.length)
            .filter(|s| self.contains(s))
            .collect()
    }
}

impl ErrorOracle for PatternSet {
    fn contains(&self, seq: &[TokenId]) -> bool {
        if self.include.is_empty() || seq.len() < self.length {
            return false;
        }
        let head = &seq[..self.length];
        self.include.iter().any(|p| p.matches(head)) && !self.except.iter().any(|e| e.as_slice() == head)
    }
}

impl fmt::Display for PatternSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pattern = |p: &Pattern| -> String {
            p.0.iter()
                .map(|s| match s {
                    PatternSymbol::Wildcard => "*".to_string(),
                    PatternSymbol::Token(t) => self.vocab.label(*t).to_string(),
                })
                .collect()
        };
        let include: Vec<String> = self.include.iter().map(pattern).collect();
        write!(f, "{}", include.join(", "))?;
        if !self.except.is_empty() {
            let except: Vec<String> = self.except.iter().map(|s| self.vocab.render(s)).collect();
            write!(f, " except {}", except.join(", "))?;
        }
        Ok(())
    }
}

const EXCEPT: &str = " except ";

/// Splits a comma-separated list into trimmed items with their offsets.
fn items(text: &str, base: usize) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = 0;
    for part in text.split(',') {
        let lead = part.len() - part.trim_start().len();
        out.push((base + start + lead, part.trim()));
        start += part.len() + 1;
    }
    out
}

/// Parses the error-set DSL.
///
/// ```text
/// spec     := patterns [ " except " seqs ]
/// patterns := pattern ("," pattern)*      pattern := (label | "*"){L}
/// seqs     := seq ("," seq)*              seq     := label{L}
/// ```
///
/// Labels are single characters of `vocab`. An empty (or all-blank) string
/// is the empty error set.
pub fn parse_pattern_spec(text: &str, vocab: &Vocab) -> Result<PatternSet, ParseError> {
    if text.trim().is_empty() {
        return Ok(PatternSet::empty(vocab.clone()));
    }
    let (head, tail) = match text.find(EXCEPT) {
        Some(i) => (&text[..i], Some((i + EXCEPT.len(), &text[i + EXCEPT.len()..]))),
        None => (text, None),
    };

    let mut length: Option<usize> = None;
    let mut check_len = |pos: usize, n: usize| -> Result<(), ParseError> {
        if n == 0 {
            return Err(ParseError::new(pos, "empty pattern"));
        }
        match length {
            None => {
                length = Some(n);
                Ok(())
            }
            Some(l) if l == n => Ok(()),
            Some(l) => Err(ParseError::new(pos, format!("pattern length {n} differs from {l}"))),
        }
    };
    let symbol = |pos: usize, c: char| -> Result<TokenId, ParseError> {
        vocab
            .id_of_char(c)
            .ok_or_else(|| ParseError::new(pos, format!("unknown symbol {c:?}")))
    };

    let mut include = Vec::new();
    for (pos, item) in items(head, 0) {
        check_len(pos, item.chars().count())?;
        let mut syms = Vec::new();
        for (off, c) in item.char_indices() {
            syms.push(if c == '*' {
                PatternSymbol::Wildcard
            } else {
                PatternSymbol::Token(symbol(pos + off, c)?)
            });
        }
        include.push(Pattern(syms));
    }

    let mut except = Vec::new();
    if let Some((base, tail)) = tail {
        for (pos, item) in items(tail, base) {
            check_len(pos, item.chars().count())?;
            let mut seq = Vec::new();
            for (off, c) in item.char_indices() {
                if c == '*' {
                    return Err(ParseError::new(pos + off, "wildcard not allowed in an exception"));
                }
                seq.push(symbol(pos + off, c)?);
            }
            if !include.iter().any(|p: &Pattern| p.matches(&seq)) {
                return Err(ParseError::new(pos, format!("exception {item:?} matches no pattern")));
            }
            except.push(Sequence::from(seq));
        }
    }

    Ok(PatternSet {
        vocab: vocab.clone(),
        length: length.unwrap_or(0),
        include,
        except,
    })
}

/// Error whenever any banned token appears.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BannedSymbolSet {
    banned: BTreeSet<TokenId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BannedSetError {
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(TokenId),
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(char),
    #[error("banning every token leaves nothing to generate")]
    NothingAllowed,
}

impl BannedSymbolSet {
    pub fn new(banned: impl IntoIterator<Item = TokenId>, vocab: &Vocab) -> Result<Self, BannedSetError> {
        let banned: BTreeSet<TokenId> = banned.into_iter().collect();
        if let Some(&t) = banned.iter().find(|&&t| t >= vocab.len()) {
            return Err(BannedSetError::UnknownToken(t));
        }
        if banned.len() >= vocab.len() {
            return Err(BannedSetError::NothingAllowed);
        }
        Ok(Self { banned })
    }

    /// Parses single-character labels, e.g. `"AE"`.
    pub fn parse(symbols: &str, vocab: &Vocab) -> Result<Self, BannedSetError> {
        let ids = symbols
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| vocab.id_of_char(c).ok_or(BannedSetError::UnknownSymbol(c)))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(ids, vocab)
    }

    pub fn banned(&self) -> &BTreeSet<TokenId> {
        &self.banned
    }
}

impl ErrorOracle for BannedSymbolSet {
    fn contains(&self, seq: &[TokenId]) -> bool {
        seq.iter().any(|t| self.banned.contains(t))
    }
}

/// The oracles selectable from configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ErrorSet {
    Patterns(PatternSet),
    Banned(BannedSymbolSet),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ErrorSetError {
    #[error(transparent)]
    Pattern(#[from] ParseError),
    #[error(transparent)]
    Banned(#[from] BannedSetError),
}

impl ErrorSet {
    /// Parses either `banned:<symbols>` or the pattern DSL.
    pub fn parse(text: &str, vocab: &Vocab) -> Result<Self, ErrorSetError> {
        match text.strip_prefix("banned:") {
            Some(symbols) => Ok(Self::Banned(BannedSymbolSet::parse(symbols, vocab)?)),
            None => Ok(Self::Patterns(parse_pattern_spec(text, vocab)?)),
        }
    }
}

impl ErrorOracle for ErrorSet {
    fn contains(&self, seq: &[TokenId]) -> bool {
        match self {
            Self::Patterns(p) => p.contains(seq),
            Self::Banned(b) => b.contains(seq),
        }
    }
}

/// A sequence in the error set with a one-token extension outside it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClosureViolation {
    pub member: Sequence,
    pub extension: Sequence,
}

/// Exhaustively checks prefix closure for all sequences up to `max_len`
/// tokens, returning the first violation found (shortest first).
pub fn verify_prefix_closure(
    oracle: &dyn ErrorOracle,
    vocab_size: usize,
    max_len: usize,
) -> Result<(), ClosureViolation> {
    // one-token extensions suffice: closure then follows by induction
    for len in 0..max_len {
        for seq in enumerate_sequences(vocab_size, len) {
            if !oracle.contains(&seq) {
                continue;
            }
            for t in 0..vocab_size {
                let mut ext = seq.clone();
                ext.push(t);
                if !oracle.contains(&ext) {
                    return Err(ClosureViolation {
                        member: seq,
                        extension: ext,
                    });
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn abc() -> Vocab {
        Vocab::abc()
    }

    fn s(text: &str) -> Sequence {
        abc().parse_chars(text).unwrap()
    }

    fn ps(text: &str) -> PatternSet {
        parse_pattern_spec(text, &abc()).unwrap()
    }

    #[test]
    fn single_pattern_membership() {
        let set = ps("AAA");
        assert!(!set.contains(&s("AAB")));
        assert!(set.contains(&s("AAA")));
        assert!(!set.contains(&s("AA")));
        assert!(set.contains(&s("AAAB")));
    }

    #[test]
    fn wildcard_with_exception() {
        let set = ps("A** except AAC");
        assert!(!set.contains(&s("AAC")));
        assert!(set.contains(&s("ABB")));
        assert!(!set.contains(&s("BAA")));
        assert_eq!(set.members().len(), 8);
    }

    #[test]
    fn parse_examples() {
        let set = ps("AAA, AAC");
        assert_eq!(set.include().len(), 2);
        assert!(set.except().is_empty());
        assert_eq!(set.members(), vec![s("AAA"), s("AAC")]);

        let set = ps("*** except AAA, BAA");
        assert_eq!(set.members().len(), 25);
        assert_eq!(set.except(), &[s("AAA"), s("BAA")]);

        let empty = ps("");
        assert!(empty.is_empty());
        assert!(!empty.contains(&s("AAA")));
        assert!(!empty.contains(&s("")));
    }

    #[test]
    fn parse_errors_carry_positions() {
        let v = abc();
        let e = parse_pattern_spec("AAD", &v).unwrap_err();
        assert_eq!(e.position, 2);
        let e = parse_pattern_spec("AAA, AB", &v).unwrap_err();
        assert_eq!(e.position, 5);
        let e = parse_pattern_spec("A** except A*C", &v).unwrap_err();
        assert_eq!(e.position, 12);
        let e = parse_pattern_spec("A** except BAC", &v).unwrap_err();
        assert_eq!(e.position, 11);
        assert!(parse_pattern_spec("AAA,", &v).is_err());
    }

    #[test]
    fn banned_membership() {
        let b = BannedSymbolSet::parse("A", &abc()).unwrap();
        assert!(!b.contains(&s("BCB")));
        assert!(b.contains(&s("BAC")));
        let mut seq = s("BC");
        assert!(!b.contains(&seq));
        seq.push(0);
        assert!(b.contains(&seq));
        for suffix in ["A", "B", "CC"] {
            let mut ext = seq.clone();
            ext.extend_from_slice(&s(suffix));
            assert!(b.contains(&ext));
        }
        assert_eq!(
            BannedSymbolSet::parse("ABC", &abc()),
            Err(BannedSetError::NothingAllowed)
        );
        assert_eq!(
            BannedSymbolSet::parse("Z", &abc()),
            Err(BannedSetError::UnknownSymbol('Z'))
        );
    }

    #[test]
    fn error_set_dispatch() {
        let v = abc();
        assert!(matches!(ErrorSet::parse("banned:B", &v), Ok(ErrorSet::Banned(_))));
        assert!(matches!(ErrorSet::parse("AB*", &v), Ok(ErrorSet::Patterns(_))));
        assert!(ErrorSet::parse("banned:X", &v).is_err());
    }

    #[test]
    fn closure_checks() {
        assert_eq!(verify_prefix_closure(&ps("AAA"), 3, 4), Ok(()));
        let banned = BannedSymbolSet::parse("B", &abc()).unwrap();
        assert_eq!(verify_prefix_closure(&banned, 3, 5), Ok(()));
        let adversarial = |x: &[TokenId]| x.len() == 2;
        let v = verify_prefix_closure(&adversarial, 3, 4).unwrap_err();
        assert_eq!(v.member.len(), 2);
        assert_eq!(v.extension.len(), 3);
    }

    #[test]
    fn table_specs_are_closed() {
        let specs = [
            "",
            "AAA",
            "AAA, AAC",
            "AAA, ACC",
            "AAA, CCC",
            "AAA, AAB, ABA, BAA",
            "A** except AAC",
            "*** except AAA, AAB, ABA, BAA",
            "*** except AAA, BAA",
        ];
        for spec in specs {
            let set = ps(spec);
            assert_eq!(verify_prefix_closure(&set, 3, set.length() + 2), Ok(()), "{spec}");
        }
    }

    fn arb_spec() -> impl Strategy<Value = String> {
        let sym = prop::sample::select(vec!['A', 'B', 'C', '*']);
        (1usize..=3)
            .prop_flat_map(move |len| prop::collection::vec(prop::collection::vec(sym.clone(), len), 1..5))
            .prop_map(|pats| {
                pats.into_iter()
                    .map(|p| p.into_iter().collect::<String>())
                    .collect::<Vec<_>>()
                    .join(", ")
            })
    }

    proptest! {
        #[test]
        fn print_then_parse_round_trips(spec in arb_spec()) {
            let a = ps(&spec);
            let b = ps(&a.to_string());
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(a.to_string(), b.to_string());
        }

        #[test]
        fn membership_ignores_tail(spec in arb_spec(), tail in prop::collection::vec(0usize..3, 0..4), head in prop::collection::vec(0usize..3, 3)) {
            let set = ps(&spec);
            let l = set.length();
            let mut long = head[..l].to_vec();
            long.extend(&tail);
            prop_assert_eq!(set.contains(&long), set.contains(&head[..l]));
        }

        #[test]
        fn star_except_leaves_exactly_the_exceptions(excepts in prop::collection::btree_set(prop::collection::vec(0usize..3, 3), 1..6)) {
            let v = abc();
            let list: Vec<String> = excepts.iter().map(|e| v.render(e)).collect();
            let set = ps(&format!("*** except {}", list.join(", ")));
            let survivors = enumerate_sequences(3, 3).filter(|x| !set.contains(x)).count();
            prop_assert_eq!(survivors, excepts.len());
        }
    }
}
