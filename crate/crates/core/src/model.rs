//! Autoregressive models, invocation accounting and generation limits.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{Dist, DistError, Transforms};
use crate::token::{Sequence, TokenId, Vocab};

/// An autoregressive model: a deterministic map from prefixes to next-token
/// distributions.
pub trait Model: Send + Sync {
    fn vocab(&self) -> &Vocab;

    /// Next-token distribution after `prefix`. Must return the same value
    /// for the same prefix.
    fn conditional(&self, prefix: &[TokenId]) -> Dist;

    /// Designated end-of-sequence token, if any.
    fn eos(&self) -> Option<TokenId> {
        None
    }
}

impl<M: Model + ?Sized> Model for Arc<M> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn conditional(&self, prefix: &[TokenId]) -> Dist {
        (**self).conditional(prefix)
    }

    fn eos(&self) -> Option<TokenId> {
        (**self).eos()
    }
}

impl<M: Model + ?Sized> Model for Box<M> {
    fn vocab(&self) -> &Vocab {
        (**self).vocab()
    }

    fn conditional(&self, prefix: &[TokenId]) -> Dist {
        (**self).conditional(prefix)
    }

    fn eos(&self) -> Option<TokenId> {
        (**self).eos()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid distribution for prefix {prefix}: {source}")]
    InvalidDist {
        prefix: String,
        #[source]
        source: DistError,
    },
    #[error("token id {0} is outside the vocabulary")]
    UnknownToken(TokenId),
}

/// Every prefix maps to the uniform distribution.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocab,
    dist: Dist,
}

impl UniformModel {
    pub fn new(vocab: Vocab) -> Self {
        let dist = Dist::uniform(vocab.len());
        Self { vocab, dist }
    }
}

impl Model for UniformModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn conditional(&self, _prefix: &[TokenId]) -> Dist {
        self.dist.clone()
    }
}

/// Explicit conditional table keyed by exact prefix, with a fallback row.
#[derive(Debug, Clone)]
pub struct TableModel {
    vocab: Vocab,
    table: HashMap<Sequence, Dist>,
    default: Dist,
    eos: Option<TokenId>,
}

impl TableModel {
    pub fn new<I>(vocab: Vocab, default: Vec<f64>, rows: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = (Sequence, Vec<f64>)>,
    {
        let n = vocab.len();
        let check = |prefix: &str, probs: Vec<f64>| -> Result<Dist, ModelError> {
            if probs.len() != n {
                return Err(ModelError::InvalidDist {
                    prefix: prefix.to_string(),
                    source: DistError::WrongLength {
                        expected: n,
                        got: probs.len(),
                    },
                });
            }
            Dist::new(probs).map_err(|source| ModelError::InvalidDist {
                prefix: prefix.to_string(),
                source,
            })
        };
        let default = check("default", default)?;
        let mut table = HashMap::new();
        for (prefix, probs) in rows {
            if let Some(&bad) = prefix.iter().find(|&&t| t >= n) {
                return Err(ModelError::UnknownToken(bad));
            }
            let dist = check(&prefix.to_string(), probs)?;
            table.insert(prefix, dist);
        }
        Ok(Self {
            vocab,
            table,
            default,
            eos: None,
        })
    }

    pub fn with_eos(mut self, eos: TokenId) -> Result<Self, ModelError> {
        if eos >= self.vocab.len() {
            return Err(ModelError::UnknownToken(eos));
        }
        self.eos = Some(eos);
        Ok(self)
    }

    pub fn default_dist(&self) -> &Dist {
        &self.default
    }

    /// Rows in lexicographic prefix order.
    pub fn rows(&self) -> Vec<(&Sequence, &Dist)> {
        let mut rows: Vec<_> = self.table.iter().collect();
        rows.sort_by(|a, b| a.0.len().cmp(&b.0.len()).then(a.0.cmp(b.0)));
        rows
    }
}

impl Model for TableModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn conditional(&self, prefix: &[TokenId]) -> Dist {
        // HashMap<Sequence, _> cannot be probed by slice without an allocation
        let key = Sequence::from(prefix);
        self.table.get(&key).unwrap_or(&self.default).clone()
    }

    fn eos(&self) -> Option<TokenId> {
        self.eos
    }
}

/// Applies a [`Transforms`] pipeline to every conditional of an inner model.
pub struct TransformedModel<M> {
    inner: M,
    transforms: Transforms,
}

impl<M: Model> TransformedModel<M> {
    pub fn new(inner: M, transforms: Transforms) -> Self {
        Self { inner, transforms }
    }
}

impl<M: Model> Model for TransformedModel<M> {
    fn vocab(&self) -> &Vocab {
        self.inner.vocab()
    }

    fn conditional(&self, prefix: &[TokenId]) -> Dist {
        self.transforms.apply(&self.inner.conditional(prefix))
    }

    fn eos(&self) -> Option<TokenId> {
        self.inner.eos()
    }
}

/// Probability of generating `seq[prompt_len..]` after `seq[..prompt_len]`.
pub fn sequence_probability(model: &dyn Model, seq: &[TokenId], prompt_len: usize) -> f64 {
    (prompt_len..seq.len())
        .map(|i| model.conditional(&seq[..i]).prob(seq[i]))
        .product()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("invocation budget of {budget} exhausted")]
    BudgetExhausted { budget: u64 },
    #[error("every continuation of the prefix is excluded")]
    FullyExcluded,
    #[error("no conditional recorded for the requested prefix")]
    Unavailable,
}

/// Anything that can be asked for a next-token distribution, possibly
/// failing (budget, exclusion).
pub trait ConditionalSource {
    fn conditional(&mut self, prefix: &[TokenId]) -> Result<Dist, QueryError>;
}

impl<M: Model + ?Sized> ConditionalSource for &M {
    fn conditional(&mut self, prefix: &[TokenId]) -> Result<Dist, QueryError> {
        Ok(Model::conditional(*self, prefix))
    }
}

/// Per-episode instrumentation.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeStats {
    /// Distinct base-model conditional evaluations (cache misses).
    pub invocations: u64,
    /// Tokens in the returned sequence, excluding the prompt.
    pub output_tokens: u64,
    pub backtracks: u64,
    pub errors_discovered: u64,
    pub budget_exhausted: bool,
}

impl EpisodeStats {
    /// Invocations per output token; `None` when nothing was emitted.
    pub fn generation_ratio(&self) -> Option<f64> {
        (self.output_tokens > 0).then(|| self.invocations as f64 / self.output_tokens as f64)
    }
}

/// Memoizing, counting wrapper around a model for one generation episode.
///
/// Only cache misses count as invocations, and a miss is refused once the
/// budget is spent.
pub struct CountingModel<'m> {
    inner: &'m dyn Model,
    cache: HashMap<Vec<TokenId>, Dist>,
    invocations: u64,
    budget: u64,
}

impl<'m> CountingModel<'m> {
    pub fn new(inner: &'m dyn Model) -> Self {
        Self::with_budget(inner, u64::MAX)
    }

    pub fn with_budget(inner: &'m dyn Model, budget: u64) -> Self {
        Self {
            inner,
            cache: HashMap::new(),
            invocations: 0,
            budget,
        }
    }

    pub fn model(&self) -> &'m dyn Model {
        self.inner
    }

    pub fn vocab(&self) -> &'m Vocab {
        self.inner.vocab()
    }

    pub fn invocations(&self) -> u64 {
        self.invocations
    }

    pub fn budget(&self) -> u64 {
        self.budget
    }

    pub fn is_cached(&self, prefix: &[TokenId]) -> bool {
        self.cache.contains_key(prefix)
    }

    /// Forgets cached conditionals but keeps the invocation count, so the
    /// next queries are paid for again.
    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    /// Starts a new episode: empty cache, zero invocations.
    pub fn reset_episode(&mut self) {
        self.cache.clear();
        self.invocations = 0;
    }
}

impl ConditionalSource for CountingModel<'_> {
    fn conditional(&mut self, prefix: &[TokenId]) -> Result<Dist, QueryError> {
        if let Some(d) = self.cache.get(prefix) {
            return Ok(d.clone());
        }
        if self.invocations >= self.budget {
            return Err(QueryError::BudgetExhausted { budget: self.budget });
        }
        self.invocations += 1;
        let d = self.inner.conditional(prefix);
        self.cache.insert(prefix.to_vec(), d.clone());
        Ok(d)
    }
}

/// Stopping rule and compute budget for one episode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationLimits {
    pub max_tokens: usize,
    /// Distinct model evaluations allowed per episode.
    pub invocation_budget: u64,
    pub stop_on_eos: bool,
}

impl GenerationLimits {
    /// `max_tokens` new tokens, no budget, stop at EOS.
    pub fn new(max_tokens: usize) -> Self {
        Self {
            max_tokens,
            invocation_budget: u64::MAX,
            stop_on_eos: true,
        }
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.invocation_budget = budget;
        self
    }

    /// True once `seq` (prompt included) satisfies the stopping rule.
    pub fn should_stop(&self, model: &dyn Model, seq: &[TokenId], prompt_len: usize) -> bool {
        if seq.len() - prompt_len >= self.max_tokens {
            return true;
        }
        self.stop_on_eos && seq.len() > prompt_len && model.eos().is_some_and(|e| seq.last() == Some(&e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::token::enumerate_sequences;
    use proptest::prelude::*;

    fn ab() -> Vocab {
        Vocab::from_chars("AB").unwrap()
    }

    #[test]
    fn uniform_model_examples() {
        let m = UniformModel::new(Vocab::abc());
        assert_eq!(Model::conditional(&m, &[0, 2]), Dist::uniform(3));
        let m2 = UniformModel::new(ab());
        assert_eq!(Model::conditional(&m2, &[]).probs(), &[0.5, 0.5]);
        let m1 = UniformModel::new(Vocab::from_chars("A").unwrap());
        assert_eq!(Model::conditional(&m1, &[0, 0]).probs(), &[1.0]);
    }

    #[test]
    fn table_model_lookup_and_default() {
        let m = TableModel::new(
            ab(),
            vec![0.5, 0.5],
            vec![(Sequence::from(vec![0]), vec![0.0001, 0.9999])],
        )
        .unwrap();
        assert_eq!(Model::conditional(&m, &[0]).probs(), &[0.0001, 0.9999]);
        assert_eq!(Model::conditional(&m, &[1]).probs(), &[0.5, 0.5]);
        assert_eq!(Model::conditional(&m, &[]).probs(), &[0.5, 0.5]);
    }

    #[test]
    fn table_model_rejects_bad_rows() {
        let bad = TableModel::new(ab(), vec![0.5, 0.5], vec![(Sequence::from(vec![0]), vec![0.7, 0.7])]);
        assert!(matches!(bad, Err(ModelError::InvalidDist { .. })));
        let short = TableModel::new(ab(), vec![1.0], Vec::new());
        assert!(matches!(short, Err(ModelError::InvalidDist { .. })));
        let unknown = TableModel::new(ab(), vec![0.5, 0.5], vec![(Sequence::from(vec![5]), vec![0.5, 0.5])]);
        assert!(matches!(unknown, Err(ModelError::UnknownToken(5))));
    }

    #[test]
    fn sequence_probability_examples() {
        let m = UniformModel::new(Vocab::abc());
        assert!((sequence_probability(&m, &[0, 0, 0], 0) - 1.0 / 27.0).abs() < 1e-15);
        assert_eq!(sequence_probability(&m, &[0, 1], 2), 1.0);
        let fig = UniformModel::new(ab());
        for s in enumerate_sequences(2, 2) {
            assert!((sequence_probability(&fig, &s, 0) - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn counting_model_caches_per_prefix() {
        let m = UniformModel::new(Vocab::abc());
        let mut c = CountingModel::new(&m);
        c.conditional(&[0]).unwrap();
        c.conditional(&[0]).unwrap();
        assert_eq!(c.invocations(), 1);
        c.reset_episode();
        for p in [&[][..], &[0], &[0, 1]] {
            c.conditional(p).unwrap();
        }
        assert_eq!(c.invocations(), 3);
        c.clear_cache();
        c.conditional(&[]).unwrap();
        assert_eq!(c.invocations(), 4);
    }

    #[test]
    fn counting_model_enforces_budget() {
        let m = UniformModel::new(Vocab::abc());
        let mut c = CountingModel::with_budget(&m, 2);
        c.conditional(&[]).unwrap();
        c.conditional(&[1]).unwrap();
        assert_eq!(c.conditional(&[2]), Err(QueryError::BudgetExhausted { budget: 2 }));
        // cached prefixes stay free
        assert!(c.conditional(&[1]).is_ok());
    }

    #[test]
    fn eos_stops_generation() {
        let m = TableModel::new(ab(), vec![0.5, 0.5], Vec::new())
            .unwrap()
            .with_eos(1)
            .unwrap();
        let limits = GenerationLimits::new(10);
        assert!(!limits.should_stop(&m, &[0, 0], 0));
        assert!(limits.should_stop(&m, &[0, 1], 0));
        assert!(!limits.should_stop(&m, &[1], 1));
        let no_eos = GenerationLimits {
            stop_on_eos: false,
            ..limits
        };
        assert!(!no_eos.should_stop(&m, &[0, 1], 0));
    }

    fn arb_table_model() -> impl Strategy<Value = TableModel> {
        (2usize..=4, 0usize..=3)
            .prop_flat_map(|(v, depth)| {
                let rows = prop::collection::vec(
                    (
                        prop::collection::vec(0..v, 0..=depth),
                        prop::collection::vec(0.01f64..1.0, v),
                    ),
                    0..12,
                );
                (Just(v), prop::collection::vec(0.01f64..1.0, v), rows)
            })
            .prop_map(|(v, default, rows)| {
                let norm = |w: Vec<f64>| crate::dist::normalize(&w).unwrap().into_vec();
                let vocab = Vocab::new((0..v).map(|i| ((b'A' + i as u8) as char).to_string())).unwrap();
                TableModel::new(
                    vocab,
                    norm(default),
                    rows.into_iter().map(|(p, w)| (Sequence::from(p), norm(w))),
                )
                .unwrap()
            })
    }

    proptest! {
        #[test]
        fn fixed_length_probabilities_sum_to_one(m in arb_table_model(), len in 0usize..=4) {
            let total: f64 = enumerate_sequences(m.vocab().len(), len)
                .map(|s| sequence_probability(&m, &s, 0))
                .sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
        }

        #[test]
        fn counting_model_is_transparent(m in arb_table_model(), prefix in prop::collection::vec(0usize..2, 0..4)) {
            let mut c = CountingModel::new(&m);
            let wrapped = c.conditional(&prefix).unwrap();
            prop_assert_eq!(&wrapped, &Model::conditional(&m, &prefix));
            prop_assert_eq!(c.conditional(&prefix).unwrap(), wrapped);
        }
    }
}
