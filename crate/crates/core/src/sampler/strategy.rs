//! What to keep after an error is found.
//!
//! All three error-free methods share one loop; they differ only in where
//! generation resumes once the offending sequence has been recorded.

use rand::RngCore;

use crate::dist::sample_token;
use crate::exclusion::{ExclusionTrie, PathSnapshot};
use crate::model::QueryError;
use crate::sampler::spec::{spec_sample, SpecSampleError};
use crate::token::TokenId;

/// Chooses the resumption point after `seq` was found to be an error.
///
/// `before` holds the adjusted conditionals along `seq` prior to recording
/// it; `after` is the trie with `seq` already recorded. The result is a
/// prefix of `seq` no shorter than the prompt, optionally followed by one
/// replacement token.
pub trait Strategy: Send + Sync {
    fn name(&self) -> &'static str;

    fn on_error(
        &self,
        before: &mut PathSnapshot,
        after: &mut ExclusionTrie<'_>,
        seq: &[TokenId],
        prompt_len: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<TokenId>, QueryError>;
}

/// Restart from the prompt under the updated trie.
#[derive(Debug, Clone, Copy, Default)]
pub struct Asap;

impl Strategy for Asap {
    fn name(&self) -> &'static str {
        "asap"
    }

    fn on_error(
        &self,
        _before: &mut PathSnapshot,
        _after: &mut ExclusionTrie<'_>,
        seq: &[TokenId],
        prompt_len: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<TokenId>, QueryError> {
        Ok(seq[..prompt_len].to_vec())
    }
}

/// Drop the offending token only. The trie now gives it zero probability at
/// that prefix, so resampling draws from the masked conditional; if every
/// continuation of a prefix is gone, drop tokens until one is left.
#[derive(Debug, Clone, Copy, Default)]
pub struct Constrained;

impl Strategy for Constrained {
    fn name(&self) -> &'static str {
        "constrained"
    }

    fn on_error(
        &self,
        _before: &mut PathSnapshot,
        after: &mut ExclusionTrie<'_>,
        seq: &[TokenId],
        prompt_len: usize,
        _rng: &mut dyn RngCore,
    ) -> Result<Vec<TokenId>, QueryError> {
        Ok(drop_dead_tail(after, seq, prompt_len))
    }
}

fn drop_dead_tail(trie: &ExclusionTrie<'_>, seq: &[TokenId], prompt_len: usize) -> Vec<TokenId> {
    let mut out = seq[..seq.len().saturating_sub(1).max(prompt_len)].to_vec();
    while out.len() > prompt_len && trie.is_fully_excluded(&out) {
        out.pop();
    }
    out
}

/// Approximately aligned decoding: speculative sampling with the pre-update
/// trie as draft and the post-update trie as target, verified from the end
/// of the prompt.
#[derive(Debug, Clone, Copy, Default)]
pub struct Aprad;

impl Strategy for Aprad {
    fn name(&self) -> &'static str {
        "aprad"
    }

    fn on_error(
        &self,
        before: &mut PathSnapshot,
        after: &mut ExclusionTrie<'_>,
        seq: &[TokenId],
        prompt_len: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<TokenId>, QueryError> {
        match spec_sample(after, before, prompt_len, seq, rng) {
            Ok(out) => Ok(out),
            Err(SpecSampleError::ResidualZero { position }) => {
                let d = after.excluded_conditional(&seq[..position])?;
                let mut out = seq[..position].to_vec();
                out.push(sample_token(&d, rng));
                Ok(out)
            }
            // the whole sequence was accepted but nothing can follow it
            Err(SpecSampleError::Query(QueryError::FullyExcluded)) => Ok(drop_dead_tail(after, seq, prompt_len)),
            Err(SpecSampleError::Query(e)) => Err(e),
        }
    }
}
