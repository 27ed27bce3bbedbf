use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::dist::sample_token;
use crate::exclusion::ExclusionTrie;
use crate::model::{ConditionalSource, CountingModel, EpisodeStats, GenerationLimits, Model, QueryError};
use crate::oracle::ErrorOracle;
use crate::sampler::strategy::Strategy;
use crate::token::{Sequence, TokenId};

/// One step of an episode, for replay and divergence checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceEvent {
    /// A token drawn from the current conditional at `position`.
    Sample { position: usize, token: TokenId },
    /// The sequence of this length was found to be an error.
    Error { length: usize },
    /// Generation resumed from a sequence of this length.
    Resume { length: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    /// Prompt followed by the generated tokens.
    pub sequence: Sequence,
    pub stats: EpisodeStats,
    /// False when the budget ran out or no acceptable continuation exists.
    pub completed: bool,
    pub trace: Vec<TraceEvent>,
}

impl GenerationOutcome {
    fn finish(
        seq: Vec<TokenId>,
        prompt_len: usize,
        mut stats: EpisodeStats,
        completed: bool,
        trace: Vec<TraceEvent>,
    ) -> Self {
        stats.output_tokens = (seq.len() - prompt_len) as u64;
        Self {
            sequence: Sequence::from(seq),
            stats,
            completed,
            trace,
        }
    }

    pub fn generated(&self) -> &[TokenId] {
        let n = self.sequence.len() - self.stats.output_tokens as usize;
        &self.sequence[n..]
    }
}

/// Plain autoregressive sampling until the stopping rule.
pub fn unconstrained_generate(
    model: &dyn Model,
    prompt: &[TokenId],
    limits: &GenerationLimits,
    rng: &mut dyn RngCore,
) -> GenerationOutcome {
    let p = prompt.len();
    let mut counting = CountingModel::with_budget(model, limits.invocation_budget);
    let mut seq = prompt.to_vec();
    let mut stats = EpisodeStats::default();
    let mut trace = Vec::new();
    let completed = loop {
        if limits.should_stop(model, &seq, p) {
            break true;
        }
        let Ok(dist) = counting.conditional(&seq) else {
            stats.budget_exhausted = true;
            break false;
        };
        let t = sample_token(&dist, rng);
        trace.push(TraceEvent::Sample {
            position: seq.len(),
            token: t,
        });
        seq.push(t);
    };
    stats.invocations = counting.invocations();
    GenerationOutcome::finish(seq, p, stats, completed, trace)
}

/// Regenerates from the prompt until an output avoids the error set.
///
/// Each attempt is abandoned as soon as its prefix is an error and pays for
/// its own model evaluations. `errors_discovered` counts failed attempts.
/// The error set must leave some completion with positive probability, or
/// the budget must be finite.
pub fn rejection_sample(
    model: &dyn Model,
    oracle: &dyn ErrorOracle,
    prompt: &[TokenId],
    limits: &GenerationLimits,
    rng: &mut dyn RngCore,
) -> GenerationOutcome {
    let p = prompt.len();
    let mut counting = CountingModel::with_budget(model, limits.invocation_budget);
    let mut stats = EpisodeStats::default();
    let mut trace = Vec::new();
    let mut seq = prompt.to_vec();
    let completed = 'attempts: loop {
        seq.truncate(p);
        loop {
            if limits.should_stop(model, &seq, p) {
                break 'attempts true;
            }
            let Ok(dist) = counting.conditional(&seq) else {
                stats.budget_exhausted = true;
                break 'attempts false;
            };
            let t = sample_token(&dist, rng);
            trace.push(TraceEvent::Sample {
                position: seq.len(),
                token: t,
            });
            seq.push(t);
            if oracle.contains(&seq) {
                stats.errors_discovered += 1;
                stats.backtracks += 1;
                trace.push(TraceEvent::Error { length: seq.len() });
                trace.push(TraceEvent::Resume { length: p });
                counting.clear_cache();
                // the failed prefix is dropped; what is returned on exhaustion is error-free
                seq.truncate(p);
                continue 'attempts;
            }
        }
    };
    stats.invocations = counting.invocations();
    GenerationOutcome::finish(seq, p, stats, completed, trace)
}

/// The shared error-free loop: sample from the adjusted distribution, check
/// the oracle after every token, and on an error record it and let
/// `strategy` pick where to resume.
pub fn error_free_decoding(
    model: &dyn Model,
    oracle: &dyn ErrorOracle,
    prompt: &[TokenId],
    strategy: &dyn Strategy,
    limits: &GenerationLimits,
    rng: &mut dyn RngCore,
) -> GenerationOutcome {
    let mut trie = ExclusionTrie::new(CountingModel::with_budget(model, limits.invocation_budget));
    decode_with_trie(&mut trie, oracle, prompt, strategy, limits, rng)
}

/// [`error_free_decoding`] on a caller-owned trie, so recorded errors can be
/// carried across episodes. Invocations are counted from the trie's current
/// count.
pub fn decode_with_trie(
    trie: &mut ExclusionTrie<'_>,
    oracle: &dyn ErrorOracle,
    prompt: &[TokenId],
    strategy: &dyn Strategy,
    limits: &GenerationLimits,
    rng: &mut dyn RngCore,
) -> GenerationOutcome {
    let model = trie.base().model();
    let p = prompt.len();
    let start_invocations = trie.base().invocations();
    let mut seq = prompt.to_vec();
    let mut stats = EpisodeStats::default();
    let mut trace = Vec::new();

    let completed = 'outer: loop {
        if limits.should_stop(model, &seq, p) {
            break true;
        }
        let dist = match trie.excluded_conditional(&seq) {
            Ok(d) => d,
            Err(QueryError::FullyExcluded) => {
                if seq.len() == p {
                    // nothing acceptable follows the prompt
                    break false;
                }
                seq.pop();
                stats.backtracks += 1;
                trace.push(TraceEvent::Resume { length: seq.len() });
                continue;
            }
            Err(_) => {
                stats.budget_exhausted = true;
                break false;
            }
        };
        let t = sample_token(&dist, rng);
        trace.push(TraceEvent::Sample {
            position: seq.len(),
            token: t,
        });
        seq.push(t);

        while seq.len() > p && oracle.contains(&seq) {
            stats.errors_discovered += 1;
            trace.push(TraceEvent::Error { length: seq.len() });
            let resumed = match resume_after_error(trie, strategy, &seq, p, rng) {
                Ok(r) => r,
                Err(_) => {
                    // everything before the offending token was already checked
                    seq.pop();
                    stats.budget_exhausted = true;
                    break 'outer false;
                }
            };
            let shared = resumed.iter().zip(&seq).take_while(|(a, b)| a == b).count();
            if shared + 1 < seq.len() {
                stats.backtracks += 1;
            }
            trace.push(TraceEvent::Resume { length: resumed.len() });
            seq = resumed;
            // full acceptance appends past the limit; the cut sequence is rechecked
            seq.truncate(p + limits.max_tokens);
        }
    };

    stats.invocations = trie.base().invocations() - start_invocations;
    GenerationOutcome::finish(seq, p, stats, completed, trace)
}

fn resume_after_error(
    trie: &mut ExclusionTrie<'_>,
    strategy: &dyn Strategy,
    seq: &[TokenId],
    prompt_len: usize,
    rng: &mut dyn RngCore,
) -> Result<Vec<TokenId>, QueryError> {
    let mut before = trie.snapshot_path(seq, prompt_len)?;
    trie.add_bad_sample(seq, prompt_len)?;
    strategy.on_error(&mut before, trie, seq, prompt_len, rng)
}
