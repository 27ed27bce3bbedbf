//! Speculative sampling: turn a sequence drawn from a draft distribution into
//! a sample from a target distribution by accepting a prefix and resampling
//! one token from the residual.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::dist::{normalize, sample_token, Dist};
use crate::model::{ConditionalSource, QueryError};
use crate::token::TokenId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SpecSampleError {
    #[error(transparent)]
    Query(#[from] QueryError),
    /// Only reachable through floating-point drift: a rejection implies the
    /// target exceeds the draft somewhere.
    #[error("residual distribution is empty at position {position}")]
    ResidualZero { position: usize },
}

/// Probability of keeping a drafted token: `min(1, target / draft)`.
pub fn acceptance_probability(target_p: f64, draft_p: f64) -> f64 {
    if draft_p > 0.0 {
        (target_p / draft_p).min(1.0)
    } else if target_p > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `normalize(max(0, target - draft))`, or `None` if that has no mass.
pub fn residual(target: &Dist, draft: &Dist) -> Option<Dist> {
    let weights: Vec<f64> = target
        .probs()
        .iter()
        .zip(draft.probs())
        .map(|(t, d)| (t - d).max(0.0))
        .collect();
    normalize(&weights).ok()
}

/// Verifies `seq[n..]`, assumed drawn from `draft`, against `target`.
///
/// Each drafted token is kept with probability `min(1, target/draft)`. At the
/// first rejection the prefix before it is returned with one replacement
/// token drawn from the residual. If everything is kept, one more token is
/// drawn from `target` after the whole sequence. The result therefore has
/// length in `n + 1 ..= seq.len() + 1` (or `n..` when `seq.len() == n`, in
/// which case just one token is appended).
///
/// Randomness: one uniform per token whose acceptance probability lies
/// strictly between 0 and 1, plus one draw for the final token.
pub fn spec_sample<T, D>(
    target: &mut T,
    draft: &mut D,
    n: usize,
    seq: &[TokenId],
    rng: &mut dyn RngCore,
) -> Result<Vec<TokenId>, SpecSampleError>
where
    T: ConditionalSource + ?Sized,
    D: ConditionalSource + ?Sized,
{
    for i in n..seq.len() {
        let prefix = &seq[..i];
        let t_dist = target.conditional(prefix)?;
        let d_dist = draft.conditional(prefix)?;
        let tok = seq[i];
        let accept = acceptance_probability(t_dist.prob(tok), d_dist.prob(tok));
        let kept = accept >= 1.0 || (accept > 0.0 && rng.gen::<f64>() < accept);
        if kept {
            continue;
        }
        let res = residual(&t_dist, &d_dist).ok_or(SpecSampleError::ResidualZero { position: i })?;
        let mut out = prefix.to_vec();
        out.push(sample_token(&res, rng));
        return Ok(out);
    }
    let next = target.conditional(seq)?;
    let mut out = seq.to_vec();
    out.push(sample_token(&next, rng));
    Ok(out)
}

/// Exact law of the token produced by one speculative step: a token is drawn
/// from `draft`, kept with [`acceptance_probability`], and otherwise replaced
/// by a draw from [`residual`]. Equals `target` up to rounding.
pub fn single_step_law(target: &Dist, draft: &Dist) -> Vec<f64> {
    let n = target.len();
    let mut law = vec![0.0; n];
    let mut rejected = 0.0;
    for (j, slot) in law.iter_mut().enumerate() {
        let a = acceptance_probability(target.prob(j), draft.prob(j));
        *slot += draft.prob(j) * a;
        rejected += draft.prob(j) * (1.0 - a);
    }
    if rejected > 0.0 {
        if let Some(res) = residual(target, draft) {
            for (l, r) in law.iter_mut().zip(res.probs()) {
                *l += rejected * r;
            }
        }
    }
    law
}
