//! Next-token probability vectors and the transforms applied to them before
//! sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::token::TokenId;

/// Tolerance on the total mass of a valid [`Dist`].
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistError {
    #[error("distribution has no entries")]
    Empty,
    #[error("all weights are zero")]
    AllZero,
    #[error("entry {index} is negative or not finite ({value})")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("expected {expected} entries, got {got}")]
    WrongLength { expected: usize, got: usize },
}

/// A normalized probability vector over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Dist(Vec<f64>);

impl Dist {
    /// Validates `probs`: non-negative, finite, summing to one within
    /// [`SUM_TOLERANCE`].
    pub fn new(probs: Vec<f64>) -> Result<Self, DistError> {
        if probs.is_empty() {
            return Err(DistError::Empty);
        }
        if let Some((index, &value)) = probs.iter().enumerate().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(DistError::BadEntry { index, value });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(DistError::NotNormalized { sum });
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero tokens");
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point(n: usize, token: TokenId) -> Self {
        let mut v = vec![0.0; n];
        v[token] = 1.0;
        Self(v)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn prob(&self, token: TokenId) -> f64 {
        self.0[token]
    }

    /// Largest absolute difference between entries.
    pub fn max_abs_diff(&self, other: &Dist) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Rescales non-negative weights to sum to one.
pub fn normalize(weights: &[f64]) -> Result<Dist, DistError> {
    if weights.is_empty() {
        return Err(DistError::Empty);
    }
    if let Some((index, &value)) = weights.iter().enumerate().find(|(_, w)| !w.is_finite() || **w < 0.0) {
        return Err(DistError::BadEntry { index, value });
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(DistError::AllZero);
    }
    Ok(Dist(weights.iter().map(|w| w / total).collect()))
}

/// Draws one token. Consumes exactly one `f64` from the stream.
pub fn sample_token<R: Rng + ?Sized>(dist: &Dist, rng: &mut R) -> TokenId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in dist.0.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last_positive = i;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the accumulated mass
    last_positive
}

/// Sharpens (`t < 1`) or flattens (`t > 1`) a distribution: `p_i^(1/t)`,
/// renormalized.
pub fn apply_temperature(dist: &Dist, t: f64) -> Dist {
    assert!(t > 0.0 && t.is_finite(), "temperature must be positive");
    if t == 1.0 {
        return dist.clone();
    }
    // work in log space so that small temperatures do not underflow
    let max_log = dist
        .0
        .iter()
        .filter(|p| **p > 0.0)
        .map(|p| p.ln())
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = dist
        .0
        .iter()
        .map(|&p| if p > 0.0 { ((p.ln() - max_log) / t).exp() } else { 0.0 })
        .collect();
    normalize(&weights).expect("temperature keeps the argmax positive")
}

/// Token ids ordered by descending probability, ties broken by lower id.
fn ranked(dist: &Dist) -> Vec<TokenId> {
    let mut order: Vec<TokenId> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist.0[b].total_cmp(&dist.0[a]).then(a.cmp(&b)));
    order
}

fn keep_only(dist: &Dist, keep: &[TokenId]) -> Dist {
    let mut weights = vec![0.0; dist.len()];
    for &t in keep {
        weights[t] = dist.0[t];
    }
    normalize(&weights).expect("kept tokens include the most likely one")
}

/// Keeps the `k` most likely tokens.
pub fn apply_top_k(dist: &Dist, k: usize) -> Dist {
    assert!(k >= 1, "top-k needs k >= 1");
    if k >= dist.len() {
        return dist.clone();
    }
    let order = ranked(dist);
    keep_only(dist, &order[..k])
}

/// Keeps the smallest high-probability prefix whose mass reaches `p`.
pub fn apply_top_p(dist: &Dist, p: f64) -> Dist {
    assert!(p > 0.0 && p <= 1.0, "top-p must lie in (0, 1]");
    if p >= 1.0 {
        return dist.clone();
    }
    let order = ranked(dist);
    let mut acc = 0.0;
    let mut cut = order.len();
    for (i, &t) in order.iter().enumerate() {
        acc += dist.0[t];
        if acc >= p - 1e-12 {
            cut = i + 1;
            break;
        }
    }
    keep_only(dist, &order[..cut])
}

/// Sampling transforms applied in order: temperature, top-k, top-p.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transforms {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_p: Option<f64>,
}

impl Transforms {
    pub fn is_identity(&self) -> bool {
        self.temperature.is_none() && self.top_k.is_none() && self.top_p.is_none()
    }

    pub fn apply(&self, dist: &Dist) -> Dist {
        let mut d = dist.clone();
        if let Some(t) = self.temperature {
            d = apply_temperature(&d, t);
        }
        if let Some(k) = self.top_k {
            d = apply_top_k(&d, k);
        }
        if let Some(p) = self.top_p {
            d = apply_top_p(&d, p);
        }
        d
    }

    pub fn validate(&self) -> Result<(), String> {
        if let Some(t) = self.temperature {
            if !(t > 0.0 && t.is_finite()) {
                return Err(format!("temperature must be positive, got {t}"));
            }
        }
        if self.top_k == Some(0) {
            return Err("top_k must be at least 1".into());
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(format!("top_p must lie in (0, 1], got {p}"));
            }
        }
        Ok(())
    }
}
