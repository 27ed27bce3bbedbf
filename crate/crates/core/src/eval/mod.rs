//! Exact and empirical sequence distributions, KL divergence and the
//! simulated testbench.

mod report;
mod testbench;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{sequence_probability, Model};
use crate::oracle::ErrorOracle;
use crate::token::{enumerate_sequences, Sequence};

pub use report::{render_csv, render_json, render_table, Provenance, CSV_HEADER};
pub use testbench::{
    run_episodes, run_testbench, run_testbench_on, CellResult, ReportRow, TestbenchConfig, TestbenchReport,
    TABLE_ERROR_SETS,
};

/// Largest number of sequences [`ideal_distribution`] will enumerate.
pub const MAX_ENUMERATION: usize = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("every sequence of the requested length is an error")]
    AllExcluded,
    #[error("{count} sequences is too many to enumerate (limit {MAX_ENUMERATION})")]
    TooLarge { count: f64 },
    #[error("no samples")]
    NoSamples,
    #[error("observed sequence {sequence} has zero ideal probability")]
    InfiniteDivergence { sequence: Sequence },
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("bad error-set spec {spec:?}: {message}")]
    Spec { spec: String, message: String },
}

/// A distribution over whole sequences, ordered lexicographically.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeqDist(BTreeMap<Sequence, f64>);

impl SeqDist {
    /// Validates non-negative entries summing to one within 1e-9.
    pub fn new(map: BTreeMap<Sequence, f64>) -> Result<Self, EvalError> {
        if let Some((s, p)) = map.iter().find(|(_, p)| !p.is_finite() || **p < 0.0) {
            return Err(EvalError::Invalid(format!("{s} has probability {p}")));
        }
        let total: f64 = map.values().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(EvalError::Invalid(format!("total mass {total}")));
        }
        Ok(Self(map))
    }

    pub fn prob(&self, seq: &[usize]) -> f64 {
        self.0.get(&Sequence::from(seq)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Sequence, f64)> {
        self.0.iter().map(|(s, p)| (s, *p))
    }

    /// Sequences with positive probability.
    pub fn support(&self) -> impl Iterator<Item = &Sequence> {
        self.0.iter().filter(|(_, p)| **p > 0.0).map(|(s, _)| s)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// The model's distribution over length-`length` sequences conditioned on
/// avoiding the error set: members get zero, the rest are renormalized.
pub fn ideal_distribution(model: &dyn Model, oracle: &dyn ErrorOracle, length: usize) -> Result<SeqDist, EvalError> {
    let v = model.vocab().len();
    let count = (v as f64).powi(length as i32);
    if count > MAX_ENUMERATION as f64 {
        return Err(EvalError::TooLarge { count });
    }
    let mut map = BTreeMap::new();
    let mut kept = 0.0;
    for seq in enumerate_sequences(v, length) {
        let p = if oracle.contains(&seq) {
            0.0
        } else {
            sequence_probability(model, &seq, 0)
        };
        kept += p;
        map.insert(seq, p);
    }
    if kept <= 0.0 {
        return Err(EvalError::AllExcluded);
    }
    for p in map.values_mut() {
        *p /= kept;
    }
    Ok(SeqDist(map))
}

/// Relative frequencies of `samples`.
pub fn empirical_distribution(samples: &[Sequence]) -> Result<SeqDist, EvalError> {
    if samples.is_empty() {
        return Err(EvalError::NoSamples);
    }
    let mut counts: BTreeMap<Sequence, usize> = BTreeMap::new();
    for s in samples {
        *counts.entry(s.clone()).or_default() += 1;
    }
    let n = samples.len() as f64;
    Ok(SeqDist(counts.into_iter().map(|(s, c)| (s, c as f64 / n)).collect()))
}

/// `KL(observed || ideal)` in nats, with `0 ln 0 = 0`.
pub fn kl_divergence(observed: &SeqDist, ideal: &SeqDist) -> Result<f64, EvalError> {
    let mut kl = 0.0;
    for (seq, p) in observed.iter() {
        if p <= 0.0 {
            continue;
        }
        let q = ideal.prob(seq);
        if q <= 0.0 {
            return Err(EvalError::InfiniteDivergence { sequence: seq.clone() });
        }
        kl += p * (p / q).ln();
    }
    // rounding can push an exact match a hair below zero
    Ok(kl.max(0.0))
}

/// The random stream for episode `index` of a run seeded with `seed`.
///
/// Every method run under the same seed sees the same stream for the same
/// episode, so outputs agree until the first error is found.
pub fn episode_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::UniformModel;
    use crate::oracle::parse_pattern_spec;
    use crate::token::Vocab;
    use proptest::prelude::*;

    fn seq(text: &str) -> Sequence {
        Vocab::abc().parse_chars(text).unwrap()
    }

    #[test]
    fn ideal_with_one_error() {
        let v = Vocab::abc();
        let m = UniformModel::new(v.clone());
        let d = ideal_distribution(&m, &parse_pattern_spec("AAA", &v).unwrap(), 3).unwrap();
        assert_eq!(d.prob(&seq("AAA")), 0.0);
        assert_eq!(d.support().count(), 26);
        for s in d.support() {
            assert!((d.prob(s) - 1.0 / 26.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ideal_without_errors_is_the_base() {
        let v = Vocab::abc();
        let m = UniformModel::new(v.clone());
        let d = ideal_distribution(&m, &parse_pattern_spec("", &v).unwrap(), 2).unwrap();
        assert_eq!(d.len(), 9);
        assert!(d.iter().all(|(_, p)| (p - 1.0 / 9.0).abs() < 1e-15));
    }

    #[test]
    fn ideal_two_token_example() {
        let v = Vocab::from_chars("AB").unwrap();
        let m = UniformModel::new(v.clone());
        let d = ideal_distribution(&m, &parse_pattern_spec("AA", &v).unwrap(), 2).unwrap();
        assert_eq!(d.prob(&[0, 0]), 0.0);
        for s in [[0, 1], [1, 0], [1, 1]] {
            assert!((d.prob(&s) - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn ideal_errors() {
        let v = Vocab::abc();
        let m = UniformModel::new(v.clone());
        assert_eq!(
            ideal_distribution(&m, &parse_pattern_spec("***", &v).unwrap(), 3),
            Err(EvalError::AllExcluded)
        );
        assert!(matches!(
            ideal_distribution(&m, &parse_pattern_spec("", &v).unwrap(), 20),
            Err(EvalError::TooLarge { .. })
        ));
    }

    #[test]
    fn empirical_examples() {
        let d = empirical_distribution(&[seq("AAA"), seq("AAA")]).unwrap();
        assert_eq!(d.prob(&seq("AAA")), 1.0);
        assert_eq!(d.len(), 1);
        let all: Vec<Sequence> = enumerate_sequences(3, 3).collect();
        let d = empirical_distribution(&all).unwrap();
        assert!(d.iter().all(|(_, p)| (p - 1.0 / 27.0).abs() < 1e-15));
        assert_eq!(empirical_distribution(&[]), Err(EvalError::NoSamples));
    }

    #[test]
    fn empirical_uniform_concentrates() {
        use crate::sampler::unconstrained_generate;
        use crate::GenerationLimits;
        let m = UniformModel::new(Vocab::abc());
        let samples: Vec<Sequence> = (0..10_000)
            .map(|i| unconstrained_generate(&m, &[], &GenerationLimits::new(3), &mut episode_rng(8, i)).sequence)
            .collect();
        let d = empirical_distribution(&samples).unwrap();
        // binomial(10000, 1/27): five sd bound on each frequency
        let p: f64 = 1.0 / 27.0;
        let bound = 5.0 * (p * (1.0 - p) / 10_000.0).sqrt();
        for s in enumerate_sequences(3, 3) {
            assert!((d.prob(&s) - p).abs() < bound);
        }
    }

    #[test]
    fn kl_examples() {
        let a = SeqDist::new([(seq("A"), 0.5), (seq("B"), 0.5)].into_iter().collect()).unwrap();
        assert_eq!(kl_divergence(&a, &a).unwrap(), 0.0);
        let point = SeqDist::new([(seq("A"), 1.0)].into_iter().collect()).unwrap();
        assert!((kl_divergence(&point, &a).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let c = SeqDist::new([(seq("C"), 1.0)].into_iter().collect()).unwrap();
        assert!(matches!(
            kl_divergence(&c, &a),
            Err(EvalError::InfiniteDivergence { .. })
        ));
    }

    #[test]
    fn episode_streams_are_distinct_and_reproducible() {
        use rand::Rng;
        let a: u64 = episode_rng(1, 0).gen();
        let b: u64 = episode_rng(1, 1).gen();
        let c: u64 = episode_rng(1, 0).gen();
        assert_ne!(a, b);
        assert_eq!(a, c);
    }

    fn arb_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..8).prop_flat_map(|n| {
            (
                prop::collection::vec(0.01f64..1.0, n),
                prop::collection::vec(0.01f64..1.0, n),
            )
        })
    }

    fn to_dist(w: &[f64]) -> SeqDist {
        let total: f64 = w.iter().sum();
        SeqDist(
            w.iter()
                .enumerate()
                .map(|(i, x)| (Sequence::from(vec![i]), x / total))
                .collect(),
        )
    }

    proptest! {
        #[test]
        fn kl_is_nonnegative_and_zero_only_on_equality((p, q) in arb_pair()) {
            let (dp, dq) = (to_dist(&p), to_dist(&q));
            let kl = kl_divergence(&dp, &dq).unwrap();
            prop_assert!(kl >= 0.0);
            prop_assert!(kl_divergence(&dp, &dp).unwrap().abs() < 1e-12);
            let max_gap = dp.iter().map(|(s, x)| (x - dq.prob(s)).abs()).fold(0.0, f64::max);
            if max_gap > 1e-3 {
                prop_assert!(kl > 0.0);
            }
        }
    }
}
