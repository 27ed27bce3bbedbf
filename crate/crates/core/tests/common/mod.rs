//! Random models and brute-force reference computations shared by the
//! integration tests.

#![allow(dead_code)]

use aprad::token::enumerate_sequences;
use aprad::{sequence_probability, Dist, Model, Sequence, TableModel, TokenId, Vocab};
use rand::Rng;

/// A distribution with random weights; each entry is zero with probability
/// `zero_chance`, but at least one entry is positive.
pub fn random_dist<R: Rng>(rng: &mut R, n: usize, zero_chance: f64) -> Dist {
    loop {
        let w: Vec<f64> = (0..n)
            .map(|_| {
                if rng.gen_bool(zero_chance) {
                    0.0
                } else {
                    rng.gen_range(0.01..1.0)
                }
            })
            .collect();
        let total: f64 = w.iter().sum();
        if total > 0.0 {
            return Dist::new(w.iter().map(|x| x / total).collect()).expect("normalized");
        }
    }
}

/// A table model with an explicit row for every prefix shorter than `depth`.
pub fn random_table_model<R: Rng>(rng: &mut R, vocab_size: usize, depth: usize, zero_chance: f64) -> TableModel {
    let vocab = Vocab::new((0..vocab_size).map(|i| ((b'A' + i as u8) as char).to_string())).unwrap();
    let mut rows = Vec::new();
    for len in 0..depth {
        for prefix in enumerate_sequences(vocab_size, len) {
            rows.push((prefix, random_dist(rng, vocab_size, zero_chance).into_vec()));
        }
    }
    TableModel::new(vocab, vec![1.0 / vocab_size as f64; vocab_size], rows).unwrap()
}

pub fn is_prefix(a: &[TokenId], b: &[TokenId]) -> bool {
    a.len() <= b.len() && b[..a.len()] == *a
}

/// Up to `max` distinct sequences of length `1..=depth`, no one a prefix of
/// another.
pub fn random_prefix_free_set<R: Rng>(rng: &mut R, vocab_size: usize, depth: usize, max: usize) -> Vec<Sequence> {
    let target = rng.gen_range(1..=max);
    let mut set: Vec<Sequence> = Vec::new();
    for _ in 0..target * 20 {
        if set.len() == target {
            break;
        }
        let len = rng.gen_range(1..=depth);
        let s: Sequence = (0..len).map(|_| rng.gen_range(0..vocab_size)).collect();
        if set.iter().all(|b| !is_prefix(b, &s) && !is_prefix(&s, b)) {
            set.push(s);
        }
    }
    set
}

/// Total base probability of the set (sequences starting after `prompt`).
pub fn set_mass(model: &dyn Model, prompt: &[TokenId], set: &[Sequence]) -> f64 {
    set.iter()
        .map(|b| {
            let mut full = prompt.to_vec();
            full.extend_from_slice(b);
            sequence_probability(model, &full, prompt.len())
        })
        .sum()
}
