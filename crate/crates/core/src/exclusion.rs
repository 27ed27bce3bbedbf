//! The base model conditioned on avoiding a finite set of recorded errors.
//!
//! An [`ExclusionTrie`] stores, for each prefix touched by a recorded error,
//! how much base-model mass has been removed from each next-token entry.
//! The adjusted conditional at a prefix is `normalize(base - removed)`;
//! prefixes without a node fall through to the base model unchanged.
//!
//! Removed mass is kept in base-model units. Subtracting `d` from an adjusted
//! entry and renormalizing is the same as adding `Z * d` to the removed mass,
//! where `Z` is the node's remaining base mass, so repeated updates never
//! compound rounding through intermediate normalizations.
//!
//! Recording a sequence `x` walks from its last token back to the prompt.
//! At each node the adjusted probability of the remainder of `x` is removed
//! from the entry for the next token of `x`. Afterwards `x` has probability
//! zero and every other sequence is scaled by `1 / (1 - p(x))`.

use std::collections::BTreeMap;

use crate::dist::{normalize, Dist};
use crate::model::{ConditionalSource, CountingModel, QueryError};
use crate::token::{Sequence, TokenId};

/// Remaining mass below which a node counts as fully excluded.
pub const DEAD_NODE_MASS: f64 = 1e-12;

#[derive(Debug, Clone, Default)]
struct Node {
    children: BTreeMap<TokenId, usize>,
    /// Base-model mass removed per token; empty until the node is adjusted.
    removed: Vec<f64>,
    fully_excluded: bool,
}

/// Adjusted next-token distributions for one generation episode.
pub struct ExclusionTrie<'m> {
    base: CountingModel<'m>,
    nodes: Vec<Node>,
    recorded: Vec<Sequence>,
    excluded_mass: f64,
}

impl<'m> ExclusionTrie<'m> {
    /// A trie with nothing recorded; every conditional equals the base.
    pub fn new(base: CountingModel<'m>) -> Self {
        Self {
            base,
            nodes: vec![Node::default()],
            recorded: Vec::new(),
            excluded_mass: 0.0,
        }
    }

    pub fn base(&self) -> &CountingModel<'m> {
        &self.base
    }

    pub fn base_mut(&mut self) -> &mut CountingModel<'m> {
        &mut self.base
    }

    /// Sequences recorded so far (no-op additions are not listed).
    pub fn recorded(&self) -> &[Sequence] {
        &self.recorded
    }

    /// Base-model probability of all recorded sequences.
    pub fn excluded_mass(&self) -> f64 {
        self.excluded_mass
    }

    /// Number of trie nodes, the root included.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn find(&self, prefix: &[TokenId]) -> Option<usize> {
        let mut at = 0;
        for t in prefix {
            at = *self.nodes[at].children.get(t)?;
        }
        Some(at)
    }

    fn ensure(&mut self, prefix: &[TokenId]) -> usize {
        let mut at = 0;
        for &t in prefix {
            at = match self.nodes[at].children.get(&t) {
                Some(&next) => next,
                None => {
                    self.nodes.push(Node::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[at].children.insert(t, next);
                    next
                }
            };
        }
        at
    }

    pub fn is_fully_excluded(&self, prefix: &[TokenId]) -> bool {
        self.find(prefix).is_some_and(|i| self.nodes[i].fully_excluded)
    }

    /// The adjusted conditional at `prefix`. Queries the base model at most
    /// once per prefix per episode (through the counting wrapper).
    pub fn excluded_conditional(&mut self, prefix: &[TokenId]) -> Result<Dist, QueryError> {
        let node = self.find(prefix);
        if node.is_some_and(|i| self.nodes[i].fully_excluded) {
            return Err(QueryError::FullyExcluded);
        }
        let base = self.base.conditional(prefix)?;
        match node {
            Some(i) if !self.nodes[i].removed.is_empty() => {
                let weights = remaining(&base, &self.nodes[i].removed);
                normalize(&weights).map_err(|_| QueryError::FullyExcluded)
            }
            _ => Ok(base),
        }
    }

    /// Adjusted conditionals along `x` at positions `prompt_len..x.len()`,
    /// captured before an update so they stay readable afterwards.
    pub fn snapshot_path(&mut self, x: &[TokenId], prompt_len: usize) -> Result<PathSnapshot, QueryError> {
        let mut dists = Vec::with_capacity(x.len().saturating_sub(prompt_len));
        for i in prompt_len..x.len() {
            match self.excluded_conditional(&x[..i]) {
                Ok(d) => dists.push(Some(d)),
                Err(QueryError::FullyExcluded) => dists.push(None),
                Err(e) => return Err(e),
            }
        }
        Ok(PathSnapshot {
            path: x.to_vec(),
            start: prompt_len,
            dists,
        })
    }

    /// Records `x` as an error: its adjusted probability becomes zero and all
    /// other sequences are rescaled uniformly. Tokens before `prompt_len` are
    /// never adjusted.
    ///
    /// Returns the number of nodes adjusted: `x.len() - prompt_len`, or zero
    /// when `x` already had probability zero.
    pub fn add_bad_sample(&mut self, x: &[TokenId], prompt_len: usize) -> Result<usize, QueryError> {
        let m = x.len();
        if m <= prompt_len {
            return Ok(0);
        }
        let old = self.snapshot_path(x, prompt_len)?;

        // suffix[k] = adjusted probability of x[prompt_len + k..] given its prefix
        let mut suffix = vec![1.0; m - prompt_len + 1];
        for k in (0..m - prompt_len).rev() {
            let Some(d) = &old.dists[k] else { return Ok(0) };
            suffix[k] = d.prob(x[prompt_len + k]) * suffix[k + 1];
        }
        if suffix[0] <= 0.0 {
            return Ok(0);
        }

        let mut base_prob = 1.0;
        let mut child_dead = false;
        for i in (prompt_len..m).rev() {
            let base = self.base.conditional(&x[..i])?;
            let idx = self.ensure(&x[..i]);
            let node = &mut self.nodes[idx];
            if node.removed.is_empty() {
                node.removed = vec![0.0; base.len()];
            }
            let t = x[i];
            base_prob *= base.prob(t);
            if i + 1 == m || child_dead {
                // everything below this entry is gone
                node.removed[t] = base.prob(t);
            } else {
                let z: f64 = remaining(&base, &node.removed).iter().sum();
                node.removed[t] = (node.removed[t] + z * suffix[i - prompt_len]).min(base.prob(t));
            }
            let left: f64 = remaining(&base, &node.removed).iter().sum();
            node.fully_excluded = left < DEAD_NODE_MASS;
            child_dead = node.fully_excluded;
        }
        self.excluded_mass += base_prob;
        self.recorded.push(Sequence::from(x));
        Ok(m - prompt_len)
    }

    /// Probability of `seq[prompt_len..]` under the adjusted distribution.
    pub fn excluded_sequence_probability(&mut self, seq: &[TokenId], prompt_len: usize) -> Result<f64, QueryError> {
        let mut p = 1.0;
        for i in prompt_len..seq.len() {
            match self.excluded_conditional(&seq[..i]) {
                Ok(d) => p *= d.prob(seq[i]),
                Err(QueryError::FullyExcluded) => return Ok(0.0),
                Err(e) => return Err(e),
            }
            if p == 0.0 {
                break;
            }
        }
        Ok(p)
    }

    /// Deterministic line-oriented rendering of every adjusted node:
    /// `prefix<TAB>p_0 p_1 ...` in depth-first token order, `-` for the empty
    /// prefix and `X` for a fully excluded node.
    pub fn dump(&mut self) -> Result<String, QueryError> {
        let vocab = self.base.vocab();
        let mut out = String::from("exclusion-trie v1\n");
        let mut stack: Vec<(usize, Vec<TokenId>)> = vec![(0, Vec::new())];
        while let Some((idx, prefix)) = stack.pop() {
            let children: Vec<(TokenId, usize)> = self.nodes[idx].children.iter().map(|(&t, &c)| (t, c)).collect();
            for &(t, c) in children.iter().rev() {
                let mut p = prefix.clone();
                p.push(t);
                stack.push((c, p));
            }
            if self.nodes[idx].removed.is_empty() {
                continue;
            }
            let label = if prefix.is_empty() {
                "-".to_string()
            } else if vocab.is_single_char() {
                vocab.render(&prefix)
            } else {
                prefix.iter().map(|&t| vocab.label(t)).collect::<Vec<_>>().join(".")
            };
            let body = match self.excluded_conditional(&prefix) {
                Ok(d) => d
                    .probs()
                    .iter()
                    .map(|p| format!("{p:.6}"))
                    .collect::<Vec<_>>()
                    .join(" "),
                Err(QueryError::FullyExcluded) => "X".to_string(),
                Err(e) => return Err(e),
            };
            out.push_str(&format!("{label}\t{body}\n"));
        }
        Ok(out)
    }
}

fn remaining(base: &Dist, removed: &[f64]) -> Vec<f64> {
    base.probs()
        .iter()
        .zip(removed)
        .map(|(b, r)| (b - r).max(0.0))
        .collect()
}

impl ConditionalSource for ExclusionTrie<'_> {
    fn conditional(&mut self, prefix: &[TokenId]) -> Result<Dist, QueryError> {
        self.excluded_conditional(prefix)
    }
}

/// Conditionals recorded along one sequence before a trie update.
#[derive(Debug, Clone)]
pub struct PathSnapshot {
    path: Vec<TokenId>,
    start: usize,
    dists: Vec<Option<Dist>>,
}

impl PathSnapshot {
    pub fn path(&self) -> &[TokenId] {
        &self.path
    }
}

impl ConditionalSource for PathSnapshot {
    fn conditional(&mut self, prefix: &[TokenId]) -> Result<Dist, QueryError> {
        let n = prefix.len();
        if n < self.start || n >= self.path.len() || prefix != &self.path[..n] {
            return Err(QueryError::Unavailable);
        }
        self.dists[n - self.start].clone().ok_or(QueryError::FullyExcluded)
    }
}
