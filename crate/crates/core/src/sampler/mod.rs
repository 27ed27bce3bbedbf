//! Sampling methods: plain autoregressive generation, rejection sampling and
//! the shared error-free decoding loop with its three strategies.

mod decode;
pub mod spec;
mod strategy;

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use serde::{Deserialize, Serialize};

pub use decode::{
    decode_with_trie, error_free_decoding, rejection_sample, unconstrained_generate, GenerationOutcome, TraceEvent,
};
pub use spec::{acceptance_probability, residual, single_step_law, spec_sample, SpecSampleError};
pub use strategy::{Aprad, Asap, Constrained, Strategy};

use crate::model::{GenerationLimits, Model};
use crate::oracle::ErrorOracle;
use crate::token::TokenId;

/// Sampling method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Unconstrained,
    Rejection,
    Constrained,
    Asap,
    Aprad,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Unconstrained,
        Method::Rejection,
        Method::Constrained,
        Method::Asap,
        Method::Aprad,
    ];

    /// The methods compared in the simulated testbench, in table order.
    pub const TESTBENCH: [Method; 3] = [Method::Asap, Method::Constrained, Method::Aprad];

    pub fn name(&self) -> &'static str {
        match self {
            Method::Unconstrained => "unconstrained",
            Method::Rejection => "rejection",
            Method::Constrained => "constrained",
            Method::Asap => "asap",
            Method::Aprad => "aprad",
        }
    }

    /// Strategy for the error-free decoding loop, if the method uses it.
    pub fn strategy(&self) -> Option<&'static dyn Strategy> {
        match self {
            Method::Constrained => Some(&Constrained),
            Method::Asap => Some(&Asap),
            Method::Aprad => Some(&Aprad),
            Method::Unconstrained | Method::Rejection => None,
        }
    }

    /// True when completed outputs are guaranteed to avoid the error set.
    pub fn is_error_free(&self) -> bool {
        !matches!(self, Method::Unconstrained)
    }

    pub fn run(
        &self,
        model: &dyn Model,
        oracle: &dyn ErrorOracle,
        prompt: &[TokenId],
        limits: &GenerationLimits,
        rng: &mut dyn RngCore,
    ) -> GenerationOutcome {
        match self {
            Method::Unconstrained => unconstrained_generate(model, prompt, limits, rng),
            Method::Rejection => rejection_sample(model, oracle, prompt, limits, rng),
            m => error_free_decoding(model, oracle, prompt, m.strategy().expect("loop method"), limits, rng),
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                format!("unknown method {s:?} (expected one of unconstrained, rejection, constrained, asap, aprad)")
            })
    }
}
