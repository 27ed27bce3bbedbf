//! Error-free sampling from autoregressive models.
//!
//! The crate models an autoregressive language model as a deterministic map
//! from token prefixes to next-token distributions ([`Model`]), an error set as
//! a prefix-closed membership oracle ([`ErrorOracle`]), and provides four ways
//! of drawing sequences that avoid the error set:
//!
//! * rejection sampling ([`rejection_sample`]),
//! * constrained decoding, which deletes only the offending token,
//! * ASAp, which records each discovered error in an [`ExclusionTrie`] and
//!   restarts from the prompt,
//! * approximately aligned decoding (AprAD), which uses speculative sampling
//!   between the trie before and after each update to pick a backtrack point.
//!
//! The last three share one decoding loop ([`error_free_decoding`]) and differ
//! only in the [`Strategy`] invoked after an error is found.
//!
//! The [`eval`] module computes the exact conditioned distribution, KL
//! divergence against it, and runs the three-token simulated testbench.

pub mod cli;
pub mod dist;
pub mod eval;
pub mod exclusion;
pub mod model;
pub mod oracle;
pub mod par;
pub mod sampler;
pub mod token;

pub use dist::{apply_temperature, apply_top_k, apply_top_p, normalize, sample_token, Dist, DistError, Transforms};
pub use eval::{
    empirical_distribution, ideal_distribution, kl_divergence, run_testbench, SeqDist, TestbenchConfig, TestbenchReport,
};
pub use exclusion::{ExclusionTrie, PathSnapshot};
pub use model::{
    sequence_probability, ConditionalSource, CountingModel, EpisodeStats, GenerationLimits, Model, QueryError,
    TableModel, TransformedModel, UniformModel,
};
pub use oracle::{parse_pattern_spec, verify_prefix_closure, BannedSymbolSet, ErrorOracle, ErrorSet, PatternSet};
pub use sampler::{
    error_free_decoding, rejection_sample, spec_sample, unconstrained_generate, Aprad, Asap, Constrained,
    GenerationOutcome, Method, Strategy, TraceEvent,
};
pub use token::{Sequence, TokenId, Vocab};
