//! The simulated testbench: many short episodes per (error set, method, seed)
//! cell on a small model, scored by KL divergence against the exact
//! conditioned distribution and by generation ratio.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::eval::report::Provenance;
use crate::eval::{empirical_distribution, episode_rng, ideal_distribution, kl_divergence, EvalError};
use crate::exclusion::ExclusionTrie;
use crate::model::{CountingModel, GenerationLimits, Model, UniformModel};
use crate::oracle::{ErrorOracle, ErrorSet};
use crate::par::{map_indices, Execution};
use crate::sampler::{decode_with_trie, GenerationOutcome, Method};
use crate::token::{Sequence, Vocab};

/// The nine error sets of the three-token testbench, in table order.
pub const TABLE_ERROR_SETS: [&str; 9] = [
    "",
    "AAA",
    "AAA, AAC",
    "AAA, ACC",
    "AAA, CCC",
    "AAA, AAB, ABA, BAA",
    "A** except AAC",
    "*** except AAA, AAB, ABA, BAA",
    "*** except AAA, BAA",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestbenchConfig {
    pub vocab: Vocab,
    pub specs: Vec<String>,
    pub methods: Vec<Method>,
    /// Episodes per (spec, method, seed) cell.
    pub samples: usize,
    pub length: usize,
    pub seeds: Vec<u64>,
    pub invocation_budget: u64,
    /// Keep one exclusion trie across all episodes of a cell instead of a
    /// fresh one per episode. Episodes then run in order. The model cache
    /// and the invocation budget are still per episode.
    pub persist: bool,
    /// Not part of the config hash: both modes produce identical reports.
    #[serde(skip)]
    pub execution: Execution,
}

impl Default for TestbenchConfig {
    fn default() -> Self {
        Self {
            vocab: Vocab::abc(),
            specs: TABLE_ERROR_SETS.iter().map(|s| s.to_string()).collect(),
            methods: Method::TESTBENCH.to_vec(),
            samples: 10_000,
            length: 3,
            seeds: vec![1, 2, 3],
            invocation_budget: 2000,
            persist: false,
            execution: Execution::default(),
        }
    }
}

impl TestbenchConfig {
    /// Hex SHA-256 of the canonical JSON form of the config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Aggregates for one (spec, method, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub seed: u64,
    /// `None` when some output had zero ideal probability.
    pub kl: Option<f64>,
    pub invocations: u64,
    pub output_tokens: u64,
    /// Episodes that ended without a full-length output.
    pub incomplete: usize,
    /// Completed outputs that are members of the error set.
    pub error_outputs: usize,
}

impl CellResult {
    /// Total invocations over total emitted tokens, or 0 with no tokens.
    pub fn ratio(&self) -> f64 {
        if self.output_tokens == 0 {
            0.0
        } else {
            self.invocations as f64 / self.output_tokens as f64
        }
    }
}

/// One (spec, method) row, averaged over seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub error_set: String,
    pub method: Method,
    /// `None` if any seed diverged.
    pub kl_mean: Option<f64>,
    pub kl_sd: Option<f64>,
    pub ratio_mean: f64,
    pub ratio_sd: f64,
    pub samples: usize,
    pub seeds: Vec<u64>,
    pub cells: Vec<CellResult>,
}

impl ReportRow {
    pub fn is_divergent(&self) -> bool {
        self.kl_mean.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestbenchReport {
    pub rows: Vec<ReportRow>,
    pub provenance: Provenance,
}

impl TestbenchReport {
    pub fn row(&self, error_set: &str, method: Method) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.error_set == error_set && r.method == method)
    }

    pub fn has_divergence(&self) -> bool {
        self.rows.iter().any(ReportRow::is_divergent)
    }
}

/// Runs the testbench on the uniform model over the config's vocabulary.
pub fn run_testbench(config: &TestbenchConfig) -> Result<TestbenchReport, EvalError> {
    run_testbench_on(&UniformModel::new(config.vocab.clone()), config)
}

/// Runs the testbench on an arbitrary model over the config's vocabulary.
///
/// Rows come out in (spec, method) order of the config; cells within a row
/// in seed order.
pub fn run_testbench_on(model: &dyn Model, config: &TestbenchConfig) -> Result<TestbenchReport, EvalError> {
    let limits = GenerationLimits::new(config.length).with_budget(config.invocation_budget);
    let mut rows = Vec::with_capacity(config.specs.len() * config.methods.len());
    for spec in &config.specs {
        let oracle = ErrorSet::parse(spec, &config.vocab).map_err(|e| EvalError::Spec {
            spec: spec.clone(),
            message: e.to_string(),
        })?;
        let ideal = ideal_distribution(model, &oracle, config.length)?;
        for &method in &config.methods {
            let cells = config
                .seeds
                .iter()
                .map(|&seed| {
                    let outcomes = run_episodes(model, &oracle, method, &limits, seed, config);
                    score_cell(seed, &outcomes, &oracle, &ideal, config.length)
                })
                .collect::<Vec<_>>();
            rows.push(summarize(spec, method, config, cells));
        }
    }
    Ok(TestbenchReport {
        rows,
        provenance: Provenance {
            config_hash: config.hash(),
            seeds: config.seeds.clone(),
        },
    })
}

/// The `config.samples` episodes of one cell, in episode order.
pub fn run_episodes(
    model: &dyn Model,
    oracle: &dyn ErrorOracle,
    method: Method,
    limits: &GenerationLimits,
    seed: u64,
    config: &TestbenchConfig,
) -> Vec<GenerationOutcome> {
    match method.strategy() {
        Some(strategy) if config.persist => {
            let mut trie = ExclusionTrie::new(CountingModel::with_budget(model, limits.invocation_budget));
            (0..config.samples)
                .map(|i| {
                    // recorded errors carry over; the model cache and budget do not
                    trie.base_mut().reset_episode();
                    decode_with_trie(
                        &mut trie,
                        oracle,
                        &[],
                        strategy,
                        limits,
                        &mut episode_rng(seed, i as u64),
                    )
                })
                .collect()
        }
        _ => map_indices(config.samples, config.execution, |i| {
            method.run(model, oracle, &[], limits, &mut episode_rng(seed, i as u64))
        }),
    }
}

fn score_cell(
    seed: u64,
    outcomes: &[GenerationOutcome],
    oracle: &dyn ErrorOracle,
    ideal: &crate::eval::SeqDist,
    length: usize,
) -> CellResult {
    let mut invocations = 0;
    let mut output_tokens = 0;
    let mut incomplete = 0;
    let mut error_outputs = 0;
    let mut finished: Vec<Sequence> = Vec::with_capacity(outcomes.len());
    for out in outcomes {
        invocations += out.stats.invocations;
        output_tokens += out.stats.output_tokens;
        if !out.completed || out.sequence.len() != length {
            incomplete += 1;
            continue;
        }
        if oracle.contains(&out.sequence) {
            error_outputs += 1;
        }
        finished.push(out.sequence.clone());
    }
    let kl = empirical_distribution(&finished)
        .ok()
        .and_then(|obs| kl_divergence(&obs, ideal).ok());
    CellResult {
        seed,
        kl,
        invocations,
        output_tokens,
        incomplete,
        error_outputs,
    }
}

fn summarize(spec: &str, method: Method, config: &TestbenchConfig, cells: Vec<CellResult>) -> ReportRow {
    let kls: Option<Vec<f64>> = cells.iter().map(|c| c.kl).collect();
    let ratios: Vec<f64> = cells.iter().map(CellResult::ratio).collect();
    let (kl_mean, kl_sd) = match kls {
        Some(k) if !k.is_empty() => {
            let (m, s) = mean_sd(&k);
            (Some(m), Some(s))
        }
        _ => (None, None),
    };
    let (ratio_mean, ratio_sd) = mean_sd(&ratios);
    ReportRow {
        error_set: spec.to_string(),
        method,
        kl_mean,
        kl_sd,
        ratio_mean,
        ratio_sd,
        samples: config.samples,
        seeds: config.seeds.clone(),
        cells,
    }
}

/// Mean and sample standard deviation (zero for fewer than two values).
fn mean_sd(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(specs: &[&str], methods: &[Method], samples: usize) -> TestbenchConfig {
        TestbenchConfig {
            specs: specs.iter().map(|s| s.to_string()).collect(),
            methods: methods.to_vec(),
            samples,
            ..TestbenchConfig::default()
        }
    }

    #[test]
    fn mean_sd_examples() {
        assert_eq!(mean_sd(&[]), (0.0, 0.0));
        assert_eq!(mean_sd(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_sd(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_set_ratios_are_exactly_one() {
        let report = run_testbench(&small(&[""], &Method::TESTBENCH, 500)).unwrap();
        assert_eq!(report.rows.len(), 3);
        for row in &report.rows {
            assert_eq!(row.ratio_mean, 1.0, "{}", row.method);
            assert_eq!(row.ratio_sd, 0.0);
            assert!(row.kl_mean.unwrap() > 0.0);
        }
    }

    #[test]
    fn outputs_are_error_free() {
        let report = run_testbench(&small(
            &["A** except AAC", "AAA, AAB, ABA, BAA"],
            &Method::TESTBENCH,
            300,
        ))
        .unwrap();
        for row in &report.rows {
            for c in &row.cells {
                assert_eq!(c.error_outputs, 0);
                assert_eq!(c.incomplete, 0);
            }
            assert!(!row.is_divergent());
        }
    }

    #[test]
    fn unconstrained_row_diverges() {
        let report = run_testbench(&small(&["A**"], &[Method::Unconstrained], 200)).unwrap();
        assert!(report.has_divergence());
        assert!(report.rows[0].cells.iter().all(|c| c.error_outputs > 0));
    }

    #[test]
    fn execution_mode_does_not_change_the_report() {
        let mut cfg = small(&["AAA, AAC"], &Method::TESTBENCH, 400);
        cfg.execution = Execution::Sequential;
        let a = run_testbench(&cfg).unwrap();
        cfg.execution = Execution::Parallel;
        let b = run_testbench(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn persistent_trie_reuses_discoveries() {
        let mut cfg = small(&["AAA"], &[Method::Asap], 400);
        let fresh = run_testbench(&cfg).unwrap();
        cfg.persist = true;
        let kept = run_testbench(&cfg).unwrap();
        assert!(kept.rows[0].ratio_mean < fresh.rows[0].ratio_mean);
        assert_ne!(fresh.provenance.config_hash, kept.provenance.config_hash);
    }

    #[test]
    fn bad_spec_is_reported() {
        let err = run_testbench(&small(&["AAQ"], &Method::TESTBENCH, 10)).unwrap_err();
        assert!(matches!(err, EvalError::Spec { .. }));
        let err = run_testbench(&small(&["***"], &Method::TESTBENCH, 10)).unwrap_err();
        assert_eq!(err, EvalError::AllExcluded);
    }
}
