//! The `aprad` command-line tool.
//!
//! Three subcommands share one set of configuration flags:
//!
//! * `testbench` runs the simulated KL / generation-ratio experiment,
//! * `generate` runs one episode and prints the sequence and its statistics,
//! * `ideal` prints the exact conditioned sequence distribution.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 invalid configuration or usage,
//! 3 divergent KL or an error set that excludes everything, 4 invocation
//! budget exhausted before completion.

pub mod config;
pub mod table_file;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{render_sequence, ConfigError, ModelSpec, OutputFormat, Resolved, RunConfig};
pub use table_file::{format_table_model, parse_table_model, TableFileError};

use crate::eval::{
    ideal_distribution, render_csv, render_json, render_table, run_testbench_on, EvalError, TestbenchConfig,
};
use crate::model::GenerationLimits;
use crate::par::Execution;
use crate::sampler::Method;

type CommandFn = fn(&RunConfig, &Overrides, &mut dyn Write, &mut dyn Write) -> i32;

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGENT: i32 = 3;
pub const EXIT_BUDGET: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "aprad", version, about = "Error-free sampling from autoregressive models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the simulated testbench and report KL divergence and generation ratios.
    Testbench(Overrides),
    /// Generate one sequence and print it with its statistics.
    Generate(Overrides),
    /// Print the exact distribution over sequences that avoid the error set.
    Ideal(Overrides),
}

/// Flags shared by every subcommand. Each replaces the matching config key.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Token labels, comma separated, or a run of single characters ("ABC").
    #[arg(long)]
    pub vocab: Option<String>,
    /// "uniform" or "table:<path>".
    #[arg(long)]
    pub model: Option<String>,
    /// Pattern set ("AAA, A*C except ABC") or "banned:<symbols>".
    #[arg(long)]
    pub error_spec: Option<String>,
    #[arg(long)]
    pub method: Option<Method>,
    /// New tokens per episode.
    #[arg(long, visible_alias = "max-tokens")]
    pub length: Option<usize>,
    /// Episodes per testbench cell.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Random seeds, comma separated (generate uses the first).
    #[arg(long, visible_alias = "seed", value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Distinct model evaluations allowed per episode.
    #[arg(long)]
    pub invocation_budget: Option<u64>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long, value_enum)]
    pub output: Option<OutputFormat>,
    /// Write the report here instead of standard output.
    #[arg(long)]
    pub output_path: Option<PathBuf>,
    /// Testbench error sets, separated by ';' or given repeatedly.
    #[arg(long, value_delimiter = ';')]
    pub specs: Option<Vec<String>>,
    /// Testbench methods, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Keep one exclusion trie across the episodes of a testbench cell.
    #[arg(long)]
    pub persist: bool,
    /// Decimal places for `ideal` probabilities.
    #[arg(long)]
    pub precision: Option<usize>,
    /// Run testbench episodes on one thread.
    #[arg(long)]
    pub sequential: bool,
}

fn split_vocab(text: &str) -> Vec<String> {
    if text.contains(',') {
        text.split(',').map(|s| s.trim().to_string()).collect()
    } else {
        text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect()
    }
}

impl Overrides {
    /// The config file (if any) with these flags applied on top.
    pub fn to_config(&self) -> Result<RunConfig, ConfigError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut c);
        Ok(c)
    }

    pub fn apply(&self, c: &mut RunConfig) {
        if let Some(v) = &self.vocab {
            c.vocab = Some(split_vocab(v));
        }
        if let Some(v) = &self.model {
            c.model = v.clone();
        }
        if let Some(v) = &self.error_spec {
            c.error_spec = v.clone();
        }
        if let Some(v) = self.method {
            c.method = v;
        }
        if let Some(v) = self.length {
            c.length = v;
        }
        if let Some(v) = self.samples {
            c.samples = v;
        }
        if let Some(v) = &self.seeds {
            c.seeds = v.clone();
        }
        if let Some(v) = self.invocation_budget {
            c.invocation_budget = v;
        }
        if let Some(v) = &self.prompt {
            c.prompt = v.clone();
        }
        if self.temperature.is_some() {
            c.transforms.temperature = self.temperature;
        }
        if self.top_k.is_some() {
            c.transforms.top_k = self.top_k;
        }
        if self.top_p.is_some() {
            c.transforms.top_p = self.top_p;
        }
        if let Some(v) = self.output {
            c.output = v;
        }
        if let Some(v) = &self.output_path {
            c.output_path = Some(v.clone());
        }
        if let Some(v) = &self.specs {
            c.specs = Some(v.clone());
        }
        if let Some(v) = &self.methods {
            c.methods = Some(v.clone());
        }
        if self.persist {
            c.persist = true;
        }
        if let Some(v) = self.precision {
            c.precision = v;
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let (flags, command): (&Overrides, CommandFn) = match &cli.command {
        Command::Testbench(o) => (o, cmd_testbench),
        Command::Generate(o) => (o, cmd_generate),
        Command::Ideal(o) => (o, cmd_ideal),
    };
    let mut config = match flags.to_config() {
        Ok(c) => c,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_CONFIG;
        }
    };
    if config.seeds.is_empty() {
        config.seeds = vec![rand::random::<u64>() & config::MAX_TOML_INT];
        let _ = writeln!(
            err,
            "no seed given; using {} (pass --seed {} to replay)",
            config.seeds[0], config.seeds[0]
        );
    }
    command(&config, flags, out, err)
}

fn config_error(err: &mut dyn Write, e: impl std::fmt::Display) -> i32 {
    let _ = writeln!(err, "error: {e}");
    EXIT_CONFIG
}

fn footer(config: &RunConfig) -> String {
    let seeds: Vec<String> = config.seeds.iter().map(u64::to_string).collect();
    format!("# provenance: config={} seeds={}", config.hash(), seeds.join(";"))
}

/// Writes `text` to the configured output path, or to `out`.
fn emit(config: &RunConfig, text: &str, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let result = match &config.output_path {
        Some(path) => std::fs::write(path, text),
        None => out.write_all(text.as_bytes()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: cannot write output: {e}");
            EXIT_IO
        }
    }
}

pub fn cmd_testbench(config: &RunConfig, flags: &Overrides, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    if config.samples == 0 {
        return config_error(err, "samples must be at least 1");
    }
    let resolved = match config.resolve() {
        Ok(r) => r,
        Err(e) => return config_error(err, e),
    };
    let tb = TestbenchConfig {
        vocab: resolved.vocab.clone(),
        specs: config.specs_or_default(),
        methods: config.methods_or_default(),
        samples: config.samples,
        length: config.length,
        seeds: config.seeds.clone(),
        invocation_budget: config.invocation_budget,
        persist: config.persist,
        execution: if flags.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        },
    };
    let mut report = match run_testbench_on(resolved.model.as_ref(), &tb) {
        Ok(r) => r,
        Err(EvalError::AllExcluded) => {
            let _ = writeln!(err, "error: {}", EvalError::AllExcluded);
            return EXIT_DIVERGENT;
        }
        Err(e) => return config_error(err, e),
    };
    report.provenance.config_hash = config.hash();

    let table = render_table(&report);
    let text = match config.output {
        OutputFormat::Table => table.clone(),
        OutputFormat::Csv => render_csv(&report),
        OutputFormat::Json => render_json(&report),
    };
    let code = emit(config, &text, out, err);
    if code != EXIT_OK {
        return code;
    }
    if config.output_path.is_some() || config.output != OutputFormat::Table {
        // the aligned table always reaches the terminal
        let sink: &mut dyn Write = if config.output_path.is_some() { out } else { err };
        let _ = sink.write_all(table.as_bytes());
    }
    if report.has_divergence() {
        for row in report.rows.iter().filter(|r| r.is_divergent()) {
            let _ = writeln!(
                err,
                "error: {} on {:?} produced sequences outside the ideal support",
                row.method, row.error_set
            );
        }
        return EXIT_DIVERGENT;
    }
    EXIT_OK
}

pub fn cmd_generate(config: &RunConfig, _flags: &Overrides, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let resolved = match config.resolve() {
        Ok(r) => r,
        Err(e) => return config_error(err, e),
    };
    let seed = config.seeds[0];
    let limits = GenerationLimits::new(config.length).with_budget(config.invocation_budget);
    let outcome = config.method.run(
        resolved.model.as_ref(),
        &resolved.oracle,
        &resolved.prompt,
        &limits,
        &mut crate::eval::episode_rng(seed, 0),
    );
    let ratio = outcome
        .stats
        .generation_ratio()
        .map_or_else(|| "n/a".to_string(), |r| format!("{r:.3}"));
    let text = format!(
        "sequence: {}\nmethod: {}\ninvocations: {}\ntokens: {}\nratio: {}\nerrors_discovered: {}\nbacktracks: {}\ncompleted: {}\nseed: {}\n{}\n",
        render_sequence(&outcome.sequence, &resolved.vocab),
        config.method,
        outcome.stats.invocations,
        outcome.stats.output_tokens,
        ratio,
        outcome.stats.errors_discovered,
        outcome.stats.backtracks,
        outcome.completed,
        seed,
        footer(config),
    );
    let code = emit(config, &text, out, err);
    if code != EXIT_OK {
        return code;
    }
    if !outcome.completed && outcome.stats.budget_exhausted {
        let _ = writeln!(
            err,
            "error: invocation budget of {} exhausted before completion",
            config.invocation_budget
        );
        return EXIT_BUDGET;
    }
    EXIT_OK
}

pub fn cmd_ideal(config: &RunConfig, _flags: &Overrides, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let resolved = match config.resolve() {
        Ok(r) => r,
        Err(e) => return config_error(err, e),
    };
    let dist = match ideal_distribution(resolved.model.as_ref(), &resolved.oracle, config.length) {
        Ok(d) => d,
        Err(EvalError::AllExcluded) => {
            let _ = writeln!(err, "error: {}", EvalError::AllExcluded);
            return EXIT_DIVERGENT;
        }
        Err(e) => return config_error(err, e),
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    let _ = w.write_record(["sequence", "probability"]);
    for (seq, p) in dist.iter().filter(|(_, p)| *p > 0.0) {
        let _ = w.write_record([
            render_sequence(seq, &resolved.vocab),
            format!("{p:.prec$}", prec = config.precision),
        ]);
    }
    let mut text = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    text.push_str(&footer(config));
    text.push('\n');
    emit(config, &text, out, err)
}
