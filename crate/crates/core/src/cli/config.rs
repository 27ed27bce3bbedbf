//! Run configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! vocab = ["A", "B", "C"]
//! model = "uniform"            # or "table:path/to/model.table"
//! error_spec = "AAA, AAC"      # or "banned:XYZ"
//! method = "aprad"
//! length = 3
//! samples = 10000
//! seeds = [1, 2, 3]
//! invocation_budget = 2000
//! output = "table"             # table, csv or json
//!
//! [transforms]
//! temperature = 0.8
//! top_k = 20
//! ```
//!
//! Every key is optional. Flags given on the command line replace the
//! corresponding file values.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cli::table_file::{parse_table_model, TableFileError};
use crate::dist::Transforms;
use crate::eval::TABLE_ERROR_SETS;
use crate::model::{Model, TableModel, TransformedModel, UniformModel};
use crate::oracle::{ErrorSet, ErrorSetError};
use crate::sampler::Method;
use crate::token::{Sequence, TokenId, Vocab, VocabError};

/// Largest seed or budget a config can hold.
pub const MAX_TOML_INT: u64 = i64::MAX as u64;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid vocabulary: {0}")]
    Vocab(#[from] VocabError),
    #[error("invalid model {spec:?}: expected \"uniform\" or \"table:<path>\"")]
    ModelSpec { spec: String },
    #[error("{path}: {source}")]
    TableFile { path: PathBuf, source: TableFileError },
    #[error("configured vocabulary {configured:?} does not match the model's {model:?}")]
    VocabMismatch {
        configured: Vec<String>,
        model: Vec<String>,
    },
    #[error("invalid error set {spec:?}: {source}")]
    ErrorSpec { spec: String, source: ErrorSetError },
    #[error("invalid transforms: {0}")]
    Transforms(String),
    #[error("invalid prompt {prompt:?}: {message}")]
    Prompt { prompt: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Where a model comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Uniform,
    Table(PathBuf),
}

impl FromStr for ModelSpec {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "uniform" => Ok(Self::Uniform),
            other => match other.strip_prefix("table:") {
                Some(path) if !path.is_empty() => Ok(Self::Table(PathBuf::from(path))),
                _ => Err(ConfigError::ModelSpec { spec: s.to_string() }),
            },
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform => f.write_str("uniform"),
            Self::Table(p) => write!(f, "table:{}", p.display()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Token labels. Unset means `A, B, C` for the uniform model and the
    /// file's header for a table model.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab: Option<Vec<String>>,
    pub model: String,
    pub error_spec: String,
    pub method: Method,
    /// New tokens per episode.
    pub length: usize,
    pub samples: usize,
    /// Empty means draw one from the operating system and report it.
    pub seeds: Vec<u64>,
    pub invocation_budget: u64,
    /// Prompt tokens: concatenated labels for single-character vocabularies,
    /// otherwise labels separated by whitespace.
    pub prompt: String,
    pub output: OutputFormat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_path: Option<PathBuf>,
    /// Error sets for the testbench; unset means the nine standard sets.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub specs: Option<Vec<String>>,
    /// Methods for the testbench; unset means asap, constrained, aprad.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
    /// Share one exclusion trie across the episodes of a testbench cell.
    pub persist: bool,
    /// Decimal places in `ideal` output.
    pub precision: usize,
    pub transforms: Transforms,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            vocab: None,
            model: "uniform".into(),
            error_spec: String::new(),
            method: Method::Aprad,
            length: 3,
            samples: 10_000,
            seeds: Vec::new(),
            invocation_budget: 2000,
            prompt: String::new(),
            transforms: Transforms::default(),
            output: OutputFormat::Table,
            output_path: None,
            specs: None,
            methods: None,
            persist: false,
            precision: 4,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.into(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hex SHA-256 of the TOML form.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn specs_or_default(&self) -> Vec<String> {
        self.specs
            .clone()
            .unwrap_or_else(|| TABLE_ERROR_SETS.iter().map(|s| s.to_string()).collect())
    }

    pub fn methods_or_default(&self) -> Vec<Method> {
        self.methods.clone().unwrap_or_else(|| Method::TESTBENCH.to_vec())
    }

    /// Builds the model, oracle and prompt, checking everything that can be
    /// checked before running.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        self.transforms.validate().map_err(ConfigError::Transforms)?;
        // TOML integers are signed 64-bit
        if let Some(s) = self.seeds.iter().find(|&&s| s > MAX_TOML_INT) {
            return Err(ConfigError::Invalid(format!("seed {s} exceeds {MAX_TOML_INT}")));
        }
        if self.invocation_budget > MAX_TOML_INT {
            return Err(ConfigError::Invalid(format!(
                "invocation budget exceeds {MAX_TOML_INT}"
            )));
        }
        let base: Box<dyn Model> = match self.model.parse::<ModelSpec>()? {
            ModelSpec::Uniform => {
                let vocab = match &self.vocab {
                    Some(labels) => Vocab::new(labels.clone())?,
                    None => Vocab::abc(),
                };
                Box::new(UniformModel::new(vocab))
            }
            ModelSpec::Table(path) => {
                let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io {
                    path: path.clone(),
                    source,
                })?;
                let table: TableModel = parse_table_model(&text).map_err(|source| ConfigError::TableFile {
                    path: path.clone(),
                    source,
                })?;
                if let Some(labels) = &self.vocab {
                    if labels.as_slice() != table.vocab().labels() {
                        return Err(ConfigError::VocabMismatch {
                            configured: labels.clone(),
                            model: table.vocab().labels().to_vec(),
                        });
                    }
                }
                Box::new(table)
            }
        };
        let model: Box<dyn Model> = if self.transforms.is_identity() {
            base
        } else {
            Box::new(TransformedModel::new(base, self.transforms))
        };
        let vocab = model.vocab().clone();
        let oracle = parse_error_spec(&self.error_spec, &vocab)?;
        for spec in self.specs.iter().flatten() {
            parse_error_spec(spec, &vocab)?;
        }
        let prompt = parse_prompt(&self.prompt, &vocab)?;
        Ok(Resolved {
            model,
            oracle,
            prompt,
            vocab,
        })
    }
}

fn parse_error_spec(spec: &str, vocab: &Vocab) -> Result<ErrorSet, ConfigError> {
    ErrorSet::parse(spec, vocab).map_err(|source| ConfigError::ErrorSpec {
        spec: spec.to_string(),
        source,
    })
}

fn parse_prompt(text: &str, vocab: &Vocab) -> Result<Vec<TokenId>, ConfigError> {
    let bad = |message: String| ConfigError::Prompt {
        prompt: text.to_string(),
        message,
    };
    if vocab.is_single_char() {
        vocab
            .parse_chars(text.trim())
            .map(Sequence::into_vec)
            .map_err(|e| bad(e.to_string()))
    } else {
        text.split_whitespace()
            .map(|l| vocab.id(l).ok_or_else(|| bad(format!("unknown token {l:?}"))))
            .collect()
    }
}

/// Writes a sequence the way prompts are read.
pub fn render_sequence(seq: &[TokenId], vocab: &Vocab) -> String {
    if vocab.is_single_char() {
        vocab.render(seq)
    } else {
        seq.iter().map(|&t| vocab.label(t)).collect::<Vec<_>>().join(" ")
    }
}

/// A config turned into runnable parts.
pub struct Resolved {
    pub model: Box<dyn Model>,
    pub oracle: ErrorSet,
    pub prompt: Vec<TokenId>,
    pub vocab: Vocab,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_resolve() {
        let r = RunConfig::default().resolve().unwrap();
        assert_eq!(r.vocab, Vocab::abc());
        assert!(r.prompt.is_empty());
    }

    #[test]
    fn file_example_parses() {
        let text = r#"
vocab = ["A", "B", "C"]
error_spec = "AAA, AAC"
method = "asap"
seeds = [4, 5]
output = "csv"

[transforms]
temperature = 0.8
top_k = 2
"#;
        let c = RunConfig::from_toml(text).unwrap();
        assert_eq!(c.method, Method::Asap);
        assert_eq!(c.seeds, vec![4, 5]);
        assert_eq!(c.output, OutputFormat::Csv);
        assert_eq!(c.transforms.top_k, Some(2));
        assert_eq!(c.samples, 10_000);
        assert_eq!(RunConfig::from_toml(&c.to_toml()).unwrap(), c);
        c.resolve().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml("sample = 3").is_err());
        assert!(RunConfig::from_toml("[transforms]\ntemp = 1.0").is_err());
        assert!(RunConfig::from_toml("method = \"greedy\"").is_err());
    }

    #[test]
    fn invalid_parts_are_reported() {
        let with = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            c.resolve().err().expect("should fail").to_string()
        };
        assert!(with(|c| c.model = "gpt".into()).contains("invalid model"));
        assert!(with(|c| c.error_spec = "AQ".into()).contains("invalid error set"));
        assert!(with(|c| c.specs = Some(vec!["AAA".into(), "A*Z".into()])).contains("A*Z"));
        assert!(with(|c| c.transforms.top_p = Some(1.5)).contains("top_p"));
        assert!(with(|c| c.prompt = "AX".into()).contains("prompt"));
        assert!(with(|c| c.vocab = Some(vec![])).contains("vocabulary"));
        assert!(with(|c| c.error_spec = "banned:ABC".into()).contains("invalid error set"));
    }

    #[test]
    fn model_spec_round_trip() {
        for s in ["uniform", "table:data/x.table"] {
            assert_eq!(s.parse::<ModelSpec>().unwrap().to_string(), s);
        }
        assert!("table:".parse::<ModelSpec>().is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.seeds = vec![1];
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
