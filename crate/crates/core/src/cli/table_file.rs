//! Text format for [`TableModel`]s.
//!
//! ```text
//! # comments and blank lines are ignored
//! A,B,C                 vocabulary labels
//! default,0.2,0.3,0.5   required fallback row
//! -,0.5,0.25,0.25       row for the empty prefix
//! AB,0.1,0.1,0.8        row for the prefix "AB"
//! @eos,C                optional end-of-sequence token
//! ```
//!
//! With single-character labels a prefix is written as the concatenated
//! labels; otherwise as labels separated by spaces.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dist::Dist;
use crate::model::{Model, TableModel};
use crate::token::{Sequence, TokenId, Vocab};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}: {message}")]
pub struct TableFileError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> TableFileError {
    TableFileError {
        line,
        message: message.into(),
    }
}

fn split_fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_prefix(text: &str, vocab: &Vocab, line: usize) -> Result<Sequence, TableFileError> {
    if text == "-" {
        return Ok(Sequence::new());
    }
    let tokens: Vec<TokenId> = if vocab.is_single_char() {
        vocab
            .parse_chars(text)
            .map_err(|e| err(line, e.to_string()))?
            .into_vec()
    } else {
        text.split_whitespace()
            .map(|l| {
                vocab
                    .id(l)
                    .ok_or_else(|| err(line, format!("unknown token {l:?} in prefix")))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(Sequence::from(tokens))
}

fn format_prefix(seq: &[TokenId], vocab: &Vocab) -> String {
    if seq.is_empty() {
        "-".to_string()
    } else if vocab.is_single_char() {
        vocab.render(seq)
    } else {
        seq.iter().map(|&t| vocab.label(t)).collect::<Vec<_>>().join(" ")
    }
}

fn parse_probs(fields: &[&str], n: usize, line: usize) -> Result<Vec<f64>, TableFileError> {
    if fields.len() != n {
        return Err(err(line, format!("expected {n} probabilities, found {}", fields.len())));
    }
    let probs: Vec<f64> = fields
        .iter()
        .map(|f| {
            f.parse::<f64>()
                .map_err(|_| err(line, format!("bad probability {f:?}")))
        })
        .collect::<Result<_, _>>()?;
    Dist::new(probs.clone()).map_err(|e| err(line, e.to_string()))?;
    Ok(probs)
}

pub fn parse_table_model(text: &str) -> Result<TableModel, TableFileError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let (header_line, header) = lines.next().ok_or_else(|| err(1, "missing vocabulary header"))?;
    let vocab =
        Vocab::new(split_fields(header).into_iter().map(String::from)).map_err(|e| err(header_line, e.to_string()))?;
    let n = vocab.len();

    let mut default = None;
    let mut eos = None;
    let mut rows: Vec<(Sequence, Vec<f64>)> = Vec::new();
    for (line, content) in lines {
        let fields = split_fields(content);
        let (key, rest) = fields.split_first().expect("split yields at least one field");
        match *key {
            "@eos" => {
                let [label] = rest else {
                    return Err(err(line, "expected @eos,<label>"));
                };
                eos = Some(
                    vocab
                        .id(label)
                        .ok_or_else(|| err(line, format!("unknown eos token {label:?}")))?,
                );
            }
            "default" => {
                if default.is_some() {
                    return Err(err(line, "duplicate default row"));
                }
                default = Some((line, parse_probs(rest, n, line)?));
            }
            _ => {
                let prefix = parse_prefix(key, &vocab, line)?;
                if rows.iter().any(|(p, _)| *p == prefix) {
                    return Err(err(line, format!("duplicate row for prefix {key:?}")));
                }
                rows.push((prefix, parse_probs(rest, n, line)?));
            }
        }
    }
    let (default_line, default) = default.ok_or_else(|| err(header_line, "missing default row"))?;
    let model = TableModel::new(vocab, default, rows).map_err(|e| err(default_line, e.to_string()))?;
    match eos {
        Some(e) => model.with_eos(e).map_err(|e| err(0, e.to_string())),
        None => Ok(model),
    }
}

/// Writes `model` in the format read by [`parse_table_model`].
pub fn format_table_model(model: &TableModel) -> String {
    let vocab = model.vocab();
    let probs = |d: &Dist| d.probs().iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",");
    let mut out = vocab.labels().join(",");
    out.push('\n');
    let _ = writeln!(out, "default,{}", probs(model.default_dist()));
    for (prefix, dist) in model.rows() {
        let _ = writeln!(out, "{},{}", format_prefix(prefix, vocab), probs(dist));
    }
    if let Some(e) = model.eos() {
        let _ = writeln!(out, "@eos,{}", vocab.label(e));
    }
    out
}
