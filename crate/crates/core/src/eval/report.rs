//! Rendering testbench reports as CSV, JSON and an aligned text table.
//!
//! KL values are printed with four decimals and ratios with three. A
//! divergent KL is written as `inf` in CSV and the table, `null` in JSON.

use std::fmt::Write as _;

use serde::Serialize;
use serde_json::value::RawValue;

use crate::eval::testbench::{ReportRow, TestbenchReport};

pub const CSV_HEADER: [&str; 8] = [
    "error_set",
    "method",
    "kl_div",
    "kl_sd",
    "gen_ratio",
    "ratio_sd",
    "samples",
    "seeds",
];

/// What is needed to reproduce a report.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl Provenance {
    /// The trailing line of every rendered report.
    pub fn footer(&self) -> String {
        format!(
            "# provenance: config={} seeds={}",
            self.config_hash,
            join_seeds(&self.seeds)
        )
    }
}

fn join_seeds(seeds: &[u64]) -> String {
    seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(";")
}

fn kl_text(v: Option<f64>) -> String {
    v.map_or_else(|| "inf".to_string(), |x| format!("{x:.4}"))
}

fn row_fields(row: &ReportRow) -> [String; 8] {
    [
        row.error_set.clone(),
        row.method.to_string(),
        kl_text(row.kl_mean),
        kl_text(row.kl_sd),
        format!("{:.3}", row.ratio_mean),
        format!("{:.3}", row.ratio_sd),
        row.samples.to_string(),
        join_seeds(&row.seeds),
    ]
}

pub fn render_csv(report: &TestbenchReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for row in &report.rows {
        w.write_record(row_fields(row)).expect("in-memory write");
    }
    let mut out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields");
    out.push_str(&report.provenance.footer());
    out.push('\n');
    out
}

#[derive(Serialize)]
struct JsonRow<'a> {
    error_set: &'a str,
    method: &'a str,
    kl_div: Box<RawValue>,
    kl_sd: Box<RawValue>,
    gen_ratio: Box<RawValue>,
    ratio_sd: Box<RawValue>,
    samples: usize,
    seeds: &'a [u64],
}

#[derive(Serialize)]
struct JsonReport<'a> {
    rows: Vec<JsonRow<'a>>,
    provenance: &'a Provenance,
}

fn raw(text: String) -> Box<RawValue> {
    RawValue::from_string(text).expect("formatted number is valid JSON")
}

fn raw_kl(v: Option<f64>) -> Box<RawValue> {
    raw(v.map_or_else(|| "null".to_string(), |x| format!("{x:.4}")))
}

/// Same fields as the CSV, with numbers at the same precision.
pub fn render_json(report: &TestbenchReport) -> String {
    let rows = report
        .rows
        .iter()
        .map(|r| JsonRow {
            error_set: &r.error_set,
            method: r.method.name(),
            kl_div: raw_kl(r.kl_mean),
            kl_sd: raw_kl(r.kl_sd),
            gen_ratio: raw(format!("{:.3}", r.ratio_mean)),
            ratio_sd: raw(format!("{:.3}", r.ratio_sd)),
            samples: r.samples,
            seeds: &r.seeds,
        })
        .collect();
    let mut out = serde_json::to_string_pretty(&JsonReport {
        rows,
        provenance: &report.provenance,
    })
    .expect("report serializes");
    out.push('\n');
    out
}

/// One line per error set, with a KL and a ratio column per method, in the
/// order methods first appear in the report.
pub fn render_table(report: &TestbenchReport) -> String {
    let mut methods = Vec::new();
    let mut specs: Vec<&str> = Vec::new();
    for r in &report.rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
        if !specs.contains(&r.error_set.as_str()) {
            specs.push(&r.error_set);
        }
    }
    let label = |s: &str| {
        if s.is_empty() {
            "\u{2205}".to_string()
        } else {
            s.to_string()
        }
    };
    let spec_w = specs
        .iter()
        .map(|s| label(s).chars().count())
        .max()
        .unwrap_or(0)
        .max("error set".len());
    let col_w = 16;

    let mut out = String::new();
    let _ = write!(out, "{:<spec_w$}", "error set");
    for m in &methods {
        let _ = write!(out, " | {:^w$}", m.name(), w = col_w);
    }
    out.push('\n');
    let _ = write!(out, "{:<spec_w$}", "");
    for _ in &methods {
        let _ = write!(out, " | {:>7} {:>8}", "KL", "ratio");
    }
    out.push('\n');
    out.push_str(&"-".repeat(spec_w + methods.len() * (col_w + 3)));
    out.push('\n');
    for spec in specs {
        let name = label(spec);
        let pad = spec_w - name.chars().count();
        let _ = write!(out, "{name}{}", " ".repeat(pad));
        for m in &methods {
            match report.row(spec, *m) {
                Some(r) => {
                    let _ = write!(
                        out,
                        " | {:>7} {:>8}",
                        kl_text(r.kl_mean),
                        format!("{:.3}", r.ratio_mean)
                    );
                }
                None => {
                    let _ = write!(out, " | {:>7} {:>8}", "-", "-");
                }
            }
        }
        out.push('\n');
    }
    out.push_str(&report.provenance.footer());
    out.push('\n');
    out
}
