//! Per-iteration records aggregated across replications.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column header of the trace CSV.
pub const CSV_HEADER: [&str; 6] = ["k", "alpha_k", "mean_gap", "mean_grad_sq", "var_mk", "replications"];

/// One recorded iteration. Row `k` describes the iterate `x_{k+1}` produced
/// by step `k`, so `alpha` is the stepsize that step used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub k: u64,
    pub alpha: f64,
    /// `E[F(x)] − F*` when `F*` is known, `E[F(x)]` otherwise.
    pub mean_gap: f64,
    /// `E‖∇F(x)‖²` from the reference gradient.
    pub mean_grad_sq: f64,
    /// Across-replication variance (trace of the covariance) of `m_k`.
    /// Only momentum runs with at least two replications fill it.
    pub var_mk: Option<f64>,
    pub replications: u64,
}

/// Across-replication statistics of the displacement `x_{k+1} − x_k`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub mean: Vec<f64>,
    /// `E‖x_{k+1} − x_k‖²`
    pub second_moment: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub problem: String,
    pub method: String,
    pub seed: u64,
    /// Whether `mean_gap` is measured against a known `F*`.
    pub gap_relative: bool,
    /// `F(x₁) − F*`, or `F(x₁)` when `F*` is unknown.
    pub initial_gap: f64,
    pub initial_grad_sq: f64,
    pub warnings: Vec<String>,
    pub diagnostics: BTreeMap<String, f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    /// Aligned with `rows`; empty for traces read back from CSV.
    pub step_stats: Vec<StepStats>,
    pub meta: TraceMeta,
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_field<T: std::str::FromStr>(field: &str, column: &str, line: u64) -> Result<T> {
    field.trim().parse().map_err(|_| {
        Error::Trace(format!("line {line}: cannot parse `{field}` in column {column}"))
    })
}

impl Trace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    /// Writes the fixed-column CSV. Floats use 17 significant digits and
    /// missing values are empty fields.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.k.to_string(),
                fmt_f64(r.alpha),
                fmt_f64(r.mean_gap),
                fmt_f64(r.mean_grad_sq),
                r.var_mk.map(fmt_f64).unwrap_or_default(),
                r.replications.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is ascii"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads rows back from CSV. Metadata is not part of the CSV and comes
    /// back as default.
    pub fn read_csv<R: Read>(input: R) -> Result<Trace> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().map(str::trim).ne(CSV_HEADER.iter().copied()) {
            return Err(Error::Trace(format!(
                "unexpected CSV header `{}`; expected `{}`",
                headers.iter().collect::<Vec<_>>().join(","),
                CSV_HEADER.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let var = rec[4].trim();
            rows.push(TraceRow {
                k: parse_field(&rec[0], "k", line)?,
                alpha: parse_field(&rec[1], "alpha_k", line)?,
                mean_gap: parse_field(&rec[2], "mean_gap", line)?,
                mean_grad_sq: parse_field(&rec[3], "mean_grad_sq", line)?,
                var_mk: if var.is_empty() {
                    None
                } else {
                    Some(parse_field(var, "var_mk", line)?)
                },
                replications: parse_field(&rec[5], "replications", line)?,
            });
        }
        if rows.windows(2).any(|w| w[1].k <= w[0].k) {
            return Err(Error::Trace("rows are not strictly increasing in k".into()));
        }
        Ok(Trace {
            rows,
            ..Default::default()
        })
    }

    pub fn load_csv(path: &Path) -> Result<Trace> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}
