//! Runs every combination of a spec and writes the traces and report.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::spec::{Combination, ExperimentSpec, Optimizer};
use crate::analysis::{envelope_check, fit_rate, probe_variance_model, EnvelopeCheck, RateFit};
use crate::error::{Error, Result};
use crate::momentum::run_accelerated;
use crate::problems::{ProblemConstants, ProblemSpec};
use crate::schedule::StepsizeSchedule;
use crate::sgfd::{run_reference_sgd, run_sgfd};
use crate::trace::{Trace, TraceMeta};

pub const REPORT_FILE: &str = "report.json";

/// Probe settings for the variance-model fit behind the envelope check.
const ENVELOPE_PROBES: usize = 8;
const ENVELOPE_SAMPLES: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntryStatus {
    Ok,
    /// The run hit the divergence guard or a non-finite value; no CSV.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSummary {
    /// `M̂` from the probe-grid fit.
    pub m_hat: f64,
    pub check: EnvelopeCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportEntry {
    pub name: String,
    pub optimizer: Optimizer,
    pub problem: ProblemSpec,
    pub schedule: StepsizeSchedule,
    pub status: EntryStatus,
    pub error: Option<String>,
    /// File name relative to the output directory.
    pub csv: Option<String>,
    pub rate_fit: Option<RateFit>,
    pub rate_fit_error: Option<String>,
    pub envelope: Option<EnvelopeSummary>,
    pub constants: ProblemConstants,
    pub meta: Option<TraceMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub version: String,
    pub output_dir: PathBuf,
    pub entries: Vec<ReportEntry>,
}

impl ExperimentReport {
    pub fn diverged(&self) -> usize {
        self.entries.iter().filter(|e| e.status == EntryStatus::Diverged).count()
    }
}

/// Runs one resolved combination.
pub fn run_combination(c: &Combination) -> Result<Trace> {
    match c.optimizer {
        Optimizer::Sgfd => run_sgfd(&c.config),
        Optimizer::Momentum => run_accelerated(&c.config, c.decay.unwrap_or_default()),
        Optimizer::ReferenceSgd => run_reference_sgd(&c.config),
    }
}

/// Envelope check for plain SGFD on problems with known `l`, `L` and `F*`.
/// `M̂` is fitted on a probe grid at `α₁` and `α₁/4`.
pub fn envelope_for(c: &Combination, trace: &Trace) -> Result<Option<EnvelopeSummary>> {
    let constants = c.config.problem.constants();
    let (Some(l), Some(big_l)) = (constants.strong_convexity, constants.lipschitz) else {
        return Ok(None);
    };
    if c.optimizer != Optimizer::Sgfd || !trace.meta.gap_relative {
        return Ok(None);
    }
    let dist = c.config.distribution()?;
    let a1 = c.config.schedule.alpha(1);
    let model = probe_variance_model(
        c.config.problem.as_ref(),
        c.config.variant,
        &dist,
        &[a1, a1 / 4.0],
        ENVELOPE_PROBES,
        ENVELOPE_SAMPLES,
        c.config.seed,
    )?;
    let m_d = model.noise_constant(&dist);
    let check = envelope_check(trace, &c.config.schedule, l, big_l, m_d)?;
    Ok(Some(EnvelopeSummary { m_hat: model.m, check }))
}

/// Validates the whole spec, then runs each combination in order. Nothing
/// is written if validation fails. A combination that diverges is flagged
/// in the report and the batch continues.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentReport> {
    let combos = spec.resolve()?;
    fs::create_dir_all(&spec.output_dir)?;
    let mut entries = Vec::with_capacity(combos.len());
    for c in &combos {
        entries.push(run_entry(c, &spec.output_dir)?);
    }
    let report = ExperimentReport {
        version: env!("CARGO_PKG_VERSION").to_string(),
        output_dir: spec.output_dir.clone(),
        entries,
    };
    let json = serde_json::to_string_pretty(&report)?;
    fs::write(spec.output_dir.join(REPORT_FILE), json + "\n")?;
    Ok(report)
}

fn run_entry(c: &Combination, dir: &Path) -> Result<ReportEntry> {
    let mut entry = ReportEntry {
        name: c.name.clone(),
        optimizer: c.optimizer,
        problem: c.problem.clone(),
        schedule: c.config.schedule,
        status: EntryStatus::Ok,
        error: None,
        csv: None,
        rate_fit: None,
        rate_fit_error: None,
        envelope: None,
        constants: c.config.problem.constants().clone(),
        meta: None,
    };
    let trace = match run_combination(c) {
        Ok(t) => t,
        Err(e @ (Error::Divergence { .. } | Error::NonFinite(_))) => {
            entry.status = EntryStatus::Diverged;
            entry.error = Some(e.to_string());
            return Ok(entry);
        }
        Err(e) => return Err(e),
    };
    let file = format!("{}.csv", c.name);
    trace.save_csv(&dir.join(&file))?;
    entry.csv = Some(file);
    if trace.meta.gap_relative {
        match fit_rate(&trace, None) {
            Ok(f) => entry.rate_fit = Some(f),
            Err(e) => entry.rate_fit_error = Some(e.to_string()),
        }
    } else {
        entry.rate_fit_error = Some("F* unknown; gaps are raw objective values".into());
    }
    entry.envelope = envelope_for(c, &trace)?;
    entry.meta = Some(trace.meta);
    Ok(entry)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(dir: &Path, body: &str) -> ExperimentSpec {
        let mut s = ExperimentSpec::from_toml(&format!("output_dir = \"out\"\nrecord_stride = 5\n{body}")).unwrap();
        s.rebase(dir);
        s
    }

    const QUAD: &str = r#"
[[combination]]
name = "quad"
problem = "quadratic"
dim = 3
condition = 3.0
noise_sd = 0.2
optimizer = "sgfd"
beta = 2.0
iterations = 100
replications = 2
seed = 7
"#;

    #[test]
    fn empty_spec_gives_empty_report() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&spec(dir.path(), "")).unwrap();
        assert!(r.entries.is_empty());
        assert!(dir.path().join("out").join(REPORT_FILE).exists());
    }

    #[test]
    fn shape_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_experiment(&spec(dir.path(), QUAD)).unwrap();
        let e = &r.entries[0];
        assert_eq!(e.status, EntryStatus::Ok);
        let path = dir.path().join("out").join(e.csv.as_ref().unwrap());
        let t = Trace::load_csv(&path).unwrap();
        assert_eq!(t.len(), 20);
        assert!(t.rows.iter().all(|row| row.replications == 2 && row.var_mk.is_none()));
        let again = Trace::load_csv(&path).unwrap();
        assert_eq!(t.to_csv_string().unwrap(), again.to_csv_string().unwrap());
        assert_eq!(fs::read_to_string(&path).unwrap(), t.to_csv_string().unwrap());
        assert!(e.envelope.is_some());
        let json: ExperimentReport =
            serde_json::from_str(&fs::read_to_string(dir.path().join("out").join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(json.entries.len(), 1);
    }

    #[test]
    fn failed_validation_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let bad = format!("{QUAD}{}", QUAD.replace("\"quad\"", "\"other\"").replace("beta = 2.0", "beta = 0.5").replace("seed = 7", "seed = 8"));
        assert!(matches!(run_experiment(&spec(dir.path(), &bad)), Err(Error::Spec { .. })));
        assert!(!dir.path().join("out").exists());
    }

    #[test]
    fn divergence_is_isolated() {
        let dir = tempfile::tempdir().unwrap();
        // a fixed stepsize far beyond 2/L blows up; the rosenbrock problem has
        // no global L, so the first-step check cannot catch it
        let blowup = r#"
[[combination]]
name = "blowup"
problem = "rosenbrock"
optimizer = "sgfd"
schedule = "fixed"
alpha = 0.5
iterations = 200
seed = 9
"#;
        let alone = run_experiment(&spec(dir.path(), QUAD)).unwrap();
        let quad_alone = fs::read(dir.path().join("out/quad.csv")).unwrap();
        let r = run_experiment(&spec(dir.path(), &format!("{blowup}{QUAD}"))).unwrap();
        assert_eq!(r.diverged(), 1);
        assert_eq!(r.entries[0].status, EntryStatus::Diverged);
        assert!(r.entries[0].csv.is_none());
        assert_eq!(r.entries[1].status, EntryStatus::Ok);
        assert_eq!(fs::read(dir.path().join("out/quad.csv")).unwrap(), quad_alone);
        assert_eq!(alone.entries[0].rate_fit, r.entries[1].rate_fit);
    }
}
