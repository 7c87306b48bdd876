//! TOML experiment specs: top-level settings plus one flat
//! `[[combination]]` table per run.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::directions::DirectionKind;
use crate::error::{Error, Result};
use crate::momentum::{DecayMode, DEFAULT_P};
use crate::problems::{LogisticData, ProblemSpec};
use crate::schedule::{Method, StepsizeSchedule};
use crate::sgfd::RunConfig;
use crate::step::StepVariant;

fn spec_err(field: impl Into<String>, reason: impl Into<String>) -> Error {
    Error::Spec {
        field: field.into(),
        reason: reason.into(),
    }
}

fn default_stride() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    /// Relative paths are taken from the experiment file's directory.
    pub output_dir: PathBuf,
    #[serde(default = "default_stride")]
    pub record_stride: u64,
    #[serde(default, rename = "combination")]
    pub combinations: Vec<CombinationSpec>,
}

/// One run. Keys that do not apply to the chosen problem, optimizer or
/// schedule are rejected rather than ignored.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CombinationSpec {
    pub name: String,
    pub problem: String,
    pub optimizer: String,
    pub iterations: u64,
    pub seed: u64,
    pub replications: Option<u64>,
    pub record_stride: Option<u64>,

    pub dim: Option<usize>,
    pub condition: Option<f64>,
    pub noise_sd: Option<f64>,
    pub problem_seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub samples: Option<usize>,
    pub l2: Option<f64>,

    pub variant: Option<String>,
    pub batch: Option<usize>,
    pub inner: Option<usize>,
    pub directions: Option<String>,

    pub schedule: Option<String>,
    pub beta: Option<f64>,
    pub sigma: Option<f64>,
    pub alpha: Option<f64>,
    pub growth: Option<f64>,

    pub decay: Option<String>,
    pub p: Option<f64>,
    pub gamma: Option<f64>,
    pub clip_radius: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgfd,
    Momentum,
    ReferenceSgd,
}

impl Optimizer {
    pub fn method(self) -> Method {
        match self {
            Optimizer::Momentum => Method::Momentum,
            Optimizer::Sgfd | Optimizer::ReferenceSgd => Method::Plain,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Optimizer::Sgfd => "sgfd",
            Optimizer::Momentum => "momentum",
            Optimizer::ReferenceSgd => "reference-sgd",
        }
    }
}

/// A validated combination, ready to run.
#[derive(Debug, Clone)]
pub struct Combination {
    pub name: String,
    pub optimizer: Optimizer,
    pub problem: ProblemSpec,
    pub config: RunConfig,
    pub decay: Option<DecayMode>,
    pub warnings: Vec<String>,
}

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| spec_err("<document>", e.message().to_string()))
    }

    /// Reads a spec and rebases its relative paths on the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut spec = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        spec.rebase(base);
        Ok(spec)
    }

    pub fn rebase(&mut self, base: &Path) {
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        for c in &mut self.combinations {
            if let Some(d) = &c.data {
                if d.is_relative() {
                    c.data = Some(base.join(d));
                }
            }
        }
    }

    /// Validates every combination, building problems and checking
    /// feasibility, before anything runs.
    pub fn resolve(&self) -> Result<Vec<Combination>> {
        if self.record_stride == 0 {
            return Err(spec_err("record_stride", "must be at least 1"));
        }
        let mut names = BTreeSet::new();
        let mut seeds = BTreeSet::new();
        let mut out = Vec::with_capacity(self.combinations.len());
        for (i, c) in self.combinations.iter().enumerate() {
            let field = |f: &str| format!("combination[{i}].{f}");
            if c.name.is_empty() || !c.name.chars().all(|ch| ch.is_ascii_alphanumeric() || "-_.".contains(ch)) {
                return Err(spec_err(field("name"), "must be non-empty and use only [A-Za-z0-9._-]"));
            }
            if !names.insert(c.name.clone()) {
                return Err(spec_err(field("name"), format!("duplicate name `{}`", c.name)));
            }
            if !seeds.insert(c.seed) {
                return Err(spec_err(field("seed"), format!("seed {} is already used by another combination", c.seed)));
            }
            out.push(c.resolve(self.record_stride, &field)?);
        }
        Ok(out)
    }
}

impl CombinationSpec {
    fn resolve(&self, default_stride: u64, field: &dyn Fn(&str) -> String) -> Result<Combination> {
        let reject = |name: &str, present: bool, why: &str| -> Result<()> {
            if present {
                Err(spec_err(field(name), format!("not used {why}")))
            } else {
                Ok(())
            }
        };
        let need = |name: &str| spec_err(field(name), "required");

        let optimizer = match self.optimizer.as_str() {
            "sgfd" => Optimizer::Sgfd,
            "momentum" => Optimizer::Momentum,
            "reference-sgd" => Optimizer::ReferenceSgd,
            other => {
                return Err(spec_err(
                    field("optimizer"),
                    format!("unknown optimizer `{other}` (expected sgfd, momentum or reference-sgd)"),
                ))
            }
        };

        let problem = match self.problem.as_str() {
            "quadratic" => {
                reject("data", self.data.is_some(), "by quadratic problems")?;
                reject("samples", self.samples.is_some(), "by quadratic problems")?;
                reject("l2", self.l2.is_some(), "by quadratic problems")?;
                ProblemSpec::Quadratic {
                    dim: self.dim.ok_or_else(|| need("dim"))?,
                    condition: self.condition.unwrap_or(1.0),
                    noise_sd: self.noise_sd.unwrap_or(0.0),
                    seed: self.problem_seed.unwrap_or(self.seed),
                }
            }
            "rosenbrock" => {
                reject("condition", self.condition.is_some(), "by rosenbrock problems")?;
                reject("problem_seed", self.problem_seed.is_some(), "by rosenbrock problems")?;
                reject("data", self.data.is_some(), "by rosenbrock problems")?;
                reject("samples", self.samples.is_some(), "by rosenbrock problems")?;
                reject("l2", self.l2.is_some(), "by rosenbrock problems")?;
                ProblemSpec::Rosenbrock {
                    dim: self.dim.unwrap_or(2),
                    noise_sd: self.noise_sd.unwrap_or(0.0),
                }
            }
            "logistic" => {
                reject("condition", self.condition.is_some(), "by logistic problems")?;
                reject("noise_sd", self.noise_sd.is_some(), "by logistic problems")?;
                let data = match (&self.data, self.samples) {
                    (Some(_), Some(_)) => return Err(spec_err(field("samples"), "give either `data` or `samples`")),
                    (Some(path), None) => {
                        reject("dim", self.dim.is_some(), "with a data file (the file sets the dimension)")?;
                        LogisticData::File(path.clone())
                    }
                    (None, Some(samples)) => LogisticData::Synthetic {
                        samples,
                        dim: self.dim.ok_or_else(|| need("dim"))?,
                        seed: self.problem_seed.unwrap_or(self.seed),
                    },
                    (None, None) => return Err(spec_err(field("data"), "logistic problems need `data` or `samples`")),
                };
                ProblemSpec::Logistic {
                    data,
                    l2: self.l2.unwrap_or(0.0),
                }
            }
            other => {
                return Err(spec_err(
                    field("problem"),
                    format!("unknown problem `{other}` (expected quadratic, logistic or rosenbrock)"),
                ))
            }
        };
        let built = problem.build().map_err(|e| spec_err(field("problem"), e.to_string()))?;

        let variant_name = self.variant.as_deref().unwrap_or("single-sample");
        let batch = || self.batch.ok_or_else(|| need("batch"));
        let variant = match variant_name {
            "single-sample" => StepVariant::SingleSample,
            "minibatch-shared-direction" => StepVariant::MinibatchSharedDirection { n: batch()? },
            "nested-batch" => StepVariant::NestedBatch {
                n: batch()?,
                m: self.inner.ok_or_else(|| need("inner"))?,
            },
            "paired-sample-direction" => StepVariant::PairedSampleDirection { n: batch()? },
            "full-objective-single" => StepVariant::FullObjectiveSingle,
            "full-objective-batch" => StepVariant::FullObjectiveBatch { n: batch()? },
            other => return Err(spec_err(field("variant"), format!("unknown step variant `{other}`"))),
        };
        if matches!(variant, StepVariant::SingleSample | StepVariant::FullObjectiveSingle) {
            reject("batch", self.batch.is_some(), &format!("by the {variant_name} variant"))?;
        }
        if !matches!(variant, StepVariant::NestedBatch { .. }) {
            reject("inner", self.inner.is_some(), &format!("by the {variant_name} variant"))?;
        }
        if optimizer == Optimizer::ReferenceSgd {
            reject("variant", self.variant.is_some(), "by reference-sgd")?;
            reject("directions", self.directions.is_some(), "by reference-sgd")?;
        }

        let directions = match self.directions.as_deref().unwrap_or("uniform") {
            "uniform" => DirectionKind::UniformSymmetric,
            "normal" => DirectionKind::StandardNormal,
            other => {
                return Err(spec_err(
                    field("directions"),
                    format!("unknown direction law `{other}` (expected uniform or normal)"),
                ))
            }
        };

        let method = optimizer.method();
        let schedule = match self.schedule.as_deref().unwrap_or("robbins-monro") {
            "robbins-monro" => {
                reject("alpha", self.alpha.is_some(), "by robbins-monro schedules")?;
                let beta = self.beta.ok_or_else(|| need("beta"))?;
                match self.sigma {
                    Some(sigma) => StepsizeSchedule::robbins_monro(beta, sigma),
                    None => {
                        let big_l = built.constants().lipschitz.ok_or_else(|| {
                            spec_err(field("sigma"), "required when the problem has no known Lipschitz constant")
                        })?;
                        StepsizeSchedule::robbins_monro_matched(
                            beta,
                            big_l,
                            self.growth.unwrap_or_else(|| method.default_growth()),
                        )
                    }
                }
            }
            "fixed" => {
                reject("beta", self.beta.is_some(), "by fixed schedules")?;
                reject("sigma", self.sigma.is_some(), "by fixed schedules")?;
                StepsizeSchedule::fixed(self.alpha.ok_or_else(|| need("alpha"))?)
            }
            "inverse-square" => {
                reject("sigma", self.sigma.is_some(), "by inverse-square schedules")?;
                reject("alpha", self.alpha.is_some(), "by inverse-square schedules")?;
                StepsizeSchedule::inverse_square(self.beta.ok_or_else(|| need("beta"))?)
            }
            other => return Err(spec_err(field("schedule"), format!("unknown schedule `{other}`"))),
        }
        .map_err(|e| spec_err(field("schedule"), e.to_string()))?;

        let decay = if optimizer == Optimizer::Momentum {
            let mode = match self.decay.as_deref().unwrap_or("changing") {
                "changing" => {
                    reject("gamma", self.gamma.is_some(), "by changing decay")?;
                    DecayMode::Changing {
                        p: self.p.unwrap_or(DEFAULT_P),
                    }
                }
                "fixed" => {
                    reject("p", self.p.is_some(), "by fixed decay")?;
                    DecayMode::Fixed {
                        gamma: self.gamma.ok_or_else(|| need("gamma"))?,
                    }
                }
                other => return Err(spec_err(field("decay"), format!("unknown decay mode `{other}`"))),
            };
            mode.validate().map_err(|e| spec_err(field("decay"), e.to_string()))?;
            Some(mode)
        } else {
            for (name, present) in [
                ("decay", self.decay.is_some()),
                ("p", self.p.is_some()),
                ("gamma", self.gamma.is_some()),
                ("clip_radius", self.clip_radius.is_some()),
            ] {
                reject(name, present, "outside momentum runs")?;
            }
            None
        };

        let config = RunConfig::new(built, schedule)
            .variant(variant)
            .directions(directions)
            .iterations(self.iterations)
            .replications(self.replications.unwrap_or(1))
            .seed(self.seed)
            .record_stride(self.record_stride.unwrap_or(default_stride))
            .clip_radius(self.clip_radius)
            .growth(self.growth);
        let warnings = config.validate(method).map_err(|e| match e {
            Error::Infeasible(msg) => spec_err(field("schedule"), format!("infeasible: {msg}")),
            Error::InvalidParameter { name, reason } => spec_err(field(name), reason),
            other => spec_err(field("optimizer"), other.to_string()),
        })?;
        Ok(Combination {
            name: self.name.clone(),
            optimizer,
            problem,
            config,
            decay,
            warnings,
        })
    }
}
