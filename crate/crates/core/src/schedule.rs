//! Stepsize rules and their feasibility conditions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::problems::ProblemConstants;

/// Growth constant `M_G` assumed when no fitted estimate is available.
pub const DEFAULT_GROWTH: f64 = 3.0;

/// Limit `3/2` of the momentum growth constant, times a safety factor 2.
pub const DEFAULT_MOMENTUM_GROWTH: f64 = 3.0;

/// Relative slack when comparing `α₁` to `1/(L·M_G)`, so that a schedule
/// built to sit exactly on the boundary is not rejected by roundoff.
const BOUNDARY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Plain,
    Momentum,
}

impl Method {
    /// Lower bound on `β·l` required for Robbins–Monro stepsizes.
    pub fn beta_l_threshold(self) -> f64 {
        match self {
            Method::Plain => 1.0,
            Method::Momentum => 4.0,
        }
    }

    pub fn default_growth(self) -> f64 {
        match self {
            Method::Plain => DEFAULT_GROWTH,
            Method::Momentum => DEFAULT_MOMENTUM_GROWTH,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepsizeSchedule {
    /// `α_k = β/(k + σ)`
    RobbinsMonro { beta: f64, sigma: f64 },
    /// `α_k = ᾱ`
    Fixed { alpha: f64 },
    /// `α_k = β/k²`. Summable, so the iterates stall; only useful as a
    /// diagnostic for the Euler-product limit.
    InverseSquare { beta: f64 },
}

impl StepsizeSchedule {
    pub fn robbins_monro(beta: f64, sigma: f64) -> Result<Self> {
        let s = StepsizeSchedule::RobbinsMonro { beta, sigma };
        s.validate()?;
        Ok(s)
    }

    /// Robbins–Monro schedule whose first step sits exactly on
    /// `α₁ = 1/(L·M_G)`, i.e. `σ = β·L·M_G − 1`.
    pub fn robbins_monro_matched(beta: f64, lipschitz: f64, growth: f64) -> Result<Self> {
        let sigma = beta * lipschitz * growth - 1.0;
        if !(sigma > 0.0) {
            return Err(invalid(
                "beta",
                format!("beta*L*M_G = {} must exceed 1 to give a positive sigma", beta * lipschitz * growth),
            ));
        }
        Self::robbins_monro(beta, sigma)
    }

    pub fn fixed(alpha: f64) -> Result<Self> {
        let s = StepsizeSchedule::Fixed { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn inverse_square(beta: f64) -> Result<Self> {
        let s = StepsizeSchedule::InverseSquare { beta };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        match *self {
            StepsizeSchedule::RobbinsMonro { beta, sigma } => {
                positive("beta", beta)?;
                positive("sigma", sigma)
            }
            StepsizeSchedule::Fixed { alpha } => positive("alpha", alpha),
            StepsizeSchedule::InverseSquare { beta } => positive("beta", beta),
        }
    }

    /// `α_k` for `k ≥ 1`.
    pub fn alpha(&self, k: u64) -> f64 {
        debug_assert!(k >= 1);
        let kf = k as f64;
        match *self {
            StepsizeSchedule::RobbinsMonro { beta, sigma } => beta / (kf + sigma),
            StepsizeSchedule::Fixed { alpha } => alpha,
            StepsizeSchedule::InverseSquare { beta } => beta / (kf * kf),
        }
    }

    /// Checks the schedule against the problem constants.
    ///
    /// Returns warnings for checks that had to be skipped and an
    /// [`Error::Infeasible`] naming the violated inequality otherwise.
    pub fn check_feasibility(
        &self,
        method: Method,
        constants: &ProblemConstants,
        growth: Option<f64>,
    ) -> Result<Vec<String>> {
        self.validate()?;
        let mut warnings = Vec::new();
        let growth = growth.unwrap_or_else(|| method.default_growth());
        let threshold = method.beta_l_threshold();

        match *self {
            StepsizeSchedule::RobbinsMonro { beta, .. } => match constants.strong_convexity {
                Some(l) if beta * l <= threshold => {
                    let which = match method {
                        Method::Plain => "plain",
                        Method::Momentum => "momentum",
                    };
                    return Err(Error::Infeasible(format!(
                        "beta*l = {} <= {threshold} ({which} iteration requires beta > {threshold}/l = {})",
                        beta * l,
                        threshold / l
                    )));
                }
                Some(_) => {}
                None => warnings.push("strong-convexity modulus unknown; beta*l check skipped".to_string()),
            },
            StepsizeSchedule::Fixed { .. } => {
                if method == Method::Momentum {
                    warnings.push("momentum rates assume Robbins-Monro stepsizes; fixed stepsize used".into());
                }
            }
            StepsizeSchedule::InverseSquare { .. } => {
                warnings.push("inverse-square stepsizes are summable; the iterates do not converge".into());
            }
        }

        let a1 = self.alpha(1);
        match constants.lipschitz {
            Some(big_l) => {
                let cap = 1.0 / (big_l * growth);
                if a1 > cap * (1.0 + BOUNDARY_SLACK) {
                    return Err(Error::Infeasible(format!(
                        "alpha_1 = {a1} > 1/(L*M_G) = {cap} with L = {big_l}, M_G = {growth}"
                    )));
                }
            }
            None => warnings.push("gradient Lipschitz constant unknown; alpha_1 <= 1/(L*M_G) check skipped".into()),
        }
        Ok(warnings)
    }
}
