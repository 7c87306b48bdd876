//! The contraction product `A_k = ∏(1 − α_i l)` and the noise sum
//! `B_k = Σ_i α_i² ∏_{j>i}(1 − α_j l)` that together bound the expected gap:
//!
//! ```text
//! E[F(x_{k+1})] − F* ≤ A_k (F(x₁) − F*) + (L M_d / 2) B_k
//! ```
//!
//! Partial products are written as `exp(H(k) − H(i))` where `H` is a
//! log-gamma expression with tracked sign, so nothing overflows for large k.

use libm::lgamma_r;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::schedule::StepsizeSchedule;

/// Parameters of a Robbins–Monro bound evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundParams {
    pub beta: f64,
    pub sigma: f64,
    pub l: f64,
    pub k: u64,
    /// 1 for the plain method, 2 for momentum (`βl` becomes `βl/2`).
    pub rate_divisor: u32,
}

impl BoundParams {
    pub fn new(beta: f64, sigma: f64, l: f64, k: u64) -> Result<Self> {
        Self::with_divisor(beta, sigma, l, k, 1)
    }

    pub fn with_divisor(beta: f64, sigma: f64, l: f64, k: u64, rate_divisor: u32) -> Result<Self> {
        let p = Self {
            beta,
            sigma,
            l,
            k,
            rate_divisor,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("sigma", self.sigma), ("l", self.l)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(name, format!("must be positive and finite, got {v}")));
            }
        }
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if self.rate_divisor != 1 && self.rate_divisor != 2 {
            return Err(invalid("rate_divisor", format!("must be 1 or 2, got {}", self.rate_divisor)));
        }
        let z = 1.0 + self.sigma - self.a();
        if z <= 0.0 && z == z.round() {
            return Err(Error::GammaPole(z));
        }
        Ok(())
    }

    /// Effective rate exponent `a = βl / divisor`.
    pub fn a(&self) -> f64 {
        self.beta * self.l / self.rate_divisor as f64
    }

    pub fn schedule(&self) -> StepsizeSchedule {
        StepsizeSchedule::RobbinsMonro {
            beta: self.beta,
            sigma: self.sigma,
        }
    }
}

/// `ln|Γ(x)|` and the sign of `Γ(x)`.
fn ln_gamma(x: f64) -> (f64, f64) {
    let (v, s) = lgamma_r(x);
    (v, if s < 0 { -1.0 } else { 1.0 })
}

/// A signed value stored as `(sign, ln|value|)`.
#[derive(Debug, Clone, Copy)]
struct LogSigned {
    sign: f64,
    ln: f64,
}

impl LogSigned {
    fn ratio(self, other: LogSigned) -> f64 {
        self.sign * other.sign * (self.ln - other.ln).exp()
    }
}

/// Running sum of terms `sign · exp(ln)` kept relative to the largest
/// exponent seen, so very large or very small terms do not overflow.
#[derive(Debug, Clone, Copy)]
struct ScaledSum {
    scale: f64,
    value: f64,
}

impl ScaledSum {
    fn new() -> Self {
        Self {
            scale: f64::NEG_INFINITY,
            value: 0.0,
        }
    }

    fn add(&mut self, sign: f64, ln: f64) {
        if ln > self.scale {
            self.value = self.value * (self.scale - ln).exp() + sign;
            self.scale = ln;
        } else {
            self.value += sign * (ln - self.scale).exp();
        }
    }

    /// `sum · sign · exp(ln)`
    fn times(&self, sign: f64, ln: f64) -> f64 {
        if self.value == 0.0 {
            return 0.0;
        }
        sign * self.value * (self.scale + ln).exp()
    }
}

/// The partial-product potential `H(i)` with `∏_{j=i+1..k}(1 − α_j l) =
/// exp(H(k) − H(i))` (signs tracked).
#[derive(Debug, Clone, Copy)]
enum Potential {
    /// `H(i) = lnΓ(i+1+σ−a) − lnΓ(i+1+σ)`
    RobbinsMonro { sigma: f64, a: f64 },
    /// `H(i) = i ln|q|`, `q = 1 − ᾱl`
    Fixed { q: f64 },
    /// `H(i) = lnΓ(i+1−r) + lnΓ(i+1+r) − 2 lnΓ(i+1)`, `r = √(βl)`
    InverseSquare { r: f64 },
}

impl Potential {
    fn at(&self, i: u64) -> LogSigned {
        let x = i as f64;
        match *self {
            Potential::RobbinsMonro { sigma, a } => {
                let (n, sn) = ln_gamma(x + 1.0 + sigma - a);
                let (d, _) = ln_gamma(x + 1.0 + sigma);
                LogSigned { sign: sn, ln: n - d }
            }
            Potential::Fixed { q } => LogSigned {
                sign: if q < 0.0 && i % 2 == 1 { -1.0 } else { 1.0 },
                ln: x * q.abs().ln(),
            },
            Potential::InverseSquare { r } => {
                let (lo, s1) = ln_gamma(x + 1.0 - r);
                let (hi, s2) = ln_gamma(x + 1.0 + r);
                let (f, _) = ln_gamma(x + 1.0);
                LogSigned {
                    sign: s1 * s2,
                    ln: lo + hi - 2.0 * f,
                }
            }
        }
    }
}

fn potential(schedule: &StepsizeSchedule, l: f64) -> Result<Potential> {
    if !(l > 0.0) || !l.is_finite() {
        return Err(invalid("l", format!("must be positive and finite, got {l}")));
    }
    schedule.validate()?;
    Ok(match *schedule {
        StepsizeSchedule::RobbinsMonro { beta, sigma } => {
            let a = beta * l;
            let z = 1.0 + sigma - a;
            if z <= 0.0 && z == z.round() {
                return Err(Error::GammaPole(z));
            }
            Potential::RobbinsMonro { sigma, a }
        }
        StepsizeSchedule::Fixed { alpha } => {
            let q = 1.0 - alpha * l;
            if q == 0.0 {
                return Err(invalid("alpha", "alpha*l = 1 makes every product vanish"));
            }
            Potential::Fixed { q }
        }
        StepsizeSchedule::InverseSquare { beta } => {
            let r = (beta * l).sqrt();
            if r == r.round() {
                return Err(Error::GammaPole(1.0 - r));
            }
            Potential::InverseSquare { r }
        }
    })
}

/// `A_k` and `B_k` for `k = 1..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundSequence {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

/// Evaluates `A_k` and `B_k` for every `k ≤ k_max` under any schedule with
/// contraction modulus `l` (pass `l/2` for momentum).
pub fn bound_sequence(schedule: &StepsizeSchedule, l: f64, k_max: u64) -> Result<BoundSequence> {
    let h = potential(schedule, l)?;
    let h0 = h.at(0);
    let mut sum = ScaledSum::new();
    let mut a = Vec::with_capacity(k_max as usize);
    let mut b = Vec::with_capacity(k_max as usize);
    for k in 1..=k_max {
        let hk = h.at(k);
        let alpha = schedule.alpha(k);
        // term α_k² / H(k); the common factor H(k) is applied below
        sum.add(hk.sign, 2.0 * alpha.ln() - hk.ln);
        a.push(hk.ratio(h0));
        b.push(sum.times(hk.sign, hk.ln));
    }
    Ok(BoundSequence { a, b })
}

/// `A_k = Γ(1+σ)Γ(k+1+σ−a) / (Γ(1+σ−a)Γ(k+1+σ))` with `a = βl/divisor`.
pub fn bound_a(params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let h = Potential::RobbinsMonro {
        sigma: params.sigma,
        a: params.a(),
    };
    Ok(h.at(params.k).ratio(h.at(0)))
}

/// `B_k = Σ_{i≤k} α_i² ∏_{j=i+1..k}(1 − α_j l/divisor)`.
pub fn bound_b(params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let h = Potential::RobbinsMonro {
        sigma: params.sigma,
        a: params.a(),
    };
    let schedule = params.schedule();
    let hk = h.at(params.k);
    let mut sum = ScaledSum::new();
    for i in 1..=params.k {
        let hi = h.at(i);
        sum.add(hi.sign, 2.0 * schedule.alpha(i).ln() - hi.ln);
    }
    Ok(sum.times(hk.sign, hk.ln))
}

/// `Γ(1+σ)/Γ(1+σ−a)`, the limit of `A_k · k^a`.
pub fn asymptotic_a_constant(params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let h = Potential::RobbinsMonro {
        sigma: params.sigma,
        a: params.a(),
    };
    let h0 = h.at(0);
    // h0 = lnΓ(1+σ−a) − lnΓ(1+σ)
    Ok(h0.sign * (-h0.ln).exp())
}

/// `β²/(a − 1)`, the limit of `B_k · (k + 1 + σ)`. Requires `a > 1`.
pub fn asymptotic_b_constant(params: &BoundParams) -> Result<f64> {
    params.validate()?;
    let a = params.a();
    if a <= 1.0 {
        return Err(invalid("beta", format!("the 1/k limit of B_k needs beta*l/divisor > 1, got {a}")));
    }
    Ok(params.beta * params.beta / (a - 1.0))
}

/// `A_k = (1 − ᾱl)^k` for a fixed stepsize.
pub fn fixed_bound_a(alpha: f64, l: f64, k: u64) -> f64 {
    (1.0 - alpha * l).powf(k as f64)
}

/// `B_k = ᾱ² (1 − q^k)/(1 − q)` with `q = 1 − ᾱl`.
pub fn fixed_bound_b(alpha: f64, l: f64, k: u64) -> f64 {
    let q = 1.0 - alpha * l;
    alpha * alpha * (1.0 - q.powf(k as f64)) / (alpha * l)
}

/// `lim B_k = ᾱ/l`.
pub fn fixed_limit_b(alpha: f64, l: f64) -> f64 {
    alpha / l
}

/// `A_k = ∏(1 − c/i²)` for `α_i = β/i²`, `c = βl`, via
/// `Γ(k+1−√c)Γ(k+1+√c) / (Γ(1−√c)Γ(1+√c)Γ(k+1)²)`.
pub fn inverse_square_bound_a(beta: f64, l: f64, k: u64) -> Result<f64> {
    let h = potential(&StepsizeSchedule::InverseSquare { beta }, l)?;
    Ok(h.at(k).ratio(h.at(0)))
}

/// `sin(π√c)/(π√c)`, the infinite product.
pub fn inverse_square_limit_a(beta: f64, l: f64) -> f64 {
    let r = (beta * l).sqrt() * std::f64::consts::PI;
    r.sin() / r
}
