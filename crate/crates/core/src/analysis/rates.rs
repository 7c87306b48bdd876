//! Empirical convergence exponents from log-log least squares.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::linear_fit;
use crate::trace::Trace;

/// Minimum number of usable points inside a fit window.
pub const MIN_POINTS: usize = 10;

/// Largest fraction of non-positive values that may be dropped.
pub const MAX_DROPPED_FRACTION: f64 = 0.2;

/// `log y ≈ intercept + slope · log k` over `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub window: (u64, u64),
    /// Root-mean-square residual in natural-log units.
    pub residual: f64,
    pub points: usize,
    pub dropped: usize,
}

/// The last decade `[K/10, K]` of a run that ends at `k_last`.
pub fn default_window(k_last: u64) -> (u64, u64) {
    ((k_last / 10).max(1), k_last)
}

/// Fits a power law to `(k, y)` pairs with `k` inside `window`.
/// Non-positive `y` are dropped and counted; too many drops is an error.
pub fn fit_power_law(ks: &[u64], ys: &[f64], window: (u64, u64)) -> Result<RateFit> {
    if ks.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: ks.len(),
            actual: ys.len(),
        });
    }
    let (lo, hi) = window;
    if lo == 0 || lo >= hi {
        return Err(invalid("window", format!("need 1 <= k_lo < k_hi, got {lo}:{hi}")));
    }
    let mut xs = Vec::new();
    let mut ls = Vec::new();
    let mut in_window = 0;
    for (&k, &y) in ks.iter().zip(ys) {
        if k < lo || k > hi {
            continue;
        }
        in_window += 1;
        if y > 0.0 && y.is_finite() {
            xs.push((k as f64).ln());
            ls.push(y.ln());
        }
    }
    let dropped = in_window - xs.len();
    if in_window < MIN_POINTS {
        return Err(Error::Fit(format!(
            "window {lo}:{hi} holds {in_window} recorded points, need at least {MIN_POINTS}"
        )));
    }
    if dropped as f64 > MAX_DROPPED_FRACTION * in_window as f64 {
        return Err(Error::Fit(format!(
            "{dropped} of {in_window} values in window {lo}:{hi} are not positive"
        )));
    }
    if xs.len() < 2 {
        return Err(Error::Fit("fewer than two usable points".into()));
    }
    let (slope, intercept, residual) = linear_fit(&xs, &ls);
    if !slope.is_finite() || !residual.is_finite() {
        return Err(Error::Fit("least-squares fit is not finite".into()));
    }
    Ok(RateFit {
        slope,
        intercept,
        window,
        residual,
        points: xs.len(),
        dropped,
    })
}

/// Fits the decay exponent of `mean_gap`. The caller is responsible for
/// the gap being measured against a known `F*`; with `window = None` the
/// last decade of the trace is used.
pub fn fit_rate(trace: &Trace, window: Option<(u64, u64)>) -> Result<RateFit> {
    let last = trace
        .last()
        .ok_or_else(|| Error::Fit("trace has no rows".into()))?
        .k;
    let ks: Vec<u64> = trace.rows.iter().map(|r| r.k).collect();
    let ys: Vec<f64> = trace.rows.iter().map(|r| r.mean_gap).collect();
    fit_power_law(&ks, &ys, window.unwrap_or_else(|| default_window(last)))
}

/// Fits the decay exponent of the recorded `m_k` variance.
pub fn fit_variance_rate(trace: &Trace, window: Option<(u64, u64)>) -> Result<RateFit> {
    let rows: Vec<_> = trace.rows.iter().filter(|r| r.var_mk.is_some()).collect();
    let last = rows
        .last()
        .ok_or_else(|| Error::Fit("trace records no m_k variance".into()))?
        .k;
    let ks: Vec<u64> = rows.iter().map(|r| r.k).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.var_mk.unwrap()).collect();
    fit_power_law(&ks, &ys, window.unwrap_or_else(|| default_window(last)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::setup_rng;
    use crate::trace::TraceRow;
    use rand_distr::{Distribution, Normal};

    fn synthetic(f: impl Fn(u64) -> f64, k_max: u64, stride: u64) -> Trace {
        Trace {
            rows: (1..=k_max / stride)
                .map(|i| {
                    let k = i * stride;
                    TraceRow {
                        k,
                        alpha: 1.0,
                        mean_gap: f(k),
                        mean_grad_sq: 0.0,
                        var_mk: None,
                        replications: 1,
                    }
                })
                .collect(),
            ..Default::default()
        }
    }

    #[test]
    fn exact_power_laws() {
        let t = synthetic(|k| 7.0 / k as f64, 10_000, 10);
        let f = fit_rate(&t, None).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-6);
        assert_eq!(f.window, (1000, 10_000));
        assert!(f.residual < 1e-10);
        let t = synthetic(|k| 3.0 / (k as f64).powi(2), 10_000, 10);
        let f = fit_rate(&t, None).unwrap();
        assert!((f.slope + 2.0).abs() < 1e-6);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn noisy_power_law() {
        let mut rng = setup_rng(1);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let t = synthetic(|k| 4.0 * (k as f64).powf(-1.5), 10_000, 10);
        let mut t = t;
        for r in &mut t.rows {
            r.mean_gap *= 1.0 + noise.sample(&mut rng);
        }
        let f = fit_rate(&t, None).unwrap();
        assert!((-1.55..=-1.45).contains(&f.slope), "{}", f.slope);
    }

    #[test]
    fn drops_non_positive_points() {
        let mut t = synthetic(|k| 1.0 / k as f64, 1000, 10);
        t.rows[95].mean_gap = 0.0;
        t.rows[96].mean_gap = -1.0;
        let f = fit_rate(&t, Some((100, 1000))).unwrap();
        assert_eq!(f.dropped, 2);
        assert!((f.slope + 1.0).abs() < 1e-9);
        for r in t.rows.iter_mut().skip(50) {
            r.mean_gap = -1.0;
        }
        assert!(matches!(fit_rate(&t, Some((100, 1000))), Err(Error::Fit(_))));
    }

    #[test]
    fn window_checks() {
        let t = synthetic(|k| 1.0 / k as f64, 100, 10);
        assert!(fit_rate(&t, Some((50, 100))).is_err());
        assert!(fit_rate(&t, Some((100, 50))).is_err());
        assert!(fit_rate(&t, Some((0, 100))).is_err());
        assert!(fit_rate(&Trace::default(), None).is_err());
    }
}
