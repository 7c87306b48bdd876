use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use super::{ProblemConstants, StochasticProblem, Xi};
use crate::error::{invalid, Error, Result};
use crate::linalg::{dot, norm, norm_sq};
use crate::rng::setup_rng;

/// Labelled samples, row-major features.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
    pub dim: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, dim: usize) -> Result<Self> {
        if labels.is_empty() || dim == 0 {
            return Err(invalid("dataset", "empty dataset"));
        }
        if features.len() != labels.len() * dim {
            return Err(invalid(
                "dataset",
                format!("{} feature values do not form {} rows of width {dim}", features.len(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|y| **y != 1.0 && **y != -1.0) {
            return Err(invalid("labels", format!("labels must be +1 or -1, got {bad}")));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(invalid("features", "non-finite feature value"));
        }
        Ok(Self { features, labels, dim })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Reads one sample per line: label (`+1`/`-1`) first, then the features.
/// Fields may be separated by commas, semicolons, tabs or spaces. Blank
/// lines and lines starting with `#` are skipped.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let fail = |line: usize, reason: String| Error::Dataset {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c == ';' || c.is_whitespace())
            .filter(|f| !f.is_empty())
            .collect();
        if fields.len() < 2 {
            return Err(fail(line_no, "expected a label and at least one feature".into()));
        }
        let label: f64 = fields[0]
            .parse()
            .map_err(|_| fail(line_no, format!("unparsable label `{}`", fields[0])))?;
        if label != 1.0 && label != -1.0 {
            return Err(fail(line_no, format!("label must be +1 or -1, got {label}")));
        }
        match width {
            None => width = Some(fields.len() - 1),
            Some(w) if w != fields.len() - 1 => {
                return Err(fail(line_no, format!("expected {w} features, found {}", fields.len() - 1)))
            }
            _ => {}
        }
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| fail(line_no, format!("unparsable feature `{f}`")))?;
            if !v.is_finite() {
                return Err(fail(line_no, format!("non-finite feature `{f}`")));
            }
            features.push(v);
        }
        labels.push(label);
    }
    let Some(dim) = width else {
        return Err(fail(0, "no samples".into()));
    };
    Dataset::new(features, labels, dim)
}

/// Gaussian features, labels drawn from a logistic model with random
/// weights.
pub fn synthetic_dataset(samples: usize, dim: usize, seed: u64) -> Result<Dataset> {
    if samples == 0 || dim == 0 {
        return Err(invalid("dataset", "synthetic dataset needs samples > 0 and dim > 0"));
    }
    let mut rng = setup_rng(seed);
    let w: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut features = Vec::with_capacity(samples * dim);
    let mut labels = Vec::with_capacity(samples);
    for _ in 0..samples {
        let row: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let p = sigmoid(dot(&row, &w));
        labels.push(if rng.random::<f64>() < p { 1.0 } else { -1.0 });
        features.extend(row);
    }
    Dataset::new(features, labels, dim)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(-m))`, stable for large `|m|`.
fn logistic_loss(margin: f64) -> f64 {
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// L2-regularized logistic regression as a finite sum; `ξ` is a sample
/// index drawn uniformly.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    name: String,
    data: Dataset,
    l2: f64,
    constants: ProblemConstants,
}

impl LogisticRegression {
    /// Solves for the minimizer with damped Newton to gradient norm 1e-10;
    /// the result is cached in the constants.
    pub fn new(data: Dataset, l2: f64) -> Result<Self> {
        if !(l2 > 0.0) || !l2.is_finite() {
            return Err(invalid("l2", format!("must be positive, got {l2}")));
        }
        let max_row_sq = (0..data.len()).map(|i| norm_sq(data.row(i))).fold(0.0, f64::max);
        let mut problem = Self {
            name: format!("logistic-n{}-d{}", data.len(), data.dim),
            data,
            l2,
            constants: ProblemConstants {
                strong_convexity: Some(l2),
                lipschitz: Some(l2 + max_row_sq / 4.0),
                ..Default::default()
            },
        };
        let x_star = problem.newton_minimize()?;
        problem.constants.f_star = Some(problem.objective(&x_star));
        problem.constants.f_inf = problem.constants.f_star;
        problem.constants.x_star = Some(x_star);
        Ok(problem)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn newton_minimize(&self) -> Result<Vec<f64>> {
        let d = self.data.dim;
        let n = self.data.len() as f64;
        let mut x = vec![0.0; d];
        for _ in 0..200 {
            let g = self.reference_gradient(&x);
            if norm(&g) <= 1e-10 {
                return Ok(x);
            }
            let mut h = DMatrix::<f64>::identity(d, d) * self.l2;
            for i in 0..self.data.len() {
                let a = self.data.row(i);
                let s = sigmoid(dot(a, &x));
                let w = s * (1.0 - s) / n;
                for r in 0..d {
                    for c in 0..d {
                        h[(r, c)] += w * a[r] * a[c];
                    }
                }
            }
            let chol = h
                .cholesky()
                .ok_or_else(|| Error::NonFinite("logistic Hessian is not positive definite".into()))?;
            let dir = chol.solve(&DVector::from_vec(g.clone()));
            let f0 = self.objective(&x);
            let slope = -dot(&g, dir.as_slice());
            let mut t = 1.0;
            loop {
                let trial: Vec<f64> = x.iter().zip(dir.iter()).map(|(xv, dv)| xv - t * dv).collect();
                if self.objective(&trial) <= f0 + 1e-4 * t * slope || t < 1e-12 {
                    x = trial;
                    break;
                }
                t *= 0.5;
            }
        }
        let g = norm(&self.reference_gradient(&x));
        if g <= 1e-8 {
            Ok(x)
        } else {
            Err(Error::NonFinite(format!("reference minimization stalled at gradient norm {g:e}")))
        }
    }
}

impl StochasticProblem for LogisticRegression {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.data.dim
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let n = self.data.len();
        let mut loss = 0.0;
        for i in 0..n {
            loss += logistic_loss(self.data.labels[i] * dot(self.data.row(i), x));
        }
        loss / n as f64 + 0.5 * self.l2 * norm_sq(x)
    }

    fn sample_loss(&self, x: &[f64], xi: Xi) -> f64 {
        let i = xi as usize;
        logistic_loss(self.data.labels[i] * dot(self.data.row(i), x)) + 0.5 * self.l2 * norm_sq(x)
    }

    fn draw_sample(&self, rng: &mut dyn RngCore) -> Xi {
        rng.random_range(0..self.data.len() as u64)
    }

    fn reference_gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.data.len();
        let mut g: Vec<f64> = x.iter().map(|v| self.l2 * v).collect();
        for i in 0..n {
            let a = self.data.row(i);
            let y = self.data.labels[i];
            let w = -y * sigmoid(-y * dot(a, x)) / n as f64;
            crate::linalg::axpy(w, a, &mut g);
        }
        g
    }

    fn sample_gradient(&self, x: &[f64], xi: Xi) -> Vec<f64> {
        let i = xi as usize;
        let a = self.data.row(i);
        let y = self.data.labels[i];
        let mut g: Vec<f64> = x.iter().map(|v| self.l2 * v).collect();
        crate::linalg::axpy(-y * sigmoid(-y * dot(a, x)), a, &mut g);
        g
    }

    fn constants(&self) -> &ProblemConstants {
        &self.constants
    }

    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.data.dim]
    }

    fn finite_support(&self) -> Option<u64> {
        Some(self.data.len() as u64)
    }
}
