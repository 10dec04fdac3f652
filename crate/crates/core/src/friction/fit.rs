//! Levenberg–Marquardt fit of the piecewise-logarithmic friction curve.

use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CurveParams, LogBase};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("need at least 4 distinct samples with x > 1 and one with x <= 1 (got {above} and {below})")]
    InsufficientData { above: usize, below: usize },
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("no convergence after {iterations} iterations (rmse {rmse})")]
    NonConvergence { iterations: usize, rmse: f64 },
    #[error("jacobian is rank deficient")]
    RankDeficient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Initial (a, b, c). C starts at the mean of the `x ≤ 1` samples.
    pub initial: [f64; 3],
    pub log_base: LogBase,
    /// Relative parameter-step tolerance.
    pub xtol: f64,
    /// Relative cost-decrease tolerance.
    pub ftol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial: [50.0, 0.5, 1.0],
            log_base: LogBase::Natural,
            xtol: 1e-12,
            ftol: 1e-15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: CurveParams,
    pub rmse: f64,
    pub iterations: usize,
}

struct Problem<'a> {
    samples: &'a [(f64, f64)],
    k: f64,
}

impl Problem<'_> {
    /// Residuals, or `None` when a log argument leaves the domain.
    fn residuals(&self, p: &Vector4<f64>) -> Option<DVector<f64>> {
        let mut r = DVector::zeros(self.samples.len());
        for (i, &(x, f)) in self.samples.iter().enumerate() {
            let model = if x <= 1.0 {
                p[3]
            } else {
                let arg = p[1] * x + p[2];
                if arg <= 0.0 {
                    return None;
                }
                p[0] * arg.ln() * self.k + p[3]
            };
            r[i] = model - f;
        }
        Some(r)
    }

    fn jacobian(&self, p: &Vector4<f64>) -> DMatrix<f64> {
        let mut j = DMatrix::zeros(self.samples.len(), 4);
        for (i, &(x, _)) in self.samples.iter().enumerate() {
            j[(i, 3)] = 1.0;
            if x > 1.0 {
                let arg = p[1] * x + p[2];
                j[(i, 0)] = arg.ln() * self.k;
                j[(i, 1)] = p[0] * self.k * x / arg;
                j[(i, 2)] = p[0] * self.k / arg;
            }
        }
        j
    }
}

/// Least-squares fit of (a, b, c, C) to `(velocity, force)` samples.
///
/// Deterministic for a given input order and options.
pub fn fit_friction_params(samples: &[(f64, f64)], opts: &FitOptions) -> Result<FitResult, FitError> {
    if let Some(i) = samples.iter().position(|(x, f)| !x.is_finite() || !f.is_finite()) {
        return Err(FitError::NonFinite(i));
    }
    let mut distinct: Vec<f64> = samples.iter().map(|s| s.0).filter(|&x| x > 1.0).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let below: Vec<f64> = samples.iter().filter(|s| s.0 <= 1.0).map(|s| s.1).collect();
    if distinct.len() < 4 || below.is_empty() {
        return Err(FitError::InsufficientData {
            above: distinct.len(),
            below: below.len(),
        });
    }

    let problem = Problem {
        samples,
        k: opts.log_base.ln_factor(),
    };
    let c0 = below.iter().sum::<f64>() / below.len() as f64;
    let mut p = Vector4::new(opts.initial[0], opts.initial[1], opts.initial[2], c0);
    let mut r = problem.residuals(&p).ok_or(FitError::RankDeficient)?;
    let mut cost = r.norm_squared();
    let mut lambda = 1e-3;
    let n = samples.len() as f64;

    for iter in 1..=opts.max_iterations {
        let j = problem.jacobian(&p);
        let sv = j.singular_values();
        let (smax, smin) = (sv.max(), sv.min());
        if !(smin > 1e-12 * smax) {
            return Err(FitError::RankDeficient);
        }
        let jt = j.transpose();
        let a: Matrix4<f64> = (&jt * &j).fixed_view::<4, 4>(0, 0).into();
        let g: Vector4<f64> = (&jt * &r).fixed_rows::<4>(0).into();

        let mut accepted = false;
        let mut small_step = false;
        while lambda < 1e16 {
            let mut damped = a;
            for k in 0..4 {
                damped[(k, k)] += lambda * a[(k, k)];
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&-g);
            let trial = p + step;
            match problem.residuals(&trial) {
                Some(rt) if rt.norm_squared() < cost => {
                    let new_cost = rt.norm_squared();
                    small_step = step.norm() <= opts.xtol * (p.norm() + opts.xtol)
                        || (cost - new_cost) <= opts.ftol * cost;
                    p = trial;
                    r = rt;
                    cost = new_cost;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => lambda *= 10.0,
            }
        }
        // No downhill step left at any damping: a (local) minimum.
        if !accepted || small_step || cost == 0.0 {
            return Ok(FitResult {
                params: CurveParams {
                    a: p[0],
                    b: p[1],
                    c: p[2],
                    offset: p[3],
                    log_base: opts.log_base,
                },
                rmse: (cost / n).sqrt(),
                iterations: iter,
            });
        }
    }
    Err(FitError::NonConvergence {
        iterations: opts.max_iterations,
        rmse: (cost / n).sqrt(),
    })
}
