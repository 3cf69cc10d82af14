//! Solution of the normal equations `B c = d`.
//!
//! `B + lambda I` is factorized as `L L^T` for each `lambda` of a schedule in
//! turn; the first factorization that succeeds and passes the residual check
//! gives the weights.

use crate::assembly::{apply_design, apply_design_transpose, BlockPlan, NormalSystem};
use crate::error::{Error, Result};
use crate::model::{Kernel, Point2, PointCloud, ReferenceSet};

/// Relative residual accepted for `(B + lambda I) c = d`.
pub const SOLVE_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum AttemptOutcome {
    Solved,
    /// A nonpositive pivot appeared at this row.
    NotPositiveDefinite {
        row: usize,
    },
    /// Factorization succeeded but the residual check failed.
    Inaccurate {
        relative_residual: f64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attempt {
    pub lambda: f64,
    pub outcome: AttemptOutcome,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverReport {
    pub attempts: Vec<Attempt>,
    /// `||(B + lambda I) c - d||_inf` of the accepted solution.
    pub residual_inf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub coefficients: Vec<f64>,
    /// Diagonal shift used; zero when `B` itself was factorized.
    pub lambda: f64,
    pub report: SolverReport,
}

impl Weights {
    /// Weights with no solver history, e.g. loaded from a model file.
    pub fn from_coefficients(coefficients: Vec<f64>) -> Self {
        Weights {
            coefficients,
            lambda: 0.0,
            report: SolverReport {
                attempts: Vec::new(),
                residual_inf: 0.0,
            },
        }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// A fitted approximation `f(p) = sum_j c_j phi(|p - center_j|)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FitModel {
    pub kernel: Kernel,
    pub refs: ReferenceSet,
    pub weights: Weights,
}

impl FitModel {
    pub fn new(kernel: Kernel, refs: ReferenceSet, weights: Weights) -> Result<Self> {
        if weights.len() != refs.len() {
            return Err(Error::invalid(
                "model",
                format!("{} weights for {} centers", weights.len(), refs.len()),
            ));
        }
        if let Some(j) = weights.coefficients.iter().position(|c| !c.is_finite()) {
            return Err(Error::invalid("model", format!("weight {j} is not finite")));
        }
        Ok(FitModel {
            kernel,
            refs,
            weights,
        })
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.weights.coefficients
    }

    pub fn centers(&self) -> &[Point2] {
        self.refs.centers()
    }
}

/// `0` followed by `lambda_0 * 10^k` for `k = 0..=6`, with
/// `lambda_0 = 1e-12 * trace(B) / M`.
pub fn default_lambda_schedule(system: &NormalSystem) -> Vec<f64> {
    let scale = system.trace() / system.m() as f64;
    let lambda0 = if scale > 0.0 { 1e-12 * scale } else { 1e-12 };
    std::iter::once(0.0)
        .chain((0..=6).map(|k| lambda0 * 10f64.powi(k)))
        .collect()
}

pub fn solve_normal(system: &NormalSystem, lambda_schedule: &[f64]) -> Result<Weights> {
    if lambda_schedule.is_empty() {
        return Err(Error::invalid("lambda schedule", "schedule is empty"));
    }
    if lambda_schedule
        .iter()
        .any(|l| !(l.is_finite() && *l >= 0.0))
        || lambda_schedule.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::invalid(
            "lambda schedule",
            "values must be finite, nonnegative and strictly increasing",
        ));
    }

    let m = system.m();
    let rhs = system.rhs();
    let norm_b = system.gram_inf_norm();
    let norm_d = inf_norm(rhs);
    let mut attempts = Vec::with_capacity(lambda_schedule.len());
    let mut factor = vec![0.0; m * m];

    for &lambda in lambda_schedule {
        factor.copy_from_slice(system.gram());
        for i in 0..m {
            factor[i * m + i] += lambda;
        }
        if let Err(row) = cholesky_in_place(&mut factor, m) {
            attempts.push(Attempt {
                lambda,
                outcome: AttemptOutcome::NotPositiveDefinite { row },
            });
            continue;
        }

        let mut c = rhs.to_vec();
        cholesky_solve(&factor, m, &mut c);
        // One step of iterative refinement.
        let mut r = shifted_residual(system, lambda, &c);
        cholesky_solve(&factor, m, &mut r);
        for (ci, ri) in c.iter_mut().zip(&r) {
            *ci -= ri;
        }

        let residual = shifted_residual(system, lambda, &c);
        let residual_inf = inf_norm(&residual);
        let bound = SOLVE_TOLERANCE * ((norm_b + lambda) * inf_norm(&c) + norm_d);
        if residual_inf.is_nan() || residual_inf > bound || c.iter().any(|v| !v.is_finite()) {
            let scale = (norm_b + lambda) * inf_norm(&c) + norm_d;
            attempts.push(Attempt {
                lambda,
                outcome: AttemptOutcome::Inaccurate {
                    relative_residual: residual_inf / scale,
                },
            });
            continue;
        }
        attempts.push(Attempt {
            lambda,
            outcome: AttemptOutcome::Solved,
        });
        return Ok(Weights {
            coefficients: c,
            lambda,
            report: SolverReport {
                attempts,
                residual_inf,
            },
        });
    }

    Err(Error::SolverExhausted {
        attempts: attempts.len(),
        last_lambda: *lambda_schedule.last().unwrap(),
        zero_coverage_centers: system.coverage.zero_coverage_centers(),
    })
}

/// `(B + lambda I) c - d`.
fn shifted_residual(system: &NormalSystem, lambda: f64, c: &[f64]) -> Vec<f64> {
    let m = system.m();
    system
        .gram()
        .chunks(m)
        .zip(c)
        .zip(system.rhs())
        .map(|((row, &ci), &di)| {
            let bc: f64 = row.iter().zip(c).map(|(b, x)| b * x).sum();
            bc + lambda * ci - di
        })
        .collect()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

/// Overwrites the lower triangle of the row-major `m x m` matrix `a` with its
/// Cholesky factor. Returns the first row with a nonpositive pivot on failure.
fn cholesky_in_place(a: &mut [f64], m: usize) -> std::result::Result<(), usize> {
    for i in 0..m {
        for j in 0..=i {
            let (upper, lower) = a.split_at_mut(i * m);
            let row_i = &mut lower[..m];
            let row_j: &[f64] = if j == i {
                &row_i[..]
            } else {
                &upper[j * m..j * m + m]
            };
            let dot: f64 = row_i[..j].iter().zip(&row_j[..j]).map(|(x, y)| x * y).sum();
            let s = row_i[j] - dot;
            if j == i {
                if s.is_nan() || s <= 0.0 || s.is_infinite() {
                    return Err(i);
                }
                row_i[i] = s.sqrt();
            } else {
                row_i[j] = s / row_j[j];
            }
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` in place given the factor from `cholesky_in_place`.
fn cholesky_solve(l: &[f64], m: usize, b: &mut [f64]) {
    for i in 0..m {
        let row = &l[i * m..i * m + i];
        let s: f64 = row.iter().zip(&b[..i]).map(|(x, y)| x * y).sum();
        b[i] = (b[i] - s) / l[i * m + i];
    }
    for i in (0..m).rev() {
        let mut s = b[i];
        for k in i + 1..m {
            s -= l[k * m + i] * b[k];
        }
        b[i] = s / l[i * m + i];
    }
}

/// Normalized stationarity residual of the least-squares problem:
/// `||A^T (A c - h)||_inf / (||A^T h||_inf + lambda ||c||_inf)`, streamed
/// panel by panel.
pub fn optimality_residual(
    cloud: &PointCloud,
    refs: &ReferenceSet,
    kernel: &Kernel,
    weights: &Weights,
    plan: &BlockPlan,
) -> f64 {
    let fitted = apply_design(cloud, refs, kernel, &weights.coefficients, plan);
    let values: Vec<f64> = cloud.values().collect();
    let residual: Vec<f64> = fitted.iter().zip(&values).map(|(f, h)| f - h).collect();
    let gradient = apply_design_transpose(cloud, refs, kernel, &residual, plan);
    let ath = apply_design_transpose(cloud, refs, kernel, &values, plan);
    let scale = inf_norm(&ath) + weights.lambda * inf_norm(&weights.coefficients);
    let g = inf_norm(&gradient);
    if scale > 0.0 {
        g / scale
    } else {
        g
    }
}
