//! Dense bounded Levenberg–Marquardt with a forward-difference Jacobian.
//!
//! Each iteration solves `(J^T J + lambda * D) delta = -J^T r` with
//! `D = diag(J^T J)`, projects `theta + delta` onto the box bounds and accepts
//! the trial when the cost `||r||^2` decreases. `lambda` is divided by 10 on
//! acceptance and multiplied by 10 on rejection, clamped to `[1e-12, 1e12]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e12;
/// Clamping straight onto a bound lets pairs such as `(R, K)` collapse together
/// onto the positivity floor, where both derivatives vanish.
const BOUNDARY_FRACTION: f64 = 0.9;

/// A vector-valued residual `theta -> r(theta)`.
///
/// Implementations must be pure: equal inputs give bitwise-equal outputs.
pub trait ResidualFunction {
    fn num_params(&self) -> usize;
    fn num_residuals(&self) -> usize;
    fn eval(&self, theta: &[f64], out: &mut [f64]);
}

/// Adapter turning a closure into a [`ResidualFunction`].
pub struct FnResidual<F> {
    params: usize,
    residuals: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnResidual<F> {
    pub fn new(params: usize, residuals: usize, f: F) -> Self {
        Self { params, residuals, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> ResidualFunction for FnResidual<F> {
    fn num_params(&self) -> usize {
        self.params
    }
    fn num_residuals(&self) -> usize {
        self.residuals
    }
    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        (self.f)(theta, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative cost decrease below which the iteration stops.
    pub cost_tolerance: f64,
    /// Relative parameter step below which the iteration stops.
    pub step_tolerance: f64,
    /// Largest cosine between the residual and any Jacobian column, and
    /// largest `||J^T r||_inf` relative to its value at the start.
    pub gradient_tolerance: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
    pub lower_bounds: Option<Vec<f64>>,
    pub upper_bounds: Option<Vec<f64>>,
    pub initial_damping: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            cost_tolerance: 1e-8,
            step_tolerance: 1e-8,
            gradient_tolerance: 1e-8,
            fd_step: 1e-6,
            lower_bounds: None,
            upper_bounds: None,
            initial_damping: 1e-3,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self, p: usize) -> Result<(), SolverError> {
        for (name, v) in [
            ("cost_tolerance", self.cost_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("gradient_tolerance", self.gradient_tolerance),
            ("fd_step", self.fd_step),
            ("initial_damping", self.initial_damping),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SolverError::Options(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, b) in [("lower", &self.lower_bounds), ("upper", &self.upper_bounds)] {
            if let Some(b) = b {
                if b.len() != p {
                    return Err(SolverError::Options(format!(
                        "{name} bounds have {} entries for {p} parameters",
                        b.len()
                    )));
                }
            }
        }
        if let (Some(lo), Some(hi)) = (&self.lower_bounds, &self.upper_bounds) {
            if let Some(j) = (0..p).find(|&j| lo[j] > hi[j]) {
                return Err(SolverError::Options(format!(
                    "lower bound {} exceeds upper bound {} for parameter {j}",
                    lo[j], hi[j]
                )));
            }
        }
        Ok(())
    }

    fn lower(&self, j: usize) -> f64 {
        self.lower_bounds.as_ref().map_or(f64::NEG_INFINITY, |b| b[j])
    }

    fn upper(&self, j: usize) -> f64 {
        self.upper_bounds.as_ref().map_or(f64::INFINITY, |b| b[j])
    }

    /// Clamps a trial point into the box shrunk around `from`: a bounded
    /// coordinate may cover at most `BOUNDARY_FRACTION` of its remaining
    /// distance to the bound in one step.
    fn project(&self, from: &[f64], trial: &mut [f64]) {
        for (j, v) in trial.iter_mut().enumerate() {
            let (lo, hi) = (self.lower(j), self.upper(j));
            let lo = if lo.is_finite() {
                from[j] - BOUNDARY_FRACTION * (from[j] - lo)
            } else {
                lo
            };
            let hi = if hi.is_finite() {
                from[j] + BOUNDARY_FRACTION * (hi - from[j])
            } else {
                hi
            };
            *v = v.clamp(lo, hi);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    CostTol,
    StepTol,
    GradTol,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub theta_star: Vec<f64>,
    /// `||r(theta*)||^2`
    pub final_cost: f64,
    pub initial_cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub jacobian_evals: usize,
    pub residual_evals: usize,
    /// Cost after the start point and after every accepted step.
    pub cost_history: Vec<f64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("invalid solver options: {0}")]
    Options(String),
    #[error("residual function has {residuals} residuals for {params} parameters")]
    Shape { params: usize, residuals: usize },
    #[error("initial parameter {index} = {value} is outside [{lower}, {upper}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("non-finite residual while probing Jacobian column {column}")]
    Evaluation { column: usize },
    #[error("non-finite residual at the initial point")]
    InitialEvaluation,
    #[error("solver stalled at maximal damping after {} iterations (cost {})", .best.iterations, .best.final_cost)]
    Stalled { best: Box<SolverResult> },
}

fn cost_of(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

fn eval_checked(f: &dyn ResidualFunction, theta: &[f64], out: &mut [f64]) -> bool {
    f.eval(theta, out);
    out.iter().all(|v| v.is_finite())
}

/// Forward-difference Jacobian, `h_j = fd_step * max(|theta_j|, 1)`.
pub fn numeric_jacobian(f: &dyn ResidualFunction, theta: &[f64], fd_step: f64) -> Result<DMatrix<f64>, SolverError> {
    let mut r0 = vec![0.0; f.num_residuals()];
    if !eval_checked(f, theta, &mut r0) {
        return Err(SolverError::InitialEvaluation);
    }
    jacobian_at(f, theta, &r0, fd_step, &SolverOptions::default())
}

/// Jacobian around `theta` reusing `r0 = f(theta)`. Probes that would leave the
/// upper bound step backwards instead.
fn jacobian_at(
    f: &dyn ResidualFunction,
    theta: &[f64],
    r0: &[f64],
    fd_step: f64,
    opts: &SolverOptions,
) -> Result<DMatrix<f64>, SolverError> {
    let m = r0.len();
    let p = theta.len();
    let mut jac = DMatrix::zeros(m, p);
    let mut probe = theta.to_vec();
    let mut r = vec![0.0; m];
    for j in 0..p {
        let mut h = fd_step * theta[j].abs().max(1.0);
        if theta[j] + h > opts.upper(j) {
            h = -h;
        }
        probe[j] = theta[j] + h;
        // Effective step after rounding.
        let h_eff = probe[j] - theta[j];
        if !eval_checked(f, &probe, &mut r) {
            return Err(SolverError::Evaluation { column: j });
        }
        for (dst, (&a, &b)) in jac.column_mut(j).iter_mut().zip(r.iter().zip(r0)) {
            *dst = (a - b) / h_eff;
        }
        probe[j] = theta[j];
    }
    Ok(jac)
}

/// Largest `|J_j . r| / (||J_j|| ||r||)` over the columns.
fn gradient_cosine(jac: &DMatrix<f64>, g: &DVector<f64>, rnorm: f64) -> f64 {
    if rnorm == 0.0 {
        return 0.0;
    }
    jac.column_iter()
        .zip(g.iter())
        .map(|(col, gj)| {
            let cn = col.norm();
            if cn == 0.0 {
                0.0
            } else {
                gj.abs() / (cn * rnorm)
            }
        })
        .fold(0.0, f64::max)
}

/// Minimizes `||f(theta)||^2` from `theta0`.
pub fn minimize(f: &dyn ResidualFunction, theta0: &[f64], opts: &SolverOptions) -> Result<SolverResult, SolverError> {
    let p = f.num_params();
    let m = f.num_residuals();
    if theta0.len() != p || m < p {
        return Err(SolverError::Shape {
            params: p,
            residuals: m,
        });
    }
    opts.validate(p)?;
    for (index, &value) in theta0.iter().enumerate() {
        let (lower, upper) = (opts.lower(index), opts.upper(index));
        if !(value >= lower && value <= upper) {
            return Err(SolverError::OutOfBounds {
                index,
                value,
                lower,
                upper,
            });
        }
    }

    let mut theta = theta0.to_vec();
    let mut r = vec![0.0; m];
    if !eval_checked(f, &theta, &mut r) {
        return Err(SolverError::InitialEvaluation);
    }
    let mut cost = cost_of(&r);
    let initial_cost = cost;
    let mut lambda = opts.initial_damping.clamp(LAMBDA_MIN, LAMBDA_MAX);
    let mut history = vec![cost];
    let mut jacobian_evals = 0;
    let mut residual_evals = 1;
    let mut trial = vec![0.0; p];
    let mut r_trial = vec![0.0; m];
    let mut initial_gradient = None;

    let result = |theta: &[f64], cost: f64, iterations, termination, je, re, history: &Vec<f64>| SolverResult {
        theta_star: theta.to_vec(),
        final_cost: cost,
        initial_cost,
        iterations,
        termination,
        jacobian_evals: je,
        residual_evals: re,
        cost_history: history.clone(),
    };

    for iteration in 0..opts.max_iterations {
        if cost == 0.0 {
            return Ok(result(
                &theta,
                cost,
                iteration,
                Termination::GradTol,
                jacobian_evals,
                residual_evals,
                &history,
            ));
        }
        let jac = jacobian_at(f, &theta, &r, opts.fd_step, opts)?;
        jacobian_evals += 1;
        residual_evals += p;
        let rv = DVector::from_column_slice(&r);
        let g = jac.tr_mul(&rv);
        let g_inf = g.amax();
        let g0 = *initial_gradient.get_or_insert(g_inf);
        if gradient_cosine(&jac, &g, cost.sqrt()) <= opts.gradient_tolerance || g_inf <= opts.gradient_tolerance * g0 {
            return Ok(result(
                &theta,
                cost,
                iteration,
                Termination::GradTol,
                jacobian_evals,
                residual_evals,
                &history,
            ));
        }
        let jtj = jac.tr_mul(&jac);
        let max_diag = jtj.diagonal().iter().copied().fold(0.0, f64::max);
        let diag: Vec<f64> = jtj
            .diagonal()
            .iter()
            .map(|&d| d.max(max_diag * f64::EPSILON).max(f64::MIN_POSITIVE))
            .collect();
        let theta_norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();

        loop {
            let mut a = jtj.clone();
            for (j, d) in diag.iter().enumerate() {
                a[(j, j)] += lambda * d;
            }
            let step = match a.cholesky() {
                Some(ch) => Some(ch.solve(&(-&g))),
                None => None,
            };
            let Some(step) = step else {
                if lambda >= LAMBDA_MAX {
                    return Err(SolverError::Stalled {
                        best: Box::new(result(
                            &theta,
                            cost,
                            iteration,
                            Termination::MaxIter,
                            jacobian_evals,
                            residual_evals,
                            &history,
                        )),
                    });
                }
                lambda = (lambda * 10.0).min(LAMBDA_MAX);
                continue;
            };

            for j in 0..p {
                trial[j] = theta[j] + step[j];
            }
            opts.project(&theta, &mut trial);
            let step_norm = trial
                .iter()
                .zip(&theta)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();

            // Linearized cost at the projected trial.
            let delta = DVector::from_iterator(p, trial.iter().zip(&theta).map(|(a, b)| a - b));
            let predicted = (&rv + &jac * &delta).norm_squared();
            let finite = eval_checked(f, &trial, &mut r_trial);
            residual_evals += 1;
            let new_cost = if finite { cost_of(&r_trial) } else { f64::INFINITY };

            let actual_rel = (cost - new_cost) / cost;
            let predicted_rel = (cost - predicted) / cost;

            if new_cost < cost {
                std::mem::swap(&mut theta, &mut trial);
                std::mem::swap(&mut r, &mut r_trial);
                cost = new_cost;
                history.push(cost);
                lambda = (lambda / 10.0).max(LAMBDA_MIN);
                if step_norm <= opts.step_tolerance * (opts.step_tolerance + theta_norm) {
                    return Ok(result(
                        &theta,
                        cost,
                        iteration + 1,
                        Termination::StepTol,
                        jacobian_evals,
                        residual_evals,
                        &history,
                    ));
                }
                if actual_rel <= opts.cost_tolerance && predicted_rel <= opts.cost_tolerance {
                    return Ok(result(
                        &theta,
                        cost,
                        iteration + 1,
                        Termination::CostTol,
                        jacobian_evals,
                        residual_evals,
                        &history,
                    ));
                }
                break;
            }

            // Rejected trial: the model can no longer make progress at this scale.
            if step_norm <= opts.step_tolerance * (opts.step_tolerance + theta_norm) {
                return Ok(result(
                    &theta,
                    cost,
                    iteration + 1,
                    Termination::StepTol,
                    jacobian_evals,
                    residual_evals,
                    &history,
                ));
            }
            if predicted_rel.abs() <= opts.cost_tolerance && actual_rel.abs() <= opts.cost_tolerance {
                return Ok(result(
                    &theta,
                    cost,
                    iteration + 1,
                    Termination::CostTol,
                    jacobian_evals,
                    residual_evals,
                    &history,
                ));
            }
            if lambda >= LAMBDA_MAX {
                return Err(SolverError::Stalled {
                    best: Box::new(result(
                        &theta,
                        cost,
                        iteration + 1,
                        Termination::MaxIter,
                        jacobian_evals,
                        residual_evals,
                        &history,
                    )),
                });
            }
            lambda = (lambda * 10.0).min(LAMBDA_MAX);
        }
    }
    Ok(result(
        &theta,
        cost,
        opts.max_iterations,
        Termination::MaxIter,
        jacobian_evals,
        residual_evals,
        &history,
    ))
}
