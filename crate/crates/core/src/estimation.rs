//! Parameterizations of `(R, K)`, residual construction and the fitting
//! strategies built on them.
//!
//! | variant      | unknowns                   | layout of `theta`                                   |
//! |--------------|----------------------------|-----------------------------------------------------|
//! | `Full`       | `2 M N`                    | `R` row-major, then `K` row-major                   |
//! | `Symmetric`  | `N (N + 1)`                | upper triangle of `R`, then of `K`, row-major       |
//! | `LowRank(r)` | `2 r (M + N)`              | `A (M x r)`, `B (N x r)`, `C (M x r)`, `D (N x r)`  |
//! | `TwoStage`   | `N (N + 1) + 2 (M - N) N`  | symmetric source block, then full sink rows         |
//!
//! For `LowRank`, `R = A B^T` and `K = C D^T`.

use std::time::Instant;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::model::{
    forward_naive, mean_percentage_error, CouplingModel, ExcitationSeries, FitMeta, ModelError, MpeSummary,
    Parameterization, Provenance, StepTable, TemperatureSeries, TimeGrid, TransientDataset, POSITIVITY_FLOOR,
};
use crate::solver::{minimize, ResidualFunction, SolverError, SolverOptions, SolverResult};

/// Rank used when a low-rank fit is requested without one.
pub const DEFAULT_RANK: usize = 2;
/// Energy fraction used by [`suggest_rank`] when none is given.
pub const DEFAULT_TAU: f64 = 0.9;
/// Relative amplitude of the cosine pattern added to low-rank factor columns
/// beyond the first, so the starting factors have full column rank.
const LOWRANK_INIT_SPREAD: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("invalid shape for {variant}: {reason}")]
    Shape { variant: Parameterization, reason: String },
    #[error("parameter vector has {actual} entries, expected {expected}")]
    ThetaLength { expected: usize, actual: usize },
    #[error("matrices are not symmetric (max |A - A^T| = {max_asymmetry:e})")]
    Asymmetric { max_asymmetry: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Solver(SolverError),
    #[error("solver stalled (cost {}); best parameters retained", .result.final_cost)]
    Stalled { result: Box<SolverResult> },
    #[error("fitted model is invalid: {0}")]
    FitInvalid(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: u8,
        #[source]
        source: Box<EstimationError>,
    },
    #[error("rank selection: {0}")]
    Rank(String),
}

impl From<SolverError> for EstimationError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Stalled { best } => EstimationError::Stalled { result: best },
            other => EstimationError::Solver(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, EstimationError>;

fn shape_err<T>(variant: Parameterization, reason: impl Into<String>) -> Result<T> {
    Err(EstimationError::Shape {
        variant,
        reason: reason.into(),
    })
}

/// Checks `variant` against an `M x N` system whose first `colocated` monitors sit on sources.
pub fn check_variant(variant: Parameterization, m: usize, n: usize, colocated: usize) -> Result<()> {
    if m == 0 || n == 0 {
        return shape_err(variant, "empty system");
    }
    match variant {
        Parameterization::Full => Ok(()),
        Parameterization::Symmetric => {
            if m != n {
                shape_err(variant, format!("requires M = N, got M = {m}, N = {n}"))
            } else if colocated != n {
                shape_err(
                    variant,
                    format!("requires all {n} monitors co-located, got {colocated}"),
                )
            } else {
                Ok(())
            }
        }
        Parameterization::LowRank { rank } => {
            if rank == 0 || rank > m.min(n) {
                shape_err(variant, format!("rank must lie in 1..={}", m.min(n)))
            } else {
                Ok(())
            }
        }
        Parameterization::TwoStage => {
            if m <= n {
                shape_err(variant, format!("requires M > N, got M = {m}, N = {n}"))
            } else if colocated != n {
                shape_err(variant, format!("requires {n} co-located monitors, got {colocated}"))
            } else {
                Ok(())
            }
        }
    }
}

/// Number of unknowns in `theta` for `variant` on an `M x N` system.
pub fn param_count(variant: Parameterization, m: usize, n: usize) -> Result<usize> {
    match variant {
        Parameterization::Symmetric if m != n => shape_err(variant, "requires M = N"),
        Parameterization::TwoStage if m <= n => shape_err(variant, "requires M > N"),
        Parameterization::LowRank { rank } if rank == 0 || rank > m.min(n) => {
            shape_err(variant, format!("rank must lie in 1..={}", m.min(n)))
        }
        _ if m == 0 || n == 0 => shape_err(variant, "empty system"),
        Parameterization::Full => Ok(2 * m * n),
        Parameterization::Symmetric => Ok(n * (n + 1)),
        Parameterization::LowRank { rank } => Ok(2 * rank * (m + n)),
        Parameterization::TwoStage => Ok(n * (n + 1) + 2 * (m - n) * n),
    }
}

/// Unknowns describing one of the two matrices (half of [`param_count`]).
pub fn per_matrix_param_count(variant: Parameterization, m: usize, n: usize) -> Result<usize> {
    param_count(variant, m, n).map(|p| p / 2)
}

/// Row-major `R` followed by row-major `K`.
pub fn pack_full(r: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<Vec<f64>> {
    if r.shape() != k.shape() {
        return Err(ModelError::Dimension(format!("R is {:?}, K is {:?}", r.shape(), k.shape())).into());
    }
    let mut theta = Vec::with_capacity(2 * r.len());
    for mat in [r, k] {
        for i in 0..mat.nrows() {
            theta.extend(mat.row(i).iter());
        }
    }
    Ok(theta)
}

pub fn unpack_full(theta: &[f64], m: usize, n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_len(theta, 2 * m * n)?;
    let (r, k) = theta.split_at(m * n);
    Ok((DMatrix::from_row_slice(m, n, r), DMatrix::from_row_slice(m, n, k)))
}

fn check_len(theta: &[f64], expected: usize) -> Result<()> {
    if theta.len() != expected {
        return Err(EstimationError::ThetaLength {
            expected,
            actual: theta.len(),
        });
    }
    Ok(())
}

fn fill_symmetric(upper: &[f64], n: usize, out: &mut [f64]) {
    let mut idx = 0;
    for i in 0..n {
        for j in i..n {
            out[i * n + j] = upper[idx];
            out[j * n + i] = upper[idx];
            idx += 1;
        }
    }
}

/// Symmetric `N x N` pair from the two packed upper triangles.
pub fn symmetric_expand(theta: &[f64], n: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_len(theta, n * (n + 1))?;
    let half = n * (n + 1) / 2;
    let mut r = vec![0.0; n * n];
    let mut k = vec![0.0; n * n];
    fill_symmetric(&theta[..half], n, &mut r);
    fill_symmetric(&theta[half..], n, &mut k);
    Ok((DMatrix::from_row_slice(n, n, &r), DMatrix::from_row_slice(n, n, &k)))
}

/// Inverse of [`symmetric_expand`]; both inputs must be exactly symmetric.
pub fn symmetric_collapse(r: &DMatrix<f64>, k: &DMatrix<f64>) -> Result<Vec<f64>> {
    if !r.is_square() || r.shape() != k.shape() {
        return Err(ModelError::Dimension(format!("R is {:?}, K is {:?}", r.shape(), k.shape())).into());
    }
    let n = r.nrows();
    let asym = [r, k]
        .iter()
        .map(|mat| (*mat - mat.transpose()).amax())
        .fold(0.0, f64::max);
    if asym != 0.0 {
        return Err(EstimationError::Asymmetric { max_asymmetry: asym });
    }
    let mut theta = Vec::with_capacity(n * (n + 1));
    for mat in [r, k] {
        for i in 0..n {
            for j in i..n {
                theta.push(mat[(i, j)]);
            }
        }
    }
    Ok(theta)
}

/// `R = A B^T`, `K = C D^T` from the packed factors.
pub fn lowrank_expand(theta: &[f64], m: usize, n: usize, rank: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_len(theta, 2 * rank * (m + n))?;
    let mut r = vec![0.0; m * n];
    let mut k = vec![0.0; m * n];
    lowrank_fill(theta, m, n, rank, &mut r, &mut k);
    Ok((DMatrix::from_row_slice(m, n, &r), DMatrix::from_row_slice(m, n, &k)))
}

fn lowrank_fill(theta: &[f64], m: usize, n: usize, rank: usize, r: &mut [f64], k: &mut [f64]) {
    let (a, rest) = theta.split_at(m * rank);
    let (b, rest) = rest.split_at(n * rank);
    let (c, d) = rest.split_at(m * rank);
    for i in 0..m {
        for j in 0..n {
            let mut rij = 0.0;
            let mut kij = 0.0;
            for q in 0..rank {
                rij += a[i * rank + q] * b[j * rank + q];
                kij += c[i * rank + q] * d[j * rank + q];
            }
            r[i * n + j] = rij;
            k[i * n + j] = kij;
        }
    }
}

/// Maps `theta` of one variant onto row-major `R`, `K` buffers.
#[derive(Debug, Clone, Copy)]
struct Layout {
    variant: Parameterization,
    m: usize,
    n: usize,
}

impl Layout {
    fn expand_into(&self, theta: &[f64], r: &mut [f64], k: &mut [f64]) {
        let (m, n) = (self.m, self.n);
        match self.variant {
            Parameterization::Full => {
                r.copy_from_slice(&theta[..m * n]);
                k.copy_from_slice(&theta[m * n..]);
            }
            Parameterization::Symmetric => {
                let half = n * (n + 1) / 2;
                fill_symmetric(&theta[..half], n, r);
                fill_symmetric(&theta[half..], n, k);
            }
            Parameterization::LowRank { rank } => lowrank_fill(theta, m, n, rank, r, k),
            Parameterization::TwoStage => {
                let half = n * (n + 1) / 2;
                let sink = (m - n) * n;
                fill_symmetric(&theta[..half], n, &mut r[..n * n]);
                fill_symmetric(&theta[half..2 * half], n, &mut k[..n * n]);
                r[n * n..].copy_from_slice(&theta[2 * half..2 * half + sink]);
                k[n * n..].copy_from_slice(&theta[2 * half + sink..]);
            }
        }
    }

    fn expand(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut r = vec![0.0; self.m * self.n];
        let mut k = vec![0.0; self.m * self.n];
        self.expand_into(theta, &mut r, &mut k);
        (
            DMatrix::from_row_slice(self.m, self.n, &r),
            DMatrix::from_row_slice(self.m, self.n, &k),
        )
    }
}

/// Stacked prediction-minus-measurement residuals of a dataset, monitor-major
/// then time, for one parameterization.
#[derive(Debug, Clone)]
pub struct CouplingResiduals {
    layout: Layout,
    kernel: ForwardKernel,
    steps: StepTable,
    powers: ExcitationSeries,
    grid: TimeGrid,
    times: Vec<f64>,
    measured: Vec<f64>,
    t0: f64,
}

impl CouplingResiduals {
    pub fn variant(&self) -> Parameterization {
        self.layout.variant
    }

    /// `(R, K)` encoded by `theta` under this residual's parameterization.
    pub fn expand(&self, theta: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_len(theta, self.num_params())?;
        Ok(self.layout.expand(theta))
    }
}

impl ResidualFunction for CouplingResiduals {
    fn num_params(&self) -> usize {
        // Layout was validated at construction.
        param_count(self.layout.variant, self.layout.m, self.layout.n).unwrap_or(0)
    }

    fn num_residuals(&self) -> usize {
        self.measured.len()
    }

    fn eval(&self, theta: &[f64], out: &mut [f64]) {
        let (m, n) = (self.layout.m, self.layout.n);
        let mut r = vec![0.0; m * n];
        let mut k = vec![0.0; m * n];
        self.layout.expand_into(theta, &mut r, &mut k);
        let len = self.times.len();
        for i in 0..m {
            let (r_row, k_row) = (&r[i * n..(i + 1) * n], &k[i * n..(i + 1) * n]);
            let row = &mut out[i * len..(i + 1) * len];
            match self.kernel {
                ForwardKernel::Vectorized => self.steps.superpose_into(&self.times, r_row, k_row, row),
                ForwardKernel::Naive => {
                    // Inputs were validated at construction; only non-finite
                    // parameters can fail here.
                    match forward_naive(&self.powers, &self.grid, r_row, k_row, 0.0) {
                        Ok(rise) => row.copy_from_slice(&rise),
                        Err(_) => row.fill(f64::NAN),
                    }
                }
            }
            for (v, meas) in row.iter_mut().zip(&self.measured[i * len..(i + 1) * len]) {
                *v = *v + self.t0 - meas;
            }
        }
    }
}

/// Forward model used inside residual evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ForwardKernel {
    /// Step detection and nested loops on every evaluation.
    Naive,
    /// Steps detected once, tail-slice accumulation per step.
    #[default]
    Vectorized,
}

/// Residual function of `variant` over every monitor of `dataset`.
pub fn build_residuals(dataset: &TransientDataset, variant: Parameterization) -> Result<CouplingResiduals> {
    build_residuals_with(dataset, variant, ForwardKernel::Vectorized)
}

/// [`build_residuals`] with an explicit forward kernel.
pub fn build_residuals_with(
    dataset: &TransientDataset,
    variant: Parameterization,
    kernel: ForwardKernel,
) -> Result<CouplingResiduals> {
    let (m, n) = (dataset.monitor_count(), dataset.source_count());
    check_variant(variant, m, n, dataset.colocated_count())?;
    Ok(CouplingResiduals {
        layout: Layout { variant, m, n },
        kernel,
        steps: StepTable::new(dataset.powers(), dataset.grid())?,
        powers: dataset.powers().clone(),
        grid: dataset.grid().clone(),
        times: dataset.grid().times().to_vec(),
        measured: dataset.temperatures().rows().concat(),
        t0: dataset.t0(),
    })
}

fn cosine_pattern(len: usize, rank: usize) -> Vec<f64> {
    let scale = 1.0 / (rank as f64).sqrt();
    let mut out = Vec::with_capacity(len * rank);
    for i in 0..len {
        for q in 0..rank {
            let wiggle = if q == 0 {
                0.0
            } else {
                LOWRANK_INIT_SPREAD * (std::f64::consts::PI * q as f64 * (i as f64 + 0.5) / len as f64).cos()
            };
            out.push(scale * (1.0 + wiggle));
        }
    }
    out
}

/// Default starting point: all ones. Low-rank factors start at `1/sqrt(r)`
/// with a cosine pattern added to every column after the first.
pub fn initial_guess(variant: Parameterization, m: usize, n: usize) -> Result<Vec<f64>> {
    let p = param_count(variant, m, n)?;
    Ok(match variant {
        Parameterization::LowRank { rank } => {
            let a = cosine_pattern(m, rank);
            let b = cosine_pattern(n, rank);
            [a.as_slice(), b.as_slice(), a.as_slice(), b.as_slice()].concat()
        }
        _ => vec![1.0; p],
    })
}

/// Physical variants are bounded below by the positivity floor; low-rank
/// factors are unbounded.
fn with_default_bounds(variant: Parameterization, p: usize, opts: &SolverOptions) -> SolverOptions {
    let mut opts = opts.clone();
    if opts.lower_bounds.is_none() && !matches!(variant, Parameterization::LowRank { .. }) {
        opts.lower_bounds = Some(vec![POSITIVITY_FLOOR; p]);
    }
    opts
}

/// Result of a fit, with training diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub model: CouplingModel,
    pub per_monitor_mpe: MpeSummary,
    /// `||r(theta*)||_2` over the whole dataset.
    pub residual_norm: f64,
    /// One result per solver run (two for `TwoStage`).
    pub solver: Vec<SolverResult>,
    pub param_count: usize,
    /// Entries of `R` or `K` that came out of the solver below the positivity
    /// floor and were raised to it (only possible for `LowRank`).
    pub floored_entries: usize,
    pub elapsed_s: f64,
}

impl FitReport {
    pub fn iterations(&self) -> usize {
        self.solver.iter().map(|s| s.iterations).sum()
    }
}

/// Raises entries below the positivity floor to it; returns the model and the
/// number of raised entries.
fn validated_model(
    variant: Parameterization,
    r: DMatrix<f64>,
    k: DMatrix<f64>,
    t0: f64,
) -> Result<(CouplingModel, usize)> {
    let mut mats = [r, k];
    let mut floored = 0;
    for (name, mat) in ["R", "K"].iter().zip(mats.iter_mut()) {
        for v in mat.iter_mut() {
            if !v.is_finite() {
                return Err(EstimationError::FitInvalid(format!(
                    "{variant} fit produced {name} entry {v}"
                )));
            }
            if *v < POSITIVITY_FLOOR {
                *v = POSITIVITY_FLOOR;
                floored += 1;
            }
        }
    }
    if floored > 0 {
        log::warn!("{variant} fit: {floored} entries raised to the positivity floor");
    }
    let [r, k] = mats;
    Ok((CouplingModel::new(r, k, t0)?, floored))
}

fn finish_report(
    dataset: &TransientDataset,
    variant: Parameterization,
    r: DMatrix<f64>,
    k: DMatrix<f64>,
    solver: Vec<SolverResult>,
    param_count: usize,
    started: Instant,
) -> Result<FitReport> {
    let (model, floored_entries) = validated_model(variant, r, k, dataset.t0())?;
    let pred = crate::model::predict(&model, dataset.powers(), dataset.grid())?;
    let residual_norm = residual_norm(&pred, dataset.temperatures());
    let per_monitor_mpe = mean_percentage_error(&pred, dataset.temperatures())?;
    let elapsed_s = started.elapsed().as_secs_f64();
    let model = model.with_provenance(Provenance {
        parameterization: variant,
        colocated_count: Some(dataset.colocated_count()),
        fit: Some(FitMeta {
            residual_norm,
            iterations: solver.iter().map(|s| s.iterations).sum(),
            elapsed_s,
        }),
    });
    Ok(FitReport {
        model,
        per_monitor_mpe,
        residual_norm,
        solver,
        param_count,
        floored_entries,
        elapsed_s,
    })
}

fn residual_norm(pred: &TemperatureSeries, meas: &TemperatureSeries) -> f64 {
    pred.rows()
        .iter()
        .flatten()
        .zip(meas.rows().iter().flatten())
        .map(|(p, m)| (p - m) * (p - m))
        .sum::<f64>()
        .sqrt()
}

/// Log-midpoint `1 / sqrt(span * dt)` of the rates a record can resolve,
/// between `1 / span` (slowest) and `1 / dt` (fastest), with `dt` the mean
/// sample interval.
pub fn resolvable_rate(grid: &TimeGrid) -> f64 {
    let t = grid.times();
    let span = t[t.len() - 1] - t[0];
    let dt = span / (t.len() - 1) as f64;
    1.0 / (span * dt).sqrt()
}

/// Starting point used by [`fit`]: [`initial_guess`], except that low-rank
/// `K` factors are scaled so their product starts at
/// [`resolvable_rate`] rather than 1 1/s.
pub fn default_start(dataset: &TransientDataset, variant: Parameterization) -> Result<Vec<f64>> {
    let (m, n) = (dataset.monitor_count(), dataset.source_count());
    let mut theta = initial_guess(variant, m, n)?;
    if let Parameterization::LowRank { rank } = variant {
        let scale = resolvable_rate(dataset.grid()).sqrt();
        theta[rank * (m + n)..].iter_mut().for_each(|v| *v *= scale);
    }
    Ok(theta)
}

/// Fits `variant` from [`default_start`].
pub fn fit(dataset: &TransientDataset, variant: Parameterization, opts: &SolverOptions) -> Result<FitReport> {
    let theta0 = default_start(dataset, variant)?;
    fit_from(dataset, variant, &theta0, opts)
}

/// Unstructured `Full` fit evaluated with the naive forward kernel: the
/// reference implementation the structured variants are timed against.
pub fn fit_naive(dataset: &TransientDataset, opts: &SolverOptions) -> Result<FitReport> {
    let variant = Parameterization::Full;
    let theta0 = initial_guess(variant, dataset.monitor_count(), dataset.source_count())?;
    fit_with_kernel(dataset, variant, &theta0, opts, ForwardKernel::Naive)
}

/// Fits `variant` from a caller-supplied starting point.
pub fn fit_from(
    dataset: &TransientDataset,
    variant: Parameterization,
    theta0: &[f64],
    opts: &SolverOptions,
) -> Result<FitReport> {
    if variant == Parameterization::TwoStage {
        return fit_two_stage(dataset, opts);
    }
    fit_with_kernel(dataset, variant, theta0, opts, ForwardKernel::Vectorized)
}

fn fit_with_kernel(
    dataset: &TransientDataset,
    variant: Parameterization,
    theta0: &[f64],
    opts: &SolverOptions,
    kernel: ForwardKernel,
) -> Result<FitReport> {
    let started = Instant::now();
    let residuals = build_residuals_with(dataset, variant, kernel)?;
    let p = residuals.num_params();
    check_len(theta0, p)?;
    let opts = with_default_bounds(variant, p, opts);
    let result = minimize(&residuals, theta0, &opts)?;
    log::debug!(
        "{variant}: {} iterations, cost {:e} -> {:e}, {:?}",
        result.iterations,
        result.initial_cost,
        result.final_cost,
        result.termination
    );
    let (r, k) = residuals.layout.expand(&result.theta_star);
    finish_report(dataset, variant, r, k, vec![result], p, started)
}

/// Symmetric fit of the co-located source block, then a full fit of the sink
/// rows with the source block frozen.
pub fn fit_two_stage(dataset: &TransientDataset, opts: &SolverOptions) -> Result<FitReport> {
    let (m, n) = (dataset.monitor_count(), dataset.source_count());
    check_variant(Parameterization::TwoStage, m, n, dataset.colocated_count())?;
    let started = Instant::now();
    let stage = |stage: u8| {
        move |e: EstimationError| EstimationError::Stage {
            stage,
            source: Box::new(e),
        }
    };

    let sources = dataset.select_monitors(0..n).map_err(|e| stage(1)(e.into()))?;
    let first = fit(&sources, Parameterization::Symmetric, opts).map_err(stage(1))?;

    let sinks = dataset.select_monitors(n..m).map_err(|e| stage(2)(e.into()))?;
    let second = fit(&sinks, Parameterization::Full, opts).map_err(stage(2))?;

    let mut r = DMatrix::zeros(m, n);
    let mut k = DMatrix::zeros(m, n);
    r.view_mut((0, 0), (n, n)).copy_from(first.model.r());
    k.view_mut((0, 0), (n, n)).copy_from(first.model.k());
    r.view_mut((n, 0), (m - n, n)).copy_from(second.model.r());
    k.view_mut((n, 0), (m - n, n)).copy_from(second.model.k());

    let p = param_count(Parameterization::TwoStage, m, n)?;
    let solver = first.solver.into_iter().chain(second.solver).collect();
    finish_report(dataset, Parameterization::TwoStage, r, k, solver, p, started)
}

/// Smallest `k` with `sum(sigma[..k]) / sum(sigma) >= tau`.
pub fn select_rank(singular_values: &[f64], tau: f64) -> Result<usize> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(EstimationError::Rank(format!("tau must lie in (0, 1], got {tau}")));
    }
    if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(EstimationError::Rank(
            "singular values must be finite and non-negative".into(),
        ));
    }
    if singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(EstimationError::Rank(
            "singular values must be sorted descending".into(),
        ));
    }
    let total: f64 = singular_values.iter().sum();
    if total == 0.0 {
        return Err(EstimationError::Rank("all singular values are zero".into()));
    }
    let mut partial = 0.0;
    for (idx, s) in singular_values.iter().enumerate() {
        partial += s;
        if partial / total >= tau {
            return Ok(idx + 1);
        }
    }
    Ok(singular_values.len())
}

/// Descending singular values with numerically-zero ones
/// (`<= max(M, N) * eps * sigma_1`) set to exactly 0.
pub fn singular_values(mat: &DMatrix<f64>) -> Result<Vec<f64>> {
    if mat.iter().any(|v| !v.is_finite()) {
        return Err(EstimationError::Rank("matrix has non-finite entries".into()));
    }
    let mut sv: Vec<f64> = mat.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let cutoff = sv.first().copied().unwrap_or(0.0) * f64::EPSILON * mat.nrows().max(mat.ncols()) as f64;
    for s in sv.iter_mut() {
        if *s <= cutoff {
            *s = 0.0;
        }
    }
    Ok(sv)
}

/// `(rank for R, rank for K)` capturing `tau` of each spectrum.
pub fn suggest_rank(model: &CouplingModel, tau: f64) -> Result<(usize, usize)> {
    let r = select_rank(&singular_values(model.r())?, tau)?;
    let k = select_rank(&singular_values(model.k())?, tau)?;
    Ok((r, k))
}

/// `K_ij = 1 / (R_ij C_T)`; a starting point only, never a fitted answer.
pub fn init_time_constants(r: &DMatrix<f64>, total_capacitance: f64) -> Result<DMatrix<f64>> {
    if !(total_capacitance > 0.0 && total_capacitance.is_finite()) {
        return Err(EstimationError::FitInvalid(format!(
            "total capacitance must be positive, got {total_capacitance}"
        )));
    }
    if let Some(v) = r.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(EstimationError::FitInvalid(format!(
            "resistance entry {v} is not positive"
        )));
    }
    Ok(r.map(|rij| 1.0 / (rij * total_capacitance)))
}
