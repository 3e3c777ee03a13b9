//! Domain types and the forward temperature model.
//!
//! A monitor temperature is `T0` plus the superposition of first-order
//! exponential step responses, one per detected change of every source's
//! piecewise-constant power input:
//!
//! ```text
//! T_i(t_m) = T0 + sum_j sum_{k in steps(j), k <= m} dP_jk * R_ij * (1 - exp(-K_ij * (t_m - t_{k-1})))
//! ```
//!
//! A change detected at sample `k` is treated as applied at `t(k-1)`.
//! For constant input this collapses to `T0 + sum_j P_j R_ij (1 - exp(-K_ij t))`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entries of a validated [`CouplingModel`] must be at least this large.
pub const POSITIVITY_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("time grid invalid at sample {index}: {reason}")]
    Grid { index: usize, reason: String },
    #[error("non-finite value in {what} at row {row}, sample {col}")]
    NonFinite { what: &'static str, row: usize, col: usize },
    #[error("invalid parameter {what}[{row},{col}] = {value}")]
    Parameter {
        what: &'static str,
        row: usize,
        col: usize,
        value: f64,
    },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("metric undefined: {0}")]
    MetricUndefined(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Strictly increasing, non-negative sample times in seconds.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    t: Vec<f64>,
}

impl TimeGrid {
    pub fn new(t: Vec<f64>) -> Result<Self> {
        if t.len() < 2 {
            return Err(ModelError::Grid {
                index: t.len(),
                reason: "at least two samples required".into(),
            });
        }
        for (index, &v) in t.iter().enumerate() {
            if !v.is_finite() {
                return Err(ModelError::Grid {
                    index,
                    reason: "non-finite time stamp".into(),
                });
            }
        }
        if t[0] < 0.0 {
            return Err(ModelError::Grid {
                index: 0,
                reason: format!("first time stamp {} is negative", t[0]),
            });
        }
        if let Some(k) = (1..t.len()).find(|&k| t[k] <= t[k - 1]) {
            return Err(ModelError::Grid {
                index: k,
                reason: format!("time {} does not exceed previous {}", t[k], t[k - 1]),
            });
        }
        Ok(Self { t })
    }

    /// `n` samples at `0, dt, 2 dt, ...`.
    pub fn uniform(n: usize, dt: f64) -> Result<Self> {
        Self::new((0..n).map(|k| k as f64 * dt).collect())
    }

    pub fn times(&self) -> &[f64] {
        &self.t
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn check_rows(what: &'static str, rows: &[Vec<f64>]) -> Result<usize> {
    if rows.is_empty() {
        return Err(ModelError::Dimension(format!("{what}: at least one row required")));
    }
    let len = rows[0].len();
    for (row, r) in rows.iter().enumerate() {
        if r.len() != len {
            return Err(ModelError::Dimension(format!(
                "{what}: row {row} has {} samples, expected {len}",
                r.len()
            )));
        }
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { what, row, col });
        }
    }
    Ok(len)
}

/// Piecewise-constant source powers in watts, one row per source.
///
/// The first sample of every row is forced to zero on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ExcitationSeries {
    rows: Vec<Vec<f64>>,
}

impl ExcitationSeries {
    pub fn new(mut rows: Vec<Vec<f64>>) -> Result<Self> {
        check_rows("powers", &rows)?;
        for r in rows.iter_mut() {
            if let Some(first) = r.first_mut() {
                *first = 0.0;
            }
        }
        Ok(Self { rows })
    }

    pub fn zeros(sources: usize, len: usize) -> Result<Self> {
        Self::new(vec![vec![0.0; len]; sources])
    }

    pub fn source_count(&self) -> usize {
        self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.rows[j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// Monitor temperatures in °C, one row per monitor.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureSeries {
    rows: Vec<Vec<f64>>,
}

impl TemperatureSeries {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        check_rows("temperatures", &rows)?;
        Ok(Self { rows })
    }

    pub fn monitor_count(&self) -> usize {
        self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Keeps the monitors in `range`, in order.
    pub fn select(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.rows.len() {
            return Err(ModelError::Dimension(format!(
                "monitor range {range:?} outside 0..{}",
                self.rows.len()
            )));
        }
        Ok(Self {
            rows: self.rows[range].to_vec(),
        })
    }
}

/// One recorded transient: source powers and monitor temperatures on a shared
/// grid. The first `colocated_count` monitors sit on sources `1..=colocated_count`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientDataset {
    grid: TimeGrid,
    powers: ExcitationSeries,
    temperatures: TemperatureSeries,
    t0: f64,
    colocated_count: usize,
}

impl TransientDataset {
    pub fn new(
        grid: TimeGrid,
        powers: ExcitationSeries,
        temperatures: TemperatureSeries,
        t0: f64,
        colocated_count: usize,
    ) -> Result<Self> {
        if powers.len() != grid.len() || temperatures.len() != grid.len() {
            return Err(ModelError::Dimension(format!(
                "grid has {} samples, powers {}, temperatures {}",
                grid.len(),
                powers.len(),
                temperatures.len()
            )));
        }
        if !t0.is_finite() {
            return Err(ModelError::Contract(format!("T0 = {t0} is not finite")));
        }
        let max_colocated = powers.source_count().min(temperatures.monitor_count());
        if colocated_count > max_colocated {
            return Err(ModelError::Contract(format!(
                "colocated count {colocated_count} exceeds min(M, N) = {max_colocated}"
            )));
        }
        Ok(Self {
            grid,
            powers,
            temperatures,
            t0,
            colocated_count,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn powers(&self) -> &ExcitationSeries {
        &self.powers
    }

    pub fn temperatures(&self) -> &TemperatureSeries {
        &self.temperatures
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn colocated_count(&self) -> usize {
        self.colocated_count
    }

    pub fn source_count(&self) -> usize {
        self.powers.source_count()
    }

    pub fn monitor_count(&self) -> usize {
        self.temperatures.monitor_count()
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    /// Same powers and grid, keeping only the monitors in `range`. Co-location
    /// is kept for the monitors that stay at their original position.
    pub fn select_monitors(&self, range: std::ops::Range<usize>) -> Result<Self> {
        let colocated = if range.start == 0 {
            self.colocated_count.min(range.end)
        } else {
            0
        };
        Self::new(
            self.grid.clone(),
            self.powers.clone(),
            self.temperatures.select(range)?,
            self.t0,
            colocated,
        )
    }
}

/// How a coupling model's `(R, K)` were parameterized during estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum Parameterization {
    Full,
    Symmetric,
    LowRank { rank: usize },
    TwoStage,
}

impl std::fmt::Display for Parameterization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Parameterization::Full => write!(f, "full"),
            Parameterization::Symmetric => write!(f, "symmetric"),
            Parameterization::LowRank { rank } => write!(f, "lowrank({rank})"),
            Parameterization::TwoStage => write!(f, "two-stage"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub residual_norm: f64,
    pub iterations: usize,
    pub elapsed_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Provenance {
    pub parameterization: Parameterization,
    pub colocated_count: Option<usize>,
    pub fit: Option<FitMeta>,
}

/// The identified reduced-order model: `R` (K/W) and `K` (1/s), both `M x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingModel {
    r: DMatrix<f64>,
    k: DMatrix<f64>,
    t0: f64,
    provenance: Option<Provenance>,
}

impl CouplingModel {
    /// Validates shapes, finiteness and positivity (`>= POSITIVITY_FLOOR`).
    pub fn new(r: DMatrix<f64>, k: DMatrix<f64>, t0: f64) -> Result<Self> {
        if r.shape() != k.shape() {
            return Err(ModelError::Dimension(format!(
                "R is {:?} but K is {:?}",
                r.shape(),
                k.shape()
            )));
        }
        if r.nrows() == 0 || r.ncols() == 0 {
            return Err(ModelError::Dimension("empty coupling matrices".into()));
        }
        if !t0.is_finite() {
            return Err(ModelError::Contract(format!("T0 = {t0} is not finite")));
        }
        for (what, m) in [("R", &r), ("K", &k)] {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    let v = m[(i, j)];
                    if !v.is_finite() || v < POSITIVITY_FLOOR {
                        return Err(ModelError::Parameter {
                            what,
                            row: i,
                            col: j,
                            value: v,
                        });
                    }
                }
            }
        }
        Ok(Self {
            r,
            k,
            t0,
            provenance: None,
        })
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = Some(provenance);
        self
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn provenance(&self) -> Option<&Provenance> {
        self.provenance.as_ref()
    }

    pub fn monitor_count(&self) -> usize {
        self.r.nrows()
    }

    pub fn source_count(&self) -> usize {
        self.r.ncols()
    }

    pub fn r_row(&self, i: usize) -> Vec<f64> {
        self.r.row(i).iter().copied().collect()
    }

    pub fn k_row(&self, i: usize) -> Vec<f64> {
        self.k.row(i).iter().copied().collect()
    }
}

/// One change of a source's power level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepEvent {
    /// Sample index `k >= 1` at which the new level is first recorded.
    pub index: usize,
    /// `P(k) - P(k-1)`, watts.
    pub delta_power: f64,
    /// `t(k-1)`, seconds.
    pub onset_time: f64,
}

/// Every index `k >= 1` where `power_row[k] != power_row[k - 1]`.
pub fn detect_steps(power_row: &[f64], grid: &TimeGrid) -> Result<Vec<StepEvent>> {
    if power_row.len() != grid.len() {
        return Err(ModelError::Dimension(format!(
            "power row has {} samples, grid has {}",
            power_row.len(),
            grid.len()
        )));
    }
    if power_row[0] != 0.0 {
        return Err(ModelError::Contract(format!(
            "first power sample must be 0, got {}",
            power_row[0]
        )));
    }
    let t = grid.times();
    Ok(power_row
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] != w[0])
        .map(|(km1, w)| StepEvent {
            index: km1 + 1,
            delta_power: w[1] - w[0],
            onset_time: t[km1],
        })
        .collect())
}

fn check_inputs(powers: &ExcitationSeries, grid: &TimeGrid, r_row: &[f64], k_row: &[f64]) -> Result<()> {
    if powers.len() != grid.len() {
        return Err(ModelError::Dimension(format!(
            "powers have {} samples, grid has {}",
            powers.len(),
            grid.len()
        )));
    }
    let n = powers.source_count();
    if r_row.len() != n || k_row.len() != n {
        return Err(ModelError::Dimension(format!(
            "{n} sources but R row has {} and K row has {} entries",
            r_row.len(),
            k_row.len()
        )));
    }
    for (what, row) in [("R", r_row), ("K", k_row)] {
        if let Some((col, &value)) = row.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
            return Err(ModelError::Parameter {
                what,
                row: 0,
                col,
                value,
            });
        }
    }
    Ok(())
}

/// Reference evaluation of one monitor trace: the literal source/step/sample
/// triple loop, recomputing the step set on every call.
pub fn forward_naive(
    powers: &ExcitationSeries,
    grid: &TimeGrid,
    r_row: &[f64],
    k_row: &[f64],
    t0: f64,
) -> Result<Vec<f64>> {
    check_inputs(powers, grid, r_row, k_row)?;
    let t = grid.times();
    let len = t.len();
    let mut temp = vec![0.0; len];
    for j in 0..powers.source_count() {
        let p = powers.row(j);
        let changes: Vec<usize> = (1..len).filter(|&k| p[k] != p[k - 1]).collect();
        let contribution: Vec<f64> = p.iter().map(|&pk| pk * r_row[j]).collect();
        for &k in &changes {
            let delta = contribution[k] - contribution[k - 1];
            let onset = t[k - 1];
            for m in k..len {
                temp[m] += delta * (1.0 - (-k_row[j] * (t[m] - onset)).exp());
            }
        }
    }
    Ok(temp.into_iter().map(|v| t0 + v).collect())
}

/// Step events of every source of an excitation, detected once and reused
/// across many parameter evaluations.
///
/// On a uniform grid the elapsed time `t(m) - t(k-1)` of every step depends
/// only on the lag `m - k + 1`, so the kernel `1 - exp(-K lag dt)` is
/// tabulated once per source and each step adds a scaled slice of it.
/// Non-uniform grids evaluate the exponential per tail sample.
#[derive(Debug, Clone)]
pub struct StepTable {
    steps: Vec<Vec<StepEvent>>,
    /// `lag * dt` for `lag = 0..T_len` when the grid is uniform.
    lags: Option<Vec<f64>>,
}

/// `lag * dt` per sample if `t` is uniform to within a few ulps of its span.
fn uniform_lags(t: &[f64]) -> Option<Vec<f64>> {
    let len = t.len();
    let dt = (t[len - 1] - t[0]) / (len - 1) as f64;
    let tol = 4.0 * f64::EPSILON * t[len - 1].abs().max(t[0].abs());
    let lags: Vec<f64> = (0..len).map(|l| l as f64 * dt).collect();
    t.iter()
        .zip(&lags)
        .all(|(tm, lag)| ((tm - t[0]) - lag).abs() <= tol)
        .then_some(lags)
}

impl StepTable {
    pub fn new(powers: &ExcitationSeries, grid: &TimeGrid) -> Result<Self> {
        let steps = powers
            .rows()
            .iter()
            .map(|row| detect_steps(row, grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            steps,
            lags: uniform_lags(grid.times()),
        })
    }

    pub fn source_count(&self) -> usize {
        self.steps.len()
    }

    pub fn source(&self, j: usize) -> &[StepEvent] {
        &self.steps[j]
    }

    /// Total number of step events across all sources.
    pub fn total(&self) -> usize {
        self.steps.iter().map(Vec::len).sum()
    }

    /// Writes the rise `T - T0` of one monitor into `out` without validating
    /// the parameters. Non-physical rows (negative entries) are evaluated as-is.
    pub fn superpose_into(&self, times: &[f64], r_row: &[f64], k_row: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let len = out.len();
        let mut kernel = vec![0.0; if self.lags.is_some() { len } else { 0 }];
        for (j, steps) in self.steps.iter().enumerate() {
            if steps.is_empty() {
                continue;
            }
            let (r, k) = (r_row[j], k_row[j]);
            if let Some(lags) = &self.lags {
                for (kv, &lag) in kernel.iter_mut().zip(lags) {
                    *kv = 1.0 - (-k * lag).exp();
                }
                for step in steps {
                    let amplitude = step.delta_power * r;
                    for (acc, kv) in out[step.index..].iter_mut().zip(&kernel[1..]) {
                        *acc += amplitude * kv;
                    }
                }
            } else {
                for step in steps {
                    let amplitude = step.delta_power * r;
                    let onset = step.onset_time;
                    for (acc, &tm) in out[step.index..].iter_mut().zip(&times[step.index..]) {
                        *acc += amplitude * (1.0 - (-k * (tm - onset)).exp());
                    }
                }
            }
        }
    }
}

/// Vectorized evaluation of one monitor trace: each step event updates the
/// whole tail slice `m = k..T_len` in one pass.
pub fn forward_vectorized(
    powers: &ExcitationSeries,
    grid: &TimeGrid,
    r_row: &[f64],
    k_row: &[f64],
    t0: f64,
) -> Result<Vec<f64>> {
    check_inputs(powers, grid, r_row, k_row)?;
    let table = StepTable::new(powers, grid)?;
    let mut out = vec![0.0; grid.len()];
    table.superpose_into(grid.times(), r_row, k_row, &mut out);
    out.iter_mut().for_each(|v| *v += t0);
    Ok(out)
}

/// Evaluates every monitor of `model` under `powers`.
pub fn predict(model: &CouplingModel, powers: &ExcitationSeries, grid: &TimeGrid) -> Result<TemperatureSeries> {
    if model.source_count() != powers.source_count() {
        return Err(ModelError::Dimension(format!(
            "model expects {} sources, excitation has {}",
            model.source_count(),
            powers.source_count()
        )));
    }
    if powers.len() != grid.len() {
        return Err(ModelError::Dimension(format!(
            "powers have {} samples, grid has {}",
            powers.len(),
            grid.len()
        )));
    }
    let table = StepTable::new(powers, grid)?;
    let mut rows = Vec::with_capacity(model.monitor_count());
    for i in 0..model.monitor_count() {
        let mut out = vec![0.0; grid.len()];
        table.superpose_into(grid.times(), &model.r_row(i), &model.k_row(i), &mut out);
        out.iter_mut().for_each(|v| *v += model.t0());
        rows.push(out);
    }
    TemperatureSeries::new(rows)
}

/// Per-monitor mean absolute percentage error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MpeSummary {
    /// `100 / n * sum |pred - meas| / |meas|` per monitor, in percent.
    pub per_monitor: Vec<f64>,
    /// Samples skipped per monitor because the measurement was exactly 0 °C.
    pub undefined_samples: Vec<usize>,
}

impl MpeSummary {
    pub fn max(&self) -> f64 {
        self.per_monitor.iter().copied().fold(0.0, f64::max)
    }

    pub fn any_undefined(&self) -> bool {
        self.undefined_samples.iter().any(|&n| n > 0)
    }
}

/// Mean percentage error of `pred` against `meas`, per monitor. Samples with
/// `meas == 0` are skipped and counted; a monitor with no usable sample is an error.
pub fn mean_percentage_error(pred: &TemperatureSeries, meas: &TemperatureSeries) -> Result<MpeSummary> {
    if pred.monitor_count() != meas.monitor_count() || pred.len() != meas.len() {
        return Err(ModelError::Dimension(format!(
            "prediction is {}x{}, measurement is {}x{}",
            pred.monitor_count(),
            pred.len(),
            meas.monitor_count(),
            meas.len()
        )));
    }
    let mut per_monitor = Vec::with_capacity(meas.monitor_count());
    let mut undefined_samples = Vec::with_capacity(meas.monitor_count());
    for (i, (p, m)) in pred.rows().iter().zip(meas.rows()).enumerate() {
        let mut sum = 0.0;
        let mut used = 0usize;
        for (&pv, &mv) in p.iter().zip(m) {
            if mv == 0.0 {
                continue;
            }
            sum += (pv - mv).abs() / mv.abs();
            used += 1;
        }
        if used == 0 {
            return Err(ModelError::MetricUndefined(format!(
                "monitor {} has no non-zero measurement",
                i + 1
            )));
        }
        per_monitor.push(100.0 * sum / used as f64);
        undefined_samples.push(m.len() - used);
    }
    Ok(MpeSummary {
        per_monitor,
        undefined_samples,
    })
}
