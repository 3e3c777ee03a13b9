//! Synthetic ground truth, excitations and oracle datasets.
//!
//! # Random streams
//!
//! Every draw comes from ChaCha20 (`rand_chacha::ChaCha20Rng`) seeded with
//! `SeedableRng::seed_from_u64(seed)`, with the 64-bit stream id set to
//! `(purpose << 32) | row`. Purposes: 1 = excitation levels, 2 = truth
//! matrices, 3 = measurement noise. Uniform doubles are `(u64 >> 11) * 2^-53`;
//! Gaussian draws use Box–Muller, `sqrt(-2 ln(1 - u1)) * cos(2 pi u2)`, one
//! pair of uniforms per sample.
//!
//! # Excitation richness
//!
//! As a rule of thumb each source should change level at least
//! `2 * unknowns / N` times over the record for its couplings to be
//! identifiable. This is a heuristic, not a guarantee.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::model::{
    forward_naive, CouplingModel, ExcitationSeries, ModelError, TemperatureSeries, TimeGrid, TransientDataset,
    POSITIVITY_FLOOR,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum Purpose {
    Excitation = 1,
    Truth = 2,
    Noise = 3,
}

fn stream(seed: u64, purpose: Purpose, row: usize) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 32) | row as u64);
    rng
}

fn uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

fn gaussian(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    (-2.0 * (1.0 - u1).ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Pseudo-random piecewise-constant power profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSpec {
    pub duration: f64,
    pub sample_interval: f64,
    pub segment_count: usize,
    /// `[min, max]` watts.
    pub amplitude_range: [f64; 2],
    pub seed: u64,
}

impl ProfileSpec {
    fn validate(&self) -> Result<usize> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(SynthError::Spec(format!(
                "duration must be positive, got {}",
                self.duration
            )));
        }
        if !(self.sample_interval > 0.0 && self.sample_interval.is_finite()) {
            return Err(SynthError::Spec(format!(
                "sample interval must be positive, got {}",
                self.sample_interval
            )));
        }
        let [lo, hi] = self.amplitude_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(SynthError::Spec(format!("amplitude range [{lo}, {hi}] is invalid")));
        }
        let samples = (self.duration / self.sample_interval + 1e-9).floor() as usize + 1;
        if self.segment_count == 0 || self.segment_count > samples - 1 {
            return Err(SynthError::Spec(format!(
                "segment count {} must lie in 1..={} for {samples} samples",
                self.segment_count,
                samples - 1
            )));
        }
        Ok(samples)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        let samples = self.validate()?;
        Ok(TimeGrid::uniform(samples, self.sample_interval)?)
    }

    fn row(&self, samples: usize, source: usize) -> Vec<f64> {
        let mut rng = stream(self.seed, Purpose::Excitation, source);
        let [lo, hi] = self.amplitude_range;
        let s = self.segment_count;
        let mut row = vec![0.0; samples];
        for q in 0..s {
            let start = 1 + q * (samples - 1) / s;
            let end = 1 + (q + 1) * (samples - 1) / s;
            let level = uniform(&mut rng, lo, hi);
            row[start..end].fill(level);
        }
        row
    }
}

/// Uniform grid and one excitation row (source stream 0).
pub fn generate_profile(spec: &ProfileSpec) -> Result<(TimeGrid, Vec<f64>)> {
    let grid = spec.grid()?;
    let row = spec.row(grid.len(), 0);
    Ok((grid, row))
}

/// Uniform grid and `sources` independent rows; row `j` uses stream `j`.
pub fn generate_excitation(spec: &ProfileSpec, sources: usize) -> Result<(TimeGrid, ExcitationSeries)> {
    let grid = spec.grid()?;
    let rows = (0..sources).map(|j| spec.row(grid.len(), j)).collect();
    Ok((grid, ExcitationSeries::new(rows)?))
}

/// Ground-truth coupling model.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthSpec {
    pub monitors: usize,
    pub sources: usize,
    /// K/W range of self resistances.
    pub self_resistance_range: [f64; 2],
    /// Attenuation in `(0, 1]` of couplings away from the diagonal.
    pub coupling_decay: f64,
    /// 1/s range of the rate constants.
    pub rate_range: [f64; 2],
    pub symmetric: bool,
    pub target_rank: Option<usize>,
    pub t0: f64,
    pub seed: u64,
}

impl TruthSpec {
    pub fn new(monitors: usize, sources: usize, seed: u64) -> Self {
        Self {
            monitors,
            sources,
            self_resistance_range: [1.0, 5.0],
            coupling_decay: 0.3,
            rate_range: [0.01, 0.5],
            symmetric: false,
            target_rank: None,
            t0: 20.0,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let (m, n) = (self.monitors, self.sources);
        if m == 0 || n == 0 {
            return Err(SynthError::Spec("monitors and sources must be at least 1".into()));
        }
        for (name, [lo, hi]) in [
            ("self resistance", self.self_resistance_range),
            ("rate", self.rate_range),
        ] {
            if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                return Err(SynthError::Spec(format!("{name} range [{lo}, {hi}] must be positive")));
            }
        }
        if !(self.coupling_decay > 0.0 && self.coupling_decay <= 1.0) {
            return Err(SynthError::Spec(format!(
                "coupling decay {} must lie in (0, 1]",
                self.coupling_decay
            )));
        }
        if self.symmetric && m < n {
            return Err(SynthError::Spec(format!(
                "symmetric truth needs M >= N, got M = {m}, N = {n}"
            )));
        }
        if let Some(r) = self.target_rank {
            if r == 0 || r > m.min(n) {
                return Err(SynthError::Spec(format!(
                    "target rank {r} must lie in 1..={}",
                    m.min(n)
                )));
            }
        }
        if !self.t0.is_finite() {
            return Err(SynthError::Spec("T0 must be finite".into()));
        }
        Ok(())
    }
}

fn mirror_leading_block(mat: &mut DMatrix<f64>, n: usize) {
    for i in 0..n {
        for j in 0..i {
            mat[(i, j)] = mat[(j, i)];
        }
    }
}

/// Positive factor row of length `rank`: weight 1 on mode `row % rank`,
/// `decay` elsewhere, each jittered by a factor in `[0.5, 1]`, scaled by
/// `sqrt(scale)`.
fn factor_row(rng: &mut ChaCha20Rng, row: usize, rank: usize, decay: f64, scale: f64) -> Vec<f64> {
    (0..rank)
        .map(|q| {
            let weight = if q == row % rank { 1.0 } else { decay };
            scale.sqrt() * weight * uniform(rng, 0.5, 1.0)
        })
        .collect()
}

/// `A B^T` from positive factors; with `symmetric`, the first `N` rows of `A`
/// are the rows of `B`, so the leading block is `B B^T`.
fn positive_product(spec: &TruthSpec, rank: usize, range: [f64; 2], salt: usize) -> DMatrix<f64> {
    let (m, n) = (spec.monitors, spec.sources);
    let draw = |row: usize| {
        let mut rng = stream(spec.seed, Purpose::Truth, salt + row);
        let scale = uniform(&mut rng, range[0], range[1]);
        factor_row(&mut rng, row, rank, spec.coupling_decay, scale)
    };
    let b: Vec<Vec<f64>> = (0..n).map(|j| draw(m + j)).collect();
    let a: Vec<Vec<f64>> = (0..m)
        .map(|i| if spec.symmetric && i < n { b[i].clone() } else { draw(i) })
        .collect();
    DMatrix::from_fn(m, n, |i, j| {
        a[i].iter()
            .zip(&b[j])
            .map(|(x, y)| x * y)
            .sum::<f64>()
            .max(POSITIVITY_FLOOR)
    })
}

/// Diagonally weighted truth: `R_ii = base`, every other coupling (including
/// sink rows) `base * decay`, `K_ij` uniform in the rate range.
///
/// With `target_rank = r`, both matrices are instead products `A B^T` of
/// positive rank-`r` factors (mode weights 1 on the row's own mode and `decay`
/// on the others, row scales drawn from the same ranges), so they are exactly
/// rank `r`, strictly positive, and symmetric in the leading block when
/// `symmetric` is set. Entries then only approximately respect the ranges.
/// With `symmetric`, the leading `N x N` blocks are mirrored from their upper
/// triangles last, so symmetry is bitwise exact.
pub fn generate_truth(spec: &TruthSpec) -> Result<CouplingModel> {
    spec.validate()?;
    let (m, n) = (spec.monitors, spec.sources);
    let (mut r, mut k) = match spec.target_rank {
        Some(rank) => (
            positive_product(spec, rank, spec.self_resistance_range, 0),
            positive_product(spec, rank, spec.rate_range, m + n),
        ),
        None => {
            let mut r = DMatrix::zeros(m, n);
            let mut k = DMatrix::zeros(m, n);
            for i in 0..m {
                let mut rng = stream(spec.seed, Purpose::Truth, i);
                for j in 0..n {
                    let [lo, hi] = spec.self_resistance_range;
                    let base = uniform(&mut rng, lo, hi);
                    let attenuation = if i == j { 1.0 } else { spec.coupling_decay };
                    r[(i, j)] = base * attenuation;
                    let [lo, hi] = spec.rate_range;
                    k[(i, j)] = uniform(&mut rng, lo, hi);
                }
            }
            (r, k)
        }
    };
    if spec.symmetric {
        mirror_leading_block(&mut r, n);
        mirror_leading_block(&mut k, n);
    }
    Ok(CouplingModel::new(r, k, spec.t0)?)
}

/// Oracle temperatures of `model` under `powers`, evaluated with the naive
/// forward model, with optional multiplicative Gaussian noise on the rise
/// `T - T0`. The first `min(M, N)` monitors are declared co-located.
pub fn synthesize_dataset(
    model: &CouplingModel,
    powers: &ExcitationSeries,
    grid: &TimeGrid,
    noise_rel: f64,
    seed: u64,
) -> Result<TransientDataset> {
    if !(noise_rel >= 0.0 && noise_rel.is_finite()) {
        return Err(SynthError::Spec(format!(
            "noise level {noise_rel} must be non-negative"
        )));
    }
    if model.source_count() != powers.source_count() {
        return Err(ModelError::Dimension(format!(
            "model has {} sources, excitation has {}",
            model.source_count(),
            powers.source_count()
        ))
        .into());
    }
    let t0 = model.t0();
    let mut rows = Vec::with_capacity(model.monitor_count());
    for i in 0..model.monitor_count() {
        let mut row = forward_naive(powers, grid, &model.r_row(i), &model.k_row(i), t0)?;
        if noise_rel > 0.0 {
            let mut rng = stream(seed, Purpose::Noise, i);
            for v in row.iter_mut() {
                let z = gaussian(&mut rng);
                *v = t0 + (*v - t0) * (1.0 + noise_rel * z);
            }
        }
        rows.push(row);
    }
    let colocated = model.monitor_count().min(model.source_count());
    Ok(TransientDataset::new(
        grid.clone(),
        powers.clone(),
        TemperatureSeries::new(rows)?,
        t0,
        colocated,
    )?)
}
