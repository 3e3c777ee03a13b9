//! Identification of lumped-parameter linear-superposition thermal models
//! from a single transient dataset, and prediction with the identified model.
//!
//! The crate is organised bottom-up:
//!
//! - [`model`]: domain types and the forward step-superposition model.
//! - [`solver`]: bounded Levenberg–Marquardt with finite-difference Jacobians.
//! - [`estimation`]: the Full, Symmetric, LowRank and TwoStage fits, plus rank selection.
//! - [`synth`]: reproducible synthetic truths, excitations and datasets.
//! - [`dataio`]: CSV datasets, JSON models and SVG validation plots.
//! - [`cli`]: the `lplsp` command-line front end.

pub mod cli;
pub mod dataio;
pub mod estimation;
pub mod model;
pub mod solver;
pub mod synth;

pub use estimation::{fit, fit_two_stage, FitReport};
pub use model::{CouplingModel, ExcitationSeries, Parameterization, TemperatureSeries, TimeGrid, TransientDataset};
pub use solver::{SolverOptions, SolverResult};
