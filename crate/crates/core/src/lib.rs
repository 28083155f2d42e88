//! Equilibria of one-dimensional aggregation-diffusion energies
//!
//! ```text
//! E[rho] = 1/2 ∫∫ K(x - y) rho(x) rho(y) + nu ∫ rho log rho + ∫ V rho
//! ```
//!
//! on an interval `[0, L]`, computed as fixed points of the Gibbs map
//! `rho -> exp(-(K*rho + V)/nu) / Z` with an energy-guarded relaxation.
//! Alongside the solver the crate ships closed-form truncated-Gaussian
//! solutions, residual diagnostics, a Monte-Carlo estimator of a domain's
//! effective volume dimension, and a set of named experiments.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod diagnostics;
pub mod energy;
pub mod error;
pub mod experiments;
pub mod geometry;
pub mod gibbs;
pub mod grid;
pub mod potentials;
pub mod solver;

pub use analytic::{exact_minimizer, solve_critical_shift, TruncatedGaussian};
pub use diagnostics::DiagnosticsReport;
pub use energy::{total_energy, EnergyBreakdown};
pub use error::{Error, Result};
pub use gibbs::{apply_t, fixed_point_residual, GibbsMap, GibbsState};
pub use grid::{make_grid, ConvolutionOperator, Density, Grid, SpacingMode};
pub use potentials::{ExternalPotential, InteractionKernel};
pub use solver::{solve, solve_with_continuation, ContinuationSchedule, SolveReport, SolverConfig};
