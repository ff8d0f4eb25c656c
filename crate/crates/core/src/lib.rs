//! Effective diffusivity of passive tracers in random incompressible flows.
//!
//! Tracers follow `dX = b(t, X) dt + σ dw` in a stationary, divergence-free
//! Gaussian-like random field built from Fourier modes with OU-decorrelated
//! amplitudes. Steps are Lie-Trotter compositions of a volume-preserving
//! map and an exact Brownian kick; ensembles of paths give
//! `D^E ≈ E[X ⊗ X] / 2t`.
//!
//! Modules:
//! - [`spectral_field`]: mode sampling, OU amplitudes, field evaluation.
//! - [`integrators`]: midpoint, mode-split, Euler-Maruyama steps.
//! - [`ensemble`]: reproducible parallel path ensembles and moment sums.
//! - [`analysis`]: diffusivity curves and the experiment drivers.
//! - [`config`], [`output`]: `key = value` configs, CSV, manifests.
//! - [`fieldcheck`]: statistical checks of the synthesized fields.

pub mod analysis;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod fieldcheck;
pub mod flow;
pub mod integrators;
pub mod linalg;
pub mod output;
pub mod rng;
pub mod spectral_field;
pub mod summation;

pub use analysis::{DecayCurve, DiffusivityCurve, Estimator, SlopeFit};
pub use ensemble::{ExperimentConfig, MomentAccumulator};
pub use error::{Error, Result};
pub use flow::{Flow, Velocity};
pub use integrators::{SchemeConfig, SchemeKind, StepRecord};
pub use spectral_field::{SpectralFlow, SpectralModeSet, VelocityField};
