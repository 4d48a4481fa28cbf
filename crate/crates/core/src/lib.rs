//! Combination of quantile-format forecasts from an ensemble of models.
//!
//! The crate provides the building blocks of a forecast-combination pipeline:
//!
//! * [`model`] — domain types (quantile forecasts, deliveries, observations,
//!   training windows) and [`io`] for the CSV interchange formats.
//! * [`scoring`] — negatively oriented proper scoring rules (log score, CRPS,
//!   quantile/pinball score, interval score).
//! * [`distfit`] — reconstruction of continuous predictive distributions from
//!   reported quantiles (skew-normal fits, piecewise-linear fallbacks) and
//!   quantile extraction from weighted mixtures.
//! * [`pso`] — a seeded, box-constrained particle swarm minimizer used by all
//!   fitting routines.
//! * [`stacking`] — mixture combinations: equal, decayed reciprocal-score,
//!   time-varying, normalized-score, and score-optimized weights.
//! * [`regression`] — regression combiners: EMOS+ (Gaussian, CRPS-fitted),
//!   QRA (quantile regression averaging), and SQRA (shift-corrected QRA).
//! * [`evaluation`] — sharpness/bias/calibration metrics, interval-score
//!   aggregation, and best-method selection.
//! * [`synthetic`] — seeded generator of ground-truth series and forecaster
//!   archetypes for desk-scale verification.

pub mod distfit;
pub mod error;
mod gauss;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod pso;
pub mod regression;
pub mod scoring;
pub mod stacking;
pub mod synthetic;

pub use error::{Error, Result};
