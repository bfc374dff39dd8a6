//! Probabilistic travel-time modeling for road networks from sparse probe-vehicle
//! traces.
//!
//! The library models each road link as a two-state (free-flow / congested) hidden
//! Markov process whose transition structure couples neighboring links, forming a
//! dynamic Bayesian network over the whole network. Congestion states are never
//! observed directly; the only data are vehicle trajectory records (a path plus the
//! time it took). The pieces fit together as follows:
//!
//! * [`network`] — road-network topology: links, ordered neighbor sets, and
//!   upstream/downstream role lists, plus second-order neighborhood augmentation
//!   for very short links.
//! * [`travel_time`] — Gaussian per-link travel-time observation model, exact
//!   path-level densities for partially traversed links, and a two-component
//!   mixture fitter for calibrating the observation model from samples.
//! * [`cpd`] — per-link transition models: a noisy-OR gate with one auxiliary
//!   cause variable per neighbor, and a saturation-pattern table indexed by the
//!   number of congested neighbors.
//! * [`params`] — the bundled parameter set (epoch length, observation model,
//!   transition model) and its text-file format.
//! * [`synth`] — forward simulation: hidden-state evolution, vehicle motion, the
//!   built-in 20-link two-loop benchmark, and trace-file I/O.
//! * [`filter`] — sequential importance resampling over joint network states,
//!   producing filtered marginals and the expected sufficient statistics needed
//!   for learning.
//! * [`em`] — Monte-Carlo expectation-maximization: particle-filter E-step,
//!   closed-form M-step, multi-day merging, and an optional exact likelihood
//!   monitor.
//! * [`predict`] — expected travel time for an arbitrary-length trip by
//!   segmenting the route into per-epoch chunks against a forecast of congestion
//!   marginals.
//! * [`oracle`] — exact inference on small networks (joint-state forward
//!   algorithm) and brute-force/Monte-Carlo reference implementations used to
//!   validate the scalable code paths.
//! * [`eval`] — held-out trip extraction and side-by-side model comparison.
//!
//! All randomized routines take explicit seeds and are bit-for-bit reproducible;
//! see [`rng`] for the substream derivation scheme.

pub mod bits;
pub mod cpd;
pub mod em;
pub mod error;
pub mod eval;
pub mod filter;
pub mod network;
pub mod oracle;
pub mod params;
pub mod predict;
pub mod rng;
pub mod synth;
pub mod travel_time;

pub use error::{Error, Result};
