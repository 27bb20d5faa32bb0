//! Federated learning with priority-based aggregation and differential privacy.
//!
//! This crate simulates a federation in which every client carries a
//! *relative impact factor* `p_i` (rows of impacts sum to 1), local models
//! are trained with a proximal term against the broadcast global model, and
//! (ε, δ)-differential privacy is enforced by calibrated Gaussian noise on
//! both the uplink (client-side) and the downlink (server-side). A companion
//! analysis module evaluates convergence upper bounds for fixed and adaptive
//! impact schedules, either from user-supplied constants or from quantities
//! estimated during a run.
//!
//! The main pieces:
//!
//! - [`dp`] — Gaussian mechanism constant, sensitivities, client/server
//!   noise standard deviations, and the variance decomposition tying them
//!   together.
//! - [`schedule`] — per-round, per-client impact factors: fixed, piecewise,
//!   and their round-to-round deltas.
//! - [`model`] — a one-hidden-layer MLP with plain SGD, proximal gradient,
//!   weight clipping, and loss/gradient evaluation.
//! - [`data`] — MNIST IDX ingestion, non-identical partitioning,
//!   salt-and-pepper corruption, and a synthetic digit generator for
//!   self-contained runs.
//! - [`federation`] — the round loop: broadcast, parallel local training,
//!   clip, noise, weighted aggregation, metrics.
//! - [`bounds`] — dissimilarity measures, per-iteration increment
//!   coefficients, expected noise norms, and the convergence upper bound.
//! - [`config`] — scenario configuration, validation, and the four built-in
//!   scenario presets.
//! - [`output`] — CSV metric export and dependency-free SVG line charts.
//!
//! Start with the runnable programs under `examples/`; each one exercises a
//! single capability end to end.

pub mod bounds;
pub mod config;
pub mod data;
pub mod dp;
pub mod error;
pub mod federation;
pub mod model;
pub mod output;
pub mod schedule;

pub use error::{Error, Result};

/// Absolute tolerance used everywhere a list of impact factors must sum to 1.
pub const IMPACT_SUM_TOLERANCE: f64 = 1e-9;
