//! Per-client, per-round impact factors.
//!
//! Every round carries one impact factor per client; the factors of a round
//! are nonnegative, at most 1, and sum to 1. A schedule is either *fixed*
//! (the same row every round) or *piecewise* (rows change at segment
//! boundaries). The round-to-round changes `alpha_i = p_i(t+1) - p_i(t)`
//! always sum to zero, so a schedule can be reconstructed from its first row
//! and its deltas.
//!
//! Validation rejects out-of-tolerance rows instead of renormalizing them,
//! so misconfigured impact lists surface as errors rather than silently
//! shifting weight between clients.

use crate::error::{Error, Result};
use crate::IMPACT_SUM_TOLERANCE;
use serde::{Deserialize, Serialize};

/// Check that `impacts` is a valid impact row: every entry in [0, 1] and the
/// sum within [`IMPACT_SUM_TOLERANCE`] of 1. `round` is only used to label
/// errors.
pub fn validate_impacts(impacts: &[f64], round: Option<usize>) -> Result<()> {
    if impacts.is_empty() {
        return Err(Error::InvalidParameter {
            name: "impacts",
            message: "impact list is empty".into(),
        });
    }
    for (client, &p) in impacts.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(Error::ImpactOutOfRange {
                round,
                client,
                value: p,
            });
        }
    }
    let sum: f64 = impacts.iter().sum();
    if (sum - 1.0).abs() > IMPACT_SUM_TOLERANCE {
        return Err(Error::ImpactSumMismatch { round, sum });
    }
    Ok(())
}

/// A dense `rounds x clients` matrix of impact factors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactSchedule {
    num_clients: usize,
    num_rounds: usize,
    /// Row-major factors; entry `(t, i)` is the impact of client `i` in the
    /// aggregation of round `t`.
    factors: Vec<f64>,
}

impl ImpactSchedule {
    /// Schedule that repeats `impacts` for every one of `num_rounds` rounds.
    pub fn fixed(impacts: &[f64], num_rounds: usize) -> Result<Self> {
        if num_rounds == 0 {
            return Err(Error::InvalidParameter {
                name: "num_rounds",
                message: "schedule needs at least one round".into(),
            });
        }
        validate_impacts(impacts, None)?;
        let mut factors = Vec::with_capacity(impacts.len() * num_rounds);
        for _ in 0..num_rounds {
            factors.extend_from_slice(impacts);
        }
        Ok(Self {
            num_clients: impacts.len(),
            num_rounds,
            factors,
        })
    }

    /// Schedule assembled from `(start_round, impacts)` segments. Segments
    /// must start at round 0, be strictly ordered, and all fit inside
    /// `num_rounds`; each segment runs until the next one begins.
    pub fn piecewise(segments: &[(usize, Vec<f64>)], num_rounds: usize) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::InvalidSegments("no segments given".into()));
        }
        if segments[0].0 != 0 {
            return Err(Error::InvalidSegments(format!(
                "first segment starts at round {}, expected 0",
                segments[0].0
            )));
        }
        let num_clients = segments[0].1.len();
        let mut factors = Vec::with_capacity(num_clients * num_rounds);
        for (idx, (start, impacts)) in segments.iter().enumerate() {
            if impacts.len() != num_clients {
                return Err(Error::DimensionMismatch {
                    what: "segment impacts",
                    expected: num_clients,
                    actual: impacts.len(),
                });
            }
            let end = segments
                .get(idx + 1)
                .map(|(next, _)| *next)
                .unwrap_or(num_rounds);
            if end <= *start || end > num_rounds {
                return Err(Error::InvalidSegments(format!(
                    "segment {idx} covers rounds {start}..{end} in a {num_rounds}-round schedule"
                )));
            }
            validate_impacts(impacts, Some(*start))?;
            for _ in *start..end {
                factors.extend_from_slice(impacts);
            }
        }
        Ok(Self {
            num_clients,
            num_rounds,
            factors,
        })
    }

    pub fn num_clients(&self) -> usize {
        self.num_clients
    }

    pub fn num_rounds(&self) -> usize {
        self.num_rounds
    }

    /// Impact row used in the aggregation of round `t` (0-based).
    pub fn row(&self, round: usize) -> &[f64] {
        let start = round * self.num_clients;
        &self.factors[start..start + self.num_clients]
    }

    /// Per-client deltas `alpha_i(t) = p_i(t+1) - p_i(t)`.
    pub fn deltas(&self, round: usize) -> Result<Vec<f64>> {
        if round + 1 >= self.num_rounds {
            return Err(Error::RoundOutOfRange {
                round,
                rounds: self.num_rounds,
            });
        }
        let cur = self.row(round);
        let next = self.row(round + 1);
        Ok(next.iter().zip(cur).map(|(n, c)| n - c).collect())
    }

    /// Largest factor anywhere in the schedule.
    pub fn max_factor(&self) -> f64 {
        self.factors.iter().cloned().fold(0.0, f64::max)
    }

    /// Smallest per-round sum of squared factors across the schedule.
    pub fn min_sum_sq(&self) -> f64 {
        (0..self.num_rounds)
            .map(|t| self.row(t).iter().map(|p| p * p).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}
