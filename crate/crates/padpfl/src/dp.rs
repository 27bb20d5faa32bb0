//! Gaussian-mechanism calibration for the federation.
//!
//! The privacy budget is (ε, δ). Client updates are clipped to norm `B` and
//! uploaded at most `R` times over `T` aggregation rounds, so the client-side
//! noise standard deviation is
//!
//! ```text
//! sigma_C = 2 B R c / (min{m_i} eps),   c = sqrt(2 ln(1.25/delta))
//! ```
//!
//! with `m_i` the local dataset sizes. The server broadcasts `T` times and
//! must deliver a total per-coordinate standard deviation of
//!
//! ```text
//! sigma_A = 2 B T c max{p_i} / (min{m_i} eps)
//! ```
//!
//! against downlink exposure, where `p_i` are the client impact factors.
//! Since the aggregated client noises already contribute the variance
//! `sigma_AC^2 = sigma_C^2 sum p_i^2`, the server only adds the difference:
//! `sigma_S^2 = sigma_A^2 - sigma_AC^2` when that is positive, otherwise no
//! server noise is needed. All quantities are pure functions of the inputs
//! and safe to evaluate concurrently.

use crate::error::{Error, Result};
use crate::schedule::{validate_impacts, ImpactSchedule};
use serde::{Deserialize, Serialize};

/// Privacy budget and the run geometry it is calibrated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyParams {
    /// Privacy budget ε.
    pub epsilon: f64,
    /// Failure probability δ, in (0, 1).
    pub delta: f64,
    /// Norm bound B applied to client weights before upload.
    pub clip_bound: f64,
    /// Maximum number of uplink exposures R.
    pub revelations: u32,
    /// Number of aggregation rounds T.
    pub rounds: u32,
    /// Local dataset sizes, one per client.
    pub dataset_sizes: Vec<usize>,
}

impl PrivacyParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, message: String| Err(Error::InvalidParameter { name, message });
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad("epsilon", format!("must be positive, got {}", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", format!("must lie in (0, 1), got {}", self.delta));
        }
        if !(self.clip_bound > 0.0) || !self.clip_bound.is_finite() {
            return bad("clip_bound", format!("must be positive, got {}", self.clip_bound));
        }
        if self.revelations == 0 {
            return bad("revelations", "must be at least 1".into());
        }
        if self.rounds == 0 {
            return bad("rounds", "must be at least 1".into());
        }
        if self.revelations > self.rounds {
            return bad(
                "revelations",
                format!("{} exceeds the {} rounds", self.revelations, self.rounds),
            );
        }
        if self.dataset_sizes.is_empty() {
            return bad("dataset_sizes", "no clients given".into());
        }
        if let Some(i) = self.dataset_sizes.iter().position(|&m| m == 0) {
            return bad("dataset_sizes", format!("client {i} has an empty dataset"));
        }
        Ok(())
    }

    pub fn min_dataset_size(&self) -> usize {
        *self.dataset_sizes.iter().min().expect("validated nonempty")
    }

    pub fn max_dataset_size(&self) -> usize {
        *self.dataset_sizes.iter().max().expect("validated nonempty")
    }
}

/// The noise standard deviations derived from a [`PrivacyParams`] and a set
/// of impact factors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    /// Gaussian mechanism constant c.
    pub gauss_const: f64,
    /// Per-coordinate SD of the noise every client adds before upload.
    pub client_sigma: f64,
    /// Per-coordinate SD of the extra noise the server adds after
    /// aggregation (zero when the aggregated client noise already suffices).
    pub server_sigma: f64,
    /// Variance of the impact-weighted sum of client noises.
    pub agg_client_variance: f64,
    /// Per-coordinate SD required against full downlink exposure.
    pub total_sigma: f64,
}

impl NoiseCalibration {
    /// Calibrate against a single impact row used in every round.
    pub fn compute(params: &PrivacyParams, impacts: &[f64]) -> Result<Self> {
        params.validate()?;
        validate_impacts(impacts, None)?;
        let max_p = impacts.iter().cloned().fold(0.0, f64::max);
        let sum_sq = impacts.iter().map(|p| p * p).sum::<f64>();
        Ok(Self::from_extrema(params, max_p, sum_sq))
    }

    /// Calibrate once for a whole schedule. Noise is drawn from a single
    /// calibration for every round, so the schedule is reduced to its most
    /// demanding extremes: the largest factor anywhere (driving the required
    /// total) and the smallest per-round sum of squares (the least client
    /// noise any aggregation is guaranteed to carry).
    pub fn for_schedule(params: &PrivacyParams, schedule: &ImpactSchedule) -> Result<Self> {
        params.validate()?;
        Ok(Self::from_extrema(
            params,
            schedule.max_factor(),
            schedule.min_sum_sq(),
        ))
    }

    fn from_extrema(params: &PrivacyParams, max_p: f64, sum_sq: f64) -> Self {
        let c = gauss_constant(params.delta).expect("delta validated");
        let client_sigma = client_noise_sigma_unchecked(params, c);
        let agg_client_variance = client_sigma * client_sigma * sum_sq;
        let t = f64::from(params.rounds);
        let r = f64::from(params.revelations);
        let total_sigma = 2.0 * params.clip_bound * t * c * max_p
            / (params.min_dataset_size() as f64 * params.epsilon);
        let server_sigma = if t * max_p > r * sum_sq.sqrt() {
            let under_root = t * t * max_p * max_p - r * r * sum_sq;
            2.0 * params.clip_bound * c * under_root.sqrt()
                / (params.min_dataset_size() as f64 * params.epsilon)
        } else {
            0.0
        };
        Self {
            gauss_const: c,
            client_sigma,
            server_sigma,
            agg_client_variance,
            total_sigma,
        }
    }

    /// Calibration with all noise switched off (non-private runs).
    pub fn silent() -> Self {
        Self {
            gauss_const: 0.0,
            client_sigma: 0.0,
            server_sigma: 0.0,
            agg_client_variance: 0.0,
            total_sigma: 0.0,
        }
    }
}

/// The minimal admissible Gaussian mechanism constant
/// `c = sqrt(2 ln(1.25/delta))`.
pub fn gauss_constant(delta: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "delta",
            message: format!("must lie in (0, 1), got {delta}"),
        });
    }
    Ok((2.0 * (1.25 / delta).ln()).sqrt())
}

/// L2 sensitivity `2 B / m_i` of one client's model under a one-sample
/// dataset change.
pub fn client_sensitivity(clip_bound: f64, dataset_size: usize) -> Result<f64> {
    if !(clip_bound > 0.0) {
        return Err(Error::InvalidParameter {
            name: "clip_bound",
            message: format!("must be positive, got {clip_bound}"),
        });
    }
    if dataset_size == 0 {
        return Err(Error::InvalidParameter {
            name: "dataset_size",
            message: "must be at least 1".into(),
        });
    }
    Ok(2.0 * clip_bound / dataset_size as f64)
}

/// Client-side noise SD `2 B R c / (min{m_i} eps)`, identical for all
/// clients.
pub fn client_noise_sigma(params: &PrivacyParams) -> Result<f64> {
    params.validate()?;
    let c = gauss_constant(params.delta)?;
    Ok(client_noise_sigma_unchecked(params, c))
}

fn client_noise_sigma_unchecked(params: &PrivacyParams, c: f64) -> f64 {
    2.0 * params.clip_bound * f64::from(params.revelations) * c
        / (params.min_dataset_size() as f64 * params.epsilon)
}

/// Server-side noise SD: the shortfall between the required total SD and the
/// aggregated client noise, or zero when the clients already cover it.
pub fn server_noise_sigma(params: &PrivacyParams, impacts: &[f64]) -> Result<f64> {
    Ok(NoiseCalibration::compute(params, impacts)?.server_sigma)
}

/// Variance of `sum_i p_i n_i` for independent zero-mean client noises with
/// common SD `client_sigma`.
pub fn aggregated_client_variance(client_sigma: f64, impacts: &[f64]) -> Result<f64> {
    if !(client_sigma > 0.0) {
        return Err(Error::InvalidParameter {
            name: "client_sigma",
            message: format!("must be positive, got {client_sigma}"),
        });
    }
    validate_impacts(impacts, None)?;
    Ok(client_sigma * client_sigma * impacts.iter().map(|p| p * p).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn base_params() -> PrivacyParams {
        PrivacyParams {
            epsilon: 5.0,
            delta: 0.01,
            clip_bound: 1.0,
            revelations: 1,
            rounds: 30,
            dataset_sizes: vec![50; 60],
        }
    }

    fn scenario1_impacts() -> Vec<f64> {
        let mut v = vec![0.0; 20];
        v.extend(std::iter::repeat(1.0 / 60.0).take(20));
        v.extend(std::iter::repeat(1.0 / 30.0).take(20));
        v
    }

    #[test]
    fn gauss_constant_matches_closed_form() {
        // delta chosen so ln(1.25/delta) = 0.5, hence c = 1 exactly
        let delta = 1.25 * (-0.5f64).exp();
        assert_relative_eq!(gauss_constant(delta).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            gauss_constant(0.01).unwrap(),
            3.1075114600922396,
            epsilon = 1e-12
        );
        assert_relative_eq!(
            gauss_constant(0.5).unwrap(),
            1.3537287260556712,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gauss_constant_rejects_bad_delta() {
        assert!(gauss_constant(0.0).is_err());
        assert!(gauss_constant(1.0).is_err());
        assert!(gauss_constant(1.25).is_err());
        assert!(gauss_constant(-0.3).is_err());
    }

    #[test]
    fn client_sensitivity_values() {
        assert_eq!(client_sensitivity(1.0, 1).unwrap(), 2.0);
        assert_relative_eq!(client_sensitivity(1.0, 50).unwrap(), 0.04, epsilon = 1e-15);
        assert_relative_eq!(
            client_sensitivity(0.5, 150).unwrap(),
            1.0 / 150.0,
            epsilon = 1e-15
        );
        assert!(client_sensitivity(1.0, 0).is_err());
        assert!(client_sensitivity(0.0, 5).is_err());
    }

    #[test]
    fn client_noise_sigma_values() {
        let params = base_params();
        assert_relative_eq!(
            client_noise_sigma(&params).unwrap(),
            0.024860091680737915,
            epsilon = 1e-12
        );
        // all factors cancel: c = 1, B = R = eps = 1, min m = 2 gives sigma = 1
        let unit = PrivacyParams {
            epsilon: 1.0,
            delta: 1.25 * (-0.5f64).exp(),
            clip_bound: 1.0,
            revelations: 1,
            rounds: 1,
            dataset_sizes: vec![2, 5],
        };
        assert_relative_eq!(client_noise_sigma(&unit).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn doubling_epsilon_halves_client_sigma() {
        let mut params = base_params();
        let low = client_noise_sigma(&params).unwrap();
        params.epsilon = 10.0;
        let high = client_noise_sigma(&params).unwrap();
        assert_relative_eq!(low / high, 2.0, epsilon = 1e-12);
        assert_relative_eq!(high, 0.012430045840368957, epsilon = 1e-12);
    }

    #[test]
    fn server_sigma_inactive_branch() {
        let mut params = base_params();
        params.rounds = 1;
        params.revelations = 1;
        // threshold R sqrt(sum p^2)/max p = sqrt(60) > 1, so no server noise
        let impacts = vec![1.0 / 60.0; 60];
        assert_eq!(server_noise_sigma(&params, &impacts).unwrap(), 0.0);
    }

    #[test]
    fn server_sigma_identical_impacts() {
        let params = base_params();
        let impacts = vec![1.0 / 60.0; 60];
        assert_relative_eq!(
            server_noise_sigma(&params, &impacts).unwrap(),
            0.012008565149679433,
            epsilon = 1e-12
        );
    }

    #[test]
    fn server_sigma_scenario1_impacts() {
        let mut params = base_params();
        params.dataset_sizes = vec![150; 60];
        assert_relative_eq!(
            server_noise_sigma(&params, &scenario1_impacts()).unwrap(),
            0.008170793655467586,
            epsilon = 1e-12
        );
    }

    #[test]
    fn server_sigma_rejects_all_zero_impacts() {
        let params = base_params();
        assert!(server_noise_sigma(&params, &vec![0.0; 60]).is_err());
    }

    #[test]
    fn aggregated_variance_values() {
        assert_relative_eq!(
            aggregated_client_variance(0.3, &[1.0]).unwrap(),
            0.09,
            epsilon = 1e-15
        );
        let uniform = vec![1.0 / 60.0; 60];
        assert_relative_eq!(
            aggregated_client_variance(0.3, &uniform).unwrap(),
            0.09 / 60.0,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            aggregated_client_variance(0.0249, &scenario1_impacts()).unwrap(),
            1.7222499999999996e-5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn variance_decomposition_identity() {
        let mut params = base_params();
        params.dataset_sizes = vec![150; 60];
        let cal = NoiseCalibration::compute(&params, &scenario1_impacts()).unwrap();
        assert!(cal.server_sigma > 0.0);
        let recomposed = cal.server_sigma * cal.server_sigma + cal.agg_client_variance;
        assert_relative_eq!(
            recomposed,
            cal.total_sigma * cal.total_sigma,
            max_relative = 1e-9
        );
    }

    #[test]
    fn branch_is_continuous_at_threshold() {
        // pick T exactly at R sqrt(sum p^2)/max p: the root hits 0
        let impacts = vec![0.25; 4];
        let sum_sq: f64 = 4.0 * 0.25 * 0.25;
        let threshold = (sum_sq.sqrt() / 0.25) as u32; // = 2
        let mut params = base_params();
        params.dataset_sizes = vec![50; 4];
        params.rounds = threshold;
        params.revelations = 1;
        let at = NoiseCalibration::compute(&params, &impacts).unwrap();
        assert_eq!(at.server_sigma, 0.0);
        params.rounds = threshold + 1;
        let above = NoiseCalibration::compute(&params, &impacts).unwrap();
        assert!(above.server_sigma > 0.0);
        // just above the threshold the SD is still tiny
        let t = f64::from(threshold);
        let eps_t = 1e-6;
        let under_root = (t + eps_t) * (t + eps_t) * 0.25 * 0.25 - sum_sq;
        assert!(under_root.sqrt() < 1e-2);
    }

    #[test]
    fn schedule_calibration_uses_conservative_extremes() {
        let mut params = base_params();
        params.dataset_sizes = vec![150; 60];
        let early = scenario1_impacts();
        let late: Vec<f64> = early.iter().rev().cloned().collect();
        let schedule =
            crate::schedule::ImpactSchedule::piecewise(&[(0, early.clone()), (10, late)], 30)
                .unwrap();
        let from_schedule = NoiseCalibration::for_schedule(&params, &schedule).unwrap();
        let fixed = NoiseCalibration::compute(&params, &early).unwrap();
        // both segments share the same extremes here, so the results agree
        assert_relative_eq!(
            from_schedule.server_sigma,
            fixed.server_sigma,
            epsilon = 1e-15
        );
        assert_relative_eq!(
            from_schedule.total_sigma,
            fixed.total_sigma,
            epsilon = 1e-15
        );
    }

    #[test]
    fn sigmas_monotone_in_epsilon_and_dataset_size() {
        let mut params = base_params();
        let impacts = scenario1_impacts();
        let s1 = NoiseCalibration::compute(&params, &impacts).unwrap();
        params.epsilon = 20.0;
        let s2 = NoiseCalibration::compute(&params, &impacts).unwrap();
        assert!(s2.client_sigma < s1.client_sigma);
        assert!(s2.server_sigma < s1.server_sigma);
        params.dataset_sizes = vec![500; 60];
        let s3 = NoiseCalibration::compute(&params, &impacts).unwrap();
        assert!(s3.client_sigma < s2.client_sigma);
        assert!(s3.server_sigma < s2.server_sigma);
    }
}
