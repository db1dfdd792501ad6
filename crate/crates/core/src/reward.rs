//! Trajectory rewards and the per-step progress coefficient.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Success threshold in meters.
    pub epsilon: f64,
    /// Weight of the path-efficiency term.
    pub alpha: f64,
}

impl RewardConfig {
    pub fn new(epsilon: f64, alpha: f64) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::param("epsilon", "must be finite and positive"));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::param("alpha", "must be finite and non-negative"));
        }
        Ok(RewardConfig { epsilon, alpha })
    }
}

/// Gaussian-shaped success reward, zero at or beyond the threshold.
pub fn nav_success_reward(d_k: f64, epsilon: f64) -> f64 {
    if d_k < epsilon {
        (-(d_k * d_k) / (2.0 * epsilon * epsilon)).exp()
    } else {
        0.0
    }
}

/// Relative excess path length as a non-positive penalty.
pub fn path_efficiency_reward(l_k: f64, l_star: f64) -> f64 {
    -(l_k - l_star).max(0.0) / l_star
}

pub fn trajectory_reward(d_k: f64, l_k: f64, l_star: f64, cfg: &RewardConfig) -> f64 {
    nav_success_reward(d_k, cfg.epsilon) + cfg.alpha * path_efficiency_reward(l_k, l_star)
}

/// Sign of an advantage as -1, 0 or +1.
pub fn advantage_sign(advantage: f64) -> i8 {
    if advantage > 0.0 {
        1
    } else if advantage < 0.0 {
        -1
    } else {
        0
    }
}

/// `1 + sign(Â)·(d_prev − d_curr)/L*`
pub fn progress_coefficient(d_prev: f64, d_curr: f64, l_star: f64, sign: i8) -> f64 {
    1.0 + f64::from(sign) * (d_prev - d_curr) / l_star
}
