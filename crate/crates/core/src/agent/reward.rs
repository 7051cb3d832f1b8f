use serde::{Deserialize, Serialize};

use super::action::Resolved;
use super::features::{l2, scale_contention, CalibrationBounds, CONT_SCALE};
use crate::error::{Error, Result};
use crate::host::{RT_PRIORITY_MAX, RT_PRIORITY_MIN};
use crate::monitor::AppState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Weight of the fairness term.
    pub a: f64,
    /// Weight of the contention term.
    pub b: f64,
    /// Penalty for an out-of-range policy.
    pub c: f64,
    /// Fairness below or at this earns nothing.
    pub tau: f64,
    pub p_min: i64,
    pub p_max: i64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            a: 1000.0,
            b: 100.0,
            c: 1000.0,
            tau: 0.75,
            p_min: RT_PRIORITY_MIN as i64,
            p_max: RT_PRIORITY_MAX as i64,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.c > 0.0) {
            return Err(Error::invalid("reward weights a, b, c must be > 0"));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::invalid("tau must be in (0, 1)"));
        }
        if self.p_min >= self.p_max {
            return Err(Error::invalid("p_min must be < p_max"));
        }
        Ok(())
    }
}

/// Contention magnitude in `[0, 1]`: norm of the scaled vector over its maximum.
pub fn r_cont(s_cont: &[f64; 3], bounds: &CalibrationBounds) -> Result<f64> {
    let scaled = scale_contention(s_cont, bounds)?;
    Ok(l2(&scaled) / (CONT_SCALE * 3f64.sqrt()))
}

/// Whether the attempted totals fall outside the legal range.
pub fn out_of_range(attempt: &Resolved, num_cores: usize, cfg: &RewardConfig) -> bool {
    let cores = attempt.a_used.is_some_and(|a| a > num_cores as i64);
    let prio = attempt
        .p_used
        .is_some_and(|p| p > cfg.p_max || p < cfg.p_min);
    cores || prio
}

/// `a * R_fair - b * R_cont`, with `R_fair = s_fair` above `tau` and 0 otherwise.
pub fn reward_terms(s_fair: f64, r_cont: f64, cfg: &RewardConfig) -> f64 {
    let r_fair = if s_fair > cfg.tau { s_fair } else { 0.0 };
    cfg.a * r_fair - cfg.b * r_cont
}

pub fn reward(
    state_after: &AppState,
    attempt: &Resolved,
    num_cores: usize,
    cfg: &RewardConfig,
    bounds: &CalibrationBounds,
) -> Result<f64> {
    if out_of_range(attempt, num_cores, cfg) {
        return Ok(-cfg.c);
    }
    Ok(reward_terms(state_after.s_fair, r_cont(&state_after.s_cont, bounds)?, cfg))
}

/// One-step temporal-difference error `r + gamma * v_next - v`.
pub fn td_error(r: f64, v_s: f64, v_s_next: f64, gamma: f64) -> f64 {
    r + gamma * v_s_next - v_s
}
