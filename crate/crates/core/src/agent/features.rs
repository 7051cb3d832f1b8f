use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::RT_PRIORITY_MAX;
use crate::monitor::AppState;

/// Scaled contention components range over `[0, CONT_SCALE]`.
pub const CONT_SCALE: f64 = 10.0;

/// Observation length fed to the networks.
pub const FEATURE_DIM: usize = 10;

/// Min-max bounds used by [`preprocess`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationBounds {
    /// Per-window (cpu wait, nvcs, iTLB misses) lower and upper bounds.
    pub cont_min: [f64; 3],
    pub cont_max: [f64; 3],
    pub priority_max: f64,
    /// Upper bound for `a_id` and `a_other`.
    pub cores_max: f64,
    /// Upper bound for `p_low` and `p_high`.
    pub procs_max: f64,
}

impl CalibrationBounds {
    /// Bounds before any calibration run: generous contention maxima for a
    /// 5 s window on a small host.
    pub fn defaults(num_cores: usize) -> Self {
        CalibrationBounds {
            cont_min: [0.0; 3],
            cont_max: [5.0, 2000.0, 5.0e7],
            priority_max: RT_PRIORITY_MAX as f64,
            cores_max: num_cores.saturating_sub(1).max(1) as f64,
            procs_max: 21.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.cont_min[i] < self.cont_max[i]) || !self.cont_max[i].is_finite() {
                return Err(Error::invalid(format!(
                    "contention bound {i}: need min < max, got [{}, {}]",
                    self.cont_min[i], self.cont_max[i]
                )));
            }
        }
        for (name, v) in [
            ("priority_max", self.priority_max),
            ("cores_max", self.cores_max),
            ("procs_max", self.procs_max),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be > 0")));
            }
        }
        Ok(())
    }
}

/// Network input for one application.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Unit-norm contention direction, or zero.
    pub cont: [f64; 3],
    pub s_fair: f64,
    pub f_lock: f64,
    pub p_id: f64,
    pub a_id: f64,
    pub p_low: f64,
    pub p_high: f64,
    pub a_other: f64,
}

impl FeatureVector {
    pub fn to_array(&self) -> [f64; FEATURE_DIM] {
        [
            self.cont[0],
            self.cont[1],
            self.cont[2],
            self.s_fair,
            self.f_lock,
            self.p_id,
            self.a_id,
            self.p_low,
            self.p_high,
            self.a_other,
        ]
    }
}

fn unit(v: f64, max: f64) -> f64 {
    (v / max).clamp(0.0, 1.0)
}

/// Contention components clamped to the bounds and scaled to `[0, 10]`.
pub fn scale_contention(raw: &[f64; 3], b: &CalibrationBounds) -> Result<[f64; 3]> {
    let mut out = [0.0; 3];
    for i in 0..3 {
        if raw[i].is_nan() {
            return Err(Error::invalid("NaN contention component"));
        }
        let (lo, hi) = (b.cont_min[i], b.cont_max[i]);
        out[i] = (raw[i].clamp(lo, hi) - lo) / (hi - lo) * CONT_SCALE;
    }
    Ok(out)
}

pub fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn preprocess(state: &AppState, bounds: &CalibrationBounds) -> Result<FeatureVector> {
    if state.s_fair.is_nan() {
        return Err(Error::invalid("NaN fairness"));
    }
    let scaled = scale_contention(&state.s_cont, bounds)?;
    let norm = l2(&scaled);
    let cont = if norm > 0.0 {
        [scaled[0] / norm, scaled[1] / norm, scaled[2] / norm]
    } else {
        [0.0; 3]
    };
    Ok(FeatureVector {
        cont,
        s_fair: state.s_fair.clamp(0.0, 1.0),
        f_lock: if state.f_lock { 1.0 } else { 0.0 },
        p_id: unit(state.p_id as f64, bounds.priority_max),
        a_id: unit(state.a_id as f64, bounds.cores_max),
        p_low: unit(state.p_low as f64, bounds.procs_max),
        p_high: unit(state.p_high as f64, bounds.procs_max),
        a_other: unit(state.a_other as f64, bounds.cores_max),
    })
}
