use serde::{Deserialize, Serialize};

use super::itlb::ItlbModel;
use crate::error::{Error, Result};

/// Scheduler timing. SCHED_OTHER is approximated by weighted fair sharing on
/// accumulated runtime with a fixed tick.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedTiming {
    pub rr_slice: f64,
    pub other_tick: f64,
    /// A waking OTHER task preempts a running one only if the runner is ahead
    /// in virtual runtime by more than this.
    pub wakeup_granularity: f64,
    /// Sleepers rejoin at `min_vruntime - sleeper_credit`.
    pub sleeper_credit: f64,
}

impl Default for SchedTiming {
    fn default() -> Self {
        Self {
            rr_slice: 0.100,
            other_tick: 0.010,
            wakeup_granularity: 0.001,
            sleeper_credit: 0.003,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterferenceConfig {
    pub itlb: ItlbModel,
    /// Shim and auxiliary processes wake for `helper_burst` at request start and finish.
    pub helpers: bool,
    pub helper_burst: f64,
    pub futex: bool,
    /// Fraction of a lock-using request's demand executed under the lock.
    pub lock_fraction: f64,
    /// Background daemons: count, Poisson wake rate each, mean burst length.
    pub daemons: usize,
    pub daemon_rate: f64,
    pub daemon_burst: f64,
    pub daemon_footprint: f64,
}

impl Default for InterferenceConfig {
    fn default() -> Self {
        Self {
            itlb: ItlbModel::default(),
            helpers: true,
            helper_burst: 1e-4,
            futex: true,
            lock_fraction: 0.3,
            daemons: 6,
            daemon_rate: 25.0,
            daemon_burst: 0.004,
            daemon_footprint: 1500.0,
        }
    }
}

impl InterferenceConfig {
    /// Every interference source switched off.
    pub fn none() -> Self {
        Self {
            itlb: ItlbModel {
                enabled: false,
                ..ItlbModel::default()
            },
            helpers: false,
            futex: false,
            daemons: 0,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoscaleConfig {
    pub enabled: bool,
    pub rho_target: f64,
    pub cold_start: f64,
    /// Arrival-rate estimation span in seconds.
    pub observe_span: f64,
    /// Relative band around the target that does not trigger a resize.
    pub hysteresis: f64,
    pub max_processes_per_app: usize,
}

impl Default for AutoscaleConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rho_target: 0.9,
            cold_start: 0.5,
            observe_span: 60.0,
            hysteresis: 0.1,
            max_processes_per_app: 7,
        }
    }
}

impl AutoscaleConfig {
    pub fn max_sandboxes(&self) -> usize {
        (self.max_processes_per_app / super::PROCESSES_PER_SANDBOX).max(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub num_cores: usize,
    pub horizon: f64,
    /// Monitoring window length.
    pub window: f64,
    /// Seed for host-internal randomness (daemon activity).
    pub seed: u64,
    pub sched: SchedTiming,
    pub interference: InterferenceConfig,
    pub autoscale: AutoscaleConfig,
    /// Per-request queue bound; `None` is unbounded.
    pub queue_capacity: Option<usize>,
    /// Initial sandboxes per app; `None` sizes pools from the spec rates.
    pub initial_sandboxes: Option<usize>,
    pub record_event_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            num_cores: 6,
            horizon: 3600.0,
            window: 5.0,
            seed: 1,
            sched: SchedTiming::default(),
            interference: InterferenceConfig::default(),
            autoscale: AutoscaleConfig::default(),
            queue_capacity: None,
            initial_sandboxes: None,
            record_event_trace: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_cores == 0 || self.num_cores > 64 {
            return Err(Error::invalid(format!("num_cores must be in 1..=64, got {}", self.num_cores)));
        }
        if !(self.window > 0.0) {
            return Err(Error::invalid("window must be > 0"));
        }
        let s = &self.sched;
        if !(s.rr_slice > 0.0 && s.other_tick > 0.0) {
            return Err(Error::invalid("scheduler slices must be > 0"));
        }
        let i = &self.interference;
        if !(0.0..=1.0).contains(&i.lock_fraction) {
            return Err(Error::invalid("lock_fraction must be in [0, 1]"));
        }
        if i.daemons > 0 && !(i.daemon_rate > 0.0 && i.daemon_burst > 0.0) {
            return Err(Error::invalid("daemon rate and burst must be > 0"));
        }
        if !(i.itlb.clock_hz > 0.0) {
            return Err(Error::invalid("clock_hz must be > 0"));
        }
        let a = &self.autoscale;
        if !(a.rho_target > 0.0 && a.rho_target <= 1.0) {
            return Err(Error::invalid("rho_target must be in (0, 1]"));
        }
        if a.max_processes_per_app < super::PROCESSES_PER_SANDBOX {
            return Err(Error::invalid("max_processes_per_app must fit one sandbox"));
        }
        if self.initial_sandboxes == Some(0) {
            return Err(Error::invalid("initial_sandboxes must be >= 1"));
        }
        Ok(())
    }
}
