use std::fmt;

use serde::{Deserialize, Serialize};

/// Bit set of core indices. Hosts are limited to 64 cores.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CoreMask(pub u64);

impl CoreMask {
    pub const EMPTY: CoreMask = CoreMask(0);

    pub fn all(num_cores: usize) -> Self {
        if num_cores >= 64 {
            CoreMask(u64::MAX)
        } else {
            CoreMask((1u64 << num_cores) - 1)
        }
    }

    pub fn from_cores(cores: impl IntoIterator<Item = usize>) -> Self {
        CoreMask(cores.into_iter().fold(0u64, |m, c| m | (1u64 << c)))
    }

    /// The `count` lowest-index cores starting at `first`.
    pub fn range(first: usize, count: usize) -> Self {
        Self::from_cores(first..first + count)
    }

    pub fn contains(self, core: usize) -> bool {
        core < 64 && self.0 & (1u64 << core) != 0
    }

    pub fn insert(&mut self, core: usize) {
        self.0 |= 1u64 << core;
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: CoreMask) -> CoreMask {
        CoreMask(self.0 | other.0)
    }

    pub fn intersect(self, other: CoreMask) -> CoreMask {
        CoreMask(self.0 & other.0)
    }

    pub fn minus(self, other: CoreMask) -> CoreMask {
        CoreMask(self.0 & !other.0)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |&c| self.contains(c))
    }
}

impl fmt::Debug for CoreMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for CoreMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cores: Vec<String> = self.iter().map(|c| c.to_string()).collect();
        write!(f, "{{{}}}", cores.join(","))
    }
}

/// Who a schedulable entity belongs to, for iTLB residency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Owner {
    App(usize),
    /// Host background daemon (kernel threads, platform agents).
    Daemon(usize),
}

impl Owner {
    pub fn app(self) -> Option<usize> {
        match self {
            Owner::App(a) => Some(a),
            Owner::Daemon(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Worker,
    Shim,
    Auxiliary,
    Daemon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SchedClass {
    Other,
    RoundRobin,
}

/// Scheduling class plus real-time priority. Priority 0 encodes SCHED_OTHER.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedParams {
    pub class: SchedClass,
    pub rt_priority: u8,
}

pub const RT_PRIORITY_MIN: i32 = 1;
pub const RT_PRIORITY_MAX: i32 = 99;

impl SchedParams {
    pub const OTHER: SchedParams = SchedParams {
        class: SchedClass::Other,
        rt_priority: 0,
    };

    pub fn rr(priority: u8) -> Self {
        debug_assert!((1..=99).contains(&priority));
        SchedParams {
            class: SchedClass::RoundRobin,
            rt_priority: priority,
        }
    }

    pub fn is_rr(self) -> bool {
        self.class == SchedClass::RoundRobin
    }

    /// Priority as reported in observations: 0 for OTHER.
    pub fn priority_level(self) -> i32 {
        match self.class {
            SchedClass::Other => 0,
            SchedClass::RoundRobin => self.rt_priority as i32,
        }
    }
}

/// Cumulative per-process counters. All fields only ever grow.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    /// Run-queue wait plus time blocked on the application lock.
    pub cpu_wait_time: f64,
    /// Portion of `cpu_wait_time` spent blocked on the lock.
    pub lock_wait_time: f64,
    pub run_time: f64,
    pub sleep_time: f64,
    pub nvcs: u64,
    pub vcs: u64,
    pub itlb_flushes: u64,
    pub itlb_misses: f64,
    pub instructions: f64,
    pub cycles: f64,
}

impl Counters {
    pub fn add(&mut self, o: &Counters) {
        self.cpu_wait_time += o.cpu_wait_time;
        self.lock_wait_time += o.lock_wait_time;
        self.run_time += o.run_time;
        self.sleep_time += o.sleep_time;
        self.nvcs += o.nvcs;
        self.vcs += o.vcs;
        self.itlb_flushes += o.itlb_flushes;
        self.itlb_misses += o.itlb_misses;
        self.instructions += o.instructions;
        self.cycles += o.cycles;
    }

    /// `self - earlier`, saturating at zero.
    pub fn delta(&self, earlier: &Counters) -> Counters {
        Counters {
            cpu_wait_time: (self.cpu_wait_time - earlier.cpu_wait_time).max(0.0),
            lock_wait_time: (self.lock_wait_time - earlier.lock_wait_time).max(0.0),
            run_time: (self.run_time - earlier.run_time).max(0.0),
            sleep_time: (self.sleep_time - earlier.sleep_time).max(0.0),
            nvcs: self.nvcs.saturating_sub(earlier.nvcs),
            vcs: self.vcs.saturating_sub(earlier.vcs),
            itlb_flushes: self.itlb_flushes.saturating_sub(earlier.itlb_flushes),
            itlb_misses: (self.itlb_misses - earlier.itlb_misses).max(0.0),
            instructions: (self.instructions - earlier.instructions).max(0.0),
            cycles: (self.cycles - earlier.cycles).max(0.0),
        }
    }
}

/// One completed request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub app: String,
    pub arrival: f64,
    pub start_exec: f64,
    pub completion: f64,
    pub execution_latency: f64,
    pub response_latency: f64,
    pub cold_start: bool,
}

impl RequestRecord {
    pub fn new(app: String, arrival: f64, start_exec: f64, completion: f64, cold_start: bool) -> Self {
        Self {
            app,
            arrival,
            start_exec,
            completion,
            execution_latency: completion - start_exec,
            response_latency: completion - arrival,
            cold_start,
        }
    }
}

/// Requested priority or allocation for `apply_sched_policy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyValue {
    Set(i32),
    Revoke,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Enforcement {
    Accepted {
        params: SchedParams,
        dedicated: CoreMask,
    },
    Rejected {
        reason: String,
    },
}

impl Enforcement {
    pub fn is_accepted(&self) -> bool {
        matches!(self, Enforcement::Accepted { .. })
    }
}

/// Audit entry for every `apply_sched_policy` call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnforcementEvent {
    pub time: f64,
    pub app: usize,
    pub requested_priority: PolicyValue,
    pub requested_cores: PolicyValue,
    pub result: Enforcement,
}
