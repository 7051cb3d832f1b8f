//! Single-host discrete-event simulator.

mod config;
mod itlb;
mod sim;
mod snapshot;
mod types;

pub use config::{AutoscaleConfig, InterferenceConfig, SchedTiming, SimConfig};
pub use itlb::{CoreResidency, ItlbModel, SwitchCost};
pub use snapshot::{AppSnapshot, HostSnapshot, ProcessSnapshot};
pub use types::{
    CoreMask, Counters, Enforcement, EnforcementEvent, Owner, PolicyValue, RequestRecord, Role,
    SchedClass, SchedParams, RT_PRIORITY_MAX, RT_PRIORITY_MIN,
};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::workload::{FunctionSpec, RequestStream, TraceEntry};

/// Worker, shim and auxiliary process.
pub const PROCESSES_PER_SANDBOX: usize = 3;

/// Policy hook driven by the event loop.
pub trait Controller {
    fn on_start(&mut self, _host: &mut HostControl<'_>) -> Result<()> {
        Ok(())
    }

    /// Called at the end of every monitoring window, after the window's
    /// snapshot has been appended to [`HostControl::windows`].
    fn on_window(&mut self, host: &mut HostControl<'_>) -> Result<()>;
}

/// Controller that never intervenes.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoController;

impl Controller for NoController {
    fn on_window(&mut self, _host: &mut HostControl<'_>) -> Result<()> {
        Ok(())
    }
}

/// The controller's view of a running host.
pub struct HostControl<'a> {
    host: &'a mut sim::Host,
}

impl HostControl<'_> {
    pub fn now(&self) -> f64 {
        self.host.now()
    }

    pub fn num_cores(&self) -> usize {
        self.host.num_cores()
    }

    pub fn specs(&self) -> Vec<&FunctionSpec> {
        self.host.specs().collect()
    }

    /// Snapshots taken at every window boundary so far, oldest first.
    pub fn windows(&self) -> &[HostSnapshot] {
        self.host.windows()
    }

    /// `(params, dedicated cores, affinity)` of an app.
    pub fn app_policy(&self, app: usize) -> Option<(SchedParams, CoreMask, CoreMask)> {
        self.host.app_policy(app)
    }

    pub fn enforcement_log(&self) -> &[EnforcementEvent] {
        self.host.enforcement_log()
    }

    /// Sets the real-time priority and dedicated core count of every process
    /// of `app`. Out-of-range requests are rejected, logged and revert the
    /// app to SCHED_OTHER on all cores.
    pub fn apply_sched_policy(
        &mut self,
        app: usize,
        priority: PolicyValue,
        cores: PolicyValue,
    ) -> Result<Enforcement> {
        self.host.apply_sched_policy(app, priority, cores)
    }

    /// Plain affinity pinning without dedication.
    pub fn set_affinity(&mut self, app: usize, mask: CoreMask) -> Result<()> {
        self.host.set_affinity(app, mask)
    }
}

/// An app together with its arrival sequence.
pub struct Source {
    pub spec: FunctionSpec,
    pub arrivals: Box<dyn Iterator<Item = TraceEntry> + Send>,
}

impl Source {
    pub fn stream(stream: &RequestStream) -> Self {
        Source {
            spec: stream.spec.clone(),
            arrivals: Box::new(stream.iter()),
        }
    }

    /// Fixed, hand-written arrivals. Entries must be in nondecreasing time.
    pub fn fixed(spec: FunctionSpec, entries: Vec<TraceEntry>) -> Self {
        Source {
            spec,
            arrivals: Box::new(entries.into_iter()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppRunStats {
    pub id: String,
    pub arrivals: u64,
    pub completions: u64,
    pub dropped: u64,
    /// Time-average number of requests queued or executing.
    pub mean_in_system: f64,
    /// Integral of busy sandboxes over time.
    pub busy_time: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub end_time: f64,
    pub events: u64,
    pub in_flight: u64,
    pub dropped: u64,
    pub per_app: Vec<AppRunStats>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<RequestRecord>,
    pub windows: Vec<HostSnapshot>,
    pub enforcement_log: Vec<EnforcementEvent>,
    /// `time,event_kind,core,pid,app,detail` lines when tracing is on.
    pub event_trace: Vec<String>,
    /// Scheduler invariant breaches; only collected by [`run_checked`].
    pub invariant_violations: Vec<String>,
    pub stats: RunStats,
}

pub fn run(
    cfg: &SimConfig,
    streams: &[RequestStream],
    controller: &mut dyn Controller,
) -> Result<RunOutput> {
    run_sources(cfg, streams.iter().map(Source::stream).collect(), controller)
}

pub fn run_sources(
    cfg: &SimConfig,
    sources: Vec<Source>,
    controller: &mut dyn Controller,
) -> Result<RunOutput> {
    sim::Host::new(cfg.clone(), sources)?.run(controller)
}

/// Like [`run_sources`], but checks work conservation, priority dominance
/// and affinity after every event.
pub fn run_checked(
    cfg: &SimConfig,
    sources: Vec<Source>,
    controller: &mut dyn Controller,
) -> Result<RunOutput> {
    let mut host = sim::Host::new(cfg.clone(), sources)?;
    host.enable_invariant_checks();
    host.run(controller)
}
