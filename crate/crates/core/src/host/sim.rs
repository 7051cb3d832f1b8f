//! Event loop of the single-host simulator.
//!
//! Schedulable entities are tasks (threads). Each process owns one or more
//! tasks; counters live on the process. Scheduling is global: a core picks
//! the best eligible runnable task when it frees up, and a waking task takes
//! an idle eligible core or preempts a lower-ranked runner.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SimConfig;
use super::itlb::CoreResidency;
use super::snapshot::{AppSnapshot, HostSnapshot, ProcessSnapshot};
use super::types::*;
use super::{Controller, RunOutput, RunStats, PROCESSES_PER_SANDBOX};
use crate::error::{Error, Result};
use crate::workload::{required_servers, sample_exp, FunctionSpec, TraceEntry};

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskState {
    Sleeping,
    Runnable,
    Running(usize),
    Blocked,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    Compute(f64),
    Acquire,
    Release,
    ThreadDone,
}

#[derive(Debug, Clone)]
struct Task {
    proc_: usize,
    state: TaskState,
    since: f64,
    work: f64,
    stall: f64,
    steps: VecDeque<Step>,
    vruntime: f64,
    last_core: Option<usize>,
    gen: u64,
    slice_left: f64,
    queue_seq: u64,
    wake_pending: bool,
}

#[derive(Debug, Clone)]
struct Process {
    pid: u32,
    owner: Owner,
    role: Role,
    params: SchedParams,
    affinity: CoreMask,
    eff_mask: CoreMask,
    counters: Counters,
    tasks: Vec<usize>,
    footprint: f64,
    ipc: f64,
    sandbox: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum SandboxStatus {
    Starting,
    Active,
    Warm,
}

#[derive(Debug, Clone, Copy)]
struct InFlight {
    arrival: f64,
    start: f64,
    threads_left: usize,
    cold: bool,
}

#[derive(Debug, Clone)]
struct Sandbox {
    worker: usize,
    shim: usize,
    aux: usize,
    status: SandboxStatus,
    retiring: bool,
    fresh: bool,
    current: Option<InFlight>,
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    arrival: f64,
    demand: f64,
}

struct App {
    spec: FunctionSpec,
    trace: Box<dyn Iterator<Item = TraceEntry> + Send>,
    lookahead: Option<Pending>,
    queue: VecDeque<Pending>,
    sandboxes: Vec<Sandbox>,
    params: SchedParams,
    affinity: CoreMask,
    dedicated: CoreMask,
    lock_holder: Option<usize>,
    lock_waiters: VecDeque<usize>,
    arrivals: u64,
    completions: u64,
    dropped: u64,
    window_arrivals: u64,
    arrival_history: VecDeque<u64>,
    in_system: usize,
    busy_servers: usize,
    in_system_integral: f64,
    busy_integral: f64,
    last_change: f64,
}

impl App {
    fn integrate(&mut self, now: f64) {
        let dt = now - self.last_change;
        if dt > 0.0 {
            self.in_system_integral += self.in_system as f64 * dt;
            self.busy_integral += self.busy_servers as f64 * dt;
        }
        self.last_change = now;
    }

    fn live_sandboxes(&self) -> usize {
        self.sandboxes
            .iter()
            .filter(|s| s.status != SandboxStatus::Warm && !s.retiring)
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Arrival(usize),
    RunEnd { task: usize, gen: u64 },
    DaemonWake(usize),
    SandboxReady { app: usize, sandbox: usize },
    WindowEnd,
}

#[derive(Debug, Clone, Copy)]
struct Scheduled {
    time: f64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Scheduled {}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Scheduled {
    // Reversed so the BinaryHeap pops the earliest event first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

enum Next {
    Run,
    Sleep,
    Block,
}

pub(crate) struct Host {
    cfg: SimConfig,
    now: f64,
    seq: u64,
    events: BinaryHeap<Scheduled>,
    cores: Vec<Option<usize>>,
    residency: Vec<CoreResidency>,
    tasks: Vec<Task>,
    procs: Vec<Process>,
    apps: Vec<App>,
    daemon_tasks: Vec<usize>,
    runnable: Vec<usize>,
    wake_queue: Vec<usize>,
    min_vruntime: f64,
    rng: ChaCha8Rng,
    records: Vec<RequestRecord>,
    windows: Vec<HostSnapshot>,
    enforcement_log: Vec<EnforcementEvent>,
    trace: Vec<String>,
    stats: RunStats,
    invariant_violations: Vec<String>,
    check_invariants: bool,
}

impl Host {
    pub(crate) fn new(cfg: SimConfig, sources: Vec<super::Source>) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.num_cores;
        let mut host = Host {
            now: 0.0,
            seq: 0,
            events: BinaryHeap::new(),
            cores: vec![None; n],
            residency: vec![CoreResidency::default(); n],
            tasks: Vec::new(),
            procs: Vec::new(),
            apps: Vec::new(),
            daemon_tasks: Vec::new(),
            runnable: Vec::new(),
            wake_queue: Vec::new(),
            min_vruntime: 0.0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_da3a_0000_0001),
            records: Vec::new(),
            windows: Vec::new(),
            enforcement_log: Vec::new(),
            trace: Vec::new(),
            stats: RunStats::default(),
            invariant_violations: Vec::new(),
            check_invariants: false,
            cfg,
        };
        for source in sources {
            source.spec.validate()?;
            if host.apps.iter().any(|a| a.spec.id == source.spec.id) {
                return Err(Error::invalid(format!("duplicate app {}", source.spec.id)));
            }
            let all = CoreMask::all(n);
            host.apps.push(App {
                trace: source.arrivals,
                spec: source.spec,
                lookahead: None,
                queue: VecDeque::new(),
                sandboxes: Vec::new(),
                params: SchedParams::OTHER,
                affinity: all,
                dedicated: CoreMask::EMPTY,
                lock_holder: None,
                lock_waiters: VecDeque::new(),
                arrivals: 0,
                completions: 0,
                dropped: 0,
                window_arrivals: 0,
                arrival_history: VecDeque::new(),
                in_system: 0,
                busy_servers: 0,
                in_system_integral: 0.0,
                busy_integral: 0.0,
                last_change: 0.0,
            });
        }
        let max_sb = host.cfg.autoscale.max_sandboxes();
        for a in 0..host.apps.len() {
            let spec = &host.apps[a].spec;
            let initial = match host.cfg.initial_sandboxes {
                Some(k) => k,
                None => required_servers(
                    spec.arrival_rate,
                    spec.mean_service_time,
                    host.cfg.autoscale.rho_target,
                )?,
            }
            .min(max_sb);
            for _ in 0..initial {
                host.spawn_sandbox(a, SandboxStatus::Active);
            }
            if let Some(first) = host.apps[a].trace.next() {
                host.apps[a].queue_lookahead(first);
                host.push(first.arrival, Event::Arrival(a));
            }
        }
        for d in 0..host.cfg.interference.daemons {
            let pid = host.procs.len() as u32 + 1;
            let p = host.procs.len();
            host.procs.push(Process {
                pid,
                owner: Owner::Daemon(d),
                role: Role::Daemon,
                params: SchedParams::OTHER,
                affinity: CoreMask::all(n),
                eff_mask: CoreMask::all(n),
                counters: Counters::default(),
                tasks: Vec::new(),
                footprint: host.cfg.interference.daemon_footprint,
                ipc: 1.0,
                sandbox: None,
            });
            let t = host.new_task(p);
            host.daemon_tasks.push(t);
            let first = sample_exp(&mut host.rng, 1.0 / host.cfg.interference.daemon_rate);
            host.push(first, Event::DaemonWake(t));
        }
        host.recompute_masks();
        if host.cfg.window <= host.cfg.horizon {
            host.push(host.cfg.window, Event::WindowEnd);
        }
        Ok(host)
    }

    pub(crate) fn enable_invariant_checks(&mut self) {
        self.check_invariants = true;
    }

    fn push(&mut self, time: f64, event: Event) {
        self.seq += 1;
        self.events.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
    }

    fn new_task(&mut self, proc_: usize) -> usize {
        let id = self.tasks.len();
        self.tasks.push(Task {
            proc_,
            state: TaskState::Sleeping,
            since: self.now,
            work: 0.0,
            stall: 0.0,
            steps: VecDeque::new(),
            vruntime: self.min_vruntime,
            last_core: None,
            gen: 0,
            slice_left: 0.0,
            queue_seq: 0,
            wake_pending: false,
        });
        self.procs[proc_].tasks.push(id);
        id
    }

    fn spawn_sandbox(&mut self, app: usize, status: SandboxStatus) -> usize {
        let mut ids = [0usize; PROCESSES_PER_SANDBOX];
        let roles = [Role::Worker, Role::Shim, Role::Auxiliary];
        let sb_index = self.apps[app].sandboxes.len();
        for (slot, role) in roles.into_iter().enumerate() {
            let p = self.procs.len();
            let a = &self.apps[app];
            self.procs.push(Process {
                pid: p as u32 + 1,
                owner: Owner::App(app),
                role,
                params: a.params,
                affinity: a.affinity,
                eff_mask: a.affinity,
                counters: Counters::default(),
                tasks: Vec::new(),
                footprint: a.spec.code_footprint,
                ipc: a.spec.isolated_ipc,
                sandbox: Some(sb_index),
            });
            let threads = if role == Role::Worker {
                self.apps[app].spec.worker_threads
            } else {
                1
            };
            for _ in 0..threads {
                self.new_task(p);
            }
            ids[slot] = p;
        }
        self.apps[app].sandboxes.push(Sandbox {
            worker: ids[0],
            shim: ids[1],
            aux: ids[2],
            status,
            retiring: false,
            fresh: status == SandboxStatus::Starting,
            current: None,
        });
        self.recompute_masks();
        sb_index
    }

    fn trace_line(&mut self, kind: &str, core: Option<usize>, task: Option<usize>, detail: &str) {
        if !self.cfg.record_event_trace {
            return;
        }
        let (pid, app) = match task {
            Some(t) => {
                let p = &self.procs[self.tasks[t].proc_];
                let app = match p.owner {
                    Owner::App(a) => self.apps[a].spec.id.clone(),
                    Owner::Daemon(d) => format!("daemon{d}"),
                };
                (p.pid.to_string(), app)
            }
            None => (String::new(), String::new()),
        };
        let core = core.map(|c| c.to_string()).unwrap_or_default();
        self.trace
            .push(format!("{:.9},{kind},{core},{pid},{app},{detail}", self.now));
    }

    // ---------------------------------------------------------------------
    // Main loop
    // ---------------------------------------------------------------------

    pub(crate) fn run(mut self, controller: &mut dyn Controller) -> Result<RunOutput> {
        controller.on_start(&mut super::HostControl { host: &mut self })?;
        self.flush_wakes();
        while let Some(next) = self.events.peek().copied() {
            if next.time > self.cfg.horizon {
                break;
            }
            self.events.pop();
            self.now = next.time.max(self.now);
            self.stats.events += 1;
            match next.event {
                Event::Arrival(a) => self.on_arrival(a),
                Event::RunEnd { task, gen } => {
                    if self.tasks[task].gen == gen {
                        self.on_run_end(task);
                    }
                }
                Event::DaemonWake(t) => self.on_daemon_wake(t),
                Event::SandboxReady { app, sandbox } => self.on_sandbox_ready(app, sandbox),
                Event::WindowEnd => self.on_window_end(controller)?,
            }
            self.flush_wakes();
            if self.check_invariants {
                self.verify_invariants();
            }
        }
        self.now = self.now.max(self.cfg.horizon);
        self.settle_all();
        for a in 0..self.apps.len() {
            let now = self.now;
            self.apps[a].integrate(now);
        }
        self.finish()
    }

    fn finish(self) -> Result<RunOutput> {
        let mut stats = self.stats;
        stats.end_time = self.now;
        for app in &self.apps {
            stats.in_flight += app.in_system as u64;
            stats.dropped += app.dropped;
            stats.per_app.push(super::AppRunStats {
                id: app.spec.id.clone(),
                arrivals: app.arrivals,
                completions: app.completions,
                dropped: app.dropped,
                mean_in_system: if self.now > 0.0 {
                    app.in_system_integral / self.now
                } else {
                    0.0
                },
                busy_time: app.busy_integral,
            });
        }
        Ok(RunOutput {
            records: self.records,
            windows: self.windows,
            enforcement_log: self.enforcement_log,
            event_trace: self.trace,
            invariant_violations: self.invariant_violations,
            stats,
        })
    }

    // ---------------------------------------------------------------------
    // Requests
    // ---------------------------------------------------------------------

    fn on_arrival(&mut self, a: usize) {
        let now = self.now;
        let pending = self.apps[a].take_lookahead();
        self.apps[a].arrivals += 1;
        self.apps[a].window_arrivals += 1;
        if let Some(next) = self.apps[a].trace.next() {
            if next.arrival <= self.cfg.horizon {
                self.apps[a].queue_lookahead(next);
                self.push(next.arrival, Event::Arrival(a));
            }
        }
        if let Some(cap) = self.cfg.queue_capacity {
            if self.apps[a].queue.len() >= cap {
                self.apps[a].dropped += 1;
                self.trace_line("drop", None, None, &self.apps[a].spec.id.clone());
                return;
            }
        }
        self.apps[a].integrate(now);
        self.apps[a].in_system += 1;
        self.apps[a].queue.push_back(pending);
        self.trace_line("arrival", None, None, &self.apps[a].spec.id.clone());
        self.try_dispatch(a);
    }

    fn try_dispatch(&mut self, a: usize) {
        while !self.apps[a].queue.is_empty() {
            let idle = self.apps[a].sandboxes.iter().position(|s| {
                s.status == SandboxStatus::Active && !s.retiring && s.current.is_none()
            });
            let Some(sb) = idle else { break };
            let req = self.apps[a].queue.pop_front().expect("nonempty");
            self.start_request(a, sb, req);
        }
    }

    fn start_request(&mut self, a: usize, sb: usize, req: Pending) {
        let now = self.now;
        let app = &mut self.apps[a];
        app.integrate(now);
        app.busy_servers += 1;
        let cold = std::mem::replace(&mut app.sandboxes[sb].fresh, false);
        let threads = app.spec.worker_threads;
        app.sandboxes[sb].current = Some(InFlight {
            arrival: req.arrival,
            start: now,
            threads_left: threads,
            cold,
        });
        let sandbox = app.sandboxes[sb].clone();
        let locked = app.spec.uses_futex_lock && self.cfg.interference.futex;
        let f = self.cfg.interference.lock_fraction;
        let worker_tasks = self.procs[sandbox.worker].tasks.clone();
        for (i, &t) in worker_tasks.iter().enumerate() {
            let steps = &mut self.tasks[t].steps;
            if locked && i == 0 {
                steps.push_back(Step::Acquire);
                steps.push_back(Step::Compute(f * req.demand));
                steps.push_back(Step::Release);
                steps.push_back(Step::Compute((1.0 - f) * req.demand));
            } else {
                steps.push_back(Step::Compute(req.demand));
            }
            steps.push_back(Step::ThreadDone);
            self.wake(t);
        }
        self.helper_burst(&sandbox);
        self.trace_line("start", None, Some(worker_tasks[0]), "");
    }

    fn helper_burst(&mut self, sb: &Sandbox) {
        if !self.cfg.interference.helpers {
            return;
        }
        let burst = self.cfg.interference.helper_burst;
        for p in [sb.shim, sb.aux] {
            let t = self.procs[p].tasks[0];
            self.tasks[t].steps.push_back(Step::Compute(burst));
            self.wake(t);
        }
    }

    fn on_thread_done(&mut self, t: usize) {
        let p = self.tasks[t].proc_;
        let (Owner::App(a), Some(sb)) = (self.procs[p].owner, self.procs[p].sandbox) else {
            return;
        };
        let now = self.now;
        let inflight = self.apps[a].sandboxes[sb]
            .current
            .as_mut()
            .expect("thread finished without a request");
        inflight.threads_left -= 1;
        if inflight.threads_left > 0 {
            return;
        }
        let done = *inflight;
        let app = &mut self.apps[a];
        app.integrate(now);
        app.busy_servers -= 1;
        app.in_system -= 1;
        app.completions += 1;
        let sandbox = &mut app.sandboxes[sb];
        sandbox.current = None;
        if sandbox.retiring {
            sandbox.retiring = false;
            sandbox.status = SandboxStatus::Warm;
        }
        let sandbox = sandbox.clone();
        self.records.push(RequestRecord::new(
            app.spec.id.clone(),
            done.arrival,
            done.start,
            now,
            done.cold,
        ));
        self.trace_line("complete", None, Some(t), "");
        self.helper_burst(&sandbox);
        self.try_dispatch(a);
    }

    fn on_sandbox_ready(&mut self, a: usize, sb: usize) {
        let s = &mut self.apps[a].sandboxes[sb];
        if s.status == SandboxStatus::Starting {
            s.status = SandboxStatus::Active;
        }
        self.try_dispatch(a);
    }

    fn on_daemon_wake(&mut self, t: usize) {
        let burst = sample_exp(&mut self.rng, self.cfg.interference.daemon_burst);
        self.tasks[t].steps.push_back(Step::Compute(burst));
        self.wake(t);
        let gap = sample_exp(&mut self.rng, 1.0 / self.cfg.interference.daemon_rate);
        self.push(self.now + gap, Event::DaemonWake(t));
    }

    // ---------------------------------------------------------------------
    // Lock
    // ---------------------------------------------------------------------

    /// Returns true if `t` holds the lock of its app afterwards.
    fn futex_gate(&mut self, t: usize) -> bool {
        let Owner::App(a) = self.procs[self.tasks[t].proc_].owner else {
            return true;
        };
        let app = &mut self.apps[a];
        match app.lock_holder {
            None => {
                app.lock_holder = Some(t);
                true
            }
            Some(h) if h == t => true,
            Some(_) => {
                app.lock_waiters.push_back(t);
                false
            }
        }
    }

    fn futex_release(&mut self, t: usize) {
        let Owner::App(a) = self.procs[self.tasks[t].proc_].owner else {
            return;
        };
        let app = &mut self.apps[a];
        if app.lock_holder != Some(t) {
            return;
        }
        app.lock_holder = app.lock_waiters.pop_front();
        if let Some(w) = app.lock_holder {
            // The waiter's pending Acquire was consumed when it blocked.
            self.wake(w);
        }
    }

    // ---------------------------------------------------------------------
    // Task state machine
    // ---------------------------------------------------------------------

    fn advance(&mut self, t: usize) -> Next {
        loop {
            let Some(step) = self.tasks[t].steps.pop_front() else {
                return Next::Sleep;
            };
            match step {
                Step::Compute(s) => {
                    self.tasks[t].work += s;
                    if self.tasks[t].work > EPS {
                        return Next::Run;
                    }
                }
                Step::Acquire => {
                    if !self.futex_gate(t) {
                        return Next::Block;
                    }
                }
                Step::Release => self.futex_release(t),
                Step::ThreadDone => self.on_thread_done(t),
            }
        }
    }

    fn wake(&mut self, t: usize) {
        let task = &mut self.tasks[t];
        if matches!(task.state, TaskState::Sleeping | TaskState::Blocked) && !task.wake_pending {
            task.wake_pending = true;
            self.wake_queue.push(t);
        }
    }

    fn flush_wakes(&mut self) {
        let mut i = 0;
        while i < self.wake_queue.len() {
            let t = self.wake_queue[i];
            i += 1;
            self.tasks[t].wake_pending = false;
            let prev = self.tasks[t].state;
            if !matches!(prev, TaskState::Sleeping | TaskState::Blocked) {
                continue;
            }
            let holds_lock = self.holds_lock(t);
            if prev == TaskState::Blocked && !holds_lock {
                continue;
            }
            match self.advance(t) {
                Next::Run => {
                    self.settle(t);
                    let credit = self.min_vruntime - self.cfg.sched.sleeper_credit;
                    let task = &mut self.tasks[t];
                    if prev == TaskState::Sleeping && task.vruntime < credit {
                        task.vruntime = credit;
                    }
                    task.state = TaskState::Runnable;
                    task.since = self.now;
                    self.trace_line("wake", None, Some(t), "");
                    let rr = self.procs[self.tasks[t].proc_].params.is_rr();
                    self.place(t, true, rr);
                }
                Next::Sleep => {}
                Next::Block => {
                    if prev == TaskState::Sleeping {
                        self.settle(t);
                        self.tasks[t].state = TaskState::Blocked;
                        self.tasks[t].since = self.now;
                    }
                }
            }
        }
        self.wake_queue.clear();
    }

    fn holds_lock(&self, t: usize) -> bool {
        match self.procs[self.tasks[t].proc_].owner {
            Owner::App(a) => self.apps[a].lock_holder == Some(t),
            Owner::Daemon(_) => false,
        }
    }

    /// Brings counters of `t` up to `now` without changing its state.
    fn settle(&mut self, t: usize) {
        let now = self.now;
        let task = &mut self.tasks[t];
        let dt = now - task.since;
        if dt <= 0.0 {
            task.since = now;
            return;
        }
        let proc_ = &mut self.procs[task.proc_];
        let c = &mut proc_.counters;
        match task.state {
            TaskState::Sleeping => c.sleep_time += dt,
            TaskState::Runnable => c.cpu_wait_time += dt,
            TaskState::Blocked => {
                c.cpu_wait_time += dt;
                c.lock_wait_time += dt;
            }
            TaskState::Running(_) => {
                let stall_used = task.stall.min(dt);
                let work_used = task.work.min(dt - stall_used);
                task.stall -= stall_used;
                task.work -= work_used;
                task.slice_left -= dt;
                if proc_.params.class == SchedClass::Other {
                    task.vruntime += dt;
                }
                let clock = self.cfg.interference.itlb.clock_hz;
                c.run_time += dt;
                c.cycles += dt * clock;
                c.instructions += work_used * clock * proc_.ipc;
            }
        }
        task.since = now;
    }

    fn settle_all(&mut self) {
        for t in 0..self.tasks.len() {
            self.settle(t);
        }
        self.refresh_min_vruntime();
    }

    fn refresh_min_vruntime(&mut self) {
        let mut min: Option<f64> = None;
        for (t, task) in self.tasks.iter().enumerate() {
            if matches!(task.state, TaskState::Running(_) | TaskState::Runnable)
                && self.procs[task.proc_].params.class == SchedClass::Other
            {
                let v = self.current_vruntime(t);
                min = Some(min.map_or(v, |m: f64| m.min(v)));
            }
        }
        if let Some(m) = min {
            self.min_vruntime = self.min_vruntime.max(m);
        }
    }

    fn current_vruntime(&self, t: usize) -> f64 {
        let task = &self.tasks[t];
        match task.state {
            TaskState::Running(_) if self.procs[task.proc_].params.class == SchedClass::Other => {
                task.vruntime + (self.now - task.since)
            }
            _ => task.vruntime,
        }
    }

    // ---------------------------------------------------------------------
    // Scheduling
    // ---------------------------------------------------------------------

    fn rank(&self, t: usize) -> i32 {
        self.procs[self.tasks[t].proc_].params.priority_level()
    }

    fn eligible(&self, t: usize, core: usize) -> bool {
        self.procs[self.tasks[t].proc_].eff_mask.contains(core)
    }

    fn pick_idle_core(&self, t: usize) -> Option<usize> {
        let mask = self.procs[self.tasks[t].proc_].eff_mask;
        let owner = self.procs[self.tasks[t].proc_].owner;
        let idle = |c: usize| mask.contains(c) && self.cores[c].is_none();
        if let Some(c) = self.tasks[t].last_core {
            if idle(c) {
                return Some(c);
            }
        }
        let n = self.cores.len();
        (0..n)
            .find(|&c| idle(c) && self.residency[c].last_resident == Some(owner))
            .or_else(|| (0..n).find(|&c| idle(c)))
    }

    /// Core whose runner `t` may preempt, if any.
    fn find_victim(&self, t: usize) -> Option<usize> {
        let my_rank = self.rank(t);
        let mask = self.procs[self.tasks[t].proc_].eff_mask;
        let mut best: Option<(usize, i32, f64)> = None;
        for c in mask.iter().filter(|&c| c < self.cores.len()) {
            let Some(r) = self.cores[c] else { continue };
            let r_rank = self.rank(r);
            let r_vr = self.current_vruntime(r);
            let ok = if my_rank > 0 {
                r_rank < my_rank
            } else {
                r_rank == 0
                    && r_vr - self.tasks[t].vruntime > self.cfg.sched.wakeup_granularity
            };
            if !ok {
                continue;
            }
            let better = match best {
                None => true,
                Some((_, b_rank, b_vr)) => r_rank < b_rank || (r_rank == b_rank && r_vr > b_vr),
            };
            if better {
                best = Some((c, r_rank, r_vr));
            }
        }
        best.map(|(c, _, _)| c)
    }

    /// Puts a runnable task on an idle core, onto a preempted core, or into the run queue.
    fn place(&mut self, t: usize, allow_preempt: bool, push_rr: bool) {
        debug_assert_eq!(self.tasks[t].state, TaskState::Runnable);
        if let Some(c) = self.pick_idle_core(t) {
            self.dispatch(c, t);
            return;
        }
        if allow_preempt || push_rr {
            if let Some(c) = self.find_victim(t) {
                let victim = self.cores[c].expect("victim core busy");
                self.preempt(c, true);
                self.dispatch(c, t);
                let victim_rr = self.rank(victim) > 0;
                self.place(victim, false, victim_rr);
                return;
            }
        }
        self.enqueue(t);
    }

    fn enqueue(&mut self, t: usize) {
        self.seq += 1;
        self.tasks[t].queue_seq = self.seq;
        if !self.runnable.contains(&t) {
            self.runnable.push(t);
        }
    }

    /// Takes the runner off `core`; it becomes runnable but is not re-placed.
    fn preempt(&mut self, core: usize, involuntary: bool) {
        let r = self.cores[core].take().expect("preempting an idle core");
        self.settle(r);
        let task = &mut self.tasks[r];
        task.state = TaskState::Runnable;
        task.gen += 1;
        if involuntary {
            self.procs[task.proc_].counters.nvcs += 1;
        }
        self.trace_line("preempt", Some(core), Some(r), "");
    }

    fn dispatch(&mut self, core: usize, t: usize) {
        debug_assert!(self.cores[core].is_none());
        self.settle(t);
        if let Some(pos) = self.runnable.iter().position(|&x| x == t) {
            self.runnable.swap_remove(pos);
        }
        let p = self.tasks[t].proc_;
        let owner = self.procs[p].owner;
        let footprint = self.procs[p].footprint;
        let cost = self.residency[core].account_context_switch(
            &self.cfg.interference.itlb,
            None,
            owner,
            footprint,
        );
        let c = &mut self.procs[p].counters;
        c.itlb_flushes += cost.flushes;
        c.itlb_misses += cost.misses;
        let rr = self.procs[p].params.is_rr();
        let task = &mut self.tasks[t];
        task.stall += cost.stall_seconds;
        task.state = TaskState::Running(core);
        task.since = self.now;
        task.last_core = Some(core);
        if rr {
            if task.slice_left <= EPS {
                task.slice_left = self.cfg.sched.rr_slice;
            }
        } else {
            task.slice_left = self.cfg.sched.other_tick;
        }
        self.cores[core] = Some(t);
        self.schedule_run_end(t);
        self.trace_line("dispatch", Some(core), Some(t), "");
    }

    fn schedule_run_end(&mut self, t: usize) {
        let task = &mut self.tasks[t];
        task.gen += 1;
        let until = (task.stall + task.work).min(task.slice_left.max(0.0));
        let (gen, at) = (task.gen, task.since + until.max(0.0));
        self.push(at, Event::RunEnd { task: t, gen });
    }

    fn on_run_end(&mut self, t: usize) {
        let TaskState::Running(core) = self.tasks[t].state else {
            return;
        };
        self.settle(t);
        let task = &self.tasks[t];
        if task.stall + task.work <= 1e-9 {
            self.tasks[t].stall = 0.0;
            self.tasks[t].work = 0.0;
            match self.advance(t) {
                Next::Run => self.schedule_run_end(t),
                next @ (Next::Sleep | Next::Block) => {
                    let task = &mut self.tasks[t];
                    task.state = if matches!(next, Next::Sleep) {
                        TaskState::Sleeping
                    } else {
                        TaskState::Blocked
                    };
                    task.gen += 1;
                    self.procs[task.proc_].counters.vcs += 1;
                    self.cores[core] = None;
                    self.trace_line(
                        if matches!(next, Next::Sleep) { "sleep" } else { "block" },
                        Some(core),
                        Some(t),
                        "",
                    );
                    self.refresh_min_vruntime();
                    self.pick_next(core);
                }
            }
            return;
        }
        if self.tasks[t].slice_left > 1e-9 {
            self.schedule_run_end(t);
            return;
        }
        self.on_slice_expired(core, t);
    }

    fn on_slice_expired(&mut self, core: usize, t: usize) {
        let rr = self.procs[self.tasks[t].proc_].params.is_rr();
        let my_rank = self.rank(t);
        let my_vr = self.tasks[t].vruntime;
        let contender = self
            .runnable
            .iter()
            .copied()
            .filter(|&w| self.eligible(w, core))
            .filter(|&w| {
                if rr {
                    self.rank(w) == my_rank
                } else {
                    self.rank(w) == 0 && self.tasks[w].vruntime < my_vr
                }
            })
            .min_by(|&x, &y| self.queue_order(x, y));
        match contender {
            None => {
                if rr {
                    self.tasks[t].slice_left = self.cfg.sched.rr_slice;
                } else {
                    self.tasks[t].slice_left = self.cfg.sched.other_tick;
                }
                self.schedule_run_end(t);
            }
            Some(w) => {
                self.preempt(core, true);
                if rr {
                    self.tasks[t].slice_left = self.cfg.sched.rr_slice;
                }
                self.dispatch(core, w);
                self.refresh_min_vruntime();
                self.place(t, false, rr);
            }
        }
    }

    /// Run-queue order among equally ranked tasks.
    fn queue_order(&self, x: usize, y: usize) -> Ordering {
        if self.rank(x) == 0 {
            self.tasks[x]
                .vruntime
                .total_cmp(&self.tasks[y].vruntime)
                .then(self.tasks[x].queue_seq.cmp(&self.tasks[y].queue_seq))
        } else {
            self.tasks[x].queue_seq.cmp(&self.tasks[y].queue_seq)
        }
    }

    /// schedule_next: best runnable task eligible on `core`, or idle.
    fn select_next(&self, core: usize) -> Option<usize> {
        self.runnable
            .iter()
            .copied()
            .filter(|&w| self.eligible(w, core))
            .max_by(|&x, &y| {
                self.rank(x)
                    .cmp(&self.rank(y))
                    .then_with(|| self.queue_order(y, x))
            })
    }

    fn pick_next(&mut self, core: usize) {
        if self.cores[core].is_some() {
            return;
        }
        if let Some(w) = self.select_next(core) {
            self.dispatch(core, w);
        }
    }

    // ---------------------------------------------------------------------
    // Policy enforcement
    // ---------------------------------------------------------------------

    fn recompute_masks(&mut self) {
        let n = self.cores.len();
        let all = CoreMask::all(n);
        let dedicated: Vec<CoreMask> = self.apps.iter().map(|a| a.dedicated).collect();
        let union = dedicated.iter().fold(CoreMask::EMPTY, |m, d| m.union(*d));
        for p in &mut self.procs {
            let eff = match p.owner {
                Owner::App(a) => {
                    let others = union.minus(dedicated[a]);
                    p.affinity.intersect(all).minus(others)
                }
                Owner::Daemon(_) => all.minus(union),
            };
            p.eff_mask = if eff.is_empty() { p.affinity.intersect(all) } else { eff };
        }
    }

    /// Re-establishes affinity, work conservation and priority order after a
    /// policy change.
    fn reschedule_all(&mut self) {
        for c in 0..self.cores.len() {
            if let Some(r) = self.cores[c] {
                if !self.eligible(r, c) {
                    self.preempt(c, false);
                    self.enqueue(r);
                }
            }
        }
        let mut order = self.runnable.clone();
        order.sort_by(|&x, &y| {
            self.rank(y)
                .cmp(&self.rank(x))
                .then_with(|| self.queue_order(x, y))
        });
        for t in order {
            if self.tasks[t].state == TaskState::Runnable && self.runnable.contains(&t) {
                let rr = self.rank(t) > 0;
                self.runnable.retain(|&x| x != t);
                self.place(t, false, rr);
            }
        }
        for c in 0..self.cores.len() {
            self.pick_next(c);
        }
    }

    fn set_app_policy(&mut self, a: usize, params: SchedParams, affinity: CoreMask, dedicated: CoreMask) {
        self.settle_all();
        let app = &mut self.apps[a];
        let was_rr = app.params.is_rr();
        app.params = params;
        app.affinity = affinity;
        app.dedicated = dedicated;
        for p in self.procs.iter_mut().filter(|p| p.owner == Owner::App(a)) {
            p.params = params;
            p.affinity = affinity;
            if was_rr && !params.is_rr() {
                // vruntime froze while the tasks were real-time.
                for &t in &p.tasks {
                    let task = &mut self.tasks[t];
                    task.vruntime = task.vruntime.max(self.min_vruntime);
                }
            }
        }
        self.recompute_masks();
        self.reschedule_all();
    }

    pub(crate) fn apply_sched_policy(
        &mut self,
        a: usize,
        priority: PolicyValue,
        cores: PolicyValue,
    ) -> Result<Enforcement> {
        if a >= self.apps.len() {
            return Err(Error::invalid(format!("unknown app index {a}")));
        }
        let n = self.cores.len();
        let all = CoreMask::all(n);
        let others: CoreMask = self
            .apps
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != a)
            .fold(CoreMask::EMPTY, |m, (_, app)| m.union(app.dedicated));
        let reject = |reason: String| Enforcement::Rejected { reason };
        let result = (|| {
            let params = match priority {
                PolicyValue::Revoke => SchedParams::OTHER,
                PolicyValue::Set(p) if (RT_PRIORITY_MIN..=RT_PRIORITY_MAX).contains(&p) => {
                    SchedParams::rr(p as u8)
                }
                PolicyValue::Set(p) => {
                    return reject(format!("priority {p} outside [{RT_PRIORITY_MIN}, {RT_PRIORITY_MAX}]"))
                }
            };
            let dedicated = match cores {
                PolicyValue::Revoke | PolicyValue::Set(0) => CoreMask::EMPTY,
                PolicyValue::Set(k) if k < 0 => return reject(format!("negative core count {k}")),
                PolicyValue::Set(k) => {
                    let k = k as usize;
                    if others.count() + k > n.saturating_sub(1) {
                        return reject(format!(
                            "{k} dedicated cores plus {} held by others exceeds {} available",
                            others.count(),
                            n.saturating_sub(1)
                        ));
                    }
                    CoreMask::from_cores(all.minus(others).iter().take(k))
                }
            };
            Enforcement::Accepted { params, dedicated }
        })();
        match &result {
            Enforcement::Accepted { params, dedicated } => {
                let affinity = if dedicated.is_empty() { all } else { *dedicated };
                self.set_app_policy(a, *params, affinity, *dedicated);
            }
            Enforcement::Rejected { .. } => {
                self.set_app_policy(a, SchedParams::OTHER, all, CoreMask::EMPTY);
            }
        }
        let detail = format!("{priority:?}/{cores:?}/{}", result.is_accepted());
        self.trace_line("enforce", None, None, &detail);
        self.enforcement_log.push(EnforcementEvent {
            time: self.now,
            app: a,
            requested_priority: priority,
            requested_cores: cores,
            result: result.clone(),
        });
        Ok(result)
    }

    pub(crate) fn set_affinity(&mut self, a: usize, mask: CoreMask) -> Result<()> {
        let all = CoreMask::all(self.cores.len());
        if a >= self.apps.len() {
            return Err(Error::invalid(format!("unknown app index {a}")));
        }
        if mask.intersect(all).is_empty() {
            return Err(Error::invalid("empty affinity mask"));
        }
        let params = self.apps[a].params;
        let dedicated = self.apps[a].dedicated;
        self.set_app_policy(a, params, mask.intersect(all), dedicated);
        Ok(())
    }

    // ---------------------------------------------------------------------
    // Windows and autoscaling
    // ---------------------------------------------------------------------

    fn snapshot(&self) -> HostSnapshot {
        let processes = self
            .procs
            .iter()
            .map(|p| ProcessSnapshot {
                pid: p.pid,
                owner: p.owner,
                role: p.role,
                params: p.params,
                mask: p.eff_mask,
                threads: p.tasks.len(),
                blocked_on_lock: p
                    .tasks
                    .iter()
                    .any(|&t| self.tasks[t].state == TaskState::Blocked),
                counters: p.counters,
            })
            .collect();
        let apps = self
            .apps
            .iter()
            .enumerate()
            .map(|(i, a)| AppSnapshot {
                index: i,
                id: a.spec.id.clone(),
                category: a.spec.category,
                uses_futex_lock: a.spec.uses_futex_lock,
                isolated_ipc: a.spec.isolated_ipc,
                params: a.params,
                dedicated: a.dedicated,
                affinity: a.affinity,
                pids: self
                    .procs
                    .iter()
                    .filter(|p| p.owner == Owner::App(i))
                    .map(|p| p.pid)
                    .collect(),
                sandboxes: a.live_sandboxes(),
                arrivals: a.arrivals,
                completions: a.completions,
            })
            .collect();
        HostSnapshot {
            time: self.now,
            num_cores: self.cores.len(),
            processes,
            apps,
        }
    }

    fn on_window_end(&mut self, controller: &mut dyn Controller) -> Result<()> {
        self.settle_all();
        let now = self.now;
        for a in &mut self.apps {
            a.integrate(now);
        }
        let snap = self.snapshot();
        self.windows.push(snap);
        self.trace_line("window", None, None, "");
        controller.on_window(&mut super::HostControl { host: self })?;
        self.flush_wakes();
        if self.cfg.autoscale.enabled {
            for a in 0..self.apps.len() {
                self.autoscale(a);
            }
        } else {
            for a in &mut self.apps {
                a.window_arrivals = 0;
            }
        }
        let next = self.now + self.cfg.window;
        if next <= self.cfg.horizon + 1e-9 {
            self.push(next, Event::WindowEnd);
        }
        Ok(())
    }

    /// Resizes the sandbox pool from the observed arrival rate. Returns the
    /// live sandbox count afterwards.
    pub(crate) fn autoscale(&mut self, a: usize) -> usize {
        let cfg = self.cfg.autoscale;
        let window = self.cfg.window;
        let span = ((cfg.observe_span / window).ceil() as usize).max(1);
        let app = &mut self.apps[a];
        app.arrival_history.push_back(app.window_arrivals);
        app.window_arrivals = 0;
        while app.arrival_history.len() > span {
            app.arrival_history.pop_front();
        }
        let observed = app.arrival_history.iter().sum::<u64>() as f64
            / (app.arrival_history.len() as f64 * window);
        let mu = app.spec.mean_service_time;
        let h = cfg.hysteresis.max(0.0);
        let current = app.live_sandboxes();
        let up = required_servers(observed / (1.0 + h), mu, cfg.rho_target).unwrap_or(1);
        let down = required_servers(observed * (1.0 + h), mu, cfg.rho_target).unwrap_or(1);
        let target = if up > current {
            up
        } else if down < current {
            down
        } else {
            current
        };
        self.resize_pool(a, target.clamp(1, cfg.max_sandboxes()))
    }

    fn resize_pool(&mut self, a: usize, target: usize) -> usize {
        let mut live = self.apps[a].live_sandboxes();
        while live < target {
            let app = &mut self.apps[a];
            if let Some(s) = app.sandboxes.iter_mut().find(|s| s.retiring) {
                s.retiring = false;
            } else if let Some(s) = app
                .sandboxes
                .iter_mut()
                .find(|s| s.status == SandboxStatus::Warm)
            {
                s.status = SandboxStatus::Active;
            } else {
                let sb = self.spawn_sandbox(a, SandboxStatus::Starting);
                let ready = self.now + self.cfg.autoscale.cold_start;
                self.push(ready, Event::SandboxReady { app: a, sandbox: sb });
            }
            live += 1;
        }
        while live > target {
            let app = &mut self.apps[a];
            let victim = app
                .sandboxes
                .iter()
                .rposition(|s| s.status != SandboxStatus::Warm && !s.retiring)
                .expect("live sandbox exists");
            let s = &mut app.sandboxes[victim];
            if s.current.is_some() {
                s.retiring = true;
            } else {
                s.status = SandboxStatus::Warm;
            }
            live -= 1;
        }
        self.try_dispatch(a);
        live
    }

    // ---------------------------------------------------------------------
    // Invariants
    // ---------------------------------------------------------------------

    fn verify_invariants(&mut self) {
        let mut problems = Vec::new();
        for (c, slot) in self.cores.iter().enumerate() {
            if let Some(r) = *slot {
                if self.tasks[r].state != TaskState::Running(c) {
                    problems.push(format!("core {c} runner {r} in state {:?}", self.tasks[r].state));
                }
                if !self.eligible(r, c) {
                    problems.push(format!("task {r} runs outside its mask on core {c}"));
                }
            }
        }
        for &w in &self.runnable {
            for c in 0..self.cores.len() {
                if !self.eligible(w, c) {
                    continue;
                }
                match self.cores[c] {
                    None => problems.push(format!("core {c} idle while task {w} waits")),
                    Some(r) if self.rank(w) > 0 && self.rank(r) < self.rank(w) => problems.push(
                        format!("rr task {w} waits while lower-ranked {r} runs on core {c}"),
                    ),
                    _ => {}
                }
            }
        }
        for p in problems {
            if self.invariant_violations.len() < 100 {
                self.invariant_violations.push(format!("t={:.6}: {p}", self.now));
            }
        }
    }

    // ---------------------------------------------------------------------
    // Accessors for HostControl
    // ---------------------------------------------------------------------

    pub(crate) fn now(&self) -> f64 {
        self.now
    }

    pub(crate) fn num_cores(&self) -> usize {
        self.cores.len()
    }

    pub(crate) fn specs(&self) -> impl Iterator<Item = &FunctionSpec> {
        self.apps.iter().map(|a| &a.spec)
    }

    pub(crate) fn windows(&self) -> &[HostSnapshot] {
        &self.windows
    }

    pub(crate) fn app_policy(&self, a: usize) -> Option<(SchedParams, CoreMask, CoreMask)> {
        self.apps.get(a).map(|x| (x.params, x.dedicated, x.affinity))
    }

    pub(crate) fn enforcement_log(&self) -> &[EnforcementEvent] {
        &self.enforcement_log
    }
}

impl App {
    fn queue_lookahead(&mut self, entry: TraceEntry) {
        self.lookahead = Some(Pending {
            arrival: entry.arrival,
            demand: entry.demand,
        });
    }

    fn take_lookahead(&mut self) -> Pending {
        self.lookahead.take().expect("arrival without lookahead")
    }
}
