use faasim::host::{
    self, CoreMask, Controller, HostControl, InterferenceConfig, NoController, PolicyValue,
    RunOutput, SchedClass, SchedParams, SimConfig, Source,
};
use faasim::workload::{builtin_catalog, find_spec, Category, FunctionSpec, RequestStream, TraceEntry};
use faasim::Result;

/// Runs `f` once at simulation start.
struct AtStart<F: FnMut(&mut HostControl<'_>)>(F);

impl<F: FnMut(&mut HostControl<'_>)> Controller for AtStart<F> {
    fn on_start(&mut self, host: &mut HostControl<'_>) -> Result<()> {
        (self.0)(host);
        Ok(())
    }

    fn on_window(&mut self, _host: &mut HostControl<'_>) -> Result<()> {
        Ok(())
    }
}

fn quiet(cores: usize, horizon: f64) -> SimConfig {
    let mut cfg = SimConfig {
        num_cores: cores,
        horizon,
        initial_sandboxes: Some(1),
        interference: InterferenceConfig::none(),
        ..SimConfig::default()
    };
    cfg.autoscale.enabled = false;
    cfg
}

fn entry(arrival: f64, demand: f64) -> TraceEntry {
    TraceEntry { arrival, demand }
}

fn spec(id: &str) -> FunctionSpec {
    FunctionSpec::new(id, Category::LS, 1.0, 0.5)
}

fn by_app<'a>(out: &'a RunOutput, app: &str) -> Vec<&'a faasim::host::RequestRecord> {
    out.records.iter().filter(|r| r.app == app).collect()
}

#[test]
fn zero_contention_latency_equals_demand() {
    let s = find_spec(&builtin_catalog(), "MR").unwrap().clone();
    let stream = RequestStream::new(s, 11, 500.0);
    let trace = faasim::workload::generate_trace(&stream);
    let out = host::run(&quiet(1, 1e6), &[stream], &mut NoController).unwrap();
    assert_eq!(out.records.len(), trace.len());
    for (r, t) in out.records.iter().zip(&trace) {
        assert!((r.execution_latency - t.demand).abs() < 1e-9, "{r:?} vs {t:?}");
        assert!(r.completion >= r.start_exec && r.start_exec >= r.arrival);
    }
}

#[test]
fn empty_host_produces_nothing() {
    let out = host::run(&quiet(2, 100.0), &[], &mut NoController).unwrap();
    assert!(out.records.is_empty());
    assert_eq!(out.windows.len(), 20);
}

#[test]
fn runs_are_deterministic() {
    let cat = builtin_catalog();
    let streams: Vec<_> = ["EG", "VP", "IR"]
        .iter()
        .enumerate()
        .map(|(i, id)| RequestStream::new(find_spec(&cat, id).unwrap().clone(), 100 + i as u64, 120.0))
        .collect();
    let cfg = SimConfig {
        horizon: 120.0,
        ..SimConfig::default()
    };
    let a = host::run(&cfg, &streams, &mut NoController).unwrap();
    let b = host::run(&cfg, &streams, &mut NoController).unwrap();
    assert!(!a.records.is_empty());
    assert_eq!(a.records, b.records);
    assert_eq!(a.windows, b.windows);
}

#[test]
fn rr_preempts_other() {
    let sources = vec![
        Source::fixed(spec("A"), vec![entry(0.0, 1.0)]),
        Source::fixed(spec("B"), vec![entry(0.1, 0.2)]),
    ];
    let mut cfg = quiet(1, 10.0);
    cfg.record_event_trace = true;
    let mut ctl = AtStart(|h: &mut HostControl<'_>| {
        h.apply_sched_policy(1, PolicyValue::Set(50), PolicyValue::Revoke).unwrap();
    });
    let out = host::run_sources(&cfg, sources, &mut ctl).unwrap();
    let b = by_app(&out, "B")[0];
    assert!((b.completion - 0.3).abs() < 1e-9, "{b:?}");
    assert!((b.execution_latency - 0.2).abs() < 1e-9);
    let a = by_app(&out, "A")[0];
    assert!((a.completion - 1.2).abs() < 1e-9, "{a:?}");
    let last = out.windows.last().unwrap();
    assert_eq!(last.worker_counters(0).nvcs, 1);
}

#[test]
fn equal_rr_priorities_alternate_every_slice() {
    let sources = vec![
        Source::fixed(spec("A"), vec![entry(0.0, 1.0)]),
        Source::fixed(spec("B"), vec![entry(0.0, 1.0)]),
    ];
    let mut cfg = quiet(1, 10.0);
    cfg.record_event_trace = true;
    let mut ctl = AtStart(|h: &mut HostControl<'_>| {
        for a in 0..2 {
            h.apply_sched_policy(a, PolicyValue::Set(50), PolicyValue::Revoke).unwrap();
        }
    });
    let out = host::run_sources(&cfg, sources, &mut ctl).unwrap();
    let dispatches: Vec<(f64, String)> = out
        .event_trace
        .iter()
        .filter_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[1] == "dispatch").then(|| (f[0].parse().unwrap(), f[4].to_string()))
        })
        .collect();
    assert_eq!(dispatches.len(), 20);
    for (i, (t, app)) in dispatches.iter().enumerate() {
        assert!((t - 0.1 * i as f64).abs() < 1e-9, "dispatch {i} at {t}");
        assert_eq!(app, if i % 2 == 0 { "A" } else { "B" });
    }
    let (a, b) = (by_app(&out, "A")[0], by_app(&out, "B")[0]);
    assert!((a.completion - 1.9).abs() < 1e-9 && (b.completion - 2.0).abs() < 1e-9);
}

#[test]
fn other_tasks_share_fairly() {
    let sources = vec![
        Source::fixed(spec("A"), vec![entry(0.0, 1.0)]),
        Source::fixed(spec("B"), vec![entry(0.0, 1.0)]),
    ];
    let out = host::run_sources(&quiet(1, 10.0), sources, &mut NoController).unwrap();
    for r in &out.records {
        assert!((r.completion - 2.0).abs() < 0.011, "{r:?}");
    }
}

#[test]
fn lock_serializes_concurrent_requests() {
    let od = spec("OD").with_lock(true);
    let f = 0.3;
    let (d1, d2) = (1.0, 0.5);
    let mut cfg = quiet(2, 10.0);
    cfg.interference.futex = true;
    cfg.interference.lock_fraction = f;
    cfg.initial_sandboxes = Some(2);
    let sources = vec![Source::fixed(od, vec![entry(0.0, d1), entry(0.0, d2)])];
    let out = host::run_sources(&cfg, sources, &mut NoController).unwrap();
    assert_eq!(out.records.len(), 2);
    let first = &out.records.iter().find(|r| (r.execution_latency - d1).abs() < 1e-9).unwrap();
    let second = out.records.iter().find(|r| !std::ptr::eq(*r, *first)).unwrap();
    assert!(second.execution_latency >= d2 + f * d1 - 1e-9, "{second:?}");
    let c = out.windows.last().unwrap().app_counters(0);
    assert!((c.lock_wait_time - f * d1).abs() < 1e-9);
    assert!(c.vcs >= 1);

    // A single sandbox never contends for the lock.
    let mut cfg1 = cfg.clone();
    cfg1.initial_sandboxes = Some(1);
    let sources = vec![Source::fixed(spec("OD").with_lock(true), vec![entry(0.0, d1), entry(0.0, d2)])];
    let out = host::run_sources(&cfg1, sources, &mut NoController).unwrap();
    assert_eq!(out.windows.last().unwrap().app_counters(0).lock_wait_time, 0.0);
}

#[test]
fn enforcement_examples() {
    let sources = vec![
        Source::fixed(spec("A"), vec![]),
        Source::fixed(spec("B"), vec![]),
    ];
    let cfg = quiet(6, 1.0);
    let mut ctl = AtStart(|h: &mut HostControl<'_>| {
        let r = h.apply_sched_policy(0, PolicyValue::Set(80), PolicyValue::Set(2)).unwrap();
        assert!(r.is_accepted());
        let (params, dedicated, affinity) = h.app_policy(0).unwrap();
        assert_eq!(params, SchedParams::rr(80));
        assert_eq!(dedicated, CoreMask::from_cores([0, 1]));
        assert_eq!(affinity, dedicated);

        // Next app gets the next lowest free cores.
        assert!(h.apply_sched_policy(1, PolicyValue::Set(10), PolicyValue::Set(3)).unwrap().is_accepted());
        assert_eq!(h.app_policy(1).unwrap().1, CoreMask::from_cores([2, 3, 4]));
        // 2 + 3 + 1 would leave no shared core.
        let r = h.apply_sched_policy(0, PolicyValue::Set(80), PolicyValue::Set(3)).unwrap();
        assert!(!r.is_accepted());
        assert_eq!(h.app_policy(0).unwrap(), (SchedParams::OTHER, CoreMask::EMPTY, CoreMask::all(6)));

        let r = h.apply_sched_policy(1, PolicyValue::Set(105), PolicyValue::Set(1)).unwrap();
        assert!(!r.is_accepted());
        assert_eq!(h.app_policy(1).unwrap().0.class, SchedClass::Other);

        h.apply_sched_policy(0, PolicyValue::Set(30), PolicyValue::Set(1)).unwrap();
        h.apply_sched_policy(0, PolicyValue::Revoke, PolicyValue::Revoke).unwrap();
        assert_eq!(h.app_policy(0).unwrap(), (SchedParams::OTHER, CoreMask::EMPTY, CoreMask::all(6)));
        assert!(h.apply_sched_policy(7, PolicyValue::Revoke, PolicyValue::Revoke).is_err());
        assert_eq!(h.enforcement_log().len(), 6);
    });
    host::run_sources(&cfg, sources, &mut ctl).unwrap();
}

/// Flips policies every window to exercise preemption and migration paths.
struct Churn {
    step: usize,
}

impl Controller for Churn {
    fn on_window(&mut self, h: &mut HostControl<'_>) -> Result<()> {
        self.step += 1;
        let n = h.specs().len();
        let app = self.step % n;
        let prio = match self.step % 4 {
            0 => PolicyValue::Revoke,
            k => PolicyValue::Set(20 * k as i32),
        };
        let cores = PolicyValue::Set((self.step % 3) as i32);
        h.apply_sched_policy(app, prio, cores)?;
        if self.step % 5 == 0 {
            h.set_affinity((app + 1) % n, CoreMask::from_cores([1, 3, 5]))?;
        }
        Ok(())
    }
}

#[test]
fn scheduler_invariants_hold_under_policy_churn() {
    let cat = builtin_catalog();
    let ids = ["EG", "OD", "VP", "PC", "DV"];
    let sources: Vec<_> = ids
        .iter()
        .enumerate()
        .map(|(i, id)| Source::stream(&RequestStream::new(find_spec(&cat, id).unwrap().clone(), 7 + i as u64, 300.0)))
        .collect();
    let cfg = SimConfig {
        horizon: 300.0,
        window: 2.0,
        ..SimConfig::default()
    };
    let out = host::run_checked(&cfg, sources, &mut Churn { step: 0 }).unwrap();
    assert!(out.invariant_violations.is_empty(), "{:#?}", &out.invariant_violations[..5.min(out.invariant_violations.len())]);
    assert!(out.records.len() > 1000);
    for w in out.windows.windows(2) {
        for (p0, p1) in w[0].processes.iter().zip(&w[1].processes) {
            let d = p1.counters;
            let c = p0.counters;
            assert!(d.cpu_wait_time >= c.cpu_wait_time && d.nvcs >= c.nvcs && d.itlb_misses >= c.itlb_misses);
        }
    }
}

#[test]
fn counters_cover_window_length() {
    let cat = builtin_catalog();
    let streams = vec![
        RequestStream::new(find_spec(&cat, "EG").unwrap().clone(), 1, 60.0),
        RequestStream::new(find_spec(&cat, "VP").unwrap().clone(), 2, 60.0),
    ];
    let cfg = SimConfig {
        horizon: 60.0,
        ..SimConfig::default()
    };
    let out = host::run(&cfg, &streams, &mut NoController).unwrap();
    let last = out.windows.last().unwrap();
    for p in &last.processes {
        let c = p.counters;
        let total = c.cpu_wait_time + c.run_time + c.sleep_time;
        // Lock wait is part of cpu_wait_time; threads each account separately.
        let expect = p.threads as f64 * last.time;
        assert!(total <= expect + 1e-6, "pid {} {total} > {expect}", p.pid);
    }
    let first_pids: Vec<_> = out.windows[0].processes.iter().map(|p| p.pid).collect();
    let p = last.process(first_pids[0]).unwrap();
    let c = p.counters;
    assert!((c.cpu_wait_time + c.run_time + c.sleep_time - p.threads as f64 * last.time).abs() < 1e-6);
}

#[test]
fn dedicated_cores_stop_itlb_flushes() {
    let cat = builtin_catalog();
    let streams = vec![
        RequestStream::new(find_spec(&cat, "EG").unwrap().clone(), 3, 200.0),
        RequestStream::new(find_spec(&cat, "VP").unwrap().clone(), 4, 200.0),
    ];
    let cfg = SimConfig {
        horizon: 200.0,
        ..SimConfig::default()
    };
    let mut ctl = AtStart(|h: &mut HostControl<'_>| {
        assert!(h.apply_sched_policy(0, PolicyValue::Set(50), PolicyValue::Set(2)).unwrap().is_accepted());
    });
    let out = host::run(&cfg, &streams, &mut ctl).unwrap();
    let warm = out.windows[1].app_counters(0).itlb_flushes;
    let end = out.windows.last().unwrap().app_counters(0).itlb_flushes;
    assert_eq!(end, warm, "flushes kept growing after warmup");
    let vp = out.windows.last().unwrap().app_counters(1).itlb_flushes;
    assert!(vp > 0);
}

#[test]
fn autoscale_tracks_required_servers() {
    let cat = builtin_catalog();
    let ir = find_spec(&cat, "IR").unwrap().clone();
    let cfg = SimConfig {
        horizon: 120.0,
        interference: InterferenceConfig::none(),
        ..SimConfig::default()
    };
    let out = host::run(&cfg, &[RequestStream::new(ir.clone(), 5, 120.0)], &mut NoController).unwrap();
    let last = out.windows.last().unwrap();
    assert!(last.apps[0].sandboxes <= 2);

    let mut doubled = ir.clone();
    doubled.arrival_rate *= 2.0;
    let out = host::run(&cfg, &[RequestStream::new(doubled, 5, 120.0)], &mut NoController).unwrap();
    assert_eq!(out.windows.last().unwrap().apps[0].sandboxes, 2);

    let mut heavy = ir;
    heavy.arrival_rate *= 10.0;
    heavy.mean_service_time /= 5.0;
    let out = host::run(&cfg, &[RequestStream::new(heavy, 5, 60.0)], &mut NoController).unwrap();
    assert!(out.windows.iter().all(|w| w.apps[0].sandboxes <= 2));
    let procs = out.windows.last().unwrap().processes_of(0).count();
    assert!(procs <= 7);
}

#[test]
fn cold_start_marks_first_request_of_new_sandbox() {
    let s = FunctionSpec::new("X", Category::LS, 0.1, 20.0);
    let cfg = SimConfig {
        horizon: 60.0,
        interference: InterferenceConfig::none(),
        initial_sandboxes: Some(1),
        ..SimConfig::default()
    };
    let out = host::run(&cfg, &[RequestStream::new(s, 9, 60.0)], &mut NoController).unwrap();
    let colds = out.records.iter().filter(|r| r.cold_start).count();
    assert_eq!(colds, 1, "one scale-up from 1 to 2 sandboxes");
}

#[test]
fn colocation_never_reduces_ls_wait() {
    let cat = builtin_catalog();
    let eg = find_spec(&cat, "EG").unwrap().clone();
    let vp = find_spec(&cat, "VP").unwrap().clone();
    let cfg = SimConfig {
        horizon: 300.0,
        ..SimConfig::default()
    };
    let mut solo = Vec::new();
    let mut shared = Vec::new();
    for seed in 0..5u64 {
        let s = RequestStream::new(eg.clone(), seed, 300.0);
        let out = host::run(&cfg, &[s.clone()], &mut NoController).unwrap();
        solo.push(out.windows.last().unwrap().app_counters(0).cpu_wait_time);
        let v = RequestStream::new(vp.clone(), 1000 + seed, 300.0);
        let out = host::run(&cfg, &[s, v], &mut NoController).unwrap();
        shared.push(out.windows.last().unwrap().app_counters(0).cpu_wait_time);
    }
    solo.sort_by(f64::total_cmp);
    shared.sort_by(f64::total_cmp);
    assert!(shared[2] >= solo[2], "solo {solo:?} shared {shared:?}");
}
