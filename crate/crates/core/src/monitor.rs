//! Per-window observations built from host snapshots.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::{HostSnapshot, Role};
use crate::workload::Category;

/// Observation for one application at the end of a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppState {
    pub app: usize,
    pub f_pid: Vec<u32>,
    /// Real-time priority; 0 for SCHED_OTHER.
    pub p_id: i32,
    /// Dedicated core count.
    pub a_id: usize,
    pub f_lock: bool,
    /// CPU wait seconds, nvcs, iTLB misses over the window.
    pub s_cont: [f64; 3],
    pub s_fair: f64,
    pub p_low: usize,
    pub p_high: usize,
    pub a_other: usize,
}

/// Largest process list reported in an observation.
pub const MAX_PIDS: usize = 7;

fn check_app(snap: &HostSnapshot, app: usize) -> Result<()> {
    if snap.app(app).is_none() {
        return Err(Error::invalid(format!("app {app} not in snapshot")));
    }
    Ok(())
}

/// Contention deltas of `app` between two snapshots. `prev = None` means the
/// run start, where every counter is zero.
pub fn collect_window(prev: Option<&HostSnapshot>, cur: &HostSnapshot, app: usize) -> Result<[f64; 3]> {
    check_app(cur, app)?;
    let end = cur.app_counters(app);
    let d = match prev {
        Some(p) => {
            // Processes spawned during the window are absent from `prev` and
            // contribute from zero.
            let start = p.app_counters(app);
            end.delta(&start)
        }
        None => end,
    };
    Ok([d.cpu_wait_time, d.nvcs as f64, d.itlb_misses])
}

/// Ratio of the smallest to the largest slowdown.
pub fn fairness(slowdowns: &[f64]) -> Result<f64> {
    if slowdowns.is_empty() {
        return Err(Error::invalid("fairness of an empty slowdown list"));
    }
    if let Some(bad) = slowdowns.iter().find(|s| !(**s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid(format!("slowdown {bad} is not positive")));
    }
    let min = slowdowns.iter().copied().fold(f64::INFINITY, f64::min);
    let max = slowdowns.iter().copied().fold(0.0, f64::max);
    Ok(min / max)
}

/// Window IPC of `app`'s workers divided by its isolated IPC. Apps whose
/// workers retired nothing this window count as unslowed.
pub fn slowdown(prev: Option<&HostSnapshot>, cur: &HostSnapshot, app: usize) -> Result<f64> {
    let info = cur
        .app(app)
        .ok_or_else(|| Error::invalid(format!("app {app} not in snapshot")))?;
    let end = cur.worker_counters(app);
    let d = match prev {
        Some(p) => end.delta(&p.worker_counters(app)),
        None => end,
    };
    if d.cycles <= 0.0 || d.instructions <= 0.0 {
        return Ok(1.0);
    }
    let ipc = d.instructions / d.cycles;
    Ok((ipc / info.isolated_ipc).clamp(1e-6, 1.0))
}

/// Fairness over every app on the host.
pub fn host_fairness(prev: Option<&HostSnapshot>, cur: &HostSnapshot) -> Result<f64> {
    let slow = cur
        .apps
        .iter()
        .map(|a| slowdown(prev, cur, a.index))
        .collect::<Result<Vec<_>>>()?;
    if slow.is_empty() {
        return Ok(1.0);
    }
    fairness(&slow)
}

/// Whether the app's processes contend on a shared lock. The simulator reads
/// the flag from the function spec.
pub fn detect_lock_usage(snap: &HostSnapshot, app: usize) -> Result<bool> {
    snap.app(app)
        .map(|a| a.uses_futex_lock)
        .ok_or_else(|| Error::invalid(format!("app {app} not in snapshot")))
}

pub fn assemble_state(prev: Option<&HostSnapshot>, cur: &HostSnapshot, app: usize) -> Result<AppState> {
    let s_cont = collect_window(prev, cur, app)?;
    let info = cur.app(app).expect("checked by collect_window");
    let p_id = info.params.priority_level();
    let (mut p_low, mut p_high) = (0, 0);
    for p in &cur.processes {
        if p.owner.app() == Some(app) || !p.params.is_rr() {
            continue;
        }
        if p.params.priority_level() <= p_id {
            p_low += 1;
        } else {
            p_high += 1;
        }
    }
    let a_other = cur
        .apps
        .iter()
        .filter(|a| a.index != app && a.category == Category::LS)
        .map(|a| a.dedicated.count())
        .sum();
    let mut f_pid: Vec<u32> = cur
        .processes_of(app)
        .filter(|p| p.role != Role::Daemon)
        .map(|p| p.pid)
        .collect();
    f_pid.truncate(MAX_PIDS);
    Ok(AppState {
        app,
        f_pid,
        p_id,
        a_id: info.dedicated.count(),
        f_lock: detect_lock_usage(cur, app)?,
        s_cont,
        s_fair: host_fairness(prev, cur)?,
        p_low,
        p_high,
        a_other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::host::{AppSnapshot, CoreMask, Counters, Owner, ProcessSnapshot, SchedParams};

    fn proc_(pid: u32, app: usize, params: SchedParams, counters: Counters) -> ProcessSnapshot {
        ProcessSnapshot {
            pid,
            owner: Owner::App(app),
            role: Role::Worker,
            params,
            mask: CoreMask::all(6),
            threads: 1,
            blocked_on_lock: false,
            counters,
        }
    }

    fn app(index: usize, params: SchedParams, dedicated: usize) -> AppSnapshot {
        AppSnapshot {
            index,
            id: format!("A{index}"),
            category: Category::LS,
            uses_futex_lock: index == 2,
            isolated_ipc: 2.0,
            params,
            dedicated: CoreMask::range(0, dedicated),
            affinity: CoreMask::all(6),
            pids: vec![],
            sandboxes: 1,
            arrivals: 0,
            completions: 0,
        }
    }

    fn snap(apps: Vec<AppSnapshot>, processes: Vec<ProcessSnapshot>) -> HostSnapshot {
        HostSnapshot {
            time: 5.0,
            num_cores: 6,
            processes,
            apps,
        }
    }

    #[test]
    fn fairness_examples() {
        assert_eq!(fairness(&[0.7, 0.7, 0.7]).unwrap(), 1.0);
        assert_eq!(fairness(&[0.5, 1.0]).unwrap(), 0.5);
        assert!((fairness(&[0.9, 0.6, 0.75]).unwrap() - 0.6 / 0.9).abs() < 1e-15);
        assert!(fairness(&[]).is_err());
        assert!(fairness(&[0.5, 0.0]).is_err());
        assert!(fairness(&[0.5, -1.0]).is_err());
    }

    #[test]
    fn single_app_has_no_neighbours() {
        let s = snap(vec![app(0, SchedParams::OTHER, 0)], vec![proc_(1, 0, SchedParams::OTHER, Counters::default())]);
        let st = assemble_state(None, &s, 0).unwrap();
        assert_eq!((st.p_low, st.p_high, st.a_other), (0, 0, 0));
        assert_eq!(st.p_id, 0);
        assert_eq!(st.s_fair, 1.0);
        assert!(!st.f_lock);
    }

    #[test]
    fn priority_partition_counts() {
        let rr40 = SchedParams::rr(40);
        let rr90 = SchedParams::rr(90);
        let mut procs = vec![proc_(1, 0, SchedParams::rr(50), Counters::default())];
        for i in 0..3 {
            procs.push(proc_(10 + i, 1, rr40, Counters::default()));
            procs.push(proc_(20 + i, 2, rr90, Counters::default()));
        }
        let s = snap(
            vec![app(0, SchedParams::rr(50), 0), app(1, rr40, 1), app(2, rr90, 2)],
            procs.clone(),
        );
        let st = assemble_state(None, &s, 0).unwrap();
        assert_eq!((st.p_low, st.p_high), (3, 3));
        assert_eq!(st.a_other, 3);
        assert_eq!(st.p_id, 50);

        procs[0].params = SchedParams::OTHER;
        let s = snap(
            vec![app(0, SchedParams::OTHER, 0), app(1, rr40, 0), app(2, rr90, 0)],
            procs,
        );
        let st = assemble_state(None, &s, 0).unwrap();
        assert_eq!((st.p_low, st.p_high), (0, 6));
        assert!(detect_lock_usage(&s, 2).unwrap());
    }

    #[test]
    fn window_deltas_are_exact_and_nonnegative() {
        let c0 = Counters {
            cpu_wait_time: 1.0,
            nvcs: 4,
            itlb_misses: 100.0,
            ..Counters::default()
        };
        let c1 = Counters {
            cpu_wait_time: 1.5,
            nvcs: 9,
            itlb_misses: 180.0,
            ..Counters::default()
        };
        let a = vec![app(0, SchedParams::OTHER, 0)];
        let before = snap(a.clone(), vec![proc_(1, 0, SchedParams::OTHER, c0), proc_(2, 0, SchedParams::OTHER, c0)]);
        let after = snap(a, vec![proc_(1, 0, SchedParams::OTHER, c1), proc_(2, 0, SchedParams::OTHER, c1)]);
        let d = collect_window(Some(&before), &after, 0).unwrap();
        assert_eq!(d, [1.0, 10.0, 160.0]);
        assert!(collect_window(None, &after, 3).is_err());
    }

    #[test]
    fn slowdown_uses_worker_ipc() {
        let c = Counters {
            instructions: 3.0e9,
            cycles: 2.0e9,
            ..Counters::default()
        };
        let s = snap(vec![app(0, SchedParams::OTHER, 0)], vec![proc_(1, 0, SchedParams::OTHER, c)]);
        assert!((slowdown(None, &s, 0).unwrap() - 0.75).abs() < 1e-12);
    }
}
