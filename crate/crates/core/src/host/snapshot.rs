use serde::{Deserialize, Serialize};

use super::types::{CoreMask, Counters, Owner, Role, SchedParams};
use crate::workload::Category;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSnapshot {
    pub pid: u32,
    pub owner: Owner,
    pub role: Role,
    pub params: SchedParams,
    /// Effective affinity at snapshot time.
    pub mask: CoreMask,
    pub threads: usize,
    pub blocked_on_lock: bool,
    pub counters: Counters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppSnapshot {
    pub index: usize,
    pub id: String,
    pub category: Category,
    pub uses_futex_lock: bool,
    pub isolated_ipc: f64,
    pub params: SchedParams,
    pub dedicated: CoreMask,
    pub affinity: CoreMask,
    pub pids: Vec<u32>,
    pub sandboxes: usize,
    pub arrivals: u64,
    pub completions: u64,
}

/// Cumulative host state at a window boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostSnapshot {
    pub time: f64,
    pub num_cores: usize,
    pub processes: Vec<ProcessSnapshot>,
    pub apps: Vec<AppSnapshot>,
}

impl HostSnapshot {
    pub fn app(&self, index: usize) -> Option<&AppSnapshot> {
        self.apps.iter().find(|a| a.index == index)
    }

    pub fn app_by_id(&self, id: &str) -> Option<&AppSnapshot> {
        self.apps.iter().find(|a| a.id == id)
    }

    pub fn processes_of(&self, app: usize) -> impl Iterator<Item = &ProcessSnapshot> {
        self.processes
            .iter()
            .filter(move |p| p.owner == Owner::App(app))
    }

    pub fn process(&self, pid: u32) -> Option<&ProcessSnapshot> {
        self.processes.iter().find(|p| p.pid == pid)
    }

    /// Counters summed over every process of `app`.
    pub fn app_counters(&self, app: usize) -> Counters {
        let mut total = Counters::default();
        for p in self.processes_of(app) {
            total.add(&p.counters);
        }
        total
    }

    /// Worker-process counters summed for `app`.
    pub fn worker_counters(&self, app: usize) -> Counters {
        let mut total = Counters::default();
        for p in self.processes_of(app).filter(|p| p.role == Role::Worker) {
            total.add(&p.counters);
        }
        total
    }
}
