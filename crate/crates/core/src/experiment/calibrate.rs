//! Solo runs that provide isolated baselines and preprocessing bounds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::seeds::{derive_seed, Tag};
use crate::agent::CalibrationBounds;
use crate::error::{Error, Result};
use crate::host::{self, HostSnapshot, NoController, RunOutput};
use crate::metrics::{latencies, LatencyKind, LatencyStats};
use crate::monitor::collect_window;
use crate::workload::{FunctionSpec, RequestStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolatedBaseline {
    pub id: String,
    /// Worker IPC measured over the solo run.
    pub measured_ipc: f64,
    pub execution: LatencyStats,
    pub response: LatencyStats,
    /// Mean per-window (cpu wait, nvcs, iTLB misses).
    pub contention_per_window: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub seed: u64,
    pub duration: f64,
    pub num_cores: usize,
    pub apps: Vec<IsolatedBaseline>,
    pub bounds: CalibrationBounds,
}

impl Calibration {
    pub fn baseline(&self, id: &str) -> Option<&IsolatedBaseline> {
        self.apps.iter().find(|a| a.id == id)
    }

    pub fn isolated_stats(&self, id: &str, kind: LatencyKind) -> Option<LatencyStats> {
        self.baseline(id).map(|b| match kind {
            LatencyKind::Execution => b.execution,
            LatencyKind::Response => b.response,
        })
    }

    /// Copies measured contention baselines into matching specs.
    pub fn annotate(&self, specs: &mut [FunctionSpec]) {
        for s in specs {
            if let Some(b) = self.baseline(&s.id) {
                s.isolated_contention_baseline = b.contention_per_window;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
    }
}

/// Per-window contention of `app` across a run.
pub fn window_contention(windows: &[HostSnapshot], app: usize) -> Result<Vec<[f64; 3]>> {
    let mut out = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| &windows[j]);
        out.push(collect_window(prev, w, app)?);
    }
    Ok(out)
}

fn solo(cfg: &ExperimentConfig, spec: &FunctionSpec, index: usize) -> Result<RunOutput> {
    let duration = cfg.experiment.calibration_duration;
    let seed = cfg.experiment.seed;
    let mut host_cfg = cfg.host.clone();
    host_cfg.horizon = duration;
    host_cfg.seed = derive_seed(seed, Tag::Calibration, 1000 + index as u64);
    host_cfg.record_event_trace = false;
    let stream = RequestStream::new(spec.clone(), derive_seed(seed, Tag::Calibration, index as u64), duration);
    host::run(&host_cfg, &[stream], &mut NoController)
}

/// Headroom applied to the largest contention seen during calibration.
const BOUND_HEADROOM: f64 = 1.25;

/// Runs every app of both mixes alone, then the full training mix together
/// to bound contention under colocation.
pub fn calibrate(cfg: &ExperimentConfig) -> Result<Calibration> {
    let specs = cfg.all_specs()?;
    let runs: Vec<Result<RunOutput>> = std::thread::scope(|s| {
        let handles: Vec<_> = specs
            .iter()
            .enumerate()
            .map(|(i, spec)| s.spawn(move || solo(cfg, spec, i)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("calibration thread")).collect()
    });

    let mut apps = Vec::new();
    let mut max_seen = [0.0f64; 3];
    for (spec, run) in specs.iter().zip(runs) {
        let out = run?;
        let per_window = window_contention(&out.windows, 0)?;
        let mut mean = [0.0; 3];
        for w in &per_window {
            for k in 0..3 {
                mean[k] += w[k] / per_window.len().max(1) as f64;
                max_seen[k] = max_seen[k].max(w[k]);
            }
        }
        let c = out.windows.last().map(|w| w.worker_counters(0)).unwrap_or_default();
        let measured_ipc = if c.cycles > 0.0 {
            c.instructions / c.cycles
        } else {
            spec.isolated_ipc
        };
        apps.push(IsolatedBaseline {
            id: spec.id.clone(),
            measured_ipc,
            execution: LatencyStats::of(&latencies(&out.records, &spec.id, LatencyKind::Execution)),
            response: LatencyStats::of(&latencies(&out.records, &spec.id, LatencyKind::Response)),
            contention_per_window: mean,
        });
    }

    let mix = cfg.train_specs()?;
    if mix.len() > 1 {
        let duration = cfg.experiment.calibration_duration.min(900.0);
        let mut host_cfg = cfg.host.clone();
        host_cfg.horizon = duration;
        host_cfg.seed = derive_seed(cfg.experiment.seed, Tag::Calibration, 2000);
        let streams: Vec<RequestStream> = mix
            .iter()
            .enumerate()
            .map(|(i, s)| RequestStream::new(s.clone(), derive_seed(cfg.experiment.seed, Tag::Calibration, 3000 + i as u64), duration))
            .collect();
        let out = host::run(&host_cfg, &streams, &mut NoController)?;
        for app in 0..mix.len() {
            for w in window_contention(&out.windows, app)? {
                for k in 0..3 {
                    max_seen[k] = max_seen[k].max(w[k]);
                }
            }
        }
    }

    let floor = [1e-3, 1.0, 1.0];
    let bounds = match &cfg.bounds {
        Some(b) => b.clone(),
        None => CalibrationBounds {
            cont_min: [0.0; 3],
            cont_max: std::array::from_fn(|k| (max_seen[k] * BOUND_HEADROOM).max(floor[k])),
            ..CalibrationBounds::defaults(cfg.host.num_cores)
        },
    };
    bounds.validate()?;
    Ok(Calibration {
        seed: cfg.experiment.seed,
        duration: cfg.experiment.calibration_duration,
        num_cores: cfg.host.num_cores,
        apps,
        bounds,
    })
}

/// Loads the calibration file, or runs and saves a calibration if none exists.
pub fn load_or_calibrate(cfg: &ExperimentConfig) -> Result<Calibration> {
    let path = cfg.calibration_path();
    if path.exists() {
        let cal = Calibration::load(&path)?;
        let missing: Vec<String> = cfg
            .all_specs()?
            .into_iter()
            .filter(|s| cal.baseline(&s.id).is_none())
            .map(|s| s.id)
            .collect();
        if missing.is_empty() {
            return Ok(cal);
        }
    }
    let cal = calibrate(cfg)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    cal.save(&path)?;
    Ok(cal)
}
