use std::io::Write;
use std::path::Path;

use serde::Serialize;

use super::calibrate::Calibration;
use super::config::{ControllerKind, ExperimentConfig};
use super::csv_io::{emit_csv, write_atomically};
use super::seeds::{derive_seed, Tag};
use crate::agent::{AgentNets, Decision, FaaSchedController, Phase};
use crate::baselines::{PartitionController, PriorityScheme, SchemeController};
use crate::error::{Error, Result};
use crate::host::{self, Controller, NoController, RunOutput, RunStats};
use crate::metrics::{summarize, write_summary_file, SummaryRow, QUARTILE_METHOD};
use crate::monitor::assemble_state;
use crate::workload::{FunctionSpec, RequestStream};

/// Simulates `specs` for `horizon` seconds with seeds from `tag`.
pub fn simulate(
    cfg: &ExperimentConfig,
    specs: &[FunctionSpec],
    horizon: f64,
    tag: Tag,
    controller: &mut dyn Controller,
) -> Result<RunOutput> {
    let seed = cfg.experiment.seed;
    let mut host_cfg = cfg.host.clone();
    host_cfg.horizon = horizon;
    host_cfg.seed = derive_seed(seed, tag, 1000);
    let streams: Vec<RequestStream> = specs
        .iter()
        .enumerate()
        .map(|(i, s)| RequestStream::new(s.clone(), derive_seed(seed, tag, i as u64), horizon))
        .collect();
    host::run(&host_cfg, &streams, controller)
}

pub fn new_agent(cfg: &ExperimentConfig, cal: &Calibration) -> Result<FaaSchedController> {
    let ctl = FaaSchedController::new(
        cfg.agent,
        cfg.reward,
        cal.bounds.clone(),
        cfg.action,
        derive_seed(cfg.experiment.seed, Tag::Controller, 0),
    )?;
    Ok(if cfg.experiment.shared_agent {
        ctl
    } else {
        ctl.per_app_agents()
    })
}

/// Interleaved training over the training mix.
pub fn train(cfg: &ExperimentConfig, cal: &Calibration, agent: &mut FaaSchedController) -> Result<RunOutput> {
    let total = cfg.experiment.train_duration;
    agent.set_phase(Phase::Train { total });
    let specs = cfg.train_specs()?;
    let out = simulate(cfg, &specs, total, Tag::Train, agent);
    agent.set_phase(Phase::Evaluate);
    let _ = cal;
    out
}

pub fn baseline_controller(cfg: &ExperimentConfig) -> Result<Box<dyn Controller>> {
    let seed = derive_seed(cfg.experiment.seed, Tag::Controller, 1);
    Ok(match cfg.experiment.controller {
        ControllerKind::Faasched => {
            return Err(Error::config("faasched is not a baseline"));
        }
        ControllerKind::Lass => Box::new(NoController),
        ControllerKind::Scheme(kind) => {
            let mut scheme = PriorityScheme::new(kind);
            scheme.step = cfg.baseline.scheme_step;
            scheme.fixed_value = cfg.baseline.fixed_priority;
            Box::new(SchemeController::new(scheme, seed))
        }
        ControllerKind::Partition { m, n } => {
            Box::new(PartitionController::new(m, n, cfg.host.num_cores).map_err(|e| Error::config(e.to_string()))?)
        }
    })
}

/// Everything an experiment produced.
pub struct ExperimentResult {
    pub specs: Vec<FunctionSpec>,
    pub eval: RunOutput,
    pub train_stats: Option<RunStats>,
    pub train_decisions: Vec<Decision>,
    pub eval_decisions: Vec<Decision>,
    pub nets: Vec<AgentNets>,
    pub summary: Vec<SummaryRow>,
}

/// Runs the configured controller on the evaluation mix. The learning
/// controller first trains, unless `nets` supplies trained parameters.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    cal: &Calibration,
    nets: Option<Vec<AgentNets>>,
) -> Result<ExperimentResult> {
    let mut specs = cfg.eval_specs()?;
    cal.annotate(&mut specs);
    let horizon = cfg.host.horizon;
    let mut train_stats = None;
    let mut train_decisions = Vec::new();
    let mut eval_decisions = Vec::new();
    let mut trained = Vec::new();
    let eval = match cfg.experiment.controller {
        ControllerKind::Faasched => {
            let mut agent = new_agent(cfg, cal)?;
            match nets {
                Some(n) => agent = agent.with_nets(n),
                None => {
                    let out = train(cfg, cal, &mut agent)?;
                    train_stats = Some(out.stats);
                    train_decisions = agent.take_decisions();
                }
            }
            agent.set_phase(Phase::Evaluate);
            let out = simulate(cfg, &specs, horizon, Tag::Eval, &mut agent)?;
            eval_decisions = agent.take_decisions();
            trained = agent.nets().to_vec();
            out
        }
        _ => {
            let mut ctl = baseline_controller(cfg)?;
            simulate(cfg, &specs, horizon, Tag::Eval, ctl.as_mut())?
        }
    };
    let ids: Vec<String> = specs.iter().map(|s| s.id.clone()).collect();
    let summary = summarize(&eval.records, &ids, |id, kind| cal.isolated_stats(id, kind));
    Ok(ExperimentResult {
        specs,
        eval,
        train_stats,
        train_decisions,
        eval_decisions,
        nets: trained,
        summary,
    })
}

pub const WINDOW_HEADER: &str =
    "time,app,p_id,a_id,f_lock,cpu_wait,nvcs,itlb_misses,s_fair,p_low,p_high,a_other,sandboxes";

pub fn write_window_states(out: &RunOutput, path: &Path) -> Result<()> {
    write_atomically(path, |w| {
        let io = |e| Error::io(path, e);
        writeln!(w, "{WINDOW_HEADER}").map_err(io)?;
        for (i, snap) in out.windows.iter().enumerate() {
            let prev = i.checked_sub(1).map(|j| &out.windows[j]);
            for app in &snap.apps {
                let s = assemble_state(prev, snap, app.index)?;
                writeln!(
                    w,
                    "{:?},{},{},{},{},{:?},{:?},{:?},{:?},{},{},{},{}",
                    snap.time,
                    app.id,
                    s.p_id,
                    s.a_id,
                    s.f_lock as u8,
                    s.s_cont[0],
                    s.s_cont[1],
                    s.s_cont[2],
                    s.s_fair,
                    s.p_low,
                    s.p_high,
                    s.a_other,
                    app.sandboxes
                )
                .map_err(io)?;
            }
        }
        Ok(())
    })
}

pub const DECISION_HEADER: &str = "time,app,p_id,a_id,mode,action,priority,cores,accepted,reward,td_error";

pub fn write_decisions(decisions: &[Decision], specs: &[FunctionSpec], path: &Path) -> Result<()> {
    write_atomically(path, |w| {
        let io = |e| Error::io(path, e);
        writeln!(w, "{DECISION_HEADER}").map_err(io)?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for d in decisions {
            let app = specs.get(d.app).map(|s| s.id.as_str()).unwrap_or("?");
            writeln!(
                w,
                "{:?},{},{},{},{:?},\"{}\",{:?},{:?},{},{},{}",
                d.time,
                app,
                d.state.p_id,
                d.state.a_id,
                d.mode,
                d.action,
                d.attempt.priority,
                d.attempt.cores,
                d.accepted.map(|a| a.to_string()).unwrap_or_default(),
                opt(d.reward),
                opt(d.td_error)
            )
            .map_err(io)?;
        }
        Ok(())
    })
}

#[derive(Serialize)]
struct Metadata<'a> {
    controller: String,
    quartile_method: &'static str,
    variance: &'static str,
    config: &'a ExperimentConfig,
    specs: &'a [FunctionSpec],
    calibration_bounds: &'a crate::agent::CalibrationBounds,
    eval_stats: &'a RunStats,
    train_stats: Option<&'a RunStats>,
    agent_updates: Vec<u64>,
    agent_skipped_updates: Vec<u64>,
}

/// Writes requests, window states, summary, decisions, checkpoint and metadata.
pub fn write_outputs(cfg: &ExperimentConfig, cal: &Calibration, res: &ExperimentResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    emit_csv(&res.eval.records, &dir.join("requests.csv"))?;
    write_window_states(&res.eval, &dir.join("windows.csv"))?;
    write_summary_file(&res.summary, &dir.join("summary.csv"))?;
    if cfg.experiment.controller == ControllerKind::Faasched {
        write_decisions(&res.eval_decisions, &res.specs, &dir.join("decisions.csv"))?;
        if !res.train_decisions.is_empty() {
            let train_specs = cfg.train_specs()?;
            write_decisions(&res.train_decisions, &train_specs, &dir.join("train_decisions.csv"))?;
        }
        save_nets(&res.nets, &dir.join("agent.ckpt"))?;
    }
    let meta = Metadata {
        controller: cfg.experiment.controller.to_string(),
        quartile_method: QUARTILE_METHOD,
        variance: "population",
        config: cfg,
        specs: &res.specs,
        calibration_bounds: &cal.bounds,
        eval_stats: &res.eval.stats,
        train_stats: res.train_stats.as_ref(),
        agent_updates: res.nets.iter().map(|n| n.steps).collect(),
        agent_skipped_updates: res.nets.iter().map(|n| n.skipped).collect(),
    };
    let path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serde(e.to_string()))?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

const NET_SEPARATOR: &str = "--- next agent ---";

/// One checkpoint block per network pair.
pub fn save_nets(nets: &[AgentNets], path: &Path) -> Result<()> {
    let blocks: Vec<String> = nets.iter().map(|n| n.to_checkpoint()).collect();
    let text = blocks.join(&format!("{NET_SEPARATOR}\n"));
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_nets(path: &Path) -> Result<Vec<AgentNets>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.split(&format!("{NET_SEPARATOR}\n"))
        .map(AgentNets::from_checkpoint)
        .collect()
}
