//! The learning scheduling controller.
//!
//! Every window it finishes the previous decision (reward, and a learning
//! update if that decision was an exploration step), then decides for the
//! next latency-sensitive app in round-robin order.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::a2c::{exploration_ratio, AgentConfig, AgentNets, Mode};
use super::action::{mask_actions, resolve, Resolved, SchedAction, Steps, NUM_ACTIONS};
use super::features::{preprocess, CalibrationBounds};
use super::reward::{out_of_range, reward, RewardConfig};
use crate::error::{Error, Result};
use crate::host::{Controller, Enforcement, HostControl, HostSnapshot, PolicyValue};
use crate::monitor::{assemble_state, AppState};

/// How decisions are taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Phase {
    /// Interleaved exploration and exploitation; exploration steps learn.
    /// The exploration share decays over `total` simulated seconds.
    Train { total: f64 },
    /// Greedy decisions, no learning.
    Evaluate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub time: f64,
    pub app: usize,
    pub state: AppState,
    pub action: SchedAction,
    pub mode: Mode,
    pub attempt: Resolved,
    /// `None` when the action kept the current policy.
    pub accepted: Option<bool>,
    /// Filled in one window later.
    pub reward: Option<f64>,
    pub td_error: Option<f64>,
}

struct Pending {
    decision: usize,
    x: Vec<f64>,
    mask: [bool; NUM_ACTIONS],
    penalized: bool,
}

pub struct FaaSchedController {
    nets: Vec<AgentNets>,
    shared: bool,
    bounds: CalibrationBounds,
    reward_cfg: RewardConfig,
    steps: Steps,
    phase: Phase,
    rng: ChaCha8Rng,
    ls_apps: Vec<usize>,
    next_app: usize,
    pending: Option<Pending>,
    script: Option<VecDeque<SchedAction>>,
    decisions: Vec<Decision>,
}

impl FaaSchedController {
    pub fn new(
        agent: AgentConfig,
        reward_cfg: RewardConfig,
        bounds: CalibrationBounds,
        steps: Steps,
        seed: u64,
    ) -> Result<Self> {
        agent.validate()?;
        reward_cfg.validate()?;
        bounds.validate()?;
        Ok(FaaSchedController {
            nets: vec![AgentNets::new(agent)],
            shared: true,
            bounds,
            reward_cfg,
            steps,
            phase: Phase::Evaluate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ls_apps: Vec::new(),
            next_app: 0,
            pending: None,
            script: None,
            decisions: Vec::new(),
        })
    }

    /// One network pair per latency-sensitive app instead of a shared one.
    /// Takes effect at the next run start.
    pub fn per_app_agents(mut self) -> Self {
        self.shared = false;
        self
    }

    pub fn with_phase(mut self, phase: Phase) -> Self {
        self.phase = phase;
        self
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    /// Replaces the policy with a fixed action sequence; `(0, 0)` once exhausted.
    pub fn with_script(mut self, actions: impl IntoIterator<Item = SchedAction>) -> Self {
        self.script = Some(actions.into_iter().collect());
        self
    }

    pub fn with_nets(mut self, nets: Vec<AgentNets>) -> Self {
        self.shared = nets.len() == 1;
        self.nets = nets;
        self
    }

    pub fn nets(&self) -> &[AgentNets] {
        &self.nets
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn take_decisions(&mut self) -> Vec<Decision> {
        std::mem::take(&mut self.decisions)
    }

    fn net_index(&self, app: usize) -> usize {
        if self.shared {
            0
        } else {
            self.ls_apps.iter().position(|&a| a == app).unwrap_or(0)
        }
    }

    fn finish_pending(&mut self, h: &HostControl<'_>, prev: Option<&HostSnapshot>, cur: &HostSnapshot) -> Result<()> {
        let Some(p) = self.pending.take() else {
            return Ok(());
        };
        let d = &self.decisions[p.decision];
        let after = assemble_state(prev, cur, d.app)?;
        let r = if p.penalized {
            -self.reward_cfg.c
        } else {
            reward(&after, &d.attempt, h.num_cores(), &self.reward_cfg, &self.bounds)?
        };
        let mut td = None;
        if d.mode == Mode::Explore && matches!(self.phase, Phase::Train { .. }) {
            let x_next = preprocess(&after, &self.bounds)?.to_array();
            let k = self.net_index(d.app);
            td = self.nets[k].update(&p.x, d.action, &p.mask, r, &x_next)?;
        }
        let d = &mut self.decisions[p.decision];
        d.reward = Some(r);
        d.td_error = td;
        Ok(())
    }

    fn decide(&mut self, h: &mut HostControl<'_>, prev: Option<&HostSnapshot>, cur: &HostSnapshot) -> Result<()> {
        if self.ls_apps.is_empty() {
            return Ok(());
        }
        let app = self.ls_apps[self.next_app % self.ls_apps.len()];
        self.next_app += 1;
        let state = assemble_state(prev, cur, app)?;
        let x = preprocess(&state, &self.bounds)?.to_array();
        let mask = mask_actions(&state);
        let mode = match self.phase {
            Phase::Train { total } => {
                let explore = exploration_ratio(h.now(), total)?;
                if self.rng.random::<f64>() < explore {
                    Mode::Explore
                } else {
                    Mode::Exploit
                }
            }
            Phase::Evaluate => Mode::Exploit,
        };
        let k = self.net_index(app);
        let action = match self.script.as_mut() {
            Some(s) => s.pop_front().unwrap_or(SchedAction::new(
                super::action::Shift::Zero,
                super::action::Shift::Zero,
            )),
            None => {
                let eps = self.nets[k].cfg.epsilon;
                self.nets[k].select_action(&x, &mask, mode, eps, &mut self.rng)?
            }
        };
        if !mask[action.index()] {
            return Err(Error::Internal(format!("masked action {action} selected")));
        }
        let attempt = resolve(action, &state, self.steps);
        let mut penalized = out_of_range(&attempt, h.num_cores(), &self.reward_cfg);
        let accepted = if attempt.unchanged {
            None
        } else {
            let res = h.apply_sched_policy(app, attempt.priority, attempt.cores)?;
            if let Enforcement::Rejected { .. } = res {
                penalized = true;
                Some(false)
            } else {
                Some(true)
            }
        };
        self.decisions.push(Decision {
            time: h.now(),
            app,
            state,
            action,
            mode,
            attempt,
            accepted,
            reward: None,
            td_error: None,
        });
        self.pending = Some(Pending {
            decision: self.decisions.len() - 1,
            x: x.to_vec(),
            mask,
            penalized,
        });
        Ok(())
    }
}

impl Controller for FaaSchedController {
    fn on_start(&mut self, h: &mut HostControl<'_>) -> Result<()> {
        self.ls_apps = h
            .specs()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_ls())
            .map(|(i, _)| i)
            .collect();
        self.next_app = 0;
        self.pending = None;
        if !self.shared && self.nets.len() < self.ls_apps.len() {
            let cfg = self.nets[0].cfg;
            while self.nets.len() < self.ls_apps.len() {
                let seed = cfg.net_seed.wrapping_add(self.nets.len() as u64);
                self.nets.push(AgentNets::new(AgentConfig { net_seed: seed, ..cfg }));
            }
        }
        Ok(())
    }

    fn on_window(&mut self, h: &mut HostControl<'_>) -> Result<()> {
        let windows = h.windows();
        let cur = windows.last().cloned().ok_or_else(|| Error::Internal("no window".into()))?;
        let prev = windows.len().checked_sub(2).map(|i| windows[i].clone());
        self.finish_pending(h, prev.as_ref(), &cur)?;
        self.decide(h, prev.as_ref(), &cur)
    }
}

/// Whether a decision's enforcement asked for dedicated cores.
pub fn requests_dedicated_cores(d: &Decision) -> bool {
    matches!(d.attempt.cores, PolicyValue::Set(k) if k != 0) && d.accepted.is_some()
}
