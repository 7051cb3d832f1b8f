use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::action::{SchedAction, NUM_ACTIONS};
use super::features::FEATURE_DIM;
use super::nn::{softmax, Mlp};
use super::optim::{self, AdamState, Optimizer};
use super::reward::td_error;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    /// Learning rate of both networks.
    pub alpha: f64,
    pub gamma: f64,
    pub hidden: usize,
    pub net_seed: u64,
    /// Random-action probability inside exploration steps.
    pub epsilon: f64,
    /// Rewards are multiplied by this before the TD update.
    pub reward_scale: f64,
    /// Step size of the running reward mean subtracted before the TD
    /// update; 0 disables centering.
    pub reward_centering: f64,
    /// How exploration steps pick the non-random action.
    pub explore_choice: ExploreChoice,
    pub optimizer: Optimizer,
}

/// Non-random choice inside an exploration step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExploreChoice {
    /// Highest-probability allowed action.
    Greedy,
    /// A draw from the masked actor distribution.
    Sample,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha: 1e-4,
            gamma: 0.99,
            hidden: 64,
            net_seed: 42,
            epsilon: 0.3,
            reward_scale: 0.003,
            reward_centering: 0.01,
            explore_choice: ExploreChoice::Sample,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid("alpha must be > 0"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::invalid("gamma must be in [0, 1)"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("hidden width must be >= 1"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::invalid("epsilon must be in [0, 1]"));
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return Err(Error::invalid("reward_scale must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.reward_centering) {
            return Err(Error::invalid("reward_centering must be in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Explore,
    Exploit,
}

/// Linear decay of the exploration share from 5:1 to 1:100 over `total`.
pub fn exploration_ratio(t: f64, total: f64) -> Result<f64> {
    if !(total > 0.0) {
        return Err(Error::invalid("exploration schedule length must be > 0"));
    }
    let (start, end) = (5.0 / 6.0, 1.0 / 101.0);
    let frac = (t.max(0.0) / total).min(1.0);
    Ok(start + (end - start) * frac)
}

/// Actor probabilities restricted to `mask` and renormalized.
pub fn masked_distribution(logits: &[f64], mask: &[bool; NUM_ACTIONS]) -> Result<Vec<f64>> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::Internal("every action is masked".into()));
    }
    let masked: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&z, &m)| if m { z } else { f64::NEG_INFINITY })
        .collect();
    Ok(softmax(&masked))
}

/// Inverse-CDF draw from `p` with uniform `u`; masked entries have zero mass.
pub fn sample(p: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &q) in p.iter().enumerate() {
        if q > 0.0 {
            acc += q;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// First index of the largest entry.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub cfg: AgentConfig,
    /// Applied updates.
    pub steps: u64,
    /// Updates dropped because of non-finite values.
    pub skipped: u64,
    /// Running mean of scaled rewards, `None` before the first update.
    pub reward_mean: Option<f64>,
    /// Actor and critic moments when the optimizer is Adam.
    pub adam: Option<(AdamState, AdamState)>,
}

impl AgentNets {
    pub fn new(cfg: AgentConfig) -> Self {
        Self::with_dims(cfg, FEATURE_DIM, NUM_ACTIONS)
    }

    pub fn with_dims(cfg: AgentConfig, inputs: usize, actions: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.net_seed);
        let h = cfg.hidden;
        let actor = Mlp::init(&[inputs, h, h, actions], 0.1, &mut rng);
        let critic = Mlp::init(&[inputs, h, h, 1], 0.1, &mut rng);
        let adam = (cfg.optimizer == Optimizer::Adam).then(|| {
            (AdamState::new(actor.params().len()), AdamState::new(critic.params().len()))
        });
        AgentNets {
            actor,
            critic,
            cfg,
            steps: 0,
            skipped: 0,
            reward_mean: None,
            adam,
        }
    }

    /// Unmasked action probabilities.
    pub fn policy(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.actor.output(x))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.critic.output(x)[0]
    }

    pub fn select_action(
        &self,
        x: &[f64],
        mask: &[bool; NUM_ACTIONS],
        mode: Mode,
        epsilon: f64,
        rng: &mut impl Rng,
    ) -> Result<SchedAction> {
        let p = masked_distribution(&self.actor.output(x), mask)?;
        let greedy = argmax(&p);
        if mode == Mode::Exploit {
            return Ok(SchedAction::from_index(greedy));
        }
        let u: f64 = rng.random();
        if u < epsilon {
            let allowed: Vec<usize> = (0..NUM_ACTIONS).filter(|&i| mask[i]).collect();
            let pick = allowed[rng.random_range(0..allowed.len())];
            return Ok(SchedAction::from_index(pick));
        }
        match self.cfg.explore_choice {
            ExploreChoice::Greedy => Ok(SchedAction::from_index(greedy)),
            ExploreChoice::Sample => Ok(SchedAction::from_index(sample(&p, rng.random()))),
        }
    }

    /// Squared-error loss `0.5 (target - V(x))^2` and its parameter gradient.
    pub fn critic_loss_grad(&self, x: &[f64], target: f64) -> (f64, Vec<f64>) {
        let trace = self.critic.forward(x);
        let v = trace.output()[0];
        let err = v - target;
        (0.5 * err * err, self.critic.backward(&trace, &[err]))
    }

    /// One actor-critic step on a transition. Returns the TD error, or `None`
    /// when the update was skipped.
    pub fn update(
        &mut self,
        x: &[f64],
        action: SchedAction,
        mask: &[bool; NUM_ACTIONS],
        reward: f64,
        x_next: &[f64],
    ) -> Result<Option<f64>> {
        let r = self.center(reward * self.cfg.reward_scale);
        let critic_trace = self.critic.forward(x);
        let v = critic_trace.output()[0];
        let v_next = self.value(x_next);
        let delta = td_error(r, v, v_next, self.cfg.gamma);

        let critic_grad = self.critic.backward(&critic_trace, &[1.0]);
        let actor_trace = self.actor.forward(x);
        let p = masked_distribution(actor_trace.output(), mask)?;
        let a = action.index();
        // d log p_a / d z = onehot(a) - p over the allowed set.
        let dlogits: Vec<f64> = (0..p.len())
            .map(|i| if i == a { 1.0 - p[i] } else { -p[i] })
            .collect();
        let actor_grad = self.actor.backward(&actor_trace, &dlogits);

        let finite = delta.is_finite()
            && critic_grad.iter().all(|g| g.is_finite())
            && actor_grad.iter().all(|g| g.is_finite());
        if !finite {
            self.skipped += 1;
            return Ok(None);
        }
        let alpha = self.cfg.alpha;
        let (actor_state, critic_state) = match self.adam.as_mut() {
            Some((a, c)) => (Some(a), Some(c)),
            None => (None, None),
        };
        optim::step(&mut self.critic, critic_state, &critic_grad, delta, alpha);
        optim::step(&mut self.actor, actor_state, &actor_grad, delta, alpha);
        self.steps += 1;
        Ok(Some(delta))
    }

    /// Critic-only TD(0) step, for value estimation without a policy.
    pub fn update_critic(&mut self, x: &[f64], reward: f64, x_next: &[f64]) -> f64 {
        let trace = self.critic.forward(x);
        let delta = td_error(reward, trace.output()[0], self.value(x_next), self.cfg.gamma);
        let g = self.critic.backward(&trace, &[1.0]);
        if delta.is_finite() && g.iter().all(|v| v.is_finite()) {
            let state = self.adam.as_mut().map(|(_, c)| c);
            optim::step(&mut self.critic, state, &g, delta, self.cfg.alpha);
            self.steps += 1;
        } else {
            self.skipped += 1;
        }
        delta
    }

    /// Subtracts the running reward mean and advances it.
    fn center(&mut self, r: f64) -> f64 {
        let beta = self.cfg.reward_centering;
        if beta == 0.0 || !r.is_finite() {
            return r;
        }
        let mean = self.reward_mean.get_or_insert(r);
        *mean += beta * (r - *mean);
        r - *mean
    }

    pub fn to_checkpoint(&self) -> String {
        let mut s = String::from("faasim-agent 2\n");
        let c = &self.cfg;
        writeln!(s, "seed {}", c.net_seed).unwrap();
        writeln!(s, "steps {}", self.steps).unwrap();
        writeln!(s, "skipped {}", self.skipped).unwrap();
        writeln!(
            s,
            "hyper {:016x} {:016x} {:016x} {:016x} {:016x} {}",
            c.alpha.to_bits(),
            c.gamma.to_bits(),
            c.epsilon.to_bits(),
            c.reward_scale.to_bits(),
            c.reward_centering.to_bits(),
            c.hidden
        )
        .unwrap();
        let choice = match c.explore_choice {
            ExploreChoice::Greedy => "greedy",
            ExploreChoice::Sample => "sample",
        };
        writeln!(s, "explore {choice}").unwrap();
        match self.reward_mean {
            Some(m) => writeln!(s, "reward_mean {:016x}", m.to_bits()).unwrap(),
            None => writeln!(s, "reward_mean none").unwrap(),
        }
        for (name, net) in [("actor", &self.actor), ("critic", &self.critic)] {
            let dims: Vec<String> = net.sizes().iter().map(|d| d.to_string()).collect();
            writeln!(s, "{name} {}", dims.join(" ")).unwrap();
            for p in net.params() {
                writeln!(s, "{:016x}", p.to_bits()).unwrap();
            }
        }
        match &self.adam {
            None => writeln!(s, "adam none").unwrap(),
            Some((a, c)) => {
                writeln!(s, "adam {} {}", a.t, c.t).unwrap();
                for v in [&a.m, &a.v, &c.m, &c.v] {
                    for x in v.iter() {
                        writeln!(s, "{:016x}", x.to_bits()).unwrap();
                    }
                }
            }
        }
        s
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Serde(format!("checkpoint: {m}"));
        let mut lines = text.lines();
        let mut next = || lines.next().ok_or_else(|| bad("truncated"));
        if next()? != "faasim-agent 2" {
            return Err(bad("unknown header"));
        }
        let field = |line: &str, key: &str| -> Result<u64> {
            line.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| bad(&format!("expected {key}")))
        };
        let net_seed = field(next()?, "seed")?;
        let steps = field(next()?, "steps")?;
        let skipped = field(next()?, "skipped")?;
        let hyper: Vec<&str> = next()?
            .strip_prefix("hyper ")
            .ok_or_else(|| bad("expected hyper"))?
            .split_whitespace()
            .collect();
        if hyper.len() != 6 {
            return Err(bad("hyper needs 6 fields"));
        }
        let bits = |s: &str| {
            u64::from_str_radix(s, 16)
                .map(f64::from_bits)
                .map_err(|_| bad("bad float"))
        };
        let cfg = AgentConfig {
            alpha: bits(hyper[0])?,
            gamma: bits(hyper[1])?,
            epsilon: bits(hyper[2])?,
            reward_scale: bits(hyper[3])?,
            reward_centering: bits(hyper[4])?,
            hidden: hyper[5].parse().map_err(|_| bad("bad hidden"))?,
            net_seed,
            explore_choice: ExploreChoice::Greedy,
            optimizer: Optimizer::Sgd,
        };
        let explore_choice = match next()? {
            "explore greedy" => ExploreChoice::Greedy,
            "explore sample" => ExploreChoice::Sample,
            _ => return Err(bad("expected explore")),
        };
        let reward_mean = match next()?.strip_prefix("reward_mean ") {
            Some("none") => None,
            Some(v) => Some(bits(v)?),
            None => return Err(bad("expected reward_mean")),
        };
        let mut nets = Vec::new();
        for name in ["actor", "critic"] {
            let dims: Vec<usize> = next()?
                .strip_prefix(name)
                .ok_or_else(|| bad(&format!("expected {name}")))?
                .split_whitespace()
                .map(|d| d.parse().map_err(|_| bad("bad dim")))
                .collect::<Result<_>>()?;
            let n = Mlp::param_count(&dims);
            let params = (0..n)
                .map(|_| bits(next()?))
                .collect::<Result<Vec<f64>>>()?;
            nets.push(Mlp::from_params(dims, params).ok_or_else(|| bad("bad dims"))?);
        }
        let critic = nets.pop().unwrap();
        let actor = nets.pop().unwrap();
        let adam_line = next()?;
        let adam = match adam_line.strip_prefix("adam ") {
            Some("none") => None,
            Some(rest) => {
                let ts: Vec<u64> = rest
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| bad("bad adam step")))
                    .collect::<Result<_>>()?;
                let [ta, tc] = ts[..] else {
                    return Err(bad("adam needs two step counts"));
                };
                let mut read = |n: usize| (0..n).map(|_| bits(next()?)).collect::<Result<Vec<f64>>>();
                let (na, nc) = (actor.params().len(), critic.params().len());
                let a = AdamState { m: read(na)?, v: read(na)?, t: ta };
                let c = AdamState { m: read(nc)?, v: read(nc)?, t: tc };
                Some((a, c))
            }
            None => return Err(bad("expected adam")),
        };
        let optimizer = if adam.is_some() { Optimizer::Adam } else { Optimizer::Sgd };
        Ok(AgentNets {
            actor,
            critic,
            cfg: AgentConfig {
                explore_choice,
                optimizer,
                ..cfg
            },
            steps,
            skipped,
            reward_mean,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::action::Shift;

    fn input(i: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(i);
        (0..FEATURE_DIM).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn exploration_schedule_endpoints() {
        assert!((exploration_ratio(0.0, 100.0).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert!((exploration_ratio(100.0, 100.0).unwrap() - 1.0 / 101.0).abs() < 1e-15);
        assert!((exploration_ratio(200.0, 100.0).unwrap() - 1.0 / 101.0).abs() < 1e-15);
        let mid = exploration_ratio(50.0, 100.0).unwrap();
        assert!((mid - (5.0 / 6.0 + 1.0 / 101.0) / 2.0).abs() < 1e-15);
        assert!(exploration_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn exploit_skips_masked_peak() {
        let mut logits = vec![0.0; NUM_ACTIONS];
        logits[5] = 10.0;
        logits[9] = 3.0;
        logits[2] = 2.0;
        let mut mask = [true; NUM_ACTIONS];
        mask[5] = false;
        let p = masked_distribution(&logits, &mask).unwrap();
        assert_eq!(p[5], 0.0);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Brute force: best unmasked logit.
        let best = (0..NUM_ACTIONS)
            .filter(|&i| mask[i])
            .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
            .unwrap();
        assert_eq!(argmax(&p), best);
        assert!(masked_distribution(&logits, &[false; NUM_ACTIONS]).is_err());
    }

    #[test]
    fn epsilon_limits() {
        let nets = AgentNets::new(AgentConfig {
            explore_choice: ExploreChoice::Greedy,
            ..AgentConfig::default()
        });
        let x = input(1);
        let mask = [true; NUM_ACTIONS];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let greedy = nets.select_action(&x, &mask, Mode::Exploit, 0.0, &mut rng).unwrap();
        for _ in 0..50 {
            assert_eq!(nets.select_action(&x, &mask, Mode::Explore, 0.0, &mut rng).unwrap(), greedy);
        }
        let mut counts = [0usize; NUM_ACTIONS];
        let mut lock_mask = [false; NUM_ACTIONS];
        for a in SchedAction::all().filter(|a| a.da == Shift::NegInf) {
            lock_mask[a.index()] = true;
        }
        for _ in 0..8000 {
            let a = nets.select_action(&x, &lock_mask, Mode::Explore, 1.0, &mut rng).unwrap();
            counts[a.index()] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            if lock_mask[i] {
                assert!((*c as f64 - 2000.0).abs() < 200.0, "{counts:?}");
            } else {
                assert_eq!(*c, 0);
            }
        }
    }

    #[test]
    fn zero_td_leaves_parameters() {
        let mut nets = AgentNets::new(AgentConfig {
            gamma: 0.0,
            reward_scale: 1.0,
            reward_centering: 0.0,
            ..AgentConfig::default()
        });
        let x = input(2);
        let v = nets.value(&x);
        let before = nets.clone();
        let d = nets.update(&x, SchedAction::from_index(3), &[true; NUM_ACTIONS], v, &x).unwrap();
        assert_eq!(d, Some(0.0));
        assert_eq!(nets.actor, before.actor);
        assert_eq!(nets.critic, before.critic);
    }

    #[test]
    fn non_finite_update_is_skipped() {
        let mut nets = AgentNets::new(AgentConfig::default());
        let x = input(3);
        let before = nets.clone();
        let d = nets
            .update(&x, SchedAction::from_index(0), &[true; NUM_ACTIONS], f64::NAN, &x)
            .unwrap();
        assert_eq!(d, None);
        assert_eq!(nets.skipped, 1);
        assert_eq!(nets.actor, before.actor);
    }

    #[test]
    fn checkpoint_is_bit_exact() {
        let mut nets = AgentNets::new(AgentConfig::default());
        for i in 0..20 {
            let x = input(i);
            nets.update(&x, SchedAction::from_index((i % 16) as usize), &[true; NUM_ACTIONS], 100.0, &input(i + 1))
                .unwrap();
        }
        let text = nets.to_checkpoint();
        let back = AgentNets::from_checkpoint(&text).unwrap();
        assert_eq!(back, nets);
        assert_eq!(back.to_checkpoint(), text);
        assert!(AgentNets::from_checkpoint("faasim-agent 1\nseed 3\n").is_err());
    }
}
