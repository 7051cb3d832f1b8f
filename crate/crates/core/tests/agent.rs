use faasim::agent::{
    AgentConfig, AgentNets, ExploreChoice, Mode, Optimizer, SchedAction, Shift, NUM_ACTIONS,
};
use faasim::experiment::{load_nets, save_nets};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn plain() -> AgentConfig {
    AgentConfig {
        reward_scale: 1.0,
        reward_centering: 0.0,
        ..AgentConfig::default()
    }
}

#[test]
fn positive_td_raises_chosen_action() {
    let mut nets = AgentNets::new(AgentConfig { gamma: 0.0, alpha: 1e-2, ..plain() });
    let x = vec![0.3; 10];
    let a = SchedAction::new(Shift::Up, Shift::Zero);
    let before = nets.policy(&x)[a.index()];
    let v = nets.value(&x);
    let d = nets.update(&x, a, &[true; NUM_ACTIONS], v + 1.0, &x).unwrap().unwrap();
    assert!((d - 1.0).abs() < 1e-12);
    assert!(nets.policy(&x)[a.index()] > before);
    assert!(nets.value(&x) > v);

    let v = nets.value(&x);
    let p = nets.policy(&x)[a.index()];
    nets.update(&x, a, &[true; NUM_ACTIONS], v - 1.0, &x).unwrap();
    assert!(nets.policy(&x)[a.index()] < p);
}

#[test]
fn masked_update_moves_mass_between_allowed_actions() {
    let mut nets = AgentNets::new(AgentConfig { gamma: 0.0, alpha: 1e-2, ..plain() });
    let x = vec![0.5; 10];
    let mut mask = [false; NUM_ACTIONS];
    mask[3] = true;
    mask[7] = true;
    let before = nets.actor.output(&x);
    let v = nets.value(&x);
    nets.update(&x, SchedAction::from_index(3), &mask, v + 1.0, &x).unwrap();
    let after = nets.actor.output(&x);
    assert!(after[3] > before[3]);
    assert!(after[7] < before[7]);
}

#[test]
fn bandit_prefers_rewarding_action() {
    let mut nets = AgentNets::new(AgentConfig { gamma: 0.0, alpha: 1e-3, ..plain() });
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = vec![0.2; 10];
    let best = 9;
    for _ in 0..3000 {
        let a = nets
            .select_action(&x, &[true; NUM_ACTIONS], Mode::Explore, 1.0, &mut rng)
            .unwrap();
        let r = if a.index() == best { 1.0 } else { 0.0 };
        nets.update(&x, a, &[true; NUM_ACTIONS], r, &x).unwrap();
    }
    let p = nets.policy(&x);
    assert_eq!(faasim::agent::argmax(&p), best, "{p:?}");
}

#[test]
fn contextual_bandit_separates_states() {
    let mut nets = AgentNets::new(AgentConfig { gamma: 0.0, alpha: 1e-3, ..plain() });
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs = [vec![1.0, 0.0, 0.0, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.5, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]];
    let best = [2, 13];
    for t in 0..8000 {
        let s = t % 2;
        let a = nets
            .select_action(&xs[s], &[true; NUM_ACTIONS], Mode::Explore, 1.0, &mut rng)
            .unwrap();
        let r = if a.index() == best[s] { 1.0 } else { 0.0 };
        nets.update(&xs[s], a, &[true; NUM_ACTIONS], r, &xs[s]).unwrap();
    }
    for s in 0..2 {
        assert_eq!(faasim::agent::argmax(&nets.policy(&xs[s])), best[s]);
    }
}

#[test]
fn reward_centering_tracks_mean() {
    let mut nets = AgentNets::new(AgentConfig { reward_centering: 0.1, ..plain() });
    let x = vec![0.0; 10];
    for _ in 0..200 {
        nets.update(&x, SchedAction::from_index(0), &[true; NUM_ACTIONS], 7.0, &x).unwrap();
    }
    assert!((nets.reward_mean.unwrap() - 7.0).abs() < 1e-9);
}

#[test]
fn sample_choice_follows_distribution() {
    let nets = AgentNets::new(AgentConfig { explore_choice: ExploreChoice::Sample, ..plain() });
    let x = vec![0.1; 10];
    let p = nets.policy(&x);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = [0usize; NUM_ACTIONS];
    let n = 40_000;
    for _ in 0..n {
        let a = nets.select_action(&x, &[true; NUM_ACTIONS], Mode::Explore, 0.0, &mut rng).unwrap();
        counts[a.index()] += 1;
    }
    for i in 0..NUM_ACTIONS {
        let f = counts[i] as f64 / n as f64;
        assert!((f - p[i]).abs() < 0.01, "action {i}: {f} vs {}", p[i]);
    }
}

#[test]
fn checkpoints_roundtrip_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = AgentNets::new(AgentConfig { optimizer: Optimizer::Adam, ..AgentConfig::default() });
    let x = vec![0.4; 10];
    for r in [1.0, -2.0, 0.5] {
        a.update(&x, SchedAction::from_index(5), &[true; NUM_ACTIONS], r, &x).unwrap();
    }
    let b = AgentNets::new(AgentConfig { net_seed: 9, ..AgentConfig::default() });
    let path = dir.path().join("agent.ckpt");
    save_nets(&[a.clone(), b.clone()], &path).unwrap();
    let back = load_nets(&path).unwrap();
    assert_eq!(back, vec![a, b]);

    std::fs::write(&path, "faasim-agent 1\n").unwrap();
    assert!(load_nets(&path).is_err());
}

