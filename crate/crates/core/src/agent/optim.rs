use serde::{Deserialize, Serialize};

use super::nn::Mlp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    /// Plain step `alpha * delta * grad`.
    Sgd,
    Adam,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam moment estimates for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Bias-corrected step direction for the ascent direction `g`.
    pub fn direction(&mut self, g: &[f64]) -> Vec<f64> {
        self.t += 1;
        let c1 = 1.0 - BETA1.powf(self.t as f64);
        let c2 = 1.0 - BETA2.powf(self.t as f64);
        g.iter()
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
            .map(|(&g, (m, v))| {
                *m = BETA1 * *m + (1.0 - BETA1) * g;
                *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                (*m / c1) / ((*v / c2).sqrt() + EPS)
            })
            .collect()
    }
}

/// Moves `net` along `scale * grad` with step size `alpha`.
pub fn step(net: &mut Mlp, state: Option<&mut AdamState>, grad: &[f64], scale: f64, alpha: f64) {
    match state {
        None => net.apply(grad, alpha * scale),
        Some(s) => {
            let g: Vec<f64> = grad.iter().map(|v| v * scale).collect();
            let d = s.direction(&g);
            net.apply(&d, alpha);
        }
    }
}
