//! Reference controllers: priority schemes, static core partitioning and the
//! autoscale-only baseline.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::host::{Controller, CoreMask, HostControl, NoController, PolicyValue, RT_PRIORITY_MAX, RT_PRIORITY_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SchemeKind {
    /// Random increase or decrease.
    Rid,
    /// Fixed priority.
    Fp,
    /// Strictly increasing.
    Si,
    /// Strictly decreasing.
    Sd,
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Rid => "rid",
            SchemeKind::Fp => "fp",
            SchemeKind::Si => "si",
            SchemeKind::Sd => "sd",
        })
    }
}

impl FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rid" => Ok(SchemeKind::Rid),
            "fp" => Ok(SchemeKind::Fp),
            "si" => Ok(SchemeKind::Si),
            "sd" => Ok(SchemeKind::Sd),
            _ => Err(Error::config(format!("unknown priority scheme {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorityScheme {
    pub kind: SchemeKind,
    pub step: i32,
    pub fixed_value: i32,
}

impl PriorityScheme {
    pub fn new(kind: SchemeKind) -> Self {
        PriorityScheme {
            kind,
            step: 10,
            fixed_value: 80,
        }
    }

    /// Next priority from `current` (0 for SCHED_OTHER), clamped to `[1, 99]`.
    pub fn next_priority(&self, current: i32, rng: &mut impl Rng) -> i32 {
        let clamp = |p: i32| p.clamp(RT_PRIORITY_MIN, RT_PRIORITY_MAX);
        match self.kind {
            SchemeKind::Fp => clamp(self.fixed_value),
            SchemeKind::Si => clamp(current + self.step),
            SchemeKind::Sd => clamp(current - self.step),
            SchemeKind::Rid => {
                if rng.random_bool(0.5) {
                    clamp(current + self.step)
                } else {
                    clamp(current - self.step)
                }
            }
        }
    }
}

/// Applies a priority scheme to the latency-sensitive apps, one app per
/// window in round-robin order.
pub struct SchemeController {
    scheme: PriorityScheme,
    rng: ChaCha8Rng,
    ls_apps: Vec<usize>,
    next: usize,
}

impl SchemeController {
    pub fn new(scheme: PriorityScheme, seed: u64) -> Self {
        SchemeController {
            scheme,
            rng: ChaCha8Rng::seed_from_u64(seed),
            ls_apps: Vec::new(),
            next: 0,
        }
    }
}

impl Controller for SchemeController {
    fn on_start(&mut self, h: &mut HostControl<'_>) -> Result<()> {
        self.ls_apps = h
            .specs()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_ls())
            .map(|(i, _)| i)
            .collect();
        Ok(())
    }

    fn on_window(&mut self, h: &mut HostControl<'_>) -> Result<()> {
        if self.ls_apps.is_empty() {
            return Ok(());
        }
        let app = self.ls_apps[self.next % self.ls_apps.len()];
        self.next += 1;
        let current = h
            .app_policy(app)
            .map(|(p, _, _)| p.priority_level())
            .unwrap_or(0);
        let p = self.scheme.next_priority(current, &mut self.rng);
        h.apply_sched_policy(app, PolicyValue::Set(p), PolicyValue::Revoke)?;
        Ok(())
    }
}

/// Splits cores `m:n`: the lowest `m` for LS apps, the rest for LD apps.
pub fn partition_cores(m: usize, n: usize, num_cores: usize) -> Result<(CoreMask, CoreMask)> {
    if m == 0 || n == 0 {
        return Err(Error::invalid("both partitions need at least one core"));
    }
    if m + n != num_cores {
        return Err(Error::invalid(format!("{m}:{n} does not cover {num_cores} cores")));
    }
    Ok((CoreMask::range(0, m), CoreMask::range(m, n)))
}

/// Pins LS apps to the first `m` cores and LD apps to the remaining `n`.
pub struct PartitionController {
    ls_mask: CoreMask,
    ld_mask: CoreMask,
}

impl PartitionController {
    pub fn new(m: usize, n: usize, num_cores: usize) -> Result<Self> {
        let (ls_mask, ld_mask) = partition_cores(m, n, num_cores)?;
        Ok(PartitionController { ls_mask, ld_mask })
    }
}

impl Controller for PartitionController {
    fn on_start(&mut self, h: &mut HostControl<'_>) -> Result<()> {
        let ls: Vec<bool> = h.specs().iter().map(|s| s.is_ls()).collect();
        for (app, is_ls) in ls.into_iter().enumerate() {
            let mask = if is_ls { self.ls_mask } else { self.ld_mask };
            h.set_affinity(app, mask)?;
        }
        Ok(())
    }

    fn on_window(&mut self, _h: &mut HostControl<'_>) -> Result<()> {
        Ok(())
    }
}

/// Autoscale-only baseline: never touches priorities or affinity.
pub fn lass_controller() -> NoController {
    NoController
}
