use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, CalibrationBounds, RewardConfig, Steps};
use crate::baselines::SchemeKind;
use crate::error::{Error, Result};
use crate::host::SimConfig;
use crate::workload::{builtin_catalog, find_spec, read_catalog, FunctionSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ControllerKind {
    Faasched,
    Lass,
    Scheme(SchemeKind),
    /// `m` cores for LS apps, `n` for LD apps.
    Partition { m: usize, n: usize },
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControllerKind::Faasched => f.write_str("faasched"),
            ControllerKind::Lass => f.write_str("lass"),
            ControllerKind::Scheme(k) => write!(f, "{k}"),
            ControllerKind::Partition { m, n } => write!(f, "partition:{m}:{n}"),
        }
    }
}

impl FromStr for ControllerKind {
    type Err = Error;

    /// `faasched`, `lass`, `rid`, `fp`, `si`, `sd` or `partition:M:N`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(rest) = s.strip_prefix("partition") {
            let parts: Vec<&str> = rest.split([':', ',']).filter(|p| !p.is_empty()).collect();
            let nums: Option<Vec<usize>> = parts.iter().map(|p| p.trim().parse().ok()).collect();
            return match nums.as_deref() {
                Some([m, n]) => Ok(ControllerKind::Partition { m: *m, n: *n }),
                _ => Err(Error::config(format!("partition controller needs partition:M:N, got {s:?}"))),
            };
        }
        match s.as_str() {
            "faasched" => Ok(ControllerKind::Faasched),
            "lass" => Ok(ControllerKind::Lass),
            other => other.parse().map(ControllerKind::Scheme),
        }
    }
}

impl TryFrom<String> for ControllerKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ControllerKind> for String {
    fn from(c: ControllerKind) -> String {
        c.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// Colocation mix for training and non-learning runs.
    pub workloads: Vec<String>,
    /// Held-out mix for evaluation; empty reuses `workloads`.
    pub eval_workloads: Vec<String>,
    /// Optional CSV catalog replacing the built-in one.
    pub catalog: Option<PathBuf>,
    pub controller: ControllerKind,
    pub seed: u64,
    /// Simulated seconds of agent training.
    pub train_duration: f64,
    /// Simulated seconds of each solo calibration run.
    pub calibration_duration: f64,
    /// Calibration file; defaults to `<out_dir>/calibration.json`.
    pub calibration: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// One agent for all LS apps, or one per app.
    pub shared_agent: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            workloads: vec!["EG".into(), "VP".into()],
            eval_workloads: Vec::new(),
            catalog: None,
            controller: ControllerKind::Faasched,
            seed: 1,
            train_duration: 5.0 * 3600.0,
            calibration_duration: 1800.0,
            calibration: None,
            out_dir: PathBuf::from("out"),
            shared_agent: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    pub scheme_step: i32,
    pub fixed_priority: i32,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            scheme_step: 10,
            fixed_priority: 80,
        }
    }
}

/// Whole experiment configuration, one TOML section per module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub host: SimConfig,
    pub agent: AgentConfig,
    pub reward: RewardConfig,
    pub action: Steps,
    pub baseline: BaselineConfig,
    /// Overrides calibrated preprocessing bounds.
    pub bounds: Option<CalibrationBounds>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        let cfg_err = |err: Error| Error::config(err.to_string());
        self.host.validate().map_err(cfg_err)?;
        self.agent.validate().map_err(cfg_err)?;
        self.reward.validate().map_err(cfg_err)?;
        if let Some(b) = &self.bounds {
            b.validate().map_err(cfg_err)?;
        }
        if e.workloads.is_empty() {
            return Err(Error::config("experiment.workloads is empty"));
        }
        if !(e.train_duration > 0.0) || !(e.calibration_duration > 0.0) || !(self.host.horizon > 0.0) {
            return Err(Error::config("durations must be > 0"));
        }
        if self.action.p_step <= 0 || self.action.a_step <= 0 {
            return Err(Error::config("action steps must be > 0"));
        }
        if let ControllerKind::Partition { m, n } = e.controller {
            if m == 0 || n == 0 || m + n != self.host.num_cores {
                return Err(Error::config(format!(
                    "partition {m}:{n} does not split {} cores",
                    self.host.num_cores
                )));
            }
        }
        let catalog = self.catalog()?;
        for id in e.workloads.iter().chain(&e.eval_workloads) {
            find_spec(&catalog, id)?;
        }
        Ok(())
    }

    pub fn catalog(&self) -> Result<Vec<FunctionSpec>> {
        match &self.experiment.catalog {
            Some(p) => read_catalog(p).map_err(|e| match e {
                Error::Io { .. } => e,
                other => Error::config(other.to_string()),
            }),
            None => Ok(builtin_catalog()),
        }
    }

    fn specs(&self, ids: &[String]) -> Result<Vec<FunctionSpec>> {
        let catalog = self.catalog()?;
        ids.iter().map(|id| find_spec(&catalog, id).cloned()).collect()
    }

    pub fn train_specs(&self) -> Result<Vec<FunctionSpec>> {
        self.specs(&self.experiment.workloads)
    }

    pub fn eval_specs(&self) -> Result<Vec<FunctionSpec>> {
        if self.experiment.eval_workloads.is_empty() {
            self.train_specs()
        } else {
            self.specs(&self.experiment.eval_workloads)
        }
    }

    /// Every app named in either mix, in first-seen order.
    pub fn all_specs(&self) -> Result<Vec<FunctionSpec>> {
        let mut ids: Vec<String> = Vec::new();
        for id in self.experiment.workloads.iter().chain(&self.experiment.eval_workloads) {
            if !ids.contains(id) {
                ids.push(id.clone());
            }
        }
        self.specs(&ids)
    }

    pub fn calibration_path(&self) -> PathBuf {
        self.experiment
            .calibration
            .clone()
            .unwrap_or_else(|| self.experiment.out_dir.join("calibration.json"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_roundtrip_through_toml() {
        let cfg = ExperimentConfig::default();
        let text = cfg.to_toml();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        assert_eq!(cfg.agent.alpha, 1e-4);
        assert_eq!(cfg.reward.tau, 0.75);
        assert_eq!((cfg.action.p_step, cfg.action.a_step), (10, 2));
    }

    #[test]
    fn sections_and_unknown_keys() {
        let cfg = ExperimentConfig::from_toml(
            "[experiment]\nworkloads = [\"MR\", \"IR\"]\ncontroller = \"partition:4:2\"\n[host]\nnum_cores = 6\n[reward]\ntau = 0.6\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment.controller, ControllerKind::Partition { m: 4, n: 2 });
        assert_eq!(cfg.reward.tau, 0.6);
        assert!(matches!(
            ExperimentConfig::from_toml("[host]\ncores = 6\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            ExperimentConfig::from_toml("[experiment]\nworkloads = [\"NOPE\"]\n"),
            Err(Error::Config(_))
        ));
        assert!(ExperimentConfig::from_toml("[experiment]\ncontroller = \"partition:3:2\"\n").is_err());
    }

    #[test]
    fn controller_names() {
        for s in ["faasched", "lass", "rid", "fp", "si", "sd", "partition:4:2"] {
            let c: ControllerKind = s.parse().unwrap();
            assert_eq!(c.to_string(), s);
        }
        assert!("nope".parse::<ControllerKind>().is_err());
    }
}
