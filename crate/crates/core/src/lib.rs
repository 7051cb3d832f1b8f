//! Serverless host simulator with an actor-critic scheduling agent.
//!
//! * [`workload`]: function specs, Poisson traces, queue math.
//! * [`host`]: the discrete-event host (scheduler, interference, autoscaling).
//! * [`monitor`]: per-window observations for the agent.
//! * [`agent`]: networks, reward, exploration and the scheduling controller.
//! * [`baselines`]: priority schemes, static partitioning, autoscale-only.
//! * [`metrics`]: latency statistics.
//! * [`experiment`]: calibration, experiment runs and CSV output.

pub mod agent;
pub mod baselines;
pub mod error;
pub mod experiment;
pub mod host;
pub mod metrics;
pub mod monitor;
pub mod workload;

pub use error::{Error, Result};
