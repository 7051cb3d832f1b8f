//! Calibration, experiment runs and result files.

mod calibrate;
mod config;
mod csv_io;
mod run;
mod seeds;

pub use calibrate::{calibrate, load_or_calibrate, window_contention, Calibration, IsolatedBaseline};
pub use config::{BaselineConfig, ControllerKind, ExperimentConfig, ExperimentSection};
pub use csv_io::{emit_csv, read_requests_csv, REQUEST_HEADER};
pub use run::{
    baseline_controller, load_nets, new_agent, run_experiment, save_nets, simulate, train,
    write_decisions, write_outputs, write_window_states, ExperimentResult, DECISION_HEADER,
    WINDOW_HEADER,
};
pub use seeds::{derive_seed, Tag};
