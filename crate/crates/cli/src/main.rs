use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use faasim::experiment::{
    self, load_nets, load_or_calibrate, read_requests_csv, run_experiment, save_nets, write_outputs,
    Calibration, ControllerKind, ExperimentConfig,
};
use faasim::metrics::{summarize, write_summary};
use faasim::Error;

#[derive(Parser)]
#[command(name = "faasim", version, about = "Serverless host simulator and scheduling agent")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// faasched, lass, rid, fp, si, sd or partition:M:N
    #[arg(long, global = true)]
    controller: Option<ControllerKind>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Agent parameter file (written by `train`, read by `eval`).
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Verb {
    /// Solo runs for isolated baselines and preprocessing bounds.
    Calibrate,
    /// Run the configured controller; the agent trains first.
    Run,
    /// Train the agent and save its parameters.
    Train,
    /// Evaluate a saved agent on the evaluation mix.
    Eval,
    /// Summarize an existing requests.csv in the output directory.
    Report,
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidParameter(_)) => 2,
        Some(Error::Internal(_)) => 3,
        Some(Error::Io { .. } | Error::Csv(_) | Error::Serde(_)) => 4,
        None => 3,
    }
}

fn load_config(cli: &Cli) -> faasim::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    }
    if let Some(c) = cli.controller {
        cfg.experiment.controller = c;
    }
    if let Some(o) = &cli.out {
        cfg.experiment.out_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn checkpoint_path(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.checkpoint
        .clone()
        .unwrap_or_else(|| cfg.experiment.out_dir.join("agent.ckpt"))
}

fn ensure_dir(dir: &Path) -> faasim::Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

fn print_summary(dir: &Path) {
    if let Ok(text) = std::fs::read_to_string(dir.join("summary.csv")) {
        print!("{text}");
    }
}

fn execute(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = load_config(cli)?;
    let out = cfg.experiment.out_dir.clone();
    match cli.verb {
        Verb::Calibrate => {
            let cal = experiment::calibrate(&cfg)?;
            let path = cfg.calibration_path();
            if let Some(dir) = path.parent() {
                ensure_dir(dir)?;
            }
            cal.save(&path)?;
            for b in &cal.apps {
                println!(
                    "{}: ipc {:.4}, mean execution {:.6}s, mean response {:.6}s",
                    b.id, b.measured_ipc, b.execution.mean, b.response.mean
                );
            }
            println!("wrote {}", path.display());
        }
        Verb::Run => {
            let cal = load_or_calibrate(&cfg)?;
            let res = run_experiment(&cfg, &cal, None)?;
            write_outputs(&cfg, &cal, &res, &out)?;
            print_summary(&out);
        }
        Verb::Train => {
            cfg.experiment.controller = ControllerKind::Faasched;
            let cal = load_or_calibrate(&cfg)?;
            let mut agent = experiment::new_agent(&cfg, &cal)?;
            let run = experiment::train(&cfg, &cal, &mut agent)?;
            let path = checkpoint_path(cli, &cfg);
            if let Some(dir) = path.parent() {
                ensure_dir(dir)?;
            }
            save_nets(agent.nets(), &path)?;
            let updates: u64 = agent.nets().iter().map(|n| n.steps).sum();
            println!(
                "trained for {:.0}s simulated, {} updates, {} requests; wrote {}",
                cfg.experiment.train_duration,
                updates,
                run.records.len(),
                path.display()
            );
        }
        Verb::Eval => {
            cfg.experiment.controller = ControllerKind::Faasched;
            let cal = load_or_calibrate(&cfg)?;
            let nets = load_nets(&checkpoint_path(cli, &cfg))?;
            let res = run_experiment(&cfg, &cal, Some(nets))?;
            write_outputs(&cfg, &cal, &res, &out)?;
            print_summary(&out);
        }
        Verb::Report => {
            let records = read_requests_csv(&out.join("requests.csv"))?;
            let cal_path = cfg.calibration_path();
            let cal = if cal_path.exists() {
                Some(Calibration::load(&cal_path)?)
            } else {
                None
            };
            let mut apps: Vec<String> = Vec::new();
            for r in &records {
                if !apps.contains(&r.app) {
                    apps.push(r.app.clone());
                }
            }
            let rows = summarize(&records, &apps, |id, kind| {
                cal.as_ref().and_then(|c| c.isolated_stats(id, kind))
            });
            write_summary(&rows, &mut std::io::stdout().lock())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
