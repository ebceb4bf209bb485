//! `rampflow`: discharge, calibrate, optimize and sweep commands.
//!
//! Exit codes: 0 success, 1 usage/config/input error, 2 model infeasibility.
//! File schemas are described in `docs/formats.md`.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rampflow_core::config::RunConfig;
use rampflow_core::sim::SweepParam;

#[derive(Parser, Debug)]
#[command(
    name = "rampflow",
    version,
    about = "On-ramp merge discharge and merge-control experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Capacity discount, effective discharge rate and its profile upstream of the merge.
    Discharge(DischargeArgs),
    /// Validation report from aggregates or parameter estimates from trajectories.
    Calibrate(CalibrateArgs),
    /// Monte Carlo comparison of the DP merge policy with the early/late benchmarks.
    Optimize(OptimizeArgs),
    /// Cost reductions while one parameter varies.
    Sweep(SweepArgs),
}

/// Config file plus overrides. Flags win over the file.
#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Run config JSON; missing keys take the case-study defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    demand_vph: Option<f64>,
    /// Ramp share of the demand, as a fraction.
    #[arg(long)]
    ramp_ratio: Option<f64>,
    #[arg(long)]
    aux_length_m: Option<f64>,
    #[arg(long)]
    v_merge_kmh: Option<f64>,
}

impl ConfigArgs {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| rampflow_core::Error::Io(format!("{}: {e}", p.display())))?;
                RunConfig::from_json(&text)?
            }
            None => RunConfig::default(),
        };
        if let Some(v) = self.runs {
            cfg.runs = v;
        }
        if let Some(v) = self.seed {
            cfg.master_seed = v;
        }
        if let Some(v) = self.phi {
            cfg.phi = v;
        }
        if let Some(v) = self.demand_vph {
            cfg.demand_vph = v;
        }
        if let Some(v) = self.ramp_ratio {
            cfg.ramp_ratio = v;
        }
        if let Some(v) = self.aux_length_m {
            cfg.aux_length_m = v;
        }
        if self.v_merge_kmh.is_some() {
            cfg.v_merge_kmh = self.v_merge_kmh;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct DischargeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Use observed aggregates instead of the config.
    #[arg(long, conflicts_with = "config")]
    aggregates: Option<PathBuf>,
    /// Profile sample count.
    #[arg(long, default_value_t = 50)]
    samples: usize,
    /// Profile CSV path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(
        long,
        required_unless_present = "aggregates",
        conflicts_with = "aggregates"
    )]
    trajectories: Option<PathBuf>,
    #[arg(long)]
    aggregates: Option<PathBuf>,
    /// Unit profile of the trajectory file: si or ngsim-imperial.
    #[arg(long, default_value = "si")]
    units: String,
    /// Keep only these lanes.
    #[arg(long, value_delimiter = ',')]
    lanes: Option<Vec<i64>>,
    /// Ramp and target lane, e.g. `7,6`, for merge kinematics.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    merge_lanes: Option<Vec<i64>>,
    /// Speed below which a vehicle counts as stopped (m/s).
    #[arg(long, default_value_t = rampflow_core::calibration::STOPPED_SPEED_MPS)]
    stopped_speed: f64,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PolicyArg {
    Dp,
    Early,
    Late,
    All,
}

#[derive(Args, Debug)]
struct OptimizeArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum, default_value = "all")]
    policy: PolicyArg,
    /// Output directory for runs.csv and summary.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum ParamArg {
    Demand,
    AuxLength,
    /// In percent.
    RampRatio,
}

impl From<ParamArg> for SweepParam {
    fn from(p: ParamArg) -> Self {
        match p {
            ParamArg::Demand => SweepParam::Demand,
            ParamArg::AuxLength => SweepParam::AuxLength,
            ParamArg::RampRatio => SweepParam::RampRatio,
        }
    }
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_enum)]
    param: ParamArg,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long)]
    step: f64,
    /// Cost weights evaluated at every grid point.
    #[arg(long, value_delimiter = ',', default_value = "1,0.5,0")]
    phis: Vec<f64>,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<rampflow_core::Error>() {
        Some(e) if e.is_infeasible() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Discharge(a) => commands::discharge(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::Optimize(a) => commands::optimize(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
