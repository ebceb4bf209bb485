use std::path::Path;

use anyhow::{bail, Result};
use rampflow_core::calibration::{
    calibrate_trajectories, load_trajectories, validate_discharge, Aggregates, UnitProfile,
};
use rampflow_core::config::RunConfig;
use rampflow_core::discharge::{discharge_profile, EpisodeKinematics, QueueStateParams};
use rampflow_core::sim::{monte_carlo, sensitivity_sweep, PolicyKind, RunRecord};
use rampflow_core::units::vps_to_vph;
use serde::Serialize;

use crate::output::{csv_string, file_hash, write_csv, write_json, Meta};
use crate::{CalibrateArgs, DischargeArgs, OptimizeArgs, PolicyArg, SweepArgs};

fn run_meta(command: &str, cfg: &RunConfig) -> Meta {
    Meta {
        config_hash: Some(cfg.hash()),
        master_seed: Some(cfg.master_seed),
        ..Meta::new(command)
    }
}

#[derive(Serialize)]
struct ProfileRow {
    x_m: f64,
    mu_eff_vph: f64,
}

pub fn discharge(args: DischargeArgs) -> Result<()> {
    if let Some(path) = &args.aggregates {
        let report = validate_discharge(&Aggregates::load(path)?)?;
        let get = |v: Option<f64>| v.unwrap_or(f64::NAN);
        println!("theta = {:.4}", get(report.theta));
        println!("mu_eff_vph = {:.1}", vps_to_vph(get(report.mu_eff)));
        println!("ape_mu_eff_pct = {:.2}", get(report.ape_mu_eff));
        println!("ape_mu_pct = {:.2}", get(report.ape_mu_max));
        return Ok(());
    }

    let cfg = args.config.load()?;
    let fd = cfg.fundamental_diagram()?;
    let demand = cfg.demand()?;
    let kin = EpisodeKinematics::for_merge(
        &fd,
        &demand,
        0.0,
        cfg.aux_length_m,
        cfg.v_merge(),
        cfg.a_max_mps2,
    )?;
    let profile = discharge_profile(
        &fd,
        &demand,
        &kin,
        args.samples,
        QueueStateParams::default(),
    )?;
    let rows: Vec<ProfileRow> = profile
        .points
        .iter()
        .map(|p| ProfileRow {
            x_m: p.x,
            mu_eff_vph: vps_to_vph(p.mu_eff),
        })
        .collect();
    let header = ["x_m", "mu_eff_vph"];
    println!("theta = {:.6}", profile.theta);
    println!("mu_eff_vph = {:.3}", vps_to_vph(profile.mu_eff));
    match &args.out {
        Some(path) => write_csv(path, &header, &rows, &run_meta("discharge", &cfg))?,
        None => print!("{}", csv_string(&header, &rows)?),
    }
    Ok(())
}

pub fn calibrate(args: CalibrateArgs) -> Result<()> {
    let (input, report) = if let Some(path) = &args.aggregates {
        (path, validate_discharge(&Aggregates::load(path)?)?)
    } else if let Some(path) = &args.trajectories {
        let units: UnitProfile = args.units.parse()?;
        let records = load_trajectories(path, args.lanes.as_deref(), units)?;
        let merge = args.merge_lanes.as_ref().map(|m| (m[0], m[1]));
        (
            path,
            calibrate_trajectories(&records, args.stopped_speed, merge)?,
        )
    } else {
        bail!("one of --trajectories or --aggregates is required");
    };
    match &args.out {
        Some(out) => {
            let meta = Meta {
                input_hash: Some(file_hash(input)?),
                ..Meta::new("calibrate")
            };
            write_json(out, &report, &meta)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(())
}

#[derive(Serialize)]
struct RunRow<'a> {
    run_id: u64,
    policy: &'a str,
    #[serde(rename = "t_M")]
    t_m: f64,
    #[serde(rename = "x_M")]
    x_m: f64,
    #[serde(rename = "v_M")]
    v_m: f64,
    delay: f64,
    delay_at_mu: f64,
    risk: f64,
    weighted_cost: f64,
    forced: bool,
    collided: bool,
    scenario_hash: &'a str,
}

const RUN_HEADER: [&str; 12] = [
    "run_id",
    "policy",
    "t_M",
    "x_M",
    "v_M",
    "delay",
    "delay_at_mu",
    "risk",
    "weighted_cost",
    "forced",
    "collided",
    "scenario_hash",
];

impl<'a> From<&'a RunRecord> for RunRow<'a> {
    fn from(r: &'a RunRecord) -> Self {
        Self {
            run_id: r.run_id,
            policy: r.policy.name(),
            t_m: r.t_m,
            x_m: r.x_m,
            v_m: r.v_m,
            delay: r.delay,
            delay_at_mu: r.delay_at_mu,
            risk: r.risk,
            weighted_cost: r.weighted_cost,
            forced: r.forced,
            collided: r.collided,
            scenario_hash: &r.scenario_hash,
        }
    }
}

pub fn optimize(args: OptimizeArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let ctx = cfg.context()?;
    // all three policies are always run: they share the cost normalization
    let result = monte_carlo(&ctx, &cfg.batch()?)?;
    let keep = |p: PolicyKind| match args.policy {
        PolicyArg::All => true,
        PolicyArg::Dp => p == PolicyKind::Dp,
        PolicyArg::Early => p == PolicyKind::Early,
        PolicyArg::Late => p == PolicyKind::Late,
    };
    let rows: Vec<RunRow> = result
        .records
        .iter()
        .filter(|r| keep(r.policy))
        .map(RunRow::from)
        .collect();

    let meta = run_meta("optimize", &cfg);
    write_csv(&args.out.join("runs.csv"), &RUN_HEADER, &rows, &meta)?;
    #[derive(Serialize)]
    struct SummaryFile<'a> {
        config: &'a RunConfig,
        summary: &'a rampflow_core::sim::BatchSummary,
    }
    let summary = &result.summary;
    write_json(
        &args.out.join("summary.json"),
        &SummaryFile {
            config: &cfg,
            summary,
        },
        &meta,
    )?;

    println!(
        "phi = {}, runs = {}, seed = {}",
        summary.phi, summary.runs, summary.seed
    );
    println!("policy  mean_cost  mean_delay  mean_risk  forced  collisions");
    for p in summary.policies.iter().filter(|p| keep(p.policy)) {
        println!(
            "{:<6}  {:>9.4}  {:>10.3}  {:>9.4}  {:>6}  {:>10}",
            p.policy.name(),
            p.mean_cost,
            p.mean_delay,
            p.mean_risk,
            p.forced,
            p.collisions
        );
    }
    println!(
        "reduction vs early = {:.2}%, vs late = {:.2}%",
        summary.reduction_vs_early, summary.reduction_vs_late
    );
    Ok(())
}

/// `from..=to` in `step` increments, tolerant to rounding at the end.
fn grid_values(from: f64, to: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step.is_finite()) || !(to >= from) {
        return Err(rampflow_core::Error::config("step", "need step > 0 and to >= from").into());
    }
    let n = ((to - from) / step + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| from + i as f64 * step).collect())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn sweep(args: SweepArgs) -> Result<()> {
    let cfg = args.config.load()?;
    let param = args.param.into();
    let values = grid_values(args.from, args.to, args.step)?;
    for &phi in &args.phis {
        rampflow_core::dp::CostWeights::new(phi)?;
    }
    let base = cfg.batch()?;
    let points = sensitivity_sweep(param, &values, &args.phis, &base, |v| {
        cfg.with_param(param, v).context()
    })?;

    let mut header = vec![param_column(param).to_string(), "feasible".to_string()];
    for phi in &args.phis {
        header.push(format!("reduction_vs_early_phi_{phi}"));
        header.push(format!("reduction_vs_late_phi_{phi}"));
    }
    let mut rows = Vec::with_capacity(values.len());
    for (i, &value) in values.iter().enumerate() {
        let at = &points[i * args.phis.len()..(i + 1) * args.phis.len()];
        let mut row = vec![value.to_string(), at[0].feasible.to_string()];
        for p in at {
            let s = p.summary.as_ref();
            row.push(fmt_opt(s.map(|s| s.reduction_vs_early)));
            row.push(fmt_opt(s.map(|s| s.reduction_vs_late)));
        }
        rows.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let meta = run_meta("sweep", &cfg);
    write_csv(&args.out, &header, &rows, &meta)?;
    write_json(&points_path(&args.out), &points, &meta)?;
    let infeasible = points.iter().filter(|p| !p.feasible).count();
    println!(
        "{} rows written to {}; {} infeasible points",
        rows.len(),
        args.out.display(),
        infeasible
    );
    Ok(())
}

fn param_column(p: rampflow_core::sim::SweepParam) -> &'static str {
    use rampflow_core::sim::SweepParam::*;
    match p {
        Demand => "demand_vph",
        AuxLength => "aux_length_m",
        RampRatio => "ramp_ratio_pct",
    }
}

/// Full per-point summaries next to the CSV.
fn points_path(csv: &Path) -> std::path::PathBuf {
    csv.with_extension("points.json")
}
