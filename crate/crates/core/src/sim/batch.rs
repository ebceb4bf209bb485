//! Monte Carlo comparison of the DP controller against the early and late
//! merge benchmarks, and one-at-a-time sensitivity sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{
    early_merge_policy, late_merge_policy, solve_backward, CostWeights, MergeContext,
    Normalization, NormalizationMode, Policy, RawOutcome, ScenarioCosts, WeightedEnv,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Dp,
    Early,
    Late,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 3] = [PolicyKind::Dp, PolicyKind::Early, PolicyKind::Late];

    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::Dp => "dp",
            PolicyKind::Early => "early",
            PolicyKind::Late => "late",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub runs: usize,
    pub seed: u64,
    pub weights: CostWeights,
    /// Risk charged for a collision. When absent it is 100 times the 95th
    /// percentile of the benchmarks' collision-free risks.
    pub risk_cap: Option<f64>,
    pub max_norm_rounds: usize,
    pub normalization: NormalizationMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: u64,
    pub policy: PolicyKind,
    pub t_m: f64,
    pub x_m: f64,
    pub v_m: f64,
    pub delay: f64,
    pub delay_at_mu: f64,
    pub risk: f64,
    pub weighted_cost: f64,
    pub forced: bool,
    pub collided: bool,
    pub scenario_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    pub mean_cost: f64,
    pub mean_delay: f64,
    pub mean_delay_at_mu: f64,
    pub mean_risk: f64,
    pub mean_v_m: f64,
    pub collisions: usize,
    pub forced: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub runs: usize,
    pub seed: u64,
    pub phi: f64,
    pub risk_cap: f64,
    pub normalization: Normalization,
    pub normalization_rounds: usize,
    pub normalization_converged: bool,
    pub policies: Vec<PolicySummary>,
    /// Percent reduction of the DP mean cost relative to each benchmark.
    pub reduction_vs_early: f64,
    pub reduction_vs_late: f64,
}

impl BatchSummary {
    pub fn policy(&self, kind: PolicyKind) -> &PolicySummary {
        self.policies
            .iter()
            .find(|p| p.policy == kind)
            .expect("all policies summarized")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchResult {
    pub records: Vec<RunRecord>,
    pub summary: BatchSummary,
}

/// Percent by which `ours` undercuts `theirs`; zero when both are zero.
pub fn reduction_percent(ours: f64, theirs: f64) -> f64 {
    if theirs > 0.0 {
        100.0 * (theirs - ours) / theirs
    } else {
        0.0
    }
}

fn quantile(mut xs: Vec<f64>, q: f64) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let pos = q * (xs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(xs[lo] + (pos - lo as f64) * (xs[hi] - xs[lo]))
}

fn outcome_of(ctx: &MergeContext, costs: &ScenarioCosts, p: &Policy) -> Result<RawOutcome> {
    costs
        .outcome(&ctx.grid, p.merge_step(), &p.merge_state())
        .copied()
        .ok_or_else(|| Error::Infeasible("policy merged from a state without an outcome".into()))
}

fn env_for<'a>(
    ctx: &'a MergeContext,
    costs: &'a ScenarioCosts,
    weights: CostWeights,
    norm: Normalization,
    risk_cap: f64,
) -> WeightedEnv<'a> {
    WeightedEnv {
        grid: &ctx.grid,
        costs,
        weights,
        norm,
        risk_cap,
    }
}

struct Chosen {
    policy: Policy,
    raw: RawOutcome,
}

/// Runs every policy on the same sampled scenarios (common random numbers).
pub fn monte_carlo(ctx: &MergeContext, cfg: &BatchConfig) -> Result<BatchResult> {
    let costs = sample_costs(ctx, cfg.runs, cfg.seed)?;
    monte_carlo_on(ctx, &costs, cfg)
}

/// Samples runs `0..runs` of `seed` and evaluates each scenario.
pub fn sample_costs(ctx: &MergeContext, runs: usize, seed: u64) -> Result<Vec<ScenarioCosts>> {
    if runs == 0 {
        return Err(Error::config("runs", "need at least one run"));
    }
    (0..runs as u64)
        .into_par_iter()
        .map(|r| ctx.evaluate(&ctx.sample(seed, r)?))
        .collect()
}

/// Same as `monte_carlo` on already evaluated scenarios, so several weights
/// can share one sample. `cfg.runs` and `cfg.seed` are taken from `costs`.
pub fn monte_carlo_on(
    ctx: &MergeContext,
    costs: &[ScenarioCosts],
    cfg: &BatchConfig,
) -> Result<BatchResult> {
    if costs.is_empty() {
        return Err(Error::config("runs", "need at least one run"));
    }

    // Benchmarks only look at gap flags, so any weights will do here.
    let probe = |c| env_for(ctx, c, cfg.weights, Normalization::from_pool([]), 0.0);
    let mut bench: Vec<[Chosen; 2]> = Vec::with_capacity(costs.len());
    for c in costs {
        let env = probe(c);
        let e = early_merge_policy(&env, &ctx.grid)?;
        let l = late_merge_policy(&env, &ctx.grid)?;
        bench.push([
            Chosen {
                raw: outcome_of(ctx, c, &e)?,
                policy: e,
            },
            Chosen {
                raw: outcome_of(ctx, c, &l)?,
                policy: l,
            },
        ]);
    }

    let risk_cap = match cfg.risk_cap {
        Some(c) => c,
        None => {
            let clean: Vec<f64> = bench
                .iter()
                .flatten()
                .filter(|c| !c.raw.collided)
                .map(|c| c.raw.risk)
                .collect();
            match quantile(clean, 0.95) {
                Some(p) if p > 0.0 => 100.0 * p,
                _ => 1.0,
            }
        }
    };
    let pair = |r: &RawOutcome| (r.delay, r.effective_risk(risk_cap));

    let solve_all = |norm: Normalization| -> Result<Vec<Chosen>> {
        costs
            .par_iter()
            .map(|c| {
                let env = env_for(ctx, c, cfg.weights, norm, risk_cap);
                let sol = solve_backward(&env, &ctx.grid, &ctx.layers)?;
                Ok(Chosen {
                    raw: outcome_of(ctx, c, &sol.policy)?,
                    policy: sol.policy,
                })
            })
            .collect()
    };

    let mut norm = Normalization::from_pool_with(
        cfg.normalization,
        bench.iter().flatten().map(|c| pair(&c.raw)),
    );
    let mut rounds = 0;
    let mut converged = false;
    let dp = loop {
        rounds += 1;
        let dp = solve_all(norm)?;
        let next = Normalization::from_pool_with(
            cfg.normalization,
            bench
                .iter()
                .flatten()
                .chain(dp.iter())
                .map(|c| pair(&c.raw)),
        );
        if next == norm {
            converged = true;
            break dp;
        }
        if rounds >= cfg.max_norm_rounds.max(1) {
            break dp;
        }
        norm = next;
    };

    let mut records = Vec::with_capacity(3 * costs.len());
    for (c, (d, [e, l])) in costs.iter().zip(dp.iter().zip(bench.iter())) {
        for (kind, ch) in [
            (PolicyKind::Dp, d),
            (PolicyKind::Early, e),
            (PolicyKind::Late, l),
        ] {
            let env = env_for(ctx, c, cfg.weights, norm, risk_cap);
            let s = ch.policy.merge_state();
            records.push(RunRecord {
                run_id: c.scenario.run,
                policy: kind,
                t_m: ch.policy.merge_step() as f64 * ctx.grid.dt,
                x_m: s.d,
                v_m: s.v,
                delay: ch.raw.delay,
                delay_at_mu: ch.raw.delay_at_mu,
                risk: ch.raw.effective_risk(risk_cap),
                weighted_cost: crate::dp::MergeEnvironment::merge_cost(
                    &env,
                    ch.policy.merge_step(),
                    &s,
                ),
                forced: ch.policy.forced,
                collided: ch.raw.collided,
                scenario_hash: c.scenario.hash.clone(),
            });
        }
    }

    let policies: Vec<PolicySummary> = PolicyKind::ALL
        .iter()
        .map(|&kind| {
            let rs: Vec<&RunRecord> = records.iter().filter(|r| r.policy == kind).collect();
            let n = rs.len() as f64;
            let mean = |f: &dyn Fn(&RunRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / n;
            PolicySummary {
                policy: kind,
                mean_cost: mean(&|r| r.weighted_cost),
                mean_delay: mean(&|r| r.delay),
                mean_delay_at_mu: mean(&|r| r.delay_at_mu),
                mean_risk: mean(&|r| r.risk),
                mean_v_m: mean(&|r| r.v_m),
                collisions: rs.iter().filter(|r| r.collided).count(),
                forced: rs.iter().filter(|r| r.forced).count(),
            }
        })
        .collect();
    let cost = |k: usize| policies[k].mean_cost;
    let summary = BatchSummary {
        runs: costs.len(),
        seed: costs[0].scenario.seed,
        phi: cfg.weights.phi,
        risk_cap,
        normalization: norm,
        normalization_rounds: rounds,
        normalization_converged: converged,
        reduction_vs_early: reduction_percent(cost(0), cost(1)),
        reduction_vs_late: reduction_percent(cost(0), cost(2)),
        policies,
    };
    Ok(BatchResult { records, summary })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Demand,
    AuxLength,
    RampRatio,
}

impl SweepParam {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParam::Demand => "demand",
            SweepParam::AuxLength => "aux_length",
            SweepParam::RampRatio => "ramp_ratio",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub param: SweepParam,
    pub value: f64,
    pub phi: f64,
    pub feasible: bool,
    /// Why the point was skipped, when infeasible.
    pub reason: Option<String>,
    pub summary: Option<BatchSummary>,
}

/// Varies one parameter through `values`, rebuilding the problem with
/// `build` at each value and running a batch per weight. Points whose
/// problem cannot be built (oversaturated, no ramp flow, ...) are kept and
/// marked infeasible.
pub fn sensitivity_sweep(
    param: SweepParam,
    values: &[f64],
    phis: &[f64],
    base: &BatchConfig,
    build: impl Fn(f64) -> Result<MergeContext>,
) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(values.len() * phis.len());
    for &value in values {
        let prepared = build(value).and_then(|ctx| {
            let costs = sample_costs(&ctx, base.runs, base.seed)?;
            Ok((ctx, costs))
        });
        let ctx = match prepared {
            Ok(c) => Ok(c),
            Err(e) if e.is_infeasible() => Err(e.to_string()),
            Err(e) => return Err(e),
        };
        for &phi in phis {
            let cfg = BatchConfig {
                weights: CostWeights::new(phi)?,
                ..*base
            };
            let (feasible, reason, summary) = match &ctx {
                Err(msg) => (false, Some(msg.clone()), None),
                Ok((ctx, costs)) => match monte_carlo_on(ctx, costs, &cfg) {
                    Ok(r) => (true, None, Some(r.summary)),
                    Err(e) if e.is_infeasible() => (false, Some(e.to_string()), None),
                    Err(e) => return Err(e),
                },
            };
            out.push(SweepPoint {
                param,
                value,
                phi,
                feasible,
                reason,
                summary,
            });
        }
    }
    Ok(out)
}
