//! Merge costs for one sampled scenario: fluid delay from the merge speed and
//! DRAC crash risk from resolving the merge on the microsimulation.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{CostWeights, DpGrid, MergeEnvironment, MergeState, StateKey};
use crate::discharge::effective_discharge_rate;
use crate::error::{Error, Result};
use crate::metrics::{crash_risk, critical_headway, queue_profile, total_delay};
use crate::sim::episode::COLLISION_GAP_M;
use crate::sim::platoon::{Clock, Following, MergerPlan, Platoon};
use crate::traffic::{episode_headway, DemandProfile, FundamentalDiagram, VehicleParams};

use super::scenario::GapScenario;

/// Unweighted consequences of merging from one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawOutcome {
    /// Fluid delay (veh s) over the study period with the discounted rate.
    pub delay: f64,
    /// Same, with the undiscounted capacity.
    pub delay_at_mu: f64,
    pub risk: f64,
    pub collided: bool,
    pub affected: usize,
    pub min_gap: f64,
}

impl RawOutcome {
    /// Risk with collisions replaced by the cap.
    pub fn effective_risk(&self, cap: f64) -> f64 {
        if self.collided {
            cap
        } else {
            self.risk
        }
    }
}

/// How delay and risk are mapped onto [0, 1] before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// Divide by the pooled maximum; percentage differences are preserved.
    #[default]
    Proportional,
    /// Pooled min-max.
    MinMax,
}

/// Bounds for delay and risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub w_min: f64,
    pub w_max: f64,
    pub s_min: f64,
    pub s_max: f64,
}

impl Normalization {
    /// Bounds over the finite (delay, risk) pairs.
    pub fn from_pool(pool: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let mut n = Self {
            w_min: f64::INFINITY,
            w_max: f64::NEG_INFINITY,
            s_min: f64::INFINITY,
            s_max: f64::NEG_INFINITY,
        };
        for (w, s) in pool {
            if w.is_finite() {
                n.w_min = n.w_min.min(w);
                n.w_max = n.w_max.max(w);
            }
            if s.is_finite() {
                n.s_min = n.s_min.min(s);
                n.s_max = n.s_max.max(s);
            }
        }
        n
    }

    pub fn from_pool_with(
        mode: NormalizationMode,
        pool: impl IntoIterator<Item = (f64, f64)>,
    ) -> Self {
        let mut n = Self::from_pool(pool);
        if mode == NormalizationMode::Proportional {
            n.w_min = n.w_min.min(0.0);
            n.s_min = n.s_min.min(0.0);
        }
        n
    }

    fn scale(x: f64, lo: f64, hi: f64) -> f64 {
        if !x.is_finite() {
            return f64::INFINITY;
        }
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    }

    pub fn delay(&self, w: f64) -> f64 {
        Self::scale(w, self.w_min, self.w_max)
    }

    pub fn risk(&self, s: f64) -> f64 {
        Self::scale(s, self.s_min, self.s_max)
    }
}

pub fn stage_cost(
    raw: &RawOutcome,
    weights: &CostWeights,
    norm: &Normalization,
    risk_cap: f64,
) -> f64 {
    let w = norm.delay(raw.delay);
    let s = norm.risk(raw.effective_risk(risk_cap));
    if weights.phi == 1.0 {
        return w;
    }
    if weights.phi == 0.0 {
        return s;
    }
    weights.phi * w + (1.0 - weights.phi) * s
}

/// Everything about the merge problem that does not depend on the sampled
/// mainline: grid, reachable states and the delay for each merge speed.
#[derive(Debug, Clone)]
pub struct MergeContext {
    pub fd: FundamentalDiagram,
    pub demand: DemandProfile,
    /// Merger parameters; `tau` is its reaction time for gap acceptance.
    pub merger: VehicleParams,
    pub follow: Following,
    pub grid: DpGrid,
    pub dt_sim: f64,
    pub study_period: f64,
    pub h_r: f64,
    pub layers: Vec<Vec<MergeState>>,
    delay_by_speed: Vec<f64>,
    pub delay_at_mu: f64,
}

impl MergeContext {
    pub fn new(
        fd: FundamentalDiagram,
        demand: DemandProfile,
        merger: VehicleParams,
        grid: DpGrid,
        dt_sim: f64,
        study_period: f64,
    ) -> Result<Self> {
        grid.validate()?;
        if !(dt_sim > 0.0) || !(study_period > 0.0) {
            return Err(Error::config(
                "dt_sim",
                "time steps and study period must be positive",
            ));
        }
        let (tau, d_n) = fd.newell_params();
        let follow = Following {
            tau,
            d_n,
            v_u: fd.v_u,
            length: merger.length,
        };
        let h_r = episode_headway(&demand, 0.0)?;
        let layers = grid.reachable_layers()?;
        let fluid = |mu_eff: f64| -> Result<f64> {
            let q = queue_profile(&demand, &|_| mu_eff, 0.0, study_period, 1.0)?;
            Ok(total_delay(&q).veh_seconds)
        };
        let top = grid.speed_index(grid.v_u);
        let mut delay_by_speed = Vec::with_capacity(top as usize + 1);
        for i in 0..=top {
            let v = grid.speed_value(i);
            // theta >= 1 at any reachable merge speed makes the point infeasible
            let r = effective_discharge_rate(&fd, &demand, v, grid.a_max, 0.0)?;
            delay_by_speed.push(fluid(r.mu_eff)?);
        }
        let delay_at_mu = fluid(fd.mu)?;
        Ok(Self {
            fd,
            demand,
            merger,
            follow,
            grid,
            dt_sim,
            study_period,
            h_r,
            layers,
            delay_by_speed,
            delay_at_mu,
        })
    }

    pub fn delay_for_speed(&self, v: f64) -> f64 {
        self.delay_by_speed[self.grid.speed_index(v) as usize]
    }

    /// Mainline rate and window to sample scenarios on so every vehicle that
    /// can interact with the merger is present.
    pub fn sampling_window(&self) -> (f64, f64, f64) {
        let rate = self.demand.lambda(0.0) * self.demand.rho_m();
        let t_from = -(self.grid.l_aux + 400.0) / self.fd.v_u;
        (rate, t_from, self.horizon() + 5.0)
    }

    fn horizon(&self) -> f64 {
        self.layers.len() as f64 * self.grid.dt + self.h_r + 2.0
    }

    pub fn sample(&self, seed: u64, run: u64) -> Result<GapScenario> {
        let (rate, t_from, t_to) = self.sampling_window();
        GapScenario::sample(seed, run, rate, t_from, t_to)
    }

    pub fn mainline(&self, scenario: &GapScenario) -> Result<Platoon> {
        let clock = Clock::covering(-2.0, self.horizon(), self.dt_sim)?;
        Ok(Platoon::free_flow(&scenario.arrivals, clock, self.follow))
    }

    /// The sampled headway whose unimpeded vehicles straddle `d` at time
    /// `t` is at least the critical headway at the merger's speed.
    pub fn gap_flag(&self, arrivals: &[f64], t: f64, s: &MergeState) -> bool {
        // unimpeded position v_u (t - a) is at least d for the first `lag` vehicles
        let lag = arrivals.partition_point(|&a| self.fd.v_u * (t - a) >= s.d);
        if lag == 0 || lag == arrivals.len() {
            return false;
        }
        arrivals[lag] - arrivals[lag - 1] >= critical_headway(s.v, &self.merger, self.fd.v_u)
    }

    pub fn outcome(
        &self,
        base: &Platoon,
        merger_id: usize,
        step: usize,
        s: &MergeState,
    ) -> Result<RawOutcome> {
        let t_m = step as f64 * self.grid.dt;
        let plan = MergerPlan::steady(t_m, s.d, s.v, self.grid.a_max);
        let clock = base.clock;
        let i_end = (clock.index_at_or_after(t_m + self.h_r).max(0) as usize).min(clock.last());
        let res = base.resolve_merge(&plan, merger_id, i_end)?;
        let trace = base.crash_trace(&res, res.i_m, res.i_end);
        Ok(RawOutcome {
            delay: self.delay_for_speed(s.v),
            delay_at_mu: self.delay_at_mu,
            risk: crash_risk(&trace, self.dt_sim),
            collided: res.min_gap <= COLLISION_GAP_M,
            affected: res.affected,
            min_gap: res.min_gap,
        })
    }

    /// Gap flags for every reachable state and outcomes for every state the
    /// controller may merge from.
    pub fn evaluate(&self, scenario: &GapScenario) -> Result<ScenarioCosts> {
        let base = self.mainline(scenario)?;
        let mut gaps = HashSet::new();
        let mut outcomes = HashMap::new();
        for (k, layer) in self.layers.iter().enumerate() {
            let t = k as f64 * self.grid.dt;
            for s in layer {
                let key = self.grid.key(k, s);
                let gap = self.gap_flag(&scenario.arrivals, t, s);
                if gap {
                    gaps.insert(key);
                }
                if gap || self.grid.forced(s) {
                    outcomes.insert(key, self.outcome(&base, scenario.arrivals.len(), k, s)?);
                }
            }
        }
        Ok(ScenarioCosts {
            scenario: scenario.clone(),
            gaps,
            outcomes,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCosts {
    pub scenario: GapScenario,
    pub gaps: HashSet<StateKey>,
    pub outcomes: HashMap<StateKey, RawOutcome>,
}

impl ScenarioCosts {
    pub fn outcome(&self, grid: &DpGrid, step: usize, s: &MergeState) -> Option<&RawOutcome> {
        self.outcomes.get(&grid.key(step, s))
    }
}

/// A scenario's costs under fixed weights, bounds and collision cap.
pub struct WeightedEnv<'a> {
    pub grid: &'a DpGrid,
    pub costs: &'a ScenarioCosts,
    pub weights: CostWeights,
    pub norm: Normalization,
    pub risk_cap: f64,
}

impl MergeEnvironment for WeightedEnv<'_> {
    fn gap_available(&self, step: usize, s: &MergeState) -> bool {
        self.costs.gaps.contains(&self.grid.key(step, s))
    }

    fn merge_cost(&self, step: usize, s: &MergeState) -> f64 {
        match self.costs.outcome(self.grid, step, s) {
            Some(raw) => stage_cost(raw, &self.weights, &self.norm, self.risk_cap),
            None => f64::INFINITY,
        }
    }
}
