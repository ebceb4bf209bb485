//! Backward-induction merge controller on a discretized (lane, speed,
//! distance) grid, plus the early and late benchmark policies.

pub mod cost;
pub mod scenario;

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::platoon::travel;

pub use cost::{
    MergeContext, Normalization, NormalizationMode, RawOutcome, ScenarioCosts, WeightedEnv,
};
pub use scenario::GapScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lane {
    Auxiliary,
    Mainline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeState {
    pub lane: Lane,
    pub v: f64,
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub merge: bool,
    pub accel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub phi: f64,
}

impl CostWeights {
    pub fn new(phi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&phi) {
            return Err(Error::config("phi", format!("{phi} outside [0, 1]")));
        }
        Ok(Self { phi })
    }
}

/// One step of the merge dynamics. Speed is capped at `v_u`; distance
/// integrates the capped speed exactly.
pub fn transition(s: &MergeState, dec: &Decision, dt: f64, v_u: f64) -> Result<MergeState> {
    if dec.merge && s.lane == Lane::Mainline {
        return Err(Error::Infeasible("cannot merge from the mainline".into()));
    }
    if dec.accel < 0.0 {
        return Err(Error::domain(format!(
            "negative acceleration {}",
            dec.accel
        )));
    }
    let (dx, v) = travel(s.v, dec.accel, dt, v_u);
    Ok(MergeState {
        lane: if dec.merge { Lane::Mainline } else { s.lane },
        v,
        d: s.d + dx,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateKey {
    pub step: u32,
    pub lane: u8,
    pub v_idx: u32,
    pub d_idx: u32,
}

/// Discretization of the merge problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpGrid {
    pub v0: f64,
    pub v_u: f64,
    pub a_max: f64,
    pub l_aux: f64,
    pub dt: f64,
    pub speed_step: f64,
    pub distance_step: f64,
    /// Accelerations as fractions of a_max, ascending.
    pub accel_levels: Vec<f64>,
}

impl DpGrid {
    pub fn new(v0: f64, v_u: f64, a_max: f64, l_aux: f64, dt: f64) -> Result<Self> {
        let g = Self {
            v0,
            v_u,
            a_max,
            l_aux,
            dt,
            speed_step: 0.5,
            distance_step: 0.5,
            accel_levels: vec![0.0, 0.5, 1.0],
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (k, v) in [
            ("v0", self.v0),
            ("a_max", self.a_max),
            ("l_aux", self.l_aux),
            ("dt", self.dt),
            ("speed_step", self.speed_step),
            ("distance_step", self.distance_step),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(k, format!("must be positive, got {v}")));
            }
        }
        if self.v0 > self.v_u {
            return Err(Error::config("v0", "entry speed exceeds cruise speed"));
        }
        if self.accel_levels.is_empty()
            || self.accel_levels.iter().any(|a| !(0.0..=1.0).contains(a))
            || self.accel_levels.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::config(
                "accel_levels",
                "need ascending fractions in [0, 1]",
            ));
        }
        Ok(())
    }

    fn top_speed_index(&self) -> u32 {
        ((self.v_u - self.v0) / self.speed_step - 1e-9)
            .ceil()
            .max(0.0) as u32
    }

    /// Nearest grid speed; the last point is v_u itself, closer than one step.
    pub fn speed_index(&self, v: f64) -> u32 {
        let top = self.top_speed_index();
        let lo = (((v - self.v0) / self.speed_step).floor().max(0.0) as u32).min(top);
        let hi = (lo + 1).min(top);
        if (self.speed_value(hi) - v).abs() < (v - self.speed_value(lo)).abs() {
            hi
        } else {
            lo
        }
    }

    pub fn speed_value(&self, idx: u32) -> f64 {
        (self.v0 + idx as f64 * self.speed_step).min(self.v_u)
    }

    pub fn distance_index(&self, d: f64) -> u32 {
        (d / self.distance_step).round().max(0.0) as u32
    }

    pub fn snap(&self, s: &MergeState) -> MergeState {
        MergeState {
            lane: s.lane,
            v: self.speed_value(self.speed_index(s.v)),
            d: self.distance_index(s.d) as f64 * self.distance_step,
        }
    }

    pub fn key(&self, step: usize, s: &MergeState) -> StateKey {
        StateKey {
            step: step as u32,
            lane: match s.lane {
                Lane::Auxiliary => 1,
                Lane::Mainline => 2,
            },
            v_idx: self.speed_index(s.v),
            d_idx: self.distance_index(s.d),
        }
    }

    pub fn initial(&self) -> MergeState {
        self.snap(&MergeState {
            lane: Lane::Auxiliary,
            v: self.v0,
            d: 0.0,
        })
    }

    /// No action keeps the vehicle on the auxiliary lane for another step.
    pub fn forced(&self, s: &MergeState) -> bool {
        s.d + s.v * self.dt > self.l_aux
    }

    pub fn accelerations(&self, s: &MergeState) -> Vec<f64> {
        if s.v >= self.v_u {
            vec![0.0]
        } else {
            self.accel_levels.iter().map(|f| f * self.a_max).collect()
        }
    }

    pub fn step(&self, s: &MergeState, dec: &Decision) -> Result<MergeState> {
        Ok(self.snap(&transition(s, dec, self.dt, self.v_u)?))
    }

    /// Auxiliary-lane states reachable at each step from the initial state.
    pub fn reachable_layers(&self) -> Result<Vec<Vec<MergeState>>> {
        let mut layers = vec![vec![self.initial()]];
        let limit = (self.l_aux / (self.v0 * self.dt)).ceil() as usize + 2;
        loop {
            let k = layers.len() - 1;
            if k > limit {
                return Err(Error::Infeasible(
                    "auxiliary lane never ends on the grid".into(),
                ));
            }
            let mut seen = HashSet::new();
            let mut next = Vec::new();
            for s in &layers[k] {
                if self.forced(s) {
                    continue;
                }
                for a in self.accelerations(s) {
                    let n = self.step(
                        s,
                        &Decision {
                            merge: false,
                            accel: a,
                        },
                    )?;
                    if seen.insert(self.key(k + 1, &n)) {
                        next.push(n);
                    }
                }
            }
            if next.is_empty() {
                return Ok(layers);
            }
            layers.push(next);
        }
    }
}

/// What the controller can observe and pay at each auxiliary-lane state.
pub trait MergeEnvironment {
    fn gap_available(&self, step: usize, s: &MergeState) -> bool;
    /// Cost of merging from `s` at `step` (the whole episode's cost).
    fn merge_cost(&self, step: usize, s: &MergeState) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    /// Decision taken at each step up to and including the merge.
    pub decisions: Vec<Decision>,
    /// State at each step up to and including the merge step.
    pub states: Vec<MergeState>,
    pub forced: bool,
}

impl Policy {
    pub fn merge_step(&self) -> usize {
        self.decisions.len() - 1
    }

    pub fn merge_state(&self) -> MergeState {
        *self.states.last().expect("policy has at least one state")
    }

    /// Accelerations applied before the merge step.
    pub fn approach_accels(&self) -> Vec<f64> {
        self.decisions[..self.merge_step()]
            .iter()
            .map(|d| d.accel)
            .collect()
    }

    pub fn merges(&self) -> usize {
        self.decisions.iter().filter(|d| d.merge).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValueTable {
    pub entries: HashMap<StateKey, (f64, Decision)>,
}

impl ValueTable {
    pub fn value(&self, key: &StateKey) -> Option<f64> {
        self.entries.get(key).map(|e| e.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DpSolution {
    pub policy: Policy,
    pub total_cost: f64,
    pub table: ValueTable,
}

/// Bellman recursion over the reachable layers, from the last step back
/// to the initial state. Ties prefer staying on the auxiliary lane, then the
/// lower acceleration.
pub fn solve_backward(
    env: &impl MergeEnvironment,
    grid: &DpGrid,
    layers: &[Vec<MergeState>],
) -> Result<DpSolution> {
    let mut table = ValueTable::default();
    let terminal = Decision {
        merge: false,
        accel: 0.0,
    };
    for k in (0..layers.len()).rev() {
        for s in &layers[k] {
            let forced = grid.forced(s);
            let mut best: Option<(f64, Decision)> = None;
            if !forced {
                for a in grid.accelerations(s) {
                    let dec = Decision {
                        merge: false,
                        accel: a,
                    };
                    let next = grid.step(s, &dec)?;
                    let v = table.value(&grid.key(k + 1, &next)).ok_or_else(|| {
                        Error::Infeasible(format!("successor of step {k} has no value"))
                    })?;
                    if best.is_none_or(|(b, _)| v < b) {
                        best = Some((v, dec));
                    }
                }
            }
            if forced || env.gap_available(k, s) {
                let dec = Decision {
                    merge: true,
                    accel: 0.0,
                };
                let c = env.merge_cost(k, s);
                let after = transition(s, &dec, grid.dt, grid.v_u)?;
                table
                    .entries
                    .insert(grid.key(k + 1, &after), (0.0, terminal));
                if best.is_none_or(|(b, _)| c < b) {
                    best = Some((c, dec));
                }
            }
            let best = best.ok_or_else(|| Error::Infeasible(format!("no decision at step {k}")))?;
            table.entries.insert(grid.key(k, s), best);
        }
    }
    let total_cost = table
        .value(&grid.key(0, &grid.initial()))
        .expect("initial state solved");
    let policy = follow_table(grid, &table)?;
    Ok(DpSolution {
        policy,
        total_cost,
        table,
    })
}

fn follow_table(grid: &DpGrid, table: &ValueTable) -> Result<Policy> {
    let mut s = grid.initial();
    let mut decisions = Vec::new();
    let mut states = Vec::new();
    for k in 0.. {
        let (_, dec) = table.entries[&grid.key(k, &s)];
        decisions.push(dec);
        states.push(s);
        if dec.merge {
            return Ok(Policy {
                decisions,
                states,
                forced: grid.forced(&s),
            });
        }
        s = grid.step(&s, &dec)?;
    }
    unreachable!()
}

/// Runs a rule-based policy on the grid. `merge_now` sees the step, the
/// state and whether a gap is available.
fn rule_policy(
    env: &impl MergeEnvironment,
    grid: &DpGrid,
    merge_now: impl Fn(usize, &MergeState, bool) -> bool,
) -> Result<Policy> {
    let mut s = grid.initial();
    let mut decisions = Vec::new();
    let mut states = Vec::new();
    for k in 0.. {
        states.push(s);
        let forced = grid.forced(&s);
        if forced || merge_now(k, &s, env.gap_available(k, &s)) {
            decisions.push(Decision {
                merge: true,
                accel: 0.0,
            });
            return Ok(Policy {
                decisions,
                states,
                forced,
            });
        }
        let accel = *grid.accelerations(&s).last().unwrap();
        let dec = Decision {
            merge: false,
            accel,
        };
        decisions.push(dec);
        s = grid.step(&s, &dec)?;
    }
    unreachable!()
}

/// Merges at the first acceptable gap, accelerating at a_max meanwhile.
pub fn early_merge_policy(env: &impl MergeEnvironment, grid: &DpGrid) -> Result<Policy> {
    rule_policy(env, grid, |_, _, gap| gap)
}

/// Accelerates at a_max and merges only near the end of the auxiliary lane:
/// at an acceptable gap when the next step would be forced, else forced.
pub fn late_merge_policy(env: &impl MergeEnvironment, grid: &DpGrid) -> Result<Policy> {
    rule_policy(env, grid, |_, s, gap| {
        if !gap {
            return false;
        }
        let accel = *grid.accelerations(s).last().unwrap();
        grid.step(
            s,
            &Decision {
                merge: false,
                accel,
            },
        )
        .map(|n| grid.forced(&n))
        .unwrap_or(true)
    })
}

pub fn policy_cost(env: &impl MergeEnvironment, policy: &Policy) -> f64 {
    env.merge_cost(policy.merge_step(), &policy.merge_state())
}

/// Minimum cost over every feasible decision sequence, by plain recursion.
/// Exponential; meant for checking `solve_backward` on small grids.
pub fn brute_force_cost(env: &impl MergeEnvironment, grid: &DpGrid) -> Result<f64> {
    fn go(env: &impl MergeEnvironment, grid: &DpGrid, k: usize, s: &MergeState) -> Result<f64> {
        let mut best = f64::INFINITY;
        let forced = grid.forced(s);
        if !forced {
            for a in grid.accelerations(s) {
                let n = grid.step(
                    s,
                    &Decision {
                        merge: false,
                        accel: a,
                    },
                )?;
                best = best.min(go(env, grid, k + 1, &n)?);
            }
        }
        if forced || env.gap_available(k, s) {
            best = best.min(env.merge_cost(k, s));
        }
        Ok(best)
    }
    go(env, grid, 0, &grid.initial())
}
