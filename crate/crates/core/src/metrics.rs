//! Gap acceptance, fluid queue delay and DRAC crash risk.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{DemandProfile, VehicleParams};

/// Lag gap plus lead gap a merger needs at speed `v`.
pub fn critical_headway(v: f64, params: &VehicleParams, v_u: f64) -> f64 {
    params.tau + v_u / params.b_max + v / params.b_max
}

/// Probability that a mainline headway is long enough to merge into.
pub fn gap_probability(
    demand: &DemandProfile,
    v: f64,
    params: &VehicleParams,
    v_u: f64,
    t: f64,
) -> f64 {
    let rate = demand.lambda(t) * demand.rho_m();
    (-rate * critical_headway(v, params, v_u)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueProfile {
    /// (t, queue length in vehicles)
    pub samples: Vec<(f64, f64)>,
    pub t0: f64,
    pub t_clear: f64,
    /// False when the queue is still present at the end of the horizon.
    pub cleared: bool,
}

/// Fluid queue from cumulative arrivals minus cumulative discharge.
/// Arrivals are integrated exactly (lambda is piecewise constant), discharge
/// by the trapezoid rule; the queue is clamped at zero.
pub fn queue_profile(
    demand: &DemandProfile,
    mu_eff: &dyn Fn(f64) -> f64,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<QueueProfile> {
    if !(dt > 0.0) {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    let mut samples = vec![(t0, 0.0)];
    let mut q = 0.0;
    let mut t = t0;
    let mut grew = false;
    let mut t_clear = None;
    let mut i = 0u64;
    while t < t_end {
        i += 1;
        let t1 = (t0 + i as f64 * dt).min(t_end);
        let served = 0.5 * (mu_eff(t) + mu_eff(t1)) * (t1 - t);
        let next = q + demand.integral(t, t1) - served;
        if next <= 0.0 {
            if q > 0.0 {
                let t_cross = t + (t1 - t) * q / (q - next);
                if t_cross < t1 {
                    samples.push((t_cross, 0.0));
                }
                if grew && t_clear.is_none() {
                    t_clear = Some(t_cross);
                }
            }
            q = 0.0;
        } else {
            q = next;
            grew = true;
        }
        samples.push((t1, q));
        t = t1;
    }
    let (t_clear, cleared) = match (grew, t_clear) {
        (false, _) => (t0, true),
        (true, Some(tc)) => (tc, true),
        (true, None) => (t_end, false),
    };
    Ok(QueueProfile {
        samples,
        t0,
        t_clear,
        cleared,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayResult {
    pub veh_seconds: f64,
    /// False when the integral stops at the horizon with a queue remaining.
    pub cleared: bool,
}

pub fn total_delay(q: &QueueProfile) -> DelayResult {
    let mut area = 0.0;
    for w in q.samples.windows(2) {
        let (ta, qa) = w[0];
        let (tb, qb) = w[1];
        if ta >= q.t_clear {
            break;
        }
        area += 0.5 * (qa + qb) * (tb.min(q.t_clear) - ta);
    }
    DelayResult {
        veh_seconds: area,
        cleared: q.cleared,
    }
}

/// Deceleration needed by the follower to avoid hitting its leader.
pub fn drac(v_follow: f64, v_lead: f64, gap_net: f64) -> Result<f64> {
    if !(gap_net > 0.0) {
        return Err(Error::Collision(gap_net));
    }
    let dv = v_follow - v_lead;
    Ok(if dv > 0.0 { dv * dv / gap_net } else { 0.0 })
}

/// True when avoiding the conflict needs more than the vehicle's braking
/// capability.
pub fn needs_emergency_braking(drac_value: f64, params: &VehicleParams) -> bool {
    drac_value > params.b_max
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSample {
    pub leader: usize,
    pub follower: usize,
    /// v_follow - v_lead
    pub rel_speed: f64,
    pub net_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollisionEvent {
    pub step: usize,
    pub leader: usize,
    pub follower: usize,
    pub net_gap: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CrashTrace {
    /// One entry per time step, uniformly spaced.
    pub steps: Vec<Vec<PairSample>>,
    pub affected: usize,
    pub collisions: Vec<CollisionEvent>,
}

impl CrashTrace {
    pub fn new(steps: usize) -> Self {
        Self {
            steps: vec![Vec::new(); steps],
            affected: 0,
            collisions: Vec::new(),
        }
    }

    /// Records a pair; non-positive gaps go to `collisions` instead.
    pub fn record(
        &mut self,
        step: usize,
        leader: usize,
        follower: usize,
        rel_speed: f64,
        net_gap: f64,
    ) {
        if net_gap > 0.0 {
            self.steps[step].push(PairSample {
                leader,
                follower,
                rel_speed,
                net_gap,
            });
        } else {
            self.collisions.push(CollisionEvent {
                step,
                leader,
                follower,
                net_gap,
            });
        }
    }
}

/// Trapezoidal time integral of the summed pairwise DRAC.
pub fn crash_risk(trace: &CrashTrace, dt: f64) -> f64 {
    let per_step: Vec<f64> = trace
        .steps
        .iter()
        .map(|pairs| {
            pairs
                .iter()
                .map(|p| {
                    if p.rel_speed > 0.0 {
                        p.rel_speed * p.rel_speed / p.net_gap
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect();
    if per_step.len() < 2 {
        return 0.0;
    }
    let inner: f64 = per_step.iter().sum();
    dt * (inner - 0.5 * (per_step[0] + per_step[per_step.len() - 1]))
}
