//! One merge episode on the microsimulation: counts, delay and risk.

use serde::{Deserialize, Serialize};

use super::platoon::{Clock, Following, MergerPlan, Platoon, Track, VehicleKind};
use crate::error::{Error, Result};
use crate::metrics::crash_risk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub t_m: f64,
    pub x_m: f64,
    pub v_m: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    /// Cumulative-count increment at x_down over the counting window,
    /// interpolated between crossings (fractional).
    pub vehicle_count_downstream: f64,
    pub empirical_mu: f64,
    pub window: (f64, f64),
    pub delay: f64,
    pub risk: f64,
    pub affected: usize,
    pub collided: bool,
    pub min_gap: f64,
    pub merge: Option<MergeRecord>,
    pub trajectories: Vec<Track>,
    pub clock: Clock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSetup {
    pub follow: Following,
    pub x_down: f64,
    /// Counting window length and crash-risk window length.
    pub h_r: f64,
}

/// Gap (m) at or below which two vehicles are considered to have collided.
pub const COLLISION_GAP_M: f64 = 0.5;

/// Runs the mainline with and without the merger. The counting window
/// starts when the merger's new leader crosses x_down (or at the first
/// crossing after `warmup` when there is no merger).
pub fn simulate_episode(
    plan: Option<&MergerPlan>,
    arrivals: &[f64],
    setup: &EpisodeSetup,
    clock: Clock,
    warmup: f64,
) -> Result<EpisodeResult> {
    let base = Platoon::free_flow(arrivals, clock, setup.follow);
    let mut actual = base.clone();
    let dt = clock.dt;
    let (mut risk, mut affected, mut min_gap, mut merge) = (0.0, 0, f64::INFINITY, None);
    let mut t_ref = None;
    if let Some(plan) = plan {
        let res = actual.apply(base.resolve_merge(plan, arrivals.len(), clock.last())?)?;
        let i_to = (res.i_m + (setup.h_r / dt).round() as usize).min(clock.last());
        let trace = base.crash_trace(&res, res.i_m, i_to);
        risk = crash_risk(&trace, dt);
        affected = res.affected;
        min_gap = res.min_gap;
        merge = Some(MergeRecord {
            t_m: plan.t_m,
            x_m: plan.x_m,
            v_m: plan.v_m,
        });
        if res.insert_at > 0 {
            t_ref = crossing_time(&actual.tracks[res.insert_at - 1].x, &clock, setup.x_down);
        }
    }

    let crossings: Vec<Option<f64>> = actual
        .tracks
        .iter()
        .map(|tr| crossing_time(&tr.x, &clock, setup.x_down))
        .collect();
    let mut delay = 0.0;
    for (tr, c) in actual.tracks.iter().zip(&crossings) {
        let reference = match tr.kind {
            VehicleKind::Mainline => crossing_time(&base.tracks[tr.id].x, &clock, setup.x_down),
            VehicleKind::Merger => merge.map(|m| m.t_m + (setup.x_down - m.x_m) / setup.follow.v_u),
        };
        if let Some(r) = reference.filter(|&r| r <= clock.time(clock.last() as isize)) {
            let actual_t = c.unwrap_or(clock.time(clock.last() as isize));
            delay += (actual_t - r).max(0.0);
        }
    }

    let mut sorted: Vec<f64> = crossings.iter().flatten().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let start = match t_ref {
        Some(t) => t,
        None => *sorted
            .iter()
            .find(|&&c| c >= clock.t0 + warmup)
            .ok_or_else(|| Error::domain("no vehicle crosses x_down after the warm-up"))?,
    };
    let count = cumulative_count(&sorted, start + setup.h_r)? - cumulative_count(&sorted, start)?;
    Ok(EpisodeResult {
        vehicle_count_downstream: count,
        empirical_mu: count / setup.h_r,
        window: (start, start + setup.h_r),
        delay,
        risk,
        affected,
        collided: min_gap <= COLLISION_GAP_M,
        min_gap,
        merge,
        trajectories: actual.tracks,
        clock,
    })
}

/// Time the sampled trajectory first reaches `x`, linearly interpolated.
pub fn crossing_time(xs: &[f64], clock: &Clock, x: f64) -> Option<f64> {
    if xs[0] >= x {
        return None;
    }
    let i = xs.iter().position(|&p| p >= x)?;
    let (a, b) = (xs[i - 1], xs[i]);
    let frac = if b > a { (x - a) / (b - a) } else { 1.0 };
    Some(clock.time(i as isize - 1) + frac * clock.dt)
}

/// Cumulative count curve through (c_i, i), linear between crossings.
pub fn cumulative_count(sorted: &[f64], t: f64) -> Result<f64> {
    let n = sorted.len();
    if n < 2 || t < sorted[0] || t > sorted[n - 1] {
        return Err(Error::domain(format!(
            "t = {t} outside the observed crossings"
        )));
    }
    let i = sorted.partition_point(|&c| c <= t).min(n - 1).max(1) - 1;
    let span = sorted[i + 1] - sorted[i];
    Ok(i as f64
        + if span > 0.0 {
            (t - sorted[i]) / span
        } else {
            0.0
        })
}

/// Mainline arrivals at exactly the capacity headway, with one slot left
/// empty right behind the vehicle the merger will follow, and a merger plan
/// that lands Newell-tight behind that leader at (t_m, x_m) with speed v_m.
/// Returns (arrivals, plan).
pub fn saturated_episode(
    follow: &Following,
    t_m: f64,
    x_m: f64,
    v_m: f64,
    a_max: f64,
    ahead: usize,
    behind: usize,
) -> (Vec<f64>, MergerPlan) {
    let h = follow.tau + follow.d_n / follow.v_u;
    let a_leader = t_m - follow.tau - (x_m + follow.d_n) / follow.v_u;
    let mut arrivals: Vec<f64> = (1..=ahead).rev().map(|k| a_leader - k as f64 * h).collect();
    arrivals.push(a_leader);
    arrivals.extend((2..behind + 2).map(|k| a_leader + k as f64 * h));
    (arrivals, MergerPlan::steady(t_m, x_m, v_m, a_max))
}
