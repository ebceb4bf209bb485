//! Discrete-time Newell platoon on the mainline, with one-at-a-time merger
//! insertion. Vehicles are stored front to back.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::CrashTrace;

/// Deviation (m) above which a follower counts as affected by a merge.
pub const AFFECTED_THRESHOLD_M: f64 = 0.1;
/// Deviation below which a follower is treated as untouched; everything
/// behind it is then untouched as well.
const UNCHANGED_EPS_M: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Clock {
    pub t0: f64,
    pub dt: f64,
    pub len: usize,
}

impl Clock {
    /// Grid covering [t_from, t_to] with t0 aligned to a multiple of `dt`.
    pub fn covering(t_from: f64, t_to: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_to > t_from) {
            return Err(Error::domain("clock needs dt > 0 and t_to > t_from"));
        }
        let first = (t_from / dt).floor() as i64;
        let last = (t_to / dt).ceil() as i64;
        Ok(Self {
            t0: first as f64 * dt,
            dt,
            len: (last - first + 1) as usize,
        })
    }

    pub fn time(&self, i: isize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn last(&self) -> usize {
        self.len - 1
    }

    /// First sample index at or after `t` (with a small tolerance).
    pub fn index_at_or_after(&self, t: f64) -> isize {
        let s = (t - self.t0) / self.dt;
        (s - 1e-7).ceil() as isize
    }

    pub fn fractional_index(&self, t: f64) -> f64 {
        (t - self.t0) / self.dt
    }
}

/// Newell follower parameters shared by every mainline vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Following {
    pub tau: f64,
    pub d_n: f64,
    pub v_u: f64,
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VehicleKind {
    Mainline,
    Merger,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub id: usize,
    pub kind: VehicleKind,
    pub x: Vec<f64>,
    /// Speed used to extend the track backwards before the clock starts.
    pub back_speed: f64,
    /// First sample on the mainline (mergers only).
    pub merge_index: Option<usize>,
}

impl Track {
    pub fn at(&self, i: isize, dt: f64) -> f64 {
        if i < 0 {
            self.x[0] + self.back_speed * dt * i as f64
        } else {
            self.x[(i as usize).min(self.x.len() - 1)]
        }
    }
}

/// What the merger does before it reaches the mainline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PreMerge {
    /// Constant speed v_M before the merge (used where the approach path must
    /// not matter).
    Steady,
    /// Enters the auxiliary lane at `t_spawn` with speed `v0`, then applies
    /// one acceleration per planning step of length `dt`, speed capped at
    /// `v_cap`.
    Profile {
        t_spawn: f64,
        v0: f64,
        dt: f64,
        accels: Vec<f64>,
        v_cap: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergerPlan {
    pub t_m: f64,
    pub x_m: f64,
    pub v_m: f64,
    pub a_max: f64,
    pub pre: PreMerge,
}

impl MergerPlan {
    pub fn steady(t_m: f64, x_m: f64, v_m: f64, a_max: f64) -> Self {
        Self {
            t_m,
            x_m,
            v_m,
            a_max,
            pre: PreMerge::Steady,
        }
    }

    /// Plan that enters the auxiliary lane at x = 0 and merges after
    /// `accels.len()` planning steps; merge point and speed follow from the
    /// kinematics.
    pub fn from_profile(
        t_spawn: f64,
        v0: f64,
        dt: f64,
        accels: Vec<f64>,
        v_cap: f64,
        a_max: f64,
    ) -> Self {
        let (mut x, mut v) = (0.0, v0);
        for &a in &accels {
            let (dx, v1) = travel(v, a, dt, v_cap);
            x += dx;
            v = v1;
        }
        let t_m = t_spawn + dt * accels.len() as f64;
        Self {
            t_m,
            x_m: x,
            v_m: v,
            a_max,
            pre: PreMerge::Profile {
                t_spawn,
                v0,
                dt,
                accels,
                v_cap,
            },
        }
    }

    /// Position on the auxiliary lane at time `t <= t_m`.
    pub fn pre_merge_position(&self, t: f64) -> f64 {
        match &self.pre {
            PreMerge::Steady => self.x_m - self.v_m * (self.t_m - t),
            PreMerge::Profile {
                t_spawn,
                v0,
                dt,
                accels,
                v_cap,
            } => {
                if t <= *t_spawn {
                    return v0 * (t - t_spawn);
                }
                let (mut x, mut v, mut s) = (0.0, *v0, *t_spawn);
                for &a in accels {
                    if t <= s + dt {
                        return x + travel(v, a, t - s, *v_cap).0;
                    }
                    let (dx, v1) = travel(v, a, *dt, *v_cap);
                    x += dx;
                    v = v1;
                    s += dt;
                }
                x + v * (t - s)
            }
        }
    }
}

/// Distance and end speed after accelerating at `a` for `h` seconds from
/// speed `v`, never exceeding `v_cap`.
pub fn travel(v: f64, a: f64, h: f64, v_cap: f64) -> (f64, f64) {
    if a <= 0.0 || v >= v_cap {
        return (v * h, v);
    }
    let t_cap = (v_cap - v) / a;
    if t_cap >= h {
        (v * h + 0.5 * a * h * h, v + a * h)
    } else {
        (
            v * t_cap + 0.5 * a * t_cap * t_cap + v_cap * (h - t_cap),
            v_cap,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeResolution {
    pub merger_id: usize,
    /// Index in the platoon where the merger is inserted (its lag vehicle
    /// is currently at this index).
    pub insert_at: usize,
    pub i_m: usize,
    pub i_end: usize,
    /// Merger positions on [0, i_end].
    pub merger_x: Vec<f64>,
    /// Re-simulated followers: (platoon index, positions on [i_m, i_end]).
    pub followers: Vec<(usize, Vec<f64>)>,
    pub affected: usize,
    /// Smallest net gap seen around the merger or its followers.
    pub min_gap: f64,
    pub plan: MergerPlan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Platoon {
    pub clock: Clock,
    pub follow: Following,
    pub tracks: Vec<Track>,
}

impl Platoon {
    /// Mainline vehicles passing x = 0 at the given times when unimpeded,
    /// then constrained by Newell following. `arrivals` must be ascending.
    pub fn free_flow(arrivals: &[f64], clock: Clock, follow: Following) -> Self {
        let shift = follow.tau / clock.dt;
        let mut tracks: Vec<Track> = Vec::with_capacity(arrivals.len());
        for (id, &a) in arrivals.iter().enumerate() {
            let mut x = Vec::with_capacity(clock.len);
            let free0 = follow.v_u * (clock.t0 - a);
            let start = match tracks.last() {
                Some(lead) => free0.min(lagged(|j| lead.at(j, clock.dt), 0, shift) - follow.d_n),
                None => free0,
            };
            x.push(start);
            for i in 1..clock.len {
                let prev = x[i - 1];
                let free = prev + follow.v_u * clock.dt;
                let next = match tracks.last() {
                    Some(lead) => {
                        free.min(lagged(|j| lead.at(j, clock.dt), i as isize, shift) - follow.d_n)
                    }
                    None => free,
                };
                x.push(next.max(prev));
            }
            tracks.push(Track {
                id,
                kind: VehicleKind::Mainline,
                x,
                back_speed: follow.v_u,
                merge_index: None,
            });
        }
        Self {
            clock,
            follow,
            tracks,
        }
    }

    pub fn position(&self, idx: usize, t: f64) -> f64 {
        let s = self.clock.fractional_index(t);
        let lo = s.floor();
        let track = &self.tracks[idx];
        let a = track.at(lo as isize, self.clock.dt);
        let b = track.at(lo as isize + 1, self.clock.dt);
        a + (s - lo) * (b - a)
    }

    /// Index of the first vehicle whose front is behind `x` at time `t`.
    pub fn insertion_index(&self, t: f64, x: f64) -> usize {
        (0..self.tracks.len())
            .find(|&k| self.position(k, t) < x)
            .unwrap_or(self.tracks.len())
    }

    /// Merger joins the mainline at (t_m, x_m) with speed v_m, accelerates at
    /// a_max towards v_u under Newell constraint by its new leader; vehicles
    /// behind are re-simulated on [i_m, i_end].
    pub fn resolve_merge(
        &self,
        plan: &MergerPlan,
        merger_id: usize,
        i_end: usize,
    ) -> Result<MergeResolution> {
        let clock = self.clock;
        let dt = clock.dt;
        let i_m = clock.index_at_or_after(plan.t_m);
        if i_m < 1 || i_m as usize > i_end || i_end > clock.last() {
            return Err(Error::domain(format!(
                "merge time {} outside simulated window [{}, {}]",
                plan.t_m,
                clock.time(1),
                clock.time(i_end as isize)
            )));
        }
        let i_m = i_m as usize;
        let f = self.follow;
        let shift = f.tau / dt;
        let insert_at = self.insertion_index(plan.t_m, plan.x_m);
        let leader = insert_at.checked_sub(1).map(|k| &self.tracks[k]);
        let mut min_gap = f64::INFINITY;

        let mut merger_x = Vec::with_capacity(i_end + 1);
        for i in 0..i_m {
            merger_x.push(plan.pre_merge_position(clock.time(i as isize)));
        }
        // first mainline sample: pre-merge motion carried to the grid time
        let lead_in = clock.time(i_m as isize) - plan.t_m;
        let (dx, mut v) = travel(plan.v_m, plan.a_max, lead_in, f.v_u);
        merger_x.push(plan.x_m + dx);
        if let Some(l) = leader {
            min_gap = min_gap.min(l.x[i_m] - f.length - merger_x[i_m]);
        }
        for i in i_m + 1..=i_end {
            let prev = merger_x[i - 1];
            let (step, v_free) = travel(v, plan.a_max, dt, f.v_u);
            let mut next = prev + step;
            v = v_free;
            if let Some(l) = leader {
                let cap = lagged(|j| l.at(j, dt), i as isize, shift) - f.d_n;
                if cap < next {
                    next = cap.max(prev);
                    v = (next - prev) / dt;
                }
                min_gap = min_gap.min(l.x[i] - f.length - next);
            }
            merger_x.push(next);
        }

        let mut followers: Vec<(usize, Vec<f64>)> = Vec::new();
        let mut affected = 0;
        for k in insert_at..self.tracks.len() {
            let base = &self.tracks[k];
            let mut x = Vec::with_capacity(i_end - i_m + 1);
            let mut max_dev: f64 = 0.0;
            for i in i_m..=i_end {
                let prev = if i == i_m {
                    base.x[i - 1]
                } else {
                    x[i - i_m - 1]
                };
                let cap = if k == insert_at {
                    lagged(
                        |j| merger_lookup(&merger_x, plan, &clock, j),
                        i as isize,
                        shift,
                    )
                } else {
                    let (lead_idx, lead_x) = followers.last().map(|(a, b)| (*a, b)).unwrap();
                    debug_assert_eq!(lead_idx + 1, k);
                    let lead_base = &self.tracks[lead_idx];
                    lagged(
                        |j| buffered(lead_base, lead_x, i_m, j, dt),
                        i as isize,
                        shift,
                    )
                } - f.d_n;
                let next = (prev + f.v_u * dt).min(cap).max(prev);
                max_dev = max_dev.max((next - base.x[i]).abs());
                x.push(next);
            }
            let lead_now: &[f64] = match followers.last() {
                Some((_, lx)) => lx,
                None => &merger_x[i_m..],
            };
            for (j, &xi) in x.iter().enumerate() {
                min_gap = min_gap.min(lead_now[j] - f.length - xi);
            }
            if max_dev > AFFECTED_THRESHOLD_M {
                affected += 1;
            }
            followers.push((k, x));
            if max_dev <= UNCHANGED_EPS_M {
                break;
            }
        }
        Ok(MergeResolution {
            merger_id,
            insert_at,
            i_m,
            i_end,
            merger_x,
            followers,
            affected,
            min_gap,
            plan: plan.clone(),
        })
    }

    /// DRAC pairs on [i_from, i_to] (inclusive): merger with its first
    /// follower, then each affected follower with the vehicle behind it.
    pub fn crash_trace(&self, res: &MergeResolution, i_from: usize, i_to: usize) -> CrashTrace {
        let dt = self.clock.dt;
        let n = i_to + 1 - i_from;
        let mut trace = CrashTrace::new(n);
        trace.affected = res.affected;
        let speed = |x: &dyn Fn(usize) -> f64, i: usize| (x(i) - x(i - 1)) / dt;
        let merger = |i: usize| res.merger_x[i];
        let follower = |m: usize, i: usize| -> f64 {
            let (k, ref buf) = res.followers[m];
            if i >= res.i_m {
                buf[i - res.i_m]
            } else {
                self.tracks[k].x[i]
            }
        };
        let pairs = (res.affected + 1).min(res.followers.len());
        for step in 0..n {
            let i = i_from + step;
            for m in 0..pairs {
                let lead: Box<dyn Fn(usize) -> f64> = if m == 0 {
                    Box::new(merger)
                } else {
                    Box::new(move |j| follower(m - 1, j))
                };
                let fol = move |j| follower(m, j);
                let gap = lead(i) - self.follow.length - fol(i);
                let rel = speed(&fol, i) - speed(&*lead, i);
                let lead_id = if m == 0 {
                    res.merger_id
                } else {
                    self.tracks[res.followers[m - 1].0].id
                };
                trace.record(step, lead_id, self.tracks[res.followers[m].0].id, rel, gap);
            }
        }
        trace
    }

    /// Writes a resolution into the platoon. Samples after `i_end` of the
    /// re-simulated vehicles are recomputed to the end of the clock first.
    pub fn apply(&mut self, res: MergeResolution) -> Result<MergeResolution> {
        let res = if res.i_end < self.clock.last() {
            self.resolve_merge(&res.plan, res.merger_id, self.clock.last())?
        } else {
            res
        };
        for (k, buf) in &res.followers {
            self.tracks[*k].x[res.i_m..].copy_from_slice(buf);
        }
        let track = Track {
            id: res.merger_id,
            kind: VehicleKind::Merger,
            x: res.merger_x.clone(),
            back_speed: match &res.plan.pre {
                PreMerge::Steady => res.plan.v_m,
                PreMerge::Profile { v0, .. } => *v0,
            },
            merge_index: Some(res.i_m),
        };
        self.tracks.insert(res.insert_at, track);
        Ok(res)
    }
}

fn merger_lookup(buf: &[f64], plan: &MergerPlan, clock: &Clock, j: isize) -> f64 {
    if j >= 0 && (j as usize) < buf.len() {
        buf[j as usize]
    } else {
        plan.pre_merge_position(clock.time(j))
    }
}

fn buffered(base: &Track, buf: &[f64], start: usize, j: isize, dt: f64) -> f64 {
    if j >= start as isize && ((j as usize) - start) < buf.len() {
        buf[j as usize - start]
    } else {
        base.at(j, dt)
    }
}

/// Value of a sampled series at fractional index `i - shift`.
fn lagged(x: impl Fn(isize) -> f64, i: isize, shift: f64) -> f64 {
    let s = i as f64 - shift;
    let lo = s.floor();
    let a = x(lo as isize);
    a + (s - lo) * (x(lo as isize + 1) - a)
}
