//! Fundamental diagram, Newell car-following and shockwave geometry.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Triangular fundamental diagram. All fields SI: veh/s, m/s, veh/m.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FundamentalDiagram {
    pub mu: f64,
    pub w: f64,
    pub k_j: f64,
    pub v_u: f64,
}

impl FundamentalDiagram {
    /// Capacity at the apex of the triangle.
    pub fn apex(w: f64, k_j: f64, v_u: f64) -> f64 {
        w * k_j * v_u / (v_u + w)
    }

    pub fn from_wave(w: f64, k_j: f64, v_u: f64) -> Result<Self> {
        check_positive("w", w)?;
        check_positive("k_j", k_j)?;
        check_positive("v_u", v_u)?;
        Ok(Self {
            mu: Self::apex(w, k_j, v_u),
            w,
            k_j,
            v_u,
        })
    }

    /// `mu` supplied independently of the triangle (e.g. a measured value).
    pub fn with_capacity(mu: f64, w: f64, k_j: f64, v_u: f64) -> Result<Self> {
        let fd = Self::from_wave(w, k_j, v_u)?;
        check_positive("mu", mu)?;
        if mu > k_j * v_u {
            return Err(Error::domain(format!(
                "capacity {mu} veh/s exceeds k_j*v_u = {} veh/s",
                k_j * v_u
            )));
        }
        Ok(Self { mu, ..fd })
    }

    pub fn apex_capacity(&self) -> f64 {
        Self::apex(self.w, self.k_j, self.v_u)
    }

    pub fn critical_density(&self) -> f64 {
        self.apex_capacity() / self.v_u
    }

    /// Density on the congested branch for traffic moving at speed `v`.
    pub fn congested_density(&self, v: f64) -> f64 {
        self.k_j * self.w / (v + self.w)
    }

    /// Flow on the congested branch for traffic moving at speed `v`.
    pub fn congested_flow(&self, v: f64) -> f64 {
        v * self.congested_density(v)
    }

    /// Density on the congested branch carrying flow `q`.
    pub fn congested_density_for_flow(&self, q: f64) -> f64 {
        self.k_j - q / self.w
    }

    /// Newell (tau, d) consistent with this diagram: d = 1/k_j, tau = 1/(w k_j).
    pub fn newell_params(&self) -> (f64, f64) {
        (1.0 / (self.w * self.k_j), 1.0 / self.k_j)
    }

    /// Saturation headway, 1/mu when mu sits at the apex.
    pub fn capacity_headway(&self) -> f64 {
        let (tau, d) = self.newell_params();
        tau + d / self.v_u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub tau: f64,
    pub d_n: f64,
    pub a_max: f64,
    pub b_max: f64,
    pub length: f64,
}

impl VehicleParams {
    pub fn new(tau: f64, d_n: f64, a_max: f64, b_max: f64, length: f64) -> Result<Self> {
        check_positive("tau", tau)?;
        check_positive("d_n", d_n)?;
        check_positive("a_max", a_max)?;
        check_positive("b_max", b_max)?;
        check_positive("length", length)?;
        Ok(Self {
            tau,
            d_n,
            a_max,
            b_max,
            length,
        })
    }
}

/// Piecewise-constant arrival rate plus a fixed ramp share.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemandProfile {
    /// (start time, rate in veh/s), sorted by start time. The first piece
    /// also covers all earlier times.
    pieces: Vec<(f64, f64)>,
    pub rho_r: f64,
}

impl DemandProfile {
    pub fn constant(lambda: f64, rho_r: f64) -> Result<Self> {
        Self::piecewise(vec![(0.0, lambda)], rho_r)
    }

    pub fn piecewise(mut pieces: Vec<(f64, f64)>, rho_r: f64) -> Result<Self> {
        if pieces.is_empty() {
            return Err(Error::domain("demand profile needs at least one piece"));
        }
        if !(0.0..=1.0).contains(&rho_r) {
            return Err(Error::domain(format!("ramp ratio {rho_r} outside [0, 1]")));
        }
        if pieces
            .iter()
            .any(|&(t, l)| !t.is_finite() || !(l >= 0.0) || !l.is_finite())
        {
            return Err(Error::domain(
                "arrival rates must be finite and non-negative",
            ));
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { pieces, rho_r })
    }

    pub fn rho_m(&self) -> f64 {
        1.0 - self.rho_r
    }

    pub fn lambda(&self, t: f64) -> f64 {
        let idx = self.pieces.partition_point(|&(start, _)| start <= t);
        self.pieces[idx.saturating_sub(1)].1
    }

    pub fn ramp_flow(&self, t: f64) -> f64 {
        self.lambda(t) * self.rho_r
    }

    /// Exact integral of lambda over [t0, t1].
    pub fn integral(&self, t0: f64, t1: f64) -> f64 {
        if t1 <= t0 {
            return 0.0;
        }
        let mut total = 0.0;
        for (i, &(start, rate)) in self.pieces.iter().enumerate() {
            let lo = if i == 0 { f64::NEG_INFINITY } else { start };
            let hi = self.pieces.get(i + 1).map_or(f64::INFINITY, |p| p.0);
            let a = lo.max(t0);
            let b = hi.min(t1);
            if b > a {
                total += rate * (b - a);
            }
        }
        total
    }

    pub fn with_rate_scaled(&self, factor: f64) -> Self {
        Self {
            pieces: self.pieces.iter().map(|&(t, l)| (t, l * factor)).collect(),
            rho_r: self.rho_r,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeGeometry {
    pub l_aux: f64,
    pub x_down: f64,
}

impl MergeGeometry {
    pub fn new(l_aux: f64, x_down: f64) -> Result<Self> {
        if !(l_aux > 0.0 && l_aux <= x_down) {
            return Err(Error::domain(format!(
                "need 0 < L_aux ({l_aux}) <= x_down ({x_down})"
            )));
        }
        Ok(Self { l_aux, x_down })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShockwaveLine {
    pub t0: f64,
    pub x0: f64,
    pub speed: f64,
}

impl ShockwaveLine {
    pub fn new(t0: f64, x0: f64, speed: f64) -> Self {
        Self { t0, x0, speed }
    }

    pub fn position_at(&self, t: f64) -> f64 {
        self.x0 + self.speed * (t - self.t0)
    }
}

/// Uniformly sampled trajectory, linearly interpolated between samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t0: f64,
    pub dt: f64,
    pub x: Vec<f64>,
}

impl Trajectory {
    pub fn new(t0: f64, dt: f64, x: Vec<f64>) -> Result<Self> {
        check_positive("dt", dt)?;
        if x.is_empty() {
            return Err(Error::domain("trajectory has no samples"));
        }
        Ok(Self { t0, dt, x })
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + self.dt * (self.x.len() - 1) as f64
    }

    pub fn position_at(&self, t: f64) -> Result<f64> {
        let eps = 1e-9 * self.dt;
        if t < self.t0 - eps || t > self.t_end() + eps {
            return Err(Error::domain(format!(
                "t = {t} outside trajectory domain [{}, {}]",
                self.t0,
                self.t_end()
            )));
        }
        Ok(interpolate(&self.x, (t - self.t0) / self.dt))
    }
}

/// Linear interpolation of `x` at fractional index `s`, clamped to the ends.
pub fn interpolate(x: &[f64], s: f64) -> f64 {
    let last = x.len() - 1;
    if s <= 0.0 {
        return x[0];
    }
    if s >= last as f64 {
        return x[last];
    }
    let i = s.floor() as usize;
    let f = s - i as f64;
    x[i] + f * (x[i + 1] - x[i])
}

pub fn newell_position(leader: &Trajectory, follower: &VehicleParams, t: f64) -> Result<f64> {
    Ok(leader.position_at(t - follower.tau)? - follower.d_n)
}

/// (time headway, space headway) of a Newell follower at steady speed `v`.
pub fn headways(follower: &VehicleParams, v: f64) -> Result<(f64, f64)> {
    if !(v > 0.0) {
        return Err(Error::domain(format!("speed must be positive, got {v}")));
    }
    Ok((
        follower.tau + follower.d_n / v,
        follower.d_n + follower.tau * v,
    ))
}

/// Duration of one merge episode, 1/(lambda rho_r).
pub fn episode_headway(demand: &DemandProfile, t: f64) -> Result<f64> {
    let flow = demand.ramp_flow(t);
    if !(flow > 0.0) {
        return Err(Error::InfiniteEpisode);
    }
    Ok(1.0 / flow)
}

/// Signed speed of the interface between two (flow, density) states.
pub fn shockwave_speed(state_up: (f64, f64), state_down: (f64, f64)) -> Result<f64> {
    let dk = state_up.1 - state_down.1;
    if dk.abs() <= 1e-15 * state_up.1.abs().max(state_down.1.abs()).max(1e-300) {
        return Err(Error::UndefinedWave);
    }
    Ok((state_up.0 - state_down.0) / dk)
}

pub fn shockwave_intersection(a: &ShockwaveLine, b: &ShockwaveLine) -> Result<(f64, f64)> {
    let ds = a.speed - b.speed;
    if ds.abs() <= 1e-12 * a.speed.abs().max(b.speed.abs()).max(1.0) {
        return Err(Error::Parallel);
    }
    // a.x0 + a.s (t - a.t0) = b.x0 + b.s (t - b.t0)
    let t = (b.x0 - a.x0 + a.speed * a.t0 - b.speed * b.t0) / ds;
    if t < a.t0.min(b.t0) {
        return Err(Error::NoIntersectionWithinEpisode { t });
    }
    Ok((t, a.position_at(t)))
}

/// Time and distance needed to accelerate from `v_m` to `v_u` at `a_max`.
pub fn acceleration_segment(v_m: f64, v_u: f64, a_max: f64) -> Result<(f64, f64)> {
    if !(v_m > 0.0) || v_m > v_u {
        return Err(Error::domain(format!(
            "need 0 < v_M ({v_m}) <= v_u ({v_u})"
        )));
    }
    check_positive("a_max", a_max)?;
    Ok(((v_u - v_m) / a_max, (v_u * v_u - v_m * v_m) / (2.0 * a_max)))
}

pub(crate) fn check_positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "{name} must be positive and finite, got {x}"
        )))
    }
}
