//! Closed-form effective discharge rate of a merge episode and its profile
//! along the merge area.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traffic::{
    episode_headway, shockwave_intersection, shockwave_speed, DemandProfile, FundamentalDiagram,
    ShockwaveLine,
};

const ORDER_TOL: f64 = 1e-12;

/// Where and how the merger enters the mainline, and where it reaches v_u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeKinematics {
    pub t_m: f64,
    pub x_m: f64,
    pub v_m: f64,
    pub t_a: f64,
    pub x_a: f64,
    pub v_u: f64,
    pub a_max: f64,
    pub h_r: f64,
}

impl EpisodeKinematics {
    pub fn new(t_m: f64, x_m: f64, v_m: f64, v_u: f64, a_max: f64, h_r: f64) -> Result<Self> {
        if !(v_m >= 0.0 && v_m <= v_u) {
            return Err(Error::domain(format!(
                "need 0 <= v_M ({v_m}) <= v_u ({v_u})"
            )));
        }
        if !(a_max > 0.0 && h_r > 0.0) {
            return Err(Error::domain("a_max and h_r must be positive"));
        }
        Ok(Self {
            t_m,
            x_m,
            v_m,
            t_a: t_m + (v_u - v_m) / a_max,
            x_a: x_m + (v_u * v_u - v_m * v_m) / (2.0 * a_max),
            v_u,
            a_max,
            h_r,
        })
    }

    /// Kinematics of a merge under `demand` at time `t_m`.
    pub fn for_merge(
        fd: &FundamentalDiagram,
        demand: &DemandProfile,
        t_m: f64,
        x_m: f64,
        v_m: f64,
        a_max: f64,
    ) -> Result<Self> {
        Self::new(t_m, x_m, v_m, fd.v_u, a_max, episode_headway(demand, t_m)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeBreakdown {
    pub h_r: f64,
    /// Time with no discharge at the reference point (TS2), taken at Q1 = M.
    pub sigma: f64,
    /// Time discharging at the queued rate (TS3), taken at Q1 = M.
    pub pi: f64,
    pub mu_queued: f64,
    /// Remainder of the episode discharging at mu.
    pub normal: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DischargeResult {
    pub theta: f64,
    pub mu_eff: f64,
    pub components: EpisodeBreakdown,
}

pub fn sigma_q1(v_m: f64, v_q1: f64, v_u: f64, a_max: f64) -> Result<f64> {
    check_order(v_m, v_q1, v_u)?;
    let s = (v_q1 - v_m) / a_max - (v_q1 * v_q1 - v_m * v_m) / (2.0 * a_max * v_u);
    Ok(s.max(0.0))
}

pub fn pi_q1(v_q1: f64, v_u: f64, a_max: f64, w: f64) -> Result<f64> {
    if v_q1 > v_u * (1.0 + ORDER_TOL) {
        return Err(Error::domain(format!("v_Q1 ({v_q1}) exceeds v_u ({v_u})")));
    }
    Ok((v_u * v_u - v_q1 * v_q1) / (2.0 * a_max * w) + (v_u - v_q1) / a_max)
}

/// Average discharge rate at Q1 while the dissipation wave from A passes.
pub fn mu_q1s(v_q1: f64, fd: &FundamentalDiagram) -> Result<f64> {
    if v_q1 > fd.v_u * (1.0 + ORDER_TOL) {
        return Err(Error::domain(format!(
            "v_Q1 ({v_q1}) exceeds v_u ({})",
            fd.v_u
        )));
    }
    Ok(fd.w * fd.k_j * (fd.v_u + v_q1) / (fd.v_u + v_q1 + 2.0 * fd.w))
}

/// The same rate built from its parts: vehicles released between Q1 and A
/// over the TS3 duration. Undefined when v_Q1 = v_u.
pub fn mu_q1s_from_parts(v_q1: f64, fd: &FundamentalDiagram, a_max: f64) -> Result<f64> {
    let pi = pi_q1(v_q1, fd.v_u, a_max, fd.w)?;
    if pi <= 0.0 {
        return Err(Error::domain("TS3 interval is empty at v_Q1 = v_u"));
    }
    let t = (fd.v_u - v_q1) / a_max;
    let x_q1a = v_q1 * t + 0.5 * a_max * t * t;
    let t_s_minus_t_a = x_q1a / fd.w;
    Ok(fd.w * fd.k_j * t_s_minus_t_a / pi)
}

pub fn capacity_discount(ramp_flow: f64, v_m: f64, v_u: f64, a_max: f64) -> f64 {
    ramp_flow * (v_u - v_m).powi(2) / (2.0 * a_max * v_u)
}

pub fn effective_discharge_rate(
    fd: &FundamentalDiagram,
    demand: &DemandProfile,
    v_m: f64,
    a_max: f64,
    t: f64,
) -> Result<DischargeResult> {
    check_order(0.0, v_m, fd.v_u)?;
    let h_r = episode_headway(demand, t)?;
    let theta = capacity_discount(demand.ramp_flow(t), v_m, fd.v_u, a_max);
    if theta >= 1.0 {
        return Err(Error::OverSaturated(theta));
    }
    let sigma = sigma_q1(v_m, v_m, fd.v_u, a_max)?;
    let pi = pi_q1(v_m, fd.v_u, a_max, fd.w)?;
    let components = EpisodeBreakdown {
        h_r,
        sigma,
        pi,
        mu_queued: mu_q1s(v_m, fd)?,
        normal: h_r - sigma - pi,
        mu: fd.mu,
    };
    Ok(DischargeResult {
        theta,
        mu_eff: fd.mu * (1.0 - theta),
        components,
    })
}

/// Episode-average discharge at a reference point Q1 in [M, A] computed
/// period by period: nothing during sigma, mu_Q1S during pi, mu otherwise.
pub fn reference_point_rate(
    fd: &FundamentalDiagram,
    h_r: f64,
    v_m: f64,
    v_q1: f64,
    a_max: f64,
) -> Result<f64> {
    let sigma = sigma_q1(v_m, v_q1, fd.v_u, a_max)?;
    let pi = pi_q1(v_q1, fd.v_u, a_max, fd.w)?;
    let queued = mu_q1s(v_q1, fd)?;
    Ok((sigma * 0.0 + pi * queued + (h_r - sigma - pi) * fd.mu) / h_r)
}

pub fn d_mu_d_vm(
    fd: &FundamentalDiagram,
    demand: &DemandProfile,
    v_m: f64,
    a_max: f64,
    t: f64,
) -> Result<f64> {
    check_order(0.0, v_m, fd.v_u)?;
    Ok(fd.mu * demand.ramp_flow(t) * (fd.v_u - v_m) / (a_max * fd.v_u))
}

/// Queued-state inputs for reference points upstream of M. `None` picks
/// the defaults below.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QueueStateParams {
    pub mu_vx: Option<f64>,
    pub omega: Option<f64>,
}

/// Default queued-state discharge: the TS3 rate at M, which makes the
/// upstream profile continuous with the closed form at M.
pub fn default_mu_vx(fd: &FundamentalDiagram, kin: &EpisodeKinematics) -> Result<f64> {
    mu_q1s(kin.v_m, fd)
}

/// Magnitude of the queuing wave between the mainline flow arriving from
/// upstream and the queued state, clamped to [w/1000, w]. When arrivals are
/// below the queued discharge the queue cannot grow upstream and the lower
/// clamp keeps D just upstream of M.
pub fn default_omega(fd: &FundamentalDiagram, demand: &DemandProfile, t: f64, mu_vx: f64) -> f64 {
    let q_a = (demand.lambda(t) * demand.rho_m()).min(fd.mu);
    let arriving = (q_a, q_a / fd.v_u);
    let queued = (mu_vx, fd.congested_density_for_flow(mu_vx));
    match shockwave_speed(arriving, queued) {
        Ok(s) => (-s).clamp(fd.w * 1e-3, fd.w),
        Err(_) => fd.w * 1e-3,
    }
}

/// Point D where the queuing wave from M meets the dissipation wave from A.
/// `None` when the two waves are parallel (omega = w) and never meet.
pub fn point_d(kin: &EpisodeKinematics, omega: f64, w: f64) -> Result<Option<(f64, f64)>> {
    if kin.t_a == kin.t_m && kin.x_a == kin.x_m {
        return Ok(Some((kin.t_m, kin.x_m)));
    }
    let md = ShockwaveLine::new(kin.t_m, kin.x_m, -omega);
    let ad = ShockwaveLine::new(kin.t_a, kin.x_a, -w);
    match shockwave_intersection(&md, &ad) {
        Ok(p) => Ok(Some(p)),
        Err(Error::Parallel) => Ok(None),
        Err(e) => Err(e),
    }
}

/// TS3 duration at an upstream reference point x_Q2.
pub fn pi_q2(kin: &EpisodeKinematics, x_q2: f64, w: f64, omega: f64) -> f64 {
    let c = kin.t_a - kin.t_m + kin.x_a / w - kin.x_m / omega;
    c - x_q2 * (1.0 / w - 1.0 / omega)
}

fn check_scenario2(
    fd: &FundamentalDiagram,
    kin: &EpisodeKinematics,
    x_q2: f64,
    mu_vx: f64,
    omega: f64,
) -> Result<()> {
    if !(omega > 0.0 && omega <= fd.w * (1.0 + ORDER_TOL)) {
        return Err(Error::domain(format!(
            "omega ({omega}) must lie in (0, w = {}]",
            fd.w
        )));
    }
    if !(mu_vx >= 0.0 && mu_vx <= fd.mu * (1.0 + ORDER_TOL)) {
        return Err(Error::domain(format!(
            "mu_VX ({mu_vx}) must lie in [0, mu]"
        )));
    }
    let tol = 1e-9 * kin.x_m.abs().max(1.0);
    if x_q2 > kin.x_m + tol {
        return Err(Error::domain(format!(
            "x_Q2 ({x_q2}) is downstream of M ({})",
            kin.x_m
        )));
    }
    if let Some((_, x_d)) = point_d(kin, omega, fd.w)? {
        if x_q2 < x_d - tol {
            return Err(Error::domain(format!(
                "x_Q2 ({x_q2}) is upstream of D ({x_d})"
            )));
        }
    }
    Ok(())
}

/// Episode-average discharge at x_Q2 in [x_D, x_M] as the sum of a
/// location-free part and a part linear in x_Q2.
pub fn scenario2_mu(
    fd: &FundamentalDiagram,
    kin: &EpisodeKinematics,
    x_q2: f64,
    mu_vx: f64,
    omega: f64,
) -> Result<f64> {
    check_scenario2(fd, kin, x_q2, mu_vx, omega)?;
    if pi_q2(kin, x_q2, fd.w, omega) <= 0.0 {
        return Ok(fd.mu);
    }
    let rate = 1.0 / kin.h_r;
    let c = kin.t_a - kin.t_m + kin.x_a / fd.w - kin.x_m / omega;
    let part1 = rate * ((kin.h_r - c) * fd.mu + c * mu_vx);
    let part2 = rate * x_q2 * (1.0 / fd.w - 1.0 / omega) * (fd.mu - mu_vx);
    Ok((part1 + part2).min(fd.mu))
}

/// Four-period form of the same quantity: mu outside TS3, mu_VX inside.
pub fn scenario2_mu_by_periods(
    fd: &FundamentalDiagram,
    kin: &EpisodeKinematics,
    x_q2: f64,
    mu_vx: f64,
    omega: f64,
) -> Result<f64> {
    check_scenario2(fd, kin, x_q2, mu_vx, omega)?;
    // TS3 starts when the queuing wave from M arrives and ends when the
    // dissipation wave from A arrives.
    let t_v = kin.t_m + (kin.x_m - x_q2) / omega;
    let t_x = kin.t_a + (kin.x_a - x_q2) / fd.w;
    let pi = (t_x - t_v).max(0.0);
    Ok(((kin.h_r - pi) * fd.mu + pi * mu_vx) / kin.h_r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub x: f64,
    pub mu_eff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DischargeProfile {
    pub points: Vec<ProfilePoint>,
    pub theta: f64,
    pub mu_eff: f64,
    /// `None` when the queuing and dissipation waves never meet.
    pub x_d: Option<f64>,
    pub x_m: f64,
    pub x_a: f64,
    pub mu_vx: f64,
    pub omega: f64,
}

impl DischargeProfile {
    pub fn minimum(&self) -> f64 {
        self.points
            .iter()
            .map(|p| p.mu_eff)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Effective discharge rate as a function of reference location across the
/// merge area, sampled at `sample_count` evenly spaced points plus the
/// landmarks D, M and A.
pub fn discharge_profile(
    fd: &FundamentalDiagram,
    demand: &DemandProfile,
    kin: &EpisodeKinematics,
    sample_count: usize,
    params: QueueStateParams,
) -> Result<DischargeProfile> {
    let result = effective_discharge_rate(fd, demand, kin.v_m, kin.a_max, kin.t_m)?;
    let mu_vx = match params.mu_vx {
        Some(v) => v,
        None => default_mu_vx(fd, kin)?,
    };
    let omega = params
        .omega
        .unwrap_or_else(|| default_omega(fd, demand, kin.t_m, mu_vx));
    let x_d = point_d(kin, omega, fd.w)?.map(|(_, x)| x);

    let span = (kin.x_a - kin.x_m).max(10.0);
    let lo = match x_d {
        Some(x) => x - (0.25 * (kin.x_m - x)).max(10.0),
        None => kin.x_m - 2.0 * span,
    };
    let hi = kin.x_a + 0.25 * span;
    let n = sample_count.max(2);
    let mut xs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    xs.extend([kin.x_m, kin.x_a]);
    xs.extend(x_d);
    xs.sort_by(f64::total_cmp);
    xs.dedup();

    let mut points = Vec::with_capacity(xs.len());
    for x in xs {
        let mu_eff = if x >= kin.x_m {
            result.mu_eff
        } else if x_d.is_some_and(|d| x < d) {
            fd.mu
        } else {
            scenario2_mu(fd, kin, x, mu_vx, omega)?
        };
        points.push(ProfilePoint { x, mu_eff });
    }
    Ok(DischargeProfile {
        points,
        theta: result.theta,
        mu_eff: result.mu_eff,
        x_d,
        x_m: kin.x_m,
        x_a: kin.x_a,
        mu_vx,
        omega,
    })
}

fn check_order(lo: f64, v: f64, hi: f64) -> Result<()> {
    let tol = ORDER_TOL * hi.abs().max(1.0);
    if v < lo - tol || v > hi + tol {
        return Err(Error::domain(format!("speed {v} outside [{lo}, {hi}]")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::units::{kmh_to_mps, per_km_to_per_m, vph_to_vps, vps_to_vph};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn ngsim_fd() -> FundamentalDiagram {
        FundamentalDiagram::from_wave(kmh_to_mps(19.0), per_km_to_per_m(113.0), kmh_to_mps(48.0))
            .unwrap()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma_q1(6.667, 6.667, 13.333, 1.5).unwrap(), 0.0);
        assert_relative_eq!(
            sigma_q1(6.667, 13.333, 13.333, 1.5).unwrap(),
            1.111,
            epsilon = 1e-3
        );
        assert_relative_eq!(
            sigma_q1(0.0, 13.0, 13.0, 1.5).unwrap(),
            13.0 / 3.0,
            epsilon = 1e-12
        );
        assert!(sigma_q1(8.0, 7.0, 13.0, 1.5).is_err());
    }

    #[test]
    fn pi_examples() {
        assert_eq!(pi_q1(13.333, 13.333, 1.5, 5.278).unwrap(), 0.0);
        assert_relative_eq!(
            pi_q1(6.667, 13.333, 1.5, 5.278).unwrap(),
            12.866,
            epsilon = 5e-3
        );
        let first = (13.333f64.powi(2) - 6.667f64.powi(2)) / (2.0 * 1.5 * 5.278);
        assert_relative_eq!(first, 8.421, epsilon = 5e-3);
    }

    #[test]
    fn queued_rate_examples() {
        let fd = FundamentalDiagram::from_wave(5.278, 0.113, 13.333).unwrap();
        let q = mu_q1s(6.667, &fd).unwrap();
        assert_relative_eq!(q, 0.3904, epsilon = 1e-4);
        assert_relative_eq!(vps_to_vph(q), 1405.0, epsilon = 1.0);
        assert_relative_eq!(
            mu_q1s(fd.v_u, &fd).unwrap(),
            fd.apex_capacity(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn dataset_one_rate() {
        let fd = FundamentalDiagram::with_capacity(
            vph_to_vps(1538.0),
            kmh_to_mps(19.0),
            per_km_to_per_m(113.0),
            kmh_to_mps(48.0),
        )
        .unwrap();
        let demand = DemandProfile::constant(vph_to_vps(1828.0), 768.0 / 1828.0).unwrap();
        let r = effective_discharge_rate(&fd, &demand, kmh_to_mps(24.0), 1.5, 0.0).unwrap();
        assert_relative_eq!(r.theta, 0.237, epsilon = 1e-3);
        assert_relative_eq!(vps_to_vph(r.mu_eff), 1174.0, max_relative = 0.01);
        assert_eq!(r.mu_eff, fd.mu * (1.0 - r.theta));

        let at_cruise = effective_discharge_rate(&fd, &demand, fd.v_u, 1.5, 0.0).unwrap();
        assert_eq!(at_cruise.theta, 0.0);
        assert_eq!(at_cruise.mu_eff, fd.mu);
    }

    #[test]
    fn dataset_two_rate() {
        let fd = FundamentalDiagram::with_capacity(
            vph_to_vps(1538.0),
            kmh_to_mps(19.0),
            per_km_to_per_m(113.0),
            kmh_to_mps(48.0),
        )
        .unwrap();
        let demand = DemandProfile::constant(vph_to_vps(1900.0), 798.0 / 1900.0).unwrap();
        let r = effective_discharge_rate(&fd, &demand, kmh_to_mps(26.0), 1.5, 0.0).unwrap();
        assert_relative_eq!(r.theta, 0.207, epsilon = 1e-3);
        assert!((1218.0..=1242.0).contains(&vps_to_vph(r.mu_eff)));
    }

    #[test]
    fn over_saturation_rejected() {
        let fd = ngsim_fd();
        let demand = DemandProfile::constant(1.0, 1.0).unwrap();
        assert!(matches!(
            effective_discharge_rate(&fd, &demand, 0.5, 0.2, 0.0),
            Err(Error::OverSaturated(_))
        ));
    }

    #[test]
    fn derivative_examples() {
        let fd = ngsim_fd();
        let demand = DemandProfile::constant(vph_to_vps(1828.0), 768.0 / 1828.0).unwrap();
        assert_eq!(d_mu_d_vm(&fd, &demand, fd.v_u, 1.5, 0.0).unwrap(), 0.0);
        let v_m = kmh_to_mps(24.0);
        let expected = fd.mu * vph_to_vps(768.0) * (fd.v_u - v_m) / (1.5 * fd.v_u);
        assert_relative_eq!(
            d_mu_d_vm(&fd, &demand, v_m, 1.5, 0.0).unwrap(),
            expected,
            epsilon = 1e-15
        );
    }

    #[test]
    fn theta_linear_in_ramp_flow() {
        let fd = ngsim_fd();
        let d1 = DemandProfile::constant(0.3, 0.2).unwrap();
        let d2 = DemandProfile::constant(0.6, 0.2).unwrap();
        let a = effective_discharge_rate(&fd, &d1, 8.0, 1.5, 0.0)
            .unwrap()
            .theta;
        let b = effective_discharge_rate(&fd, &d2, 8.0, 1.5, 0.0)
            .unwrap()
            .theta;
        assert_relative_eq!(b, 2.0 * a, max_relative = 1e-15);
    }

    #[test]
    fn scenario2_endpoints() {
        let fd = ngsim_fd();
        let demand = DemandProfile::constant(vph_to_vps(1828.0), 768.0 / 1828.0).unwrap();
        let kin = EpisodeKinematics::for_merge(&fd, &demand, 0.0, 100.0, 6.667, 1.5).unwrap();
        let mu_vx = default_mu_vx(&fd, &kin).unwrap();
        let omega = default_omega(&fd, &demand, 0.0, mu_vx);
        assert!(omega > 0.0 && omega <= fd.w);
        let (_, x_d) = point_d(&kin, omega, fd.w).unwrap().unwrap();
        assert!(x_d < kin.x_m);
        assert_eq!(scenario2_mu(&fd, &kin, x_d, mu_vx, omega).unwrap(), fd.mu);
        // continuity with the closed form at M under the default queued rate
        let at_m = scenario2_mu(&fd, &kin, kin.x_m, mu_vx, omega).unwrap();
        let closed = effective_discharge_rate(&fd, &demand, kin.v_m, 1.5, 0.0)
            .unwrap()
            .mu_eff;
        assert_relative_eq!(at_m, closed, max_relative = 1e-9);
        assert!(scenario2_mu(&fd, &kin, x_d - 1.0, mu_vx, omega).is_err());
        assert!(scenario2_mu(&fd, &kin, kin.x_m + 1.0, mu_vx, omega).is_err());
    }

    #[test]
    fn profile_shape() {
        let fd = ngsim_fd();
        let demand = DemandProfile::constant(vph_to_vps(1828.0), 768.0 / 1828.0).unwrap();
        let kin = EpisodeKinematics::for_merge(&fd, &demand, 0.0, 100.0, 6.667, 1.5).unwrap();
        let p = discharge_profile(&fd, &demand, &kin, 200, QueueStateParams::default()).unwrap();
        let x_d = p.x_d.unwrap();
        for pt in &p.points {
            if pt.x < x_d {
                assert_eq!(pt.mu_eff, fd.mu);
            }
            if pt.x >= kin.x_m {
                assert_eq!(pt.mu_eff, p.mu_eff);
            }
        }
        let s2: Vec<f64> = p
            .points
            .iter()
            .filter(|q| q.x >= x_d && q.x <= kin.x_m)
            .map(|q| q.mu_eff)
            .collect();
        assert!(s2.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert_relative_eq!(p.minimum(), p.mu_eff, max_relative = 1e-9);
    }

    #[test]
    fn profile_with_explicit_queue_state() {
        let fd = ngsim_fd();
        let demand = DemandProfile::constant(vph_to_vps(1828.0), 768.0 / 1828.0).unwrap();
        let kin = EpisodeKinematics::for_merge(&fd, &demand, 0.0, 100.0, 6.667, 1.5).unwrap();
        let params = QueueStateParams {
            mu_vx: None,
            omega: Some(0.5 * fd.w),
        };
        let p = discharge_profile(&fd, &demand, &kin, 300, params).unwrap();
        let x_d = p.x_d.unwrap();
        assert!(kin.x_m - x_d > 10.0);
        let inside: Vec<&ProfilePoint> = p
            .points
            .iter()
            .filter(|q| q.x > x_d && q.x < kin.x_m)
            .collect();
        assert!(inside.len() > 20);
        assert!(inside
            .iter()
            .all(|q| q.mu_eff < fd.mu && q.mu_eff >= p.mu_eff - 1e-12));
        assert_relative_eq!(p.minimum(), p.mu_eff, max_relative = 1e-9);
        // two reference points between M and A see the same rate
        let between: Vec<f64> = p
            .points
            .iter()
            .filter(|q| q.x > kin.x_m && q.x < kin.x_a)
            .map(|q| q.mu_eff)
            .collect();
        assert!(between.len() >= 2 && between.iter().all(|&m| m == p.mu_eff));
    }

    #[test]
    fn parallel_waves_profile_is_flat_upstream() {
        let fd = ngsim_fd();
        let demand = DemandProfile::constant(vph_to_vps(1828.0), 768.0 / 1828.0).unwrap();
        let kin = EpisodeKinematics::for_merge(&fd, &demand, 0.0, 100.0, 6.667, 1.5).unwrap();
        let params = QueueStateParams {
            mu_vx: None,
            omega: Some(fd.w),
        };
        let p = discharge_profile(&fd, &demand, &kin, 50, params).unwrap();
        assert!(p.x_d.is_none());
        let up: Vec<f64> = p
            .points
            .iter()
            .filter(|q| q.x < kin.x_m)
            .map(|q| q.mu_eff)
            .collect();
        assert!(up.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    }

    #[test]
    fn distance_over_w_matches_kinematics() {
        let (v_m, v_u, a, w) = (6.667, 13.333, 1.5, 5.278);
        let t = (v_u - v_m) / a;
        let lhs = (v_m * t + 0.5 * a * t * t) / w;
        let rhs = (v_u * v_u - v_m * v_m) / (2.0 * a * w);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn queued_rate_two_routes(
            w in 2.0f64..8.0, kj in 0.08f64..0.16, v_u in 10.0f64..35.0,
            frac in 0.0f64..0.98, a in 0.5f64..3.0,
        ) {
            let fd = FundamentalDiagram::from_wave(w, kj, v_u).unwrap();
            let v = frac * v_u;
            let direct = mu_q1s(v, &fd).unwrap();
            let parts = mu_q1s_from_parts(v, &fd, a).unwrap();
            prop_assert!((direct - parts).abs() <= 1e-9 * direct);
        }

        #[test]
        fn reference_point_rate_is_closed_form(
            w in 2.0f64..8.0, kj in 0.08f64..0.16, v_u in 10.0f64..35.0,
            vm_frac in 0.1f64..1.0, a in 0.8f64..3.0, ramp in 0.02f64..0.2,
        ) {
            let fd = FundamentalDiagram::from_wave(w, kj, v_u).unwrap();
            let demand = DemandProfile::constant(ramp, 1.0).unwrap();
            let v_m = vm_frac * v_u;
            let h_r = 1.0 / ramp;
            prop_assume!(capacity_discount(ramp, v_m, v_u, a) < 1.0);
            let closed = effective_discharge_rate(&fd, &demand, v_m, a, 0.0).unwrap().mu_eff;
            for i in 0..50 {
                let v_q1 = v_m + (v_u - v_m) * i as f64 / 49.0;
                let r = reference_point_rate(&fd, h_r, v_m, v_q1, a).unwrap();
                prop_assert!((r - closed).abs() <= 1e-9 * closed);
            }
        }

        #[test]
        fn derivative_matches_finite_difference(
            vm_frac in 0.05f64..0.95, a in 0.8f64..3.0, ramp in 0.02f64..0.15,
        ) {
            let fd = ngsim_fd();
            let demand = DemandProfile::constant(ramp, 1.0).unwrap();
            let v_m = vm_frac * fd.v_u;
            prop_assume!(capacity_discount(ramp, v_m * 0.99, fd.v_u, a) < 1.0);
            let h = 1e-5;
            let f = |v: f64| effective_discharge_rate(&fd, &demand, v, a, 0.0).unwrap().mu_eff;
            let fdiff = (f(v_m + h) - f(v_m - h)) / (2.0 * h);
            let exact = d_mu_d_vm(&fd, &demand, v_m, a, 0.0).unwrap();
            prop_assert!(exact >= 0.0);
            prop_assert!((fdiff - exact).abs() <= 1e-6 * exact.abs().max(1e-12));
        }

        #[test]
        fn scenario2_two_routes_and_monotone(
            vm_frac in 0.2f64..0.95, a in 0.8f64..3.0, ramp in 0.02f64..0.15,
            vx_frac in 0.0f64..1.0, om_frac in 0.05f64..1.0,
        ) {
            let fd = ngsim_fd();
            let demand = DemandProfile::constant(ramp, 1.0).unwrap();
            let kin = EpisodeKinematics::for_merge(&fd, &demand, 3.0, 120.0, vm_frac * fd.v_u, a).unwrap();
            let mu_vx = vx_frac * fd.mu;
            let omega = om_frac * fd.w;
            let (_, x_d) = point_d(&kin, omega, fd.w).unwrap().unwrap();
            let mut prev = f64::INFINITY;
            for i in 0..100 {
                let x = x_d + (kin.x_m - x_d) * i as f64 / 99.0;
                let s = scenario2_mu(&fd, &kin, x, mu_vx, omega).unwrap();
                let p = scenario2_mu_by_periods(&fd, &kin, x, mu_vx, omega).unwrap();
                prop_assert!((s - p).abs() <= 1e-9 * fd.mu);
                prop_assert!(s <= prev + 1e-12);
                prev = s;
            }
        }

        #[test]
        fn effective_rate_non_decreasing_in_merge_speed(a in 0.8f64..3.0, ramp in 0.02f64..0.1) {
            let fd = ngsim_fd();
            let demand = DemandProfile::constant(ramp, 1.0).unwrap();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=40 {
                let v = fd.v_u * i as f64 / 40.0;
                if let Ok(r) = effective_discharge_rate(&fd, &demand, v, a, 0.0) {
                    prop_assert!(r.mu_eff >= prev);
                    prev = r.mu_eff;
                }
            }
        }
    }
}
