//! Trajectory ingestion, fundamental-diagram and merge estimators, and the
//! discharge-rate validation report.

use std::collections::{BTreeMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::discharge::capacity_discount;
use crate::error::{Error, Result};
use crate::units::{ft_to_m, kmh_to_mps, vph_to_vps};

pub const TRAJECTORY_HEADER: [&str; 6] = ["vehicle_id", "t_s", "x_m", "lane", "v_mps", "length_m"];

/// Speed below which a vehicle counts as stopped (m/s).
pub const STOPPED_SPEED_MPS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub vehicle_id: u64,
    #[serde(rename = "t_s")]
    pub t: f64,
    #[serde(rename = "x_m")]
    pub x: f64,
    pub lane: i64,
    #[serde(rename = "v_mps")]
    pub v: f64,
    #[serde(rename = "length_m")]
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum UnitProfile {
    /// Columns already in metres and m/s.
    #[default]
    Si,
    /// Positions, speeds and lengths in feet.
    NgsimImperial,
}

impl FromStr for UnitProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "si" => Ok(UnitProfile::Si),
            "ngsim-imperial" => Ok(UnitProfile::NgsimImperial),
            other => Err(Error::config(
                "units",
                format!("unknown unit profile `{other}`"),
            )),
        }
    }
}

fn parse_err(line: u64, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

/// Parses trajectory CSV in the canonical schema. Line numbers in errors
/// are 1-based file lines (the header is line 1).
pub fn read_trajectories(
    reader: impl Read,
    lanes: Option<&[i64]>,
    units: UnitProfile,
) -> Result<Vec<TrajectoryRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().ne(TRAJECTORY_HEADER.iter().copied()) {
        return Err(parse_err(
            1,
            format!(
                "header must be `{}`, got `{}`",
                TRAJECTORY_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let mut rec: TrajectoryRecord = row
            .deserialize(Some(&header))
            .map_err(|e| parse_err(line, e.to_string()))?;
        if !(rec.t.is_finite() && rec.x.is_finite() && rec.v.is_finite() && rec.length.is_finite())
        {
            return Err(parse_err(line, "non-finite value"));
        }
        if lanes.is_some_and(|l| !l.contains(&rec.lane)) {
            continue;
        }
        if units == UnitProfile::NgsimImperial {
            rec.x = ft_to_m(rec.x);
            rec.v = ft_to_m(rec.v);
            rec.length = ft_to_m(rec.length);
        }
        out.push(rec);
    }
    out.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id).then(a.t.total_cmp(&b.t)));
    if let Some(w) = out
        .windows(2)
        .find(|w| w[0].vehicle_id == w[1].vehicle_id && w[0].t == w[1].t)
    {
        return Err(Error::domain(format!(
            "duplicate record for vehicle {} at t = {}",
            w[0].vehicle_id, w[0].t
        )));
    }
    Ok(out)
}

pub fn load_trajectories(
    path: &Path,
    lanes: Option<&[i64]>,
    units: UnitProfile,
) -> Result<Vec<TrajectoryRecord>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_trajectories(std::io::BufReader::new(f), lanes, units)
}

/// Writes records in the canonical (SI) schema.
pub fn write_trajectories(writer: impl Write, records: &[TrajectoryRecord]) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(writer);
    w.write_record(TRAJECTORY_HEADER)
        .map_err(|e| Error::Io(e.to_string()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

fn by_vehicle(records: &[TrajectoryRecord]) -> BTreeMap<u64, Vec<&TrajectoryRecord>> {
    let mut m: BTreeMap<u64, Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.vehicle_id).or_default().push(r);
    }
    for v in m.values_mut() {
        v.sort_by(|a, b| a.t.total_cmp(&b.t));
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveEstimate {
    /// Mean backward wave speed (m/s, positive upstream).
    pub speed: f64,
    pub per_wave: Vec<f64>,
}

/// Stop fronts: instants where a vehicle's speed drops below `threshold`,
/// as (lane, t, x) interpolated between samples.
fn stop_fronts(records: &[TrajectoryRecord], threshold: f64) -> Vec<(i64, f64, f64)> {
    let mut out = Vec::new();
    for recs in by_vehicle(records).values() {
        for w in recs.windows(2) {
            let (a, b) = (w[0], w[1]);
            if a.v >= threshold && b.v < threshold && a.lane == b.lane {
                let f = (a.v - threshold) / (a.v - b.v);
                out.push((a.lane, a.t + f * (b.t - a.t), a.x + f * (b.x - a.x)));
            }
        }
    }
    out.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.total_cmp(&q.1)));
    out
}

fn slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mt = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mx = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mt) * (p.1 - mx)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mt).powi(2)).sum();
    sxy / sxx
}

/// Chains stop fronts into upstream-moving waves and fits x(t) per wave.
/// A front joins a wave when it lies upstream of the wave's last front,
/// at most 15 s later, and at an implied speed between 0.5 and 12 m/s.
pub fn estimate_wave_speed(records: &[TrajectoryRecord], threshold: f64) -> Result<WaveEstimate> {
    let mut waves: Vec<(i64, Vec<(f64, f64)>)> = Vec::new();
    for (lane, t, x) in stop_fronts(records, threshold) {
        let joined = waves.iter_mut().rev().find(|(l, pts)| {
            let (t0, x0) = *pts.last().unwrap();
            let dt = t - t0;
            *l == lane
                && dt > 0.0
                && dt <= 15.0
                && x < x0
                && (0.5..=12.0).contains(&((x0 - x) / dt))
        });
        match joined {
            Some((_, pts)) => pts.push((t, x)),
            None => waves.push((lane, vec![(t, x)])),
        }
    }
    let per_wave: Vec<f64> = waves
        .iter()
        .filter(|(_, p)| p.len() >= 2)
        .map(|(_, p)| -slope(p))
        .collect();
    if per_wave.is_empty() {
        return Err(Error::Estimation("no stop waves found".into()));
    }
    let speed = per_wave.iter().sum::<f64>() / per_wave.len() as f64;
    Ok(WaveEstimate { speed, per_wave })
}

/// Snapshots keyed by (lane, time in ms), vehicles sorted downstream first.
fn snapshots(records: &[TrajectoryRecord]) -> BTreeMap<(i64, i64), Vec<&TrajectoryRecord>> {
    let mut m: BTreeMap<(i64, i64), Vec<&TrajectoryRecord>> = BTreeMap::new();
    for r in records {
        m.entry((r.lane, (r.t * 1000.0).round() as i64))
            .or_default()
            .push(r);
    }
    for v in m.values_mut() {
        v.sort_by(|a, b| b.x.total_cmp(&a.x));
    }
    m
}

/// Mean inverse front-to-front spacing between adjacent stopped vehicles
/// (veh/m).
pub fn estimate_jam_density(records: &[TrajectoryRecord], threshold: f64) -> Result<f64> {
    let mut inv = Vec::new();
    for snap in snapshots(records).values() {
        for w in snap.windows(2) {
            let spacing = w[0].x - w[1].x;
            if w[0].v < threshold && w[1].v < threshold && spacing > 0.0 {
                inv.push(1.0 / spacing);
            }
        }
    }
    if inv.is_empty() {
        return Err(Error::Estimation("no adjacent stopped vehicles".into()));
    }
    Ok(inv.iter().sum::<f64>() / inv.len() as f64)
}

/// Percentile (0..1) of speeds over samples at or above `threshold`.
pub fn estimate_cruise_speed(
    records: &[TrajectoryRecord],
    threshold: f64,
    percentile: f64,
) -> Result<f64> {
    let mut vs: Vec<f64> = records
        .iter()
        .map(|r| r.v)
        .filter(|&v| v >= threshold)
        .collect();
    if vs.is_empty() {
        return Err(Error::Estimation("no moving samples".into()));
    }
    vs.sort_by(f64::total_cmp);
    let pos = percentile.clamp(0.0, 1.0) * (vs.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(vs[lo] + (pos - lo as f64) * (vs[hi] - vs[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MergeKinematics {
    pub v_m: f64,
    pub a: f64,
    pub merges: usize,
}

/// Mean speed at the first sample in `target_lane` after `ramp_lane`, and
/// mean acceleration from there until the vehicle stops accelerating.
pub fn estimate_merge_kinematics(
    records: &[TrajectoryRecord],
    ramp_lane: i64,
    target_lane: i64,
) -> Result<MergeKinematics> {
    let (mut vs, mut accs) = (Vec::new(), Vec::new());
    for recs in by_vehicle(records).values() {
        let Some(i) = recs
            .windows(2)
            .position(|w| w[0].lane == ramp_lane && w[1].lane == target_lane)
        else {
            continue;
        };
        let m = recs[i + 1];
        vs.push(m.v);
        let mut j = i + 1;
        while j + 1 < recs.len() && recs[j + 1].v > recs[j].v {
            j += 1;
        }
        if j > i + 1 {
            accs.push((recs[j].v - m.v) / (recs[j].t - m.t));
        }
    }
    if vs.is_empty() {
        return Err(Error::Estimation(format!(
            "no lane change from {ramp_lane} to {target_lane}"
        )));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
    Ok(MergeKinematics {
        v_m: mean(&vs),
        a: if accs.is_empty() {
            f64::NAN
        } else {
            mean(&accs)
        },
        merges: vs.len(),
    })
}

/// Pre-extracted aggregates for one observation period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Aggregates {
    pub mu_vph: f64,
    pub ramp_flow_vph: f64,
    pub v_u_kmh: f64,
    pub v_m_kmh: f64,
    pub a_mps2: f64,
    pub ground_truth_vph: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_vph: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl Aggregates {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line() as u64,
            msg: e.to_string(),
        })
    }

    pub fn inputs(&self) -> DischargeInputs {
        DischargeInputs {
            mu: vph_to_vps(self.mu_vph),
            ramp_flow: vph_to_vps(self.ramp_flow_vph),
            v_u: kmh_to_mps(self.v_u_kmh),
            v_m: kmh_to_mps(self.v_m_kmh),
            a: self.a_mps2,
            ground_truth: vph_to_vps(self.ground_truth_vph),
        }
    }
}

/// Inputs in any consistent unit system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DischargeInputs {
    pub mu: f64,
    pub ramp_flow: f64,
    pub v_u: f64,
    pub v_m: f64,
    pub a: f64,
    pub ground_truth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DischargeValidation {
    pub theta: f64,
    pub mu_eff: f64,
    pub ape_mu_eff: f64,
    pub ape_mu_max: f64,
}

pub fn validate_inputs(i: &DischargeInputs) -> Result<DischargeValidation> {
    for (k, v) in [
        ("mu", i.mu),
        ("v_u", i.v_u),
        ("a", i.a),
        ("ground_truth", i.ground_truth),
    ] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::config(k, format!("must be positive, got {v}")));
        }
    }
    if !(0.0..=i.v_u).contains(&i.v_m) || !(i.ramp_flow >= 0.0) {
        return Err(Error::domain("need 0 <= v_M <= v_u and ramp flow >= 0"));
    }
    let theta = capacity_discount(i.ramp_flow, i.v_m, i.v_u, i.a);
    if theta >= 1.0 {
        return Err(Error::OverSaturated(theta));
    }
    let mu_eff = i.mu * (1.0 - theta);
    let ape = |x: f64| 100.0 * (x - i.ground_truth).abs() / i.ground_truth;
    Ok(DischargeValidation {
        theta,
        mu_eff,
        ape_mu_eff: ape(mu_eff),
        ape_mu_max: ape(i.mu),
    })
}

/// Rates in veh/s, speeds in m/s. Fields that the inputs cannot supply are
/// left empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub w_est: Option<f64>,
    pub k_j_est: Option<f64>,
    pub v_u_est: Option<f64>,
    pub mu_derived: Option<f64>,
    pub v_m_est: Option<f64>,
    pub a_est: Option<f64>,
    pub arrival_rate: Option<f64>,
    pub ramp_flow: Option<f64>,
    pub ground_truth_rate: Option<f64>,
    pub theta: Option<f64>,
    pub mu_eff: Option<f64>,
    pub ape_mu_eff: Option<f64>,
    pub ape_mu_max: Option<f64>,
}

pub fn validate_discharge(agg: &Aggregates) -> Result<CalibrationReport> {
    let i = agg.inputs();
    let v = validate_inputs(&i)?;
    Ok(CalibrationReport {
        v_u_est: Some(i.v_u),
        mu_derived: Some(i.mu),
        v_m_est: Some(i.v_m),
        a_est: Some(i.a),
        arrival_rate: agg.arrival_vph.map(vph_to_vps),
        ramp_flow: Some(i.ramp_flow),
        ground_truth_rate: Some(i.ground_truth),
        theta: Some(v.theta),
        mu_eff: Some(v.mu_eff),
        ape_mu_eff: Some(v.ape_mu_eff),
        ape_mu_max: Some(v.ape_mu_max),
        ..Default::default()
    })
}

/// Fundamental-diagram and merge estimates from trajectories. Estimators
/// that lack data leave their fields empty; wave speed and jam density are
/// required.
pub fn calibrate_trajectories(
    records: &[TrajectoryRecord],
    threshold: f64,
    merge_lanes: Option<(i64, i64)>,
) -> Result<CalibrationReport> {
    let w = estimate_wave_speed(records, threshold)?.speed;
    let k_j = estimate_jam_density(records, threshold)?;
    let v_u = estimate_cruise_speed(records, threshold, 0.85).ok();
    let merge = merge_lanes.and_then(|(r, t)| estimate_merge_kinematics(records, r, t).ok());
    let mu = v_u.map(|v| w * k_j * v / (v + w));
    let mut report = CalibrationReport {
        w_est: Some(w),
        k_j_est: Some(k_j),
        v_u_est: v_u,
        mu_derived: mu,
        v_m_est: merge.map(|m| m.v_m),
        a_est: merge.map(|m| m.a).filter(|a| a.is_finite()),
        ..Default::default()
    };
    if let (Some(mu), Some(v_u), Some(v_m), Some(a)) = (mu, v_u, report.v_m_est, report.a_est) {
        let ids: HashSet<u64> = records
            .iter()
            .filter(|r| Some(r.lane) == merge_lanes.map(|m| m.0))
            .map(|r| r.vehicle_id)
            .collect();
        let span = records
            .iter()
            .map(|r| r.t)
            .fold(f64::NEG_INFINITY, f64::max)
            - records.iter().map(|r| r.t).fold(f64::INFINITY, f64::min);
        if span > 0.0 && v_m <= v_u {
            let ramp = ids.len() as f64 / span;
            let theta = capacity_discount(ramp, v_m, v_u, a);
            report.ramp_flow = Some(ramp);
            if theta < 1.0 {
                report.theta = Some(theta);
                report.mu_eff = Some(mu * (1.0 - theta));
            }
        }
    }
    Ok(report)
}
