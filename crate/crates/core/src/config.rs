//! Run configuration: one JSON document with case-study defaults.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dp::{CostWeights, DpGrid, MergeContext, NormalizationMode};
use crate::error::{Error, Result};
use crate::sim::batch::{BatchConfig, SweepParam};
use crate::traffic::{DemandProfile, FundamentalDiagram, MergeGeometry, VehicleParams};
use crate::units::{kmh_to_mps, per_km_to_per_m, vph_to_vps};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdConfig {
    pub w_kmh: f64,
    pub kj_veh_per_km: f64,
    /// Capacity; defaults to the triangle apex.
    pub mu_vph: Option<f64>,
}

impl Default for FdConfig {
    fn default() -> Self {
        Self {
            w_kmh: 16.0,
            kj_veh_per_km: 113.0,
            mu_vph: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub demand_vph: f64,
    pub ramp_ratio: f64,
    pub v_cruise_kmh: f64,
    pub v_ramp_limit_kmh: f64,
    /// Merge speed for the `discharge` command; defaults to the ramp limit.
    pub v_merge_kmh: Option<f64>,
    pub a_max_mps2: f64,
    pub b_max_mps2: f64,
    pub reaction_time_s: f64,
    pub aux_length_m: f64,
    pub study_length_m: f64,
    pub study_period_s: f64,
    pub vehicle_length_m: f64,
    pub fd: FdConfig,
    pub dt_dp_s: f64,
    pub dt_sim_s: f64,
    pub speed_step_mps: f64,
    pub distance_step_m: f64,
    pub phi: f64,
    pub runs: usize,
    pub master_seed: u64,
    /// Risk charged for a collision; derived from the batch when absent.
    pub risk_cap: Option<f64>,
    pub normalization: NormalizationMode,
    pub max_norm_rounds: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            demand_vph: 1600.0,
            ramp_ratio: 0.15,
            v_cruise_kmh: 105.0,
            v_ramp_limit_kmh: 56.0,
            v_merge_kmh: None,
            a_max_mps2: 2.0,
            b_max_mps2: 6.0,
            reaction_time_s: 1.5,
            aux_length_m: 150.0,
            study_length_m: 600.0,
            study_period_s: 150.0,
            vehicle_length_m: 5.0,
            fd: FdConfig::default(),
            dt_dp_s: 0.5,
            dt_sim_s: 0.1,
            speed_step_mps: 0.5,
            distance_step_m: 0.5,
            phi: 0.5,
            runs: 1000,
            master_seed: 42,
            risk_cap: None,
            normalization: NormalizationMode::Proportional,
            max_norm_rounds: 8,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| {
            let msg = e.to_string();
            // serde names the offending field in the message
            let key = msg
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            Error::Config { key, msg }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("demand_vph", self.demand_vph),
            ("v_cruise_kmh", self.v_cruise_kmh),
            ("v_ramp_limit_kmh", self.v_ramp_limit_kmh),
            ("a_max_mps2", self.a_max_mps2),
            ("b_max_mps2", self.b_max_mps2),
            ("reaction_time_s", self.reaction_time_s),
            ("aux_length_m", self.aux_length_m),
            ("study_length_m", self.study_length_m),
            ("study_period_s", self.study_period_s),
            ("vehicle_length_m", self.vehicle_length_m),
            ("fd.w_kmh", self.fd.w_kmh),
            ("fd.kj_veh_per_km", self.fd.kj_veh_per_km),
            ("dt_dp_s", self.dt_dp_s),
            ("dt_sim_s", self.dt_sim_s),
            ("speed_step_mps", self.speed_step_mps),
            ("distance_step_m", self.distance_step_m),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(k, format!("must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&self.ramp_ratio) {
            return Err(Error::config("ramp_ratio", "must be in [0, 1)"));
        }
        if self.v_ramp_limit_kmh > self.v_cruise_kmh {
            return Err(Error::config("v_ramp_limit_kmh", "exceeds v_cruise_kmh"));
        }
        if let Some(v) = self.v_merge_kmh {
            if !(0.0..=self.v_cruise_kmh).contains(&v) {
                return Err(Error::config("v_merge_kmh", "must be in [0, v_cruise_kmh]"));
            }
        }
        if self.aux_length_m >= self.study_length_m {
            return Err(Error::config(
                "aux_length_m",
                "must be shorter than study_length_m",
            ));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(Error::config("phi", "must be in [0, 1]"));
        }
        if self.runs == 0 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        if let Some(mu) = self.fd.mu_vph {
            if !(mu > 0.0) {
                return Err(Error::config("fd.mu_vph", "must be positive"));
            }
        }
        if let Some(c) = self.risk_cap {
            if !(c > 0.0) {
                return Err(Error::config("risk_cap", "must be positive"));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn fundamental_diagram(&self) -> Result<FundamentalDiagram> {
        let (w, k_j, v_u) = (
            kmh_to_mps(self.fd.w_kmh),
            per_km_to_per_m(self.fd.kj_veh_per_km),
            kmh_to_mps(self.v_cruise_kmh),
        );
        match self.fd.mu_vph {
            Some(mu) => FundamentalDiagram::with_capacity(vph_to_vps(mu), w, k_j, v_u),
            None => FundamentalDiagram::from_wave(w, k_j, v_u),
        }
    }

    pub fn demand(&self) -> Result<DemandProfile> {
        DemandProfile::constant(vph_to_vps(self.demand_vph), self.ramp_ratio)
    }

    pub fn geometry(&self) -> Result<MergeGeometry> {
        MergeGeometry::new(self.aux_length_m, self.study_length_m)
    }

    pub fn merger(&self) -> Result<VehicleParams> {
        VehicleParams::new(
            self.reaction_time_s,
            1.0 / per_km_to_per_m(self.fd.kj_veh_per_km),
            self.a_max_mps2,
            self.b_max_mps2,
            self.vehicle_length_m,
        )
    }

    pub fn v_merge(&self) -> f64 {
        kmh_to_mps(self.v_merge_kmh.unwrap_or(self.v_ramp_limit_kmh))
    }

    pub fn grid(&self) -> Result<DpGrid> {
        let mut g = DpGrid::new(
            kmh_to_mps(self.v_ramp_limit_kmh),
            kmh_to_mps(self.v_cruise_kmh),
            self.a_max_mps2,
            self.aux_length_m,
            self.dt_dp_s,
        )?;
        g.speed_step = self.speed_step_mps;
        g.distance_step = self.distance_step_m;
        g.validate()?;
        Ok(g)
    }

    pub fn context(&self) -> Result<MergeContext> {
        self.validate()?;
        MergeContext::new(
            self.fundamental_diagram()?,
            self.demand()?,
            self.merger()?,
            self.grid()?,
            self.dt_sim_s,
            self.study_period_s,
        )
    }

    pub fn batch(&self) -> Result<BatchConfig> {
        Ok(BatchConfig {
            runs: self.runs,
            seed: self.master_seed,
            weights: CostWeights::new(self.phi)?,
            risk_cap: self.risk_cap,
            max_norm_rounds: self.max_norm_rounds,
            normalization: self.normalization,
        })
    }

    /// Copy with one swept parameter set. Ramp ratio is given in percent.
    pub fn with_param(&self, param: SweepParam, value: f64) -> Self {
        let mut c = self.clone();
        match param {
            SweepParam::Demand => c.demand_vph = value,
            SweepParam::AuxLength => c.aux_length_m = value,
            SweepParam::RampRatio => c.ramp_ratio = value / 100.0,
        }
        c
    }
}
