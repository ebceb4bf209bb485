//! The only place where non-SI units are converted. Everything internal is
//! m, s, veh/s and veh/m.

pub const KMH_PER_MPS: f64 = 3.6;
pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const METERS_PER_FOOT: f64 = 0.3048;

pub fn kmh_to_mps(v: f64) -> f64 {
    v / KMH_PER_MPS
}

pub fn mps_to_kmh(v: f64) -> f64 {
    v * KMH_PER_MPS
}

pub fn vph_to_vps(q: f64) -> f64 {
    q / SECONDS_PER_HOUR
}

pub fn vps_to_vph(q: f64) -> f64 {
    q * SECONDS_PER_HOUR
}

pub fn per_km_to_per_m(k: f64) -> f64 {
    k / 1000.0
}

pub fn per_m_to_per_km(k: f64) -> f64 {
    k * 1000.0
}

pub fn ft_to_m(x: f64) -> f64 {
    x * METERS_PER_FOOT
}
