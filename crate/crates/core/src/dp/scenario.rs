//! Sampled mainline gap scenarios. Each run gets its own ChaCha stream of
//! the master seed, so run `i` is reproducible on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapScenario {
    pub seed: u64,
    pub run: u64,
    /// Times the unimpeded mainline vehicles pass the lane start (x = 0).
    pub arrivals: Vec<f64>,
    /// Hex SHA-256 of the arrival times (little-endian f64 bytes).
    pub hash: String,
}

impl GapScenario {
    /// Poisson arrivals at `rate` (veh/s) on [t_from, t_to]. The first
    /// arrival is one exponential headway after `t_from`.
    pub fn sample(seed: u64, run: u64, rate: f64, t_from: f64, t_to: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!(
                "mainline rate must be positive, got {rate}"
            )));
        }
        if t_to <= t_from {
            return Err(Error::domain("empty sampling window"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(run);
        let exp = Exp::new(rate).map_err(|e| Error::domain(e.to_string()))?;
        let mut arrivals = Vec::new();
        let mut t = t_from;
        loop {
            t += exp.sample(&mut rng);
            if t > t_to {
                break;
            }
            arrivals.push(t);
        }
        Ok(Self::from_arrivals(seed, run, arrivals))
    }

    pub fn from_arrivals(seed: u64, run: u64, arrivals: Vec<f64>) -> Self {
        let mut h = Sha256::new();
        for a in &arrivals {
            h.update(a.to_le_bytes());
        }
        Self {
            seed,
            run,
            arrivals,
            hash: hex::encode(h.finalize()),
        }
    }

    pub fn headways(&self) -> Vec<f64> {
        self.arrivals.windows(2).map(|w| w[1] - w[0]).collect()
    }
}
