use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};

use super::SimError;

/// Portable, seedable generator used throughout the simulator.
pub type SimRng = ChaCha8Rng;

/// A generator together with the seed it was built from.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    rng: SimRng,
}

impl RngState {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: SimRng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.rng
    }
}

/// Independent stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut r = SimRng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Per-trial seed from a master seed and a trial index (splitmix64).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DistributionSpec {
    /// Continuous on `[low, high)`.
    Uniform {
        low: f64,
        high: f64,
    },
    /// Integer on `[low, high]`.
    UniformInt {
        low: u64,
        high: u64,
    },
    Exponential {
        mean: f64,
    },
    Poisson {
        mean: f64,
    },
    Bernoulli {
        p: f64,
    },
}

/// Draws one value; booleans come back as 0.0 / 1.0.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, spec: DistributionSpec) -> Result<f64, SimError> {
    let bad = |msg: String| Err(SimError::InvalidDistribution(msg));
    match spec {
        DistributionSpec::Uniform { low, high } => {
            if !(low.is_finite() && high.is_finite() && low <= high) {
                return bad(format!("uniform [{low}, {high})"));
            }
            if low == high {
                return Ok(low);
            }
            Ok(rng.random_range(low..high))
        }
        DistributionSpec::UniformInt { low, high } => {
            if low > high {
                return bad(format!("uniform int [{low}, {high}]"));
            }
            Ok(rng.random_range(low..=high) as f64)
        }
        DistributionSpec::Exponential { mean } => {
            if !(mean.is_finite() && mean >= 0.0) {
                return bad(format!("exponential mean {mean}"));
            }
            if mean == 0.0 {
                return Ok(0.0);
            }
            let exp = Exp::new(1.0 / mean).map_err(|e| SimError::InvalidDistribution(e.to_string()))?;
            Ok(exp.sample(rng))
        }
        DistributionSpec::Poisson { mean } => {
            if !(mean.is_finite() && mean >= 0.0) {
                return bad(format!("poisson mean {mean}"));
            }
            if mean == 0.0 {
                return Ok(0.0);
            }
            let p = Poisson::new(mean).map_err(|e| SimError::InvalidDistribution(e.to_string()))?;
            Ok(p.sample(rng))
        }
        DistributionSpec::Bernoulli { p } => {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("bernoulli p {p}"));
            }
            Ok(if rng.random::<f64>() < p { 1.0 } else { 0.0 })
        }
    }
}
