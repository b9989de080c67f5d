use rand::Rng as _;
use rand_distr::{Beta, Distribution, Normal};

use super::DgpError;
use crate::data::InterventionSpace;
use crate::seed::{Rng, SeedTree};

/// Beta distribution described by its mode and a concentration `c >= 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaModeParams {
    pub mode: f64,
    pub concentration: f64,
}

impl BetaModeParams {
    pub fn new(mode: f64, concentration: f64) -> Result<Self, DgpError> {
        beta_from_mode(mode, concentration)?;
        Ok(Self { mode, concentration })
    }

    pub fn shape(&self) -> (f64, f64) {
        beta_from_mode(self.mode, self.concentration).expect("validated at construction")
    }
}

/// Shape parameters `(a, b)` of the Beta distribution with the given mode and
/// concentration `a + b = c`. With `c = 2` this is Uniform[0, 1].
pub fn beta_from_mode(mode: f64, c: f64) -> Result<(f64, f64), DgpError> {
    if !(0.0..=1.0).contains(&mode) || !mode.is_finite() {
        return Err(DgpError::Param(format!("beta mode must lie in [0, 1], got {mode}")));
    }
    if !(c >= 2.0) || !c.is_finite() {
        return Err(DgpError::Param(format!("beta concentration must be >= 2, got {c}")));
    }
    Ok((1.0 + mode * (c - 2.0), 1.0 + (1.0 - mode) * (c - 2.0)))
}

pub fn sample_beta_mode(params: BetaModeParams, rng: &mut Rng) -> f64 {
    let (a, b) = params.shape();
    if a == 1.0 && b == 1.0 {
        return rng.random::<f64>();
    }
    let beta = Beta::new(a, b).expect("shape parameters are >= 1");
    beta.sample(rng).clamp(0.0, 1.0)
}

pub fn sample_uniform_interventions(n: usize, space: &InterventionSpace, seed: &SeedTree) -> Vec<usize> {
    let k = space.k();
    if k == 1 {
        return vec![0; n];
    }
    let mut rng = seed.rng();
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

pub fn sample_uniform_doses(n: usize, seed: &SeedTree) -> Vec<f64> {
    let mut rng = seed.rng();
    (0..n).map(|_| rng.random::<f64>()).collect()
}

/// `Y_i = mu_i + eps_i` with i.i.d. `eps_i ~ Normal(0, sigma^2)`.
pub fn add_noise(mu: &[f64], sigma: f64, seed: &SeedTree) -> Result<Vec<f64>, DgpError> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(DgpError::Param(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(mu.to_vec());
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated");
    let mut rng = seed.rng();
    Ok(mu.iter().map(|m| m + normal.sample(&mut rng)).collect())
}
