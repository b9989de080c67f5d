//! Data-generating processes: covariates, intervention and dose assignment,
//! response surfaces and outcome noise.

mod sampling;
mod surface;

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution};
use thiserror::Error;

pub use sampling::{
    add_noise, beta_from_mode, sample_beta_mode, sample_uniform_doses, sample_uniform_interventions,
    BetaModeParams,
};
pub use surface::{
    assign_archetypes, ihdp3_modal_dose, ihdp3_response, Archetype, ArchetypeAssignment, FnSurface,
    Ihdp3Surface, MinMax, ResponseSurface, Synth1Surface, Tcga2Surface, IHDP3_BINARY, MODAL_GRID,
};

use crate::data::{CovariateMatrix, DataError, InterventionSpace};
use crate::decomposition::{shuffle_vector, DecompositionOrder};
use crate::seed::SeedTree;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("covariates: {0}")]
    Covariates(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Grid resolution used to score interventions for confounded assignment.
pub const SCORE_GRID: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterventionAssignment {
    /// Softmax sharpness; 0 gives uniform assignment.
    pub kappa: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoseAssignment {
    /// Dose confounding level; 1 gives uniform doses.
    pub alpha: f64,
}

impl DoseAssignment {
    /// Beta concentration used for a given confounding level.
    pub fn concentration(&self) -> f64 {
        2.0 * self.alpha
    }
}

/// A fully resolved data-generating process.
#[derive(Debug, Clone)]
pub struct DgpSpec {
    pub name: String,
    pub covariates: Arc<CovariateMatrix>,
    pub space: InterventionSpace,
    pub t_assign: InterventionAssignment,
    pub d_assign: DoseAssignment,
    pub response: Arc<dyn ResponseSurface>,
    pub noise_sigma: f64,
}

impl DgpSpec {
    pub fn validate(&self) -> Result<(), DgpError> {
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(DgpError::Param(format!("noise sigma must be >= 0, got {}", self.noise_sigma)));
        }
        if !(self.t_assign.kappa >= 0.0) || !self.t_assign.kappa.is_finite() {
            return Err(DgpError::Param(format!("kappa must be >= 0, got {}", self.t_assign.kappa)));
        }
        if !(self.d_assign.alpha >= 1.0) || !self.d_assign.alpha.is_finite() {
            return Err(DgpError::Param(format!("α ≥ 1 required, got {}", self.d_assign.alpha)));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.covariates.rows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovariateKind {
    /// Uniform continuous columns followed by the two IHDP binary columns.
    Ihdp3Surrogate,
    /// Uniform[0, 1] columns only.
    Synth1Style,
}

pub fn synthetic_covariates(
    kind: CovariateKind,
    n: usize,
    m: usize,
    seed: &SeedTree,
) -> Result<CovariateMatrix, DgpError> {
    if n == 0 || m == 0 {
        return Err(DgpError::Param(format!("need n, m >= 1, got ({n}, {m})")));
    }
    let mut rng = seed.rng();
    let (names, binary): (Vec<String>, BTreeSet<String>) = match kind {
        CovariateKind::Ihdp3Surrogate => {
            if m < 7 {
                return Err(DgpError::Param(format!(
                    "ihdp3 surrogate needs five continuous plus two binary columns, got m = {m}"
                )));
            }
            let mut names: Vec<String> = (0..m - 2).map(|j| format!("x{j}")).collect();
            names.extend(IHDP3_BINARY.iter().map(|s| s.to_string()));
            (names, IHDP3_BINARY.iter().map(|s| s.to_string()).collect())
        }
        CovariateKind::Synth1Style => ((0..m).map(|j| format!("x{j}")).collect(), BTreeSet::new()),
    };
    let coin = Bernoulli::new(0.5).expect("valid probability");
    let mut values = Vec::with_capacity(n * m);
    for _ in 0..n {
        for name in &names {
            let v = if binary.contains(name) {
                if coin.sample(&mut rng) { 1.0 } else { 0.0 }
            } else {
                rng.random::<f64>()
            };
            values.push(v);
        }
    }
    Ok(CovariateMatrix::new(names, values, binary)?)
}

/// Draws interventions from `softmax(kappa * z)` where `z` are the globally
/// standardized best-response scores `max_d mu(t, d, x)` over a 9-point grid.
pub fn confounded_intervention_assignment(
    x: &CovariateMatrix,
    space: &InterventionSpace,
    kappa: f64,
    response: &dyn ResponseSurface,
    seed: &SeedTree,
) -> Result<Vec<usize>, DgpError> {
    if !(kappa >= 0.0) || !kappa.is_finite() {
        return Err(DgpError::Param(format!("kappa must be >= 0, got {kappa}")));
    }
    let k = space.k();
    let n = x.rows();
    if k == 1 {
        return Ok(vec![0; n]);
    }
    let probs = intervention_probabilities(x, k, kappa, response);
    Ok((0..n)
        .map(|i| {
            let u: f64 = seed.child_idx("unit", i as u64).rng().random();
            let row = &probs[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for (t, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return t;
                }
            }
            k - 1
        })
        .collect())
}

/// Row-major n x k assignment probabilities.
pub fn intervention_probabilities(
    x: &CovariateMatrix,
    k: usize,
    kappa: f64,
    response: &dyn ResponseSurface,
) -> Vec<f64> {
    let n = x.rows();
    let mut scores = Vec::with_capacity(n * k);
    for i in 0..n {
        let row = x.row(i);
        for t in 0..k {
            let best = (0..SCORE_GRID)
                .map(|g| response.evaluate(t, g as f64 / (SCORE_GRID - 1) as f64, row))
                .fold(f64::NEG_INFINITY, f64::max);
            scores.push(best);
        }
    }
    // z-score each intervention's column so κ acts on unit-level advantage,
    // not on differences in average outcome between interventions
    let stats: Vec<(f64, f64)> = (0..k)
        .map(|t| {
            let col = scores.iter().skip(t).step_by(k);
            let mean = col.clone().sum::<f64>() / n as f64;
            let var = col.map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
            (mean, var.sqrt())
        })
        .collect();
    let mut probs = Vec::with_capacity(n * k);
    for i in 0..n {
        let z: Vec<f64> = scores[i * k..(i + 1) * k]
            .iter()
            .zip(&stats)
            .map(|(s, &(mean, sd))| if sd > 0.0 { kappa * (s - mean) / sd } else { 0.0 })
            .collect();
        let top = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - top).exp()).collect();
        let total: f64 = e.iter().sum();
        probs.extend(e.iter().map(|v| v / total));
    }
    probs
}

/// Draws each unit's dose from a Beta distribution whose mode is the unit's
/// best dose under its assigned intervention, with concentration `2 * alpha`.
pub fn confounded_dose_assignment(
    x: &CovariateMatrix,
    t: &[usize],
    alpha: f64,
    response: &dyn ResponseSurface,
    seed: &SeedTree,
) -> Result<Vec<f64>, DgpError> {
    let assign = DoseAssignment { alpha };
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(DgpError::Param(format!("α ≥ 1 required, got {alpha}")));
    }
    (0..x.rows())
        .map(|i| {
            let mode = response.modal_dose(t[i], x.row(i));
            let params = BetaModeParams::new(mode, assign.concentration())?;
            Ok(sample_beta_mode(params, &mut seed.child_idx("unit", i as u64).rng()))
        })
        .collect()
}

/// Intervention and dose vectors shared by every scenario of one replication.
#[derive(Debug, Clone, PartialEq)]
pub struct BaseVectors {
    pub t_rand: Vec<usize>,
    pub t_conf: Vec<usize>,
    pub t_nonu: Vec<usize>,
    pub d_rand: Vec<f64>,
    pub d_conf: Vec<f64>,
    pub d_nonu: Vec<f64>,
    /// Doses confounded under the random interventions; only produced for
    /// dose-first decompositions, where `d_nonu` shuffles this vector instead.
    pub d_conf_trand: Option<Vec<f64>>,
}

pub fn generate_base_vectors(
    spec: &DgpSpec,
    seed: &SeedTree,
    order: DecompositionOrder,
) -> Result<BaseVectors, DgpError> {
    spec.validate()?;
    let x = spec.covariates.as_ref();
    let n = x.rows();
    let response = spec.response.as_ref();
    let t_rand = sample_uniform_interventions(n, &spec.space, &seed.child("t_rand"));
    let t_conf = confounded_intervention_assignment(
        x,
        &spec.space,
        spec.t_assign.kappa,
        response,
        &seed.child("t_conf"),
    )?;
    let t_nonu = shuffle_vector(&t_conf, &seed.child("t_shuffle"));
    let d_rand = sample_uniform_doses(n, &seed.child("d_rand"));
    let d_conf = confounded_dose_assignment(x, &t_conf, spec.d_assign.alpha, response, &seed.child("d_conf"))?;
    let (d_nonu, d_conf_trand) = match order {
        DecompositionOrder::TreatmentFirst => (shuffle_vector(&d_conf, &seed.child("d_shuffle")), None),
        DecompositionOrder::DoseFirst => {
            let under_rand =
                confounded_dose_assignment(x, &t_rand, spec.d_assign.alpha, response, &seed.child("d_conf_trand"))?;
            (shuffle_vector(&under_rand, &seed.child("d_shuffle")), Some(under_rand))
        }
    };
    Ok(BaseVectors { t_rand, t_conf, t_nonu, d_rand, d_conf, d_nonu, d_conf_trand })
}
