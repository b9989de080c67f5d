//! Response surfaces `mu(t, d, x)`: the noiseless expected outcome of a unit
//! with covariates `x` under intervention `t` at dose `d`.

use std::f64::consts::PI;
use std::fmt;

use rand_distr::{Distribution, Normal};

use super::DgpError;
use crate::data::CovariateMatrix;
use crate::seed::SeedTree;

/// Grid resolution used to locate a unit's best dose.
pub const MODAL_GRID: usize = 65;

pub trait ResponseSurface: Send + Sync + fmt::Debug {
    fn evaluate(&self, t: usize, d: f64, x: &[f64]) -> f64;

    /// Dose maximizing `mu(t, ., x)` on a 65-point grid, ties toward the
    /// smaller dose.
    fn modal_dose(&self, t: usize, x: &[f64]) -> f64 {
        grid_argmax(MODAL_GRID, |d| self.evaluate(t, d, x))
    }
}

pub(crate) fn grid_argmax(points: usize, f: impl Fn(f64) -> f64) -> f64 {
    let mut best = (0.0, f64::NEG_INFINITY);
    for i in 0..points {
        let d = i as f64 / (points - 1) as f64;
        let v = f(d);
        if v > best.1 {
            best = (d, v);
        }
    }
    best.0
}

/// Wraps a closure as a surface. Mostly useful in tests and examples.
pub struct FnSurface<F>(pub F);

impl<F> fmt::Debug for FnSurface<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnSurface")
    }
}

impl<F> ResponseSurface for FnSurface<F>
where
    F: Fn(usize, f64, &[f64]) -> f64 + Send + Sync,
{
    fn evaluate(&self, t: usize, d: f64, x: &[f64]) -> f64 {
        (self.0)(t, d, x)
    }
}

/// Per-column min/max scaling to [0, 1]; constant columns map to 0.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMax {
    lo: Vec<f64>,
    span: Vec<f64>,
}

impl MinMax {
    pub fn fit(x: &CovariateMatrix, cols: &[usize]) -> Self {
        let mut lo = Vec::with_capacity(cols.len());
        let mut span = Vec::with_capacity(cols.len());
        for &j in cols {
            let col = x.column(j);
            let min = col.iter().copied().fold(f64::INFINITY, f64::min);
            let max = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo.push(min);
            span.push(max - min);
        }
        Self { lo, span }
    }

    pub fn scale(&self, idx: usize, v: f64) -> f64 {
        if self.span[idx] > 0.0 {
            (v - self.lo[idx]) / self.span[idx]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Archetype {
    A1,
    A2,
    A3,
    A4,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [Archetype::A1, Archetype::A2, Archetype::A3, Archetype::A4];

    /// Lexicographic over the two driving binary covariates.
    pub fn from_bits(a: bool, b: bool) -> Self {
        match (a, b) {
            (false, false) => Archetype::A1,
            (false, true) => Archetype::A2,
            (true, false) => Archetype::A3,
            (true, true) => Archetype::A4,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchetypeAssignment {
    pub archetypes: Vec<Archetype>,
    pub columns: (String, String),
}

pub fn assign_archetypes(
    x: &CovariateMatrix,
    col_a: &str,
    col_b: &str,
) -> Result<ArchetypeAssignment, DgpError> {
    let ja = binary_column(x, col_a)?;
    let jb = binary_column(x, col_b)?;
    let archetypes = (0..x.rows())
        .map(|i| Archetype::from_bits(x.get(i, ja) == 1.0, x.get(i, jb) == 1.0))
        .collect();
    Ok(ArchetypeAssignment { archetypes, columns: (col_a.to_string(), col_b.to_string()) })
}

fn binary_column(x: &CovariateMatrix, name: &str) -> Result<usize, DgpError> {
    let j = x
        .column_index(name)
        .ok_or_else(|| DgpError::Covariates(format!("missing column `{name}`")))?;
    if let Some(i) = (0..x.rows()).find(|&i| !matches!(x.get(i, j), v if v == 0.0 || v == 1.0)) {
        return Err(DgpError::Covariates(format!(
            "column `{name}` is not binary: row {i} holds {}",
            x.get(i, j)
        )));
    }
    Ok(j)
}

/// Dose-response curve of an IHDP-3 archetype. `x` holds the five leading
/// covariates already scaled to [0, 1].
pub fn ihdp3_response(archetype: Archetype, x: &[f64; 5], d: f64) -> f64 {
    match archetype {
        Archetype::A1 => {
            let g = d - 0.75 * (x[1] + x[2]);
            10.0 * (x[0] + 12.0 * d * g * g)
        }
        Archetype::A2 => 10.0 * (x[1] + (PI * (x[2] + x[3]) * d).sin()),
        Archetype::A3 => 10.0 * (x[2] + 12.0 * (x[3] * d - x[4] * d * d)),
        Archetype::A4 => x[0] * 3.0 * (20.0 * x[2] * d).sin() + 20.0 * x[3] * d - 20.0 * x[4] * d * d + 5.0,
    }
}

pub fn ihdp3_modal_dose(archetype: Archetype) -> f64 {
    match archetype {
        Archetype::A1 => 0.125,
        Archetype::A2 => 0.375,
        Archetype::A3 => 0.625,
        Archetype::A4 => 0.875,
    }
}

pub const IHDP3_BINARY: [&str; 2] = ["b.marr", "mom.lths"];

/// Single-intervention surface with four archetype-specific curves.
#[derive(Debug, Clone)]
pub struct Ihdp3Surface {
    col_a: usize,
    col_b: usize,
    scaler: MinMax,
}

impl Ihdp3Surface {
    pub fn new(x: &CovariateMatrix) -> Result<Self, DgpError> {
        if x.cols() < 5 {
            return Err(DgpError::Covariates(format!(
                "IHDP-3 needs at least five covariate columns, got {}",
                x.cols()
            )));
        }
        let col_a = binary_column(x, IHDP3_BINARY[0])?;
        let col_b = binary_column(x, IHDP3_BINARY[1])?;
        Ok(Self { col_a, col_b, scaler: MinMax::fit(x, &[0, 1, 2, 3, 4]) })
    }

    pub fn archetype(&self, x: &[f64]) -> Archetype {
        Archetype::from_bits(x[self.col_a] == 1.0, x[self.col_b] == 1.0)
    }

    fn leading(&self, x: &[f64]) -> [f64; 5] {
        std::array::from_fn(|j| self.scaler.scale(j, x[j]))
    }
}

impl ResponseSurface for Ihdp3Surface {
    fn evaluate(&self, _t: usize, d: f64, x: &[f64]) -> f64 {
        ihdp3_response(self.archetype(x), &self.leading(x), d)
    }

    fn modal_dose(&self, _t: usize, x: &[f64]) -> f64 {
        ihdp3_modal_dose(self.archetype(x))
    }
}

/// Multi-intervention surface in the style of the TCGA benchmarks: each
/// intervention responds through three random projections of the scaled
/// covariates, cycling through a quadratic, a sinusoidal and a cubic dose
/// shape, each with an interior optimum whose location depends on `x`.
/// Projections are shrunk toward 0.5 by [`Tcga2Surface::HETEROGENEITY`], so
/// units differ mostly in level and the dose shape is shared across `x`.
#[derive(Debug, Clone)]
pub struct Tcga2Surface {
    k: usize,
    m: usize,
    /// `weights[t][j]` is the j-th projection vector (length m) of intervention t.
    weights: Vec<[Vec<f64>; 3]>,
    scaler: MinMax,
}

impl Tcga2Surface {
    pub const SCALE: f64 = 10.0;
    pub const HETEROGENEITY: f64 = 0.1;

    pub fn new(x: &CovariateMatrix, k: usize, seed: &SeedTree) -> Result<Self, DgpError> {
        if k == 0 {
            return Err(DgpError::Param("need at least one intervention".into()));
        }
        let m = x.cols();
        let cols: Vec<usize> = (0..m).collect();
        let normal = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
        let mut rng = seed.rng();
        let weights = (0..k)
            .map(|_| {
                std::array::from_fn(|_| {
                    let raw: Vec<f64> = (0..m).map(|_| normal.sample(&mut rng).abs()).collect();
                    let total: f64 = raw.iter().sum();
                    raw.into_iter().map(|w| w / total).collect()
                })
            })
            .collect();
        Ok(Self { k, m, weights, scaler: MinMax::fit(x, &cols) })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn projections(&self, t: usize, x: &[f64]) -> [f64; 3] {
        std::array::from_fn(|j| {
            let p: f64 = (0..self.m).map(|c| self.weights[t][j][c] * self.scaler.scale(c, x[c])).sum();
            0.5 + Self::HETEROGENEITY * (p - 0.5)
        })
    }
}

impl ResponseSurface for Tcga2Surface {
    fn evaluate(&self, t: usize, d: f64, x: &[f64]) -> f64 {
        let [p1, p2, p3] = self.projections(t, x);
        let p3 = p3.max(0.05);
        let shape = match t % 3 {
            0 => 12.0 * (p2 * d - p3 * d * d),
            1 => (PI * d * p2 / p3).sin(),
            _ => 12.0 * (p2 * d - p3 * d * d * d),
        };
        Self::SCALE * (p1 + shape)
    }
}

/// Single-intervention surface on six covariates: a cosine dose envelope
/// modulated by a nonlinear covariate term.
#[derive(Debug, Clone)]
pub struct Synth1Surface {
    scaler: MinMax,
}

impl Synth1Surface {
    pub fn new(x: &CovariateMatrix) -> Result<Self, DgpError> {
        if x.cols() < 6 {
            return Err(DgpError::Covariates(format!(
                "synth1-style surface needs six covariate columns, got {}",
                x.cols()
            )));
        }
        Ok(Self { scaler: MinMax::fit(x, &[0, 1, 2, 3, 4, 5]) })
    }
}

impl ResponseSurface for Synth1Surface {
    fn evaluate(&self, _t: usize, d: f64, x: &[f64]) -> f64 {
        let s: [f64; 6] = std::array::from_fn(|j| self.scaler.scale(j, x[j]));
        let effect = 4.0 * s[0].max(s[5]).powi(3) / (1.0 + 2.0 * s[2] * s[2]) * s[3].sin();
        (2.0 * PI * (d - 0.5)).cos() * (d * d + effect)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn table_examples() {
        // A2: 10 * (0.2 + sin(pi/2))
        let x = [0.0, 0.2, 0.4, 0.6, 0.0];
        assert!((ihdp3_response(Archetype::A2, &x, 0.5) - 12.0).abs() < 1e-12);
        // A1 with x0 = x1 = x2 = 0, d = 1: 10 * 12 * 1 * 1
        let x = [0.0, 0.0, 0.0, 0.3, 0.9];
        assert!((ihdp3_response(Archetype::A1, &x, 1.0) - 120.0).abs() < 1e-12);
        for x in [[0.1, 0.2, 0.3, 0.4, 0.5], [1.0, 1.0, 1.0, 1.0, 1.0]] {
            assert_eq!(ihdp3_response(Archetype::A4, &x, 0.0), 5.0);
        }
        // A3 at d = 1: 10 * (x2 + 12 (x3 - x4))
        let x = [0.0, 0.0, 0.5, 0.25, 0.125];
        assert!((ihdp3_response(Archetype::A3, &x, 1.0) - 10.0 * (0.5 + 1.5)).abs() < 1e-12);
    }

    #[test]
    fn modal_doses() {
        assert_eq!(ihdp3_modal_dose(Archetype::A1), 0.125);
        assert_eq!(ihdp3_modal_dose(Archetype::A4), 0.875);
        let modes: BTreeSet<u64> = Archetype::ALL.iter().map(|a| ihdp3_modal_dose(*a).to_bits()).collect();
        assert_eq!(modes.len(), 4);
        assert!(Archetype::ALL.iter().all(|a| (0.0..1.0).contains(&ihdp3_modal_dose(*a)) && ihdp3_modal_dose(*a) > 0.0));
    }

    fn binary_matrix(a: Vec<f64>, b: Vec<f64>) -> CovariateMatrix {
        let n = a.len();
        let mut values = Vec::new();
        for i in 0..n {
            values.extend([a[i], b[i]]);
        }
        CovariateMatrix::new(vec!["p".into(), "q".into()], values, BTreeSet::new()).unwrap()
    }

    #[test]
    fn archetype_mapping() {
        let x = binary_matrix(vec![0.0, 0.0, 1.0, 1.0], vec![0.0, 1.0, 0.0, 1.0]);
        let a = assign_archetypes(&x, "p", "q").unwrap();
        assert_eq!(a.archetypes, Archetype::ALL.to_vec());
        let bad = binary_matrix(vec![0.0, 2.0], vec![0.0, 1.0]);
        assert!(assign_archetypes(&bad, "p", "q").is_err());
        assert!(assign_archetypes(&x, "p", "missing").is_err());
    }

    #[test]
    fn archetype_curves_are_heterogeneous() {
        let grid: Vec<f64> = (0..65).map(|i| i as f64 / 64.0).collect();
        for x in [[0.5; 5], [0.2, 0.4, 0.6, 0.8, 0.3], [0.9, 0.1, 0.5, 0.7, 0.2]] {
            for (i, a) in Archetype::ALL.iter().enumerate() {
                for b in &Archetype::ALL[i + 1..] {
                    let gap = grid
                        .iter()
                        .map(|&d| (ihdp3_response(*a, &x, d) - ihdp3_response(*b, &x, d)).abs())
                        .fold(0.0, f64::max);
                    assert!(gap > 1.0, "{a:?} vs {b:?} at {x:?}: {gap}");
                }
            }
        }
    }

    #[test]
    fn grid_argmax_breaks_ties_low() {
        assert_eq!(grid_argmax(65, |_| 1.0), 0.0);
        assert_eq!(grid_argmax(65, |d| d), 1.0);
        assert_eq!(grid_argmax(65, |d| -(d - 0.5).powi(2)), 0.5);
    }

    #[test]
    fn tcga_surface_is_deterministic_and_finite() {
        let x = crate::dgp::synthetic_covariates(crate::dgp::CovariateKind::Synth1Style, 50, 20, &SeedTree::new(1)).unwrap();
        let s1 = Tcga2Surface::new(&x, 3, &SeedTree::new(2)).unwrap();
        let s2 = Tcga2Surface::new(&x, 3, &SeedTree::new(2)).unwrap();
        for i in 0..50 {
            for t in 0..3 {
                for d in [0.0, 0.3, 1.0] {
                    let v = s1.evaluate(t, d, x.row(i));
                    assert!(v.is_finite());
                    assert_eq!(v, s2.evaluate(t, d, x.row(i)));
                }
                let m = s1.modal_dose(t, x.row(i));
                assert!((0.0..=1.0).contains(&m));
            }
        }
    }
}
