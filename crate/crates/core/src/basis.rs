//! Thin-plate spline basis `b(t) = [1, t, |t − k₁|³, …, |t − k_L|³]`.
//!
//! Function norms and inner products are taken on an equally spaced grid of
//! `G` points on `[0, 1]` as Riemann sums, `⟨f, g⟩ ≈ (1/G) Σ_g f(t_g) g(t_g)`,
//! so a unit-norm eigenfunction has `∫ψ² ≈ 1` whatever the grid size.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

pub const DEFAULT_KNOTS: usize = 10;
pub const DEFAULT_GRID_SIZE: usize = 50;

/// Off-diagonal entries of the knot block of the roughness penalty.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyFlavor {
    /// `(k_l − k_l')²`
    #[default]
    Quadratic,
    /// `|k_l − k_l'|³`
    Cubic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisConfig {
    pub n_knots: usize,
    pub grid_size: usize,
    pub flavor: PenaltyFlavor,
}

impl Default for BasisConfig {
    fn default() -> Self {
        Self { n_knots: DEFAULT_KNOTS, grid_size: DEFAULT_GRID_SIZE, flavor: PenaltyFlavor::Quadratic }
    }
}

/// Serializable description from which a [`SplineBasis`] is rebuilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub knots: Vec<f64>,
    pub grid_size: usize,
    pub flavor: PenaltyFlavor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplineBasis {
    knots: Vec<f64>,
    flavor: PenaltyFlavor,
    grid: Vec<f64>,
    grid_basis: DMatrix<f64>,
    grid_gram: DMatrix<f64>,
    inner: DMatrix<f64>,
    grid_mean: DVector<f64>,
    raw_penalty: DMatrix<f64>,
    penalty: DMatrix<f64>,
}

/// Knots at the `l/(L+1)` quantiles of the pooled observation times.
pub fn make_knots(times: &[f64], n_knots: usize) -> Result<Vec<f64>> {
    if times.is_empty() {
        return Err(Error::Config("cannot place knots without observation times".into()));
    }
    if n_knots == 0 {
        return Err(Error::Config("number of knots must be at least 1".into()));
    }
    let mut sorted = times.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mut distinct = sorted.clone();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Config(format!(
            "all {} observation times are tied at {}; knots need at least two distinct times",
            sorted.len(),
            sorted[0]
        )));
    }
    if n_knots > distinct.len() {
        return Err(Error::Config(format!(
            "{n_knots} knots requested but only {} distinct observation times",
            distinct.len()
        )));
    }
    let mut knots: Vec<f64> = (1..=n_knots)
        .map(|l| linalg::quantile_sorted(&sorted, l as f64 / (n_knots + 1) as f64))
        .collect();
    for l in 1..knots.len() {
        if knots[l] <= knots[l - 1] {
            knots[l] = knots[l - 1] + 1e-9 * l as f64;
        }
    }
    Ok(knots)
}

pub fn eval_basis(t: f64, knots: &[f64]) -> DVector<f64> {
    let mut b = DVector::zeros(knots.len() + 2);
    b[0] = 1.0;
    b[1] = t;
    for (l, k) in knots.iter().enumerate() {
        b[l + 2] = (t - k).abs().powi(3);
    }
    b
}

/// Roughness penalty as written: zero on the polynomial block, distance
/// based on the knot block. Not positive semidefinite in general; see
/// [`SplineBasis::penalty`] for the matrix the samplers use.
pub fn penalty_matrix(knots: &[f64], flavor: PenaltyFlavor) -> DMatrix<f64> {
    let k = knots.len() + 2;
    let mut omega = DMatrix::zeros(k, k);
    for (a, ka) in knots.iter().enumerate() {
        for (b, kb) in knots.iter().enumerate() {
            let d = (ka - kb).abs();
            omega[(a + 2, b + 2)] = match flavor {
                PenaltyFlavor::Quadratic => d * d,
                PenaltyFlavor::Cubic => d * d * d,
            };
        }
    }
    omega
}

pub fn basis_matrix(times: &[f64], knots: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(times.len(), knots.len() + 2);
    for (j, &t) in times.iter().enumerate() {
        m.row_mut(j).copy_from(&eval_basis(t, knots).transpose());
    }
    m
}

pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|g| g as f64 / (n - 1) as f64).collect(),
    }
}

impl SplineBasis {
    pub fn new(knots: Vec<f64>, grid_size: usize, flavor: PenaltyFlavor) -> Result<Self> {
        if knots.is_empty() {
            return Err(Error::Config("spline basis needs at least one knot".into()));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) || knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Config("knots must be finite and strictly increasing".into()));
        }
        if grid_size < 2 {
            return Err(Error::Config("grid size must be at least 2".into()));
        }
        let grid = uniform_grid(grid_size);
        let grid_basis = basis_matrix(&grid, &knots);
        let grid_gram = grid_basis.transpose() * &grid_basis;
        let inner = &grid_gram / grid_size as f64;
        let grid_mean = grid_basis.row_sum().transpose() / grid_size as f64;
        let raw_penalty = penalty_matrix(&knots, flavor);
        let mut penalty = linalg::psd_part(&raw_penalty);
        for i in 0..penalty.nrows() {
            for j in 0..2 {
                penalty[(i, j)] = 0.0;
                penalty[(j, i)] = 0.0;
            }
        }
        Ok(Self { knots, flavor, grid, grid_basis, grid_gram, inner, grid_mean, raw_penalty, penalty })
    }

    /// Knots from the pooled `times`, then [`SplineBasis::new`].
    pub fn from_times(times: &[f64], config: &BasisConfig) -> Result<Self> {
        Self::new(make_knots(times, config.n_knots)?, config.grid_size, config.flavor)
    }

    pub fn from_spec(spec: &BasisSpec) -> Result<Self> {
        Self::new(spec.knots.clone(), spec.grid_size, spec.flavor)
    }

    pub fn spec(&self) -> BasisSpec {
        BasisSpec { knots: self.knots.clone(), grid_size: self.grid.len(), flavor: self.flavor }
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions, `L + 2`.
    pub fn dim(&self) -> usize {
        self.knots.len() + 2
    }

    pub fn flavor(&self) -> PenaltyFlavor {
        self.flavor
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn grid_size(&self) -> usize {
        self.grid.len()
    }

    /// `B_G`, the basis evaluated on the grid (`G × (L+2)`).
    pub fn grid_basis(&self) -> &DMatrix<f64> {
        &self.grid_basis
    }

    /// `B_G' B_G`.
    pub fn grid_gram(&self) -> &DMatrix<f64> {
        &self.grid_gram
    }

    /// Gram matrix of the grid inner product, `B_G' B_G / G`.
    pub fn inner_gram(&self) -> &DMatrix<f64> {
        &self.inner
    }

    /// `B_G' 1 / G`: coefficient functional giving the grid mean of `b(t)'φ`.
    pub fn grid_mean_functional(&self) -> &DVector<f64> {
        &self.grid_mean
    }

    /// Penalty as printed by [`penalty_matrix`].
    pub fn raw_penalty(&self) -> &DMatrix<f64> {
        &self.raw_penalty
    }

    /// Positive semidefinite part of the raw penalty, with the polynomial
    /// block held at exactly zero. This is `Ω` in the eigenfunction prior.
    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        eval_basis(t, &self.knots)
    }

    pub fn matrix(&self, times: &[f64]) -> DMatrix<f64> {
        basis_matrix(times, &self.knots)
    }

    /// `b(t)' φ`.
    pub fn evaluate(&self, coef: &DVector<f64>, t: f64) -> f64 {
        self.eval(t).dot(coef)
    }

    pub fn inner_product(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        (a.transpose() * &self.inner * b)[(0, 0)]
    }

    pub fn norm(&self, coef: &DVector<f64>) -> f64 {
        self.inner_product(coef, coef).max(0.0).sqrt()
    }
}
