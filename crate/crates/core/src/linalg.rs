//! Small dense linear-algebra and sampling helpers shared by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{ContinuousCDF, Gamma as GammaDist};

use crate::error::{Error, Result};

pub const JITTER: f64 = 1e-8;

/// Cholesky factor of a symmetric matrix, retrying once with a diagonal
/// jitter of `JITTER` (relative to the mean diagonal) before giving up.
pub fn cholesky_jittered(q: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(q.clone()) {
        return Ok(c);
    }
    let n = q.nrows();
    let scale = (q.diagonal().iter().map(|d| d.abs()).sum::<f64>() / n.max(1) as f64).max(1.0);
    let jittered = q + DMatrix::identity(n, n) * (JITTER * scale);
    Cholesky::new(jittered).ok_or_else(|| {
        let eig = SymmetricEigen::new(q.clone()).eigenvalues;
        let (lo, hi) = eig.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &e| (l.min(e), h.max(e)));
        Error::Numerical(format!(
            "{what}: matrix not positive definite after jitter (eigenvalues in [{lo:.3e}, {hi:.3e}])"
        ))
    })
}

pub fn standard_normal<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)))
}

/// Draws from `N(Q⁻¹ l, Q⁻¹)` given the Cholesky factor of `Q`.
/// Returns `(mean, draw)`.
pub fn sample_canonical<R: Rng + ?Sized>(
    chol: &Cholesky<f64, Dyn>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> (DVector<f64>, DVector<f64>) {
    let mean = chol.solve(linear);
    let z = standard_normal(linear.len(), rng);
    // Lᵀ x = z  =>  Cov(x) = (L Lᵀ)⁻¹
    let dev = chol
        .l()
        .transpose()
        .solve_upper_triangular(&z)
        .expect("Cholesky factor has a positive diagonal");
    let draw = &mean + dev;
    (mean, draw)
}

/// Positive semidefinite part of a symmetric matrix: negative eigenvalues
/// are clipped to zero.
pub fn psd_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let clipped = eig.eigenvalues.map(|e| e.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Draws from `Gamma(shape, rate)` truncated to `[lo, hi]` by inversion.
pub fn truncated_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, lo: f64, hi: f64, rng: &mut R) -> f64 {
    debug_assert!(lo <= hi);
    if lo >= hi {
        return lo;
    }
    let rate = rate.max(1e-300);
    let dist = match GammaDist::new(shape, rate) {
        Ok(d) => d,
        Err(_) => return lo,
    };
    let f_lo = dist.cdf(lo);
    let f_hi = dist.cdf(hi);
    if f_hi - f_lo < 1e-12 {
        // all the mass sits on one side of the interval
        let mode = ((shape - 1.0).max(0.0)) / rate;
        return if mode >= hi { hi } else { lo };
    }
    let u = f_lo + (f_hi - f_lo) * rng.random::<f64>();
    dist.inverse_cdf(u).clamp(lo, hi)
}

/// Draws from `Gamma(shape, rate)`.
pub fn gamma_rate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters are positive and finite")
        .sample(rng)
}

/// Sample quantile with linear interpolation between order statistics
/// (the common "type 7" definition). `sorted` must be ascending.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, p)
}

/// Pearson correlation.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}
