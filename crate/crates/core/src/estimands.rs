//! Effect curves computed draw by draw from the mediator and outcome
//! posteriors, with pointwise equal-tailed credible bands.
//!
//! For outcome draw `k` paired with mediator draw `j(k)`:
//!
//! ```text
//! mediator effect  m(t) = Σ_r (τ₁ʳ − τ₀ʳ) ψ_r(t)            (mediator draw j)
//! ACME             δ(t) = γ_k · m_j(t)
//! total            τ(t) = Σ_s (ξ₁ˢ − ξ₀ˢ) η_s(t) + δ(t)
//! direct           ξ(t) = τ(t) − δ(t)
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::basis::{uniform_grid, SplineBasis};
use crate::error::{Error, Result};
use crate::fpca::FpcaState;
use crate::linalg::quantile_sorted;
use crate::mediator::MediatorPosterior;
use crate::outcome::OutcomePosterior;

pub const DEFAULT_REPORT_POINTS: usize = 101;
pub const DEFAULT_LEVEL: f64 = 0.95;

/// `n` equally spaced points on `[0, 1]`.
pub fn reporting_grid(n: usize) -> Vec<f64> {
    uniform_grid(n)
}

/// One effect over time: all draws plus the posterior mean and band.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectCurve {
    pub name: String,
    /// Normalized times in `[0, 1]`.
    pub grid: Vec<f64>,
    /// `draws × grid`.
    pub draws: DMatrix<f64>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl EffectCurve {
    pub fn from_draws(name: &str, grid: &[f64], draws: DMatrix<f64>) -> Self {
        let n = draws.nrows().max(1) as f64;
        let mean = draws.column_iter().map(|c| c.sum() / n).collect();
        let mut c = Self { name: name.to_string(), grid: grid.to_vec(), draws, mean, lower: vec![], upper: vec![] };
        let (lo, hi) = c.band(DEFAULT_LEVEL);
        c.lower = lo;
        c.upper = hi;
        c
    }

    /// Pointwise equal-tailed band at the given level.
    pub fn band(&self, level: f64) -> (Vec<f64>, Vec<f64>) {
        let a = (1.0 - level) / 2.0;
        self.draws
            .column_iter()
            .map(|col| {
                let mut v: Vec<f64> = col.iter().copied().collect();
                v.sort_by(|x, y| x.total_cmp(y));
                (quantile_sorted(&v, a), quantile_sorted(&v, 1.0 - a))
            })
            .unzip()
    }

    pub fn mean_absolute_error(&self, truth: &[f64]) -> f64 {
        self.mean.iter().zip(truth).map(|(m, t)| (m - t).abs()).sum::<f64>() / self.mean.len() as f64
    }

    /// Fraction of grid points whose band contains the truth.
    pub fn coverage(&self, truth: &[f64]) -> f64 {
        let hit = (0..truth.len()).filter(|&k| self.lower[k] <= truth[k] && truth[k] <= self.upper[k]).count();
        hit as f64 / truth.len() as f64
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        (0..self.grid.len())
            .min_by(|&a, &b| (self.grid[a] - t).abs().total_cmp(&(self.grid[b] - t).abs()))
            .expect("nonempty grid")
    }
}

/// Mediator effect `Σ_r (τ₁ʳ − τ₀ʳ) ψ_r(t)` of one draw on precomputed
/// basis rows.
pub fn group_difference_curve(draw: &FpcaState, basis_rows: &DMatrix<f64>) -> Vec<f64> {
    let diff = draw.mean_differences();
    let mut out = vec![0.0; basis_rows.nrows()];
    for (r, phi) in draw.phi.iter().enumerate() {
        let psi = basis_rows * phi;
        for (o, p) in out.iter_mut().zip(psi.iter()) {
            *o += diff[r] * p;
        }
    }
    out
}

fn curve_matrix(rows: Vec<Vec<f64>>, width: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j])
}

fn grid_rows(basis: &SplineBasis, grid: &[f64]) -> Result<DMatrix<f64>> {
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("reporting time {t} outside [0, 1]")));
    }
    Ok(basis.matrix(grid))
}

pub fn mediator_effect_curve(med: &MediatorPosterior, grid: &[f64]) -> Result<EffectCurve> {
    let rows = grid_rows(&med.basis, grid)?;
    let draws = med.draws.iter().map(|d| group_difference_curve(d, &rows)).collect();
    Ok(EffectCurve::from_draws("mediator", grid, curve_matrix(draws, grid.len())))
}

/// Errors unless the outcome posterior was fitted against this mediator
/// posterior.
pub fn check_pairing(med: &MediatorPosterior, out: &OutcomePosterior) -> Result<()> {
    let fp = med.fingerprint();
    check_pairing_with(&fp, med, out)
}

fn check_pairing_with(fingerprint: &str, med: &MediatorPosterior, out: &OutcomePosterior) -> Result<()> {
    if out.mediator_fingerprint != fingerprint {
        return Err(Error::Provenance(format!(
            "outcome posterior was fitted against mediator posterior {} but {} was supplied",
            out.mediator_fingerprint, fingerprint
        )));
    }
    if let Some(d) = out.draws.iter().find(|d| d.mediator_draw >= med.len()) {
        return Err(Error::Provenance(format!(
            "outcome draw references mediator draw {} of {}",
            d.mediator_draw,
            med.len()
        )));
    }
    Ok(())
}

/// Per-draw `(δ, direct part)` on the grid.
fn paired_parts(med: &MediatorPosterior, out: &OutcomePosterior, grid: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let med_rows = grid_rows(&med.basis, grid)?;
    let out_rows = grid_rows(&out.basis, grid)?;
    let mut acme = Vec::with_capacity(out.len());
    let mut direct = Vec::with_capacity(out.len());
    for d in &out.draws {
        let m = group_difference_curve(&med.draws[d.mediator_draw], &med_rows);
        acme.push(m.iter().map(|v| d.gamma * v).collect());
        direct.push(group_difference_curve(&d.fpca, &out_rows));
    }
    Ok((acme, direct))
}

pub fn acme_curve(med: &MediatorPosterior, out: &OutcomePosterior, grid: &[f64]) -> Result<EffectCurve> {
    check_pairing(med, out)?;
    let (acme, _) = paired_parts(med, out, grid)?;
    Ok(EffectCurve::from_draws("acme", grid, curve_matrix(acme, grid.len())))
}

/// Total effect and natural direct effect `(τ, ξ)`.
pub fn total_effect_curve(
    med: &MediatorPosterior,
    out: &OutcomePosterior,
    grid: &[f64],
) -> Result<(EffectCurve, EffectCurve)> {
    check_pairing(med, out)?;
    let (acme, direct_part) = paired_parts(med, out, grid)?;
    let (total, direct) = combine(&acme, &direct_part);
    Ok((
        EffectCurve::from_draws("total", grid, curve_matrix(total, grid.len())),
        EffectCurve::from_draws("direct", grid, curve_matrix(direct, grid.len())),
    ))
}

fn combine(acme: &[Vec<f64>], direct_part: &[Vec<f64>]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let total: Vec<Vec<f64>> =
        acme.iter().zip(direct_part).map(|(a, d)| a.iter().zip(d).map(|(x, y)| y + x).collect()).collect();
    let direct = total.iter().zip(acme).map(|(t, a)| t.iter().zip(a).map(|(x, y)| x - y).collect()).collect();
    (total, direct)
}

/// All four curves on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectCurves {
    pub grid: Vec<f64>,
    /// Multiply grid times by this to report in original units.
    pub time_scale: f64,
    pub mediator: EffectCurve,
    pub acme: EffectCurve,
    pub direct: EffectCurve,
    pub total: EffectCurve,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub time: f64,
    pub effect: String,
    pub mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl EffectCurves {
    pub fn compute(med: &MediatorPosterior, out: &OutcomePosterior, grid: &[f64]) -> Result<Self> {
        check_pairing(med, out)?;
        let (acme, direct_part) = paired_parts(med, out, grid)?;
        let (total, direct) = combine(&acme, &direct_part);
        let w = grid.len();
        Ok(Self {
            grid: grid.to_vec(),
            time_scale: med.time_scale,
            mediator: mediator_effect_curve(med, grid)?,
            acme: EffectCurve::from_draws("acme", grid, curve_matrix(acme, w)),
            direct: EffectCurve::from_draws("direct", grid, curve_matrix(direct, w)),
            total: EffectCurve::from_draws("total", grid, curve_matrix(total, w)),
        })
    }

    pub fn curves(&self) -> [&EffectCurve; 4] {
        [&self.mediator, &self.acme, &self.direct, &self.total]
    }

    /// Rows `(time, effect, mean, lo95, hi95)` for every curve, times in
    /// original units.
    pub fn rows(&self) -> Vec<SummaryRow> {
        let mut out = Vec::new();
        for c in self.curves() {
            for k in 0..self.grid.len() {
                out.push(SummaryRow {
                    time: self.grid[k] * self.time_scale,
                    effect: c.name.clone(),
                    mean: c.mean[k],
                    lo95: c.lower[k],
                    hi95: c.upper[k],
                });
            }
        }
        out
    }

    /// Writes one CSV per effect plus `effects_all.csv`. Returns the paths.
    pub fn write_csv(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let rows = self.rows();
        let mut paths = Vec::new();
        for c in self.curves() {
            let path = dir.as_ref().join(format!("effect_{}.csv", c.name));
            write_rows(std::fs::File::create(&path)?, rows.iter().filter(|r| r.effect == c.name))?;
            paths.push(path);
        }
        let path = dir.as_ref().join("effects_all.csv");
        write_rows(std::fs::File::create(&path)?, rows.iter())?;
        paths.push(path);
        Ok(paths)
    }
}

pub fn write_rows<'a, W: Write>(writer: W, rows: impl Iterator<Item = &'a SummaryRow>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table of τ, δ and ξ at the given normalized times.
pub fn summary_table(curves: &EffectCurves) -> String {
    let mut s = format!("{:>10}  {:<8} {:>10} {:>10} {:>10}\n", "time", "effect", "mean", "lo95", "hi95");
    for k in 0..curves.grid.len() {
        for c in [&curves.total, &curves.acme, &curves.direct] {
            s.push_str(&format!(
                "{:>10.4}  {:<8} {:>10.4} {:>10.4} {:>10.4}\n",
                curves.grid[k] * curves.time_scale,
                c.name,
                c.mean[k],
                c.lower[k],
                c.upper[k]
            ));
        }
    }
    s
}
