//! Sensitivity of the mediation effect to residual mediator–outcome
//! correlation.
//!
//! Write the outcome deviation at time `u` as `γ·M + e` with
//! `Corr(e, M) = ρ`. Given the conditional moments `V_M = Var(M)`,
//! `V_Y = Var(Y)` and `C = Cov(Y, M)` (all given treatment and covariates),
//!
//! ```text
//! C         = γ V_M + ρ s √V_M
//! V_Y − C²/V_M = s² (1 − ρ²)
//! ```
//!
//! so `γ(ρ) = C/V_M − ρ √((V_Y − C²/V_M) / (V_M (1 − ρ²)))`. At `ρ = 0` this
//! is the regression value `C/V_M`. The moments are model-implied: each
//! posterior draw gives its own triple, so the adjusted curves are a
//! deterministic transform of the posterior.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimands::{check_pairing, group_difference_curve, EffectCurve};
use crate::fpca::FpcaState;
use crate::mediator::MediatorPosterior;
use crate::outcome::OutcomePosterior;

/// Conditional second moments at one time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Moments {
    pub var_m: f64,
    pub var_y: f64,
    pub cov: f64,
}

impl Moments {
    pub fn validate(&self) -> Result<()> {
        if !(self.var_m > 0.0 && self.var_y > 0.0) || !self.cov.is_finite() {
            return Err(Error::Numerical(format!(
                "degenerate moments: Var(M) = {}, Var(Y) = {}, Cov = {}",
                self.var_m, self.var_y, self.cov
            )));
        }
        Ok(())
    }

    /// `C/V_M`, the coefficient under no residual correlation.
    pub fn regression_coefficient(&self) -> f64 {
        self.cov / self.var_m
    }

    pub fn correlation(&self) -> f64 {
        self.cov / (self.var_m * self.var_y).sqrt()
    }
}

/// Latent variance `Σ_r ψ_r(u)² λ_r² · mean_i(1/ξ_ir)` of one block at the
/// basis row `row`, plus the noise variance when asked.
fn latent_variance(state: &FpcaState, row: &DVector<f64>, include_noise: bool) -> f64 {
    let lambda = state.score_variances();
    let n = state.local_scales.nrows() as f64;
    let mut v = 0.0;
    for (r, phi) in state.phi.iter().enumerate() {
        let psi = row.dot(phi);
        let inv_scale = state.local_scales.column(r).iter().map(|x| 1.0 / x).sum::<f64>() / n;
        v += psi * psi * lambda[r] * inv_scale;
    }
    if include_noise {
        v += state.noise_var;
    }
    v
}

/// Moments implied by one paired draw under sequential ignorability: the
/// outcome residual is uncorrelated with the mediator, so
/// `V_Y = A + γ² V_M` and `C = γ V_M` with `A` the outcome residual
/// variance.
pub fn draw_moments(
    mediator: &FpcaState,
    outcome: &FpcaState,
    gamma: f64,
    mediator_row: &DVector<f64>,
    outcome_row: &DVector<f64>,
    include_noise: bool,
) -> Moments {
    let var_m = latent_variance(mediator, mediator_row, include_noise);
    let resid = latent_variance(outcome, outcome_row, include_noise);
    Moments { var_m, var_y: resid + gamma * gamma * var_m, cov: gamma * var_m }
}

/// Posterior mean of the model-implied moments at normalized time `u`.
pub fn estimate_moments(med: &MediatorPosterior, out: &OutcomePosterior, u: f64, include_noise: bool) -> Result<Moments> {
    check_pairing(med, out)?;
    if out.is_empty() {
        return Err(Error::Validation("outcome posterior has no draws".into()));
    }
    let mrow = med.basis.eval(u);
    let orow = out.basis.eval(u);
    let n = out.len() as f64;
    let mut acc = Moments { var_m: 0.0, var_y: 0.0, cov: 0.0 };
    for d in &out.draws {
        let m = draw_moments(&med.draws[d.mediator_draw], &d.fpca, d.gamma, &mrow, &orow, include_noise);
        acc.var_m += m.var_m / n;
        acc.var_y += m.var_y / n;
        acc.cov += m.cov / n;
    }
    acc.validate()?;
    Ok(acc)
}

fn check_rho(rho: f64) -> Result<()> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Infeasible { rho, message: "|rho| must be below 1".into() });
    }
    Ok(())
}

/// Adjusted concurrent coefficient for residual correlation `rho`.
pub fn gamma_given_rho(rho: f64, m: &Moments) -> Result<f64> {
    check_rho(rho)?;
    m.validate()?;
    let c = m.regression_coefficient();
    let resid = m.var_y - m.cov * c;
    // Cancellation can leave a tiny negative residual variance when the
    // correlation is ±1.
    let resid = if resid < 0.0 && resid > -1e-12 * m.var_y { 0.0 } else { resid };
    let radicand = resid / (m.var_m * (1.0 - rho * rho));
    if radicand < 0.0 {
        return Err(Error::Infeasible {
            rho,
            message: format!("negative residual variance {resid:.3e}: |Cov| exceeds sqrt(Var(Y) Var(M))"),
        });
    }
    Ok(c - rho * radicand.sqrt())
}

/// Alternative closed form `c − sqrt((V_Y − ρ² c)/(V_M (1 − ρ²)) + c²)`,
/// kept for comparison. It does not reduce to `c` at `ρ = 0`.
pub fn gamma_given_rho_printed(rho: f64, m: &Moments) -> Result<f64> {
    check_rho(rho)?;
    m.validate()?;
    let c = m.regression_coefficient();
    let radicand = (m.var_y - rho * rho * c) / (m.var_m * (1.0 - rho * rho)) + c * c;
    if radicand < 0.0 {
        return Err(Error::Infeasible { rho, message: format!("negative radicand {radicand:.3e}") });
    }
    Ok(c - radicand.sqrt())
}

/// δ curve with `γ` replaced draw by draw by `γ(ρ(t))`, where `rho[k]` is
/// the residual correlation at `grid[k]`.
pub fn adjusted_acme(
    med: &MediatorPosterior,
    out: &OutcomePosterior,
    grid: &[f64],
    rho: &[f64],
    include_noise: bool,
) -> Result<EffectCurve> {
    check_pairing(med, out)?;
    if rho.len() != grid.len() {
        return Err(Error::Config(format!("{} rho values for {} grid points", rho.len(), grid.len())));
    }
    if let Some(t) = grid.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Config(format!("reporting time {t} outside [0, 1]")));
    }
    let mrows = med.basis.matrix(grid);
    let orows = out.basis.matrix(grid);
    let mrow: Vec<DVector<f64>> = (0..grid.len()).map(|k| mrows.row(k).transpose()).collect();
    let orow: Vec<DVector<f64>> = (0..grid.len()).map(|k| orows.row(k).transpose()).collect();
    let mut draws = DMatrix::zeros(out.len(), grid.len());
    for (i, d) in out.draws.iter().enumerate() {
        let mdraw = &med.draws[d.mediator_draw];
        let effect = group_difference_curve(mdraw, &mrows);
        for k in 0..grid.len() {
            let g = if rho[k] == 0.0 {
                d.gamma
            } else {
                let m = draw_moments(mdraw, &d.fpca, d.gamma, &mrow[k], &orow[k], include_noise);
                gamma_given_rho(rho[k], &m)?
            };
            draws[(i, k)] = g * effect[k];
        }
    }
    Ok(EffectCurve::from_draws("acme", grid, draws))
}

/// One adjusted δ curve per sensitivity value.
#[derive(Clone, Debug)]
pub struct SensitivityFamily {
    pub rhos: Vec<f64>,
    pub curves: Vec<EffectCurve>,
    /// Smallest `|ρ|` on the grid whose band covers zero at the midpoint.
    pub breakeven: Option<f64>,
    pub time_scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SensitivityRow {
    pub rho: f64,
    pub time: f64,
    pub delta_mean: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Adjusted δ curves for a constant residual correlation over a grid of
/// values.
pub fn sensitivity_curve(
    med: &MediatorPosterior,
    out: &OutcomePosterior,
    rhos: &[f64],
    grid: &[f64],
    include_noise: bool,
) -> Result<SensitivityFamily> {
    if rhos.is_empty() {
        return Err(Error::Config("empty rho grid".into()));
    }
    for &r in rhos {
        check_rho(r)?;
    }
    if grid.is_empty() {
        return Err(Error::Config("empty reporting grid".into()));
    }
    let curves = rhos
        .par_iter()
        .map(|&r| adjusted_acme(med, out, grid, &vec![r; grid.len()], include_noise))
        .collect::<Result<Vec<_>>>()?;
    let mid = curves[0].nearest((grid[0] + grid[grid.len() - 1]) / 2.0);
    let mut order: Vec<usize> = (0..rhos.len()).collect();
    order.sort_by(|&a, &b| rhos[a].abs().total_cmp(&rhos[b].abs()).then(rhos[a].total_cmp(&rhos[b])));
    let breakeven = order
        .into_iter()
        .find(|&i| curves[i].lower[mid] <= 0.0 && curves[i].upper[mid] >= 0.0)
        .map(|i| rhos[i]);
    Ok(SensitivityFamily { rhos: rhos.to_vec(), curves, breakeven, time_scale: med.time_scale })
}

impl SensitivityFamily {
    pub fn rows(&self) -> Vec<SensitivityRow> {
        let mut out = Vec::new();
        for (rho, c) in self.rhos.iter().zip(&self.curves) {
            for k in 0..c.grid.len() {
                out.push(SensitivityRow {
                    rho: *rho,
                    time: c.grid[k] * self.time_scale,
                    delta_mean: c.mean[k],
                    lo95: c.lower[k],
                    hi95: c.upper[k],
                });
            }
        }
        out
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in self.rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }
}

/// Parses a comma-separated list of values, or `start:stop:step`.
pub fn parse_rho_grid(s: &str) -> Result<Vec<f64>> {
    let bad = |p: &str| Error::Config(format!("bad rho grid entry `{p}`"));
    let parts: Vec<&str> = s.split(':').collect();
    let values = if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad(p))).collect::<Result<_>>()?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start {
            return Err(Error::Config(format!("rho range `{s}` needs start <= stop and step > 0")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        (0..=n).map(|k| start + k as f64 * step).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(|_| bad(p))).collect::<Result<Vec<f64>>>()?
    };
    for &r in &values {
        if !(r.abs() < 1.0) {
            return Err(Error::Config(format!("rho = {r} outside (-1, 1)")));
        }
    }
    Ok(values)
}
