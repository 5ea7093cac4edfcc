//! Draw-by-draw identities on a fitted pair of posteriors.

use super::{proper_priors, scrambled_state, small_problem};
use fpca_mediation::estimands::EffectCurves;
use fpca_mediation::fpca::Model;
use fpca_mediation::{FpcaState, MediatorPosterior, OutcomePosterior, SplineBasis};

/// Largest |total − mediated − direct| over draws and grid points.
pub fn decomposition_error(curves: &EffectCurves) -> f64 {
    let (t, a, d) = (&curves.total.draws, &curves.acme.draws, &curves.direct.draws);
    let mut worst: f64 = 0.0;
    for k in 0..t.nrows() {
        for g in 0..t.ncols() {
            worst = worst.max((t[(k, g)] - a[(k, g)] - d[(k, g)]).abs());
        }
    }
    worst
}

/// Total effect splits into mediated plus direct per draw, and every band
/// brackets its posterior mean.
pub fn check_decomposition(curves: &EffectCurves) -> Result<f64, String> {
    let worst = decomposition_error(curves);
    if worst > 1e-12 {
        return Err(format!("total - mediated - direct reaches {worst:.3e}"));
    }
    for c in curves.curves() {
        for g in 0..c.mean.len() {
            if !(c.lower[g] <= c.mean[g] && c.mean[g] <= c.upper[g]) {
                return Err(format!("{} band does not bracket its mean at grid point {g}", c.name));
            }
        }
    }
    Ok(worst)
}

fn check_stage<'a>(label: &str, basis: &SplineBasis, sweep_error: f64, draws: impl Iterator<Item = &'a FpcaState>) -> Result<(), String> {
    if sweep_error > 1e-6 {
        return Err(format!("{label}: grid orthonormality error {sweep_error:.3e}"));
    }
    for (k, draw) in draws.enumerate() {
        for r in 0..draw.components() {
            let norm = basis.norm(&draw.phi[r]);
            if (norm - 1.0).abs() > 1e-8 {
                return Err(format!("{label}: draw {k} component {r} has norm {norm}"));
            }
        }
        if !(draw.noise_var > 0.0 && draw.score_variances().iter().all(|&v| v > 0.0)) {
            return Err(format!("{label}: draw {k} has a non-positive variance"));
        }
    }
    Ok(())
}

/// Orthonormality held after every sweep, each retained eigenfunction has
/// unit norm and the explained-variance fractions are ordered.
pub fn check_eigenfunctions(med: &MediatorPosterior, out: &OutcomePosterior) -> Result<f64, String> {
    check_stage("mediator", &med.basis, med.max_orthonormality_error, med.draws.iter())?;
    check_stage("outcome", &out.basis, out.max_orthonormality_error, out.draws.iter().map(|d| &d.fpca))?;
    for fev in &med.fev {
        if !fev.iter().all(|v| (0.0..=1.0).contains(v)) || !fev.windows(2).all(|w| w[0] >= w[1]) {
            return Err(format!("explained-variance fractions out of order: {fev:?}"));
        }
    }
    Ok(med.max_orthonormality_error.max(out.max_orthonormality_error))
}

/// Flipping the sign of some components in both stages leaves every
/// effect curve bit-identical.
pub fn check_sign_flips(med: &MediatorPosterior, out: &OutcomePosterior, grid: &[f64]) -> Result<(), String> {
    let before = EffectCurves::compute(med, out, grid).map_err(|e| e.to_string())?;
    let mut med = med.clone();
    let r = med.draws[0].components();
    for d in med.draws.iter_mut() {
        for c in (0..r).step_by(2) {
            d.flip_component(c);
        }
    }
    let mut out = out.clone();
    out.mediator_fingerprint = med.fingerprint();
    let r = out.draws[0].fpca.components();
    for d in out.draws.iter_mut() {
        for c in (1..r).step_by(2) {
            d.fpca.flip_component(c);
        }
    }
    let after = EffectCurves::compute(&med, &out, grid).map_err(|e| e.to_string())?;
    for (a, b) in before.curves().iter().zip(after.curves().iter()) {
        if a.draws != b.draws || a.mean != b.mean {
            return Err(format!("{} changed under sign flips", a.name));
        }
    }
    Ok(())
}

/// Rescaling eigenfunction `r` by `scale` and normalizing it back leaves
/// every subject's residual unchanged; returns the largest change.
pub fn normalize_rescale_case(scale: f64, r: usize, seed: u64) -> Result<f64, String> {
    let p = small_problem(12, 21);
    let priors = proper_priors();
    let mut state = scrambled_state(&p, &priors, 2, seed);
    state.phi[r] *= scale;
    let model = Model::new(&p.data, &p.basis, &priors);
    let targets = p.data.responses();
    let before: Vec<_> = (0..p.data.n_subjects()).map(|i| model.residual(&state, &targets[i], i)).collect();
    state.normalize_component(&p.basis, r);
    let norm = p.basis.norm(&state.phi[r]);
    if (norm - 1.0).abs() >= 1e-12 {
        return Err(format!("normalized norm {norm}"));
    }
    let mut worst: f64 = 0.0;
    for (i, b) in before.iter().enumerate() {
        worst = worst.max((model.residual(&state, &targets[i], i) - b).amax());
    }
    if worst > 1e-10 {
        return Err(format!("scale {scale}, component {r}, seed {seed}: residual moved by {worst:.3e}"));
    }
    Ok(worst)
}
