//! Build a thin-plate spline basis from observation times and inspect the
//! pieces the samplers use: knots, penalty and the grid inner product.
//!
//! ```text
//! cargo run --example spline_basis
//! ```

use fpca_mediation::basis::{BasisConfig, PenaltyFlavor};
use fpca_mediation::simulate::{scenario_preset, simulate_dataset};
use fpca_mediation::SplineBasis;
use nalgebra::DVector;

fn main() -> fpca_mediation::Result<()> {
    let (data, _) = simulate_dataset(&scenario_preset(1)?)?;
    let times = data.mediator_times();
    for flavor in [PenaltyFlavor::Quadratic, PenaltyFlavor::Cubic] {
        let basis = SplineBasis::from_times(&times, &BasisConfig { flavor, ..Default::default() })?;
        let eig = basis.raw_penalty().clone().symmetric_eigen().eigenvalues;
        let neg = eig.iter().filter(|v| **v < -1e-12).count();
        println!(
            "{flavor:?}: {} knots, dimension {}, {neg} negative penalty eigenvalue(s) before projection",
            basis.knots().len(),
            basis.dim()
        );
    }

    let basis = SplineBasis::from_times(&times, &BasisConfig::default())?;
    println!("knots: {:?}", basis.knots().iter().map(|k| (k * 1000.0).round() / 1000.0).collect::<Vec<_>>());

    // Least-squares fit of sin(2πt) on the grid, then its grid norm.
    let grid = basis.grid().to_vec();
    let b = basis.grid_basis();
    let y = DVector::from_iterator(grid.len(), grid.iter().map(|t| (2.0 * std::f64::consts::PI * t).sin()));
    let coef = (b.transpose() * b).pseudo_inverse(1e-10).expect("svd") * b.transpose() * &y;
    let worst = grid.iter().enumerate().map(|(k, t)| (basis.evaluate(&coef, *t) - y[k]).abs()).fold(0.0, f64::max);
    println!("sin(2πt): max grid error {worst:.2e}, grid norm {:.4} (exact 1/√2 = {:.4})", basis.norm(&coef), 0.5f64.sqrt());
    Ok(())
}
