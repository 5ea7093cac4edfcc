//! Sensitivity of the mediation effect to residual mediator–outcome
//! correlation, on a scenario with mediator–outcome confounding.
//!
//! ```text
//! cargo run --release --example sensitivity -- [seed] [iterations]
//! ```

use fpca_mediation::basis::BasisConfig;
use fpca_mediation::estimands::{acme_curve, reporting_grid};
use fpca_mediation::outcome::{run_outcome_chain, OutcomeConfig};
use fpca_mediation::sensitivity::{estimate_moments, gamma_given_rho, sensitivity_curve};
use fpca_mediation::simulate::{scenario_preset, simulate_dataset, true_acme};
use fpca_mediation::{mediator, ChainConfig, ScenarioConfig, SplineBasis};

fn main() -> fpca_mediation::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seed: u64 = args.first().map_or(1, |s| s.parse().expect("seed"));
    let iterations: usize = args.get(1).map_or(4000, |s| s.parse().expect("iterations"));

    let cfg = ScenarioConfig { seed, ..scenario_preset(4)? };
    let oracle = cfg.residual_correlation();
    let (data, _) = simulate_dataset(&cfg)?;
    let chain = ChainConfig { seed, iterations, burn_in: iterations / 2, ..Default::default() };
    let med_basis = SplineBasis::from_times(&data.mediator_times(), &BasisConfig::default())?;
    let med = mediator::run_chain(&data, &med_basis, &chain)?;
    let out_basis = SplineBasis::from_times(&data.outcome_times(), &BasisConfig::default())?;
    let out = run_outcome_chain(&data, &med, &out_basis, &OutcomeConfig { chain, ..Default::default() })?;

    let m = estimate_moments(&med, &out, 0.5, false)?;
    println!("midpoint moments: Var(M) {:.3}  Var(Y) {:.3}  Cov {:.3}", m.var_m, m.var_y, m.cov);
    println!("gamma(0) {:.4}  gamma({oracle}) {:.4}", gamma_given_rho(0.0, &m)?, gamma_given_rho(oracle, &m)?);

    let grid = reporting_grid(101);
    let rhos = [-0.4, -0.2, 0.0, oracle, 0.4, 0.6];
    let family = sensitivity_curve(&med, &out, &rhos, &grid, false)?;
    let mid = 50;
    let truth = true_acme(grid[mid]);
    println!("{:>6} {:>9} {:>9} {:>9} {:>8}", "rho", "mean", "lo95", "hi95", "bias");
    for (rho, c) in family.rhos.iter().zip(&family.curves) {
        println!(
            "{rho:>6.2} {:>9.3} {:>9.3} {:>9.3} {:>8.3}",
            c.mean[mid],
            c.lower[mid],
            c.upper[mid],
            c.mean[mid] - truth
        );
    }
    let plain = acme_curve(&med, &out, &grid)?;
    println!("unadjusted midpoint bias {:.3}", plain.mean[mid] - truth);
    match family.breakeven {
        Some(r) => println!("band first covers zero at rho = {r}"),
        None => println!("band excludes zero on the whole rho grid"),
    }
    Ok(())
}
