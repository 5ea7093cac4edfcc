//! Simulate one of the four confounding scenarios and write the dataset
//! and its ground truth.
//!
//! ```text
//! cargo run --example simulate -- [scenario] [seed] [out_dir]
//! ```

use fpca_mediation::data::{validate_dataset, write_dataset};
use fpca_mediation::simulate::{scenario_preset, simulate_dataset, write_truth_files};
use fpca_mediation::ScenarioConfig;

fn main() -> fpca_mediation::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let scenario: u8 = args.first().map_or(1, |s| s.parse().expect("scenario"));
    let seed: u64 = args.get(1).map_or(1, |s| s.parse().expect("seed"));
    let out = std::path::PathBuf::from(args.get(2).map_or("sim_out", String::as_str));
    std::fs::create_dir_all(&out)?;

    let cfg = ScenarioConfig { seed, ..scenario_preset(scenario)? };
    let (data, truth) = simulate_dataset(&cfg)?;
    let report = validate_dataset(&data);
    println!(
        "scenario {scenario}: {} subjects ({} control, {} treated), residual correlation {:.2}",
        data.len(),
        report.n_control,
        report.n_treated,
        cfg.residual_correlation()
    );
    let m: usize = report.subjects.iter().map(|s| s.mediator).sum();
    let y: usize = report.subjects.iter().map(|s| s.outcome).sum();
    println!("{m} mediator and {y} outcome observations");

    write_dataset(out.join("dataset.csv"), &data)?;
    let (latent, curves) = write_truth_files(&out, &truth)?;
    println!("wrote {}, {} and {}", out.join("dataset.csv").display(), latent.display(), curves.display());
    for k in [0, 25, 50, 75, 100] {
        println!(
            "t = {:.2}: mediator effect {:.3}, ACME {:.3}, total {:.3}",
            truth.curves.grid[k], truth.curves.mediator[k], truth.curves.acme[k], truth.curves.total[k]
        );
    }
    Ok(())
}
