//! Load a long-format CSV, report per-subject counts and flag subjects too
//! sparse for trajectory recovery.
//!
//! ```text
//! cargo run --example validate -- [dataset.csv]
//! ```
//!
//! Without an argument a small dataset is simulated and read back.

use fpca_mediation::data::{load_dataset, read_dataset, validate_dataset, write_dataset_to, Schema};
use fpca_mediation::simulate::{scenario_preset, simulate_dataset};
use fpca_mediation::ScenarioConfig;

fn main() -> fpca_mediation::Result<()> {
    let (data, report) = match std::env::args().nth(1) {
        Some(path) => load_dataset(path, &Schema::default())?,
        None => {
            let cfg = ScenarioConfig { n_subjects: 12, mean_mediator_obs: 3.0, ..scenario_preset(1)? };
            let (d, _) = simulate_dataset(&cfg)?;
            let mut buf = Vec::new();
            write_dataset_to(&mut buf, &d)?;
            read_dataset(buf.as_slice(), &Schema { time_scale: Some(1.0), ..Schema::default() })?
        }
    };
    println!("{} rows read, {} merged duplicates", report.rows_read, report.collapsed_rows);
    let v = validate_dataset(&data);
    println!("{} subjects: {} control, {} treated", data.len(), v.n_control, v.n_treated);
    println!("covariate completeness {:.3}", v.covariate_completeness);
    for s in &v.subjects {
        println!("  {:<6} arm {} mediator {:>2} outcome {:>2}", s.id, u8::from(s.treated), s.mediator, s.outcome);
    }
    for w in &v.warnings {
        println!("warning: {w}");
    }
    println!("{}", if v.is_fit_ready() { "ready to fit" } else { "not fit-ready" });
    Ok(())
}
