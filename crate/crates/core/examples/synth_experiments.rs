//! The synthetic concentration-estimation experiments, at reduced size,
//! written as `(x, metric, value)` CSV on standard output.
//!
//! `cargo run --example synth_experiments`

use shmm::synth::{run_experiment, write_rows_csv, Experiment, ExperimentParams};

fn main() -> shmm::Result<()> {
    let params = ExperimentParams {
        n: 20_000,
        n_grid: vec![100, 1_000, 10_000],
        kappa_grid: vec![10.0, 100.0, 1000.0],
        p_grid: vec![10, 100, 300],
        repeats: 5,
        ..ExperimentParams::default()
    };
    for exp in [
        Experiment::NewtonConvergence,
        Experiment::EstimationVsN,
        Experiment::EstimationVsKappa,
        Experiment::EstimationVsP,
    ] {
        println!("# {exp:?}");
        write_rows_csv(std::io::stdout(), &run_experiment(exp, &params, 1)?)?;
    }
    Ok(())
}
