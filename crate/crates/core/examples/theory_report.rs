//! Runs the theory checks on a briefly trained ring model and prints the
//! report, including estimated Lipschitz constants.

use constrained_flow::theory::{run_theory_suite, TheoryConfig};
use constrained_flow::{builtin_case_study, trainer, TrainConfig};

fn main() -> anyhow::Result<()> {
    let case = builtin_case_study(2, None)?;
    let cfg = TrainConfig {
        lambda_max: case.defaults.lambda_max,
        iterations: 1000,
        hidden: Some(case.defaults.hidden),
        ..TrainConfig::default()
    };
    let (params, _) = trainer::train(&cfg, &case.target(), Some(&case.constraint))?;
    let report = run_theory_suite(
        &params,
        &case,
        &TheoryConfig {
            gronwall_trials: 20,
            ..TheoryConfig::default()
        },
    )?;
    print!("{}", report.render());
    Ok(())
}
