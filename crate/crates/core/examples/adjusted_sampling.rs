//! Samples one trained field with and without the logic adjustment on the
//! obstacle case and writes the adjusted trajectories to a CSV file.

use constrained_flow::metrics::{avg_violation, violation_rate};
use constrained_flow::sampler::{sample, write_trajectories_csv};
use constrained_flow::{builtin_case_study, trainer, SampleConfig, TrainConfig};

fn main() -> anyhow::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(2000);
    let case = builtin_case_study(3, None)?;
    let cfg = TrainConfig {
        lambda_max: case.defaults.lambda_max,
        iterations,
        hidden: Some(case.defaults.hidden),
        ..TrainConfig::default()
    };
    let (params, _) = trainer::train(&cfg, &case.target(), Some(&case.constraint))?;

    for eta_max in [0.0, 0.5, case.defaults.eta_max, 3.0] {
        let sc = SampleConfig {
            eta_max,
            n_samples: 1000,
            seed: 7,
            record_trajectories: eta_max == case.defaults.eta_max,
            ..SampleConfig::default()
        };
        let out = sample(&params, Some(&case.constraint), &sc)?;
        println!(
            "eta_max {eta_max:>4}: violation rate {:.2}%  avg violation {:.5}",
            violation_rate(out.samples.view(), &case.constraint)?,
            avg_violation(out.samples.view(), &case.constraint)?
        );
        if let Some(trajs) = out.trajectories {
            let path = std::env::temp_dir().join("cs3_trajectories.csv");
            write_trajectories_csv(&path, &trajs[..50])?;
            println!("  first 50 trajectories written to {}", path.display());
        }
    }
    Ok(())
}
