//! Trains flow matching and LGVF on the half-plane case and compares the
//! final losses. Pass an iteration count to train longer:
//! `cargo run --release --example train_lgvf -- 8000`

use constrained_flow::{builtin_case_study, trainer, TrainConfig};

fn main() -> anyhow::Result<()> {
    let iterations = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1500);
    let case = builtin_case_study(1, None)?;
    for lambda_max in [0.0, case.defaults.lambda_max] {
        let cfg = TrainConfig {
            lambda_max,
            iterations,
            hidden: Some(case.defaults.hidden),
            ..TrainConfig::default()
        };
        let (params, history) = trainer::train(&cfg, &case.target(), Some(&case.constraint))?;
        let tail = history.len().saturating_sub(100);
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        println!(
            "lambda_max {lambda_max:>4}: fm loss {:.3} -> {:.3}, logic loss {:.4} (last 100 iters), {} params",
            history.fm[0],
            mean(&history.fm[tail..]),
            mean(&history.logic[tail..]),
            params.num_params()
        );
        let path = std::env::temp_dir().join(format!("cs1_lambda{lambda_max}.json"));
        params.save(&path)?;
        println!("  checkpoint written to {}", path.display());
    }
    Ok(())
}
