//! Degenerate LGVF settings must reproduce plain flow matching bit for bit.

use constrained_flow::harness::{
    run_cell, write_results_csv, Method, ModelCache, RunFile, SampleSection, TrainSection,
};
use constrained_flow::trainer::train_observed;
use constrained_flow::{builtin_case_study, LogicMode, TrainConfig, VectorFieldParams};

fn quick(method: Method, lambda: Option<f64>, eta: Option<f64>) -> RunFile {
    RunFile {
        case: Some(1),
        method,
        seeds: vec![0, 1],
        train: TrainSection {
            iterations: Some(150),
            lambda_max: lambda,
            ..TrainSection::default()
        },
        sample: SampleSection {
            eta_max: eta,
            n_samples: Some(300),
            ..SampleSection::default()
        },
        reference_samples: 300,
        ..RunFile::default()
    }
}

#[test]
fn fm_rows_match_degenerate_lgvf() {
    let fm = quick(Method::Fm, None, None).resolve().unwrap();
    let lgvf = quick(Method::LgvfAdjusted, Some(0.0), Some(0.0)).resolve().unwrap();
    // separate caches so nothing is shared between the two code paths
    let (mut c1, mut c2) = (ModelCache::new(), ModelCache::new());
    let dir = tempfile::tempdir().unwrap();
    for seed in [0, 1] {
        let a = run_cell(&mut c1, &fm, "fm", seed).unwrap();
        let b = run_cell(&mut c2, &lgvf, "fm", seed).unwrap();
        assert_eq!(a.viol_rate_pct.to_bits(), b.viol_rate_pct.to_bits());
        assert_eq!(a.avg_viol.to_bits(), b.avg_viol.to_bits());
        assert_eq!(a.mmd_e3.to_bits(), b.mmd_e3.to_bits());
        let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        write_results_csv(&pa, &[a]).unwrap();
        write_results_csv(&pb, &[b]).unwrap();
        assert_eq!(std::fs::read(&pa).unwrap(), std::fs::read(&pb).unwrap());
    }
}

fn parameter_trajectory(cfg: &TrainConfig) -> Vec<VectorFieldParams> {
    let case = builtin_case_study(2, None).unwrap();
    let mut snaps = Vec::new();
    let mut obs = |_: usize, p: &VectorFieldParams, _: f64, _: f64| snaps.push(p.clone());
    train_observed(cfg, &case.target(), Some(&case.constraint), Some(&mut obs)).unwrap();
    snaps
}

#[test]
fn interpolant_mode_matches_zero_lambda() {
    let base = TrainConfig {
        iterations: 120,
        batch_size: 64,
        hidden: Some(32),
        seed: 3,
        ..TrainConfig::default()
    };
    let plain = parameter_trajectory(&base);
    let interp = parameter_trajectory(&TrainConfig {
        lambda_max: 15.0,
        logic_mode: LogicMode::Interpolant,
        ..base.clone()
    });
    assert_eq!(plain.len(), 120);
    for (a, b) in plain.iter().zip(&interp) {
        assert!(a.scalars().zip(b.scalars()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    // the endpoint penalty does move the parameters
    let endpoint = parameter_trajectory(&TrainConfig {
        lambda_max: 15.0,
        ..base
    });
    assert_ne!(plain.last(), endpoint.last());
}
