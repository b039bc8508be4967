//! Runs the component ablation through the harness on a reduced budget and
//! prints the seed-averaged summary. The same grid is available through
//! `cflow reproduce ablation_components`.

use constrained_flow::harness::{render_summary, run_study, summarize, ModelCache, ReproduceOptions, Study};
use constrained_flow::harness::{SampleSection, TrainSection};

fn main() -> anyhow::Result<()> {
    let opts = ReproduceOptions {
        seeds: vec![0, 1],
        train: TrainSection {
            iterations: Some(1500),
            ..TrainSection::default()
        },
        sample: SampleSection {
            n_samples: Some(1000),
            ..SampleSection::default()
        },
        reference_samples: 1000,
        ..ReproduceOptions::default()
    };
    let mut cache = ModelCache::new();
    let mut progress = |r: &constrained_flow::harness::ResultRow| {
        eprintln!("{} {} seed {}: {:.2}%", r.case_study, r.method, r.seed, r.viol_rate_pct)
    };
    let rows = run_study(Study::AblationComponents, &opts, &mut cache, Some(&mut progress))?;
    // fm and fm_adjusted share one model, as do lgvf and lgvf_adjusted
    println!("{} models trained for {} rows", cache.len(), rows.len());
    print!("{}", render_summary(&summarize(&rows)));
    Ok(())
}
