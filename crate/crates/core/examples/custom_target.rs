//! Describes a new problem in a run file (inline mixture and constraint),
//! trains it and evaluates every method.

use constrained_flow::harness::{run_cell, Method, ModelCache, RunFile};

const RUN: &str = r#"
seeds = [0]
reference_samples = 1000

[target]
components = [
  { mean = [0.0, 2.2], sigma = 0.35, weight = 1.0 },
  { mean = [2.2, 0.0], sigma = 0.35, weight = 1.0 },
]

[constraint]
type = "all_of"
children = [
  { type = "inside_ball", c = [0.0, 0.0], r = 2.6 },
  { type = "outside_ball", c = [1.2, 1.2], r = 0.8 },
]

[train]
iterations = 1500

[sample]
n_samples = 1000
"#;

fn main() -> anyhow::Result<()> {
    let base = RunFile::parse(RUN)?;
    let mut cache = ModelCache::new();
    for method in Method::ALL {
        let run = RunFile { method, ..base.clone() }.resolve()?;
        let row = run_cell(&mut cache, &run, method.as_str(), 0)?;
        println!(
            "{:<14} viol {:>5.2}%  avg {:.5}  mmd {:.2}e-3",
            row.method, row.viol_rate_pct, row.avg_viol, row.mmd_e3
        );
    }
    Ok(())
}
