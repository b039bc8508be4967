//! Run files, result rows, evaluation and reproduction studies. The `cflow`
//! binary is a thin wrapper over the `cmd_*` functions here.

mod reproduce;
mod runfile;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use reproduce::{
    cmd_reproduce, mean_std, render_summary, run_study, summarize, write_summary_csv, ReproduceOptions, Study,
    SummaryRow,
};
pub use runfile::{Method, ResolvedRun, RunFile, SampleSection, TrainSection};

use crate::error::{check_dim, Error, Result};
use crate::field::VectorFieldParams;
use crate::metrics::{self, MetricsReport};
use crate::sampler::{self, SampleConfig, SampleOutput};
use crate::targets::{derive_seed, CaseStudy};
use crate::theory::{run_theory_suite, TheoryConfig, TheoryReport};
use crate::trainer::{self, TrainConfig, TrainHistory};

/// Kernel bandwidth of every reported MMD.
pub const MMD_SIGMA: f64 = 1.0;
/// Seed stream of the evaluation reference sample.
const REFERENCE_STREAM: u64 = 3;
/// Seed stream of the sampler's base draws.
const SAMPLE_STREAM: u64 = 2;

pub const RESULTS_HEADER: [&str; 7] = [
    "case_study",
    "method",
    "seed",
    "viol_rate_pct",
    "avg_viol",
    "mmd_e3",
    "wall_time_s",
];

/// One line of a results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub case_study: String,
    pub method: String,
    pub seed: u64,
    pub viol_rate_pct: f64,
    pub avg_viol: f64,
    pub mmd_e3: f64,
    pub wall_time_s: f64,
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(RESULTS_HEADER)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok(rows)
}

/// Reference sample for MMD, independent of training and sampling draws.
pub fn reference_sample(case: &CaseStudy, n: usize, seed: u64) -> Result<ndarray::Array2<f64>> {
    case.target().sample(n, derive_seed(seed, REFERENCE_STREAM))
}

/// Sampler config for `seed`: base draws come from a derived stream so that
/// every method evaluated with the same seed starts from the same noise.
pub fn sample_config_for(sample: &SampleConfig, seed: u64) -> SampleConfig {
    SampleConfig {
        seed: derive_seed(seed, SAMPLE_STREAM),
        ..sample.clone()
    }
}

pub fn train_model(case: &CaseStudy, cfg: &TrainConfig) -> Result<(VectorFieldParams, TrainHistory)> {
    trainer::train(cfg, &case.target(), Some(&case.constraint))
}

/// Samples from `p` and scores the samples against a fresh reference.
pub fn evaluate(
    p: &VectorFieldParams,
    case: &CaseStudy,
    sample: &SampleConfig,
    seed: u64,
    reference_n: usize,
) -> Result<(MetricsReport, SampleOutput)> {
    check_dim(case.dim(), p.d)?;
    let cfg = sample_config_for(sample, seed);
    let out = sampler::sample(p, Some(&case.constraint), &cfg)?;
    let reference = reference_sample(case, reference_n, seed)?;
    let report = metrics::report(out.samples.view(), reference.view(), &case.constraint, MMD_SIGMA, seed)?;
    Ok((report, out))
}

/// Trained models keyed by case and training configuration.
#[derive(Default)]
pub struct ModelCache {
    models: HashMap<String, Rc<VectorFieldParams>>,
}

impl ModelCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Returns the cached model and whether it had to be trained.
    pub fn get_or_train(&mut self, case: &CaseStudy, cfg: &TrainConfig) -> Result<(Rc<VectorFieldParams>, bool)> {
        let key = format!("{}|{}", serde_json::to_string(case)?, serde_json::to_string(cfg)?);
        if let Some(p) = self.models.get(&key) {
            return Ok((p.clone(), false));
        }
        let (p, _) = train_model(case, cfg)?;
        let p = Rc::new(p);
        self.models.insert(key, p.clone());
        Ok((p, true))
    }
}

/// Trains (or reuses) and evaluates one (method, seed) cell.
pub fn run_cell(cache: &mut ModelCache, run: &ResolvedRun, method_label: &str, seed: u64) -> Result<ResultRow> {
    let start = Instant::now();
    let (train, sample) = run.for_seed(seed);
    let (p, _) = cache.get_or_train(&run.case, &train)?;
    let (report, _) = evaluate(&p, &run.case, &sample, seed, run.reference_samples)?;
    Ok(ResultRow {
        case_study: run.case.label(),
        method: method_label.to_string(),
        seed,
        viol_rate_pct: report.violation_rate_pct,
        avg_viol: report.avg_violation,
        mmd_e3: report.mmd_e3(),
        wall_time_s: if run.record_wall_time {
            start.elapsed().as_secs_f64()
        } else {
            0.0
        },
    })
}

pub fn checkpoint_path(out: &Path, run: &ResolvedRun, seed: u64) -> PathBuf {
    out.join(format!("{}_{}_seed{seed}.json", run.case.label(), run.method))
}

/// Trains one model per seed; writes `<case>_<method>_seed<s>.json` and the
/// matching `..._history.csv` into `out`.
pub fn cmd_train(run: &ResolvedRun, out: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    for &seed in &run.seeds {
        let (train, _) = run.for_seed(seed);
        let (p, history) = train_model(&run.case, &train)?;
        let ck = checkpoint_path(out, run, seed);
        p.save(&ck)?;
        history.write_csv(&ck.with_file_name(format!("{}_{}_seed{seed}_history.csv", run.case.label(), run.method)))?;
        written.push(ck);
    }
    Ok(written)
}

/// Samples from a checkpoint with the first seed of the run; writes
/// `samples.csv` (and `trajectories.csv` when asked).
pub fn cmd_sample(checkpoint: &Path, run: &ResolvedRun, out: &Path, dump_trajectories: bool) -> Result<PathBuf> {
    let p = VectorFieldParams::load(checkpoint)?;
    check_dim(run.case.dim(), p.d)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let seed = run.seeds[0];
    let cfg = SampleConfig {
        record_trajectories: dump_trajectories,
        ..sample_config_for(&run.sample, seed)
    };
    let o = sampler::sample(&p, Some(&run.case.constraint), &cfg)?;
    let path = out.join("samples.csv");
    sampler::write_samples_csv(&path, o.samples.view(), &run.case.constraint)?;
    if let Some(trajs) = &o.trajectories {
        sampler::write_trajectories_csv(&out.join("trajectories.csv"), trajs)?;
    }
    Ok(path)
}

/// Scores a checkpoint once per seed of the run; writes `eval.csv`.
pub fn cmd_eval(checkpoint: &Path, run: &ResolvedRun, out: &Path, dump_trajectories: bool) -> Result<Vec<ResultRow>> {
    let p = VectorFieldParams::load(checkpoint)?;
    if p.d != run.case.dim() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint has dimension {} but the run file's case has dimension {}",
            p.d,
            run.case.dim()
        )));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for (i, &seed) in run.seeds.iter().enumerate() {
        let start = Instant::now();
        let sample = SampleConfig {
            record_trajectories: dump_trajectories && i == 0,
            ..run.sample.clone()
        };
        let (report, o) = evaluate(&p, &run.case, &sample, seed, run.reference_samples)?;
        if let Some(trajs) = &o.trajectories {
            sampler::write_trajectories_csv(&out.join("trajectories.csv"), trajs)?;
        }
        rows.push(ResultRow {
            case_study: run.case.label(),
            method: run.method.to_string(),
            seed,
            viol_rate_pct: report.violation_rate_pct,
            avg_viol: report.avg_violation,
            mmd_e3: report.mmd_e3(),
            wall_time_s: if run.record_wall_time {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        });
    }
    write_results_csv(&out.join("eval.csv"), &rows)?;
    Ok(rows)
}

/// Runs the theory suite on a checkpoint and writes `theory_report.txt`.
pub fn cmd_theory(
    checkpoint: &Path,
    case: &CaseStudy,
    cfg: &TheoryConfig,
    out: &Path,
) -> Result<(TheoryReport, PathBuf)> {
    let p = VectorFieldParams::load(checkpoint)?;
    let report = run_theory_suite(&p, case, cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("theory_report.txt");
    report.write(&path)?;
    Ok((report, path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn results_header_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let row = ResultRow {
            case_study: "cs1".into(),
            method: "fm".into(),
            seed: 0,
            viol_rate_pct: 1.5,
            avg_viol: 0.25,
            mmd_e3: 12.0,
            wall_time_s: 0.0,
        };
        write_results_csv(&path, std::slice::from_ref(&row)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "case_study,method,seed,viol_rate_pct,avg_viol,mmd_e3,wall_time_s"
        );
        assert_eq!(read_results_csv(&path).unwrap(), vec![row]);
        write_results_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().trim(), RESULTS_HEADER.join(","));
    }

    #[test]
    fn cache_reuses_models() {
        let case = crate::targets::builtin_case_study(1, None).unwrap();
        let cfg = TrainConfig {
            iterations: 3,
            batch_size: 8,
            hidden: Some(8),
            ..TrainConfig::default()
        };
        let mut cache = ModelCache::new();
        let (a, fresh) = cache.get_or_train(&case, &cfg).unwrap();
        assert!(fresh);
        let (b, fresh) = cache.get_or_train(&case, &cfg).unwrap();
        assert!(!fresh);
        assert!(Rc::ptr_eq(&a, &b));
        let other = TrainConfig { seed: 1, ..cfg };
        assert!(cache.get_or_train(&case, &other).unwrap().1);
        assert_eq!(cache.len(), 2);
    }
}
