use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{run_cell, write_results_csv, Method, ModelCache, ResultRow, RunFile, SampleSection, TrainSection};
use crate::error::{Error, Result};
use crate::targets::HIGHDIM_DIMS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Study {
    Table1,
    AblationLambda,
    AblationEta,
    AblationT0,
    AblationComponents,
    Highdim,
}

impl Study {
    pub const ALL: [Study; 6] = [
        Study::Table1,
        Study::AblationLambda,
        Study::AblationEta,
        Study::AblationT0,
        Study::AblationComponents,
        Study::Highdim,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Study::Table1 => "table1",
            Study::AblationLambda => "ablation_lambda",
            Study::AblationEta => "ablation_eta",
            Study::AblationT0 => "ablation_t0",
            Study::AblationComponents => "ablation_components",
            Study::Highdim => "highdim",
        }
    }
}

impl std::fmt::Display for Study {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Study {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Study::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown study `{s}`")))
    }
}

pub const LAMBDA_GRID: [f64; 5] = [0.0, 5.0, 10.0, 20.0, 50.0];
pub const ETA_GRID: [f64; 4] = [0.25, 0.5, 1.0, 2.0];
pub const T0_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
pub const TABLE1_METHODS: [Method; 3] = [Method::Fm, Method::Lgvf, Method::LgvfAdjusted];

/// Shared settings of a reproduction run, usually read from a run file.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOptions {
    pub seeds: Vec<u64>,
    pub train: TrainSection,
    pub sample: SampleSection,
    pub reference_samples: usize,
    pub record_wall_time: bool,
    /// Restricts `table1` to one case.
    pub case: Option<u32>,
    /// Restricts `highdim` to one dimension.
    pub dim: Option<usize>,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        Self::from_run_file(&RunFile::default())
    }
}

impl ReproduceOptions {
    pub fn from_run_file(rf: &RunFile) -> Self {
        Self {
            seeds: rf.seeds.clone(),
            train: rf.train.clone(),
            sample: rf.sample.clone(),
            reference_samples: rf.reference_samples,
            record_wall_time: rf.record_wall_time,
            case: rf.case,
            dim: rf.dim,
        }
    }

    fn run_file(&self, case: u32, dim: Option<usize>, method: Method) -> RunFile {
        RunFile {
            case: Some(case),
            dim,
            method,
            seeds: self.seeds.clone(),
            reference_samples: self.reference_samples,
            record_wall_time: self.record_wall_time,
            train: self.train.clone(),
            sample: self.sample.clone(),
            ..RunFile::default()
        }
    }
}

/// One (configuration, label) entry of a study grid.
struct Cell {
    run: RunFile,
    label: String,
}

fn cells(study: Study, o: &ReproduceOptions) -> Vec<Cell> {
    let plain = |case, dim, m: Method| Cell {
        run: o.run_file(case, dim, m),
        label: m.to_string(),
    };
    match study {
        Study::Table1 => {
            let cases: Vec<u32> = o.case.map(|c| vec![c]).unwrap_or_else(|| vec![1, 2, 3]);
            cases
                .into_iter()
                .flat_map(|c| TABLE1_METHODS.map(|m| plain(c, None, m)))
                .collect()
        }
        Study::Highdim => {
            let dims: Vec<usize> = o.dim.map(|d| vec![d]).unwrap_or_else(|| HIGHDIM_DIMS.to_vec());
            dims.into_iter()
                .flat_map(|d| TABLE1_METHODS.map(|m| plain(4, Some(d), m)))
                .collect()
        }
        Study::AblationComponents => Method::ALL.map(|m| plain(1, None, m)).into_iter().collect(),
        Study::AblationLambda => LAMBDA_GRID
            .iter()
            .map(|&l| {
                let mut run = o.run_file(1, None, Method::Lgvf);
                run.train.lambda_max = Some(l);
                Cell {
                    run,
                    label: format!("lgvf(lambda_max={l})"),
                }
            })
            .collect(),
        Study::AblationEta => ETA_GRID
            .iter()
            .flat_map(|&e| {
                [Method::FmAdjusted, Method::LgvfAdjusted].map(|m| {
                    let mut run = o.run_file(1, None, m);
                    run.sample.eta_max = Some(e);
                    Cell {
                        run,
                        label: format!("{m}(eta_max={e})"),
                    }
                })
            })
            .collect(),
        Study::AblationT0 => T0_GRID
            .iter()
            .map(|&t0| {
                let mut run = o.run_file(1, None, Method::LgvfAdjusted);
                run.sample.t0 = Some(t0);
                Cell {
                    run,
                    label: format!("lgvf_adjusted(t0={t0})"),
                }
            })
            .collect(),
    }
}

/// Runs every (cell, seed) of the study in a fixed order. `progress` sees
/// each row as soon as it is computed.
pub fn run_study(
    study: Study,
    opts: &ReproduceOptions,
    cache: &mut ModelCache,
    mut progress: Option<&mut dyn FnMut(&ResultRow)>,
) -> Result<Vec<ResultRow>> {
    let mut rows = Vec::new();
    for cell in cells(study, opts) {
        let run = cell
            .run
            .resolve()
            .map_err(|e| Error::InvalidConfig(format!("{study} cell `{}`: {e}", cell.label)))?;
        for &seed in &run.seeds {
            let row = run_cell(cache, &run, &cell.label, seed).map_err(|e| {
                Error::Precondition(format!(
                    "{study} cell `{}` on {} seed {seed} failed: {e}",
                    cell.label,
                    run.case.label()
                ))
            })?;
            if let Some(p) = progress.as_mut() {
                p(&row);
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub case_study: String,
    pub method: String,
    pub n: usize,
    pub viol_rate_mean: f64,
    pub viol_rate_std: f64,
    pub avg_viol_mean: f64,
    pub avg_viol_std: f64,
    pub mmd_e3_mean: f64,
    pub mmd_e3_std: f64,
}

/// Mean and sample standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups rows by (case, method) in order of first appearance.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in rows {
        let k = (r.case_study.clone(), r.method.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(case_study, method)| {
            let group: Vec<&ResultRow> = rows
                .iter()
                .filter(|r| r.case_study == case_study && r.method == method)
                .collect();
            let col = |f: fn(&ResultRow) -> f64| mean_std(&group.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (vm, vs) = col(|r| r.viol_rate_pct);
            let (am, as_) = col(|r| r.avg_viol);
            let (mm, ms) = col(|r| r.mmd_e3);
            SummaryRow {
                case_study,
                method,
                n: group.len(),
                viol_rate_mean: vm,
                viol_rate_std: vs,
                avg_viol_mean: am,
                avg_viol_std: as_,
                mmd_e3_mean: mm,
                mmd_e3_std: ms,
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, summary: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plain-text `mean ± std` table.
pub fn render_summary(summary: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:<28} {:>18} {:>20} {:>18}",
        "case", "method", "viol (%)", "avg viol", "mmd (x1e-3)"
    );
    for r in summary {
        let _ = writeln!(
            s,
            "{:<10} {:<28} {:>8.2} ± {:<7.2} {:>9.4} ± {:<8.4} {:>8.2} ± {:<7.2}",
            r.case_study,
            r.method,
            r.viol_rate_mean,
            r.viol_rate_std,
            r.avg_viol_mean,
            r.avg_viol_std,
            r.mmd_e3_mean,
            r.mmd_e3_std
        );
    }
    s
}

/// Runs a study and writes `<study>_results.csv`, `<study>_summary.csv` and
/// `<study>_summary.txt` into `out`.
pub fn cmd_reproduce(
    study: Study,
    opts: &ReproduceOptions,
    out: &Path,
    cache: &mut ModelCache,
    progress: Option<&mut dyn FnMut(&ResultRow)>,
) -> Result<(Vec<ResultRow>, PathBuf)> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rows = run_study(study, opts, cache, progress)?;
    let results = out.join(format!("{study}_results.csv"));
    write_results_csv(&results, &rows)?;
    let summary = summarize(&rows);
    write_summary_csv(&out.join(format!("{study}_summary.csv")), &summary)?;
    let txt = out.join(format!("{study}_summary.txt"));
    std::fs::write(&txt, render_summary(&summary)).map_err(|e| Error::io(&txt, e))?;
    Ok((rows, results))
}
