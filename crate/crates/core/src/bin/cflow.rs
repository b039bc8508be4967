use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use constrained_flow::harness::{self, Method, ModelCache, ReproduceOptions, RunFile, Study};
use constrained_flow::theory::TheoryConfig;

#[derive(Parser)]
#[command(
    name = "cflow",
    version,
    about = "Constrained flow matching: train, sample, evaluate, reproduce"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in case study (1-4); overrides the run file.
    #[arg(long)]
    case: Option<u32>,
    /// Dimension for case 4.
    #[arg(long)]
    dim: Option<usize>,
    /// Single seed; replaces the run file's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the run file.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record measured wall time in result rows.
    #[arg(long)]
    wall_time: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed and write checkpoints plus loss histories.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
    },
    /// Draw samples from a checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Score a checkpoint (violation rate, average violation, MMD).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        dump_trajectories: bool,
    },
    /// Run a reproduction study: table1, ablation_lambda, ablation_eta,
    /// ablation_t0, ablation_components or highdim.
    Reproduce {
        study: Study,
        #[command(flatten)]
        common: Common,
        /// Override training iterations (quick runs).
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Run the theory checks on a checkpoint.
    Theory {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

/// Exit code for a missing run file.
const EXIT_MISSING_FILE: u8 = 2;

fn load_run_file(common: &Common, method: Option<Method>) -> Result<RunFile> {
    let mut rf = match &common.config {
        Some(path) => RunFile::load(path).with_context(|| format!("reading run file {}", path.display()))?,
        None => RunFile::default(),
    };
    if let Some(case) = common.case {
        rf.case = Some(case);
        rf.target = None;
        rf.constraint = None;
    }
    if common.dim.is_some() {
        rf.dim = common.dim;
    }
    if let Some(seed) = common.seed {
        rf.seeds = vec![seed];
    }
    if let Some(out) = &common.out {
        rf.out_dir = out.clone();
    }
    if let Some(m) = method {
        rf.method = m;
    }
    rf.record_wall_time |= common.wall_time;
    Ok(rf)
}

fn missing(path: &Path) -> bool {
    !path.exists()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, method } => {
            let rf = load_run_file(&common, method)?;
            let run = rf.resolve()?;
            for path in harness::cmd_train(&run, &rf.out_dir)? {
                println!("{}", path.display());
            }
        }
        Command::Sample {
            common,
            checkpoint,
            method,
            dump_trajectories,
        } => {
            let rf = load_run_file(&common, method)?;
            let run = rf.resolve()?;
            let path = harness::cmd_sample(&checkpoint, &run, &rf.out_dir, dump_trajectories)
                .with_context(|| format!("sampling from {}", checkpoint.display()))?;
            println!("{}", path.display());
        }
        Command::Eval {
            common,
            checkpoint,
            method,
            dump_trajectories,
        } => {
            let rf = load_run_file(&common, method)?;
            let run = rf.resolve()?;
            let rows = harness::cmd_eval(&checkpoint, &run, &rf.out_dir, dump_trajectories)
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
            for r in rows {
                println!(
                    "{} {} seed={} viol={:.2}% avg={:.5} mmd={:.2}e-3",
                    r.case_study, r.method, r.seed, r.viol_rate_pct, r.avg_viol, r.mmd_e3
                );
            }
        }
        Command::Reproduce {
            study,
            common,
            iterations,
        } => {
            let rf = load_run_file(&common, None)?;
            let mut opts = ReproduceOptions::from_run_file(&rf);
            if let Some(it) = iterations {
                opts.train.iterations = Some(it);
            }
            let mut cache = ModelCache::new();
            let mut progress = |r: &harness::ResultRow| {
                eprintln!(
                    "{} {} seed={} viol={:.2}% mmd={:.2}e-3",
                    r.case_study, r.method, r.seed, r.viol_rate_pct, r.mmd_e3
                )
            };
            let (rows, path) = harness::cmd_reproduce(study, &opts, &rf.out_dir, &mut cache, Some(&mut progress))?;
            print!("{}", harness::render_summary(&harness::summarize(&rows)));
            println!("{}", path.display());
        }
        Command::Theory { common, checkpoint } => {
            let rf = load_run_file(&common, None)?;
            let case = rf.case_study()?;
            let cfg = TheoryConfig {
                seed: rf.seeds.first().copied().unwrap_or(0),
                eta_max: rf.sample.eta_max,
                t0: rf.sample.t0.unwrap_or(TheoryConfig::default().t0),
                ..TheoryConfig::default()
            };
            let (report, path) = harness::cmd_theory(&checkpoint, &case, &cfg, &rf.out_dir)
                .with_context(|| format!("theory checks on {}", checkpoint.display()))?;
            print!("{}", report.render());
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let paths: Vec<PathBuf> = match &cli.command {
        Command::Train { common, .. } | Command::Reproduce { common, .. } => common.config.iter().cloned().collect(),
        Command::Sample { common, checkpoint, .. }
        | Command::Eval { common, checkpoint, .. }
        | Command::Theory { common, checkpoint } => common.config.iter().cloned().chain([checkpoint.clone()]).collect(),
    };
    if let Some(p) = paths.iter().find(|p| missing(p)) {
        eprintln!("error: file not found: {}", p.display());
        return ExitCode::from(EXIT_MISSING_FILE);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
