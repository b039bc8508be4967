use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constraint::{parse_constraint, ConstraintSpec};
use crate::error::{Error, Result};
use crate::field::default_hidden;
use crate::sampler::SampleConfig;
use crate::targets::{builtin_case_study, CaseDefaults, CaseStudy, GaussianMixture};
use crate::trainer::{LogicMode, TrainConfig};

/// Training/sampling combination reported in result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain flow matching, no adjustment.
    Fm,
    /// Logic loss during training, no adjustment.
    Lgvf,
    /// Logic loss and adjusted sampling.
    #[default]
    LgvfAdjusted,
    /// Plain flow matching with adjusted sampling.
    FmAdjusted,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Fm, Method::Lgvf, Method::LgvfAdjusted, Method::FmAdjusted];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Fm => "fm",
            Method::Lgvf => "lgvf",
            Method::LgvfAdjusted => "lgvf_adjusted",
            Method::FmAdjusted => "fm_adjusted",
        }
    }

    pub fn uses_logic_loss(self) -> bool {
        matches!(self, Method::Lgvf | Method::LgvfAdjusted)
    }

    pub fn uses_adjustment(self) -> bool {
        matches!(self, Method::LgvfAdjusted | Method::FmAdjusted)
    }

    /// Zeroes whichever of `λ_max` and `η_max` the method disables.
    pub fn apply(self, train: &mut TrainConfig, sample: &mut SampleConfig) {
        if !self.uses_logic_loss() {
            train.lambda_max = 0.0;
        }
        if !self.uses_adjustment() {
            sample.eta_max = 0.0;
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "unknown method `{s}` (expected fm, lgvf, lgvf_adjusted or fm_adjusted)"
            ))
        })
    }
}

/// Training fields a run file may set; unset ones fall back to the case
/// defaults and then to [`TrainConfig::default`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lambda_max: Option<f64>,
    pub alpha: Option<f64>,
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub iterations: Option<usize>,
    pub logic_mode: Option<LogicMode>,
    pub hidden: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleSection {
    pub steps: Option<usize>,
    pub eta_max: Option<f64>,
    pub t0: Option<f64>,
    pub n_samples: Option<usize>,
}

/// Contents of a run file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunFile {
    /// Built-in case study (1 to 4).
    pub case: Option<u32>,
    /// Dimension for case 4.
    pub dim: Option<usize>,
    /// Inline target; requires `constraint` and excludes `case`.
    pub target: Option<GaussianMixture>,
    pub constraint: Option<ConstraintSpec>,
    /// Truncate an inline target to the feasible set (default true).
    pub truncate: Option<bool>,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Size of the fresh reference sample for MMD.
    pub reference_samples: usize,
    /// Write measured wall time instead of 0 into result rows.
    pub record_wall_time: bool,
    pub train: TrainSection,
    pub sample: SampleSection,
}

impl Default for RunFile {
    fn default() -> Self {
        Self {
            case: None,
            dim: None,
            target: None,
            constraint: None,
            truncate: None,
            method: Method::default(),
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("out"),
            reference_samples: 2000,
            record_wall_time: false,
            train: TrainSection::default(),
            sample: SampleSection::default(),
        }
    }
}

/// A run file with every default filled in, for one method.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedRun {
    pub case: CaseStudy,
    pub method: Method,
    pub train: TrainConfig,
    pub sample: SampleConfig,
    pub seeds: Vec<u64>,
    pub reference_samples: usize,
    pub record_wall_time: bool,
    pub out_dir: PathBuf,
}

impl ResolvedRun {
    pub fn for_seed(&self, seed: u64) -> (TrainConfig, SampleConfig) {
        let train = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let sample = SampleConfig {
            seed,
            ..self.sample.clone()
        };
        (train, sample)
    }
}

/// Defaults for inline targets.
const INLINE_DEFAULTS: (f64, f64) = (10.0, 1.0);

impl RunFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn case_study(&self) -> Result<CaseStudy> {
        match (self.case, &self.target, &self.constraint) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err(Error::InvalidConfig(
                "set either `case` or an inline target and constraint, not both".into(),
            )),
            (Some(id), None, None) => builtin_case_study(id, self.dim),
            (None, Some(mixture), Some(spec)) => {
                let constraint = parse_constraint(spec)?;
                crate::error::check_dim(mixture.dim(), constraint.dim())?;
                let (lambda_max, eta_max) = INLINE_DEFAULTS;
                Ok(CaseStudy {
                    id: 0,
                    name: "custom".into(),
                    mixture: mixture.clone(),
                    constraint,
                    truncate: self.truncate.unwrap_or(true),
                    defaults: CaseDefaults {
                        lambda_max,
                        eta_max,
                        hidden: default_hidden(mixture.dim()),
                    },
                })
            }
            (None, _, _) => Err(Error::InvalidConfig(
                "run file needs `case` or both `target` and `constraint`".into(),
            )),
        }
    }

    /// Fills defaults and applies the method's forcing rules.
    pub fn resolve(&self) -> Result<ResolvedRun> {
        let case = self.case_study()?;
        let d = TrainConfig::default();
        let mut train = TrainConfig {
            lambda_max: self.train.lambda_max.unwrap_or(case.defaults.lambda_max),
            alpha: self.train.alpha.unwrap_or(d.alpha),
            learning_rate: self.train.learning_rate.unwrap_or(d.learning_rate),
            batch_size: self.train.batch_size.unwrap_or(d.batch_size),
            iterations: self.train.iterations.unwrap_or(d.iterations),
            logic_mode: self.train.logic_mode.unwrap_or(d.logic_mode),
            seed: 0,
            hidden: Some(self.train.hidden.unwrap_or(case.defaults.hidden)),
        };
        let s = SampleConfig::default();
        let mut sample = SampleConfig {
            steps: self.sample.steps.unwrap_or(s.steps),
            eta_max: self.sample.eta_max.unwrap_or(case.defaults.eta_max),
            t0: self.sample.t0.unwrap_or(s.t0),
            n_samples: self.sample.n_samples.unwrap_or(s.n_samples),
            seed: 0,
            record_trajectories: false,
        };
        self.method.apply(&mut train, &mut sample);
        train.validate()?;
        sample.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("run file lists no seeds".into()));
        }
        if self.reference_samples == 0 {
            return Err(Error::InvalidConfig("reference_samples must be at least 1".into()));
        }
        Ok(ResolvedRun {
            case,
            method: self.method,
            train,
            sample,
            seeds: self.seeds.clone(),
            reference_samples: self.reference_samples,
            record_wall_time: self.record_wall_time,
            out_dir: self.out_dir.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_forcing() {
        let mut t = TrainConfig {
            lambda_max: 10.0,
            ..TrainConfig::default()
        };
        let mut s = SampleConfig {
            eta_max: 1.0,
            ..SampleConfig::default()
        };
        Method::Fm.apply(&mut t, &mut s);
        assert_eq!((t.lambda_max, s.eta_max), (0.0, 0.0));

        let (mut t, mut s) = (
            TrainConfig {
                lambda_max: 10.0,
                ..TrainConfig::default()
            },
            SampleConfig {
                eta_max: 1.0,
                ..SampleConfig::default()
            },
        );
        Method::Lgvf.apply(&mut t, &mut s);
        assert_eq!((t.lambda_max, s.eta_max), (10.0, 0.0));
        let (mut t, mut s) = (
            TrainConfig {
                lambda_max: 10.0,
                ..TrainConfig::default()
            },
            SampleConfig {
                eta_max: 1.0,
                ..SampleConfig::default()
            },
        );
        Method::FmAdjusted.apply(&mut t, &mut s);
        assert_eq!((t.lambda_max, s.eta_max), (0.0, 1.0));
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("sgd".parse::<Method>().is_err());
    }

    #[test]
    fn builtin_run_file() {
        let rf = RunFile::parse(
            r#"
            case = 2
            method = "lgvf_adjusted"
            seeds = [4]
            [train]
            iterations = 50
            [sample]
            n_samples = 10
            "#,
        )
        .unwrap();
        let r = rf.resolve().unwrap();
        assert_eq!(r.case.label(), "cs2");
        assert_eq!(r.train.lambda_max, 15.0);
        assert_eq!(r.sample.eta_max, 1.0);
        assert_eq!(r.train.iterations, 50);
        assert_eq!(r.seeds, vec![4]);
    }

    #[test]
    fn inline_run_file() {
        let rf = RunFile::parse(
            r#"
            method = "fm"
            [target]
            components = [
              { mean = [1.0, 1.0], sigma = 0.3, weight = 1.0 },
            ]
            [constraint]
            type = "halfspace"
            a = [1.0, 0.0]
            b = 0.0
            "#,
        )
        .unwrap();
        let r = rf.resolve().unwrap();
        assert_eq!(r.case.label(), "custom");
        assert_eq!(r.train.lambda_max, 0.0);
        assert_eq!(r.sample.eta_max, 0.0);
        assert_eq!(r.seeds, vec![0, 1, 2]);
    }

    #[test]
    fn invalid_run_files() {
        assert!(RunFile::parse("bogus = 1").is_err());
        assert!(RunFile::parse("method = \"sgd\"").is_err());
        assert!(RunFile::default().resolve().is_err());
        let both = RunFile {
            case: Some(1),
            constraint: Some(ConstraintSpec::Halfspace {
                a: vec![1.0, 0.0],
                b: 0.0,
            }),
            ..RunFile::default()
        };
        assert!(both.resolve().is_err());
        let no_seeds = RunFile {
            case: Some(1),
            seeds: vec![],
            ..RunFile::default()
        };
        assert!(no_seeds.resolve().is_err());
        let zero_n = RunFile {
            case: Some(1),
            sample: SampleSection {
                n_samples: Some(0),
                ..SampleSection::default()
            },
            ..RunFile::default()
        };
        assert!(zero_n.resolve().is_err());
    }
}
