//! Explicit Euler integration of the learned flow, with an optional
//! late-time correction that descends the constraint violation.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::constraint::Constraint;
use crate::error::{check_dim, Error, Result};
use crate::field::VectorFieldParams;
use crate::targets::sample_base;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    /// Number of Euler steps `K`.
    pub steps: usize,
    pub eta_max: f64,
    pub t0: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub record_trajectories: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            eta_max: 0.0,
            t0: 0.3,
            n_samples: 2000,
            seed: 0,
            record_trajectories: false,
        }
    }
}

impl SampleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.t0) {
            return Err(Error::InvalidConfig(format!("t0 must lie in [0, 1), got {}", self.t0)));
        }
        if !(self.eta_max >= 0.0 && self.eta_max.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "eta_max must be >= 0, got {}",
                self.eta_max
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> EtaSchedule {
        EtaSchedule {
            eta_max: self.eta_max,
            t0: self.t0,
        }
    }
}

/// `η(t) = 0` for `t ≤ t₀`, else `η_max ((t − t₀)/(1 − t₀))²`.
pub fn eta_schedule(t: f64, eta_max: f64, t0: f64) -> f64 {
    if t <= t0 {
        0.0
    } else {
        let r = (t - t0) / (1.0 - t0);
        eta_max * r * r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaSchedule {
    pub eta_max: f64,
    pub t0: f64,
}

impl EtaSchedule {
    pub fn eval(&self, t: f64) -> f64 {
        eta_schedule(t, self.eta_max, self.t0)
    }
}

/// Chooses the correction strength at each Euler step from the time, the
/// current state and the learned velocity there. Returning 0 skips the
/// correction for that step.
pub trait Adjustment {
    fn eta(&mut self, t: f64, x: &[f64], v: &[f64]) -> Result<f64>;
}

impl Adjustment for EtaSchedule {
    fn eta(&mut self, t: f64, _x: &[f64], _v: &[f64]) -> Result<f64> {
        Ok(self.eval(t))
    }
}

impl<F: FnMut(f64, &[f64], &[f64]) -> Result<f64>> Adjustment for F {
    fn eta(&mut self, t: f64, x: &[f64], v: &[f64]) -> Result<f64> {
        self(t, x, v)
    }
}

/// States of one integration, `times[k] = k/K`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `(K + 1) × d`
    pub states: Array2<f64>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn state(&self, k: usize) -> ArrayView1<'_, f64> {
        self.states.row(k)
    }

    pub fn last(&self) -> ArrayView1<'_, f64> {
        self.states.row(self.steps())
    }
}

/// Integrates one sample from `x0` over `[t_start, 1]` with `steps` Euler
/// steps of size `1/steps` starting at index `k_start`.
pub fn integrate_from(
    p: &VectorFieldParams,
    c: Option<&Constraint>,
    x0: &[f64],
    steps: usize,
    k_start: usize,
    adjust: &mut impl Adjustment,
    record: bool,
) -> Result<(Array1<f64>, Option<Trajectory>)> {
    check_dim(p.d, x0.len())?;
    if let Some(c) = c {
        check_dim(p.d, c.dim())?;
    }
    if steps == 0 || k_start > steps {
        return Err(Error::InvalidConfig(format!("invalid step range {k_start}..{steps}")));
    }
    let d = p.d;
    let dt = 1.0 / steps as f64;
    let mut x = x0.to_vec();
    let mut grad = vec![0.0; d];
    let mut traj = record.then(|| Trajectory {
        times: (k_start..=steps).map(|k| k as f64 / steps as f64).collect(),
        states: Array2::zeros((steps - k_start + 1, d)),
    });
    if let Some(tr) = traj.as_mut() {
        tr.states.row_mut(0).assign(&ArrayView1::from(&x));
    }
    for k in k_start..steps {
        let t = k as f64 / steps as f64;
        let mut v = p.eval(&x, t).map_err(|e| match e {
            Error::NonFinite { .. } => Error::NonFinite {
                context: "sampler state",
                step: k,
            },
            other => other,
        })?;
        if let Some(c) = c {
            let v_slice = v.as_slice().expect("standard layout");
            let eta = adjust.eta(t, &x, v_slice)?;
            if eta > 0.0 {
                grad.fill(0.0);
                c.add_gradient(&x, &mut grad);
                for (vi, gi) in v.iter_mut().zip(&grad) {
                    *vi -= eta * gi;
                }
            }
        }
        for (xi, vi) in x.iter_mut().zip(v.iter()) {
            *xi += dt * vi;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "sampler state",
                step: k,
            });
        }
        if let Some(tr) = traj.as_mut() {
            tr.states.row_mut(k + 1 - k_start).assign(&ArrayView1::from(&x));
        }
    }
    Ok((Array1::from(x), traj))
}

/// Integrates one sample over `[0, 1]` with the configured schedule.
pub fn integrate(
    p: &VectorFieldParams,
    c: Option<&Constraint>,
    x0: &[f64],
    cfg: &SampleConfig,
    record: bool,
) -> Result<(Array1<f64>, Option<Trajectory>)> {
    let mut schedule = cfg.schedule();
    integrate_from(p, c, x0, cfg.steps, 0, &mut schedule, record)
}

#[derive(Debug, Clone)]
pub struct SampleOutput {
    pub samples: Array2<f64>,
    pub trajectories: Option<Vec<Trajectory>>,
}

/// Draws `cfg.n_samples` base points and integrates each one independently.
pub fn sample(p: &VectorFieldParams, c: Option<&Constraint>, cfg: &SampleConfig) -> Result<SampleOutput> {
    cfg.validate()?;
    let x0 = sample_base(cfg.n_samples, p.d, cfg.seed);
    sample_from(p, c, x0.view(), cfg)
}

/// Integrates the given base points (rows of `x0`).
pub fn sample_from(
    p: &VectorFieldParams,
    c: Option<&Constraint>,
    x0: ArrayView2<f64>,
    cfg: &SampleConfig,
) -> Result<SampleOutput> {
    cfg.validate()?;
    check_dim(p.d, x0.ncols())?;
    let mut samples = Array2::zeros(x0.raw_dim());
    let mut trajectories = cfg.record_trajectories.then(Vec::new);
    for (i, row) in x0.rows().into_iter().enumerate() {
        let (x, traj) = integrate(p, c, &row.to_vec(), cfg, cfg.record_trajectories)?;
        samples.row_mut(i).assign(&x);
        if let (Some(all), Some(tr)) = (trajectories.as_mut(), traj) {
            all.push(tr);
        }
    }
    Ok(SampleOutput { samples, trajectories })
}

/// Integrates `x0` twice: once without correction and once with the
/// configured schedule. Both runs share every state up to `t₀`.
pub fn integrate_pair(
    p: &VectorFieldParams,
    c: &Constraint,
    cfg: &SampleConfig,
    x0: &[f64],
) -> Result<(Trajectory, Trajectory)> {
    cfg.validate()?;
    let base_cfg = SampleConfig {
        eta_max: 0.0,
        ..cfg.clone()
    };
    let (_, base) = integrate(p, Some(c), x0, &base_cfg, true)?;
    let (_, adjusted) = integrate(p, Some(c), x0, cfg, true)?;
    Ok((
        base.expect("recorded trajectory"),
        adjusted.expect("recorded trajectory"),
    ))
}

/// CSV `sample_id,x_0..x_{d-1},violation`.
pub fn write_samples_csv(path: &Path, samples: ArrayView2<f64>, c: &Constraint) -> Result<()> {
    check_dim(c.dim(), samples.ncols())?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..samples.ncols()).map(|k| format!("x_{k}")));
    header.push("violation".into());
    w.write_record(&header)?;
    for (i, row) in samples.rows().into_iter().enumerate() {
        let x = row.to_vec();
        let mut rec = vec![i.to_string()];
        rec.extend(x.iter().map(|v| v.to_string()));
        rec.push(c.violation(&x).to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// CSV `sample_id,k,t,x_0..x_{d-1}`.
pub fn write_trajectories_csv(path: &Path, trajectories: &[Trajectory]) -> Result<()> {
    let d = trajectories.first().map_or(0, |t| t.states.ncols());
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["sample_id".to_string(), "k".into(), "t".into()];
    header.extend((0..d).map(|k| format!("x_{k}")));
    w.write_record(&header)?;
    for (i, tr) in trajectories.iter().enumerate() {
        for (k, (t, row)) in tr.times.iter().zip(tr.states.rows()).enumerate() {
            let mut rec = vec![i.to_string(), k.to_string(), t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_field() -> VectorFieldParams {
        VectorFieldParams::init(7, 2, 32).unwrap()
    }

    #[test]
    fn eta_schedule_values() {
        assert_eq!(eta_schedule(0.3, 5.0, 0.3), 0.0);
        assert_eq!(eta_schedule(0.1, 5.0, 0.3), 0.0);
        assert_eq!(eta_schedule(1.0, 1.5, 0.3), 1.5);
        assert!((eta_schedule(0.65, 1.0, 0.3) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn zero_eta_matches_plain_sampling() {
        let p = random_field();
        let c = Constraint::half_space(vec![1.0, 1.0], 0.0).unwrap();
        let cfg = SampleConfig {
            n_samples: 50,
            seed: 3,
            ..SampleConfig::default()
        };
        let plain = sample(&p, None, &cfg).unwrap();
        let with_c = sample(&p, Some(&c), &cfg).unwrap();
        assert_eq!(plain.samples, with_c.samples);
    }

    #[test]
    fn output_shape_and_trajectories() {
        let p = random_field();
        let cfg = SampleConfig {
            n_samples: 2000,
            steps: 10,
            ..SampleConfig::default()
        };
        assert_eq!(sample(&p, None, &cfg).unwrap().samples.dim(), (2000, 2));

        let cfg = SampleConfig {
            n_samples: 3,
            steps: 100,
            record_trajectories: true,
            ..SampleConfig::default()
        };
        let out = sample(&p, None, &cfg).unwrap();
        let trs = out.trajectories.unwrap();
        assert_eq!(trs.len(), 3);
        for (i, tr) in trs.iter().enumerate() {
            assert_eq!(tr.states.nrows(), 101);
            for (k, t) in tr.times.iter().enumerate() {
                assert_eq!(*t, k as f64 / 100.0);
            }
            assert_eq!(tr.last(), out.samples.row(i));
            // consecutive states are one Euler step apart
            for k in 0..100 {
                let x = tr.state(k).to_vec();
                let v = p.eval(&x, tr.times[k]).unwrap();
                for j in 0..2 {
                    assert_eq!(tr.states[[k + 1, j]], x[j] + 0.01 * v[j]);
                }
            }
        }
    }

    #[test]
    fn pure_descent_reduces_violation() {
        let p = VectorFieldParams::zeros(2, 4);
        let c = Constraint::half_space(vec![1.0, 1.0], 0.0).unwrap();
        let x0 = [-1.0, -0.5];
        let cfg = SampleConfig {
            eta_max: 1.0,
            ..SampleConfig::default()
        };
        let (x, _) = integrate(&p, Some(&c), &x0, &cfg, false).unwrap();
        let before = c.evaluate(&x0).unwrap().value();
        let after = c.evaluate(x.as_slice().unwrap()).unwrap().value();
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn pair_shares_prefix() {
        let p = random_field();
        let c = Constraint::annulus(vec![0.0, 0.0], 1.5, 2.8).unwrap();
        let cfg = SampleConfig {
            eta_max: 2.0,
            ..SampleConfig::default()
        };
        let (base, adj) = integrate_pair(&p, &c, &cfg, &[0.1, 0.2]).unwrap();
        for k in 0..=100 {
            if base.times[k] <= cfg.t0 {
                assert_eq!(base.state(k), adj.state(k));
            }
        }
        assert_ne!(base.last(), adj.last());

        let cfg0 = SampleConfig { eta_max: 0.0, ..cfg };
        let (b, a) = integrate_pair(&p, &c, &cfg0, &[0.1, 0.2]).unwrap();
        assert_eq!(b, a);
    }

    #[test]
    fn config_validation() {
        let p = random_field();
        for cfg in [
            SampleConfig {
                steps: 0,
                ..SampleConfig::default()
            },
            SampleConfig {
                t0: 1.0,
                ..SampleConfig::default()
            },
            SampleConfig {
                n_samples: 0,
                ..SampleConfig::default()
            },
        ] {
            assert!(sample(&p, None, &cfg).is_err());
        }
        let c3 = Constraint::half_space(vec![1.0; 3], 0.0).unwrap();
        assert!(sample(&p, Some(&c3), &SampleConfig::default()).is_err());
    }

    #[test]
    fn diverging_state_is_reported_with_step() {
        let mut p = VectorFieldParams::zeros(1, 1);
        p.layers[2].bias[0] = f64::MAX;
        let err = integrate(&p, None, &[f64::MAX], &SampleConfig::default(), false).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 0, .. }), "{err}");
    }
}
