//! Conditional flow matching with a time-weighted logic penalty, optimized
//! with Adam.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::Constraint;
use crate::error::{check_dim, Error, Result};
use crate::field::{default_hidden, VectorFieldParams};
use crate::targets::{derive_seed, standard_normal, TargetSampler};

/// Where the logic penalty is evaluated during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogicMode {
    /// On the straight-line interpolant `x_t`, which does not depend on the
    /// parameters: the penalty is reported but contributes no gradient.
    Interpolant,
    /// On the one-step endpoint prediction `x_t + (1 − t) v(x_t, t)`.
    #[default]
    EndpointPredictive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_max: f64,
    pub alpha: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub logic_mode: LogicMode,
    pub seed: u64,
    /// Hidden width; defaults to [`default_hidden`] of the target dimension.
    pub hidden: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_max: 0.0,
            alpha: 1.0,
            learning_rate: 3e-3,
            batch_size: 256,
            iterations: 8000,
            logic_mode: LogicMode::EndpointPredictive,
            seed: 0,
            hidden: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return bad(format!("lambda_max must be >= 0, got {}", self.lambda_max));
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be > 0, got {}", self.alpha));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be at least 1".into());
        }
        Ok(())
    }
}

/// `λ(t) = λ_max · t^α`
pub fn lambda_schedule(t: f64, lambda_max: f64, alpha: f64) -> f64 {
    lambda_max * t.powf(alpha)
}

/// One minibatch of base/target pairs on the straight-line path.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub x0: Array2<f64>,
    pub x1: Array2<f64>,
    pub t: Array1<f64>,
    /// `(1 − t) x₀ + t x₁`
    pub xt: Array2<f64>,
    /// `x₁ − x₀`
    pub ut: Array2<f64>,
}

impl TrainingBatch {
    pub fn new(x0: Array2<f64>, x1: Array2<f64>, t: Array1<f64>) -> Result<Self> {
        check_dim(x0.nrows(), x1.nrows())?;
        check_dim(x0.ncols(), x1.ncols())?;
        check_dim(x0.nrows(), t.len())?;
        let tc = t.view().insert_axis(Axis(1));
        let xt = &x0 * &tc.mapv(|s| 1.0 - s) + &x1 * &tc;
        let ut = &x1 - &x0;
        Ok(Self { x0, x1, t, xt, ut })
    }

    /// Fresh target draws, base draws, then uniform times, in that order.
    pub fn draw(target: &impl TargetSampler, rng: &mut ChaCha8Rng, n: usize) -> Result<Self> {
        let x1 = target.sample_batch(rng, n)?;
        let x0 = standard_normal(rng, n, target.dim());
        let t = Array1::from_shape_simple_fn(n, || rng.random::<f64>());
        Self::new(x0, x1, t)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn check_batch(p: &VectorFieldParams, batch: &TrainingBatch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("training batch"));
    }
    check_dim(p.d, batch.xt.ncols())
}

/// Mean over the batch of `‖v(x_t, t) − u_t‖²` and its parameter gradient.
pub fn flow_matching_loss_and_grads(p: &VectorFieldParams, batch: &TrainingBatch) -> Result<(f64, VectorFieldParams)> {
    let (fm, _, grads) = loss_and_grads(p, batch, None, &TrainConfig::default(), 0)?;
    Ok((fm, grads))
}

/// Time-weighted logic penalty `mean λ(t) ℓ(·)` and its parameter gradient,
/// evaluated where `cfg.logic_mode` says.
pub fn logic_loss_and_grads(
    p: &VectorFieldParams,
    batch: &TrainingBatch,
    c: &Constraint,
    cfg: &TrainConfig,
) -> Result<(f64, VectorFieldParams)> {
    check_batch(p, batch)?;
    check_dim(p.d, c.dim())?;
    let b = batch.len() as f64;
    match cfg.logic_mode {
        LogicMode::Interpolant => {
            let loss = batch
                .xt
                .rows()
                .into_iter()
                .zip(&batch.t)
                .map(|(x, &t)| {
                    lambda_schedule(t, cfg.lambda_max, cfg.alpha) * c.violation(x.as_slice().expect("standard layout"))
                })
                .sum::<f64>()
                / b;
            Ok((loss, p.zeros_like()))
        }
        LogicMode::EndpointPredictive => {
            let trace = p.forward_batch(batch.xt.view(), batch.t.view())?;
            let mut upstream = Array2::zeros(trace.output.raw_dim());
            let loss = add_endpoint_penalty(&trace.output, batch, c, cfg, &mut upstream);
            Ok((loss, p.backward_batch(&trace, upstream.view())?))
        }
    }
}

/// Adds the endpoint penalty's upstream gradient into `upstream` and returns
/// the penalty value.
fn add_endpoint_penalty(
    v: &Array2<f64>,
    batch: &TrainingBatch,
    c: &Constraint,
    cfg: &TrainConfig,
    upstream: &mut Array2<f64>,
) -> f64 {
    let b = batch.len() as f64;
    let d = v.ncols();
    let mut endpoint = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut total = 0.0;
    for i in 0..batch.len() {
        let t = batch.t[i];
        let lam = lambda_schedule(t, cfg.lambda_max, cfg.alpha);
        for k in 0..d {
            endpoint[k] = batch.xt[[i, k]] + (1.0 - t) * v[[i, k]];
        }
        let viol = c.violation(&endpoint);
        total += lam * viol;
        if viol > 0.0 {
            grad.fill(0.0);
            c.add_gradient(&endpoint, &mut grad);
            let scale = (1.0 - t) * lam / b;
            for k in 0..d {
                upstream[[i, k]] += scale * grad[k];
            }
        }
    }
    total / b
}

/// Both losses and the gradient of their sum from a single forward/backward
/// pass. The logic term is skipped entirely when it cannot contribute a
/// gradient, so such runs follow the plain flow matching path bit for bit.
fn loss_and_grads(
    p: &VectorFieldParams,
    batch: &TrainingBatch,
    c: Option<&Constraint>,
    cfg: &TrainConfig,
    iteration: usize,
) -> Result<(f64, f64, VectorFieldParams)> {
    check_batch(p, batch)?;
    let b = batch.len() as f64;
    let trace = p.forward_batch(batch.xt.view(), batch.t.view())?;
    let resid = &trace.output - &batch.ut;
    let fm = resid.iter().map(|r| r * r).sum::<f64>() / b;
    let mut upstream = resid * (2.0 / b);

    let mut logic = 0.0;
    if let Some(c) = c {
        check_dim(p.d, c.dim())?;
        if cfg.lambda_max > 0.0 {
            logic = match cfg.logic_mode {
                LogicMode::EndpointPredictive => add_endpoint_penalty(&trace.output, batch, c, cfg, &mut upstream),
                LogicMode::Interpolant => logic_loss_and_grads(p, batch, c, cfg)?.0,
            };
        }
    }
    if !fm.is_finite() || !logic.is_finite() {
        return Err(Error::NonFinite {
            context: "training loss",
            step: iteration,
        });
    }
    let grads = p.backward_batch(&trace, upstream.view())?;
    Ok((fm, logic, grads))
}

/// Adam moments shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: VectorFieldParams,
    pub v: VectorFieldParams,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(p: &VectorFieldParams) -> Self {
        Self {
            m: p.zeros_like(),
            v: p.zeros_like(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `p` in place.
pub fn adam_step(state: &mut AdamState, p: &mut VectorFieldParams, grads: &VectorFieldParams, lr: f64) -> Result<()> {
    if state.m.num_params() != p.num_params() || grads.num_params() != p.num_params() {
        return Err(Error::DimensionMismatch {
            expected: p.num_params(),
            found: grads.num_params(),
        });
    }
    if !grads.all_finite() {
        return Err(Error::NonFinite {
            context: "gradient",
            step: state.step as usize,
        });
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((w, g), m), v) in p
        .scalars_mut()
        .zip(grads.scalars())
        .zip(state.m.scalars_mut())
        .zip(state.v.scalars_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    if !p.all_finite() {
        return Err(Error::NonFinite {
            context: "parameters",
            step: state.step as usize,
        });
    }
    Ok(())
}

/// Per-iteration losses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub fm: Vec<f64>,
    pub logic: Vec<f64>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.fm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fm.is_empty()
    }

    /// CSV with header `iter,loss_fm,loss_logic`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["iter", "loss_fm", "loss_logic"])?;
        for (i, (fm, lg)) in self.fm.iter().zip(&self.logic).enumerate() {
            w.write_record([i.to_string(), fm.to_string(), lg.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Optional per-iteration observer, called after each update.
pub type Observer<'a> = &'a mut dyn FnMut(usize, &VectorFieldParams, f64, f64);

/// Trains a field from scratch; `c = None` or `lambda_max = 0` is plain flow
/// matching.
pub fn train(
    cfg: &TrainConfig,
    target: &impl TargetSampler,
    c: Option<&Constraint>,
) -> Result<(VectorFieldParams, TrainHistory)> {
    train_observed(cfg, target, c, None)
}

pub fn train_observed(
    cfg: &TrainConfig,
    target: &impl TargetSampler,
    c: Option<&Constraint>,
    mut observer: Option<Observer<'_>>,
) -> Result<(VectorFieldParams, TrainHistory)> {
    cfg.validate()?;
    let d = target.dim();
    if let Some(c) = c {
        check_dim(d, c.dim())?;
    }
    let h = cfg.hidden.unwrap_or_else(|| default_hidden(d));
    let mut params = VectorFieldParams::init(derive_seed(cfg.seed, 0), d, h)?;
    params.seed = cfg.seed;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 1));
    let mut history = TrainHistory {
        fm: Vec::with_capacity(cfg.iterations),
        logic: Vec::with_capacity(cfg.iterations),
    };
    for it in 0..cfg.iterations {
        let batch = TrainingBatch::draw(target, &mut rng, cfg.batch_size)?;
        let (fm, logic, grads) = loss_and_grads(&params, &batch, c, cfg, it)?;
        adam_step(&mut adam, &mut params, &grads, cfg.learning_rate).map_err(|e| match e {
            Error::NonFinite { context, .. } => Error::NonFinite { context, step: it },
            other => other,
        })?;
        history.fm.push(fm);
        history.logic.push(logic);
        if let Some(obs) = observer.as_mut() {
            obs(it, &params, fm, logic);
        }
    }
    Ok((params, history))
}
