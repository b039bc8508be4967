//! Analytic gradients against finite differences.

use constrained_flow::trainer::{flow_matching_loss_and_grads, logic_loss_and_grads, TrainingBatch};
use constrained_flow::{builtin_case_study, Constraint, LogicMode, TrainConfig, VectorFieldParams};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const STEP: f64 = 1e-4;
const REL_TOL: f64 = 1e-5;
pub const PROBES: usize = 20;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Random network with non-trivial biases so that every unit is exercised.
fn random_params(rng: &mut ChaCha8Rng, d: usize, h: usize) -> VectorFieldParams {
    let mut p = VectorFieldParams::init(rng.random(), d, h).unwrap();
    for w in p.scalars_mut() {
        *w += 0.1 * normal(rng);
    }
    p
}

fn perturbed(p: &VectorFieldParams, j: usize, delta: f64) -> VectorFieldParams {
    let mut q = p.clone();
    *q.scalars_mut().nth(j).unwrap() += delta;
    q
}

fn stencil(f: &impl Fn(f64) -> f64, h: f64) -> f64 {
    // five-point stencil keeps roundoff low for tiny gradient entries
    (8.0 * (f(h) - f(-h)) - (f(2.0 * h) - f(-2.0 * h))) / (12.0 * h)
}

fn central(f: impl Fn(f64) -> f64) -> f64 {
    stencil(&f, STEP)
}

/// Finite difference, or None when a ReLU or hinge kink sits inside the stencil
/// (two step sizes then disagree).
fn smooth_fd(f: impl Fn(f64) -> f64) -> Option<f64> {
    let (a, b) = (stencil(&f, STEP), stencil(&f, STEP / 4.0));
    (rel_err(a, b) < 1e-6).then_some(a)
}

struct Tally {
    checked: usize,
    skipped: usize,
}

impl Tally {
    fn new() -> Self {
        Tally { checked: 0, skipped: 0 }
    }

    fn compare(&mut self, analytic: f64, fd: Option<f64>, what: &str) {
        match fd {
            None => self.skipped += 1,
            Some(fd) => {
                self.checked += 1;
                let err = rel_err(analytic, fd);
                assert!(err < REL_TOL, "{what}: {analytic} vs {fd} ({err:e})");
            }
        }
    }

    fn finish(&self) {
        let total = self.checked + self.skipped;
        assert!(
            self.skipped * 20 <= total,
            "{} of {total} comparisons hit kinks",
            self.skipped
        );
    }
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, d: usize, spread: f64) -> TrainingBatch {
    let x0 = Array2::from_shape_simple_fn((n, d), || normal(rng));
    let x1 = Array2::from_shape_simple_fn((n, d), || spread * normal(rng));
    let t = Array1::from_shape_simple_fn(n, || rng.random::<f64>());
    TrainingBatch::new(x0, x1, t).unwrap()
}

pub fn network_parameter_and_input_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tally = Tally::new();
    for probe in 0..PROBES {
        let d = [2, 3, 5][probe % 3];
        let p = random_params(&mut rng, d, 12);
        let x: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let t = rng.random::<f64>();
        let up: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
        let objective = |q: &VectorFieldParams, x: &[f64], t: f64| {
            q.eval(x, t).unwrap().iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, trace) = p.forward(&x, t).unwrap();
        let (grads, input_grad) = p.backward(&trace, &up).unwrap();
        let analytic: Vec<f64> = grads.scalars().copied().collect();
        for (j, &a) in analytic.iter().enumerate() {
            let fd = smooth_fd(|e| objective(&perturbed(&p, j, e), &x, t));
            tally.compare(a, fd, &format!("probe {probe} param {j}"));
        }
        assert_eq!(input_grad.len(), d + 1);
        for k in 0..=d {
            let fd = smooth_fd(|e| {
                let mut xe = x.clone();
                let mut te = t;
                if k < d {
                    xe[k] += e;
                } else {
                    te += e;
                }
                objective(&p, &xe, te)
            });
            tally.compare(input_grad[k], fd, &format!("probe {probe} input {k}"));
        }
    }
    tally.finish();
}

pub fn flow_matching_loss_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tally = Tally::new();
    for probe in 0..PROBES {
        let p = random_params(&mut rng, 2, 10);
        let batch = random_batch(&mut rng, 16, 2, 2.0);
        let (_, grads) = flow_matching_loss_and_grads(&p, &batch).unwrap();
        let analytic: Vec<f64> = grads.scalars().copied().collect();
        for (j, &a) in analytic.iter().enumerate() {
            let fd = smooth_fd(|e| flow_matching_loss_and_grads(&perturbed(&p, j, e), &batch).unwrap().0);
            tally.compare(a, fd, &format!("probe {probe} param {j}"));
        }
    }
    tally.finish();
}

pub fn check_endpoint_logic_gradient(c: &Constraint, spread: f64, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cfg = TrainConfig {
        lambda_max: 12.0,
        alpha: 1.0,
        logic_mode: LogicMode::EndpointPredictive,
        ..TrainConfig::default()
    };
    let mut nonzero = 0;
    let mut tally = Tally::new();
    for probe in 0..PROBES {
        let p = random_params(&mut rng, 2, 10);
        let batch = random_batch(&mut rng, 16, 2, spread);
        let (_, grads) = logic_loss_and_grads(&p, &batch, c, &cfg).unwrap();
        let analytic: Vec<f64> = grads.scalars().copied().collect();
        if analytic.iter().any(|g| *g != 0.0) {
            nonzero += 1;
        }
        for (j, &a) in analytic.iter().enumerate() {
            let fd = smooth_fd(|e| logic_loss_and_grads(&perturbed(&p, j, e), &batch, c, &cfg).unwrap().0);
            tally.compare(a, fd, &format!("probe {probe} param {j}"));
        }
    }
    tally.finish();
    assert!(nonzero >= PROBES / 2, "too few probes exercised the penalty");
}

pub fn endpoint_logic_gradient_half_space() {
    check_endpoint_logic_gradient(&builtin_case_study(1, None).unwrap().constraint, 2.0, 3);
}

pub fn endpoint_logic_gradient_ring() {
    check_endpoint_logic_gradient(&builtin_case_study(2, None).unwrap().constraint, 2.0, 4);
}

pub fn endpoint_logic_gradient_obstacles() {
    check_endpoint_logic_gradient(&builtin_case_study(3, None).unwrap().constraint, 1.5, 5);
}

pub fn interpolant_logic_has_zero_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c = builtin_case_study(1, None).unwrap().constraint;
    let cfg = TrainConfig {
        lambda_max: 10.0,
        logic_mode: LogicMode::Interpolant,
        ..TrainConfig::default()
    };
    let p = random_params(&mut rng, 2, 8);
    let batch = random_batch(&mut rng, 32, 2, 2.0);
    let (loss, grads) = logic_loss_and_grads(&p, &batch, &c, &cfg).unwrap();
    assert!(loss > 0.0);
    assert!(grads.scalars().all(|g| *g == 0.0));
    // and the penalty really does not move with the parameters
    let q = perturbed(&p, 3, 0.5);
    assert_eq!(logic_loss_and_grads(&q, &batch, &c, &cfg).unwrap().0, loss);
}

fn constraint_family() -> Vec<Constraint> {
    vec![
        Constraint::half_space(vec![1.0, 1.0], 0.0).unwrap(),
        Constraint::half_space(vec![0.3, -2.0, 0.5], 0.4).unwrap(),
        Constraint::outside_ball(vec![0.2, -0.1], 1.3).unwrap(),
        Constraint::inside_ball(vec![0.0, 0.5], 0.7).unwrap(),
        Constraint::annulus(vec![0.0, 0.0], 1.5, 2.8).unwrap(),
        builtin_case_study(3, None).unwrap().constraint,
    ]
}

pub fn constraint_gradients_away_from_kinks() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for c in constraint_family() {
        let d = c.dim();
        let mut checked = 0;
        while checked < PROBES {
            let x: Vec<f64> = (0..d).map(|_| 2.0 * normal(&mut rng)).collect();
            let lo: Vec<f64> = x.iter().map(|v| v - 2.0 * STEP).collect();
            let hi: Vec<f64> = x.iter().map(|v| v + 2.0 * STEP).collect();
            let near_kink = (0..d).any(|k| {
                let (mut a, mut b) = (x.clone(), x.clone());
                a[k] = lo[k];
                b[k] = hi[k];
                c.segment_smoothness(&a, &b).unwrap().is_none()
            });
            // skip probes near kinks and in the flat feasible region
            if near_kink || c.evaluate(&x).unwrap().is_zero() {
                continue;
            }
            checked += 1;
            let g = c.gradient(&x).unwrap();
            for k in 0..d {
                let fd = central(|e| {
                    let mut xe = x.clone();
                    xe[k] += e;
                    c.evaluate(&xe).unwrap().value()
                });
                let err = rel_err(g[k], fd);
                assert!(err < REL_TOL, "{c:?} at {x:?} coord {k}: {} vs {fd}", g[k]);
            }
        }
    }
}
