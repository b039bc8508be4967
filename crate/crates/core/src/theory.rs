//! Numerical checks of the adjusted-dynamics results on simulated
//! trajectories: the violation-rate identity, the sufficient step size for
//! monotone decrease, the one-step smoothness bound, the Grönwall deviation
//! envelope, spurious equilibria of summed repulsions and the MMD response
//! to support mismatch.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::Constraint;
use crate::error::{check_dim, Error, Result};
use crate::field::VectorFieldParams;
use crate::metrics;
use crate::sampler::{integrate, integrate_from, integrate_pair, EtaSchedule, SampleConfig, Trajectory};
use crate::targets::{derive_seed, sample_base, CaseStudy};

/// Lipschitz quotients are inflated by this factor.
pub const LIPSCHITZ_SAFETY: f64 = 1.5;
/// Sampled gradient-difference quotients are inflated by this factor.
pub const SMOOTHNESS_SAFETY: f64 = 2.0;
/// Only states with `ℓ` above this value enter the derivative check.
pub const LEMMA_MIN_VIOLATION: f64 = 1e-3;
pub const MIN_PROBES: usize = 1000;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn grad(c: &Constraint, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    c.add_gradient(x, &mut g);
    g
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Lipschitz constant of `v_θ(·, t)`.
    pub l_v: f64,
    /// Smoothness constant of `ℓ`.
    pub l_l: f64,
    /// Bound on `‖∇ℓ‖`.
    pub g: f64,
    pub l_v_method: String,
    pub l_l_method: String,
    pub g_method: String,
}

/// Axis-aligned box used as the probe region.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRegion {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ProbeRegion {
    /// Bounding box of the given states, widened by `inflate` times its
    /// extent on every side (degenerate axes get a unit extent).
    pub fn around<'a>(states: impl IntoIterator<Item = ArrayView1<'a, f64>>, inflate: f64) -> Result<Self> {
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        for s in states {
            if lo.is_empty() {
                lo = s.to_vec();
                hi = s.to_vec();
                continue;
            }
            check_dim(lo.len(), s.len())?;
            for (k, v) in s.iter().enumerate() {
                lo[k] = lo[k].min(*v);
                hi[k] = hi[k].max(*v);
            }
        }
        if lo.is_empty() {
            return Err(Error::Empty("probe region"));
        }
        for k in 0..lo.len() {
            let w = (hi[k] - lo[k]).max(1.0);
            lo[k] -= inflate * w;
            hi[k] += inflate * w;
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((n, self.dim()), |(_, k)| rng.random_range(self.lo[k]..=self.hi[k]))
    }
}

/// Estimates `L_v`, `L_ℓ` and `G` from probe points.
///
/// Every probe is paired with a nearby perturbation and with the next probe,
/// both at a shared random time in `times`; `L_v` is the largest quotient
/// `‖v(x) − v(y)‖ / ‖x − y‖` times [`LIPSCHITZ_SAFETY`]. `G` and `L_ℓ` use
/// the closed forms of the constraint when available.
pub fn estimate_constants(
    p: &VectorFieldParams,
    c: &Constraint,
    points: ArrayView2<f64>,
    times: (f64, f64),
    seed: u64,
) -> Result<TheoryConstants> {
    check_dim(p.d, points.ncols())?;
    check_dim(p.d, c.dim())?;
    let n = points.nrows();
    if n < MIN_PROBES {
        return Err(Error::Precondition(format!(
            "constant estimation needs at least {MIN_PROBES} probes, got {n}"
        )));
    }
    let (t_lo, t_hi) = times;
    if !(0.0..=1.0).contains(&t_lo) || !(t_lo..=1.0).contains(&t_hi) {
        return Err(Error::InvalidConfig(format!("invalid time range [{t_lo}, {t_hi}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut scale = 0.0f64;
    for col in points.columns() {
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
        scale += (hi - lo) * (hi - lo);
    }
    let delta = 1e-4 * scale.sqrt().max(1.0);

    let mut lv = 0.0f64;
    let mut ll_sampled = 0.0f64;
    let mut g_sampled = 0.0f64;
    for i in 0..n {
        let x = points.row(i).to_vec();
        let t = if t_hi > t_lo {
            rng.random_range(t_lo..t_hi)
        } else {
            t_lo
        };
        let mut near = x.clone();
        for v in near.iter_mut() {
            *v += delta * (2.0 * rng.random::<f64>() - 1.0);
        }
        let far = points.row((i + 1) % n).to_vec();
        let vx = p.eval(&x, t)?;
        let gx = grad(c, &x);
        g_sampled = g_sampled.max(norm(&gx));
        for y in [&near, &far] {
            let dxy = x
                .iter()
                .zip(y.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dxy == 0.0 {
                continue;
            }
            let vy = p.eval(y, t)?;
            let dv = vx
                .iter()
                .zip(vy.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            lv = lv.max(dv / dxy);
            if c.segment_smoothness(&x, y)?.is_some() {
                let gy = grad(c, y);
                let dg = gx.iter().zip(&gy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                ll_sampled = ll_sampled.max(dg / dxy);
            }
        }
    }
    let (l_l, l_l_method) = match c.analytic_smoothness() {
        Some(l) => (l, "analytic".to_string()),
        None => (
            SMOOTHNESS_SAFETY * ll_sampled,
            format!("sampled gradient-difference quotient x{SMOOTHNESS_SAFETY}"),
        ),
    };
    let g = c.analytic_gradient_bound();
    Ok(TheoryConstants {
        l_v: LIPSCHITZ_SAFETY * lv,
        l_l,
        g,
        l_v_method: format!("max pairwise quotient over {n} probes x{LIPSCHITZ_SAFETY}"),
        l_l_method,
        g_method: format!("analytic (sampled max {g_sampled:.6})"),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeResidual {
    /// `max |K(ℓ_{k+1} − ℓ_k) − (∇ℓ·v − η‖∇ℓ‖²)|`, zero when nothing was evaluated.
    pub max_residual: f64,
    pub evaluated: usize,
    pub kink_steps: usize,
}

/// Compares the discrete violation rate along `traj` with
/// `∇ℓ·v − η‖∇ℓ‖²` at every state with `ℓ > 10⁻³` whose step stays on one
/// smooth piece. `eta` must be the schedule that produced the trajectory.
pub fn check_violation_derivative(
    traj: &Trajectory,
    p: &VectorFieldParams,
    c: &Constraint,
    eta: impl Fn(f64) -> f64,
) -> Result<DerivativeResidual> {
    check_dim(p.d, traj.states.ncols())?;
    check_dim(p.d, c.dim())?;
    let mut out = DerivativeResidual {
        max_residual: 0.0,
        evaluated: 0,
        kink_steps: 0,
    };
    for k in 0..traj.steps() {
        let x = traj.state(k).to_vec();
        let lx = c.violation(&x);
        if lx <= LEMMA_MIN_VIOLATION {
            continue;
        }
        let y = traj.state(k + 1).to_vec();
        if c.segment_smoothness(&x, &y)?.is_none() {
            out.kink_steps += 1;
            continue;
        }
        let (t, dt) = (traj.times[k], traj.times[k + 1] - traj.times[k]);
        let v = p.eval(&x, t)?;
        let g = grad(c, &x);
        let rhs = dot(&g, v.as_slice().expect("standard layout")) - eta(t) * dot(&g, &g);
        let lhs = (c.violation(&y) - lx) / dt;
        out.max_residual = out.max_residual.max((lhs - rhs).abs());
        out.evaluated += 1;
    }
    Ok(out)
}

/// Smallest `η` that makes `ℓ` non-increasing to first order at `x`:
/// `max(0, ∇ℓ·v / ‖∇ℓ‖²)`.
pub fn sufficient_eta(x: &[f64], p: &VectorFieldParams, t: f64, c: &Constraint) -> Result<f64> {
    check_dim(p.d, x.len())?;
    check_dim(p.d, c.dim())?;
    let v = p.eval(x, t)?;
    threshold(x, v.as_slice().expect("standard layout"), c)
}

fn threshold(x: &[f64], v: &[f64], c: &Constraint) -> Result<f64> {
    if c.violation(x) <= 0.0 {
        return Err(Error::Precondition(
            "sufficient step size needs a violating state".into(),
        ));
    }
    let g = grad(c, x);
    let gg = dot(&g, &g);
    if gg == 0.0 {
        return Err(Error::Precondition(format!(
            "violation gradient vanishes at violating state {x:?}"
        )));
    }
    Ok((dot(&g, v) / gg).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OneStepBound {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// Curvature constant used on the step.
    pub l_l: f64,
}

/// Takes one adjusted Euler step from `x` and compares `ℓ(x_{k+1})` with
/// `ℓ(x) + Δt∇ℓ·v − ηΔt‖∇ℓ‖² + L/2 Δt²‖v − η∇ℓ‖²`. `l_l = None` uses the
/// exact curvature bound of the constraint on the step's segment. Returns
/// `None` when the step crosses a hinge boundary.
pub fn check_one_step_bound(
    x: &[f64],
    p: &VectorFieldParams,
    t: f64,
    c: &Constraint,
    eta: f64,
    dt: f64,
    l_l: Option<f64>,
) -> Result<Option<OneStepBound>> {
    check_dim(p.d, x.len())?;
    check_dim(p.d, c.dim())?;
    let v = p.eval(x, t)?;
    let g = grad(c, x);
    let w: Vec<f64> = v.iter().zip(&g).map(|(vi, gi)| vi - eta * gi).collect();
    let y: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| xi + dt * wi).collect();
    let Some(segment_l) = c.segment_smoothness(x, &y)? else {
        return Ok(None);
    };
    let l = l_l.unwrap_or(segment_l);
    let lhs = c.violation(&y);
    let rhs = c.violation(x) + dt * dot(&g, v.as_slice().expect("standard layout")) - eta * dt * dot(&g, &g)
        + 0.5 * l * dt * dt * dot(&w, &w);
    Ok(Some(OneStepBound {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-10,
        l_l: l,
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneRun {
    pub trajectory: Trajectory,
    pub checked_steps: usize,
    pub kink_steps: usize,
    /// Largest `ℓ_{k+1} − ℓ_k` over checked steps.
    pub max_increase: f64,
}

impl MonotoneRun {
    pub fn holds(&self, tol: f64) -> bool {
        self.max_increase <= tol
    }
}

/// Integrates from `x` at step `k_start` with `η = sufficient_eta + margin`
/// at violating states (and no adjustment elsewhere) and records how `ℓ`
/// evolves over steps that start in violation. Increases on steps crossing
/// a hinge boundary are counted separately.
pub fn run_monotone_policy(
    p: &VectorFieldParams,
    c: &Constraint,
    x: &[f64],
    steps: usize,
    k_start: usize,
    margin: f64,
) -> Result<MonotoneRun> {
    let mut policy = |_t: f64, x: &[f64], v: &[f64]| -> Result<f64> {
        if c.violation(x) > 0.0 {
            Ok(threshold(x, v, c)? + margin)
        } else {
            Ok(0.0)
        }
    };
    let (_, traj) = integrate_from(p, Some(c), x, steps, k_start, &mut policy, true)?;
    let trajectory = traj.expect("recorded trajectory");
    let mut run = MonotoneRun {
        checked_steps: 0,
        kink_steps: 0,
        max_increase: f64::NEG_INFINITY,
        trajectory,
    };
    for k in 0..run.trajectory.steps() {
        let a = run.trajectory.state(k).to_vec();
        let la = c.violation(&a);
        if la <= 0.0 {
            continue;
        }
        let b = run.trajectory.state(k + 1).to_vec();
        let inc = c.violation(&b) - la;
        if inc > 0.0 && c.segment_smoothness(&a, &b)?.is_none() {
            run.kink_steps += 1;
            continue;
        }
        run.checked_steps += 1;
        run.max_increase = run.max_increase.max(inc);
    }
    Ok(run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallCheck {
    pub deviation: Vec<f64>,
    pub envelope: Vec<f64>,
    pub holds: bool,
}

impl GronwallCheck {
    /// Smallest `envelope·1.05 − deviation` over the grid.
    pub fn worst_margin(&self) -> f64 {
        self.deviation
            .iter()
            .zip(&self.envelope)
            .map(|(d, e)| e * 1.05 - d)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Compares `‖x̃_k − x_k‖` with the left-Riemann envelope
/// `Σ_{j<k} Δt e^{L_v(t_k − t_j)} η(t_j) G`.
pub fn check_gronwall(
    base: &Trajectory,
    adjusted: &Trajectory,
    schedule: &EtaSchedule,
    constants: &TheoryConstants,
) -> Result<GronwallCheck> {
    if base.times != adjusted.times {
        return Err(Error::Precondition("trajectories use different time grids".into()));
    }
    check_dim(base.states.ncols(), adjusted.states.ncols())?;
    let times = &base.times;
    let mut deviation = Vec::with_capacity(times.len());
    let mut envelope = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let dev = base
            .state(k)
            .iter()
            .zip(adjusted.state(k).iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let env: f64 = (0..k)
            .map(|j| {
                let dt = times[j + 1] - times[j];
                dt * (constants.l_v * (times[k] - times[j])).exp() * schedule.eval(times[j]) * constants.g
            })
            .sum();
        deviation.push(dev);
        envelope.push(env);
    }
    let holds = deviation.iter().zip(&envelope).all(|(d, e)| *d <= e * 1.05);
    Ok(GronwallCheck {
        deviation,
        envelope,
        holds,
    })
}

/// Regular grid `lo + i·step` for `i = 0..=⌊(hi − lo)/step⌋` per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub step: f64,
}

impl GridSpec {
    pub fn square(d: usize, half_width: f64, step: f64) -> Self {
        Self {
            lo: vec![-half_width; d],
            hi: vec![half_width; d],
            step,
        }
    }

    fn counts(&self) -> Result<Vec<usize>> {
        if self.lo.len() != self.hi.len() || self.lo.is_empty() {
            return Err(Error::InvalidConfig(
                "grid bounds must have equal nonzero length".into(),
            ));
        }
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "grid step must be > 0, got {}",
                self.step
            )));
        }
        let counts: Vec<usize> = self
            .lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| ((h - l) / self.step + 1e-9).floor().max(0.0) as usize + 1)
            .collect();
        let total = counts.iter().try_fold(1usize, |acc, n| acc.checked_mul(*n));
        match total {
            Some(n) if n <= 50_000_000 => Ok(counts),
            _ => Err(Error::InvalidConfig("grid has too many points".into())),
        }
    }
}

/// Grid points violating at least two children of the conjunction where the
/// summed violation gradient nearly cancels (`‖Σ∇ℓᵢ‖ < tol`).
pub fn find_spurious_equilibria(c: &Constraint, grid: &GridSpec, tol: f64) -> Result<Vec<Vec<f64>>> {
    let Some(children) = c.children() else {
        return Err(Error::Precondition("spurious equilibria need a conjunction".into()));
    };
    check_dim(c.dim(), grid.lo.len())?;
    let counts = grid.counts()?;
    let mut found = Vec::new();
    if children.len() < 2 {
        return Ok(found);
    }
    let d = counts.len();
    let mut idx = vec![0usize; d];
    let mut x = vec![0.0; d];
    let mut g = vec![0.0; d];
    'outer: loop {
        for k in 0..d {
            x[k] = grid.lo[k] + idx[k] as f64 * grid.step;
        }
        let active = children.iter().filter(|ch| ch.violation(&x) > 0.0).count();
        if active >= 2 {
            g.fill(0.0);
            c.add_gradient(&x, &mut g);
            if norm(&g) < tol {
                found.push(x.clone());
            }
        }
        for k in (0..d).rev() {
            idx[k] += 1;
            if idx[k] < counts[k] {
                continue 'outer;
            }
            idx[k] = 0;
        }
        break;
    }
    Ok(found)
}

/// Knobs of the full theory suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub seed: u64,
    /// Adjustment strength; `None` uses the case default.
    pub eta_max: Option<f64>,
    pub t0: f64,
    pub lemma_steps: Vec<usize>,
    pub lemma_trajectories: usize,
    pub monotone_trajectories: usize,
    pub monotone_margin: f64,
    pub monotone_tol: f64,
    pub one_step_probes: usize,
    pub gronwall_trials: usize,
    pub constant_probes: usize,
    pub mmd_seeds: usize,
    pub mmd_samples: usize,
    pub contamination: f64,
    pub contamination_depth: f64,
    pub grid: Option<GridSpec>,
    pub equilibrium_tol: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            eta_max: None,
            t0: 0.3,
            lemma_steps: vec![100, 200, 400],
            lemma_trajectories: 20,
            monotone_trajectories: 100,
            monotone_margin: 0.1,
            monotone_tol: 1e-8,
            one_step_probes: 10_000,
            gronwall_trials: 50,
            constant_probes: MIN_PROBES,
            mmd_seeds: 10,
            mmd_samples: 1000,
            contamination: 0.25,
            contamination_depth: 0.2,
            grid: None,
            equilibrium_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    /// Worst observed margin; positive means slack.
    pub worst_margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub case: String,
    pub eta_max: f64,
    pub t0: f64,
    pub constants: TheoryConstants,
    pub checks: Vec<CheckOutcome>,
    pub spurious_equilibria: Vec<Vec<f64>>,
}

impl TheoryReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let c = &self.constants;
        let _ = writeln!(s, "theory report");
        let _ = writeln!(s, "case: {}", self.case);
        let _ = writeln!(s, "eta_max: {}", self.eta_max);
        let _ = writeln!(s, "t0: {}", self.t0);
        let _ = writeln!(s, "constants:");
        let _ = writeln!(s, "  L_v = {:.6e}  [{}]", c.l_v, c.l_v_method);
        let _ = writeln!(s, "  L_l = {:.6e}  [{}]", c.l_l, c.l_l_method);
        let _ = writeln!(s, "  G   = {:.6e}  [{}]", c.g, c.g_method);
        let _ = writeln!(s, "checks:");
        for ch in &self.checks {
            let _ = writeln!(
                s,
                "  [{}] {}  worst_margin={:.6e}  {}",
                if ch.passed { "PASS" } else { "FAIL" },
                ch.name,
                ch.worst_margin,
                ch.detail
            );
        }
        let _ = writeln!(s, "spurious_equilibria: {}", self.spurious_equilibria.len());
        for x in self.spurious_equilibria.iter().take(20) {
            let coords: Vec<String> = x.iter().map(|v| format!("{v:.4}")).collect();
            let _ = writeln!(s, "  ({})", coords.join(", "));
        }
        if self.spurious_equilibria.len() > 20 {
            let _ = writeln!(s, "  ... {} more", self.spurious_equilibria.len() - 20);
        }
        let passed = self.checks.iter().filter(|c| c.passed).count();
        let _ = writeln!(s, "summary: {passed}/{} checks passed", self.checks.len());
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.render()).map_err(|e| Error::io(path, e))
    }
}

pub const CHECK_LEMMA: &str = "violation_derivative";
pub const CHECK_MONOTONE: &str = "monotone_decrease";
pub const CHECK_ONE_STEP: &str = "one_step_bound";
pub const CHECK_GRONWALL: &str = "gronwall_envelope";
pub const CHECK_MMD: &str = "mmd_support_mismatch";

/// Runs every check against a model trained (or not) for `case`.
pub fn run_theory_suite(p: &VectorFieldParams, case: &CaseStudy, cfg: &TheoryConfig) -> Result<TheoryReport> {
    check_dim(case.dim(), p.d)?;
    let c = &case.constraint;
    let eta_max = cfg.eta_max.unwrap_or(case.defaults.eta_max);
    let sample_cfg = SampleConfig {
        eta_max,
        t0: cfg.t0,
        seed: cfg.seed,
        ..SampleConfig::default()
    };
    sample_cfg.validate()?;
    let schedule = sample_cfg.schedule();

    let mut checks = Vec::new();
    checks.push(lemma_check(p, c, cfg, &schedule)?);
    checks.push(monotone_check(p, c, cfg)?);
    let (constants, gronwall) = gronwall_check(p, c, cfg, &sample_cfg)?;
    checks.push(one_step_check(p, c, cfg, eta_max, &constants)?);
    checks.push(gronwall);
    checks.push(mmd_check(case, cfg)?);

    // the default grid only makes sense in the plane
    let grid = match (&cfg.grid, case.dim()) {
        (Some(g), _) => Some(g.clone()),
        (None, 2) => Some(GridSpec::square(2, 4.0, 0.01)),
        _ => None,
    };
    let spurious_equilibria = match grid {
        Some(grid) if c.is_conjunction() && grid.lo.len() == case.dim() => {
            find_spurious_equilibria(c, &grid, cfg.equilibrium_tol)?
        }
        _ => Vec::new(),
    };

    Ok(TheoryReport {
        case: case.label(),
        eta_max,
        t0: cfg.t0,
        constants,
        checks,
        spurious_equilibria,
    })
}

fn lemma_check(
    p: &VectorFieldParams,
    c: &Constraint,
    cfg: &TheoryConfig,
    schedule: &EtaSchedule,
) -> Result<CheckOutcome> {
    let x0 = sample_base(cfg.lemma_trajectories, p.d, derive_seed(cfg.seed, 11));
    let mut residuals = Vec::new();
    let mut evaluated = Vec::new();
    for &k in &cfg.lemma_steps {
        let mut worst = 0.0f64;
        let mut n = 0;
        for row in x0.rows() {
            let mut sched = *schedule;
            let (_, traj) = integrate_from(p, Some(c), &row.to_vec(), k, 0, &mut sched, true)?;
            let r = check_violation_derivative(&traj.expect("recorded"), p, c, |t| schedule.eval(t))?;
            worst = worst.max(r.max_residual);
            n += r.evaluated;
        }
        residuals.push(worst);
        evaluated.push(n);
    }
    // Piecewise-linear constraints make the identity exact.
    let exact = residuals.iter().all(|r| *r < 1e-9);
    let ratios: Vec<f64> = residuals.windows(2).map(|w| w[1] / w[0]).collect();
    let in_band = ratios.iter().all(|r| (0.25..=0.75).contains(r));
    let margin = if exact {
        1e-9 - residuals.iter().cloned().fold(0.0, f64::max)
    } else {
        ratios
            .iter()
            .map(|r| (r - 0.25).min(0.75 - r))
            .fold(f64::INFINITY, f64::min)
    };
    let detail = format!(
        "K={:?} residuals={:?} evaluated={:?} successive_ratios={:?}{}",
        cfg.lemma_steps,
        residuals.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>(),
        evaluated,
        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>(),
        if exact { " (exact: residual below 1e-9)" } else { "" }
    );
    Ok(CheckOutcome {
        name: CHECK_LEMMA.into(),
        passed: exact || (evaluated.iter().all(|n| *n > 0) && in_band),
        worst_margin: margin,
        detail,
    })
}

/// `(step index, state)` pairs plus the number of base draws scanned.
type Starts = (Vec<(usize, Vec<f64>)>, usize);

/// First state at or after `t0` where the unadjusted trajectory violates.
fn violating_starts(p: &VectorFieldParams, c: &Constraint, cfg: &TheoryConfig, steps: usize) -> Result<Starts> {
    let k0 = (cfg.t0 * steps as f64).ceil() as usize;
    let mut starts = Vec::new();
    let plain = SampleConfig {
        steps,
        eta_max: 0.0,
        ..SampleConfig::default()
    };
    let batch = 256;
    let mut scanned = 0;
    let mut round = 0;
    while starts.len() < cfg.monotone_trajectories && scanned < 200 * cfg.monotone_trajectories.max(1) {
        let x0 = sample_base(batch, p.d, derive_seed(cfg.seed, 1000 + round));
        round += 1;
        for row in x0.rows() {
            scanned += 1;
            let (_, traj) = integrate(p, Some(c), &row.to_vec(), &plain, true)?;
            let traj = traj.expect("recorded");
            if let Some(k) = (k0..steps).find(|&k| c.violation(&traj.state(k).to_vec()) > 0.0) {
                starts.push((k, traj.state(k).to_vec()));
                if starts.len() == cfg.monotone_trajectories {
                    break;
                }
            }
        }
    }
    Ok((starts, scanned))
}

fn monotone_check(p: &VectorFieldParams, c: &Constraint, cfg: &TheoryConfig) -> Result<CheckOutcome> {
    let steps = 100;
    let (starts, scanned) = violating_starts(p, c, cfg, steps)?;
    let mut worst = f64::NEG_INFINITY;
    let (mut checked, mut kinks, mut bad) = (0, 0, 0);
    for (k, x) in &starts {
        let run = run_monotone_policy(p, c, x, steps, *k, cfg.monotone_margin)?;
        checked += run.checked_steps;
        kinks += run.kink_steps;
        worst = worst.max(run.max_increase);
        if !run.holds(cfg.monotone_tol) {
            bad += 1;
        }
    }
    Ok(CheckOutcome {
        name: CHECK_MONOTONE.into(),
        passed: bad == 0 && starts.len() == cfg.monotone_trajectories,
        worst_margin: cfg.monotone_tol - worst,
        detail: format!(
            "trajectories={} (scanned {scanned}) eta=threshold+{} checked_steps={checked} kink_steps={kinks} failing={bad} max_increase={worst:.3e}",
            starts.len(),
            cfg.monotone_margin
        ),
    })
}

fn one_step_check(
    p: &VectorFieldParams,
    c: &Constraint,
    cfg: &TheoryConfig,
    eta_max: f64,
    constants: &TheoryConstants,
) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 13));
    let region = ProbeRegion {
        lo: vec![-4.0; p.d],
        hi: vec![4.0; p.d],
    };
    let points = region.sample(cfg.one_step_probes, &mut rng);
    let eta_hi = (2.0 * eta_max).max(1.0);
    let (mut checked, mut kinks, mut bad) = (0, 0, 0);
    let mut worst = f64::INFINITY;
    for row in points.rows() {
        let t = rng.random_range(0.0..1.0);
        let eta = if rng.random_bool(0.1) {
            0.0
        } else {
            rng.random_range(0.0..eta_hi)
        };
        let dt = 1.0 / [50.0, 100.0, 200.0][rng.random_range(0..3)];
        match check_one_step_bound(&row.to_vec(), p, t, c, eta, dt, None)? {
            None => kinks += 1,
            Some(b) => {
                checked += 1;
                worst = worst.min(b.rhs + 1e-10 - b.lhs);
                if !b.holds {
                    bad += 1;
                }
            }
        }
    }
    Ok(CheckOutcome {
        name: CHECK_ONE_STEP.into(),
        passed: bad == 0,
        worst_margin: worst,
        detail: format!(
            "probes={} checked={checked} kink_crossing={kinks} failing={bad} L_l=exact per segment (global {:.3e})",
            cfg.one_step_probes, constants.l_l
        ),
    })
}

fn gronwall_check(
    p: &VectorFieldParams,
    c: &Constraint,
    cfg: &TheoryConfig,
    sample_cfg: &SampleConfig,
) -> Result<(TheoryConstants, CheckOutcome)> {
    let x0 = sample_base(cfg.gronwall_trials, p.d, derive_seed(cfg.seed, 17));
    let schedule = sample_cfg.schedule();
    let mut pairs = Vec::with_capacity(x0.nrows());
    for row in x0.rows() {
        pairs.push(integrate_pair(p, c, sample_cfg, &row.to_vec())?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 19));
    let mut summary: Option<TheoryConstants> = None;
    let (mut held, mut worst) = (0, f64::INFINITY);
    for (i, (base, adjusted)) in pairs.iter().enumerate() {
        let region = ProbeRegion::around(base.states.rows().into_iter().chain(adjusted.states.rows()), 0.1)?;
        let probes = region.sample(cfg.constant_probes.max(MIN_PROBES), &mut rng);
        let k = estimate_constants(
            p,
            c,
            probes.view(),
            (cfg.t0, 1.0),
            derive_seed(cfg.seed, 100 + i as u64),
        )?;
        let check = check_gronwall(base, adjusted, &schedule, &k)?;
        if check.holds {
            held += 1;
        }
        worst = worst.min(check.worst_margin());
        summary = Some(match summary {
            None => k,
            Some(s) if k.l_v > s.l_v => k,
            Some(s) => s,
        });
    }
    let constants = match summary {
        Some(k) => k,
        None => {
            let region = ProbeRegion::around(x0.rows(), 0.1).or_else(|_| {
                Ok::<_, Error>(ProbeRegion {
                    lo: vec![-4.0; p.d],
                    hi: vec![4.0; p.d],
                })
            })?;
            let probes = region.sample(cfg.constant_probes.max(MIN_PROBES), &mut rng);
            estimate_constants(p, c, probes.view(), (cfg.t0, 1.0), cfg.seed)?
        }
    };
    let outcome = CheckOutcome {
        name: CHECK_GRONWALL.into(),
        passed: held == pairs.len(),
        worst_margin: worst,
        detail: format!(
            "trials={} held={held} constants per trial on the 10%-inflated box of both trajectories (largest L_v reported)",
            pairs.len()
        ),
    };
    Ok((constants, outcome))
}

fn mmd_check(case: &CaseStudy, cfg: &TheoryConfig) -> Result<CheckOutcome> {
    let c = &case.constraint;
    let target = case.target();
    let (mut clean, mut dirty) = (Vec::new(), Vec::new());
    for s in 0..cfg.mmd_seeds as u64 {
        let base = derive_seed(cfg.seed, 200 + s);
        let samples = target.sample(cfg.mmd_samples, derive_seed(base, 0))?;
        let reference = target.sample(cfg.mmd_samples, derive_seed(base, 1))?;
        let contaminated = metrics::contaminate(
            samples.view(),
            c,
            cfg.contamination,
            cfg.contamination_depth,
            derive_seed(base, 2),
        )?;
        let reference_feasible = metrics::violation_rate(reference.view(), c)? == 0.0;
        let (a, b) = if reference_feasible {
            metrics::support_mismatch_probe(samples.view(), contaminated.view(), reference.view(), c, 1.0)?
        } else {
            (
                metrics::mmd(samples.view(), reference.view(), 1.0)?,
                metrics::mmd(contaminated.view(), reference.view(), 1.0)?,
            )
        };
        clean.push(a);
        dirty.push(b);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let (mc, md) = (mean(&clean), mean(&dirty));
    Ok(CheckOutcome {
        name: CHECK_MMD.into(),
        passed: !clean.is_empty() && md > mc,
        worst_margin: md - mc,
        detail: format!(
            "seeds={} n={} contamination={} mean_clean_mmd={mc:.6} mean_contaminated_mmd={md:.6}",
            cfg.mmd_seeds, cfg.mmd_samples, cfg.contamination
        ),
    })
}
