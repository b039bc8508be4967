//! Logical constraints encoded as trees of hinge relaxations.
//!
//! Every constraint carries a violation function `ℓ(x) ≥ 0` that is zero exactly
//! on the feasible set, an analytic (sub)gradient, and a boolean satisfaction
//! test. Conjunctions sum the violations of their children.
//!
//! Subgradient conventions: wherever a hinge is inactive (violation exactly
//! zero) the gradient is the zero vector, and at the center of a ball the
//! radial direction is undefined so the gradient is also zero.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// A non-negative violation magnitude, zero exactly on the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Violation(f64);

impl Violation {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

/// Validated constraint tree. Construct through the checked constructors or
/// [`parse_constraint`]; the fields are private so invariants always hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    kind: Kind,
    dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Kind {
    /// `a·x ≥ b`
    HalfSpace {
        a: Vec<f64>,
        b: f64,
    },
    /// `‖x − c‖ ≥ r` (a forbidden ball)
    OutsideBall {
        center: Vec<f64>,
        radius: f64,
    },
    /// `‖x − c‖ ≤ r`
    InsideBall {
        center: Vec<f64>,
        radius: f64,
    },
    /// `r_min ≤ ‖x − c‖ ≤ r_max`
    Annulus {
        center: Vec<f64>,
        r_min: f64,
        r_max: f64,
    },
    AllOf(Vec<Constraint>),
}

fn finite_vec(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidConstraint(format!("{name} must be non-empty")));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConstraint(format!("{name} contains a non-finite entry")));
    }
    Ok(())
}

fn finite_scalar(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConstraint(format!("{name} is not finite")))
    }
}

fn radius(name: &str, r: f64) -> Result<()> {
    finite_scalar(name, r)?;
    if r < 0.0 {
        return Err(Error::InvalidConstraint(format!("{name} must be >= 0, got {r}")));
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(x: &[f64], c: &[f64]) -> f64 {
    x.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

/// Distance from `c` to the closed segment `[x, y]`.
fn segment_distance(x: &[f64], y: &[f64], c: &[f64]) -> f64 {
    let dir: Vec<f64> = y.iter().zip(x).map(|(b, a)| b - a).collect();
    let len2 = dot(&dir, &dir);
    if len2 == 0.0 {
        return dist(x, c);
    }
    let rel: Vec<f64> = c.iter().zip(x).map(|(c, a)| c - a).collect();
    let s = (dot(&rel, &dir) / len2).clamp(0.0, 1.0);
    let p: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + s * d).collect();
    dist(&p, c)
}

/// Adds `scale · (x − c)/‖x − c‖` into `out`; no-op at `x = c`.
fn add_radial(out: &mut [f64], x: &[f64], c: &[f64], rho: f64, scale: f64) {
    if rho == 0.0 {
        return;
    }
    for ((o, xi), ci) in out.iter_mut().zip(x).zip(c) {
        *o += scale * (xi - ci) / rho;
    }
}

impl Constraint {
    pub fn half_space(a: Vec<f64>, b: f64) -> Result<Self> {
        finite_vec("a", &a)?;
        finite_scalar("b", b)?;
        if dot(&a, &a) == 0.0 {
            return Err(Error::InvalidConstraint(
                "half-space normal must have non-zero norm".into(),
            ));
        }
        let dim = a.len();
        Ok(Self {
            kind: Kind::HalfSpace { a, b },
            dim,
        })
    }

    pub fn outside_ball(center: Vec<f64>, r: f64) -> Result<Self> {
        finite_vec("center", &center)?;
        radius("r", r)?;
        let dim = center.len();
        Ok(Self {
            kind: Kind::OutsideBall { center, radius: r },
            dim,
        })
    }

    pub fn inside_ball(center: Vec<f64>, r: f64) -> Result<Self> {
        finite_vec("center", &center)?;
        radius("r", r)?;
        let dim = center.len();
        Ok(Self {
            kind: Kind::InsideBall { center, radius: r },
            dim,
        })
    }

    pub fn annulus(center: Vec<f64>, r_min: f64, r_max: f64) -> Result<Self> {
        finite_vec("center", &center)?;
        radius("r_min", r_min)?;
        radius("r_max", r_max)?;
        if !(r_min > 0.0 && r_min < r_max) {
            return Err(Error::InvalidConstraint(format!(
                "annulus requires 0 < r_min < r_max, got r_min = {r_min}, r_max = {r_max}"
            )));
        }
        let dim = center.len();
        Ok(Self {
            kind: Kind::Annulus { center, r_min, r_max },
            dim,
        })
    }

    pub fn all_of(children: Vec<Constraint>) -> Result<Self> {
        let first = children
            .first()
            .ok_or_else(|| Error::InvalidConstraint("conjunction needs at least one child".into()))?;
        let dim = first.dim;
        for child in &children {
            if child.dim != dim {
                return Err(Error::InvalidConstraint(format!(
                    "conjunction children disagree on dimension ({} vs {})",
                    dim, child.dim
                )));
            }
        }
        Ok(Self {
            kind: Kind::AllOf(children),
            dim,
        })
    }

    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Children of a conjunction, `None` for a primitive.
    pub fn children(&self) -> Option<&[Constraint]> {
        match &self.kind {
            Kind::AllOf(c) => Some(c),
            _ => None,
        }
    }

    pub fn is_conjunction(&self) -> bool {
        matches!(self.kind, Kind::AllOf(_))
    }

    /// Ball center for the radial primitives.
    pub fn center(&self) -> Option<&[f64]> {
        match &self.kind {
            Kind::OutsideBall { center, .. } | Kind::InsideBall { center, .. } | Kind::Annulus { center, .. } => {
                Some(center)
            }
            _ => None,
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Violation> {
        check_dim(self.dim, x.len())?;
        Ok(Violation(self.violation(x)))
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len())?;
        let mut g = vec![0.0; self.dim];
        self.add_gradient(x, &mut g);
        Ok(g)
    }

    pub fn is_satisfied(&self, x: &[f64], tol: f64) -> Result<bool> {
        Ok(self.evaluate(x)?.value() <= tol)
    }

    /// Unchecked violation; callers guarantee `x.len() == self.dim()`.
    pub(crate) fn violation(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            Kind::HalfSpace { a, b } => (b - dot(a, x)).max(0.0),
            Kind::OutsideBall { center, radius } => (radius - dist(x, center)).max(0.0),
            Kind::InsideBall { center, radius } => (dist(x, center) - radius).max(0.0),
            Kind::Annulus { center, r_min, r_max } => {
                let rho = dist(x, center);
                (r_min - rho).max(0.0) + (rho - r_max).max(0.0)
            }
            Kind::AllOf(children) => children.iter().fold(0.0, |acc, c| acc + c.violation(x)),
        }
    }

    /// Accumulates the gradient at `x` into `out`.
    pub(crate) fn add_gradient(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim);
        match &self.kind {
            Kind::HalfSpace { a, b } => {
                if b - dot(a, x) > 0.0 {
                    for (o, ai) in out.iter_mut().zip(a) {
                        *o -= ai;
                    }
                }
            }
            Kind::OutsideBall { center, radius } => {
                let rho = dist(x, center);
                if radius - rho > 0.0 {
                    add_radial(out, x, center, rho, -1.0);
                }
            }
            Kind::InsideBall { center, radius } => {
                let rho = dist(x, center);
                if rho - radius > 0.0 {
                    add_radial(out, x, center, rho, 1.0);
                }
            }
            Kind::Annulus { center, r_min, r_max } => {
                let rho = dist(x, center);
                if r_min - rho > 0.0 {
                    add_radial(out, x, center, rho, -1.0);
                }
                if rho - r_max > 0.0 {
                    add_radial(out, x, center, rho, 1.0);
                }
            }
            Kind::AllOf(children) => {
                for c in children {
                    c.add_gradient(x, out);
                }
            }
        }
    }

    /// Supremum of `‖∇ℓ‖` when known in closed form. Conjunctions report the
    /// sum of their children, which is an upper bound.
    pub fn analytic_gradient_bound(&self) -> f64 {
        match &self.kind {
            Kind::HalfSpace { a, .. } => dot(a, a).sqrt(),
            Kind::OutsideBall { .. } | Kind::InsideBall { .. } | Kind::Annulus { .. } => 1.0,
            Kind::AllOf(children) => children.iter().map(|c| c.analytic_gradient_bound()).sum(),
        }
    }

    /// Global smoothness constant of `ℓ` on `{ℓ > 0}` when it exists in closed
    /// form. Hinges whose active region contains a ball center (where the
    /// curvature of `‖x − c‖` blows up) return `None`.
    pub fn analytic_smoothness(&self) -> Option<f64> {
        match &self.kind {
            Kind::HalfSpace { .. } => Some(0.0),
            Kind::InsideBall { radius, .. } if *radius > 0.0 => Some(1.0 / radius),
            Kind::InsideBall { .. } | Kind::OutsideBall { .. } | Kind::Annulus { .. } => None,
            Kind::AllOf(children) => children.iter().map(|c| c.analytic_smoothness()).sum::<Option<f64>>(),
        }
    }

    /// Curvature constant `L` such that
    /// `ℓ(z) ≤ ℓ(x) + ∇ℓ(x)·(z − x) + L/2 ‖z − x‖²` for every `z` on the
    /// segment `[x, y]`. Returns `None` when the segment crosses a hinge
    /// boundary (or passes through a ball center inside an active piece),
    /// where no such bound is available.
    pub fn segment_smoothness(&self, x: &[f64], y: &[f64]) -> Result<Option<f64>> {
        check_dim(self.dim, x.len())?;
        check_dim(self.dim, y.len())?;
        Ok(self.segment_smoothness_inner(x, y))
    }

    fn segment_smoothness_inner(&self, x: &[f64], y: &[f64]) -> Option<f64> {
        // Per radial piece: `outer` is the convex hinge `ρ − r` (active for
        // ρ > r), otherwise the concave hinge `r − ρ` (active for ρ < r).
        fn radial_piece(x: &[f64], y: &[f64], c: &[f64], r: f64, outer: bool) -> Option<f64> {
            let (rx, ry) = (dist(x, c), dist(y, c));
            let seg = segment_distance(x, y, c);
            if outer {
                match (rx > r, ry > r) {
                    // inactive on a convex set
                    (false, false) => Some(0.0),
                    (true, true) if seg > r => Some(1.0 / seg),
                    _ => None,
                }
            } else {
                match (rx < r, ry < r) {
                    // concave on the convex active ball; the gradient at x must exist
                    (true, true) if rx > 0.0 => Some(0.0),
                    (false, false) if seg >= r => Some(0.0),
                    _ => None,
                }
            }
        }
        match &self.kind {
            Kind::HalfSpace { a, b } => {
                let (sx, sy) = (b - dot(a, x), b - dot(a, y));
                if (sx > 0.0) == (sy > 0.0) {
                    Some(0.0)
                } else {
                    None
                }
            }
            Kind::OutsideBall { center, radius } => radial_piece(x, y, center, *radius, false),
            Kind::InsideBall { center, radius } => radial_piece(x, y, center, *radius, true),
            Kind::Annulus { center, r_min, r_max } => {
                Some(radial_piece(x, y, center, *r_min, false)? + radial_piece(x, y, center, *r_max, true)?)
            }
            Kind::AllOf(children) => children.iter().map(|c| c.segment_smoothness_inner(x, y)).sum(),
        }
    }

    /// Serializable form matching the run-file schema.
    pub fn to_spec(&self) -> ConstraintSpec {
        match &self.kind {
            Kind::HalfSpace { a, b } => ConstraintSpec::Halfspace { a: a.clone(), b: *b },
            Kind::OutsideBall { center, radius } => ConstraintSpec::OutsideBall {
                c: center.clone(),
                r: *radius,
            },
            Kind::InsideBall { center, radius } => ConstraintSpec::InsideBall {
                c: center.clone(),
                r: *radius,
            },
            Kind::Annulus { center, r_min, r_max } => ConstraintSpec::Annulus {
                c: Some(center.clone()),
                dim: None,
                r_min: *r_min,
                r_max: *r_max,
            },
            Kind::AllOf(children) => ConstraintSpec::AllOf {
                children: children.iter().map(|c| c.to_spec()).collect(),
            },
        }
    }
}

/// Structured-config form of a constraint, e.g.
/// `{ type = "halfspace", a = [1.0, 1.0], b = 0.0 }`.
///
/// An annulus without `c` is centered at the origin of dimension `dim`
/// (default 2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConstraintSpec {
    Halfspace {
        a: Vec<f64>,
        b: f64,
    },
    OutsideBall {
        c: Vec<f64>,
        r: f64,
    },
    InsideBall {
        c: Vec<f64>,
        r: f64,
    },
    Annulus {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        c: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
        r_min: f64,
        r_max: f64,
    },
    AllOf {
        children: Vec<ConstraintSpec>,
    },
}

pub fn parse_constraint(spec: &ConstraintSpec) -> Result<Constraint> {
    match spec {
        ConstraintSpec::Halfspace { a, b } => Constraint::half_space(a.clone(), *b),
        ConstraintSpec::OutsideBall { c, r } => Constraint::outside_ball(c.clone(), *r),
        ConstraintSpec::InsideBall { c, r } => Constraint::inside_ball(c.clone(), *r),
        ConstraintSpec::Annulus { c, dim, r_min, r_max } => {
            let center = match (c, dim) {
                (Some(c), Some(d)) if c.len() != *d => {
                    return Err(Error::InvalidConstraint(format!(
                        "annulus center has {} entries but dim = {d}",
                        c.len()
                    )))
                }
                (Some(c), _) => c.clone(),
                (None, d) => vec![0.0; d.unwrap_or(2)],
            };
            Constraint::annulus(center, *r_min, *r_max)
        }
        ConstraintSpec::AllOf { children } => {
            Constraint::all_of(children.iter().map(parse_constraint).collect::<Result<Vec<_>>>()?)
        }
    }
}

impl TryFrom<ConstraintSpec> for Constraint {
    type Error = Error;

    fn try_from(spec: ConstraintSpec) -> Result<Self> {
        parse_constraint(&spec)
    }
}

impl Serialize for Constraint {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spec().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Constraint {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let spec = ConstraintSpec::deserialize(d)?;
        parse_constraint(&spec).map_err(serde::de::Error::custom)
    }
}
