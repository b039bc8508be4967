//! Violation rate, average violation and Gaussian-kernel MMD.

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constraint::{Constraint, ConstraintSpec};
use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub violation_rate_pct: f64,
    pub avg_violation: f64,
    /// Root of the biased squared-MMD estimate.
    pub mmd: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl MetricsReport {
    /// MMD in the table's `×10⁻³` units.
    pub fn mmd_e3(&self) -> f64 {
        self.mmd * 1e3
    }
}

fn violations(samples: ArrayView2<f64>, c: &Constraint) -> Result<Vec<f64>> {
    if samples.nrows() == 0 {
        return Err(Error::Empty("violation metrics"));
    }
    check_dim(c.dim(), samples.ncols())?;
    Ok(samples.rows().into_iter().map(|r| c.violation(&r.to_vec())).collect())
}

/// Percentage of samples with strictly positive violation.
pub fn violation_rate(samples: ArrayView2<f64>, c: &Constraint) -> Result<f64> {
    let v = violations(samples, c)?;
    let bad = v.iter().filter(|&&x| x > 0.0).count();
    Ok(100.0 * bad as f64 / v.len() as f64)
}

/// Mean violation over all samples (feasible ones contribute zero).
pub fn avg_violation(samples: ArrayView2<f64>, c: &Constraint) -> Result<f64> {
    let v = violations(samples, c)?;
    Ok(v.iter().sum::<f64>() / v.len() as f64)
}

/// Sum of `k(aᵢ, bⱼ)` over all pairs, symmetric in its arguments bit for bit:
/// the row-major and column-major partial sums are formed in one pass and
/// averaged, and swapping the arguments swaps the two.
fn kernel_sum(a: ArrayView2<f64>, b: ArrayView2<f64>, gamma: f64) -> f64 {
    let mut rows = vec![0.0; a.nrows()];
    let mut cols = vec![0.0; b.nrows()];
    for (i, x) in a.rows().into_iter().enumerate() {
        let x = x.as_slice().expect("standard layout");
        for (j, y) in b.rows().into_iter().enumerate() {
            let y = y.as_slice().expect("standard layout");
            let d2: f64 = x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum();
            let k = (-gamma * d2).exp();
            rows[i] += k;
            cols[j] += k;
        }
    }
    (rows.iter().sum::<f64>() + cols.iter().sum::<f64>()) / 2.0
}

/// Biased (V-statistic) estimate of squared MMD with
/// `k(x, y) = exp(−‖x − y‖² / (2σ²))`. May be a tiny negative number from
/// rounding.
pub fn mmd_squared(a: ArrayView2<f64>, b: ArrayView2<f64>, sigma: f64) -> Result<f64> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Empty("mmd"));
    }
    check_dim(a.ncols(), b.ncols())?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "kernel bandwidth must be > 0, got {sigma}"
        )));
    }
    let (a, b) = (a.as_standard_layout(), b.as_standard_layout());
    let gamma = 1.0 / (2.0 * sigma * sigma);
    let (n, m) = (a.nrows() as f64, b.nrows() as f64);
    let kaa = kernel_sum(a.view(), a.view(), gamma) / (n * n);
    let kbb = kernel_sum(b.view(), b.view(), gamma) / (m * m);
    let kab = kernel_sum(a.view(), b.view(), gamma) / (n * m);
    Ok((kaa + kbb) - 2.0 * kab)
}

/// Square root of the (clamped) biased squared-MMD estimate.
pub fn mmd(a: ArrayView2<f64>, b: ArrayView2<f64>, sigma: f64) -> Result<f64> {
    Ok(mmd_squared(a, b, sigma)?.max(0.0).sqrt())
}

pub fn report(
    samples: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    c: &Constraint,
    sigma: f64,
    seed: u64,
) -> Result<MetricsReport> {
    Ok(MetricsReport {
        violation_rate_pct: violation_rate(samples, c)?,
        avg_violation: avg_violation(samples, c)?,
        mmd: mmd(samples, reference, sigma)?,
        n_samples: samples.nrows(),
        seed,
    })
}

/// MMD of a clean feasible set and of its contaminated copy against the same
/// feasible reference.
pub fn support_mismatch_probe(
    feasible: ArrayView2<f64>,
    contaminated: ArrayView2<f64>,
    reference: ArrayView2<f64>,
    c: &Constraint,
    sigma: f64,
) -> Result<(f64, f64)> {
    if violation_rate(reference, c)? > 0.0 {
        return Err(Error::Precondition(
            "support mismatch probe needs an entirely feasible reference".into(),
        ));
    }
    Ok((mmd(feasible, reference, sigma)?, mmd(contaminated, reference, sigma)?))
}

/// Moves a random `fraction` of the rows across a half-space boundary by
/// reflection, pushing any reflected point whose depth is below `min_depth`
/// further out so that every moved point sits at least `min_depth` inside
/// the infeasible side.
pub fn contaminate_half_space(
    samples: ArrayView2<f64>,
    c: &Constraint,
    fraction: f64,
    min_depth: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    check_dim(c.dim(), samples.ncols())?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let ConstraintSpec::Halfspace { a, b } = c.to_spec() else {
        return Err(Error::Precondition(
            "reflection contamination needs a half-space constraint".into(),
        ));
    };
    let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let unit: Vec<f64> = a.iter().map(|v| v / norm).collect();
    let mut out = samples.to_owned();
    let mut idx: Vec<usize> = (0..out.nrows()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let k = (fraction * out.nrows() as f64).round() as usize;
    for &i in &idx[..k] {
        let mut row = out.row_mut(i);
        // signed distance above the boundary
        let s = (row.iter().zip(&unit).map(|(x, u)| x * u).sum::<f64>() - b / norm).max(0.0);
        let depth = s.max(min_depth);
        for (x, u) in row.iter_mut().zip(&unit) {
            *x -= (s + depth) * u;
        }
    }
    Ok(out)
}

/// Replaces a random `fraction` of the rows by infeasible points whose
/// violation is at least `min_depth`. Half-spaces use
/// [`contaminate_half_space`]; other constraints jitter the row with a
/// Gaussian of growing scale until the proposal is deep enough.
pub fn contaminate(
    samples: ArrayView2<f64>,
    c: &Constraint,
    fraction: f64,
    min_depth: f64,
    seed: u64,
) -> Result<Array2<f64>> {
    if matches!(c.to_spec(), ConstraintSpec::Halfspace { .. }) {
        return contaminate_half_space(samples, c, fraction, min_depth, seed);
    }
    check_dim(c.dim(), samples.ncols())?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidConfig(format!(
            "fraction must lie in [0, 1], got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = samples.to_owned();
    let mut idx: Vec<usize> = (0..out.nrows()).collect();
    idx.shuffle(&mut rng);
    let k = (fraction * out.nrows() as f64).round() as usize;
    let mut proposal = vec![0.0; c.dim()];
    for &i in &idx[..k] {
        let row = out.row(i).to_vec();
        let mut scale = 0.5;
        let mut found = false;
        for attempt in 0..10_000 {
            if attempt > 0 && attempt % 100 == 0 {
                scale *= 2.0;
            }
            for (p, x) in proposal.iter_mut().zip(&row) {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                *p = x + scale * z;
            }
            if c.violation(&proposal) >= min_depth {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::Precondition(format!(
                "no point with violation >= {min_depth} found near row {i}"
            )));
        }
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&proposal));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cs1() -> Constraint {
        Constraint::half_space(vec![1.0, 1.0], 0.0).unwrap()
    }

    #[test]
    fn rate_and_average_examples() {
        let feasible = Array2::from_elem((10, 2), 1.0);
        assert_eq!(violation_rate(feasible.view(), &cs1()).unwrap(), 0.0);
        assert_eq!(avg_violation(feasible.view(), &cs1()).unwrap(), 0.0);

        let mut xs = Array2::from_elem((2000, 2), 1.0);
        xs.row_mut(17).fill(-0.5);
        assert!((violation_rate(xs.view(), &cs1()).unwrap() - 0.05).abs() < 1e-12);

        let two = array![[1.0, 1.0], [-0.005, -0.005]];
        assert!((avg_violation(two.view(), &cs1()).unwrap() - 0.005).abs() < 1e-15);
    }

    #[test]
    fn empty_inputs_are_errors() {
        let empty = Array2::<f64>::zeros((0, 2));
        assert!(violation_rate(empty.view(), &cs1()).is_err());
        assert!(avg_violation(empty.view(), &cs1()).is_err());
        assert!(mmd(empty.view(), array![[0.0, 0.0]].view(), 1.0).is_err());
    }

    #[test]
    fn mmd_identities() {
        let a = array![[0.0, 0.0], [1.0, 2.0], [-0.5, 0.3]];
        let b = array![[0.2, 0.1], [3.0, -1.0]];
        assert!(mmd(a.view(), a.view(), 1.0).unwrap() <= 1e-12);
        assert_eq!(
            mmd_squared(a.view(), b.view(), 1.0).unwrap(),
            mmd_squared(b.view(), a.view(), 1.0).unwrap()
        );
        let x = array![[0.3, -0.7]];
        let y = array![[1.1, 0.4]];
        let d2: f64 = 0.8f64.powi(2) + 1.1f64.powi(2);
        let expected = 2.0 - 2.0 * (-d2 / 2.0).exp();
        assert!((mmd_squared(x.view(), y.view(), 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn contamination_moves_requested_fraction() {
        let xs = Array2::from_shape_fn((100, 2), |(i, k)| 0.1 + (i + k) as f64 * 0.01);
        let moved = contaminate_half_space(xs.view(), &cs1(), 0.25, 0.5, 1).unwrap();
        let rate = violation_rate(moved.view(), &cs1()).unwrap();
        assert_eq!(rate, 25.0);
        for row in moved.rows() {
            let v = cs1().violation(&row.to_vec());
            assert!(v == 0.0 || v / 2f64.sqrt() >= 0.5 - 1e-12);
        }
        let same = contaminate_half_space(xs.view(), &cs1(), 0.0, 0.5, 1).unwrap();
        assert_eq!(same, xs);
        let ring = Constraint::annulus(vec![0.0, 0.0], 1.0, 2.0).unwrap();
        assert!(contaminate_half_space(xs.view(), &ring, 0.1, 0.5, 1).is_err());
    }

    #[test]
    fn general_contamination_reaches_depth() {
        let ring = Constraint::annulus(vec![0.0, 0.0], 1.0, 2.0).unwrap();
        let xs = Array2::from_shape_fn((40, 2), |(i, k)| {
            let a = i as f64 * 0.3;
            if k == 0 {
                1.5 * a.cos()
            } else {
                1.5 * a.sin()
            }
        });
        let moved = contaminate(xs.view(), &ring, 0.5, 0.2, 3).unwrap();
        let deep = moved
            .rows()
            .into_iter()
            .filter(|r| ring.violation(&r.to_vec()) >= 0.2)
            .count();
        assert_eq!(deep, 20);
        assert_eq!(violation_rate(moved.view(), &ring).unwrap(), 50.0);
    }

    #[test]
    fn probe_rejects_infeasible_reference() {
        let a = array![[1.0, 1.0]];
        let bad = array![[-1.0, -1.0]];
        assert!(support_mismatch_probe(a.view(), a.view(), bad.view(), &cs1(), 1.0).is_err());
        let (clean, dirty) = support_mismatch_probe(a.view(), a.view(), a.view(), &cs1(), 1.0).unwrap();
        assert_eq!(clean, dirty);
    }
}
