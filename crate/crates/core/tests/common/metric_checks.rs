//! Metrics against straightforward loop implementations.

use constrained_flow::metrics::{avg_violation, mmd, mmd_squared, violation_rate};
use constrained_flow::{builtin_case_study, Constraint};
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn cloud(n: usize, d: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((n, d), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        scale * z
    })
}

fn oracle_rate(xs: &Array2<f64>, c: &Constraint) -> f64 {
    let mut bad = 0usize;
    for i in 0..xs.nrows() {
        if c.evaluate(&xs.row(i).to_vec()).unwrap().value() > 0.0 {
            bad += 1;
        }
    }
    100.0 * bad as f64 / xs.nrows() as f64
}

fn oracle_avg(xs: &Array2<f64>, c: &Constraint) -> f64 {
    let mut sum = 0.0;
    for i in 0..xs.nrows() {
        sum += c.evaluate(&xs.row(i).to_vec()).unwrap().value();
    }
    sum / xs.nrows() as f64
}

/// Quadruple loop over all pairs, no symmetry tricks.
fn oracle_mmd_squared(a: &Array2<f64>, b: &Array2<f64>, sigma: f64) -> f64 {
    let k = |x: ndarray::ArrayView1<f64>, y: ndarray::ArrayView1<f64>| {
        let mut d2 = 0.0;
        for i in 0..x.len() {
            d2 += (x[i] - y[i]) * (x[i] - y[i]);
        }
        (-d2 / (2.0 * sigma * sigma)).exp()
    };
    let mean = |p: &Array2<f64>, q: &Array2<f64>| {
        let mut s = 0.0;
        for x in p.rows() {
            for y in q.rows() {
                s += k(x, y);
            }
        }
        s / (p.nrows() * q.nrows()) as f64
    };
    mean(a, a) + mean(b, b) - 2.0 * mean(a, b)
}

pub fn rate_and_average_equal_loop_oracles_exactly() {
    for id in 1..=3 {
        let c = builtin_case_study(id, None).unwrap().constraint;
        for seed in 0..5 {
            let xs = cloud(2000, 2, 2.0, seed);
            assert_eq!(violation_rate(xs.view(), &c).unwrap(), oracle_rate(&xs, &c));
            assert_eq!(avg_violation(xs.view(), &c).unwrap(), oracle_avg(&xs, &c));
        }
    }
    let c4 = builtin_case_study(4, Some(25)).unwrap().constraint;
    let xs = cloud(500, 25, 1.0, 9);
    assert_eq!(violation_rate(xs.view(), &c4).unwrap(), oracle_rate(&xs, &c4));
    assert_eq!(avg_violation(xs.view(), &c4).unwrap(), oracle_avg(&xs, &c4));
}

pub fn mmd_of_a_set_with_itself_vanishes() {
    for seed in 0..3 {
        let xs = cloud(400, 2, 1.5, seed);
        assert!(mmd(xs.view(), xs.view(), 1.0).unwrap() <= 1e-12);
    }
}

pub fn singleton_mmd_matches_closed_form() {
    let cases = [
        (array![[0.0, 0.0]], array![[1.0, 0.0]]),
        (array![[0.3, -0.7]], array![[1.1, 0.4]]),
        (array![[-2.0, 5.0]], array![[-2.0, 5.5]]),
    ];
    for (x, y) in cases {
        let d2: f64 = (&x - &y).iter().map(|v| v * v).sum();
        let closed = (2.0 - 2.0 * (-d2 / 2.0).exp()).sqrt();
        assert!((mmd(x.view(), y.view(), 1.0).unwrap() - closed).abs() <= 1e-12);
    }
}

pub fn mmd_matches_pairwise_oracle() {
    let a = cloud(120, 3, 1.0, 1);
    let b = cloud(80, 3, 1.3, 2);
    for sigma in [0.5, 1.0, 2.0] {
        let fast = mmd_squared(a.view(), b.view(), sigma).unwrap();
        let slow = oracle_mmd_squared(&a, &b, sigma);
        assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}");
    }
}

pub fn mmd_grows_with_shift() {
    let a = cloud(300, 2, 1.0, 3);
    let mut last = 0.0;
    for shift in [0.25, 0.5, 1.0, 2.0] {
        let b = cloud(300, 2, 1.0, 4) + shift;
        let m = mmd(a.view(), b.view(), 1.0).unwrap();
        assert!(m > last);
        last = m;
    }
}
