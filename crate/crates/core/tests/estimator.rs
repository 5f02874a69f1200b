mod common;

use proptest::prelude::*;
use rand::Rng;
use streampca::estimator::*;
use streampca::linalg::{dot, norm2, norm_sq};

use common::{rel_err, rng};

fn vec_strategy(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, d).prop_filter("nonzero", |v| norm2(v) > 1e-3)
}

fn batch_strategy(d: usize) -> impl Strategy<Value = SampleBatch> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, d), 1..8)
        .prop_map(|rows| SampleBatch::from_rows(&rows).unwrap())
}

fn case() -> impl Strategy<Value = (Vec<f64>, SampleBatch)> {
    (2usize..8).prop_flat_map(|d| (vec_strategy(d), batch_strategy(d)))
}

proptest! {
    #[test]
    fn direction_is_orthogonal_to_iterate((v, batch) in case()) {
        let xi = krasulina_direction(&v, &batch).unwrap().xi;
        let scale = norm2(&xi) * norm2(&v);
        prop_assert!(dot(&xi, &v).abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE));
    }

    #[test]
    fn direction_is_homogeneous((v, batch) in case()) {
        let base = krasulina_direction(&v, &batch).unwrap().xi;
        for alpha in [0.5, 2.0, -3.0] {
            let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            let xi = krasulina_direction(&scaled, &batch).unwrap().xi;
            let n = norm2(&base).max(1e-300);
            let err: f64 = xi.iter().zip(&base).map(|(a, b)| (a - alpha * b).powi(2)).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-12 * alpha.abs() * n.max(1e-3), "alpha {alpha}: {err}");
        }
    }

    #[test]
    fn norm_recursion_in_unnormalized_mode((v, batch) in case(), gamma in 0.0f64..2.0) {
        let est = EigenEstimate::new(v.clone(), false).unwrap();
        let xi = krasulina_direction(&v, &batch).unwrap().xi;
        let next = krasulina_step(&est, &batch, gamma).unwrap();
        let lhs = norm_sq(&next.v);
        let rhs = norm_sq(&v) + gamma * gamma * norm_sq(&xi);
        prop_assert!(rel_err(lhs, rhs) <= 1e-10);
    }

    #[test]
    fn gradient_identity((v, batch) in case()) {
        let xi = krasulina_direction(&v, &batch).unwrap().xi;
        let g = gradient_f(&v, &batch).unwrap();
        let n2 = norm_sq(&v);
        let scale = norm2(&xi).max(1e-12);
        for (a, b) in xi.iter().zip(&g) {
            prop_assert!((a + n2 * b).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn gradient_matches_finite_differences((v, batch) in case()) {
        // The stated ∇f is half the true gradient of −vᵀĀv/‖v‖², so compare
        // against finite differences of −½·vᵀĀv/‖v‖².
        let f = |w: &[f64]| -0.5 * rayleigh_quotient(w, &batch).unwrap();
        let g = gradient_f(&v, &batch).unwrap();
        let h = 1e-6;
        let scale = g.iter().map(|x| x.abs()).fold(1.0, f64::max);
        for k in 0..v.len() {
            let mut up = v.clone();
            let mut dn = v.clone();
            up[k] += h;
            dn[k] -= h;
            let fd = (f(&up) - f(&dn)) / (2.0 * h);
            prop_assert!((fd - g[k]).abs() <= 1e-5 * scale, "k={k}: fd {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn potential_symmetries(v in vec_strategy(4), q in vec_strategy(4), alpha in 0.1f64..10.0) {
        let n = norm2(&q);
        let q: Vec<f64> = q.iter().map(|x| x / n).collect();
        let psi = potential(&v, &q).unwrap();
        prop_assert!((0.0..=1.0).contains(&psi));
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let sc: Vec<f64> = v.iter().map(|x| alpha * x).collect();
        prop_assert!((potential(&neg, &q).unwrap() - psi).abs() <= 1e-12);
        prop_assert!((potential(&sc, &q).unwrap() - psi).abs() <= 1e-12);
    }

    #[test]
    fn batch_direction_is_mean_of_single_directions((v, batch) in case()) {
        let whole = krasulina_direction(&v, &batch).unwrap().xi;
        let mut mean = vec![0.0; v.len()];
        for row in batch.rows() {
            let one = SampleBatch::from_rows(&[row]).unwrap();
            let xi = krasulina_direction(&v, &one).unwrap().xi;
            for (m, x) in mean.iter_mut().zip(&xi) {
                *m += x / batch.len() as f64;
            }
        }
        let scale = mean.iter().map(|x| x.abs()).fold(1.0, f64::max);
        for (a, b) in whole.iter().zip(&mean) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn oja_direction_differs_only_by_norm_scaling((v, batch) in case()) {
        // Oja: Āv − (vᵀĀv)v; Krasulina: Āv − (vᵀĀv/‖v‖²)v. Equal on the unit sphere.
        let n = norm2(&v);
        let u: Vec<f64> = v.iter().map(|x| x / n).collect();
        let k = krasulina_direction(&u, &batch).unwrap().xi;
        let o = oja_direction(&u, &batch).unwrap().xi;
        for (a, b) in k.iter().zip(&o) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}

#[test]
fn renormalization_does_not_change_the_potential_trajectory() {
    let mut r = rng(11);
    let d = 6;
    let q: Vec<f64> = {
        let mut q = vec![0.0; d];
        q[0] = 1.0;
        q
    };
    let v0 = random_unit_init(d, &mut r).unwrap().v;
    let mut a = EigenEstimate::new(v0.clone(), true).unwrap();
    let mut b = EigenEstimate::new(v0, false).unwrap();
    for t in 1..=1000u64 {
        let x: Vec<f64> = (0..d)
            .map(|k| r.random_range(-1.0..1.0) * if k == 0 { 2.0 } else { 1.0 })
            .collect();
        let batch = SampleBatch::from_rows(&[x]).unwrap();
        let gamma = 1.0 / (10.0 + t as f64);
        a = krasulina_step(&a, &batch, gamma).unwrap();
        // ξ is 1-homogeneous, so the unnormalized iterate stays on the same ray.
        b = krasulina_step(&b, &batch, gamma).unwrap();
        let pa = potential(&a.v, &q).unwrap();
        let pb = potential(&b.v, &q).unwrap();
        assert!((pa - pb).abs() <= 1e-9, "t={t}: {pa} vs {pb}");
        assert!((norm2(&a.v) - 1.0).abs() <= 1e-12);
    }
}

#[test]
fn potential_recursion_inequality_on_bounded_steps() {
    let mut r = rng(2024);
    let d = 5;
    let radius = 1.5;
    let mut q = vec![0.0; d];
    q[1] = 1.0;
    let mut est = random_unit_init(d, &mut r).unwrap().unnormalized();
    for t in 1..=10_000u64 {
        let mut x: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        x[1] *= 1.6;
        let n = norm2(&x);
        if n > radius {
            x.iter_mut().for_each(|xi| *xi *= radius / n);
        }
        let batch = SampleBatch::from_rows(&[x]).unwrap();
        let gamma = 0.5 / (t as f64).sqrt();
        let xi = krasulina_direction(&est.v, &batch).unwrap();
        let z = z_statistic(&est.v, &xi, gamma, &q).unwrap();
        let before = potential(&est.v, &q).unwrap();
        let next = krasulina_step(&est, &batch, gamma).unwrap();
        let after = potential(&next.v, &q).unwrap();
        let rhs = before + gamma * gamma * radius.powi(4) - z;
        assert!(after <= rhs + 1e-12, "t={t}: {after} > {rhs}");
        est = EigenEstimate::new(next.v, false).unwrap();
        let n = norm2(&est.v);
        est.v.iter_mut().for_each(|x| *x /= n);
    }
}

#[test]
fn z_statistic_examples() {
    let q = [1.0, 0.0, 0.0];
    let batch = SampleBatch::from_rows(&[[0.3, 0.4, -1.0]]).unwrap();
    let v = [0.2, 0.5, 0.1];
    let xi = krasulina_direction(&v, &batch).unwrap();
    assert_eq!(z_statistic(&v, &xi, 0.0, &q).unwrap(), 0.0);
    let xi_q = krasulina_direction(&q, &batch).unwrap();
    assert!(z_statistic(&q, &xi_q, 0.7, &q).unwrap().abs() < 1e-15);
}

#[test]
fn degenerate_inputs_are_errors() {
    let batch = SampleBatch::from_rows(&[[1.0, 0.0]]).unwrap();
    assert!(matches!(
        krasulina_direction(&[0.0, 0.0], &batch),
        Err(streampca::Error::DegenerateIterate)
    ));
    assert!(matches!(
        random_unit_init(1, &mut rng(0)),
        Err(streampca::Error::InvalidDimension(1))
    ));
    let wide = SampleBatch::from_rows(&[[1.0, 0.0, 0.0]]).unwrap();
    assert!(matches!(
        krasulina_direction(&[1.0, 0.0], &wide),
        Err(streampca::Error::DimensionMismatch { .. })
    ));
    assert!(DataVector::new(vec![1.0, f64::NAN]).is_err());
    assert!(SampleBatch::from_rows::<[f64; 2]>(&[]).is_err());
}
