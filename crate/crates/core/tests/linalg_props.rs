mod common;

use lrednn::linalg::{
    lstsq_residual, norm2, solve_regularized_normal, svd, truncated_svd, DenseMatrix,
};
use proptest::prelude::*;

use common::seeded_matrix;

fn orthonormality_defect(q: &DenseMatrix) -> f64 {
    let g = q.tr_matmul(q);
    g.sub(&DenseMatrix::identity(g.rows())).max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn svd_reconstructs_with_orthonormal_factors(rows in 1usize..=30, cols in 1usize..=30, seed in any::<u64>()) {
        let a = seeded_matrix(rows, cols, seed);
        let s = svd(&a).unwrap();
        prop_assert_eq!(s.rank(), rows.min(cols));
        let err = s.reconstruct().sub(&a).frobenius_norm() / a.frobenius_norm();
        prop_assert!(err <= 1e-10, "reconstruction {:.3e}", err);
        prop_assert!(orthonormality_defect(&s.u) <= 1e-10);
        prop_assert!(orthonormality_defect(&s.v) <= 1e-10);
        prop_assert!(s.s.windows(2).all(|w| w[0] >= w[1]) && s.s.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn truncation_error_is_the_singular_value_tail(rows in 1usize..=20, cols in 1usize..=20, seed in any::<u64>()) {
        let a = seeded_matrix(rows, cols, seed);
        let full = svd(&a).unwrap();
        for r in 1..=full.rank() {
            let (t, eff) = truncated_svd(&a, r).unwrap();
            prop_assert_eq!(eff, r);
            let err2 = t.reconstruct().sub(&a).frobenius_norm().powi(2);
            let tail: f64 = full.s[r..].iter().map(|s| s * s).sum();
            let scale = full.s[0] * full.s[0];
            prop_assert!((err2 - tail).abs() <= 1e-8 * tail.max(1e-6 * scale), "r={} {} vs {}", r, err2, tail);
        }
    }

    #[test]
    fn regularized_solve_has_small_residual(k in 1usize..=25, seed in any::<u64>(), lambda in 0.0f64..2.0) {
        let a = seeded_matrix(k + 5, k, seed);
        let g = a.gram();
        let b = seeded_matrix(1, k, seed ^ 1).into_vec();
        let x = solve_regularized_normal(&g, &b, lambda).unwrap();
        let mut r = g.matvec(&x);
        for i in 0..k {
            r[i] += lambda * x[i] - b[i];
        }
        let bound = 1e-8 * (g.frobenius_norm() + lambda) * norm2(&x);
        prop_assert!(r.iter().all(|v| v.abs() <= bound), "{:?} > {}", r, bound);
    }

    #[test]
    fn householder_residual_matches_normal_equations(rows in 6usize..=40, cols in 1usize..=5, seed in any::<u64>()) {
        let a = seeded_matrix(rows, cols, seed);
        let b = seeded_matrix(1, rows, seed ^ 7).into_vec();
        let x = solve_regularized_normal(&a.gram(), &a.tr_matvec(&b), 0.0).unwrap();
        let r: Vec<f64> = a.matvec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        let (qr, _) = lstsq_residual(&a, &b, 1e-12).unwrap();
        prop_assert!((norm2(&r) - qr).abs() <= 1e-10 * norm2(&b));
    }
}

#[test]
fn truncated_svd_reports_clamped_rank() {
    let a = seeded_matrix(5, 4, 9);
    let (t, eff) = truncated_svd(&a, 10).unwrap();
    assert_eq!(eff, 4);
    assert_eq!(t.s, svd(&a).unwrap().s);
}
