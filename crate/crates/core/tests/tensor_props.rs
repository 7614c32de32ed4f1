use naglab::tensor::{chain_product, kron, matmul, singular_extremes, spectral_norm, unvec, vec, Matrix, POWER_ITER_TOL};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Matrix::from_col_major(rows, cols, d).unwrap())
}

fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
    a.try_sub(b).unwrap().max_abs() <= tol * (1.0 + b.max_abs())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vec_of_product_is_kron_times_vec(
        (a, x, b) in (1usize..5, 1usize..5, 1usize..5, 1usize..5)
            .prop_flat_map(|(p, q, r, s)| (matrix(p, q), matrix(q, r), matrix(r, s)))
    ) {
        // vec(A X B) = (Bᵀ ⊗ A) vec(X)
        let lhs = vec(&matmul(&matmul(&a, &x).unwrap(), &b).unwrap());
        let rhs = kron(&b.transpose(), &a).matvec(vec(&x).as_slice()).unwrap();
        let lhs_m = unvec(&lhs, lhs.len(), 1).unwrap();
        let rhs_m = Matrix::from_col_major(rhs.len(), 1, rhs).unwrap();
        prop_assert!(close(&lhs_m, &rhs_m, 1e-12));
    }

    #[test]
    fn chain_product_splits_anywhere(
        ws in (1usize..4, 2usize..5).prop_flat_map(|(d, depth)| prop::collection::vec(matrix(d, d), depth)),
        cut in 0usize..10,
    ) {
        let depth = ws.len();
        let k = 1 + cut % (depth - 1);
        let whole = chain_product(&ws, 1, depth).unwrap();
        let split = matmul(&chain_product(&ws, k + 1, depth).unwrap(), &chain_product(&ws, 1, k).unwrap()).unwrap();
        prop_assert!(close(&whole, &split, 1e-12));
    }

    #[test]
    fn spectral_norm_bounded_by_frobenius(a in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))) {
        let s = spectral_norm(&a, POWER_ITER_TOL).unwrap();
        let f = a.frobenius_norm();
        prop_assert!(s <= f * (1.0 + 1e-12));
        prop_assert!(f <= s * (a.rows().min(a.cols()) as f64).sqrt() * (1.0 + 1e-12) + 1e-300);
    }

    #[test]
    fn kron_top_singular_value_multiplies(
        (a, b) in (1usize..4, 1usize..4, 1usize..4, 1usize..4).prop_flat_map(|(p, q, r, s)| (matrix(p, q), matrix(r, s)))
    ) {
        let (sa, _) = singular_extremes(&a).unwrap();
        let (sb, _) = singular_extremes(&b).unwrap();
        let (sk, _) = singular_extremes(&kron(&a, &b)).unwrap();
        prop_assert!((sk - sa * sb).abs() <= 1e-10 * (1.0 + sa * sb));
    }
}

#[test]
fn power_iteration_agrees_with_dense_svd_on_large_input() {
    let mut g = naglab::rng::GaussianStream::new(9, naglab::rng::Stream::Probe);
    let a = g.matrix(90, 80, 1.0);
    let (dense, _) = singular_extremes(&a).unwrap();
    let power = spectral_norm(&a, 1e-12).unwrap();
    assert!((dense - power).abs() <= 1e-8 * dense, "{dense} vs {power}");
}
