use bsl_linalg::ordering::{invert, nested_dissection, Graph};
use bsl_linalg::{symmetric_eigenvalues, CsrMatrix, DenseMatrix, LdlFactor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sparse symmetric matrix with diagonal entries of random sign, made
/// diagonally dominant so it is nonsingular but generally indefinite.
fn random_sparse(n: usize, seed: u64) -> CsrMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trips = Vec::new();
    let mut row_sum = vec![0.0; n];
    for i in 0..n {
        for _ in 0..3 {
            let j = rng.gen_range(0..n);
            if j == i {
                continue;
            }
            let v: f64 = rng.gen_range(-1.0..1.0);
            trips.push((i, j, v));
            trips.push((j, i, v));
            row_sum[i] += v.abs();
            row_sum[j] += v.abs();
        }
    }
    for (i, s) in row_sum.iter().enumerate() {
        let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        trips.push((i, i, sign * (s + rng.gen_range(0.5..2.0))));
    }
    CsrMatrix::from_triplets(n, &trips).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ldl_solve_has_small_residual(n in 2usize..60, seed in any::<u64>()) {
        let a = random_sparse(n, seed);
        let b: Vec<f64> = (0..n).map(|i| ((i * 7 + 3) % 11) as f64 - 5.0).collect();
        let x = LdlFactor::new(&a).unwrap().solve(&b).unwrap();
        let r: f64 = a.mul_vec(&x).unwrap().iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(r <= 1e-10 * nb.max(1.0), "residual {r}");
    }

    #[test]
    fn inertia_counts_negative_eigenvalues(n in 2usize..40, seed in any::<u64>()) {
        let a = random_sparse(n, seed);
        let dense = DenseMatrix::from_row_major(n, a.to_dense()).unwrap();
        let negative = symmetric_eigenvalues(&dense).unwrap().iter().filter(|&&l| l < 0.0).count();
        let inertia = LdlFactor::new(&a).unwrap().inertia();
        prop_assert_eq!(inertia.negative, negative);
        prop_assert_eq!(inertia.negative + inertia.zero + inertia.positive, n);
    }

    #[test]
    fn nested_dissection_is_a_permutation(n in 1usize..80, seed in any::<u64>()) {
        let a = random_sparse(n, seed);
        let p = nested_dissection(&Graph::from_csr(&a));
        let mut sorted = p.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(invert(&invert(&p)), p);
    }

    #[test]
    fn matvec_matches_dense_product(n in 1usize..40, seed in any::<u64>()) {
        let a = random_sparse(n, seed);
        prop_assert!(a.is_symmetric());
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = a.mul_vec(&x).unwrap();
        let d = a.to_dense();
        for i in 0..n {
            let yi: f64 = (0..n).map(|j| d[i * n + j] * x[j]).sum();
            prop_assert!((yi - y[i]).abs() <= 1e-12 * (1.0 + yi.abs()));
        }
    }
}
