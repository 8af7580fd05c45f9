//! Randomized properties of the numerical building blocks.

mod common;

use fedlora::federation::{average_common, hetlora_truncate, hetlora_zero_pad, sparsity_weights};
use fedlora::metrics::MetricsRecord;
use fedlora::models::{rrr_best_fit, CommonAdapter};
use fedlora::numerics::{effective_rank, gaussian_matrix, numerical_rank, orthogonal_complement_sample, svd, RngStream};
use fedlora::synthdata::{make_client_dataset, make_ground_truth};
use fedlora::Matrix;
use proptest::prelude::*;

fn random_adapter(m: usize, n: usize, r: usize, seed: u64) -> CommonAdapter {
    let mut rng = RngStream::new(seed, 9);
    CommonAdapter::new(
        gaussian_matrix(m, r, 0.0, 1.0, &mut rng).unwrap(),
        gaussian_matrix(r, n, 0.0, 1.0, &mut rng).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_reconstructs(rows in 1usize..40, cols in 1usize..40, seed in any::<u64>()) {
        let m = gaussian_matrix(rows, cols, 0.0, 1.0, &mut RngStream::new(seed, 0)).unwrap();
        let s = svd(&m).unwrap();
        let err = s.reconstruct().sub(&m).unwrap().frobenius_norm() / m.frobenius_norm();
        prop_assert!(err < 1e-8);
        prop_assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn effective_rank_monotone_in_threshold(seed in any::<u64>(), a in 0.05f64..1.0, b in 0.05f64..1.0) {
        let m = gaussian_matrix(8, 6, 0.0, 1.0, &mut RngStream::new(seed, 0)).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let r_lo = effective_rank(&m, lo).unwrap();
        let r_hi = effective_rank(&m, hi).unwrap();
        prop_assert!(r_lo <= r_hi);
        prop_assert!(r_hi <= 6);
    }

    #[test]
    fn exact_low_rank_products(k in 1usize..6, seed in any::<u64>(), tau in 0.9f64..0.999_999) {
        // Singular values 10, 9, ..., so every one carries a real share.
        let mut rng = RngStream::new(seed, 0);
        let u = fedlora::numerics::spectral::column_space_basis(&gaussian_matrix(10, k, 0.0, 1.0, &mut rng).unwrap()).unwrap();
        let v = fedlora::numerics::spectral::column_space_basis(&gaussian_matrix(10, k, 0.0, 1.0, &mut rng).unwrap()).unwrap();
        let sigma: Vec<f64> = (0..k).map(|i| 10.0 - i as f64).collect();
        let m = u.matmul(&Matrix::diag(&sigma)).matmul_t(&v);
        prop_assert_eq!(effective_rank(&m, tau).unwrap(), k);
    }

    #[test]
    fn rank_additivity(r in 1usize..6, rt in 1usize..4, seed in any::<u64>()) {
        let g = random_adapter(10, 10, r, seed);
        let mut rng = RngStream::new(seed, 1);
        let (d, c) = orthogonal_complement_sample(&g.a, &g.b, rt, &mut rng).unwrap();
        prop_assert!(d.t_matmul(&g.b).frobenius_norm() < 1e-10);
        prop_assert!(c.matmul_t(&g.a).frobenius_norm() < 1e-10);
        let sum = g.product().add(&d.matmul(&c)).unwrap();
        prop_assert_eq!(numerical_rank(&sum).unwrap(), r + rt);
    }

    #[test]
    fn sparsity_weights_form_a_simplex(norms in prop::collection::vec(0.0f64..1e6, 1..16)) {
        let w = sparsity_weights(&norms).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn truncate_pad_truncate_is_idempotent(r in 1usize..10, keep in 1usize..10, seed in any::<u64>()) {
        let keep = keep.min(r);
        let g = random_adapter(7, 5, r, seed);
        let t = hetlora_truncate(&g, keep).unwrap();
        let padded = hetlora_zero_pad(&t, r).unwrap();
        prop_assert_eq!(padded.product(), t.product());
        prop_assert_eq!(hetlora_truncate(&padded, keep).unwrap(), t);
    }

    #[test]
    fn averaging_is_idempotent(count in 1usize..6, seed in any::<u64>()) {
        let g = random_adapter(4, 3, 2, seed);
        let copies = vec![g.clone(); count];
        prop_assert_eq!(average_common(&copies).unwrap(), g);
    }

    #[test]
    fn metrics_rows_round_trip(
        loss in any::<f64>().prop_filter("finite", |v| v.is_finite()),
        dist in prop::option::of(0.0f64..1e300),
        rank in prop::option::of(0usize..100),
    ) {
        let rec = MetricsRecord {
            round: 3, step: 40, client_id: 1,
            train_loss: loss.abs(), test_loss: loss.abs() / 3.0,
            fro_dist_sq: dist, eff_rank: rank, hypergrad_norm: dist.map(f64::sqrt), current_rank_k: rank,
        };
        let back = MetricsRecord::parse_csv_row(&rec.to_csv_row()).unwrap();
        prop_assert_eq!(back, rec);
    }

    #[test]
    fn rrr_error_non_increasing_in_rank(seed in any::<u64>(), true_rank in 1usize..6) {
        let mut rng = RngStream::new(seed, 2);
        let gt = make_ground_truth(6, 6, true_rank, &mut rng).unwrap();
        let (train, _) = make_client_dataset(&gt, 80, 0.3, 0.5, &mut rng).unwrap();
        let losses: Vec<f64> = (1..=6).map(|r| rrr_best_fit(&train, r).unwrap().loss).collect();
        prop_assert!(losses.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10) + 1e-12));
    }
}

#[test]
fn rrr_truncation_error_matches_eigenvalue_tail() {
    let mut rng = RngStream::new(4, 0);
    let gt = make_ground_truth(8, 8, 4, &mut rng).unwrap();
    let (train, _) = make_client_dataset(&gt, 200, 0.5, 0.5, &mut rng).unwrap();
    for r in 1..=8 {
        let fit = rrr_best_fit(&train, r).unwrap();
        let tail: f64 = fit.eigenvalues.iter().skip(r).sum();
        assert!((fit.truncation_error - tail.max(0.0).sqrt()).abs() < 1e-6);
    }
}
