mod common;

use hinge::encoder::node_attention;
use hinge::hypergraph::{adjacency_of, augment};
use hinge::numkern::{softmax_rows, RowMask};
use hinge::objectives::{contrastive_loss, kl_loss, soft_assignment, target_distribution, ContrastiveSpec};
use hinge::DenseMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::*;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn covered(h: &hinge::Hypergraph) -> Vec<bool> {
    let mut seen = vec![false; h.num_nodes()];
    for e in h.hyperedges() {
        for &v in e {
            seen[v] = true;
        }
    }
    seen
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_rows_are_stochastic_and_shift_invariant(seed: u64, rows in 1usize..6, cols in 1usize..8, shift in -50.0f64..50.0) {
        let x = random_matrix(&mut rng(seed), rows, cols, 10.0);
        let s = softmax_rows(&x, &RowMask::Full).unwrap();
        for r in 0..rows {
            let total: f64 = s.row(r).iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(s.row(r).iter().all(|&v| v >= 0.0));
        }
        let shifted = softmax_rows(&x.map(|v| v + shift), &RowMask::Full).unwrap();
        prop_assert!(s.max_abs_diff(&shifted) < 1e-12);
    }

    #[test]
    fn adjacency_is_symmetric_psd(seed: u64, unit: bool) {
        let h = random_hypergraph(&mut rng(seed), 12, 10, unit);
        let m = adjacency_of(&h).unwrap().to_dense();
        prop_assert!(m.max_abs_diff(&m.transpose()) < 1e-12);
        prop_assert!(eigenvalues(&m)[0] >= -1e-9);
    }

    #[test]
    fn augment_never_uncovers_a_node(seed: u64, aug_seed: u64, mask in 0.0f64..=0.5, drop in 0.0f64..=0.5) {
        let mut r = rng(seed);
        let h = random_hypergraph(&mut r, 15, 12, false);
        let x = random_matrix(&mut r, h.num_nodes(), 3, 1.0);
        let (h2, x2) = augment(&h, &x, mask, drop, aug_seed).unwrap();
        prop_assert_eq!(x2.shape(), x.shape());
        for (before, after) in covered(&h).into_iter().zip(covered(&h2)) {
            prop_assert!(!before || after);
        }
    }

    #[test]
    fn augment_at_zero_rates_is_identity(seed: u64, aug_seed: u64) {
        let mut r = rng(seed);
        let h = random_hypergraph(&mut r, 15, 12, false);
        let x = random_matrix(&mut r, h.num_nodes(), 3, 1.0);
        let (h2, x2) = augment(&h, &x, 0.0, 0.0, aug_seed).unwrap();
        prop_assert_eq!(h2.hyperedges(), h.hyperedges());
        prop_assert_eq!(h2.weights(), h.weights());
        prop_assert_eq!(x2, x);
    }

    #[test]
    fn contrastive_loss_ignores_row_scale(seed: u64, n in 2usize..8, d in 1usize..5, tau in 0.1f64..2.0) {
        let mut r = rng(seed);
        let a = random_matrix(&mut r, n, d, 1.0);
        let b = random_matrix(&mut r, n, d, 1.0);
        let scales: Vec<f64> = (0..n).map(|_| r.random_range(0.1..10.0)).collect();
        let scaled = DenseMatrix::from_fn(n, d, |i, j| a[(i, j)] * scales[i]);
        let spec = ContrastiveSpec::self_positives(n, tau);
        let (l1, l2) = (contrastive_loss(&a, &b, &spec).unwrap(), contrastive_loss(&scaled, &b, &spec).unwrap());
        prop_assert!((l1 - l2).abs() < 1e-10, "{} vs {}", l1, l2);
    }

    #[test]
    fn assignments_are_row_stochastic(seed: u64, n in 1usize..10, k in 1usize..5, d in 1usize..4) {
        let mut r = rng(seed);
        let z = random_matrix(&mut r, n, d, 3.0);
        let c = random_matrix(&mut r, k, d, 3.0);
        let q = soft_assignment(&z, &c).unwrap();
        let p = target_distribution(&q).unwrap();
        for m in [&q, &p] {
            for i in 0..n {
                let total: f64 = m.row(i).iter().sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
        prop_assert!(kl_loss(&p, &q).unwrap() >= 0.0);
    }

    #[test]
    fn kl_is_nonnegative(seed: u64, n in 1usize..8, k in 1usize..5) {
        let mut r = rng(seed);
        let p = random_stochastic(&mut r, n, k);
        let q = random_stochastic(&mut r, n, k);
        prop_assert!(kl_loss(&p, &q).unwrap() >= 0.0);
        prop_assert!(kl_loss(&q, &q).unwrap().abs() < 1e-15);
    }

    #[test]
    fn attention_is_permutation_equivariant(seed: u64, anchors in 1usize..6, pool in 1usize..8, d in 1usize..4) {
        let mut r = rng(seed);
        let h = random_matrix(&mut r, anchors, d, 1.0);
        let f = random_matrix(&mut r, pool, d, 1.0);
        let a = random_matrix(&mut r, 1, 2 * d, 1.0);
        let neighbors: Vec<Vec<usize>> = (0..anchors)
            .map(|_| {
                let mut ids: Vec<usize> = (0..pool).collect();
                ids.shuffle(&mut r);
                ids.truncate(r.random_range(1..=pool));
                ids
            })
            .collect();
        let base = node_attention(&h, &f, &neighbors, &a).unwrap().features;

        // Reordering a neighbor list changes nothing.
        let mut reordered = neighbors.clone();
        reordered.iter_mut().for_each(|ids| ids.shuffle(&mut r));
        let out = node_attention(&h, &f, &reordered, &a).unwrap().features;
        prop_assert!(base.max_abs_diff(&out) < 1e-12);

        // Permuting anchors permutes output rows.
        let mut perm: Vec<usize> = (0..anchors).collect();
        perm.shuffle(&mut r);
        let hp = h.select_rows(&perm);
        let np: Vec<Vec<usize>> = perm.iter().map(|&i| neighbors[i].clone()).collect();
        let out = node_attention(&hp, &f, &np, &a).unwrap().features;
        prop_assert!(base.select_rows(&perm).max_abs_diff(&out) < 1e-12);
    }
}
