// SPDX-License-Identifier: MIT OR Apache-2.0

mod common;

use headlens_core::attention::scaled_logits;
use headlens_core::rng::Xoshiro256StarStar;
use headlens_core::{compute_attention_map, softmax_rows, KeyMatrix, Matrix, QueryMatrix};
use proptest::prelude::*;

use common::random_matrix;

fn qk(seed: u64, r: usize, s: usize, d: usize, scale: f64) -> (QueryMatrix, KeyMatrix) {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let q = QueryMatrix::new(0, 0, r, random_matrix(&mut rng, r * r, d, scale)).unwrap();
    let k = KeyMatrix::new(random_matrix(&mut rng, s, d, scale)).unwrap();
    (q, k)
}

proptest! {
    #[test]
    fn rows_are_stochastic(seed: u64, r in 1usize..=8, s in 1usize..=16, d in 1usize..=16, scale in 0.0f64..20.0) {
        let (q, k) = qk(seed, r, s, d, scale);
        let m = compute_attention_map(&q, &k).unwrap();
        for i in 0..r * r {
            let row = m.values().row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn softmax_shift_invariant(seed: u64, rows in 1usize..6, cols in 1usize..12, c in -500.0f64..500.0) {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        let m = random_matrix(&mut rng, rows, cols, 3.0);
        let shifted = Matrix::new(rows, cols, m.as_slice().iter().map(|v| v + c).collect()).unwrap();
        let (a, b) = (softmax_rows(&m).unwrap(), softmax_rows(&shifted).unwrap());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn map_is_softmax_of_scaled_logits(seed: u64, r in 1usize..=6, s in 1usize..=10, d in 1usize..=12) {
        let (q, k) = qk(seed, r, s, d, 2.0);
        let m = compute_attention_map(&q, &k).unwrap();
        let reference = softmax_rows(&scaled_logits(q.values(), k.values()).unwrap()).unwrap();
        prop_assert_eq!(m.values().as_slice(), reference.as_slice());
    }

    #[test]
    fn key_permutation_permutes_columns(seed: u64, r in 1usize..=4, s in 2usize..=8) {
        let (q, k) = qk(seed, r, s, 4, 1.0);
        let rows: Vec<Vec<f64>> = (0..s).rev().map(|i| k.values().row(i).to_vec()).collect();
        let rev = KeyMatrix::new(Matrix::from_rows(&rows).unwrap()).unwrap();
        let (a, b) = (compute_attention_map(&q, &k).unwrap(), compute_attention_map(&q, &rev).unwrap());
        for p in 0..r * r {
            for t in 0..s {
                prop_assert!((a.values().get(p, t) - b.values().get(p, s - 1 - t)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn extreme_logits_stay_finite() {
    let q = QueryMatrix::new(0, 0, 1, Matrix::new(1, 1, vec![1e6]).unwrap()).unwrap();
    let k = KeyMatrix::new(Matrix::new(3, 1, vec![1.0, -1.0, 0.999]).unwrap()).unwrap();
    let m = compute_attention_map(&q, &k).unwrap();
    assert!(m.values().is_finite());
    assert_eq!(m.values().row(0), &[1.0, 0.0, 0.0]);
}
