// SPDX-License-Identifier: MIT OR Apache-2.0

use headlens_core::rng::Xoshiro256StarStar;
use headlens_core::{iou, threshold_mask, BinaryMask, TokenHeatmap};
use proptest::prelude::*;

fn mask(r: usize, bits: &[bool]) -> BinaryMask {
    BinaryMask::new(r, bits.to_vec()).unwrap()
}

proptest! {
    #[test]
    fn iou_symmetric_and_bounded(a in prop::collection::vec(any::<bool>(), 64), b in prop::collection::vec(any::<bool>(), 64)) {
        let (a, b) = (mask(8, &a), mask(8, &b));
        let x = iou(&a, &b).unwrap();
        prop_assert_eq!(x, iou(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&x));
        prop_assert_eq!(iou(&a, &a).unwrap(), 1.0);
        if a.count() + b.count() > 0 {
            prop_assert_eq!(x == 1.0, a == b);
        }
    }

    #[test]
    fn thresholds_nest(values in prop::collection::vec(0.0f64..1.0, 36), v1 in 0.01f64..0.99, v2 in 0.01f64..0.99) {
        let h = TokenHeatmap::normalized(6, values).unwrap();
        let (lo, hi) = if v1 < v2 { (v1, v2) } else { (v2, v1) };
        let (a, b) = (threshold_mask(&h, lo).unwrap(), threshold_mask(&h, hi).unwrap());
        prop_assert!(b.is_subset_of(&a));
        prop_assert!(b.count() <= a.count());
    }
}

#[test]
fn empty_masks_match() {
    assert_eq!(
        iou(&BinaryMask::empty(4), &BinaryMask::empty(4)).unwrap(),
        1.0
    );
    let mut full = vec![false; 16];
    full[3] = true;
    assert_eq!(iou(&mask(4, &full), &BinaryMask::empty(4)).unwrap(), 0.0);
}

#[test]
fn resolution_mismatch_rejected() {
    assert!(iou(&BinaryMask::empty(4), &BinaryMask::empty(5)).is_err());
}

#[test]
fn random_masks_match_counting() {
    let mut rng = Xoshiro256StarStar::seed_from_u64(11);
    for _ in 0..200 {
        let a: Vec<bool> = (0..256).map(|_| rng.below(2) == 1).collect();
        let b: Vec<bool> = (0..256).map(|_| rng.below(3) == 0).collect();
        let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
        let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
        assert_eq!(
            iou(&mask(16, &a), &mask(16, &b)).unwrap(),
            inter as f64 / union as f64
        );
    }
}
