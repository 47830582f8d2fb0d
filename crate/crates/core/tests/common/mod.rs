// SPDX-License-Identifier: MIT OR Apache-2.0
#![allow(dead_code)]

use headlens_core::rng::Xoshiro256StarStar;
use headlens_core::{
    compute_attention_map, AttentionMap, HeadMaps, KeyMatrix, Matrix, QueryMatrix,
};

pub fn random_matrix(rng: &mut Xoshiro256StarStar, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| scale * rng.normal()).collect();
    Matrix::new(rows, cols, data).unwrap()
}

pub fn random_map(
    rng: &mut Xoshiro256StarStar,
    head: u32,
    r: usize,
    tokens: usize,
    d_k: usize,
) -> AttentionMap {
    let q = QueryMatrix::new(head, 0, r, random_matrix(rng, r * r, d_k, 1.0)).unwrap();
    let k = KeyMatrix::new(random_matrix(rng, tokens, d_k, 1.0)).unwrap();
    compute_attention_map(&q, &k).unwrap()
}

/// Random time-averaged maps for `heads` heads at mixed resolutions.
pub fn random_head_maps(seed: u64, heads: u32, tokens: usize) -> HeadMaps {
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut maps = HeadMaps::new(heads);
    for h in 0..heads {
        let r = [2, 4, 8][rng.below(3) as usize];
        maps.insert(random_map(&mut rng, h, r, tokens, 4)).unwrap();
    }
    maps
}
