// SPDX-License-Identifier: MIT OR Apache-2.0

use headlens_core::io::{decode_pgm, encode_pgm, read_mask, write_mask};
use headlens_core::rng::Xoshiro256StarStar;
use headlens_core::BinaryMask;

#[test]
fn every_3x3_mask_roundtrips() {
    for bits in 0u32..512 {
        let m = BinaryMask::from_fn(3, |y, x| bits >> (y * 3 + x) & 1 == 1);
        assert_eq!(decode_pgm(&encode_pgm(&m)).unwrap(), m);
    }
}

#[test]
fn random_64_masks_roundtrip_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = Xoshiro256StarStar::seed_from_u64(64);
    for i in 0..20 {
        let m = BinaryMask::from_fn(64, |_, _| rng.below(2) == 1);
        let path = dir.path().join(format!("m{i}.pgm"));
        write_mask(&m, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);
    }
}

#[test]
fn grey_levels_split_at_128() {
    let mut bytes = b"P5\n2 1\n255\n".to_vec();
    bytes.extend([127, 128]);
    assert!(decode_pgm(&bytes).is_err(), "non-square masks are rejected");
    let mut bytes = b"P5\n# comment\n2 2\n255\n".to_vec();
    bytes.extend([0, 127, 128, 255]);
    let m = decode_pgm(&bytes).unwrap();
    assert_eq!(m.bits(), &[false, false, true, true]);
}

#[test]
fn malformed_pgm_is_a_format_error() {
    for bad in [
        &b"P2\n1 1\n255\n\x00"[..],
        b"P5\n1 1\n15\n\x00",
        b"P5\n2 2\n255\n\x00",
        b"",
    ] {
        let err = decode_pgm(bad).unwrap_err();
        assert!(err.is_format(), "{err}");
    }
}
