// SPDX-License-Identifier: MIT OR Apache-2.0

use headlens_core::pipeline::{aggregate, head_maps, ConceptKeyBank, HeadSelection};
use headlens_core::synthetic::{generate_fixture, FixtureConfig};
use headlens_core::{compute_attention_map, AtndFile, AtndHeader, ContentKind, Error, HeadBlock};

fn small() -> FixtureConfig {
    FixtureConfig {
        heads: 12,
        planted: 3,
        timesteps: 2,
        images: 1,
        resolutions: vec![4, 8],
        mask_resolution: 16,
        image_resolution: 32,
        ..FixtureConfig::default()
    }
}

#[test]
fn map_dumps_match_query_key_dumps() {
    let f = generate_fixture(&small()).unwrap();
    let dump = f.image(0).unwrap().dump;
    let h = *dump.header();
    let blocks = (0..h.heads)
        .map(|head| {
            let data = dump
                .queries(head)
                .unwrap()
                .iter()
                .flat_map(|q| {
                    compute_attention_map(q, &dump.keys(head).unwrap())
                        .unwrap()
                        .values()
                        .as_slice()
                        .iter()
                        .map(|&v| v as f32)
                        .collect::<Vec<_>>()
                })
                .collect();
            HeadBlock {
                resolution: dump.resolution(head) as u32,
                data,
            }
        })
        .collect();
    let maps_dump = AtndFile::new(
        AtndHeader {
            d_k: 0,
            kind: ContentKind::Maps,
            ..h
        },
        blocks,
    )
    .unwrap();
    let a = aggregate(&head_maps(&dump).unwrap(), None, 16).unwrap();
    let b = aggregate(&head_maps(&maps_dump).unwrap(), None, 16).unwrap();
    for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn concept_keys_are_not_attention() {
    let f = generate_fixture(&small()).unwrap();
    assert!(head_maps(f.concept_keys()).is_err());
}

#[test]
fn bank_names_come_from_sidecar() {
    let f = generate_fixture(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("keys.atnd");
    f.concept_keys().write(&path).unwrap();
    let bank = ConceptKeyBank::load(&path).unwrap();
    assert_eq!(bank.names()[0], "concept_0");
    std::fs::write(
        dir.path().join("keys.json"),
        f.concept_manifest().to_json().unwrap(),
    )
    .unwrap();
    let bank = ConceptKeyBank::load(&path).unwrap();
    assert_eq!(bank.names()[0], "animals");
    assert_eq!(bank.heads(), 12);
}

#[test]
fn selection_errors() {
    let sel = HeadSelection::Top {
        concept: "nope".into(),
        k: 3,
    };
    assert!(matches!(
        sel.resolve(&[], 4),
        Err(Error::UnknownConcept { .. })
    ));
    assert!(HeadSelection::Explicit(vec![9]).resolve(&[], 4).is_err());
    assert_eq!(HeadSelection::All.resolve(&[], 4).unwrap(), None);
}
