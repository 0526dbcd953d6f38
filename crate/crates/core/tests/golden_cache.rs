//! Byte-level check of the A3FC feature cache against a fixture written by an
//! independent little-endian packer.

use mvad::encoder::{cache_from_bytes, cache_to_bytes, load_cache, save_cache, FeatureSet, Modality};

const V: usize = 2;
const N: usize = 4;
const D: usize = 8;
const FIXTURE: &[u8] = include_bytes!("fixtures/golden_v2_n4_d8.a3fc");

fn global(m: usize, v: usize, k: usize) -> f32 {
    if k == (v + m) % D {
        1.0
    } else {
        0.0
    }
}

fn local(m: usize, v: usize, n: usize, k: usize) -> f32 {
    let sign = if (v + m).is_multiple_of(2) { 1.0 } else { -1.0 };
    sign * ((n * D + k) as f32 / 64.0 - 0.25)
}

fn sets() -> Vec<FeatureSet> {
    [Modality::Rgb, Modality::Render]
        .into_iter()
        .enumerate()
        .map(|(m, modality)| {
            let g = (0..V).flat_map(|v| (0..D).map(move |k| global(m, v, k))).collect();
            let l = (0..V).flat_map(|v| (0..N).flat_map(move |n| (0..D).map(move |k| local(m, v, n, k)))).collect();
            FeatureSet::new(modality, (2, 2), D, g, l).unwrap()
        })
        .collect()
}

#[test]
fn fixture_header_is_as_documented() {
    let mut head = b"A3FC".to_vec();
    head.extend_from_slice(&[1, 0, 0, 0]);
    head.push(2);
    head.push(0);
    head.extend_from_slice(&[2, 0, 0, 0, 4, 0, 0, 0, 8, 0, 0, 0]);
    assert_eq!(&FIXTURE[..head.len()], &head[..]);
    // First global of RGB view 0 is e_0: 1.0f32 then seven zeros.
    assert_eq!(&FIXTURE[22..26], &[0x00, 0x00, 0x80, 0x3f]);
    assert_eq!(FIXTURE.len(), 9 + 2 * (13 + V * (D + N * D) * 4));
}

#[test]
fn writer_matches_fixture_byte_for_byte() {
    assert_eq!(cache_to_bytes(&sets()).unwrap(), FIXTURE);
}

#[test]
fn fixture_reads_back_exactly() {
    let read = cache_from_bytes(FIXTURE).unwrap();
    assert_eq!(read.len(), 2);
    for (got, want) in read.iter().zip(sets()) {
        assert_eq!(got.modality, want.modality);
        assert_eq!(got.grid, (2, 2));
        assert_eq!(got.dim, D);
        assert_eq!(got.globals, want.globals);
        assert_eq!(got.locals, want.locals);
    }
}

#[test]
fn file_round_trip_preserves_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.a3fc");
    save_cache(&sets(), &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), FIXTURE);
    assert_eq!(cache_to_bytes(&load_cache(&path).unwrap()).unwrap(), FIXTURE);
}

#[test]
fn truncated_or_corrupt_fixture_is_rejected() {
    assert!(cache_from_bytes(&FIXTURE[..FIXTURE.len() - 1]).is_err());
    let mut bad = FIXTURE.to_vec();
    bad[0] = b'B';
    assert!(cache_from_bytes(&bad).is_err());
    let mut bad = FIXTURE.to_vec();
    bad[9] = 7;
    assert!(cache_from_bytes(&bad).is_err());
}
