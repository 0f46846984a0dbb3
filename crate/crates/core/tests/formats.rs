//! Checked-in MEB1 fixtures, written by `fixtures/make_fixtures.py` with
//! Python's struct and zlib rather than by this crate.

use std::collections::BTreeMap;
use std::path::PathBuf;

use aqa_core::data::{
    read_embedding, EmbeddingSequence, EmbeddingStore, EncoderStats, Manifest, NormStats,
};
use aqa_core::{Error, ErrorClass, Exec};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

#[test]
fn fixture_values_parse_exactly() {
    let w = read_embedding(fixture("clip.wavlm.meb")).unwrap();
    assert_eq!(
        (w.encoder_id.as_str(), w.frame_rate_hz, w.dims, w.frames()),
        ("wavlm", 50.0, 3, 100)
    );
    let m = read_embedding(fixture("clip.m2d.meb")).unwrap();
    assert_eq!(
        (m.encoder_id.as_str(), m.frame_rate_hz, m.dims, m.frames()),
        ("m2d", 25.0, 2, 50)
    );
    assert_eq!(w.duration_s(), 2.0);
    assert_eq!(m.duration_s(), 2.0);
    for t in 0..100 {
        for d in 0..3 {
            assert_eq!(w.frame(t)[d], t as f32 * 0.25 - d as f32 * 0.5);
        }
    }
    for t in 0..50 {
        for d in 0..2 {
            assert_eq!(m.frame(t)[d], (d + 1) as f32 * 1.5 - t as f32 * 0.125);
        }
    }
}

#[test]
fn fixture_reencodes_byte_for_byte() {
    for name in ["clip.wavlm.meb", "clip.m2d.meb"] {
        let bytes = std::fs::read(fixture(name)).unwrap();
        let seq = EmbeddingSequence::decode(&bytes, &fixture(name)).unwrap();
        assert_eq!(seq.encode().unwrap(), bytes, "{name}");
    }
}

#[test]
fn corrupted_fixture_reports_checksum_offset() {
    match read_embedding(fixture("bad_crc.m2d.meb")) {
        Err(e @ Error::Format { offset, .. }) => {
            // 4 magic + 2 version + 2 + 3 id + 4 rate + 4 dims + 4 frames + 400 payload
            assert_eq!(offset, 423);
            assert!(e.to_string().contains("checksum"), "{e}");
            assert_eq!(e.class(), ErrorClass::DataFormat);
        }
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn fixture_manifest_fuses_on_the_slower_grid() {
    let manifest = Manifest::load(fixture("manifest.jsonl")).unwrap();
    assert_eq!(manifest.len(), 1);
    assert_eq!(
        manifest.common_encoders(),
        vec!["wavlm".to_string(), "m2d".to_string()]
    );
    let store = EmbeddingStore::load(&manifest, &[], Exec::Sequential).unwrap();
    let identity = |dims: usize| EncoderStats {
        mean: vec![0.0; dims],
        std: vec![1.0; dims],
    };
    let norm = NormStats {
        encoders: BTreeMap::from([
            ("wavlm".to_string(), identity(3)),
            ("m2d".to_string(), identity(2)),
        ]),
    };
    let encoders = vec!["m2d".to_string(), "wavlm".to_string()];
    let fused = store.fuse(&encoders, &norm, Exec::Sequential).unwrap();
    let seq = &fused[0].seq;
    assert_eq!((seq.frame_rate_hz, seq.dims, seq.frames()), (25.0, 5, 50));
    for k in 0..50 {
        // wavlm first (canonical order), sampled at frame 2k
        let expect = [
            2.0 * k as f64 * 0.25,
            2.0 * k as f64 * 0.25 - 0.5,
            2.0 * k as f64 * 0.25 - 1.0,
            1.5 - k as f64 * 0.125,
            3.0 - k as f64 * 0.125,
        ];
        assert_eq!(seq.frame(k), expect.as_slice(), "frame {k}");
    }
    let scores = fused[0].labels.unwrap();
    assert_eq!(scores.to_array(), [7.5, 3.0, 6.25, 5.0]);
}
