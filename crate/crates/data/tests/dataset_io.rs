use std::fs;

use stmc_data::*;

fn corpus() -> Corpus {
    let cfg = CorpusConfig {
        train: 6,
        dev: 2,
        test: 2,
        style: ClipStyle { size: 24, ..ClipStyle::default() },
        seed: 42,
        ..CorpusConfig::default()
    };
    generate_corpus(&cfg).unwrap()
}

#[test]
fn round_trip_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    assert_eq!(c.clips.len(), 10);
    write_dataset(&c, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back.vocabulary, c.vocabulary);
    for (a, b) in c.clips.iter().zip(&back.clips) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.glosses, b.glosses);
        assert!(a.frames.iter().zip(&b.frames).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.keypoints.iter().zip(&b.keypoints).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back, c);
}

#[test]
fn manifest_vocabulary_matches_vocab_file() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_dataset(&corpus(), dir.path()).unwrap();
    let vocab = fs::read_to_string(dir.path().join("vocab.txt")).unwrap();
    assert_eq!(vocab.lines().count(), m.vocabulary.len());
    assert_eq!(read_manifest(dir.path()).unwrap(), m);

    fs::write(dir.path().join("vocab.txt"), "G00\nG01\n").unwrap();
    assert!(matches!(read_manifest(dir.path()), Err(DataError::VocabularyMismatch(_))));
}

#[test]
fn tampered_byte_reports_checksum_failure() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&corpus(), dir.path()).unwrap();
    let path = dir.path().join("clips/train-0002.bin");
    let mut bytes = fs::read(&path).unwrap();
    let i = bytes.len() / 2;
    bytes[i] ^= 0x40;
    fs::write(&path, bytes).unwrap();
    match read_dataset(dir.path()) {
        Err(DataError::Checksum { id, .. }) => assert_eq!(id, "train-0002"),
        other => panic!("expected checksum error, got {other:?}"),
    }
}

#[test]
fn corrupt_header_and_truncation_are_distinct() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&corpus(), dir.path()).unwrap();
    let path = dir.path().join("clips/dev-0000.bin");
    let good = fs::read(&path).unwrap();

    let mut bad = good.clone();
    bad[0] = b'X';
    fs::write(&path, &bad).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DataError::BadHeader { .. })));

    fs::write(&path, &good[..good.len() - 10]).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DataError::Truncated { .. })));
}

#[test]
fn manifest_shape_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&corpus(), dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let mut m: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let t = m["clips"][0]["frames"].as_u64().unwrap();
    m["clips"][0]["frames"] = (t + 1).into();
    fs::write(&path, m.to_string()).unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DataError::ShapeMismatch { .. })));

    fs::write(&path, "{ not json").unwrap();
    assert!(matches!(read_dataset(dir.path()), Err(DataError::Manifest(_))));
}

#[test]
fn vocab_size_override_reaches_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CorpusConfig { vocab_size: 14, train: 3, dev: 1, test: 1, style: ClipStyle { size: 24, ..ClipStyle::default() }, ..CorpusConfig::default() };
    let m = write_dataset(&generate_corpus(&cfg).unwrap(), dir.path()).unwrap();
    assert_eq!(m.vocabulary.len(), 14);
}
