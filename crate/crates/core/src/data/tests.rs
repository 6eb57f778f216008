use std::fs;

use super::*;
use crate::dsp::{extract_features, MfccExtractor, MfccParams};

fn line(id: &str, wav: &str, label: &str) -> String {
    format!(r#"{{"id":"{id}","wav_path":"{wav}","transcript":"hi","label":"{label}"}}"#)
}

#[test]
fn emotion_order_and_names() {
    let names: Vec<&str> = Emotion::ALL.iter().map(|e| e.name()).collect();
    assert_eq!(names, ["anger", "excited", "happy", "neutral", "sad"]);
    assert_eq!("sad".parse::<Emotion>().unwrap().index(), 4);
    assert!("fear".parse::<Emotion>().is_err());
}

#[test]
fn manifest_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.wav"), b"").unwrap();
    let m = dir.path().join("m.jsonl");

    fs::write(&m, "").unwrap();
    assert!(load_manifest(&m).unwrap().is_empty());

    fs::write(&m, format!("{}\n{}\n", line("x", "a.wav", "sad"), line("y", "a.wav", "fear"))).unwrap();
    assert!(matches!(load_manifest(&m), Err(DataError::BadLabel { line: 2, .. })));

    fs::write(&m, format!("{}\n{}\n", line("x", "a.wav", "sad"), line("x", "a.wav", "happy"))).unwrap();
    assert!(matches!(load_manifest(&m), Err(DataError::DuplicateId { line: 2, .. })));

    fs::write(&m, line("x", "missing.wav", "sad")).unwrap();
    assert!(matches!(load_manifest(&m), Err(DataError::MissingFile { line: 1, .. })));

    fs::write(&m, "{not json}\n").unwrap();
    assert!(matches!(load_manifest(&m), Err(DataError::Parse { line: 1, .. })));
}

#[test]
fn ten_record_manifest_histogram() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.wav"), b"").unwrap();
    let labels = ["anger", "anger", "excited", "happy", "happy", "happy", "neutral", "sad", "sad", "sad"];
    let body: String = labels
        .iter()
        .enumerate()
        .map(|(i, l)| line(&format!("u{i}"), "a.wav", l) + "\n")
        .collect();
    let m = dir.path().join("m.jsonl");
    fs::write(&m, body).unwrap();
    let recs = load_manifest(&m).unwrap();
    assert_eq!(recs.len(), 10);
    assert_eq!(class_histogram(&recs), [2, 1, 3, 1, 3]);
    assert_eq!(recs[0].wav_path, dir.path().join("a.wav"));
}

#[test]
fn synthetic_corpus_counts_and_determinism() {
    let spec = SyntheticCorpusSpec {
        counts: [2, 2, 2, 2, 2],
        seed: 7,
        ..SyntheticCorpusSpec::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = generate_synthetic_corpus(&spec, a.path()).unwrap();
    let mb = generate_synthetic_corpus(&spec, b.path()).unwrap();
    let recs = load_manifest(&ma).unwrap();
    assert_eq!(recs.len(), 10);
    assert_eq!(fs::read(&ma).unwrap(), fs::read(&mb).unwrap());
    for r in &recs {
        let rel = r.wav_path.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(&r.wav_path).unwrap(), fs::read(b.path().join(rel)).unwrap());
    }
    let extractor = MfccExtractor::new(MfccParams::default());
    for r in &recs {
        let u = Utterance::load(r).unwrap();
        let m = extract_features(&u.waveform, &extractor).unwrap();
        assert_eq!(m.shape(), (740, 13));
        assert!(m.valid_frames >= 30);
    }
}

#[test]
fn synthetic_lexicon_parses() {
    let lex = crate::text::Lexicon::parse(&synthetic_lexicon()).unwrap();
    assert_eq!(lex.len(), 30);
    assert_eq!(lex.synonyms("wow").len(), 5);
}
