use std::fs;
use std::path::PathBuf;

use repfuse::manifest::{build_vocab, load_manifest, Manifest, UtteranceRecord};
use repfuse::Error;
use repfuse_core::{StreamKey, Variant};

fn write(lines: &[&str]) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    fs::write(&path, lines.join("\n")).unwrap();
    (dir, path)
}

const U1: &str = r#"{"id": "u1", "transcript": "Hello  World", "paths": {"w/3/finetuned": "emb/u1.emb"}, "duration_s": 1.0}"#;
const U2: &str = r#"{"id": "u2", "transcript": "it's ok", "paths": {"w/3/pt": "emb/u2.emb"}}"#;
const U3: &str = r#"{"id": "u3", "transcript": "b", "paths": {}, "meta": {"tap": "pre-norm"}}"#;

#[test]
fn three_valid_lines() {
    let (_d, path) = write(&[U1, "", U2, U3]);
    let m = load_manifest(&path).unwrap();
    assert_eq!(m.records.len(), 3);
    assert_eq!(m.records[0].transcript, "hello world");
    assert_eq!(m.records[0].duration_s, Some(1.0));
    let key = StreamKey::new("w", 3, Variant::Pretrained);
    assert_eq!(m.resolve(&m.records[1], &key).unwrap(), path.parent().unwrap().join("emb/u2.emb"));
    assert_eq!(m.records[2].meta.as_ref().unwrap()["tap"], "pre-norm");
}

#[test]
fn duplicate_id_reports_its_line() {
    let dup = U1.replace("Hello", "again");
    let (_d, path) = write(&[U1, &dup]);
    match load_manifest(&path) {
        Err(Error::Manifest { line, msg, .. }) => {
            assert_eq!(line, 2);
            assert!(msg.contains("u1"));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn empty_transcript_is_rejected() {
    let (_d, path) = write(&[r#"{"id": "e", "transcript": " ?! ", "paths": {}}"#]);
    assert!(matches!(load_manifest(&path), Err(Error::Manifest { line: 1, .. })));
}

#[test]
fn malformed_lines_are_rejected() {
    for bad in [
        "{not json",
        r#"{"id": "x", "paths": {}}"#,
        r#"{"id": "x", "transcript": "a", "paths": {"w/x/finetuned": "p"}}"#,
        r#"{"id": "x", "transcript": "a", "paths": {"w/1/other": "p"}}"#,
    ] {
        let (_d, path) = write(&[U1, bad]);
        let err = load_manifest(&path).unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }), "{bad}: {err}");
        assert_eq!(err.exit_code(), 2);
    }
}

#[test]
fn missing_stream_is_a_pairing_error() {
    let (_d, path) = write(&[U3]);
    let m = load_manifest(&path).unwrap();
    let err = m.resolve(&m.records[0], &StreamKey::new("w", 0, Variant::Delta)).unwrap_err();
    assert!(matches!(err, Error::Pairing(ref s) if s.contains("u3")));
}

#[test]
fn vocabulary_is_sorted_distinct_characters() {
    let (_d, path) = write(&[U1, U2, U3]);
    let m = load_manifest(&path).unwrap();
    let v = build_vocab(&m.records).unwrap();
    let expected: Vec<char> = " 'bdehiklorstw".chars().collect();
    assert_eq!(v.symbols(), expected.as_slice());
    assert_eq!(v.len(), expected.len() + 1);
}

#[test]
fn save_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = UtteranceRecord::new("a", "x y");
    r.paths.insert(StreamKey::new("m", 1, Variant::Finetuned), PathBuf::from("emb").join("a.emb"));
    r.duration_s = Some(0.5);
    r.meta = Some(serde_json::json!({"k": [1, 2]}));
    let m = Manifest::new(dir.path(), vec![r, UtteranceRecord::new("b", "z")]);
    let path = dir.path().join("out.jsonl");
    m.save(&path).unwrap();
    assert_eq!(load_manifest(&path).unwrap(), m);
    assert!(fs::read_to_string(&path).unwrap().contains(r#""m/1/finetuned":"emb/a.emb""#));
}
