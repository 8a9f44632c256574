use hybrid_core::corpus::{read_records, write_records};
use hybrid_core::dialog::{Role, Turn, TurnRecord};
use serde_json::{json, Value};

#[test]
fn unknown_fields_survive_a_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("turns.jsonl");
    let records: Vec<TurnRecord> = (0..100u32)
        .map(|i| {
            let role = [Role::User, Role::Assistant, Role::System][i as usize % 3];
            let mut turn = Turn::text(role, (0..i % 7).collect());
            if role == Role::Assistant {
                turn = turn.with_audio(vec![vec![i % 5, 1, 2]; (i % 4) as usize]);
                turn.speaker_ref = Some(format!("agent{}", i % 2));
            }
            let mut extra = serde_json::Map::new();
            extra.insert("dialog".into(), json!(format!("d{}", i / 3)));
            if i % 2 == 0 {
                extra.insert("note".into(), json!({ "k": [i, "x"], "nested": { "flag": i % 4 == 0 } }));
            }
            TurnRecord { turn, extra }
        })
        .collect();
    write_records(&path, &records).unwrap();
    let back: Vec<TurnRecord> = read_records(&path).unwrap();
    assert_eq!(back, records);

    // the raw JSON of every line is unchanged by a second pass
    let first = std::fs::read_to_string(&path).unwrap();
    let again = dir.path().join("again.jsonl");
    write_records(&again, &back).unwrap();
    let second = std::fs::read_to_string(&again).unwrap();
    for (a, b) in first.lines().zip(second.lines()) {
        assert_eq!(serde_json::from_str::<Value>(a).unwrap(), serde_json::from_str::<Value>(b).unwrap());
    }
    assert_eq!(first, second);
}

#[test]
fn malformed_line_is_reported_by_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"role\":\"user\",\"text\":[1]}\n{\"role\":\"user\",\"text\":\"oops\"}\n").unwrap();
    let err = read_records::<TurnRecord>(&path).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}
