use std::fs;
use std::path::Path;

use selcert::conformal::conformal_fit;
use selcert::datagen::{generate, load, save, DataFormat, SyntheticSpec};
use selcert::{Dataset, Error, PredictionRecord};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        n: 200,
        ..SyntheticSpec::massive_like(9)
    }
}

#[test]
fn jsonl_and_csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&spec()).unwrap();
    for (name, fmt) in [("d.jsonl", DataFormat::Jsonl), ("d.csv", DataFormat::Csv)] {
        let path = dir.path().join(name);
        save(&ds, &path, fmt).unwrap();
        assert_eq!(load(&path, fmt).unwrap(), ds, "{name}");
    }
}

#[test]
fn labels_and_partial_vectors_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut recs = vec![
        PredictionRecord::new("a", 0.7, 0, 1),
        PredictionRecord::new("b", 0.6, 2, 2),
    ];
    recs[0].probs = Some(vec![0.7, 0.2, 0.1]);
    let ds = Dataset::new(recs, 3)
        .unwrap()
        .with_labels(vec!["x".into(), "y".into(), "z".into()])
        .unwrap();
    for (name, fmt) in [("l.jsonl", DataFormat::Jsonl), ("l.csv", DataFormat::Csv)] {
        let path = dir.path().join(name);
        save(&ds, &path, fmt).unwrap();
        let back = load(&path, fmt).unwrap();
        assert_eq!(back, ds, "{name}");
        assert_eq!(back.label_name(2), "z");
    }
}

#[test]
fn output_is_deterministic_and_header_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let ds = generate(&SyntheticSpec { n: 20, num_classes: 3, ..spec() }).unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    save(&ds, &a, DataFormat::Csv).unwrap();
    save(&ds, &b, DataFormat::Csv).unwrap();
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    assert_eq!(
        text.lines().next().unwrap(),
        "id,confidence,predicted,gold,prob_0,prob_1,prob_2,logit_0,logit_1,logit_2"
    );
}

#[test]
fn omits_absent_optional_fields() {
    let dir = tempfile::tempdir().unwrap();
    let ds = Dataset::new(vec![PredictionRecord::new("a", 0.5, 0, 0)], 2).unwrap();
    let path = dir.path().join("x.jsonl");
    save(&ds, &path, DataFormat::Jsonl).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.trim(), r#"{"id":"a","confidence":0.5,"predicted":0,"gold":0}"#);
    let path = dir.path().join("x.csv");
    save(&ds, &path, DataFormat::Csv).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap().lines().next().unwrap(), "id,confidence,predicted,gold");
}

fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn bad_probabilities_name_the_record() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "bad.jsonl",
        "{\"id\":\"ok\",\"confidence\":0.5,\"predicted\":0,\"gold\":0,\"probs\":[0.5,0.5]}\n\
         {\"id\":\"short\",\"confidence\":0.6,\"predicted\":0,\"gold\":1,\"probs\":[0.6,0.3]}\n",
    );
    let err = load(&p, DataFormat::Jsonl).unwrap_err();
    assert!(err.to_string().contains("short"), "{err}");
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "m.jsonl",
        "{\"id\":\"a\",\"confidence\":0.5,\"predicted\":0,\"gold\":0}\n{\"id\":\"b\",\"confidence\":\n",
    );
    match load(&p, DataFormat::Jsonl) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let p = write(dir.path(), "m.csv", "id,confidence,predicted,gold\na,0.5,0,0\nb,high,0,0\n");
    match load(&p, DataFormat::Csv) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
}

#[test]
fn string_labels_map_by_first_appearance() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(
        dir.path(),
        "s.csv",
        "id,confidence,predicted,gold\n1,0.9,balance,balance\n2,0.4,transfer,balance\n3,0.8,card,transfer\n",
    );
    let ds = load(&p, DataFormat::Csv).unwrap();
    assert_eq!(ds.num_classes(), 3);
    assert_eq!(ds.labels().unwrap(), ["balance", "transfer", "card"]);
    let r = &ds.records()[2];
    assert_eq!((r.predicted, r.gold), (2, 1));
}

#[test]
fn confidence_only_file_loads_but_conformal_refuses() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "c.csv", "id,confidence,predicted,gold\na,0.9,0,0\nb,0.3,1,0\n");
    let ds = load(&p, DataFormat::Csv).unwrap();
    assert!(matches!(conformal_fit(&ds, 0.1), Err(Error::MissingProbs { .. })));
    assert!(matches!(
        selcert::calibration::fit_temperature(&ds, (0.05, 50.0), 1e-4),
        Err(Error::MissingLogits { .. })
    ));
}
