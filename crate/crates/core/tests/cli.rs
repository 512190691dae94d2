use std::fs;
use std::path::Path;

use hostility::cli::run;

fn hostility(args: &[&str]) -> i32 {
    let argv = std::iter::once("hostility").chain(["-q"]).chain(args.iter().copied());
    run(argv.collect::<Vec<_>>())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth -> split -> preprocess -> train -> eval, returning the report bytes.
fn pipeline(root: &Path) -> Vec<u8> {
    let raw = root.join("raw.csv");
    let splits = root.join("splits");
    let clean = root.join("clean");
    let bundle = root.join("bundle");
    let config = root.join("config.json");
    let report = root.join("report.json");

    assert_eq!(hostility(&["synth", "--out", s(&raw), "--posts", "120", "--seed", "5"]), 0);
    assert_eq!(hostility(&["split", "--input", s(&raw), "--seed", "5", "--out", s(&splits)]), 0);
    fs::create_dir_all(&clean).unwrap();
    for name in ["train", "validation", "test"] {
        let from = splits.join(format!("{name}.csv"));
        let to = clean.join(format!("{name}.csv"));
        assert_eq!(hostility(&["preprocess", "--input", s(&from), "--output", s(&to)]), 0);
    }
    fs::write(
        &config,
        r#"{"strategy": "MLC", "learning_rate": 0.001, "epochs": 2, "seed": 1,
            "encoder": {"width": 16, "heads": 2, "ff_width": 32}}"#,
    )
    .unwrap();
    assert_eq!(hostility(&["train", "--config", s(&config), "--data", s(&clean), "--out", s(&bundle)]), 0);
    let test = clean.join("test.csv");
    assert_eq!(hostility(&["eval", "--bundle", s(&bundle), "--data", s(&test), "--report", s(&report)]), 0);
    fs::read(report).unwrap()
}

#[test]
fn pipeline_is_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = pipeline(a.path());
    let rb = pipeline(b.path());
    assert_eq!(ra, rb);
    let report: serde_json::Value = serde_json::from_slice(&ra).unwrap();
    for key in ["hostile", "fake", "hate", "offensive", "defamation", "weighted"] {
        let v = report[key].as_f64().unwrap_or_else(|| panic!("missing {key}"));
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
}

#[test]
fn exit_codes() {
    assert_eq!(hostility(&["frobnicate"]), 2);
    assert_eq!(hostility(&["split", "--input", "/no/such/file.csv", "--out", "/tmp/x"]), 2);

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    fs::write(&bad, "id,text,labels\n1,hello,not-a-label\n").unwrap();
    assert_eq!(hostility(&["split", "--input", s(&bad), "--out", s(&dir.path().join("o"))]), 1);
}
