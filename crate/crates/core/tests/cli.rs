use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mulco::corpus::parse_corpus;
use serde_json::Value;
use tempfile::TempDir;

const GOVERNMENT: &str = r#"{"text":"北京市海淀区人民政府","entities":[{"start":0,"end":3,"category":"Location"},{"start":3,"end":6,"category":"Location"},{"start":0,"end":6,"category":"Location"},{"start":3,"end":10,"category":"Organization"},{"start":0,"end":10,"category":"Organization"}]}"#;

fn mulco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mulco"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = mulco(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn spans(jsonl: &str) -> Vec<Vec<(usize, usize, String)>> {
    let c = parse_corpus(jsonl, None).unwrap();
    c.sentences()
        .iter()
        .map(|s| {
            let mut v: Vec<_> = s
                .mentions()
                .iter()
                .map(|m| (m.start, m.end, m.category.clone()))
                .collect();
            v.sort();
            v
        })
        .collect()
}

#[test]
fn stats_on_government() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "gov.jsonl", GOVERNMENT);
    let v: Value = serde_json::from_str(&ok(&["stats", s(&f), "--format", "json"])).unwrap();
    assert_eq!(v["mentions"], 5);
    assert_eq!(v["max_depth"], 3);
    assert_eq!(v["nested_mentions"], 5);
    assert!(ok(&["stats", s(&f)]).contains("max depth"));
}

#[test]
fn stats_on_empty_file() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "empty.jsonl", "");
    let v: Value = serde_json::from_str(&ok(&["stats", s(&f), "--format", "json"])).unwrap();
    assert_eq!(v["sentences"], 0);
    assert_eq!(v["mentions"], 0);
    assert_eq!(v["avg_tokens"], 0.0);
}

#[test]
fn malformed_line_reports_line_number() {
    let dir = TempDir::new().unwrap();
    let f = write(
        &dir,
        "bad.jsonl",
        &format!(
            "{GOVERNMENT}\n\n{{\"text\": \"ab\", \"entities\": [{{\"start\": 1, \"end\": 5, \"category\": \"X\"}}]}}\n"
        ),
    );
    for cmd in ["stats", "validate"] {
        let out = mulco(&[cmd, s(&f)]);
        assert!(!out.status.success());
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.contains("line 3"), "{err}");
    }
    let f = write(&dir, "bad2.jsonl", "not json\n");
    let out = mulco(&["stats", s(&f)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn unknown_flag_rejected() {
    assert!(!mulco(&["stats", "x.jsonl", "--bogus"]).status.success());
    assert!(!mulco(&["frobnicate"]).status.success());
}

#[test]
fn manifest_rejects_unlisted_category() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "gov.jsonl", GOVERNMENT);
    let m = write(&dir, "cats.json", r#"{"categories": ["Location"]}"#);
    let out = mulco(&["validate", s(&f), "--categories", s(&m)]);
    assert!(!out.status.success());
    let m = write(&dir, "cats2.json", r#"{"categories": ["Organization", "Location"]}"#);
    assert!(ok(&["validate", s(&f), "--categories", s(&m)]).starts_with("ok: 1 sentences, 5 mentions"));
}

#[test]
fn encode_decode_round_trip() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "gov.jsonl", GOVERNMENT);
    let lab = dir.path().join("lab.jsonl");
    ok(&["encode", s(&f), "--scopes", "all", "--out", s(&lab)]);
    assert_eq!(fs::read_to_string(&lab).unwrap().lines().count(), 4);
    let back = ok(&["decode", s(&lab)]);
    assert_eq!(spans(&back), spans(GOVERNMENT));

    ok(&["encode", s(&f), "--scopes", "B-min,B-max", "--out", s(&lab)]);
    let back = spans(&ok(&["decode", s(&lab)]));
    let mut expect = spans(GOVERNMENT);
    expect[0].retain(|m| (m.0, m.1) != (0, 6));
    assert_eq!(back, expect);
}

#[test]
fn decode_with_texts_from_corpus() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "gov.jsonl", GOVERNMENT);
    let lab = write(
        &dir,
        "lab.jsonl",
        r#"{"sentence":0,"scope":"E-min","anchors":["NA","NA","Location","NA","NA","Location","NA","NA","NA","Organization"],"lengths":[0,0,3,0,0,3,0,0,0,7]}"#,
    );
    assert!(!mulco(&["decode", s(&lab)]).status.success());
    let back = spans(&ok(&["decode", s(&lab), "--corpus", s(&f)]));
    assert_eq!(
        back,
        vec![vec![
            (0, 3, "Location".into()),
            (3, 6, "Location".into()),
            (3, 10, "Organization".into())
        ]]
    );
}

#[test]
fn decode_empty_and_invalid() {
    let dir = TempDir::new().unwrap();
    let e = write(&dir, "empty.jsonl", "");
    assert_eq!(ok(&["decode", s(&e)]), "");
    let bad = write(
        &dir,
        "bad.jsonl",
        r#"{"text":"ab","scope":"B-min","anchors":["X","NA"],"lengths":[0,0]}"#,
    );
    let out = mulco(&["decode", s(&bad)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn coverage_reports() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "gov.jsonl", GOVERNMENT);
    let v: Value = serde_json::from_str(&ok(&["coverage", s(&f)])).unwrap();
    assert_eq!(v["uncovered"], 0);
    assert_eq!(v["covered"], 5);

    let adv = write(
        &dir,
        "adv.jsonl",
        &serde_json::json!({"text": "0123456789", "entities": [
            {"start": 2, "end": 8, "category": "X"},
            {"start": 2, "end": 5, "category": "X"},
            {"start": 2, "end": 10, "category": "X"},
            {"start": 5, "end": 8, "category": "X"},
            {"start": 0, "end": 8, "category": "X"}
        ]})
        .to_string(),
    );
    let v: Value = serde_json::from_str(&ok(&["coverage", s(&adv)])).unwrap();
    assert_eq!(v["uncovered"], 1);
    assert_eq!(v["uncovered_mentions"][0]["start"], 2);
    assert_eq!(v["uncovered_mentions"][0]["end"], 8);

    let flat = write(
        &dir,
        "flat.jsonl",
        r#"{"text":"abcdefgh","entities":[{"start":0,"end":2,"category":"X"},{"start":3,"end":7,"category":"Y"},{"start":7,"end":8,"category":"X"}]}"#,
    );
    let v: Value = serde_json::from_str(&ok(&["coverage", s(&flat), "--scopes", "B-min"])).unwrap();
    assert_eq!(v["uncovered"], 0);
    assert_eq!(v["per_scope"]["B-min"], 3);
}

#[test]
fn eval_gold_against_itself() {
    let dir = TempDir::new().unwrap();
    let f = write(&dir, "gov.jsonl", GOVERNMENT);
    let table = ok(&["eval", "--gold", s(&f), "--pred", s(&f)]);
    assert!(table.contains("100.00"), "{table}");
    let v: Value = serde_json::from_str(&ok(&["eval", "--gold", s(&f), "--pred", s(&f), "--format", "json"])).unwrap();
    assert_eq!(v["micro"]["f1"], 1.0);
    let e = write(&dir, "empty.jsonl", "");
    assert!(!mulco(&["eval", "--gold", s(&f), "--pred", s(&e)]).status.success());
}

#[test]
fn gen_toy_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    ok(&["gen-toy", "--size", "50", "--seed", "9", "--out", s(&a)]);
    ok(&["gen-toy", "--size", "50", "--seed", "9", "--out", s(&b)]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    ok(&["validate", s(&a)]);
    let v: Value = serde_json::from_str(&ok(&["stats", s(&a), "--format", "json"])).unwrap();
    assert!(v["max_depth"].as_u64().unwrap() <= 3);
    assert_eq!(v["categories"].as_object().unwrap().len(), 2);
    assert_eq!(ok(&["gen-toy", "--size", "0"]), "");
}

#[test]
fn train_predict_eval_pipeline() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.jsonl");
    let test = dir.path().join("test.jsonl");
    ok(&["gen-toy", "--size", "120", "--seed", "1", "--out", s(&train)]);
    ok(&["gen-toy", "--size", "20", "--seed", "2", "--out", s(&test)]);
    let config = write(&dir, "config.json", r#"{"epochs": 50, "hidden": 8, "seed": 5}"#);
    let run = |tag: &str| {
        let model = dir.path().join(format!("model{tag}.bin"));
        let report = dir.path().join(format!("report{tag}.json"));
        let pred = dir.path().join(format!("pred{tag}.jsonl"));
        ok(&[
            "train",
            "--corpus",
            s(&train),
            "--config",
            s(&config),
            "--epochs",
            "2",
            "--embed-dim",
            "8",
            "--out",
            s(&model),
            "--report",
            s(&report),
        ]);
        ok(&["predict", "--model", s(&model), s(&test), "--out", s(&pred)]);
        (
            fs::read(model).unwrap(),
            fs::read(report).unwrap(),
            fs::read(pred).unwrap(),
        )
    };
    let first = run("a");
    assert_eq!(first, run("b"));

    let report: Value = serde_json::from_slice(&first.1).unwrap();
    assert_eq!(report["epoch_loss"].as_array().unwrap().len(), 2);
    let pred = String::from_utf8(first.2).unwrap();
    let predicted = parse_corpus(&pred, None).unwrap();
    let gold = parse_corpus(&fs::read_to_string(&test).unwrap(), None).unwrap();
    assert_eq!(predicted.len(), gold.len());
    for (p, g) in predicted.sentences().iter().zip(gold.sentences()) {
        assert_eq!(p.tokens(), g.tokens());
    }
    let p = write(&dir, "p.jsonl", &pred);
    ok(&["eval", "--gold", s(&test), "--pred", s(&p)]);

    let out = mulco(&[
        "train",
        "--corpus",
        s(&train),
        "--out",
        s(&dir.path().join("m")),
        "--dropout",
        "1.5",
    ]);
    assert!(!out.status.success());
    let bad = write(&dir, "bad.json", r#"{"epoch": 2}"#);
    let out = mulco(&[
        "train",
        "--corpus",
        s(&train),
        "--out",
        s(&dir.path().join("m")),
        "--config",
        s(&bad),
    ]);
    assert!(!out.status.success());
}

#[test]
fn baseline_runs() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.jsonl");
    ok(&["gen-toy", "--size", "40", "--seed", "3", "--out", s(&train)]);
    let v: Value = serde_json::from_str(&ok(&[
        "baseline",
        "--variant",
        "outermost",
        "--corpus",
        s(&train),
        "--test",
        s(&train),
        "--epochs",
        "1",
        "--hidden",
        "4",
        "--embed-dim",
        "4",
        "--format",
        "json",
    ]))
    .unwrap();
    assert!(v["micro"]["recall"].as_f64().unwrap() <= 1.0);
}

#[test]
fn external_embeddings_pipeline() {
    let dir = TempDir::new().unwrap();
    let corpus = write(
        &dir,
        "c.jsonl",
        "{\"text\":\"abc\",\"entities\":[{\"start\":0,\"end\":2,\"category\":\"X\"}]}\n{\"text\":\"de\",\"entities\":[]}\n",
    );
    let vecs = write(
        &dir,
        "v.jsonl",
        "{\"vectors\":[[0.1,0.2],[0.3,0.4],[0.5,0.6]]}\n{\"vectors\":[[0.0,1.0],[1.0,0.0]]}\n",
    );
    let model = dir.path().join("m.bin");
    ok(&[
        "train",
        "--corpus",
        s(&corpus),
        "--embeddings",
        s(&vecs),
        "--epochs",
        "2",
        "--hidden",
        "4",
        "--validation-fraction",
        "0",
        "--out",
        s(&model),
        "--report",
        s(&dir.path().join("r.json")),
    ]);
    let pred = ok(&["predict", "--model", s(&model), s(&corpus), "--embeddings", s(&vecs)]);
    assert_eq!(parse_corpus(&pred, None).unwrap().len(), 2);
    assert!(!mulco(&["predict", "--model", s(&model), s(&corpus)]).status.success());
}
