mod common;

use std::fs;

use axum::http::{Method, StatusCode};
use serde_json::{json, Value};
use tempfile::TempDir;

use befund_cli::{run, EXIT_DATA, EXIT_OK, EXIT_USAGE};
use befund_core::io::read_labels_from;
use common::*;

fn befund(args: &[&str]) -> i32 {
    run(std::iter::once("befund").chain(args.iter().copied()))
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(befund(&["label", "--bogus"]), EXIT_USAGE);
    assert_eq!(befund(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(befund(&[]), EXIT_USAGE);
    assert_eq!(befund(&["--help"]), EXIT_OK);
    assert_eq!(befund(&["--version"]), EXIT_OK);
}

#[test]
fn data_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out.csv");
    let lexicon = workspace().join("lexicon");
    let missing = tmp.path().join("missing.jsonl");
    assert_eq!(
        befund(&["label", "--corpus", missing.to_str().unwrap(), "--lexicon", lexicon.to_str().unwrap(), "--out", out.to_str().unwrap()]),
        EXIT_DATA
    );
    let corpus = workspace().join("data/corpus.jsonl");
    assert_eq!(
        befund(&["label", "--corpus", corpus.to_str().unwrap(), "--lexicon", lexicon.to_str().unwrap(), "--out", out.to_str().unwrap(), "--radius", "0"]),
        EXIT_DATA
    );
    assert_eq!(befund(&["lexicon", "validate", "--lexicon", tmp.path().join("nope").to_str().unwrap()]), EXIT_DATA);
}

#[test]
fn label_and_eval_on_bundled_corpus() {
    let tmp = TempDir::new().unwrap();
    let root = workspace();
    let (corpus, lexicon, gold) = (root.join("data/corpus.jsonl"), root.join("lexicon"), root.join("data/gold.csv"));
    let pred = tmp.path().join("pred.csv");
    let mentions = tmp.path().join("mentions.jsonl");
    let code = befund(&[
        "label", "--corpus", corpus.to_str().unwrap(), "--lexicon", lexicon.to_str().unwrap(),
        "--out", pred.to_str().unwrap(), "--threads", "3", "--mentions", mentions.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let rows = read_labels_from(fs::File::open(&pred).unwrap()).unwrap();
    assert_eq!(rows.len(), fs::read_to_string(&corpus).unwrap().lines().count());
    assert_eq!(fs::read_to_string(&mentions).unwrap().lines().count(), rows.len());

    let out = tmp.path().join("eval.json");
    let code = befund(&[
        "eval", "--pred", pred.to_str().unwrap(), "--gold", gold.to_str().unwrap(),
        "--bootstrap", "200", "--seed", "7", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let report: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let ci = &report["pneumothorax"]["negation"]["f1"]["ci"];
    assert_eq!(ci, &json!([1.0, 1.0]));

    // a gold file that is missing a report is a data error
    let short = tmp.path().join("short.csv");
    let text = fs::read_to_string(&gold).unwrap();
    fs::write(&short, text.lines().take(5).collect::<Vec<_>>().join("\n") + "\n").unwrap();
    let code = befund(&["eval", "--pred", pred.to_str().unwrap(), "--gold", short.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn validate_shipped_lexicon() {
    let lexicon = workspace().join("lexicon");
    assert_eq!(befund(&["lexicon", "validate", "--lexicon", lexicon.to_str().unwrap()]), EXIT_OK);
}

#[tokio::test]
async fn progress_and_next_report() {
    let fx = fixture();
    let (status, body) = call_json(&fx.app, Method::GET, "/api/progress?annotator=ann", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"completed": 0, "total": 2}));

    let (status, _) = call_json(&fx.app, Method::GET, "/api/progress", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call_json(&fx.app, Method::GET, "/api/reports?annotator=ann", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["report_id"], "r1");
    assert_eq!(body["view_position"], "Thorax im Liegen");
    let highlights = body["highlights"].as_array().unwrap();
    assert!(highlights.iter().any(|h| h["class"] == "pneumothorax" && h["classification"] == "negative"));

    let (status, body) = call_json(&fx.app, Method::GET, "/api/reports/r2", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["highlights"], json!([]));
    let (status, _) = call_json(&fx.app, Method::GET, "/api/reports/zzz", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn save_flow_and_revisions() {
    let fx = fixture();
    let plain = json!({"annotator_id": "ann", "labels": labels(&[]), "revision": 1, "confirm": false});
    let (status, body) = call_json(&fx.app, Method::POST, "/api/reports/r2/annotation", Some(plain.clone())).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["status"], "saved");

    // same revision again is stale
    let (status, body) = call_json(&fx.app, Method::POST, "/api/reports/r2/annotation", Some(plain)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "stale_revision");

    let (status, body) = call_json(&fx.app, Method::GET, "/api/reports/r2?annotator=ann", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["annotation"]["revision"], 1);

    // SelectedButUnrecognized carries no evidence
    let positive = json!({"annotator_id": "ann", "labels": labels(&[("fracture", "positive")]), "revision": 2});
    let (status, body) = call_json(&fx.app, Method::POST, "/api/reports/r2/annotation", Some(positive)).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["conflicts"], json!([{"kind": "selected_but_unrecognized", "class": "fracture", "evidence": []}]));

    let (status, _) = call_json(&fx.app, Method::POST, "/api/reports/nope/annotation",
        Some(json!({"annotator_id": "ann", "labels": labels(&[]), "revision": 1}))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let (status, _) = call(&fx.app, Method::POST, "/api/reports/r2/annotation", Some(json!({"labels": {}}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (status, body) = call_json(&fx.app, Method::GET, "/api/progress?annotator=ann", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["completed"], 1);
    let (_, body) = call_json(&fx.app, Method::GET, "/api/reports?annotator=ann", None).await;
    assert_eq!(body["report_id"], "r1");
}

#[tokio::test]
async fn add_phrase_feeds_highlights() {
    let fx = fixture();
    let add = |surface: &str, class: &str| json!({"class": class, "polarity": "positive", "surface": surface, "annotator_id": "ann"});
    let (status, body) = call_json(&fx.app, Method::POST, "/api/phrases", Some(add("Darstellung", "lung_opacity"))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["outcome"], "added");
    let (_, body) = call_json(&fx.app, Method::POST, "/api/phrases", Some(add("darstellung", "lung_opacity"))).await;
    assert_eq!(body["outcome"], "already_present");
    let (status, _) = call_json(&fx.app, Method::POST, "/api/phrases", Some(add("x", "no_finding"))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, body) = call_json(&fx.app, Method::GET, "/api/reports/r2", None).await;
    let h = &body["highlights"][0];
    assert_eq!(h["class"], "lung_opacity");
    assert_eq!(&PLAIN_REPORT[h["start"].as_u64().unwrap() as usize..h["end"].as_u64().unwrap() as usize], "Darstellung");

    let file = fs::read_to_string(fx.lexicon_dir().join("lung_opacity/positive.txt")).unwrap();
    assert!(file.lines().any(|l| l == "Darstellung"));
    let audit = fs::read_to_string(fx.store_dir().join("phrase_audit.jsonl")).unwrap();
    assert_eq!(audit.lines().count(), 2);
}

#[tokio::test]
async fn export_requires_annotator_when_ambiguous() {
    let fx = fixture();
    for annotator in ["a", "b"] {
        let body = json!({"annotator_id": annotator, "labels": labels(&[]), "revision": 1});
        let (status, _) = call_json(&fx.app, Method::POST, "/api/reports/r2/annotation", Some(body)).await;
        assert_eq!(status, StatusCode::OK);
    }
    let (status, _) = call(&fx.app, Method::GET, "/api/export.csv", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, csv) = call(&fx.app, Method::GET, "/api/export.csv?annotator=b", None).await;
    assert_eq!(status, StatusCode::OK);
    let rows = read_labels_from(csv.as_slice()).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].report_id, "r2");
}

#[tokio::test]
async fn root_serves_placeholder() {
    let fx = fixture();
    let (status, body) = call(&fx.app, Method::GET, "/", None).await;
    assert_eq!(status, StatusCode::OK);
    assert!(String::from_utf8(body).unwrap().contains("--ui"));
}
