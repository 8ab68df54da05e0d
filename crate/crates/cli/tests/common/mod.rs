#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::Value;
use tempfile::TempDir;
use tower::ServiceExt;

use befund_cli::server::router;
use befund_core::annotation::AnnotationService;
use befund_core::io::write_corpus;
use befund_core::lexicon::{save_lexicons, LexiconStore};
use befund_core::{
    CutoffRadius, Lexicons, ObservationClass, PhraseLexicon, Polarity, ReportRecord, TriggerLexicon,
};

pub const PTX_REPORT: &str = "Keine pleurale Dehiszenz im Sinne eines Pneumothorax. Geringe pulmonalvenöse Stauung.";
pub const PLAIN_REPORT: &str = "Unveränderte Darstellung.";

pub fn workspace() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn seeded_lexicons() -> Lexicons {
    use ObservationClass::*;
    let phrases = [
        (Pneumothorax, "Pneumothorax"),
        (Pneumothorax, "pleurale Dehiszenz"),
        (Edema, "Stauung"),
    ]
    .iter()
    .fold(PhraseLexicon::new(), |lex, (c, s)| lex.with_phrase(*c, Polarity::Positive, s).unwrap().0);
    Lexicons::new(phrases, TriggerLexicon::starter())
}

pub struct Fixture {
    pub dir: TempDir,
    pub service: Arc<AnnotationService>,
    pub app: Router,
}

impl Fixture {
    pub fn lexicon_dir(&self) -> PathBuf {
        self.dir.path().join("lexicon")
    }

    pub fn store_dir(&self) -> PathBuf {
        self.dir.path().join("store")
    }
}

pub fn corpus() -> Vec<ReportRecord> {
    vec![
        ReportRecord {
            report_id: "r1".into(),
            view_position: Some("Thorax im Liegen".into()),
            text: PTX_REPORT.into(),
        },
        ReportRecord {
            report_id: "r2".into(),
            view_position: None,
            text: PLAIN_REPORT.into(),
        },
    ]
}

pub fn open_service(lexicon_dir: &Path, store_dir: &Path) -> Arc<AnnotationService> {
    let (lexicons, _) = LexiconStore::open(lexicon_dir).unwrap();
    Arc::new(AnnotationService::new(corpus(), lexicons, store_dir, CutoffRadius::DEFAULT).unwrap())
}

pub fn fixture() -> Fixture {
    let dir = TempDir::new().unwrap();
    save_lexicons(&dir.path().join("lexicon"), &seeded_lexicons()).unwrap();
    write_corpus(&corpus(), &dir.path().join("corpus.jsonl")).unwrap();
    let service = open_service(&dir.path().join("lexicon"), &dir.path().join("store"));
    let app = router(Arc::clone(&service), None);
    Fixture { dir, service, app }
}

pub async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header("content-type", "application/json");
            Body::from(serde_json::to_vec(&v).unwrap())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

pub async fn call_json(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let (status, bytes) = call(app, method, uri, body).await;
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

/// Labels object with every class "none" except the given overrides.
pub fn labels(overrides: &[(&str, &str)]) -> Value {
    let mut map = serde_json::Map::new();
    for class in ObservationClass::ALL {
        map.insert(class.snake_name().into(), "none".into());
    }
    for (k, v) in overrides {
        map.insert((*k).into(), (*v).into());
    }
    Value::Object(map)
}
