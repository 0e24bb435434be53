//! Route-level behaviour, driven in-process through the router.

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use defquest::pipeline::PipelineConfig;
use defquest_service::{router, ApiOptions, Store};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

const FIXTURES: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../core/fixtures");

fn fixture(name: &str) -> String {
    std::fs::read_to_string(format!("{FIXTURES}/{name}")).unwrap()
}

fn offline_config() -> PipelineConfig {
    PipelineConfig::offline(format!("{FIXTURES}/biology_gold.conllu"))
}

struct Client {
    app: Router,
    _dir: tempfile::TempDir,
}

impl Client {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        Client {
            app: router(Arc::new(store), ApiOptions::default()),
            _dir: dir,
        }
    }

    async fn call(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
        let mut req = Request::builder().method(method).uri(uri);
        let body = match body {
            Some(v) => {
                req = req.header("content-type", "application/json");
                Body::from(serde_json::to_vec(&v).unwrap())
            }
            None => Body::empty(),
        };
        let resp = self.app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
        let status = resp.status();
        (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
    }

    async fn json(&self, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let (status, bytes) = self.call(method, uri, body).await;
        (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
    }

    /// Uploads the biology chapter and generates its questions.
    async fn with_fixture_questions(self) -> Self {
        let (status, body) = self
            .json(
                Method::POST,
                "/api/books",
                Some(json!({ "book_id": "bio", "text": fixture("biology_chapter.md"), "index": fixture("biology_index.txt") })),
            )
            .await;
        assert_eq!(status, StatusCode::CREATED, "{body}");
        let (status, body) = self
            .json(
                Method::POST,
                "/api/books/bio/generate",
                Some(serde_json::to_value(offline_config()).unwrap()),
            )
            .await;
        assert_eq!(status, StatusCode::OK, "{body}");
        self
    }
}

fn encode(id: &str) -> String {
    id.replace('/', "%2F")
}

#[tokio::test]
async fn generate_matches_golden_export() {
    let c = Client::new();
    c.json(
        Method::POST,
        "/api/books",
        Some(json!({ "book_id": "bio", "text": fixture("biology_chapter.md"), "index": fixture("biology_index.txt") })),
    )
    .await;
    let (status, summary) = c
        .json(
            Method::POST,
            "/api/books/bio/generate",
            Some(serde_json::to_value(offline_config()).unwrap()),
        )
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(summary["question_count"], 6);
    assert_eq!(summary["per_stage_counts"]["keyword_filtered"], 20);
    assert_eq!(summary["per_stage_counts"]["context_selected"], 7);
    let (status, bytes) = c.call(Method::GET, "/api/books/bio/questions.jsonl", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(String::from_utf8(bytes).unwrap(), fixture("golden_questions.jsonl"));
}

#[tokio::test]
async fn accepted_questions_are_listed() {
    let c = Client::new().with_fixture_questions().await;
    let (_, page) = c
        .json(Method::GET, "/api/questions?book=bio&status=pending", None)
        .await;
    assert_eq!(page["total"], 6);
    let first = &page["items"][0];
    assert_eq!(first["question"]["question_id"], "bio/2/3/1/q");
    assert!(first["paragraph_text"]
        .as_str()
        .unwrap()
        .starts_with("The nucleus refers to"));

    let uri = format!("/api/questions/{}/decision", encode("bio/2/3/1/q"));
    let (status, _) = c
        .call(
            Method::POST,
            &uri,
            Some(json!({ "author_id": "a", "verdict": "accept" })),
        )
        .await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, page) = c
        .json(Method::GET, "/api/questions?book=bio&status=accepted", None)
        .await;
    assert_eq!(page["total"], 1);
    assert_eq!(page["items"][0]["question"]["question_id"], "bio/2/3/1/q");

    let (status, _) = c
        .call(
            Method::POST,
            &uri,
            Some(json!({ "author_id": "a", "verdict": "reject" })),
        )
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let edit =
        json!({ "author_id": "a", "verdict": "edit", "edited_text": "What does the nucleus store?", "force": true });
    let (status, _) = c.call(Method::POST, &uri, Some(edit)).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (_, page) = c.json(Method::GET, "/api/questions?status=accepted", None).await;
    assert_eq!(page["items"][0]["text"], "What does the nucleus store?");
}

#[tokio::test]
async fn paging() {
    let c = Client::new().with_fixture_questions().await;
    let (_, page) = c
        .json(Method::GET, "/api/questions?book=bio&page=2&per_page=4", None)
        .await;
    assert_eq!(page["total"], 6);
    assert_eq!(page["items"].as_array().unwrap().len(), 2);
    let (status, _) = c.call(Method::GET, "/api/questions?page=0", None).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn error_statuses() {
    let c = Client::new().with_fixture_questions().await;
    let decision = json!({ "author_id": "a", "verdict": "accept" });
    let cases = [
        (
            Method::POST,
            "/api/books/nope/generate".to_string(),
            Some(serde_json::to_value(offline_config()).unwrap()),
            StatusCode::NOT_FOUND,
        ),
        (
            Method::GET,
            "/api/questions?book=nope".into(),
            None,
            StatusCode::NOT_FOUND,
        ),
        (
            Method::GET,
            "/api/questions?status=maybe".into(),
            None,
            StatusCode::BAD_REQUEST,
        ),
        (
            Method::POST,
            "/api/questions/nope/decision".into(),
            Some(decision.clone()),
            StatusCode::NOT_FOUND,
        ),
        (
            Method::POST,
            format!("/api/questions/{}/decision", encode("bio/2/3/1/q")),
            Some(json!({ "verdict": "accept" })),
            StatusCode::BAD_REQUEST,
        ),
        (
            Method::POST,
            format!("/api/questions/{}/decision", encode("bio/2/3/1/q")),
            Some(json!({ "author_id": "a", "verdict": "edit", "edited_text": "no question mark" })),
            StatusCode::BAD_REQUEST,
        ),
        (
            Method::POST,
            "/api/books".into(),
            Some(json!({ "book_id": "bio", "text": "# X\n\nA b.", "index": ["b"] })),
            StatusCode::CONFLICT,
        ),
        (
            Method::POST,
            "/api/books".into(),
            Some(json!({ "text": "x" })),
            StatusCode::BAD_REQUEST,
        ),
        (
            Method::GET,
            "/api/reports/agreement?item=nope".into(),
            None,
            StatusCode::NOT_FOUND,
        ),
        (
            Method::GET,
            "/api/books/bio/sweep?thresholds=0.7,0.5".into(),
            None,
            StatusCode::BAD_REQUEST,
        ),
    ];
    for (method, uri, body, expected) in cases {
        let (status, body) = c.json(method.clone(), &uri, body).await;
        assert_eq!(status, expected, "{method} {uri}: {body}");
        assert!(body["error"].is_string(), "{uri}");
    }
}

#[tokio::test]
async fn annotations_are_normalized_and_reported() {
    let c = Client::new().with_fixture_questions().await;
    let id = "bio/2/3/1/q";
    let uri = format!("/api/questions/{}/annotations", encode(id));
    for (rater, answerable) in [("r1", "No"), ("r2", "yes")] {
        let record = json!({
            "question_id": id,
            "rater_id": rater,
            "responses": { "understandable": "yes", "grammatical": "yes", "answerable": answerable, "central": "yes" },
            "ts": ""
        });
        let (status, _) = c.call(Method::POST, &uri, Some(record)).await;
        assert_eq!(status, StatusCode::NO_CONTENT);
    }
    let (_, stored) = c.json(Method::GET, &uri, None).await;
    assert_eq!(stored[0]["responses"]["answerable"], "no");
    for item in ["informationNeeded", "central", "wouldYouUseIt"] {
        assert_eq!(stored[0]["responses"][item], "NA");
    }
    assert!(!stored[0]["ts"].as_str().unwrap().is_empty());

    let bad = json!({ "question_id": id, "rater_id": "r3", "responses": { "understandable": "perhaps" }, "ts": "" });
    assert_eq!(c.call(Method::POST, &uri, Some(bad)).await.0, StatusCode::BAD_REQUEST);

    let (status, report) = c
        .json(Method::GET, "/api/reports/agreement?item=understandable", None)
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report[0]["percent_agreement"], 1.0);
    assert_eq!(report[0]["alpha"], 1.0);

    let (_, dist) = c.json(Method::GET, "/api/reports/distribution", None).await;
    let central = dist
        .as_array()
        .unwrap()
        .iter()
        .find(|d| d["item"] == "central")
        .unwrap();
    assert_eq!(central["applicable"], 1);
}

#[tokio::test]
async fn sweep_uses_last_generation_config() {
    let c = Client::new().with_fixture_questions().await;
    let (status, points) = c
        .json(Method::GET, "/api/books/bio/sweep?thresholds=0.5,0.7,0.9", None)
        .await;
    assert_eq!(status, StatusCode::OK);
    let counts: Vec<u64> = points
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["questions"].as_u64().unwrap())
        .collect();
    assert_eq!(counts, [11, 6, 6]);
}

#[tokio::test]
async fn annotation_queue_is_a_permutation_of_accepted() {
    let c = Client::new().with_fixture_questions().await;
    let (_, page) = c.json(Method::GET, "/api/questions", None).await;
    let mut ids: Vec<String> = page["items"]
        .as_array()
        .unwrap()
        .iter()
        .map(|q| q["question"]["question_id"].as_str().unwrap().to_string())
        .collect();
    for id in &ids {
        let uri = format!("/api/questions/{}/decision", encode(id));
        c.call(
            Method::POST,
            &uri,
            Some(json!({ "author_id": "a", "verdict": "accept" })),
        )
        .await;
    }
    let (_, a) = c.json(Method::GET, "/api/annotation-queue?rater=r1&seed=3", None).await;
    let (_, b) = c.json(Method::GET, "/api/annotation-queue?rater=r1&seed=3", None).await;
    assert_eq!(a, b);
    let mut queue: Vec<String> = serde_json::from_value(a).unwrap();
    queue.sort();
    ids.sort();
    assert_eq!(queue, ids);
}

#[tokio::test]
async fn scheme_and_books() {
    let c = Client::new().with_fixture_questions().await;
    let (_, scheme) = c.json(Method::GET, "/api/scheme", None).await;
    assert_eq!(scheme["items"].as_array().unwrap().len(), 9);
    let (_, books) = c.json(Method::GET, "/api/books", None).await;
    assert_eq!(books[0]["book_id"], "bio");
    assert_eq!(books[0]["questions"], 6);
}
