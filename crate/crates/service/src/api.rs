//! JSON routes over a [`Store`].
//!
//! Question ids contain `/`, so clients percent-encode them in paths
//! (`bio%2F2%2F3%2F1%2Fq`).

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use axum::extract::{Path, Query, State as AxumState};
use axum::http::{header, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use defquest::corpus::load_index;
use defquest::evalkit::{agreement_report, distribution_report, AnnotationRecord, BootstrapConfig};
use defquest::generation::{write_question_jsonl, QuestionRecord};
use defquest::pipeline::{ask, threshold_sweep, Backends, FailureClass, PipelineConfig, PipelineError, StageCounts};
use defquest::rng::{partial_shuffle, seeded_stream};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, CorsLayer};
use tower_http::services::ServeDir;

use crate::store::{BookEntry, CurationDecision, Status, Store, StoreError, Verdict};

#[derive(Debug, Clone)]
pub struct ApiOptions {
    /// Upper bound on one synchronous generation or sweep request.
    pub generate_timeout: Duration,
    /// Directory with the built UI bundle, served for non-API paths.
    pub ui_dir: Option<PathBuf>,
    /// Allowed CORS origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for ApiOptions {
    fn default() -> Self {
        ApiOptions {
            generate_timeout: Duration::from_secs(300),
            ui_dir: None,
            cors_origin: None,
        }
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let status = match &e {
            StoreError::NotFound(_) => StatusCode::NOT_FOUND,
            StoreError::Conflict(_) => StatusCode::CONFLICT,
            StoreError::Invalid(_) => StatusCode::BAD_REQUEST,
            StoreError::Corrupt { .. } | StoreError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        let status = match e.class() {
            FailureClass::Usage | FailureClass::Data => StatusCode::BAD_REQUEST,
            FailureClass::Service => StatusCode::BAD_GATEWAY,
        };
        ApiError::new(status, e.to_string())
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// `Query` with rejections reported in the JSON error shape.
struct ApiQuery<T>(T);

impl<T, S> axum::extract::FromRequestParts<S> for ApiQuery<T>
where
    T: serde::de::DeserializeOwned,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut axum::http::request::Parts, state: &S) -> Result<Self, Self::Rejection> {
        Query::<T>::from_request_parts(parts, state)
            .await
            .map(|Query(q)| ApiQuery(q))
            .map_err(|e| ApiError::bad_request(e.body_text()))
    }
}

#[derive(Clone)]
struct App {
    store: Arc<Store>,
    options: Arc<ApiOptions>,
}

pub fn router(store: Arc<Store>, options: ApiOptions) -> Router {
    let cors = match &options.cors_origin {
        Some(origin) => CorsLayer::new()
            .allow_origin(AllowOrigin::exact(
                HeaderValue::from_str(origin).expect("valid origin header"),
            ))
            .allow_methods(tower_http::cors::Any)
            .allow_headers(tower_http::cors::Any),
        None => CorsLayer::permissive(),
    };
    let ui_dir = options.ui_dir.clone();
    let app = App {
        store,
        options: Arc::new(options),
    };
    let api = Router::new()
        .route("/api/books", post(add_book).get(list_books))
        .route("/api/books/{id}/generate", post(generate))
        .route("/api/books/{id}/questions.jsonl", get(export_questions))
        .route("/api/books/{id}/sweep", get(sweep))
        .route("/api/questions", get(list_questions))
        .route("/api/questions/{id}/decision", post(decide))
        .route(
            "/api/questions/{id}/annotations",
            post(annotate).get(question_annotations),
        )
        .route("/api/scheme", get(scheme))
        .route("/api/annotation-queue", get(annotation_queue))
        .route("/api/reports/agreement", get(agreement))
        .route("/api/reports/distribution", get(distribution))
        .with_state(app);
    let api = match ui_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    api.layer(cors)
}

fn json_body<T: serde::de::DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid payload: {e}")))
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum IndexPayload {
    Entries(Vec<String>),
    Text(String),
}

#[derive(Debug, Deserialize)]
struct BookPayload {
    book_id: String,
    text: String,
    index: IndexPayload,
}

async fn add_book(AxumState(app): AxumState<App>, body: axum::body::Bytes) -> ApiResult<impl IntoResponse> {
    let payload: BookPayload = json_body(&body)?;
    let index = match payload.index {
        IndexPayload::Entries(entries) => entries,
        IndexPayload::Text(text) => load_index(&text)
            .map_err(|e| ApiError::bad_request(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect(),
    };
    let book_id = payload.book_id.clone();
    app.store.add_book(BookEntry {
        book_id: payload.book_id,
        text: payload.text,
        index,
    })?;
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "book_id": book_id }))))
}

#[derive(Serialize)]
struct BookSummary {
    book_id: String,
    title: String,
    sections: usize,
    sentences: usize,
    questions: usize,
    counts: Option<StageCounts>,
}

async fn list_books(AxumState(app): AxumState<App>) -> Json<Vec<BookSummary>> {
    Json(app.store.read(|s| {
        s.books
            .values()
            .map(|b| BookSummary {
                book_id: b.entry.book_id.clone(),
                title: b.textbook.title.clone(),
                sections: b.textbook.sections.len(),
                sentences: b.textbook.sentences().count(),
                questions: b.question_ids.len(),
                counts: b.counts,
            })
            .collect()
    }))
}

/// Runs blocking pipeline work off the async runtime, bounded by the
/// configured timeout.
async fn blocking<T: Send + 'static>(app: &App, f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    let task = tokio::task::spawn_blocking(f);
    match tokio::time::timeout(app.options.generate_timeout, task).await {
        Ok(Ok(result)) => result,
        Ok(Err(e)) => Err(ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())),
        Err(_) => Err(ApiError::new(StatusCode::GATEWAY_TIMEOUT, "request timed out")),
    }
}

#[derive(Serialize)]
struct GenerateSummary {
    question_count: usize,
    per_stage_counts: StageCounts,
    config_hash: String,
}

async fn generate(
    AxumState(app): AxumState<App>,
    Path(book_id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<Json<GenerateSummary>> {
    let config: PipelineConfig = json_body(&body)?;
    let (book, index) = app
        .store
        .read(|s| {
            s.books
                .get(&book_id)
                .map(|b| (b.textbook.clone(), b.entry.index.clone()))
        })
        .ok_or_else(|| ApiError::from(StoreError::NotFound(format!("book {book_id}"))))?;
    let run = blocking(&app, {
        let config = config.clone();
        move || {
            let backends = Backends::from_config(&config)?;
            let index = defquest::corpus::ConceptIndex::new(index);
            Ok(ask(&book, &index, &config, &backends)?)
        }
    })
    .await?;
    let counts = run.manifest.counts;
    app.store.add_questions(&book_id, config, counts, run.records)?;
    Ok(Json(GenerateSummary {
        question_count: counts.questions,
        per_stage_counts: counts,
        config_hash: run.manifest.config_hash,
    }))
}

/// The book's current questions as generated, in the pipeline's JSONL form.
async fn export_questions(AxumState(app): AxumState<App>, Path(book_id): Path<String>) -> ApiResult<Response> {
    let records: Vec<QuestionRecord> = app
        .store
        .read(|s| {
            s.books
                .get(&book_id)
                .map(|b| b.question_ids.iter().map(|id| s.questions[id].record.clone()).collect())
        })
        .ok_or_else(|| ApiError::from(StoreError::NotFound(format!("book {book_id}"))))?;
    Ok((
        [(header::CONTENT_TYPE, "application/x-ndjson")],
        write_question_jsonl(&records),
    )
        .into_response())
}

#[derive(Deserialize)]
struct SweepQuery {
    thresholds: String,
}

#[derive(Serialize)]
struct SweepPoint {
    threshold: f64,
    questions: usize,
}

/// Question counts at other thresholds, using the book's last generation
/// configuration.
async fn sweep(
    AxumState(app): AxumState<App>,
    Path(book_id): Path<String>,
    ApiQuery(q): ApiQuery<SweepQuery>,
) -> ApiResult<Json<Vec<SweepPoint>>> {
    let thresholds = q
        .thresholds
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ApiError::bad_request(format!("thresholds: {e}")))?;
    let (book, index, config) = app
        .store
        .read(|s| {
            s.books
                .get(&book_id)
                .map(|b| (b.textbook.clone(), b.entry.index.clone(), b.config.clone()))
        })
        .ok_or_else(|| ApiError::from(StoreError::NotFound(format!("book {book_id}"))))?;
    let config = config.ok_or_else(|| {
        ApiError::new(
            StatusCode::CONFLICT,
            format!("book {book_id} has not been generated yet"),
        )
    })?;
    let points = blocking(&app, move || {
        let backends = Backends::from_config(&config)?;
        let index = defquest::corpus::ConceptIndex::new(index);
        Ok(threshold_sweep(&book, &index, &backends, &thresholds)?)
    })
    .await?;
    Ok(Json(
        points
            .into_iter()
            .map(|(threshold, questions)| SweepPoint { threshold, questions })
            .collect(),
    ))
}

#[derive(Deserialize)]
struct QuestionQuery {
    book: Option<String>,
    status: Option<Status>,
    #[serde(default = "first_page")]
    page: usize,
    #[serde(default = "default_per_page")]
    per_page: usize,
}

fn first_page() -> usize {
    1
}

fn default_per_page() -> usize {
    50
}

#[derive(Serialize)]
struct QuestionView {
    question: QuestionRecord,
    status: Status,
    /// Question text after curation.
    text: String,
    decision: Option<CurationDecision>,
    paragraph_text: String,
}

#[derive(Serialize)]
struct QuestionPage {
    total: usize,
    page: usize,
    per_page: usize,
    items: Vec<QuestionView>,
}

async fn list_questions(
    AxumState(app): AxumState<App>,
    ApiQuery(q): ApiQuery<QuestionQuery>,
) -> ApiResult<Json<QuestionPage>> {
    if q.page == 0 || q.per_page == 0 || q.per_page > 500 {
        return Err(ApiError::bad_request("page starts at 1 and per_page must be 1..=500"));
    }
    app.store.read(|s| {
        let books: Vec<&crate::store::BookState> = match &q.book {
            Some(id) => vec![s
                .books
                .get(id)
                .ok_or_else(|| ApiError::from(StoreError::NotFound(format!("book {id}"))))?],
            None => s.books.values().collect(),
        };
        let matching: Vec<(&crate::store::BookState, &crate::store::QuestionState)> = books
            .into_iter()
            .flat_map(|b| b.question_ids.iter().map(move |id| (b, &s.questions[id])))
            .filter(|(_, qs)| q.status.is_none_or(|st| qs.status == st))
            .collect();
        let items = matching
            .iter()
            .skip((q.page - 1) * q.per_page)
            .take(q.per_page)
            .map(|(b, qs)| QuestionView {
                question: qs.record.clone(),
                status: qs.status,
                text: qs.text().to_string(),
                decision: qs.decision.clone(),
                paragraph_text: b
                    .textbook
                    .paragraph(&qs.record.paragraph_id)
                    .map(|p| p.text.clone())
                    .unwrap_or_default(),
            })
            .collect();
        Ok(Json(QuestionPage {
            total: matching.len(),
            page: q.page,
            per_page: q.per_page,
            items,
        }))
    })
}

#[derive(Deserialize)]
struct DecisionPayload {
    #[serde(default)]
    question_id: Option<String>,
    author_id: String,
    verdict: Verdict,
    #[serde(default)]
    edited_text: Option<String>,
    #[serde(default)]
    ts: Option<String>,
    #[serde(default)]
    force: bool,
}

fn path_matches(path_id: &str, body_id: Option<&str>) -> ApiResult<()> {
    match body_id {
        Some(id) if !id.is_empty() && id != path_id => Err(ApiError::bad_request(format!(
            "question id {id} in body differs from {path_id} in path"
        ))),
        _ => Ok(()),
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

async fn decide(
    AxumState(app): AxumState<App>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<StatusCode> {
    let p: DecisionPayload = json_body(&body)?;
    path_matches(&id, p.question_id.as_deref())?;
    app.store.decide(CurationDecision {
        question_id: id,
        author_id: p.author_id,
        verdict: p.verdict,
        edited_text: p.edited_text,
        ts: p.ts.unwrap_or_else(now),
        force: p.force,
    })?;
    Ok(StatusCode::NO_CONTENT)
}

async fn annotate(
    AxumState(app): AxumState<App>,
    Path(id): Path<String>,
    body: axum::body::Bytes,
) -> ApiResult<StatusCode> {
    let mut record: AnnotationRecord = json_body(&body)?;
    path_matches(&id, Some(&record.question_id))?;
    record.question_id = id;
    if record.ts.is_empty() {
        record.ts = now();
    }
    app.store.annotate(&record)?;
    Ok(StatusCode::NO_CONTENT)
}

async fn question_annotations(
    AxumState(app): AxumState<App>,
    Path(id): Path<String>,
) -> ApiResult<Json<Vec<AnnotationRecord>>> {
    app.store.read(|s| {
        if !s.questions.contains_key(&id) {
            return Err(StoreError::NotFound(format!("question {id}")).into());
        }
        Ok(Json(
            s.annotations
                .get(&id)
                .map(|m| m.values().cloned().collect())
                .unwrap_or_default(),
        ))
    })
}

async fn scheme(AxumState(app): AxumState<App>) -> Json<defquest::evalkit::AnnotationScheme> {
    Json(app.store.scheme().clone())
}

#[derive(Deserialize)]
struct QueueQuery {
    rater: String,
    #[serde(default)]
    seed: u64,
    book: Option<String>,
}

/// Accepted questions in a per-rater shuffled order.
async fn annotation_queue(
    AxumState(app): AxumState<App>,
    ApiQuery(q): ApiQuery<QueueQuery>,
) -> ApiResult<Json<Vec<String>>> {
    let mut ids: Vec<String> = app.store.read(|s| {
        s.books
            .values()
            .filter(|b| q.book.as_ref().is_none_or(|id| &b.entry.book_id == id))
            .flat_map(|b| b.question_ids.iter())
            .filter(|id| s.questions[*id].status == Status::Accepted)
            .cloned()
            .collect()
    });
    let stream = q.rater.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x100_0000_01b3)
    });
    let k = ids.len();
    partial_shuffle(&mut seeded_stream(q.seed, stream), &mut ids, k);
    Ok(Json(ids))
}

#[derive(Deserialize)]
struct AgreementQuery {
    item: Option<String>,
    /// Bootstrap resamples; no interval when absent.
    bootstrap: Option<usize>,
    n: Option<usize>,
    #[serde(default)]
    seed: u64,
}

async fn agreement(AxumState(app): AxumState<App>, ApiQuery(q): ApiQuery<AgreementQuery>) -> ApiResult<Response> {
    let records = app.store.read(|s| s.annotation_records());
    let scheme = app.store.scheme().clone();
    let bootstrap = q.bootstrap.map(|b| BootstrapConfig {
        resamples: b,
        sample_size: q.n.unwrap_or(BootstrapConfig::default().sample_size),
        seed: q.seed,
        ..BootstrapConfig::default()
    });
    let report = blocking(&app, move || {
        agreement_report(&records, &scheme, q.item.as_deref(), bootstrap.as_ref()).map_err(|e| match e {
            defquest::evalkit::EvalError::UnknownItem(_) => ApiError::new(StatusCode::NOT_FOUND, e.to_string()),
            e => ApiError::bad_request(e.to_string()),
        })
    })
    .await?;
    Ok(Json(report).into_response())
}

async fn distribution(AxumState(app): AxumState<App>) -> Json<Vec<defquest::evalkit::ItemDistribution>> {
    let records = app.store.read(|s| s.annotation_records());
    Json(distribution_report(&records, app.store.scheme()))
}
