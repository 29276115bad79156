//! JSON-over-HTTP front end for a knowledge base.

use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use parking_lot::{Mutex, RwLock};
use rexcbr_core::adaptation::AdaptationError;
use rexcbr_core::exact::{self, Rational};
use rexcbr_core::model::{ModelError, Violation};
use rexcbr_core::retrieval::RetrievalError;
use rexcbr_core::similarity::SimilarityError;
use rexcbr_core::storage::{to_canonical_value, BaseDir, StorageError};
use rexcbr_core::{
    collect_candidates, decide, explain_ranking, retrieve, AdaptationDecision, CaseId,
    KnowledgeBase, LearningError, MissingPolicy, Origin, RetrievalQuery, RetrievalResult,
    SolutionCandidate, TargetCase, Timestamp, Verdict, Weight, WeightVector,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const DEFAULT_PAGE: usize = 50;
pub const MAX_PAGE: usize = 500;
pub const DEFAULT_SESSION_TTL: Duration = Duration::from_secs(2 * 60 * 60);

#[derive(Debug, Clone)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: &'static str,
    pub message: String,
    pub details: Vec<Violation>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
            details: Vec::new(),
        }
    }

    pub fn malformed(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "malformed_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    pub fn phase(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "phase_conflict", message)
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation_failed", message)
    }

    fn violations(v: Vec<Violation>) -> Self {
        let message = v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        ApiError {
            details: v,
            ..Self::invalid(message)
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl std::fmt::Display for ApiError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for ApiError {}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({"code": self.code, "message": self.message});
        if !self.details.is_empty() {
            error["details"] = self
                .details
                .iter()
                .map(|v| json!({"subject": v.subject, "message": v.message}))
                .collect();
        }
        (self.status, Json(json!({ "error": error }))).into_response()
    }
}

impl From<ModelError> for ApiError {
    fn from(e: ModelError) -> Self {
        ApiError::invalid(e.to_string())
    }
}

impl From<SimilarityError> for ApiError {
    fn from(e: SimilarityError) -> Self {
        match e {
            SimilarityError::NoIncludedDescriptor | SimilarityError::NoBasis => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "no_basis", e.to_string())
            }
            other => ApiError::invalid(other.to_string()),
        }
    }
}

impl From<RetrievalError> for ApiError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Weights(e) | RetrievalError::Similarity(e) => e.into(),
            RetrievalError::Target(v) => ApiError::violations(v),
            RetrievalError::MinSimilarity => ApiError::invalid(e.to_string()),
        }
    }
}

impl From<AdaptationError> for ApiError {
    fn from(e: AdaptationError) -> Self {
        match e {
            AdaptationError::InvalidChoice(_) => {
                ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_choice", e.to_string())
            }
            AdaptationError::EmptySolution => ApiError::invalid(e.to_string()),
            AdaptationError::UnknownCase(_) => ApiError::internal(e.to_string()),
        }
    }
}

impl From<LearningError> for ApiError {
    fn from(e: LearningError) -> Self {
        match e {
            LearningError::UnknownCase(_) => ApiError::not_found(e.to_string()),
            LearningError::IllegalTransition { .. } | LearningError::MissingExplanation(_) => {
                ApiError::new(StatusCode::CONFLICT, "illegal_transition", e.to_string())
            }
            LearningError::Validation(v) => ApiError::violations(v),
            LearningError::DecisionMismatch => ApiError::phase(e.to_string()),
            other => ApiError::internal(other.to_string()),
        }
    }
}

impl From<StorageError> for ApiError {
    fn from(e: StorageError) -> Self {
        ApiError::internal(e.to_string())
    }
}

fn reply<T: Serialize>(status: StatusCode, body: &T) -> Response {
    (status, Json(to_canonical_value(body))).into_response()
}

fn ok<T: Serialize>(body: &T) -> Response {
    reply(StatusCode::OK, body)
}

/// Any body that fails to parse into `T` is a 400; an empty body reads as `{}`.
fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    let text: &[u8] = if body.iter().all(u8::is_ascii_whitespace) {
        b"{}"
    } else {
        body
    };
    serde_json::from_slice(text).map_err(|e| ApiError::malformed(e.to_string()))
}

/// Reads a non-negative weight from a JSON number or a `"p/q"` / decimal string.
fn weight_from_json(name: &str, v: &Value) -> Result<Weight, ApiError> {
    let value = match v {
        Value::Number(n) => n.as_f64().and_then(exact::from_f64),
        Value::String(s) => exact::parse(s),
        _ => None,
    };
    value
        .and_then(Weight::new)
        .ok_or_else(|| ApiError::invalid(format!("weight for `{name}` must be a non-negative number")))
}

pub fn rational_from_json(what: &str, v: &Value) -> Result<Rational, ApiError> {
    match v {
        Value::Number(n) => n.as_f64().and_then(exact::from_f64),
        Value::String(s) => exact::parse(s),
        _ => None,
    }
    .ok_or_else(|| ApiError::invalid(format!("{what} must be a number")))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightUpdate {
    #[serde(default)]
    pub weights: serde_json::Map<String, Value>,
    pub excluded: Option<BTreeSet<String>>,
}

impl WeightUpdate {
    /// Merges into `base`: listed weights are replaced, `excluded` (when
    /// given) replaces the exclusion set wholesale.
    pub fn apply(&self, kb: &KnowledgeBase, base: &WeightVector) -> Result<WeightVector, ApiError> {
        let mut w = base.clone();
        for (name, raw) in &self.weights {
            w.weights.insert(name.clone(), weight_from_json(name, raw)?);
        }
        if let Some(excluded) = &self.excluded {
            w.excluded = excluded.clone();
        }
        w.validate(kb.schema())?;
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Entry,
    Retrieved,
    Adapted,
    Committed,
}

#[derive(Debug, Clone)]
struct Session {
    id: String,
    phase: Phase,
    target: TargetCase,
    weights: WeightVector,
    query: Option<RetrievalQuery>,
    last_result: Option<Vec<Value>>,
    last_candidates: Option<Vec<SolutionCandidate>>,
    decision: Option<AdaptationDecision>,
    committed: Option<CaseId>,
    touched: Instant,
}

impl Session {
    fn view(&self) -> Value {
        json!({
            "session_id": self.id,
            "phase": self.phase,
            "target": self.target.to_json(),
            "weights": to_canonical_value(&self.weights),
            "last_result": self.last_result,
            "last_candidates": self.last_candidates.as_ref().map(to_canonical_value),
            "decision": self.decision.as_ref().map(to_canonical_value),
            "committed_case_id": self.committed,
        })
    }

    fn reset(&mut self) {
        self.phase = Phase::Entry;
        self.query = None;
        self.last_result = None;
        self.last_candidates = None;
        self.decision = None;
    }
}

struct Shared {
    kb: RwLock<KnowledgeBase>,
    /// Serializes mutations of `kb` and of the files under `dir`.
    writer: Mutex<()>,
    dir: Option<BaseDir>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    ttl: Duration,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    /// `dir`, when given, receives every committed mutation.
    pub fn new(kb: KnowledgeBase, dir: Option<BaseDir>) -> Self {
        Self::with_ttl(kb, dir, DEFAULT_SESSION_TTL)
    }

    pub fn with_ttl(kb: KnowledgeBase, dir: Option<BaseDir>, ttl: Duration) -> Self {
        AppState(Arc::new(Shared {
            kb: RwLock::new(kb),
            writer: Mutex::new(()),
            dir,
            sessions: Mutex::new(HashMap::new()),
            ttl,
        }))
    }

    pub fn snapshot(&self) -> KnowledgeBase {
        self.0.kb.read().clone()
    }

    /// Runs `f` on a copy of the base, persists the new journal entries and
    /// only then publishes the copy. On any error nothing changes.
    fn mutate<T>(
        &self,
        f: impl FnOnce(&mut KnowledgeBase) -> Result<T, ApiError>,
    ) -> Result<T, ApiError> {
        let _guard = self.0.writer.lock();
        let mut kb = self.0.kb.read().clone();
        let since = kb.last_sequence();
        let out = f(&mut kb)?;
        if let Some(dir) = &self.0.dir {
            dir.persist(&kb, since)?;
        }
        *self.0.kb.write() = kb;
        Ok(out)
    }

    fn open_session(&self, target: TargetCase) -> Arc<Mutex<Session>> {
        let weights = WeightVector::defaults(self.0.kb.read().schema());
        let id = uuid::Uuid::new_v4().to_string();
        let session = Arc::new(Mutex::new(Session {
            id: id.clone(),
            phase: Phase::Entry,
            target,
            weights,
            query: None,
            last_result: None,
            last_candidates: None,
            decision: None,
            committed: None,
            touched: Instant::now(),
        }));
        let mut sessions = self.0.sessions.lock();
        let ttl = self.0.ttl;
        sessions.retain(|_, s| s.lock().touched.elapsed() < ttl);
        sessions.insert(id, session.clone());
        session
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let mut sessions = self.0.sessions.lock();
        let ttl = self.0.ttl;
        sessions.retain(|_, s| s.lock().touched.elapsed() < ttl);
        let s = sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))?;
        s.lock().touched = Instant::now();
        Ok(s)
    }
}

/// One ranked entry: the descriptor-level explanation plus the case title.
pub fn ranked_entries(kb: &KnowledgeBase, r: &RetrievalResult) -> Vec<Value> {
    explain_ranking(r, kb.schema())
        .into_iter()
        .map(|e| {
            let mut v = to_canonical_value(&e);
            if let Some(case) = kb.base().get(e.case_id) {
                v["title"] = json!(case.title);
                v["class"] = json!(case.class);
            }
            v
        })
        .collect()
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/schema", get(get_schema))
        .route("/api/cases", get(list_cases))
        .route("/api/cases/{id}", get(get_case))
        .route("/api/cases/{id}/verdict", post(post_verdict))
        .route("/api/cases/{id}/explanation", post(post_explanation))
        .route("/api/cases/{id}/correction", post(post_correction))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/weights", put(put_weights))
        .route("/api/sessions/{id}/target", put(put_target))
        .route("/api/sessions/{id}/retrieve", post(post_retrieve))
        .route("/api/sessions/{id}/candidates", get(get_candidates))
        .route("/api/sessions/{id}/decision", post(post_decision))
        .route("/api/sessions/{id}/commit", post(post_commit))
        .route("/api/audit", get(get_audit))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(state)
}

async fn get_schema(State(st): State<AppState>) -> Response {
    ok(st.0.kb.read().schema())
}

#[derive(Deserialize)]
struct Page {
    offset: Option<usize>,
    limit: Option<usize>,
}

async fn list_cases(
    State(st): State<AppState>,
    page: Result<Query<Page>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(page) = page.map_err(|e| ApiError::malformed(e.body_text()))?;
    let offset = page.offset.unwrap_or(0);
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let kb = st.0.kb.read();
    let cases: Vec<_> = kb.base().cases().iter().skip(offset).take(limit).collect();
    Ok(ok(&json!({
        "total": kb.base().len(),
        "offset": offset,
        "limit": limit,
        "cases": to_canonical_value(&cases),
    })))
}

fn case_id(raw: &str) -> Result<CaseId, ApiError> {
    raw.parse()
        .map(CaseId)
        .map_err(|_| ApiError::not_found(format!("no case {raw}")))
}

async fn get_case(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let id = case_id(&id)?;
    let kb = st.0.kb.read();
    let case = kb
        .base()
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("no case {id}")))?;
    Ok(ok(case))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VerdictBody {
    verdict: Verdict,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExplanationBody {
    cause: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CorrectionBody {
    solution: String,
}

async fn post_verdict(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let id = case_id(&id)?;
    let b: VerdictBody = parse_body(&body)?;
    let case = st.mutate(|kb| Ok(kb.record_verdict(id, b.verdict, Timestamp::now())?.clone()))?;
    Ok(ok(&case))
}

async fn post_explanation(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let id = case_id(&id)?;
    let b: ExplanationBody = parse_body(&body)?;
    let case = st.mutate(|kb| Ok(kb.record_explanation(id, &b.cause, Timestamp::now())?.clone()))?;
    Ok(ok(&case))
}

async fn post_correction(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let id = case_id(&id)?;
    let b: CorrectionBody = parse_body(&body)?;
    let case = st.mutate(|kb| Ok(kb.correct_solution(id, &b.solution, Timestamp::now())?.clone()))?;
    Ok(ok(&case))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TargetBody {
    target: Value,
}

fn parse_target(st: &AppState, raw: &Value) -> Result<TargetCase, ApiError> {
    Ok(TargetCase::from_json(st.0.kb.read().schema(), raw)?)
}

async fn create_session(State(st): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let b: TargetBody = parse_body(&body)?;
    let target = parse_target(&st, &b.target)?;
    let session = st.open_session(target);
    let view = session.lock().view();
    Ok(reply(StatusCode::CREATED, &view))
}

async fn get_session(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = st.session(&id)?;
    let view = s.lock().view();
    Ok(ok(&view))
}

fn editable(s: &Session) -> Result<(), ApiError> {
    if s.phase == Phase::Committed {
        return Err(ApiError::phase("session already committed"));
    }
    Ok(())
}

async fn put_weights(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let update: WeightUpdate = parse_body(&body)?;
    let s = st.session(&id)?;
    let mut s = s.lock();
    editable(&s)?;
    let weights = update.apply(&st.0.kb.read(), &s.weights)?;
    st.mutate(|kb| Ok(kb.note_weight_change(&s.id, &weights, Timestamp::now())?))?;
    s.weights = weights;
    s.reset();
    Ok(ok(&s.view()))
}

async fn put_target(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let b: TargetBody = parse_body(&body)?;
    let s = st.session(&id)?;
    let mut s = s.lock();
    editable(&s)?;
    s.target = parse_target(&st, &b.target)?;
    s.reset();
    Ok(ok(&s.view()))
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct RetrieveBody {
    k: Option<usize>,
    min_similarity: Option<Value>,
    policy: Option<MissingPolicy>,
}

async fn post_retrieve(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let b: RetrieveBody = parse_body(&body)?;
    let s = st.session(&id)?;
    let mut s = s.lock();
    if !matches!(s.phase, Phase::Entry | Phase::Retrieved) {
        return Err(ApiError::phase(format!(
            "retrieval needs phase entry or retrieved, session is {:?}",
            s.phase
        )));
    }
    let mut q = RetrievalQuery::new(s.target.clone(), s.weights.clone())
        .with_policy(b.policy.unwrap_or_default());
    if let Some(k) = b.k {
        q = q.with_k(k);
    }
    if let Some(min) = &b.min_similarity {
        q = q.with_min_similarity(rational_from_json("min_similarity", min)?);
    }
    let kb = st.snapshot();
    let r = retrieve(kb.schema(), kb.base().cases(), &q, Some(kb.index()))?;
    let candidates = collect_candidates(&r, kb.base().cases())?;
    let ranked = ranked_entries(&kb, &r);
    st.mutate(|kb| Ok(kb.note_retrieval(&s.id, q.k, q.policy, r.ids(), Timestamp::now())?))?;

    let body = json!({
        "session_id": s.id,
        "phase": Phase::Retrieved,
        "k": q.k,
        "policy": q.policy,
        "min_similarity": exact::to_f64(&q.min_similarity),
        "evaluated_count": r.evaluated_count,
        "non_comparable": r.non_comparable,
        "ranked": ranked,
        "candidates": to_canonical_value(&candidates),
    });
    s.phase = Phase::Retrieved;
    s.query = Some(q);
    s.last_result = Some(ranked);
    s.last_candidates = Some(candidates);
    s.decision = None;
    Ok(ok(&body))
}

async fn get_candidates(State(st): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let s = st.session(&id)?;
    let s = s.lock();
    match &s.last_candidates {
        Some(c) if s.phase != Phase::Entry => Ok(ok(c)),
        _ => Err(ApiError::phase("no retrieval in this session yet")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionBody {
    solution: String,
    origin: Option<Origin>,
    rationale: Option<String>,
}

async fn post_decision(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let b: DecisionBody = parse_body(&body)?;
    let s = st.session(&id)?;
    let mut s = s.lock();
    let (Phase::Retrieved | Phase::Adapted, Some(q), Some(candidates)) =
        (s.phase, &s.query, &s.last_candidates)
    else {
        return Err(ApiError::phase(format!(
            "a decision needs a retrieval first, session is {:?}",
            s.phase
        )));
    };
    let origin = b.origin.unwrap_or(Origin::FromCandidate);
    let d = decide(candidates, &b.solution, origin, b.rationale, q, Timestamp::now())?;
    s.decision = Some(d.clone());
    s.phase = Phase::Adapted;
    Ok(ok(&d))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CommitBody {
    title: Option<String>,
    class: Option<String>,
}

async fn post_commit(
    State(st): State<AppState>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let b: CommitBody = parse_body(&body)?;
    let s = st.session(&id)?;
    let mut s = s.lock();
    let (Phase::Adapted, Some(decision)) = (s.phase, &s.decision) else {
        return Err(ApiError::phase(format!(
            "commit needs an adaptation decision, session is {:?}",
            s.phase
        )));
    };
    let title = b.title.unwrap_or_default();
    if title.trim().is_empty() {
        return Err(ApiError::violations(vec![Violation {
            subject: "title".into(),
            message: "title must be nonempty".into(),
        }]));
    }
    let class = b.class.unwrap_or_default();
    let case = st.mutate(|kb| {
        Ok(kb.commit_case(&s.target, decision, &title, &class, Timestamp::now())?)
    })?;
    s.phase = Phase::Committed;
    s.committed = Some(case.id);
    Ok(reply(StatusCode::CREATED, &case))
}

#[derive(Deserialize)]
struct Since {
    since: Option<u64>,
}

async fn get_audit(
    State(st): State<AppState>,
    since: Result<Query<Since>, axum::extract::rejection::QueryRejection>,
) -> Result<Response, ApiError> {
    let Query(since) = since.map_err(|e| ApiError::malformed(e.body_text()))?;
    let kb = st.0.kb.read();
    Ok(ok(&json!({
        "last_sequence": kb.last_sequence(),
        "events": to_canonical_value(&kb.events_since(since.since.unwrap_or(0))),
    })))
}
