use std::collections::BTreeMap;
use std::io;
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use tokio::sync::{Mutex, RwLock};

use cpbo_core::surrogate::Checkpoint;
use cpbo_core::PreferenceLabel;

use crate::error::ApiError;
use crate::session::{
    best_recommendation, compute_next, posterior_slice, Diagnostics, Event, HistoryEntry,
    LabelEntry, Phase, Recommendation, Session, SlicePayload,
};
use crate::spec::SessionSpec;
use crate::store::{Store, SNAPSHOT_EVERY};

type ApiResult<T> = Result<T, ApiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Done,
    Failed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NextResult {
    pub config: Vec<f64>,
    pub index: usize,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JobView {
    pub job_id: String,
    pub status: JobStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<NextResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<crate::error::ErrorBody>,
}

struct Slot {
    session: Session,
    /// Events persisted so far.
    seq: usize,
    jobs: BTreeMap<String, JobView>,
    running: Option<String>,
}

impl Slot {
    /// Persists, then applies. Nothing changes in memory if the write fails.
    fn commit(&mut self, store: &Store, ev: Event) -> ApiResult<()> {
        store.append(&self.session.id, self.seq, &ev).map_err(ApiError::storage)?;
        self.seq += 1;
        self.session.apply(&ev);
        if self.seq % SNAPSHOT_EVERY == 0 {
            // the log is authoritative; a stale snapshot only costs replay time
            let _ = store.snapshot(&self.session.id, self.seq, &self.session);
        }
        Ok(())
    }
}

pub struct AppState {
    store: Store,
    sessions: RwLock<BTreeMap<String, Arc<Mutex<Slot>>>>,
    create_lock: Mutex<()>,
}

impl AppState {
    /// Opens `root`, replaying every stored session.
    pub fn open(root: impl Into<std::path::PathBuf>) -> io::Result<Arc<Self>> {
        let store = Store::open(root)?;
        let mut sessions = BTreeMap::new();
        for (session, seq) in store.load_all()? {
            let slot = Slot { session, seq, jobs: BTreeMap::new(), running: None };
            sessions.insert(slot.session.id.clone(), Arc::new(Mutex::new(slot)));
        }
        Ok(Arc::new(Self { store, sessions: RwLock::new(sessions), create_lock: Mutex::new(()) }))
    }

    async fn slot(&self, id: &str) -> ApiResult<Arc<Mutex<Slot>>> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/label", post(submit_label))
        .route("/sessions/{id}/next", post(next_configuration))
        .route("/sessions/{id}/jobs/{jid}", get(get_job))
        .route("/sessions/{id}/slice", get(slice))
        .route("/sessions/{id}/report", get(report))
        .with_state(state)
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn parse_body<T: for<'de> Deserialize<'de>>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::invalid(format!("bad request body: {e}")))
}

fn slug(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' })
        .collect();
    let s = s.trim_matches('-').to_string();
    if s.is_empty() {
        "session".into()
    } else {
        s.chars().take(40).collect()
    }
}

#[derive(Serialize)]
struct DesignPoint {
    index: usize,
    native: Vec<f64>,
    unit: Vec<f64>,
}

#[derive(Serialize)]
struct Created {
    id: String,
    initial_design: Vec<DesignPoint>,
}

async fn create_session(State(app): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let spec: SessionSpec = parse_body(&body)?;
    let _guard = app.create_lock.lock().await;
    let base = slug(&spec.name);
    let n = app.sessions.read().await.len();
    let id = (n + 1..)
        .map(|k| format!("{base}-{k}"))
        .find(|id| !app.store.exists(id))
        .expect("unbounded range");
    let ev = Session::create_event(id.clone(), spec, now_ms())?;
    let session = Session::from_created(&ev).expect("creation event");
    app.store.append(&id, 0, &ev).map_err(ApiError::storage)?;
    let _ = app.store.snapshot(&id, 1, &session);
    let initial_design = session
        .history
        .iter()
        .map(|h| DesignPoint { index: h.index, native: h.native.clone(), unit: h.unit.0.clone() })
        .collect();
    let slot = Slot { session, seq: 1, jobs: BTreeMap::new(), running: None };
    app.sessions.write().await.insert(id.clone(), Arc::new(Mutex::new(slot)));
    Ok((StatusCode::CREATED, Json(Created { id, initial_design })).into_response())
}

#[derive(Serialize)]
struct ListEntry {
    id: String,
    name: String,
    phase: Phase,
    n_history: usize,
}

async fn list_sessions(State(app): State<Arc<AppState>>) -> Json<Vec<ListEntry>> {
    let slots: Vec<_> = app.sessions.read().await.values().cloned().collect();
    let mut out = Vec::with_capacity(slots.len());
    for s in slots {
        let s = s.lock().await;
        out.push(ListEntry {
            id: s.session.id.clone(),
            name: s.session.spec.name.clone(),
            phase: s.session.phase,
            n_history: s.session.history.len(),
        });
    }
    Json(out)
}

#[derive(Serialize)]
struct Pending {
    index: usize,
    native: Vec<f64>,
    reference: usize,
    reference_native: Vec<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    id: &'a str,
    spec: &'a SessionSpec,
    phase: Phase,
    history: &'a [HistoryEntry],
    labels: &'a [LabelEntry],
    pending: Option<Pending>,
    gamma_hat: Option<f64>,
    gamma_trajectory: &'a [f64],
    has_model: bool,
    running_job: Option<&'a str>,
}

fn summary(slot: &Slot) -> Value {
    let s = &slot.session;
    let pending = s.pending.map(|i| Pending {
        index: i,
        native: s.history[i].native.clone(),
        reference: i - 1,
        reference_native: s.history[i - 1].native.clone(),
    });
    serde_json::to_value(Summary {
        id: &s.id,
        spec: &s.spec,
        phase: s.phase,
        history: &s.history,
        labels: &s.labels,
        pending,
        gamma_hat: s.gamma_hat(),
        gamma_trajectory: &s.gamma_trajectory,
        has_model: s.current_model.is_some(),
        running_job: slot.running.as_deref(),
    })
    .expect("summary serializes")
}

async fn get_session(State(app): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let slot = app.slot(&id).await?;
    let slot = slot.lock().await;
    Ok(Json(summary(&slot)))
}

#[derive(Deserialize)]
struct LabelBody {
    label: Value,
    #[serde(default)]
    note: Option<String>,
    #[serde(default)]
    flawed: bool,
}

fn parse_label(v: &Value) -> ApiResult<PreferenceLabel> {
    match v.as_i64() {
        Some(-1) => Ok(PreferenceLabel::Minus),
        Some(0) => Ok(PreferenceLabel::Zero),
        Some(1) => Ok(PreferenceLabel::Plus),
        _ => Err(ApiError::invalid(format!("label must be -1, 0 or 1, got {v}"))),
    }
}

#[derive(Serialize)]
struct LabelAck {
    recorded: LabelEntry,
    phase: Phase,
    pending: Option<usize>,
}

async fn submit_label(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<LabelAck>> {
    let slot = app.slot(&id).await?;
    let body: LabelBody = parse_body(&body)?;
    let label = parse_label(&body.label)?;
    let mut slot = slot.lock().await;
    if slot.running.is_some() {
        return Err(ApiError::protocol("a fit is running for this session"));
    }
    let ev = slot.session.label_event(label, body.note, body.flawed, now_ms())?;
    let Event::Labeled(recorded) = ev.clone() else { unreachable!("label_event yields Labeled") };
    slot.commit(&app.store, ev)?;
    Ok(Json(LabelAck { recorded, phase: slot.session.phase, pending: slot.session.pending }))
}

#[derive(Deserialize, Default)]
struct NextQuery {
    #[serde(default)]
    wait: bool,
}

async fn next_configuration(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<NextQuery>,
) -> ApiResult<Response> {
    let slot_arc = app.slot(&id).await?;
    let (input, jid) = {
        let mut slot = slot_arc.lock().await;
        if slot.running.is_some() {
            return Err(ApiError::protocol("a fit is already running for this session"));
        }
        let input = slot.session.next_input(now_ms())?;
        let jid = format!("job-{}", slot.jobs.len() + 1);
        slot.jobs.insert(
            jid.clone(),
            JobView { job_id: jid.clone(), status: JobStatus::Running, result: None, error: None },
        );
        slot.running = Some(jid.clone());
        (input, jid)
    };
    let task = {
        let app = app.clone();
        let slot_arc = slot_arc.clone();
        let jid = jid.clone();
        tokio::spawn(async move {
            let outcome = tokio::task::spawn_blocking(move || compute_next(input)).await;
            let mut slot = slot_arc.lock().await;
            let view = match outcome {
                Ok(Ok(ev)) => finish_job(&mut slot, &app.store, &jid, ev),
                Ok(Err(e)) => failed(&jid, ApiError::compute(e)),
                Err(e) => failed(&jid, ApiError::compute(e)),
            };
            slot.jobs.insert(jid, view.clone());
            slot.running = None;
            view
        })
    };
    if q.wait {
        let view = task.await.map_err(ApiError::compute)?;
        return match (view.result, view.error) {
            (Some(r), _) => Ok(Json(r).into_response()),
            (None, Some(e)) => Err(ApiError { status: StatusCode::INTERNAL_SERVER_ERROR, body: e }),
            (None, None) => Err(ApiError::compute("job ended without a result")),
        };
    }
    let poll = format!("/sessions/{id}/jobs/{jid}");
    Ok((
        StatusCode::ACCEPTED,
        Json(serde_json::json!({ "job_id": jid, "status": JobStatus::Running, "poll": poll })),
    )
        .into_response())
}

fn failed(jid: &str, e: ApiError) -> JobView {
    JobView { job_id: jid.into(), status: JobStatus::Failed, result: None, error: Some(e.body) }
}

fn finish_job(slot: &mut Slot, store: &Store, jid: &str, ev: Event) -> JobView {
    let Event::Produced { entry, diagnostics, .. } = &ev else {
        return failed(jid, ApiError::compute("unexpected event"));
    };
    let result = NextResult { config: entry.native.clone(), index: entry.index, diagnostics: diagnostics.clone() };
    match slot.commit(store, ev) {
        Ok(()) => JobView { job_id: jid.into(), status: JobStatus::Done, result: Some(result), error: None },
        Err(e) => failed(jid, e),
    }
}

async fn get_job(
    State(app): State<Arc<AppState>>,
    Path((id, jid)): Path<(String, String)>,
) -> ApiResult<Json<JobView>> {
    let slot = app.slot(&id).await?;
    let slot = slot.lock().await;
    slot.jobs
        .get(&jid)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {jid:?}")))
}

#[derive(Deserialize)]
struct SliceQuery {
    axis: Option<String>,
    value: Option<String>,
    n: Option<String>,
}

fn query_num<T: std::str::FromStr>(v: &Option<String>, name: &str) -> ApiResult<Option<T>> {
    v.as_deref()
        .map(|s| s.parse::<T>().map_err(|_| ApiError::invalid(format!("bad {name} {s:?}"))))
        .transpose()
}

async fn slice(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<SliceQuery>,
) -> ApiResult<Json<SlicePayload>> {
    let slot = app.slot(&id).await?;
    let axis: usize = query_num(&q.axis, "axis")?.ok_or_else(|| ApiError::invalid("axis is required"))?;
    let n: usize = query_num(&q.n, "n")?.unwrap_or(50);
    let (spec, model) = {
        let slot = slot.lock().await;
        let model = slot
            .session
            .current_model
            .clone()
            .ok_or_else(|| ApiError::protocol("no trained model yet"))?;
        (slot.session.spec.clone(), model)
    };
    let value: f64 = match query_num(&q.value, "value")? {
        Some(v) => v,
        None => {
            let a = spec.axes.get(axis).ok_or_else(|| ApiError::invalid(format!("axis {axis} out of range")))?;
            0.5 * (a.low + a.high)
        }
    };
    let payload = tokio::task::spawn_blocking(move || posterior_slice(&spec, &model.model, axis, value, n))
        .await
        .map_err(ApiError::compute)??;
    Ok(Json(payload))
}

#[derive(Deserialize)]
struct ReportQuery {
    checkpoint: Option<String>,
}

#[derive(Serialize)]
struct Report {
    id: String,
    name: String,
    phase: Phase,
    n_history: usize,
    n_labels: usize,
    history: Vec<HistoryEntry>,
    labels: Vec<LabelEntry>,
    gamma_trajectory: Vec<f64>,
    gamma_hat: Option<f64>,
    diagnostics: Vec<Diagnostics>,
    best_recommendation: Option<Recommendation>,
    #[serde(skip_serializing_if = "Option::is_none")]
    checkpoint: Option<Checkpoint>,
}

async fn report(
    State(app): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Json<Report>> {
    let slot = app.slot(&id).await?;
    let with_checkpoint = matches!(q.checkpoint.as_deref(), Some("1" | "true"));
    let s = slot.lock().await.session.clone();
    let spec = s.spec.clone();
    let model = s.current_model.clone();
    let best = match model.clone() {
        Some(m) => Some(
            tokio::task::spawn_blocking(move || best_recommendation(&spec, &m.model))
                .await
                .map_err(ApiError::compute)?
                .map_err(ApiError::compute)?,
        ),
        None => None,
    };
    Ok(Json(Report {
        id: s.id.clone(),
        name: s.spec.name.clone(),
        phase: s.phase,
        n_history: s.history.len(),
        n_labels: s.labels.len(),
        gamma_hat: s.gamma_hat(),
        history: s.history,
        labels: s.labels,
        gamma_trajectory: s.gamma_trajectory,
        diagnostics: s.diagnostics,
        best_recommendation: best,
        checkpoint: if with_checkpoint { model } else { None },
    }))
}
