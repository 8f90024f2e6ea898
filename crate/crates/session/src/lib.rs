//! Live sessions: a human occupies one seat of a game over HTTP, with
//! transcript deltas pushed over a WebSocket.
//!
//! Routes:
//! - `POST /sessions` creates a session and returns its tokens.
//! - `POST /sessions/{id}/actions` submits `ready`, `ask`, `answer` or `vote`.
//! - `GET /sessions/{id}/state` returns the caller's view.
//! - `GET /sessions/{id}/stream?since=N` upgrades to the push socket.
//!
//! Every route but creation takes `Authorization: Bearer <token>`; the
//! stream also accepts `?token=`.

pub mod error;
pub mod session;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::HeaderMap;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use mmg_core::engine::{run_game_with, GameConfig, Hooks, StrategyRegistry, HUMAN};
use mmg_core::oracle::templates;
use mmg_core::scenario::{validate_scenario, Scenario, Severity};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::broadcast::error::RecvError;

pub use error::SessionError;
pub use session::{Ack, Action, ActionRequest, Delta, DialogueLine, Phase, Role, Session, SessionView};

/// A scenario the service can host, with its game configuration.
#[derive(Debug, Clone)]
pub struct HostedScenario {
    pub scenario: Scenario,
    pub config: GameConfig,
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub scenarios: BTreeMap<String, HostedScenario>,
    /// Finished transcripts are written here as `<session id>.jsonl`.
    pub transcripts_dir: Option<PathBuf>,
    pub session_ttl: Duration,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            scenarios: BTreeMap::new(),
            transcripts_dir: None,
            session_ttl: Duration::from_secs(4 * 3600),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub scenario: String,
    pub human_seat: String,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Overrides the hosted config's decision timeout.
    #[serde(default)]
    pub human_timeout_secs: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub token: String,
    pub spectator_token: String,
    pub seat: String,
    pub phase: Phase,
}

pub struct SessionService {
    config: ServiceConfig,
    sessions: Mutex<HashMap<String, Arc<Session>>>,
    /// (scenario id, seat) -> session id.
    seats: Mutex<HashMap<(String, String), String>>,
}

fn briefing(scenario: &Scenario, seat: &str) -> Result<String, SessionError> {
    let reg = templates::TemplateRegistry::default();
    let others: Vec<&str> = scenario.agent_names().filter(|a| *a != seat).collect();
    let killed = scenario.victims_of(seat);
    let mut vars = templates::vars([("character_name", seat), ("character_name_list", &others.join(", "))]);
    let id = if killed.is_empty() {
        templates::SYSTEM_CIVILIAN
    } else {
        vars.insert("victims".into(), killed.join(", "));
        templates::SYSTEM_MURDERER
    };
    reg.render(id, &vars).map_err(|e| SessionError::BadScenario(e.to_string()))
}

impl SessionService {
    pub fn new(config: ServiceConfig) -> Arc<Self> {
        Arc::new(Self {
            config,
            sessions: Mutex::new(HashMap::new()),
            seats: Mutex::new(HashMap::new()),
        })
    }

    pub fn get(&self, id: &str) -> Result<Arc<Session>, SessionError> {
        self.sessions
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.into()))
    }

    /// Binds the seat and starts the engine thread, paused in the lobby.
    pub fn create(self: &Arc<Self>, req: CreateRequest) -> Result<Created, SessionError> {
        let hosted = self
            .config
            .scenarios
            .get(&req.scenario)
            .ok_or_else(|| SessionError::BadScenario(format!("unknown scenario {:?}", req.scenario)))?;
        let scenario = hosted.scenario.clone();
        if scenario.agent(&req.human_seat).is_none() {
            return Err(SessionError::BadScenario(format!(
                "scenario {:?} has no character {:?}",
                scenario.id, req.human_seat
            )));
        }
        if let Some(d) = validate_scenario(&scenario).into_iter().find(|d| d.severity == Severity::Error) {
            return Err(SessionError::BadScenario(d.to_string()));
        }
        let mut config = hosted.config.clone();
        config.strategies.insert(req.human_seat.clone(), HUMAN.into());
        if let Some(seed) = req.seed {
            config.seed = seed;
        }
        if let Some(t) = req.human_timeout_secs {
            config.human_timeout_secs = t;
        }
        config.validate().map_err(|e| SessionError::BadScenario(e.to_string()))?;
        let gateway = Arc::new(config.gateway(None).map_err(|e| SessionError::BadScenario(e.to_string()))?);

        let key = (scenario.id.clone(), req.human_seat.clone());
        let session = {
            let mut seats = self.seats.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(existing) = seats.get(&key) {
                if self.get(existing).is_ok_and(|s| s.is_live()) {
                    return Err(SessionError::SeatTaken(req.human_seat));
                }
            }
            let id = uuid::Uuid::new_v4().simple().to_string();
            let tokens = (
                uuid::Uuid::new_v4().simple().to_string(),
                uuid::Uuid::new_v4().simple().to_string(),
            );
            let session = Arc::new(Session::new(
                id.clone(),
                scenario.clone(),
                config.clone(),
                req.human_seat.clone(),
                briefing(&scenario, &req.human_seat)?,
                tokens,
                self.config.session_ttl,
            ));
            seats.insert(key, id.clone());
            self.sessions
                .lock()
                .unwrap_or_else(|e| e.into_inner())
                .insert(id, session.clone());
            session
        };

        let s = session.clone();
        let out_dir = self.config.transcripts_dir.clone();
        std::thread::Builder::new()
            .name(format!("game-{}", s.id))
            .spawn(move || {
                if !s.wait_ready() {
                    s.finish(Err("session expired in the lobby".into()));
                    return;
                }
                let bridge = Arc::new(session::Bridge(s.clone()));
                let hooks = Hooks {
                    sink: Some(bridge.clone()),
                    human: Some(bridge),
                };
                let registry = StrategyRegistry::default();
                let result = run_game_with(&s.scenario, &s.config, gateway, &registry, hooks);
                let transcript = match &result {
                    Ok(run) => Some(&run.transcript),
                    Err(mmg_core::engine::EngineError::Aborted { transcript, .. }) => Some(transcript.as_ref()),
                    Err(_) => None,
                };
                if let (Some(dir), Some(t)) = (&out_dir, transcript) {
                    let path = dir.join(format!("{}.jsonl", s.id));
                    if let Err(e) = std::fs::create_dir_all(dir).and_then(|_| std::fs::write(&path, t.to_jsonl())) {
                        tracing::error!("cannot write {}: {e}", path.display());
                    }
                }
                s.finish(
                    result
                        .map(|run| json!({"win_rate": run.win_rate, "tallies": run.tallies}))
                        .map_err(|e| e.to_string()),
                );
            })
            .map_err(|e| SessionError::BadRequest(format!("cannot start game thread: {e}")))?;

        Ok(Created {
            session_id: session.id.clone(),
            token: session.token().into(),
            spectator_token: session.spectator_token().into(),
            seat: session.seat.clone(),
            phase: Phase::Lobby,
        })
    }

    fn authorized(&self, id: &str, token: Option<&str>) -> Result<(Arc<Session>, Role), SessionError> {
        let s = self.get(id)?;
        let role = s.authorize(token)?;
        if s.expired() {
            return Err(SessionError::SessionExpired);
        }
        Ok((s, role))
    }

    pub fn submit(&self, id: &str, token: Option<&str>, req: ActionRequest) -> Result<Ack, SessionError> {
        let (s, role) = self.authorized(id, token)?;
        s.submit(role, req)
    }

    pub fn state(&self, id: &str, token: Option<&str>) -> Result<SessionView, SessionError> {
        let (s, role) = self.authorized(id, token)?;
        Ok(s.view(role))
    }

    pub fn router(self: Arc<Self>) -> Router {
        Router::new()
            .route("/sessions", post(create_handler))
            .route("/sessions/{id}/actions", post(action_handler))
            .route("/sessions/{id}/state", get(state_handler))
            .route("/sessions/{id}/stream", get(stream_handler))
            .with_state(self)
    }
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, service: Arc<SessionService>) -> std::io::Result<()> {
    axum::serve(listener, service.router()).await
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    headers
        .get(axum::http::header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(|t| t.trim().to_string())
}

type Svc = State<Arc<SessionService>>;

async fn create_handler(State(svc): Svc, body: Result<Json<CreateRequest>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return SessionError::BadRequest(e.body_text()).into_response(),
    };
    match svc.create(req) {
        Ok(c) => (axum::http::StatusCode::CREATED, Json(c)).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn action_handler(
    State(svc): Svc,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Result<Json<ActionRequest>, axum::extract::rejection::JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return SessionError::BadRequest(e.body_text()).into_response(),
    };
    match svc.submit(&id, bearer(&headers).as_deref(), req) {
        Ok(ack) => Json(ack).into_response(),
        Err(e) => e.into_response(),
    }
}

async fn state_handler(State(svc): Svc, Path(id): Path<String>, headers: HeaderMap) -> Response {
    match svc.state(&id, bearer(&headers).as_deref()) {
        Ok(v) => Json(v).into_response(),
        Err(e) => e.into_response(),
    }
}

#[derive(Debug, Deserialize)]
struct StreamQuery {
    #[serde(default)]
    since: u64,
    #[serde(default)]
    token: Option<String>,
}

async fn stream_handler(
    State(svc): Svc,
    Path(id): Path<String>,
    Query(q): Query<StreamQuery>,
    headers: HeaderMap,
    ws: WebSocketUpgrade,
) -> Response {
    let token = bearer(&headers).or(q.token);
    match svc.authorized(&id, token.as_deref()) {
        Ok((s, role)) => ws.on_upgrade(move |socket| push(socket, s, role, q.since)),
        Err(e) => e.into_response(),
    }
}

/// Replays stored deltas after `since`, then forwards live ones in order.
/// Closes after the terminal delta.
async fn push(mut socket: WebSocket, session: Arc<Session>, role: Role, since: u64) {
    let mut rx = session.subscribe(role);
    let mut last = since;
    let send = |d: &Delta| Message::Text(serde_json::to_string(d).expect("delta serializes").into());
    for d in session.deltas_since(role, last) {
        if socket.send(send(&d)).await.is_err() {
            return;
        }
        last = d.ordinal;
        if d.is_terminal() {
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    }
    loop {
        let batch = match rx.recv().await {
            Ok(d) => vec![d],
            Err(RecvError::Lagged(_)) => session.deltas_since(role, last),
            Err(RecvError::Closed) => return,
        };
        for d in batch {
            if d.ordinal <= last {
                continue;
            }
            if d.ordinal != last + 1 {
                // A gap means the live channel skipped; refill from the store.
                for missed in session.deltas_since(role, last).into_iter().filter(|m| m.ordinal < d.ordinal) {
                    if socket.send(send(&missed)).await.is_err() {
                        return;
                    }
                }
            }
            if socket.send(send(&d)).await.is_err() {
                return;
            }
            last = d.ordinal;
            if d.is_terminal() {
                let _ = socket.send(Message::Close(None)).await;
                return;
            }
        }
    }
}
