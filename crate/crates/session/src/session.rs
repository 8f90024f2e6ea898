//! One live game with a human in one seat.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use mmg_core::engine::{
    EventKind, EventSink, GameConfig, HumanChannel, HumanRequest, HumanResponse, TranscriptEvent, VoteTally,
};
use mmg_core::scenario::Scenario;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::error::SessionError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Phase {
    Lobby,
    Introductions,
    Round { round: u32 },
    Voting,
    Finished,
    Aborted,
}

impl Phase {
    pub fn is_over(self) -> bool {
        matches!(self, Phase::Finished | Phase::Aborted)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Player,
    Spectator,
}

/// One push message: a transcript event as the recipient may see it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delta {
    pub ordinal: u64,
    pub round: u32,
    pub kind: String,
    pub actors: Vec<String>,
    pub payload: Value,
}

impl Delta {
    fn hidden(e: &TranscriptEvent) -> Self {
        Self {
            ordinal: e.ordinal,
            round: e.round,
            kind: "hidden".into(),
            actors: Vec::new(),
            payload: json!({}),
        }
    }

    fn shown(e: &TranscriptEvent, payload: Value) -> Self {
        Self {
            ordinal: e.ordinal,
            round: e.round,
            kind: e.kind.as_str().into(),
            actors: e.actors.clone(),
            payload,
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.kind == EventKind::Outcome.as_str() || (self.kind == "diagnostic" && self.payload["kind"] == "aborted")
    }
}

/// The view of `e` for `seat` (`None` for spectators). Backend calls are
/// never shown; other observers' private reasoning becomes a placeholder so
/// ordinals stay gap-free.
pub fn redact(e: &TranscriptEvent, seat: Option<&str>, tallies: &[VoteTally]) -> Delta {
    let own = seat.is_some_and(|s| e.actors.first().map(String::as_str) == Some(s));
    match e.kind {
        EventKind::Introduction | EventKind::Question | EventKind::Reply | EventKind::Vote => {
            Delta::shown(e, e.payload.clone())
        }
        EventKind::TargetSelection => Delta::shown(
            e,
            json!({"victim": e.payload["victim"], "target": e.payload["target"]}),
        ),
        EventKind::SensorProbe | EventKind::Prune if own => Delta::shown(e, e.payload.clone()),
        EventKind::Diagnostic if e.actors.is_empty() => Delta::shown(e, json!({"kind": e.payload["kind"]})),
        EventKind::Diagnostic if own => Delta::shown(e, e.payload.clone()),
        EventKind::Outcome => {
            let mut payload = json!({
                "win_rate": e.payload["win_rate"],
                "cases": e.payload["cases"],
                "tallies": tallies,
            });
            if let Some(s) = seat {
                let mine: BTreeMap<&str, &Value> = e.payload["final_suspects"]
                    .as_object()
                    .into_iter()
                    .flatten()
                    .filter_map(|(victim, per)| per.get(s).map(|l| (victim.as_str(), l)))
                    .collect();
                payload["final_suspects"] = json!(mine);
            }
            Delta::shown(e, payload)
        }
        _ => Delta::hidden(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PendingView {
    pub kind: String,
    pub request: HumanRequest,
    pub deadline_unix_ms: u64,
    pub seconds_left: u64,
}

struct Pending {
    request: HumanRequest,
    deadline: Instant,
    deadline_unix_ms: u64,
}

/// A submitted action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRequest {
    /// Repeated ids are acknowledged without being applied again.
    #[serde(default)]
    pub action_id: Option<String>,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    /// Leaves the lobby and starts the game.
    Ready,
    Ask { target: String, text: String },
    Answer { question_id: u64, text: String },
    Vote { victim: String, accused: String },
}

impl Action {
    fn kind(&self) -> &'static str {
        match self {
            Action::Ready => "ready",
            Action::Ask { .. } => "ask",
            Action::Answer { .. } => "answer",
            Action::Vote { .. } => "vote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_id: Option<String>,
    pub action: String,
    pub accepted: bool,
    /// Highest ordinal emitted when the action was accepted.
    pub ordinal: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueLine {
    pub ordinal: u64,
    pub round: u32,
    pub victim: String,
    pub asker: String,
    pub responder: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
}

/// What one client may see. Players get their own script and suspects;
/// spectators only public dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub scenario_id: String,
    pub title: String,
    pub rules: String,
    pub role: Role,
    pub seat: String,
    pub phase: Phase,
    pub last_ordinal: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending_action: Option<PendingView>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub script: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objectives: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub briefing: Option<String>,
    /// Victim -> the seat's suspect list.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub suspects: BTreeMap<String, Vec<String>>,
    pub characters: Vec<String>,
    pub victims: Vec<String>,
    pub dialogue: Vec<DialogueLine>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub questions_for_you: Vec<DialogueLine>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

struct Inner {
    phase: Phase,
    ready: bool,
    pending: Option<Pending>,
    response: Option<HumanResponse>,
    player: Vec<Delta>,
    spectator: Vec<Delta>,
    tallies: Vec<VoteTally>,
    suspects: BTreeMap<String, Vec<String>>,
    dialogue: Vec<DialogueLine>,
    acks: HashMap<String, Ack>,
    result: Option<Value>,
    error: Option<String>,
}

pub struct Session {
    pub id: String,
    pub seat: String,
    pub scenario: Scenario,
    pub config: GameConfig,
    briefing: String,
    token: String,
    spectator_token: String,
    expires_at: Instant,
    inner: Mutex<Inner>,
    changed: Condvar,
    player_tx: broadcast::Sender<Delta>,
    spectator_tx: broadcast::Sender<Delta>,
}

fn unix_ms(at: Instant) -> u64 {
    let now_sys = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    let ahead = at.saturating_duration_since(Instant::now());
    (now_sys + ahead).as_millis() as u64
}

impl Session {
    pub fn new(
        id: String,
        scenario: Scenario,
        config: GameConfig,
        seat: String,
        briefing: String,
        tokens: (String, String),
        ttl: Duration,
    ) -> Self {
        let suspects = scenario
            .victims
            .iter()
            .map(|v| {
                let others = scenario.agent_names().filter(|a| *a != seat).map(str::to_string).collect();
                (v.name.clone(), others)
            })
            .collect();
        Self {
            id,
            seat,
            scenario,
            config,
            briefing,
            token: tokens.0,
            spectator_token: tokens.1,
            expires_at: Instant::now() + ttl,
            inner: Mutex::new(Inner {
                phase: Phase::Lobby,
                ready: false,
                pending: None,
                response: None,
                player: Vec::new(),
                spectator: Vec::new(),
                tallies: Vec::new(),
                suspects,
                dialogue: Vec::new(),
                acks: HashMap::new(),
                result: None,
                error: None,
            }),
            changed: Condvar::new(),
            player_tx: broadcast::channel(1024).0,
            spectator_tx: broadcast::channel(1024).0,
        }
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    pub fn spectator_token(&self) -> &str {
        &self.spectator_token
    }

    pub fn authorize(&self, token: Option<&str>) -> Result<Role, SessionError> {
        match token {
            Some(t) if t == self.token => Ok(Role::Player),
            Some(t) if t == self.spectator_token => Ok(Role::Spectator),
            _ => Err(SessionError::Unauthorized),
        }
    }

    pub fn expired(&self) -> bool {
        Instant::now() >= self.expires_at
    }

    pub fn phase(&self) -> Phase {
        self.lock().phase
    }

    /// Bound seats are released once the game is over or expired.
    pub fn is_live(&self) -> bool {
        !self.expired() && !self.phase().is_over()
    }

    pub fn subscribe(&self, role: Role) -> broadcast::Receiver<Delta> {
        match role {
            Role::Player => self.player_tx.subscribe(),
            Role::Spectator => self.spectator_tx.subscribe(),
        }
    }

    /// Stored deltas with ordinal greater than `since`.
    pub fn deltas_since(&self, role: Role, since: u64) -> Vec<Delta> {
        let inner = self.lock();
        let list = match role {
            Role::Player => &inner.player,
            Role::Spectator => &inner.spectator,
        };
        list.iter().filter(|d| d.ordinal > since).cloned().collect()
    }

    /// Blocks until the lobby is left. False if the session expired first.
    pub fn wait_ready(&self) -> bool {
        let mut inner = self.lock();
        while !inner.ready {
            if self.expired() {
                return false;
            }
            let left = self.expires_at.saturating_duration_since(Instant::now());
            inner = self
                .changed
                .wait_timeout(inner, left.min(Duration::from_millis(500)))
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        true
    }

    pub fn finish(&self, result: Result<Value, String>) {
        let mut inner = self.lock();
        inner.pending = None;
        match result {
            Ok(v) => {
                inner.phase = Phase::Finished;
                inner.result = Some(v);
            }
            Err(e) => {
                inner.phase = Phase::Aborted;
                inner.error = Some(e);
            }
        }
        self.changed.notify_all();
    }

    pub fn submit(&self, role: Role, req: ActionRequest) -> Result<Ack, SessionError> {
        if role == Role::Spectator {
            return Err(SessionError::Forbidden);
        }
        let mut inner = self.lock();
        if let Some(ack) = req.action_id.as_ref().and_then(|id| inner.acks.get(id)) {
            return Ok(ack.clone());
        }
        if self.expired() || inner.phase.is_over() {
            return Err(SessionError::SessionExpired);
        }
        let kind = req.action.kind();
        if let Action::Ready = req.action {
            if inner.phase != Phase::Lobby || inner.ready {
                return Err(SessionError::WrongPhase("the game has already started".into()));
            }
            inner.ready = true;
        } else {
            let pending = match &inner.pending {
                Some(p) if Instant::now() < p.deadline => p,
                Some(_) => return Err(SessionError::WrongPhase("the deadline has passed".into())),
                None => return Err(SessionError::WrongPhase(format!("no {kind} is expected now"))),
            };
            if pending.request.kind() != kind {
                return Err(SessionError::WrongPhase(format!(
                    "expected {}, got {kind}",
                    pending.request.kind()
                )));
            }
            let response = validate(&pending.request, &req.action)?;
            inner.response = Some(response);
            inner.pending = None;
        }
        let ack = Ack {
            action_id: req.action_id.clone(),
            action: kind.into(),
            accepted: true,
            ordinal: inner.player.last().map_or(0, |d| d.ordinal),
        };
        if let Some(id) = req.action_id {
            inner.acks.insert(id, ack.clone());
        }
        self.changed.notify_all();
        Ok(ack)
    }

    pub fn view(&self, role: Role) -> SessionView {
        let inner = self.lock();
        let player = role == Role::Player;
        let agent = self.scenario.agent(&self.seat);
        let pending_action = inner.pending.as_ref().filter(|_| player).map(|p| PendingView {
            kind: p.request.kind().into(),
            request: p.request.clone(),
            deadline_unix_ms: p.deadline_unix_ms,
            seconds_left: p.deadline.saturating_duration_since(Instant::now()).as_secs(),
        });
        let questions_for_you = if player {
            inner
                .dialogue
                .iter()
                .filter(|d| d.responder == self.seat && d.answer.is_none())
                .cloned()
                .collect()
        } else {
            Vec::new()
        };
        SessionView {
            session_id: self.id.clone(),
            scenario_id: self.scenario.id.clone(),
            title: self.scenario.title.clone(),
            rules: self.scenario.rules_text.clone(),
            role,
            seat: self.seat.clone(),
            phase: inner.phase,
            last_ordinal: inner.player.last().map_or(0, |d| d.ordinal),
            pending_action,
            script: agent.filter(|_| player).map(|a| a.background.clone()),
            objectives: agent.filter(|_| player).map(|a| a.objectives.clone()).unwrap_or_default(),
            briefing: player.then(|| self.briefing.clone()),
            suspects: if player { inner.suspects.clone() } else { BTreeMap::new() },
            characters: self.scenario.agent_names().map(str::to_string).collect(),
            victims: self.scenario.victims.iter().map(|v| v.name.clone()).collect(),
            dialogue: inner.dialogue.clone(),
            questions_for_you,
            result: inner.result.clone(),
            error: inner.error.clone(),
        }
    }

    fn track_phase(&self, inner: &mut Inner, e: &TranscriptEvent) {
        if inner.phase.is_over() {
            return;
        }
        inner.phase = match e.kind {
            EventKind::Introduction => Phase::Introductions,
            EventKind::Vote => Phase::Voting,
            // Finished once the engine thread has stored the transcript.
            EventKind::Outcome => inner.phase,
            EventKind::Diagnostic if e.payload["kind"] == "aborted" => Phase::Aborted,
            _ if e.round > self.config.rounds => Phase::Voting,
            _ if e.round >= 1 => Phase::Round { round: e.round },
            _ => inner.phase,
        };
    }

    fn track_dialogue(&self, inner: &mut Inner, e: &TranscriptEvent) {
        match e.kind {
            EventKind::Question => inner.dialogue.push(DialogueLine {
                ordinal: e.ordinal,
                round: e.round,
                victim: e.payload["victim"].as_str().unwrap_or_default().into(),
                asker: e.actors[0].clone(),
                responder: e.actors[1].clone(),
                question: e.payload["question"].as_str().unwrap_or_default().into(),
                answer: None,
            }),
            EventKind::Reply => {
                let q = e.payload["question_ordinal"].as_u64();
                if let Some(line) = inner.dialogue.iter_mut().find(|d| Some(d.ordinal) == q) {
                    line.answer = e.payload["answer"].as_str().map(str::to_string);
                }
            }
            EventKind::Prune if e.actors.first() == Some(&self.seat) => {
                if let (Some(v), Ok(after)) = (
                    e.payload["victim"].as_str(),
                    serde_json::from_value::<Vec<String>>(e.payload["after"].clone()),
                ) {
                    inner.suspects.insert(v.into(), after);
                }
            }
            EventKind::Vote => {
                if let Ok(t) = serde_json::from_value(e.payload.clone()) {
                    inner.tallies.push(t);
                }
            }
            EventKind::Outcome => {
                inner.result = Some(json!({"win_rate": e.payload["win_rate"], "tallies": inner.tallies}));
            }
            EventKind::Diagnostic if e.actors.first() == Some(&self.seat) && e.payload["kind"] == "awaiting_human" => {
                if let Ok(request) = serde_json::from_value(e.payload["request"].clone()) {
                    let secs = e.payload["timeout_secs"].as_u64().unwrap_or(self.config.human_timeout_secs);
                    let deadline = Instant::now() + Duration::from_secs(secs);
                    inner.response = None;
                    inner.pending = Some(Pending {
                        request,
                        deadline,
                        deadline_unix_ms: unix_ms(deadline),
                    });
                }
            }
            _ => {}
        }
    }
}

/// Checks an action against the pending request.
fn validate(request: &HumanRequest, action: &Action) -> Result<HumanResponse, SessionError> {
    match (request, action) {
        (HumanRequest::Ask { candidates, .. }, Action::Ask { target, text }) => {
            if !candidates.contains(target) {
                return Err(SessionError::IllegalTarget(format!("{target:?} is not among {candidates:?}")));
            }
            if text.trim().is_empty() {
                return Err(SessionError::BadRequest("question text is empty".into()));
            }
            Ok(HumanResponse::Ask {
                target: target.clone(),
                text: text.clone(),
            })
        }
        (HumanRequest::Answer { question_id, .. }, Action::Answer { question_id: q, text }) => {
            if q != question_id {
                return Err(SessionError::IllegalTarget(format!("question {q} is not awaiting an answer")));
            }
            if text.trim().is_empty() {
                return Err(SessionError::BadRequest("answer text is empty".into()));
            }
            Ok(HumanResponse::Answer { text: text.clone() })
        }
        (HumanRequest::Vote { victim, choices }, Action::Vote { victim: v, accused }) => {
            if v != victim {
                return Err(SessionError::IllegalTarget(format!("the vote is for {victim:?}, not {v:?}")));
            }
            if !choices.contains(accused) {
                return Err(SessionError::IllegalTarget(format!("{accused:?} is not a legal accusation")));
            }
            Ok(HumanResponse::Vote {
                accused: accused.clone(),
            })
        }
        _ => Err(SessionError::WrongPhase("action does not match the pending request".into())),
    }
}

/// Receives engine events and answers the human strategy's requests.
pub struct Bridge(pub Arc<Session>);

impl EventSink for Bridge {
    fn on_event(&self, e: &TranscriptEvent) {
        let s = &self.0;
        let (player, spectator) = {
            let mut inner = s.lock();
            s.track_phase(&mut inner, e);
            s.track_dialogue(&mut inner, e);
            let player = redact(e, Some(&s.seat), &inner.tallies);
            let spectator = redact(e, None, &inner.tallies);
            inner.player.push(player.clone());
            inner.spectator.push(spectator.clone());
            s.changed.notify_all();
            (player, spectator)
        };
        // No receivers is fine.
        let _ = s.player_tx.send(player);
        let _ = s.spectator_tx.send(spectator);
    }
}

impl HumanChannel for Bridge {
    fn request(&self, seat: &str, request: &HumanRequest, timeout: Duration) -> Option<HumanResponse> {
        let s = &self.0;
        if seat != s.seat {
            return None;
        }
        let mut inner = s.lock();
        // Answered before the engine started waiting.
        if let Some(r) = inner.response.take() {
            return Some(r);
        }
        if inner.pending.as_ref().is_none_or(|p| p.request != *request) {
            let deadline = Instant::now() + timeout;
            inner.response = None;
            inner.pending = Some(Pending {
                request: request.clone(),
                deadline,
                deadline_unix_ms: unix_ms(deadline),
            });
        }
        let deadline = inner.pending.as_ref().map(|p| p.deadline).expect("pending set above");
        loop {
            if let Some(r) = inner.response.take() {
                inner.pending = None;
                return Some(r);
            }
            let now = Instant::now();
            if now >= deadline || s.expired() {
                inner.pending = None;
                return None;
            }
            inner = s
                .changed
                .wait_timeout(inner, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }
}
