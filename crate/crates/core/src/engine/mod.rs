//! The game loop: introductions, questioning rounds, pruning, voting.
//!
//! Every backend call is logged against the transcript event it produced.
//! With the scripted backend and a fixed seed the transcript is
//! byte-for-byte reproducible.

pub mod config;
pub mod strategy;
pub mod transcript;
pub mod vote;

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::memory::{is_dialogue, is_script, Embedder, MemoryError, MemoryStore, SegmentMeta};
use crate::oracle::{templates, BinaryProbe, ChatRequest, CostLedger, Gateway, OracleError, RoleContext};
use crate::scenario::Scenario;
use crate::scheduler::{self, prune_suspects, IgLedger, SchedulerError};
use crate::state::{entropy, MurdererProfile, SensorReading, SensorSet, SensorSpec, StateError, StateStore, SuspectMatrix};

pub use config::{BackendConfig, Budgets, GameConfig, SamplingConfig, PLAYER_STAR};
pub use strategy::{
    predefined_question, EventSink, HumanChannel, HumanRequest, HumanResponse, HumanStrategy, PlayerStar,
    RandomStrategy, Strategy, StrategyRegistry, TargetChoice, WerewolfPredefined, HUMAN, PREDEFINED_QUESTIONS,
    RANDOM, WEREWOLF_PREDEFINED,
};
pub use transcript::{CallRef, EventKind, Transcript, TranscriptEvent, TranscriptHeader};
pub use vote::{head_of_list, tally, win_rate, Ballot, VoteTally};

pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("strategy {0:?} is already registered")]
    DuplicateStrategy(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error("transcript error: {0}")]
    Transcript(String),
    #[error("game aborted: {source}")]
    Aborted {
        transcript: Box<Transcript>,
        source: Box<EngineError>,
    },
}

impl EngineError {
    /// True when the failure came from the language-model backend.
    pub fn is_backend_failure(&self) -> bool {
        match self {
            EngineError::Oracle(_) => true,
            EngineError::Aborted { source, .. } => source.is_backend_failure(),
            _ => false,
        }
    }
}

/// Observers attached to a running game.
#[derive(Clone, Default)]
pub struct Hooks {
    pub sink: Option<Arc<dyn EventSink>>,
    pub human: Option<Arc<dyn HumanChannel>>,
}

#[derive(Debug, Clone)]
pub struct GameRun {
    pub transcript: Transcript,
    pub tallies: Vec<VoteTally>,
    pub win_rate: f64,
    /// victim -> observer -> final suspect list.
    pub final_suspects: BTreeMap<String, BTreeMap<String, Vec<String>>>,
    pub ledger: CostLedger,
}

/// Runs a game with the configured backend and the shipped strategies.
pub fn run_game(scenario: &Scenario, config: &GameConfig) -> Result<GameRun, EngineError> {
    let gateway = Arc::new(config.gateway(None)?);
    run_game_with(scenario, config, gateway, &StrategyRegistry::default(), Hooks::default())
}

pub fn run_game_with(
    scenario: &Scenario,
    config: &GameConfig,
    gateway: Arc<Gateway>,
    registry: &StrategyRegistry,
    hooks: Hooks,
) -> Result<GameRun, EngineError> {
    Game::new(scenario, config, gateway, registry, hooks)?.play()
}

/// First choice named in `text`, by earliest whole-word occurrence
/// (case-insensitive; longer choices win ties).
pub fn parse_choice<'a>(text: &str, choices: &'a [String]) -> Option<&'a str> {
    let lower = text.to_lowercase();
    let mut best: Option<(usize, usize, &str)> = None;
    for c in choices {
        let needle = c.to_lowercase();
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(pos) = lower[from..].find(&needle) {
            let start = from + pos;
            let end = start + needle.len();
            let before_ok = lower[..start].chars().next_back().is_none_or(|ch| !ch.is_alphanumeric());
            let after_ok = lower[end..].chars().next().is_none_or(|ch| !ch.is_alphanumeric());
            if before_ok && after_ok {
                let better = best.is_none_or(|(s, l, _)| start < s || (start == s && needle.len() > l));
                if better {
                    best = Some((start, needle.len(), c.as_str()));
                }
                break;
            }
            from = end;
        }
    }
    best.map(|(_, _, c)| c)
}

/// `Question1..QuestionN` values in numeric order, else all string values.
fn question_values(map: &Map<String, Value>) -> Vec<String> {
    let mut numbered: Vec<(u32, String)> = map
        .iter()
        .filter_map(|(k, v)| {
            let n = k.to_lowercase().strip_prefix("question")?.trim().parse::<u32>().ok()?;
            Some((n, v.as_str()?.trim().to_string()))
        })
        .filter(|(_, q)| !q.is_empty())
        .collect();
    if numbered.is_empty() {
        return map
            .values()
            .filter_map(Value::as_str)
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
    }
    numbered.sort_by_key(|(n, _)| *n);
    numbered.into_iter().map(|(_, q)| q).collect()
}

fn or_none(s: String) -> String {
    if s.trim().is_empty() {
        "none".into()
    } else {
        s
    }
}

/// Logs embedding calls made through the memory store for one agent.
struct AgentEmbedder<'a> {
    gateway: &'a Gateway,
    calls: &'a RefCell<Vec<CallRef>>,
    error: &'a RefCell<Option<OracleError>>,
    agent: &'a str,
}

impl Embedder for AgentEmbedder<'_> {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MemoryError> {
        let before = self.gateway.ledger_len();
        let result = self.gateway.embed(text);
        log_calls(self.gateway, self.calls, self.agent, before, None, text, None);
        result.map_err(|e| {
            *self.error.borrow_mut() = Some(e.clone());
            MemoryError::Embedding(e.to_string())
        })
    }
}

fn log_calls(
    gateway: &Gateway,
    calls: &RefCell<Vec<CallRef>>,
    agent: &str,
    before: usize,
    template: Option<&str>,
    prompt: &str,
    response: Option<&str>,
) {
    let mut calls = calls.borrow_mut();
    for (i, r) in gateway.records_since(before).into_iter().enumerate() {
        calls.push(CallRef {
            id: before + i,
            agent: agent.to_string(),
            kind: r.kind,
            template: template.map(str::to_string),
            prompt: prompt.to_string(),
            response: response.map(str::to_string),
            prompt_tokens: r.prompt_tokens,
            completion_tokens: r.completion_tokens,
            dollars: r.dollars,
        });
    }
}

/// A game in progress. Strategies drive it through the public helpers.
pub struct Game {
    scenario: Scenario,
    config: GameConfig,
    gateway: Arc<Gateway>,
    sensors: SensorSet,
    strategies: BTreeMap<String, Arc<dyn Strategy>>,
    hooks: Hooks,
    states: StateStore,
    matrix: SuspectMatrix,
    ig: IgLedger,
    profiles: BTreeMap<String, MurdererProfile>,
    memory: MemoryStore,
    rng: ChaCha8Rng,
    round: u32,
    systems: BTreeMap<String, String>,
    /// Target questioned this round, by (observer, victim).
    targets: BTreeMap<(String, String), String>,
    events: Vec<TranscriptEvent>,
    calls: RefCell<Vec<CallRef>>,
    embed_error: RefCell<Option<OracleError>>,
}

impl Game {
    pub fn new(
        scenario: &Scenario,
        config: &GameConfig,
        gateway: Arc<Gateway>,
        registry: &StrategyRegistry,
        hooks: Hooks,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        let errors: Vec<String> = crate::scenario::validate_scenario(scenario)
            .into_iter()
            .filter(|d| d.severity == crate::scenario::Severity::Error)
            .map(|d| d.to_string())
            .collect();
        if !errors.is_empty() {
            return Err(EngineError::Config(format!("invalid scenario: {}", errors.join("; "))));
        }
        let mut config = config.clone();
        config.scheduler.rng_seed = config.seed;
        for agent in config.strategies.keys() {
            if scenario.agent(agent).is_none() {
                return Err(EngineError::Config(format!("strategy assigned to unknown agent {agent:?}")));
            }
        }
        let mut strategies = BTreeMap::new();
        for agent in scenario.agent_names() {
            let id = config.strategy_for(agent);
            let s = registry
                .get(id)
                .ok_or_else(|| EngineError::Config(format!("unknown strategy {id:?} for agent {agent:?}")))?;
            strategies.insert(agent.to_string(), s);
        }
        let sensors = config.sensor_set()?;
        let mut ig = IgLedger::default();
        for obs in scenario.agent_names() {
            for v in &scenario.victims {
                ig.track(obs, &v.name, scenario.agent_names().filter(|s| *s != obs));
            }
        }
        Ok(Self {
            states: StateStore::init(scenario, &sensors),
            matrix: SuspectMatrix::init(scenario),
            profiles: scenario
                .victims
                .iter()
                .map(|v| (v.name.clone(), MurdererProfile::new(&v.name)))
                .collect(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            scenario: scenario.clone(),
            config,
            gateway,
            sensors,
            strategies,
            hooks,
            ig,
            memory: MemoryStore::new(),
            round: 0,
            systems: BTreeMap::new(),
            targets: BTreeMap::new(),
            events: Vec::new(),
            calls: RefCell::new(Vec::new()),
            embed_error: RefCell::new(None),
        })
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn config(&self) -> &GameConfig {
        &self.config
    }

    pub fn matrix(&self) -> &SuspectMatrix {
        &self.matrix
    }

    pub fn ig_ledger(&self) -> &IgLedger {
        &self.ig
    }

    pub fn states(&self) -> &StateStore {
        &self.states
    }

    pub fn human_channel(&self) -> Option<Arc<dyn HumanChannel>> {
        self.hooks.human.clone()
    }

    pub fn suspects(&self, observer: &str, victim: &str) -> Result<Vec<String>, EngineError> {
        Ok(self.matrix.suspect_list(observer, victim)?)
    }

    /// Agents `voter` may accuse for `victim`.
    pub fn legal_accusations(&self, voter: &str, victim: &str) -> Vec<String> {
        let murderer = self.scenario.is_murderer_of(voter, victim);
        self.scenario
            .agent_names()
            .filter(|a| !(murderer && *a == voter))
            .map(str::to_string)
            .collect()
    }

    pub fn random_choice(&mut self, candidates: &[String]) -> Result<String, EngineError> {
        if candidates.is_empty() {
            return Err(SchedulerError::EmptyCandidates.into());
        }
        Ok(candidates[self.rng.gen_range(0..candidates.len())].clone())
    }

    /// Appends an event carrying every call made since the previous one.
    pub fn emit(&mut self, kind: EventKind, actors: Vec<String>, payload: Value) -> u64 {
        let ordinal = self.events.len() as u64 + 1;
        let event = TranscriptEvent {
            ordinal,
            round: self.round,
            kind,
            actors,
            payload,
            calls: std::mem::take(&mut *self.calls.borrow_mut()),
        };
        if let Some(sink) = &self.hooks.sink {
            sink.on_event(&event);
        }
        self.events.push(event);
        ordinal
    }

    fn murders(&self, agent: &str, victim: &str) -> bool {
        self.scenario.is_murderer_of(agent, victim)
    }

    fn role(&self, agent: &str, victim: &str) -> RoleContext {
        if self.murders(agent, victim) {
            RoleContext::Murderer
        } else {
            RoleContext::Civilian
        }
    }

    fn goal(&self, agent: &str) -> String {
        let objectives = self.scenario.agent(agent).map(|a| a.objectives.join("; ")).unwrap_or_default();
        or_none(objectives)
    }

    fn request(
        &self,
        agent: &str,
        template: &str,
        mut vars: BTreeMap<String, String>,
        role: RoleContext,
    ) -> Result<ChatRequest, EngineError> {
        vars.insert("agent".into(), agent.into());
        Ok(self.gateway.request(
            template,
            vars,
            role,
            self.systems.get(agent).cloned(),
            self.config.sampling.gameplay,
        )?)
    }

    fn complete(&self, agent: &str, req: &ChatRequest) -> Result<String, EngineError> {
        let before = self.gateway.ledger_len();
        let result = self.gateway.complete(req);
        let text = result.as_ref().ok().map(|c| c.text.as_str());
        log_calls(&self.gateway, &self.calls, agent, before, Some(&req.template_id), &req.rendered_prompt, text);
        Ok(result?.text)
    }

    /// The reply's first JSON object, re-prompting once; `None` if both fail.
    fn complete_json(&self, agent: &str, req: &ChatRequest) -> Result<Option<Map<String, Value>>, EngineError> {
        let text = self.complete(agent, req)?;
        if let Some(map) = crate::oracle::json::extract_object(&text) {
            return Ok(Some(map));
        }
        let retry = self.gateway.retry_request(req)?;
        let text = self.complete(agent, &retry)?;
        Ok(crate::oracle::json::extract_object(&text))
    }

    /// `None` when the answer is neither yes nor no.
    fn probe(&self, agent: &str, req: &ChatRequest) -> Result<Option<BinaryProbe>, EngineError> {
        let before = self.gateway.ledger_len();
        let result = self.gateway.probe_binary(req);
        let response = match &result {
            Ok(p) => Some(serde_json::to_string(p).expect("probe serializes")),
            Err(OracleError::ProbeUnparseable(t)) => Some(t.clone()),
            Err(_) => None,
        };
        log_calls(
            &self.gateway,
            &self.calls,
            agent,
            before,
            Some(&req.template_id),
            &req.rendered_prompt,
            response.as_deref(),
        );
        match result {
            Ok(p) => Ok(Some(p)),
            Err(OracleError::ProbeUnparseable(_)) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    fn memory_error(&self, e: MemoryError) -> EngineError {
        match self.embed_error.borrow_mut().take() {
            Some(o) => EngineError::Oracle(o),
            None => EngineError::Memory(e),
        }
    }

    fn add_dialogue(&mut self, owner: &str, question: &str, answer: &str, meta: SegmentMeta) -> Result<(), EngineError> {
        let embedder = AgentEmbedder {
            gateway: &self.gateway,
            calls: &self.calls,
            error: &self.embed_error,
            agent: owner,
        };
        let r = self
            .memory
            .add_dialogue(owner, question, answer, meta, self.gateway.tokenizer(), &embedder)
            .map(|_| ());
        r.map_err(|e| self.memory_error(e))
    }

    /// Retrieves `owner`'s memory for the query `victim | subject | tag` and
    /// splits it into script text and dialogue history.
    fn context(&self, owner: &str, victim: &str, subject: &str, tag: &str) -> Result<(String, String), EngineError> {
        let query = format!("{victim} | {subject} | {tag}");
        let embedder = AgentEmbedder {
            gateway: &self.gateway,
            calls: &self.calls,
            error: &self.embed_error,
            agent: owner,
        };
        let q = embedder.embed(&query).map_err(|e| self.memory_error(e))?;
        let segs = self
            .memory
            .retrieve(owner, &q, self.config.budgets.gameplay, &|_| true)
            .map_err(|e| self.memory_error(e))?;
        let join = |pred: fn(&crate::memory::MemorySegment) -> bool| {
            segs.iter().filter(|s| pred(s)).map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n")
        };
        Ok((or_none(join(is_script)), or_none(join(is_dialogue))))
    }

    fn stance(&self, agent: &str, victim: &str) -> &'static str {
        if self.murders(agent, victim) {
            "You are the murderer, but you need to hide yourself and pretend you're not the murderer."
        } else {
            "You are not the murderer, you need to try to find the murderer."
        }
    }

    /// Reads `specs` about `subject` and records the parsed values.
    fn read_sensors(
        &mut self,
        observer: &str,
        victim: &str,
        subject: &str,
        specs: &[SensorSpec],
        script: &str,
        dialog: &str,
    ) -> Result<Vec<Value>, EngineError> {
        let template = if self.murders(observer, victim) {
            templates::SENSOR_MURDERER
        } else {
            templates::SENSOR_CIVILIAN
        };
        let mut out = Vec::new();
        for spec in specs {
            let vars = templates::vars([
                ("victim", victim),
                ("character", subject),
                ("current_script", script),
                ("dialog_history", dialog),
                ("sensor", spec.prompt_text.as_str()),
                ("choices", spec.choices_text().as_str()),
                ("sensor_name", spec.name.as_str()),
            ]);
            let req = self.request(observer, template, vars, self.role(observer, victim))?;
            let text = self.complete(observer, &req)?;
            match parse_choice(&text, &spec.choices) {
                Some(value) => {
                    let reading = SensorReading {
                        sensor: spec.name.clone(),
                        value: value.to_string(),
                        rationale: text.trim().to_string(),
                        round: self.round,
                    };
                    self.states
                        .get_mut(observer, subject, victim)
                        .ok_or_else(|| EngineError::Config(format!("no state vector for ({observer}, {subject}, {victim})")))?
                        .update_reading(&self.sensors, reading)?;
                    out.push(json!({"sensor": spec.name, "value": value}));
                }
                None => out.push(json!({"sensor": spec.name, "value": Value::Null, "unparsed": text.trim()})),
            }
        }
        Ok(out)
    }

    fn state_summary<'a>(&self, observer: &str, subject: &str, victim: &str, specs: impl Iterator<Item = &'a SensorSpec>) -> String {
        self.states
            .get(observer, subject, victim)
            .map(|v| v.summary(specs))
            .unwrap_or_default()
    }

    /// Refreshes search sensors and probes every candidate, then picks a
    /// target ε-greedily on the fused score.
    pub fn player_star_target(
        &mut self,
        observer: &str,
        victim: &str,
        candidates: &[String],
    ) -> Result<TargetChoice, EngineError> {
        let params = self.config.scheduler;
        let search: Vec<SensorSpec> = self.sensors.search().cloned().collect();
        let mut scores = BTreeMap::new();
        for c in candidates {
            let (script, dialog) = self.context(observer, victim, c, "sensor")?;
            let readings = self.read_sensors(observer, victim, c, &search, &script, &dialog)?;
            let vars = templates::vars([
                ("victim", victim),
                ("stance", self.stance(observer, victim)),
                ("character", c.as_str()),
                ("current_script", script.as_str()),
                ("dialog_history", dialog.as_str()),
            ]);
            let req = self.request(observer, templates::INFO_GAIN_PROBE, vars, self.role(observer, victim))?;
            let probe = self.probe(observer, &req)?;
            let e_ig = probe.as_ref().map_or(0.5, scheduler::expected_ig);
            let ig_w = self.ig.weighted_historical_ig(observer, victim, c, self.round as usize)?;
            let s = scheduler::score(&params, ig_w, e_ig);
            scores.insert(c.clone(), s);
            self.emit(
                EventKind::SensorProbe,
                vec![observer.to_string(), c.clone()],
                json!({
                    "victim": victim,
                    "subject": c,
                    "phase": "search",
                    "readings": readings,
                    "probe": probe,
                    "ig_weighted": ig_w,
                    "expected_ig": e_ig,
                    "score": s,
                }),
            );
        }
        let (target, mode) = scheduler::select_target(&params, candidates, &scores, &mut self.rng)?;
        Ok(TargetChoice {
            target,
            detail: json!({"strategy": PLAYER_STAR, "mode": mode, "scores": scores}),
        })
    }

    /// Asks the backend for `count` questions, padding from the predefined
    /// list when the reply has fewer.
    pub fn generate_questions(
        &mut self,
        observer: &str,
        victim: &str,
        target: &str,
        count: usize,
    ) -> Result<Vec<String>, EngineError> {
        let (script, dialog) = self.context(observer, victim, target, "question")?;
        let impression = self.state_summary(observer, target, victim, self.sensors.search());
        let profile = self.profiles.get(victim).map(MurdererProfile::describe).unwrap_or_default();
        let summary = format!(
            "Your current impression of {target}: {}. The murderer of {victim} likely has {profile}.",
            or_none(impression)
        );
        let template = if self.murders(observer, victim) {
            templates::QUESTION_MURDERER
        } else {
            templates::QUESTION_CIVILIAN
        };
        let vars = templates::vars([
            ("victim", victim),
            ("character", target),
            ("current_script", script.as_str()),
            ("dialog_history", dialog.as_str()),
            ("summary", summary.as_str()),
            ("question_number", count.to_string().as_str()),
        ]);
        let req = self.request(observer, template, vars, self.role(observer, victim))?;
        let mut questions = self.complete_json(observer, &req)?.map(|m| question_values(&m)).unwrap_or_default();
        questions.truncate(count);
        if questions.len() < count {
            let have = questions.len();
            let start = (self.round as usize - 1) * count + have;
            questions.extend((start..start + count - have).map(|i| predefined_question(i, victim)));
            self.emit(
                EventKind::Diagnostic,
                vec![observer.to_string()],
                json!({"kind": "question_padding", "victim": victim, "parsed": have, "needed": count}),
            );
        }
        Ok(questions)
    }

    pub fn llm_reply(&mut self, responder: &str, asker: &str, victim: &str, question: &str) -> Result<String, EngineError> {
        let (script, dialog) = self.context(responder, victim, asker, "reply")?;
        let template = if self.murders(responder, victim) {
            templates::REPLY_MURDERER
        } else {
            templates::REPLY_CIVILIAN
        };
        let goal = self.goal(responder);
        let vars = templates::vars([
            ("victim", victim),
            ("character", asker),
            ("question", question),
            ("current_script", script.as_str()),
            ("dialog_history", dialog.as_str()),
            ("goal", goal.as_str()),
        ]);
        let req = self.request(responder, template, vars, self.role(responder, victim))?;
        self.complete(responder, &req)
    }

    /// Reads refinement-only sensors, then asks which suspects to keep.
    pub fn llm_refine(&mut self, observer: &str, victim: &str) -> Result<Option<Vec<String>>, EngineError> {
        let current = self.suspects(observer, victim)?;
        if current.len() == 1 {
            return Ok(Some(current));
        }
        let extra: Vec<SensorSpec> = self.sensors.refinement().filter(|s| !s.use_in_search).cloned().collect();
        if !extra.is_empty() {
            for s in &current {
                let (script, dialog) = self.context(observer, victim, s, "refine")?;
                let readings = self.read_sensors(observer, victim, s, &extra, &script, &dialog)?;
                self.emit(
                    EventKind::SensorProbe,
                    vec![observer.to_string(), s.clone()],
                    json!({"victim": victim, "subject": s, "phase": "refinement", "readings": readings}),
                );
            }
        }
        let summary = current
            .iter()
            .map(|s| format!("{s}: {}", or_none(self.state_summary(observer, s, victim, self.sensors.refinement()))))
            .collect::<Vec<_>>()
            .join("\n");
        let vars = templates::vars([
            ("victim", victim),
            ("character_suspect", current.join(", ").as_str()),
            ("summary", summary.as_str()),
        ]);
        let req = self.request(observer, templates::REFINEMENT, vars, self.role(observer, victim))?;
        Ok(self.complete_json(observer, &req)?.and_then(|m| scheduler::parse_suspicion(&m)))
    }

    /// Head of the voter's final suspect list.
    pub fn default_vote(&mut self, voter: &str, victim: &str) -> Result<String, EngineError> {
        let list = self.suspects(voter, victim)?;
        head_of_list(voter, &list).ok_or_else(|| {
            EngineError::State(StateError::EmptySuspectList {
                observer: voter.into(),
                victim: victim.into(),
            })
        })
    }

    fn strategy(&self, agent: &str) -> Arc<dyn Strategy> {
        self.strategies[agent].clone()
    }

    fn agents(&self) -> Vec<String> {
        self.scenario.agent_names().map(str::to_string).collect()
    }

    fn victims(&self) -> Vec<String> {
        self.scenario.victims.iter().map(|v| v.name.clone()).collect()
    }

    fn system_prompt(&self, agent: &str) -> Result<String, EngineError> {
        let others: Vec<&str> = self.scenario.agent_names().filter(|a| *a != agent).collect();
        let killed = self.scenario.victims_of(agent);
        let (id, vars) = if killed.is_empty() {
            (
                templates::SYSTEM_CIVILIAN,
                templates::vars([("character_name", agent), ("character_name_list", others.join(", ").as_str())]),
            )
        } else {
            (
                templates::SYSTEM_MURDERER,
                templates::vars([
                    ("character_name", agent),
                    ("character_name_list", others.join(", ").as_str()),
                    ("victims", killed.join(", ").as_str()),
                ]),
            )
        };
        let mut text = self.gateway.render(id, &vars)?;
        if !self.scenario.rules_text.trim().is_empty() {
            text.push_str("\n\n");
            text.push_str(self.scenario.rules_text.trim());
        }
        Ok(text)
    }

    fn introductions(&mut self) -> Result<(), EngineError> {
        let victim_names = self.victims();
        let agents = self.agents();
        for agent in &agents {
            let system = self.system_prompt(agent)?;
            self.systems.insert(agent.clone(), system);
        }
        for agent in &agents {
            let background = self.scenario.agent(agent).map(|a| a.background.clone()).unwrap_or_default();
            let embedder = AgentEmbedder {
                gateway: &self.gateway,
                calls: &self.calls,
                error: &self.embed_error,
                agent,
            };
            let r = self
                .memory
                .chunk_script(agent, &background, self.gateway.tokenizer(), &embedder, &victim_names);
            r.map_err(|e| self.memory_error(e))?;

            let (template, role) = if self.scenario.is_murderer(agent) {
                (templates::INTRO_MURDERER, RoleContext::Murderer)
            } else {
                (templates::INTRO_CIVILIAN, RoleContext::Civilian)
            };
            let goal = self.goal(agent);
            let vars = templates::vars([("current_script", background.as_str()), ("goal", goal.as_str())]);
            let req = self.request(agent, template, vars, role)?;
            let mut text = self.complete(agent, &req)?;
            if text.trim().is_empty() {
                text = format!("I am {agent}.");
            }
            for listener in &agents {
                let meta = SegmentMeta {
                    round: 0,
                    asker: Some("host".into()),
                    responder: Some(agent.clone()),
                    victim_tags: Vec::new(),
                };
                self.add_dialogue(listener, "Please introduce yourself.", &text, meta)?;
            }
            self.emit(EventKind::Introduction, vec![agent.clone()], json!({"text": text}));
        }
        Ok(())
    }

    fn questioning(&mut self) -> Result<(), EngineError> {
        let m = self.config.questions_per_round as usize;
        for observer in self.agents() {
            for victim in self.victims() {
                let candidates = self.suspects(&observer, &victim)?;
                assert!(!candidates.is_empty(), "suspect lists are never empty");
                let strategy = self.strategy(&observer);
                let choice = strategy.select_target(self, &observer, &victim, &candidates)?;
                if !candidates.contains(&choice.target) {
                    return Err(EngineError::Config(format!(
                        "strategy {} chose {:?}, not a suspect of {observer}",
                        strategy.id(),
                        choice.target
                    )));
                }
                let target = choice.target.clone();
                self.emit(
                    EventKind::TargetSelection,
                    vec![observer.clone(), target.clone()],
                    json!({"victim": victim, "candidates": candidates, "target": target, "detail": choice.detail}),
                );
                self.targets.insert((observer.clone(), victim.clone()), target.clone());

                let questions = strategy.questions(self, &observer, &victim, &target, m)?;
                if questions.len() != m {
                    return Err(EngineError::Config(format!(
                        "strategy {} produced {} questions, expected {m}",
                        strategy.id(),
                        questions.len()
                    )));
                }
                for (index, question) in questions.iter().enumerate() {
                    let q_ord = self.emit(
                        EventKind::Question,
                        vec![observer.clone(), target.clone()],
                        json!({"victim": victim, "index": index + 1, "question": question}),
                    );
                    let responder = self.strategy(&target);
                    let mut answer = responder.reply(self, &target, &observer, &victim, question, q_ord)?;
                    if answer.trim().is_empty() {
                        answer = "(no answer)".into();
                    }
                    for owner in [&observer, &target] {
                        let meta = SegmentMeta {
                            round: self.round,
                            asker: Some(observer.clone()),
                            responder: Some(target.clone()),
                            victim_tags: vec![victim.clone()],
                        };
                        self.add_dialogue(owner, question, &answer, meta)?;
                    }
                    self.emit(
                        EventKind::Reply,
                        vec![target.clone(), observer.clone()],
                        json!({"victim": victim, "question_ordinal": q_ord, "answer": answer}),
                    );
                }
            }
        }
        Ok(())
    }

    fn pruning(&mut self) -> Result<(), EngineError> {
        for observer in self.agents() {
            for victim in self.victims() {
                let before = self.suspects(&observer, &victim)?;
                let strategy = self.strategy(&observer);
                let parsed = strategy.refine(self, &observer, &victim)?;
                let outcome = prune_suspects(&before, parsed.as_deref());
                self.matrix.set_row(&observer, &victim, &outcome.suspects)?;
                let h_prev = entropy(before.len())?;
                let h_now = entropy(outcome.suspects.len())?;
                let target = self.targets[&(observer.clone(), victim.clone())].clone();
                let ig = self.ig.record_round_ig(&observer, &victim, &target, h_prev, h_now)?;
                self.emit(
                    EventKind::Prune,
                    vec![observer.clone()],
                    json!({
                        "victim": victim,
                        "target": target,
                        "before": before,
                        "after": outcome.suspects,
                        "dropped": outcome.dropped,
                        "fallback": outcome.fallback,
                        "h_prev": h_prev,
                        "h_now": h_now,
                        "ig": ig,
                    }),
                );
                if let Some(reason) = outcome.fallback {
                    self.emit(
                        EventKind::Diagnostic,
                        vec![observer.clone()],
                        json!({"kind": "prune_fallback", "victim": victim, "reason": reason}),
                    );
                }
            }
        }
        Ok(())
    }

    fn voting(&mut self) -> Result<Vec<VoteTally>, EngineError> {
        let agents = self.agents();
        let mut tallies = Vec::new();
        for victim in self.scenario.victims.clone() {
            let mut ballots = Vec::new();
            for voter in &agents {
                let strategy = self.strategy(voter);
                let mut accused = strategy.vote(self, voter, &victim.name)?;
                if !self.legal_accusations(voter, &victim.name).contains(&accused) {
                    self.emit(
                        EventKind::Diagnostic,
                        vec![voter.clone()],
                        json!({"kind": "illegal_vote", "victim": victim.name, "accused": accused}),
                    );
                    accused = self.default_vote(voter, &victim.name)?;
                }
                ballots.push(Ballot {
                    voter: voter.clone(),
                    accused,
                });
            }
            let t = tally(&victim, agents.len(), ballots);
            self.emit(
                EventKind::Vote,
                agents.clone(),
                serde_json::to_value(&t).expect("tally serializes"),
            );
            tallies.push(t);
        }
        Ok(tallies)
    }

    fn final_suspects(&self) -> BTreeMap<String, BTreeMap<String, Vec<String>>> {
        let mut out = BTreeMap::new();
        for v in self.victims() {
            let per: BTreeMap<String, Vec<String>> = self
                .agents()
                .into_iter()
                .map(|a| {
                    let list = self.matrix.suspect_list(&a, &v).unwrap_or_default();
                    (a, list)
                })
                .collect();
            out.insert(v, per);
        }
        out
    }

    fn play_inner(&mut self) -> Result<Vec<VoteTally>, EngineError> {
        self.introductions()?;
        for round in 1..=self.config.rounds {
            self.round = round;
            self.targets.clear();
            self.questioning()?;
            self.pruning()?;
        }
        self.round = self.config.rounds + 1;
        let tallies = self.voting()?;
        let rate = win_rate(&tallies);
        self.emit(
            EventKind::Outcome,
            self.agents(),
            json!({
                "win_rate": rate,
                "cases": tallies.iter().map(|t| json!({"victim": t.victim, "eliminated": t.eliminated, "case_won": t.case_won})).collect::<Vec<_>>(),
                "final_suspects": self.final_suspects(),
            }),
        );
        Ok(tallies)
    }

    fn transcript(&self, complete: bool) -> Transcript {
        Transcript {
            header: TranscriptHeader {
                scenario_id: self.scenario.id.clone(),
                config: self.config.clone(),
                code_version: CODE_VERSION.to_string(),
                tokenizer_id: self.gateway.tokenizer().id().to_string(),
                backend_id: self.gateway.backend_id().to_string(),
            },
            events: self.events.clone(),
            segments: self.memory.segments().to_vec(),
            complete,
        }
    }

    pub fn play(mut self) -> Result<GameRun, EngineError> {
        match self.play_inner() {
            Ok(tallies) => Ok(GameRun {
                transcript: self.transcript(true),
                win_rate: win_rate(&tallies),
                tallies,
                final_suspects: self.final_suspects(),
                ledger: self.gateway.ledger(),
            }),
            Err(e) => {
                tracing::error!("game aborted: {e}");
                self.emit(
                    EventKind::Diagnostic,
                    Vec::new(),
                    json!({"kind": "aborted", "error": e.to_string()}),
                );
                Err(EngineError::Aborted {
                    transcript: Box::new(self.transcript(false)),
                    source: Box::new(e),
                })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn choice_parsing() {
        let yn = s(&["Yes", "No"]);
        assert_eq!(parse_choice("No, she was elsewhere. Yes, really.", &yn), Some("No"));
        assert_eq!(parse_choice("I'd say yes.", &yn), Some("Yes"));
        assert_eq!(parse_choice("Nobody knows", &yn), None);
        let emo = s(&["Positive", "Natural", "Negative"]);
        assert_eq!(parse_choice("Feeling: negative", &emo), Some("Negative"));
        assert_eq!(parse_choice("", &emo), None);
    }

    #[test]
    fn numbered_questions_sort_numerically() {
        let map = crate::oracle::json::extract_object(
            r#"{"Question10": "j", "Question2": "b", "Question1": "a"}"#,
        )
        .unwrap();
        assert_eq!(question_values(&map), s(&["a", "b", "j"]));
        let map = crate::oracle::json::extract_object(r#"{"q": "only"}"#).unwrap();
        assert_eq!(question_values(&map), s(&["only"]));
    }
}
