//! Language-model gateway: prompt rendering, chat completion, yes/no
//! probability probes, embeddings and cost accounting.
//!
//! The [`Gateway`] owns the template registry and the [`CostLedger`] and
//! forwards calls to a [`Backend`]. Two backends ship: [`RemoteBackend`] for
//! chat-completion HTTP servers and [`ScriptedBackend`], a rule table that
//! makes whole games bit-reproducible.

pub mod cost;
pub mod embed;
pub mod json;
pub mod remote;
pub mod scripted;
pub mod templates;

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::memory::{Embedder, HeuristicTokenizer, MemoryError, TokenCounter};

pub use cost::{report_costs, CallKind, CostLedger, CostRecord, CostReport, Phase, Totals, UnitPrices};
pub use embed::LocalEmbedder;
pub use remote::{RemoteBackend, RemoteConfig};
pub use scripted::{ScriptedBackend, ScriptedProbe, ScriptedRule, ScriptedRules};
pub use templates::TemplateRegistry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template:?} has unbound placeholder {{{placeholder}}}")]
    UnboundPlaceholder { template: String, placeholder: String },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no scripted rule matches template {template:?} with vars {vars:?}")]
    ScriptedMiss {
        template: String,
        vars: BTreeMap<String, String>,
    },
    #[error("probe answer {0:?} is neither yes nor no")]
    ProbeUnparseable(String),
    #[error("no JSON object could be parsed from {raw:?}")]
    JsonUnparseable { raw: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("precondition failed: {0}")]
    Precondition(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoleContext {
    Civilian,
    Murderer,
    Neutral,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub template_id: String,
    /// The variables the prompt was rendered from; scripted rules match on them.
    pub vars: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub system: Option<String>,
    pub rendered_prompt: String,
    pub role_context: RoleContext,
    pub max_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    /// Seconds spent in the backend.
    pub wall_time: f64,
}

/// First-token answer of a yes/no probe as the backend reports it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawProbe {
    pub text: String,
    pub probability: f64,
    pub usage: Usage,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedResponse {
    pub vector: Vec<f64>,
    pub usage: Usage,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeLabel {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinaryProbe {
    pub label: ProbeLabel,
    pub probability: f64,
}

impl BinaryProbe {
    pub fn new(label: ProbeLabel, probability: f64) -> Result<Self, OracleError> {
        if !(0.0..=1.0).contains(&probability) {
            return Err(OracleError::Protocol(format!("probe probability {probability} outside [0,1]")));
        }
        Ok(Self { label, probability })
    }
}

/// Lowercases the first word of `text`, strips punctuation and maps it to a label.
pub fn normalize_probe_label(text: &str) -> Option<ProbeLabel> {
    let word = text.split_whitespace().next()?;
    let word: String = word
        .chars()
        .filter(|c| !c.is_ascii_punctuation() && !c.is_whitespace())
        .collect::<String>()
        .to_lowercase();
    match word.as_str() {
        "yes" => Some(ProbeLabel::Yes),
        "no" => Some(ProbeLabel::No),
        _ => None,
    }
}

/// A language-model provider.
pub trait Backend: Send + Sync {
    fn id(&self) -> &str;
    fn complete(&self, req: &ChatRequest) -> Result<Completion, OracleError>;
    fn probe(&self, req: &ChatRequest) -> Result<RawProbe, OracleError>;
    fn embed(&self, text: &str) -> Result<EmbedResponse, OracleError>;
}

/// Generation settings applied to requests built by the gateway.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sampling {
    pub temperature: f64,
    pub max_tokens: u32,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    templates: TemplateRegistry,
    prices: UnitPrices,
    ledger: Mutex<CostLedger>,
    phase: Mutex<Phase>,
    tokenizer: Arc<dyn TokenCounter>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.id())
            .field("prices", &self.prices)
            .finish_non_exhaustive()
    }
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Self {
            backend,
            templates: TemplateRegistry::default(),
            prices: UnitPrices::default(),
            ledger: Mutex::new(CostLedger::default()),
            phase: Mutex::new(Phase::Gameplay),
            tokenizer: Arc::new(HeuristicTokenizer),
        }
    }

    pub fn with_prices(mut self, prices: UnitPrices) -> Self {
        self.prices = prices;
        self
    }

    pub fn with_templates(mut self, templates: TemplateRegistry) -> Self {
        self.templates = templates;
        self
    }

    pub fn with_tokenizer(mut self, tokenizer: Arc<dyn TokenCounter>) -> Self {
        self.tokenizer = tokenizer;
        self
    }

    pub fn backend_id(&self) -> &str {
        self.backend.id()
    }

    pub fn templates(&self) -> &TemplateRegistry {
        &self.templates
    }

    pub fn tokenizer(&self) -> &dyn TokenCounter {
        self.tokenizer.as_ref()
    }

    pub fn set_phase(&self, phase: Phase) {
        *lock(&self.phase) = phase;
    }

    pub fn phase(&self) -> Phase {
        *lock(&self.phase)
    }

    pub fn render(&self, template_id: &str, vars: &BTreeMap<String, String>) -> Result<String, OracleError> {
        self.templates.render(template_id, vars)
    }

    /// Renders `template_id` into a request.
    pub fn request(
        &self,
        template_id: &str,
        vars: BTreeMap<String, String>,
        role: RoleContext,
        system: Option<String>,
        sampling: Sampling,
    ) -> Result<ChatRequest, OracleError> {
        let rendered_prompt = self.render(template_id, &vars)?;
        if rendered_prompt.trim().is_empty() {
            return Err(OracleError::Precondition("rendered prompt is empty"));
        }
        if sampling.temperature < 0.0 {
            return Err(OracleError::Precondition("temperature must be non-negative"));
        }
        Ok(ChatRequest {
            template_id: template_id.to_string(),
            vars,
            system,
            rendered_prompt,
            role_context: role,
            max_tokens: sampling.max_tokens,
            temperature: sampling.temperature,
        })
    }

    fn record(&self, kind: CallKind, usage: Usage, wall_time: f64) {
        let record = CostRecord {
            backend: self.backend.id().to_string(),
            phase: self.phase(),
            kind,
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
            prices: self.prices,
            dollars: self.prices.dollars(usage.prompt_tokens, usage.completion_tokens),
            wall_time,
        };
        lock(&self.ledger).push(record);
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<Completion, OracleError> {
        let c = self.backend.complete(req)?;
        self.record(CallKind::Complete, c.usage, c.wall_time);
        Ok(c)
    }

    /// Completes and parses the first JSON object of the reply, re-prompting
    /// once on failure. Returns the object and the final raw text.
    pub fn complete_json(
        &self,
        req: &ChatRequest,
    ) -> Result<(serde_json::Map<String, serde_json::Value>, String), OracleError> {
        let first = self.complete(req)?;
        if let Some(map) = json::extract_object(&first.text) {
            return Ok((map, first.text));
        }
        let retry = self.retry_request(req)?;
        let second = self.complete(&retry)?;
        match json::extract_object(&second.text) {
            Some(map) => Ok((map, second.text)),
            None => Err(OracleError::JsonUnparseable { raw: second.text }),
        }
    }

    /// The re-prompt sent after an unparseable JSON reply.
    pub fn retry_request(&self, req: &ChatRequest) -> Result<ChatRequest, OracleError> {
        let mut vars = req.vars.clone();
        vars.insert("previous_prompt".into(), req.rendered_prompt.clone());
        vars.insert("attempt".into(), "2".into());
        let rendered_prompt = self.render(templates::JSON_RETRY, &vars)?;
        vars.remove("previous_prompt");
        Ok(ChatRequest {
            template_id: req.template_id.clone(),
            vars,
            rendered_prompt,
            ..req.clone()
        })
    }

    pub fn probe_binary(&self, req: &ChatRequest) -> Result<BinaryProbe, OracleError> {
        let raw = self.backend.probe(req)?;
        self.record(CallKind::Probe, raw.usage, raw.wall_time);
        let label = normalize_probe_label(&raw.text).ok_or(OracleError::ProbeUnparseable(raw.text))?;
        BinaryProbe::new(label, raw.probability)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>, OracleError> {
        if text.is_empty() {
            return Err(OracleError::Precondition("cannot embed empty text"));
        }
        let e = self.backend.embed(text)?;
        self.record(CallKind::Embed, e.usage, e.wall_time);
        Ok(e.vector)
    }

    pub fn ledger(&self) -> CostLedger {
        lock(&self.ledger).clone()
    }

    pub fn ledger_len(&self) -> usize {
        lock(&self.ledger).len()
    }

    /// Records appended at or after index `from`.
    pub fn records_since(&self, from: usize) -> Vec<CostRecord> {
        lock(&self.ledger).records()[from..].to_vec()
    }

    pub fn report_costs(&self, phase: Option<Phase>) -> CostReport {
        report_costs(&lock(&self.ledger), phase)
    }
}

impl Embedder for Gateway {
    fn embed(&self, text: &str) -> Result<Vec<f64>, MemoryError> {
        Gateway::embed(self, text).map_err(|e| MemoryError::Embedding(e.to_string()))
    }
}
