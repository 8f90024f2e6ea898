//! Rule-table backend for deterministic games and tests.
//!
//! Rules are tried in file order; the first whose template and variable
//! patterns match answers the request. Patterns support `*` wildcards. A
//! request that no rule matches is a test-authoring error and fails loudly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::embed::LocalEmbedder;
use super::templates::render_str;
use super::{Backend, ChatRequest, Completion, EmbedResponse, OracleError, RawProbe, Usage};
use crate::memory::{HeuristicTokenizer, TokenCounter};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedProbe {
    /// Raw first-token text, normalized by the gateway.
    pub answer: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRule {
    /// Template id pattern; `*` matches any.
    pub template: String,
    #[serde(default)]
    pub vars: BTreeMap<String, String>,
    /// Substring the rendered prompt must contain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// Reply text; `{var}` placeholders are filled from the request vars.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ScriptedProbe>,
}

/// An embedding override for texts containing `contains`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRule {
    pub contains: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRules {
    #[serde(default)]
    pub rules: Vec<ScriptedRule>,
    #[serde(default)]
    pub embeddings: Vec<EmbeddingRule>,
}

impl ScriptedRules {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| OracleError::BackendUnavailable(format!("cannot read rules {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| OracleError::Protocol(format!("malformed rules file {}: {e}", path.display())))
    }
}

/// `*`-wildcard match over the whole string.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let parts: Vec<&str> = pattern.split('*').collect();
    if parts.len() == 1 {
        return pattern == text;
    }
    let (first, last) = (parts[0], parts[parts.len() - 1]);
    if !text.starts_with(first) || text.len() < first.len() + last.len() || !text.ends_with(last) {
        return false;
    }
    let mut rest = &text[first.len()..text.len() - last.len()];
    for mid in &parts[1..parts.len() - 1] {
        match rest.find(mid) {
            Some(i) => rest = &rest[i + mid.len()..],
            None => return false,
        }
    }
    true
}

impl ScriptedRule {
    pub fn matches(&self, req: &ChatRequest) -> bool {
        glob_match(&self.template, &req.template_id)
            && self
                .vars
                .iter()
                .all(|(k, pat)| req.vars.get(k).is_some_and(|v| glob_match(pat, v)))
            && self
                .contains
                .as_ref()
                .is_none_or(|c| req.rendered_prompt.contains(c.as_str()))
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    rules: ScriptedRules,
    embedder: LocalEmbedder,
}

impl ScriptedBackend {
    pub const ID: &'static str = "scripted";

    pub fn new(rules: ScriptedRules) -> Self {
        Self {
            rules,
            embedder: LocalEmbedder,
        }
    }

    fn find(&self, req: &ChatRequest) -> Result<&ScriptedRule, OracleError> {
        self.rules
            .rules
            .iter()
            .find(|r| r.matches(req))
            .ok_or_else(|| OracleError::ScriptedMiss {
                template: req.template_id.clone(),
                vars: req.vars.clone(),
            })
    }

    fn usage(req: &ChatRequest, reply: &str) -> Usage {
        let t = HeuristicTokenizer;
        let system = req.system.as_deref().map_or(0, |s| t.count(s));
        Usage {
            prompt_tokens: (t.count(&req.rendered_prompt) + system) as u64,
            completion_tokens: t.count(reply) as u64,
        }
    }
}

fn fill(text: &str, vars: &BTreeMap<String, String>) -> String {
    render_str("scripted-response", text, vars).unwrap_or_else(|_| text.to_string())
}

impl Backend for ScriptedBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn complete(&self, req: &ChatRequest) -> Result<Completion, OracleError> {
        let rule = self.find(req)?;
        let text = match (&rule.response, &rule.probe) {
            (Some(r), _) => fill(r, &req.vars),
            (None, Some(p)) => p.answer.clone(),
            (None, None) => String::new(),
        };
        Ok(Completion {
            usage: Self::usage(req, &text),
            text,
            wall_time: 0.0,
        })
    }

    fn probe(&self, req: &ChatRequest) -> Result<RawProbe, OracleError> {
        let rule = self.find(req)?;
        let (text, probability) = match (&rule.probe, &rule.response) {
            (Some(p), _) => (p.answer.clone(), p.probability),
            (None, Some(r)) => (fill(r, &req.vars), 1.0),
            (None, None) => (String::new(), 0.0),
        };
        Ok(RawProbe {
            usage: Self::usage(req, &text),
            text,
            probability,
            wall_time: 0.0,
        })
    }

    fn embed(&self, text: &str) -> Result<EmbedResponse, OracleError> {
        let vector = match self.rules.embeddings.iter().find(|e| text.contains(e.contains.as_str())) {
            Some(e) => e.vector.clone(),
            None => self
                .embedder
                .embed(text)
                .ok_or(OracleError::Precondition("cannot embed empty text"))?,
        };
        Ok(EmbedResponse {
            vector,
            usage: Usage {
                prompt_tokens: HeuristicTokenizer.count(text) as u64,
                completion_tokens: 0,
            },
            wall_time: 0.0,
        })
    }
}
