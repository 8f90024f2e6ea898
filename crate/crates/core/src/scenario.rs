//! Game scripts and evaluation question banks.
//!
//! A [`Scenario`] is the immutable description of one murder-mystery script:
//! the playable characters in canonical order, the victims with their true
//! murderers, and the shared rules text. Question banks hold the
//! multiple-choice inference questions asked after a game.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed document {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("validation failed: {}", join_diagnostics(.0))]
    Validation(Vec<Diagnostic>),
}

fn join_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .filter(|d| d.severity == Severity::Error)
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// A validation finding with the JSON-ish path of the offending field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            path: path.into(),
            message: message.into(),
        }
    }

    fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} at {}: {}", self.path, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub title: String,
    #[serde(rename = "language")]
    pub language_tag: String,
    #[serde(rename = "rules")]
    pub rules_text: String,
    pub agents: Vec<CharacterScript>,
    pub victims: Vec<Victim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterScript {
    pub name: String,
    pub background: String,
    #[serde(default)]
    pub objectives: Vec<String>,
    /// Names of the victims this character murdered.
    #[serde(default)]
    pub murderer_of: Vec<String>,
    /// Set when a character intentionally has no objectives.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub no_objectives: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Victim {
    pub name: String,
    pub murderers: Vec<String>,
}

impl Scenario {
    pub fn agent_names(&self) -> impl Iterator<Item = &str> {
        self.agents.iter().map(|a| a.name.as_str())
    }

    pub fn agent(&self, name: &str) -> Option<&CharacterScript> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn agent_index(&self, name: &str) -> Option<usize> {
        self.agents.iter().position(|a| a.name == name)
    }

    pub fn victim(&self, name: &str) -> Option<&Victim> {
        self.victims.iter().find(|v| v.name == name)
    }

    pub fn is_murderer_of(&self, agent: &str, victim: &str) -> bool {
        self.victim(victim)
            .is_some_and(|v| v.murderers.iter().any(|m| m == agent))
    }

    /// Victims killed by `agent`, in scenario order.
    pub fn victims_of(&self, agent: &str) -> Vec<&str> {
        self.victims
            .iter()
            .filter(|v| v.murderers.iter().any(|m| m == agent))
            .map(|v| v.name.as_str())
            .collect()
    }

    pub fn is_murderer(&self, agent: &str) -> bool {
        !self.victims_of(agent).is_empty()
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Checks every scenario invariant. Returns an empty list iff all hold.
pub fn validate_scenario(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if s.id.trim().is_empty() {
        out.push(Diagnostic::error("id", "scenario id is empty"));
    }
    if s.agents.len() < 2 {
        out.push(Diagnostic::error(
            "agents",
            format!("at least 2 agents required, found {}", s.agents.len()),
        ));
    }
    if s.victims.is_empty() {
        out.push(Diagnostic::error("victims", "at least 1 victim required"));
    }

    let mut seen = BTreeSet::new();
    for (i, a) in s.agents.iter().enumerate() {
        let path = format!("agents[{i}]");
        if a.name.trim().is_empty() {
            out.push(Diagnostic::error(format!("{path}.name"), "empty name"));
        } else if !seen.insert(a.name.as_str()) {
            out.push(Diagnostic::error(
                format!("{path}.name"),
                format!("duplicate character name {:?}", a.name),
            ));
        }
        if a.background.trim().is_empty() {
            out.push(Diagnostic::error(
                format!("{path}.background"),
                "background script is empty",
            ));
        }
        if a.objectives.is_empty() && !a.no_objectives {
            out.push(Diagnostic::warning(
                format!("{path}.objectives"),
                "no objectives and `no_objectives` is not set",
            ));
        }
        for (j, v) in a.murderer_of.iter().enumerate() {
            match s.victim(v) {
                None => out.push(Diagnostic::error(
                    format!("{path}.murderer_of[{j}]"),
                    format!("unknown victim {v:?}"),
                )),
                Some(victim) if !victim.murderers.contains(&a.name) => out.push(Diagnostic::error(
                    format!("{path}.murderer_of[{j}]"),
                    format!("victim {v:?} does not list {:?} among its murderers", a.name),
                )),
                Some(_) => {}
            }
        }
    }

    let mut victim_names = BTreeSet::new();
    for (k, v) in s.victims.iter().enumerate() {
        let path = format!("victims[{k}]");
        if v.name.trim().is_empty() {
            out.push(Diagnostic::error(format!("{path}.name"), "empty name"));
        } else if !victim_names.insert(v.name.as_str()) {
            out.push(Diagnostic::error(
                format!("{path}.name"),
                format!("duplicate victim name {:?}", v.name),
            ));
        }
        if v.murderers.is_empty() {
            out.push(Diagnostic::error(
                format!("{path}.murderers"),
                "a victim needs at least one murderer",
            ));
        }
        let mut dup = BTreeSet::new();
        for (j, m) in v.murderers.iter().enumerate() {
            if !dup.insert(m.as_str()) {
                out.push(Diagnostic::error(
                    format!("{path}.murderers[{j}]"),
                    format!("murderer {m:?} listed twice"),
                ));
            }
            match s.agent(m) {
                None => out.push(Diagnostic::error(
                    format!("{path}.murderers[{j}]"),
                    format!("murderer {m:?} is not an agent"),
                )),
                Some(agent) if !agent.murderer_of.contains(&v.name) => {
                    out.push(Diagnostic::error(
                        format!("{path}.murderers[{j}]"),
                        format!("agent {m:?} does not flag {:?} in murderer_of", v.name),
                    ))
                }
                Some(_) => {}
            }
        }
    }
    out
}

fn read(path: &Path) -> Result<String, ScenarioError> {
    fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, ScenarioError> {
    let scenario: Scenario = serde_json::from_str(text).map_err(|source| ScenarioError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let diags = validate_scenario(&scenario);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(ScenarioError::Validation(diags));
    }
    for d in &diags {
        tracing::warn!(scenario = %scenario.id, "{d}");
    }
    Ok(scenario)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    parse_scenario(&read(path)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Objective,
    Reasoning,
    Relations,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Objective, Category::Reasoning, Category::Relations];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Objective => "Objective",
            Category::Reasoning => "Reasoning",
            Category::Relations => "Relations",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ScoreClass {
    A,
    B,
    C,
}

impl ScoreClass {
    /// Points awarded for a correct answer.
    pub fn weight(self) -> u32 {
        match self {
            ScoreClass::A => 10,
            ScoreClass::B => 5,
            ScoreClass::C => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerMode {
    Single,
    Multi,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Choice {
    pub label: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalQuestion {
    pub id: String,
    pub category: Category,
    pub score_class: ScoreClass,
    #[serde(rename = "mode")]
    pub answer_mode: AnswerMode,
    pub text: String,
    pub choices: Vec<Choice>,
    pub gold: BTreeSet<String>,
}

impl EvalQuestion {
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.choices.iter().map(|c| c.label.as_str())
    }

    pub fn weight(&self) -> u32 {
        self.score_class.weight()
    }
}

/// Expected per-category question counts, checked at load time when present.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    #[serde(rename = "Objective", default)]
    pub objective: usize,
    #[serde(rename = "Reasoning", default)]
    pub reasoning: usize,
    #[serde(rename = "Relations", default)]
    pub relations: usize,
}

impl CategoryCounts {
    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Objective => self.objective,
            Category::Reasoning => self.reasoning,
            Category::Relations => self.relations,
        }
    }

    pub fn total(&self) -> usize {
        self.objective + self.reasoning + self.relations
    }

    fn bump(&mut self, c: Category) {
        match c {
            Category::Objective => self.objective += 1,
            Category::Reasoning => self.reasoning += 1,
            Category::Relations => self.relations += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionBank {
    pub scenario_id: String,
    #[serde(default)]
    pub questions: Vec<EvalQuestion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_counts: Option<CategoryCounts>,
}

impl QuestionBank {
    pub fn counts(&self) -> CategoryCounts {
        let mut c = CategoryCounts::default();
        for q in &self.questions {
            c.bump(q.category);
        }
        c
    }

    pub fn question(&self, id: &str) -> Option<&EvalQuestion> {
        self.questions.iter().find(|q| q.id == id)
    }

    /// Sum of class weights over all questions.
    pub fn total_points(&self) -> u32 {
        self.questions.iter().map(EvalQuestion::weight).sum()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedBank {
    pub bank: QuestionBank,
    pub warnings: Vec<Diagnostic>,
}

fn is_label(s: &str) -> bool {
    let mut chars = s.chars();
    matches!((chars.next(), chars.next()), (Some(c), None) if c.is_ascii_lowercase())
}

/// Validates a bank against its scenario. Errors abort loading, warnings don't.
pub fn validate_bank(bank: &QuestionBank, scenario: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if bank.scenario_id != scenario.id {
        out.push(Diagnostic::error(
            "scenario_id",
            format!("bank is for {:?}, scenario is {:?}", bank.scenario_id, scenario.id),
        ));
    }
    let names: BTreeSet<&str> = scenario
        .agent_names()
        .chain(scenario.victims.iter().map(|v| v.name.as_str()))
        .collect();
    let mut ids = BTreeSet::new();
    for (i, q) in bank.questions.iter().enumerate() {
        let path = format!("questions[{i}]");
        if !ids.insert(q.id.as_str()) {
            out.push(Diagnostic::error(format!("{path}.id"), format!("duplicate id {:?}", q.id)));
        }
        if q.choices.is_empty() {
            out.push(Diagnostic::error(format!("{path}.choices"), "no choices"));
        }
        let mut labels = BTreeSet::new();
        for (j, c) in q.choices.iter().enumerate() {
            if !is_label(&c.label) {
                out.push(Diagnostic::error(
                    format!("{path}.choices[{j}].label"),
                    format!("label {:?} is not a single lowercase letter", c.label),
                ));
            }
            if !labels.insert(c.label.as_str()) {
                out.push(Diagnostic::error(
                    format!("{path}.choices[{j}].label"),
                    format!("duplicate label {:?}", c.label),
                ));
            }
        }
        if q.gold.is_empty() {
            out.push(Diagnostic::error(format!("{path}.gold"), "gold set is empty"));
        }
        for g in &q.gold {
            if !labels.contains(g.as_str()) {
                out.push(Diagnostic::error(
                    format!("{path}.gold"),
                    format!("gold label {g:?} is not among the choices"),
                ));
            }
        }
        if q.answer_mode == AnswerMode::Single && q.gold.len() != 1 {
            out.push(Diagnostic::error(
                format!("{path}.gold"),
                format!("single-choice question has {} gold labels", q.gold.len()),
            ));
        }
        // Questions whose choices name characters should only have character gold answers.
        let names_characters = q.choices.iter().any(|c| names.contains(c.text.trim()));
        if names_characters {
            for c in q.choices.iter().filter(|c| q.gold.contains(&c.label)) {
                if !names.contains(c.text.trim()) {
                    out.push(Diagnostic::warning(
                        format!("{path}.gold"),
                        format!("gold choice {:?} names no character of the scenario", c.text),
                    ));
                }
            }
        }
    }
    if let Some(expected) = &bank.expected_counts {
        let actual = bank.counts();
        for c in Category::ALL {
            if expected.get(c) != actual.get(c) {
                out.push(Diagnostic::error(
                    "expected_counts",
                    format!("{c}: expected {} questions, found {}", expected.get(c), actual.get(c)),
                ));
            }
        }
    }
    out
}

pub fn parse_question_bank(
    text: &str,
    path: &Path,
    scenario: &Scenario,
) -> Result<LoadedBank, ScenarioError> {
    let bank = if text.trim().is_empty() {
        QuestionBank {
            scenario_id: scenario.id.clone(),
            questions: Vec::new(),
            expected_counts: None,
        }
    } else {
        serde_json::from_str(text).map_err(|source| ScenarioError::Parse {
            path: path.to_path_buf(),
            source,
        })?
    };
    let diags = validate_bank(&bank, scenario);
    if diags.iter().any(|d| d.severity == Severity::Error) {
        return Err(ScenarioError::Validation(diags));
    }
    Ok(LoadedBank { bank, warnings: diags })
}

pub fn load_question_bank(
    path: impl AsRef<Path>,
    scenario: &Scenario,
) -> Result<LoadedBank, ScenarioError> {
    let path = path.as_ref();
    parse_question_bank(&read(path)?, path, scenario)
}

/// Per-category counts of a question list, keyed for reporting.
pub fn category_counts(questions: &[EvalQuestion]) -> BTreeMap<Category, usize> {
    let mut out: BTreeMap<Category, usize> = Category::ALL.iter().map(|c| (*c, 0)).collect();
    for q in questions {
        *out.entry(q.category).or_default() += 1;
    }
    out
}
