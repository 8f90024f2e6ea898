//! Question answering after (or instead of) a game, exact-set scoring and
//! weighted aggregation across runs and scripts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::engine::Transcript;
use crate::memory::{is_script, MemoryError, MemorySegment, MemoryStore, RetrievalBudget};
use crate::oracle::{templates, Gateway, OracleError, Phase, RoleContext, Sampling};
use crate::scenario::{AnswerMode, Category, EvalQuestion, QuestionBank, Scenario};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("precondition failed: {0}")]
    Precondition(String),
}

impl EvalError {
    pub fn is_backend_failure(&self) -> bool {
        matches!(self, EvalError::Oracle(_) | EvalError::Memory(MemoryError::Embedding(_)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EvalMode {
    /// Own script plus everything heard during a game.
    #[serde(rename = "post_game")]
    PostGame,
    /// Own script only, no game.
    #[serde(rename = "pp")]
    Personal,
    /// Every character's script, no game.
    #[serde(rename = "op")]
    Omniscient,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::PostGame => "post_game",
            EvalMode::Personal => "pp",
            EvalMode::Omniscient => "op",
        }
    }
}

impl std::str::FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "post" | "post_game" => Ok(EvalMode::PostGame),
            "pp" => Ok(EvalMode::Personal),
            "op" => Ok(EvalMode::Omniscient),
            other => Err(format!("unknown evaluation mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub agent: String,
    /// Labels parsed from the reply; empty when the reply was unparseable.
    pub answers: BTreeSet<String>,
    pub correct: bool,
    #[serde(default)]
    pub reason: String,
    pub raw: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub parse_failed: bool,
}

/// Exact set match, order-free.
pub fn is_correct(answers: &BTreeSet<String>, gold: &BTreeSet<String>) -> bool {
    !answers.is_empty() && answers == gold
}

/// Labels in `raw`, split on commas, lowercased and stripped of quotes.
/// `None` if any piece is not one of `question`'s labels.
pub fn parse_labels(raw: &str, question: &EvalQuestion) -> Option<BTreeSet<String>> {
    let legal: BTreeSet<String> = question.labels().map(str::to_lowercase).collect();
    let mut out = BTreeSet::new();
    for piece in raw.split([',', '，', ';']) {
        let label = piece
            .trim()
            .trim_matches(|c: char| c == '"' || c == '\'' || c == '(' || c == ')' || c == '.' || c.is_whitespace())
            .to_lowercase();
        if label.is_empty() {
            continue;
        }
        if !legal.contains(&label) {
            return None;
        }
        out.insert(label);
    }
    (!out.is_empty()).then_some(out)
}

/// Reads `answer` (string or list) and `reason` from a reply object.
pub fn parse_answer(map: &serde_json::Map<String, Value>, question: &EvalQuestion) -> Option<(BTreeSet<String>, String)> {
    let answer = match map.get("answer")? {
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().filter_map(Value::as_str).collect::<Vec<_>>().join(","),
        _ => return None,
    };
    let labels = parse_labels(&answer, question)?;
    let reason = map.get("reason").and_then(Value::as_str).unwrap_or_default().to_string();
    Some((labels, reason))
}

pub fn choices_text(question: &EvalQuestion) -> String {
    question
        .choices
        .iter()
        .map(|c| format!("{}. {}", c.label, c.text))
        .collect::<Vec<_>>()
        .join("\n")
}

/// The memory an evaluation reads from.
pub struct EvalMemory {
    store: MemoryStore,
    mode: EvalMode,
    agents: Vec<String>,
}

impl EvalMemory {
    /// Script chunks for every agent, embedded through `gateway`.
    pub fn from_scripts(scenario: &Scenario, gateway: &Gateway, mode: EvalMode) -> Result<Self, EvalError> {
        if mode == EvalMode::PostGame {
            return Err(EvalError::Precondition("post-game evaluation needs a transcript".into()));
        }
        let victims: Vec<String> = scenario.victims.iter().map(|v| v.name.clone()).collect();
        let mut store = MemoryStore::new();
        for agent in &scenario.agents {
            store.chunk_script(&agent.name, &agent.background, gateway.tokenizer(), gateway, &victims)?;
        }
        Ok(Self {
            store,
            mode,
            agents: scenario.agents.iter().map(|a| a.name.clone()).collect(),
        })
    }

    /// The memory each agent ended the game with.
    pub fn from_transcript(transcript: &Transcript, scenario: &Scenario) -> Result<Self, EvalError> {
        if transcript.header.scenario_id != scenario.id {
            return Err(EvalError::Precondition(format!(
                "transcript is for scenario {:?}, not {:?}",
                transcript.header.scenario_id, scenario.id
            )));
        }
        if transcript.segments.is_empty() {
            return Err(EvalError::Precondition("transcript carries no memory segments".into()));
        }
        Ok(Self {
            store: MemoryStore::from_segments(transcript.segments.clone())?,
            mode: EvalMode::PostGame,
            agents: scenario.agents.iter().map(|a| a.name.clone()).collect(),
        })
    }

    pub fn mode(&self) -> EvalMode {
        self.mode
    }

    /// Script and dialogue context for `agent`'s answer to `question`.
    fn context(&self, agent: &str, query: &[f64], budget: RetrievalBudget) -> Result<(String, String), EvalError> {
        let join = |segs: &[&MemorySegment]| segs.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n");
        match self.mode {
            EvalMode::PostGame => {
                let segs = self.store.retrieve(agent, query, budget, &|_| true)?;
                let (script, dialog): (Vec<&MemorySegment>, Vec<&MemorySegment>) =
                    segs.into_iter().partition(|s| is_script(s));
                Ok((none_if_empty(join(&script)), none_if_empty(join(&dialog))))
            }
            EvalMode::Personal => {
                let segs = self.store.retrieve(agent, query, budget, &is_script)?;
                Ok((none_if_empty(join(&segs)), "none".into()))
            }
            EvalMode::Omniscient => {
                // The budget is split evenly so every script is represented.
                let share = RetrievalBudget {
                    max_tokens: (budget.max_tokens / self.agents.len().max(1)).max(1),
                };
                let mut parts = Vec::new();
                for owner in &self.agents {
                    let segs = self.store.retrieve(owner, query, share, &is_script)?;
                    if !segs.is_empty() {
                        parts.push(format!("{owner}'s script: {}", join(&segs)));
                    }
                }
                Ok((none_if_empty(parts.join("\n")), "none".into()))
            }
        }
    }
}

fn none_if_empty(s: String) -> String {
    if s.trim().is_empty() {
        "none".into()
    } else {
        s
    }
}

/// Answers every question in `bank` as `agent`, one backend call per
/// question plus at most one re-prompt.
pub fn answer_questions(
    gateway: &Gateway,
    memory: &EvalMemory,
    scenario: &Scenario,
    agent: &str,
    bank: &QuestionBank,
    budget: RetrievalBudget,
    sampling: Sampling,
) -> Result<Vec<AnswerRecord>, EvalError> {
    if scenario.agent(agent).is_none() {
        return Err(EvalError::Precondition(format!("unknown agent {agent:?}")));
    }
    gateway.set_phase(Phase::Evaluation);
    let role = match (memory.mode, scenario.is_murderer(agent)) {
        (EvalMode::Omniscient, _) => RoleContext::Neutral,
        (_, true) => RoleContext::Murderer,
        (_, false) => RoleContext::Civilian,
    };
    let mut out = Vec::with_capacity(bank.questions.len());
    for q in &bank.questions {
        let query = gateway.embed(&q.text)?;
        let (script, dialog) = memory.context(agent, &query, budget)?;
        let template = match (memory.mode, q.answer_mode) {
            (EvalMode::Omniscient, AnswerMode::Single) => templates::OP_SINGLE,
            (EvalMode::Omniscient, AnswerMode::Multi) => templates::OP_MULTI,
            (_, AnswerMode::Single) => templates::EVAL_SINGLE,
            (_, AnswerMode::Multi) => templates::EVAL_MULTI,
        };
        let mut vars = templates::vars([
            ("current_script", script.as_str()),
            ("question", q.text.as_str()),
            ("choices", choices_text(q).as_str()),
            ("agent", agent),
            ("question_id", q.id.as_str()),
        ]);
        if memory.mode != EvalMode::Omniscient {
            vars.insert("dialog_history".into(), dialog);
        }
        let req = gateway.request(template, vars, role, None, sampling)?;
        let record = match gateway.complete_json(&req) {
            Ok((map, raw)) => match parse_answer(&map, q) {
                Some((answers, reason)) => AnswerRecord {
                    question_id: q.id.clone(),
                    agent: agent.into(),
                    correct: is_correct(&answers, &q.gold),
                    answers,
                    reason,
                    raw,
                    parse_failed: false,
                },
                None => failed(q, agent, raw),
            },
            Err(OracleError::JsonUnparseable { raw }) => failed(q, agent, raw),
            Err(e) => return Err(e.into()),
        };
        out.push(record);
    }
    Ok(out)
}

fn failed(q: &EvalQuestion, agent: &str, raw: String) -> AnswerRecord {
    AnswerRecord {
        question_id: q.id.clone(),
        agent: agent.into(),
        answers: BTreeSet::new(),
        correct: false,
        reason: String::new(),
        raw,
        parse_failed: true,
    }
}

/// Σwᵢxᵢ / Σwᵢ; 0 when the weights sum to 0.
pub fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    assert_eq!(values.len(), weights.len(), "one weight per value");
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    values.iter().zip(weights).map(|(x, w)| x * w).sum::<f64>() / total
}

/// Population standard deviation around the weighted mean.
pub fn weighted_std(values: &[f64], weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total == 0.0 || values.iter().all(|v| *v == values[0]) {
        return 0.0;
    }
    let m = weighted_mean(values, weights);
    let var = values.iter().zip(weights).map(|(x, w)| w * (x - m).powi(2)).sum::<f64>() / total;
    var.sqrt()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

/// Accuracies for one run over one script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptScore {
    pub scenario_id: String,
    #[serde(default)]
    pub run: usize,
    pub categories: BTreeMap<Category, CategoryScore>,
    pub questions: usize,
    pub correct: usize,
    pub points_earned: u32,
    pub points_possible: u32,
    /// Points earned over points possible.
    pub overall: f64,
    /// Correct answers over questions answered.
    pub overall_by_count: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub win_rate: Option<f64>,
    #[serde(default)]
    pub cases: usize,
}

/// Scores `records` against `bank`. Every record must name a bank question.
pub fn score_records(
    records: &[AnswerRecord],
    bank: &QuestionBank,
    run: usize,
    win_rate: Option<f64>,
    cases: usize,
) -> Result<ScriptScore, EvalError> {
    let mut categories: BTreeMap<Category, CategoryScore> =
        Category::ALL.iter().map(|c| (*c, CategoryScore::default())).collect();
    let (mut earned, mut possible, mut correct) = (0u32, 0u32, 0usize);
    for r in records {
        let q = bank
            .question(&r.question_id)
            .ok_or_else(|| EvalError::Precondition(format!("record for unknown question {:?}", r.question_id)))?;
        let c = categories.get_mut(&q.category).expect("all categories present");
        c.total += 1;
        possible += q.weight();
        if r.correct {
            c.correct += 1;
            correct += 1;
            earned += q.weight();
        }
    }
    for c in categories.values_mut() {
        c.accuracy = if c.total == 0 { 0.0 } else { c.correct as f64 / c.total as f64 };
    }
    let ratio = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    Ok(ScriptScore {
        scenario_id: bank.scenario_id.clone(),
        run,
        categories,
        questions: records.len(),
        correct,
        points_earned: earned,
        points_possible: possible,
        overall: ratio(earned as f64, possible as f64),
        overall_by_count: ratio(correct as f64, records.len() as f64),
        win_rate,
        cases,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    /// Plain average of `values`.
    pub unweighted_mean: f64,
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Stat {
    pub fn new(values: Vec<f64>, weights: Vec<f64>) -> Self {
        let ones = vec![1.0; values.len()];
        Self {
            mean: weighted_mean(&values, &weights),
            std: weighted_std(&values, &weights),
            unweighted_mean: weighted_mean(&values, &ones),
            values,
            weights,
        }
    }

    fn cell(&self) -> String {
        format!("{:.4} ± {:.4}", self.mean, self.std)
    }
}

/// Aggregate over every (script, run) score.
///
/// Category rows weight each score by its question count in that category,
/// `overall` by points possible, `overall_by_count` by questions answered
/// and `win_rate` by the number of cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mode: EvalMode,
    pub agent_label: String,
    pub scores: Vec<ScriptScore>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub win_rate: Option<Stat>,
    pub categories: BTreeMap<Category, Stat>,
    pub overall: Stat,
    pub overall_by_count: Stat,
}

impl ScoreReport {
    pub fn aggregate(mode: EvalMode, agent_label: impl Into<String>, scores: Vec<ScriptScore>) -> Self {
        let categories = Category::ALL
            .iter()
            .map(|c| {
                let values = scores.iter().map(|s| s.categories[c].accuracy).collect();
                let weights = scores.iter().map(|s| s.categories[c].total as f64).collect();
                (*c, Stat::new(values, weights))
            })
            .collect();
        let overall = Stat::new(
            scores.iter().map(|s| s.overall).collect(),
            scores.iter().map(|s| s.points_possible as f64).collect(),
        );
        let overall_by_count = Stat::new(
            scores.iter().map(|s| s.overall_by_count).collect(),
            scores.iter().map(|s| s.questions as f64).collect(),
        );
        let with_rate: Vec<&ScriptScore> = scores.iter().filter(|s| s.win_rate.is_some()).collect();
        let win_rate = (!with_rate.is_empty()).then(|| {
            Stat::new(
                with_rate.iter().map(|s| s.win_rate.unwrap_or_default()).collect(),
                with_rate.iter().map(|s| s.cases.max(1) as f64).collect(),
            )
        });
        Self {
            mode,
            agent_label: agent_label.into(),
            scores,
            win_rate,
            categories,
            overall,
            overall_by_count,
        }
    }

    /// Pools the scores of several reports with the same mode.
    pub fn combine(reports: &[ScoreReport]) -> Result<Self, EvalError> {
        let first = reports.first().ok_or_else(|| EvalError::Precondition("nothing to combine".into()))?;
        if reports.iter().any(|r| r.mode != first.mode) {
            return Err(EvalError::Precondition("cannot combine reports of different modes".into()));
        }
        let scores = reports.iter().flat_map(|r| r.scores.iter().cloned()).collect();
        Ok(Self::aggregate(first.mode, first.agent_label.clone(), scores))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Aligned text with one row per metric, `mean ± std`.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, String)> = Vec::new();
        if let Some(w) = &self.win_rate {
            rows.push(("Win Rate".into(), w.cell()));
        }
        for (c, s) in &self.categories {
            rows.push((c.to_string(), s.cell()));
        }
        rows.push(("Overall".into(), self.overall.cell()));
        rows.push(("Overall (by count)".into(), self.overall_by_count.cell()));
        let width = rows.iter().map(|(k, _)| k.chars().count()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        let header = format!("{} [{}]", self.agent_label, self.mode.as_str());
        let _ = writeln!(out, "{:<width$}  {header}", "Metric");
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }
}

/// Where an evaluation gets its memory.
pub enum EvalSource<'a> {
    Scripts(EvalMode),
    Transcript(&'a Transcript),
}

/// Answers `bank` for every agent `k` times and aggregates. Each run's score
/// pools all agents' answers.
#[allow(clippy::too_many_arguments)]
pub fn repeat_eval(
    gateway: &Gateway,
    scenario: &Scenario,
    bank: &QuestionBank,
    source: EvalSource<'_>,
    agents: &[String],
    k: usize,
    budget: RetrievalBudget,
    sampling: Sampling,
) -> Result<(ScoreReport, Vec<Vec<AnswerRecord>>), EvalError> {
    if k == 0 {
        return Err(EvalError::Precondition("repeat count must be at least 1".into()));
    }
    if agents.is_empty() {
        return Err(EvalError::Precondition("no agents to evaluate".into()));
    }
    let (memory, win_rate, cases) = match source {
        EvalSource::Scripts(mode) => (EvalMemory::from_scripts(scenario, gateway, mode)?, None, 0),
        EvalSource::Transcript(t) => (EvalMemory::from_transcript(t, scenario)?, t.win_rate(), t.tallies().len()),
    };
    let mut scores = Vec::with_capacity(k);
    let mut runs = Vec::with_capacity(k);
    for run in 0..k {
        let mut records = Vec::new();
        for agent in agents {
            records.extend(answer_questions(gateway, &memory, scenario, agent, bank, budget, sampling)?);
        }
        scores.push(score_records(&records, bank, run, win_rate, cases)?);
        runs.push(records);
    }
    let label = if agents.len() == 1 { agents[0].clone() } else { "all agents".into() };
    Ok((ScoreReport::aggregate(memory.mode(), label, scores), runs))
}

/// Mean accuracy of answering each question with one uniformly random label.
/// Questions whose gold set has more than one label contribute 0.
pub fn expected_random_accuracy(bank: &QuestionBank) -> f64 {
    if bank.questions.is_empty() {
        return 0.0;
    }
    bank.questions
        .iter()
        .map(|q| if q.gold.len() == 1 { 1.0 / q.choices.len() as f64 } else { 0.0 })
        .sum::<f64>()
        / bank.questions.len() as f64
}
