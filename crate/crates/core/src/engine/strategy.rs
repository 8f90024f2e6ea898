//! Strategy plugins: who to question, what to ask, how to answer and vote.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::PLAYER_STAR;
use super::transcript::{EventKind, TranscriptEvent};
use super::{EngineError, Game};

pub const WEREWOLF_PREDEFINED: &str = "werewolf_predefined";
pub const RANDOM: &str = "random";
pub const HUMAN: &str = "human";

/// Expert-written questions asked in order by the predefined-question
/// baseline. `{victim}` is replaced by the victim's name.
pub const PREDEFINED_QUESTIONS: [&str; 10] = [
    "What was your timeline on the day of the incident?",
    "How would you describe your relationship with {victim}?",
    "When was the last time you saw {victim}?",
    "Do you know if {victim} had any enemies or conflicts with anyone?",
    "What details or anomalies did you notice at the scene of the crime?",
    "Did {victim} mention anything to you or others that made them worried or fearful recently?",
    "Did you notice any unusual people or behaviors on the day of the incident?",
    "How much do you know about {victim}'s secrets or personal life?",
    "Were there any items or remains found at the crime scene that could be related to the crime?",
    "Do you have any personal opinions or theories about the case?",
];

/// The `index`-th predefined question (0-based, cycling) for `victim`.
pub fn predefined_question(index: usize, victim: &str) -> String {
    PREDEFINED_QUESTIONS[index % PREDEFINED_QUESTIONS.len()].replace("{victim}", victim)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetChoice {
    pub target: String,
    /// Strategy-specific record for the target-selection event.
    pub detail: Value,
}

/// Decides one agent's moves. Every method defaults to the PLAYER*
/// behaviour provided by [`Game`].
pub trait Strategy: Send + Sync {
    fn id(&self) -> &str;

    fn select_target(
        &self,
        game: &mut Game,
        observer: &str,
        victim: &str,
        candidates: &[String],
    ) -> Result<TargetChoice, EngineError> {
        game.player_star_target(observer, victim, candidates)
    }

    /// Exactly `count` questions for `target`.
    fn questions(
        &self,
        game: &mut Game,
        observer: &str,
        victim: &str,
        target: &str,
        count: usize,
    ) -> Result<Vec<String>, EngineError> {
        game.generate_questions(observer, victim, target, count)
    }

    fn reply(
        &self,
        game: &mut Game,
        responder: &str,
        asker: &str,
        victim: &str,
        question: &str,
        question_ordinal: u64,
    ) -> Result<String, EngineError> {
        let _ = question_ordinal;
        game.llm_reply(responder, asker, victim, question)
    }

    /// Names the observer keeps as suspects; `None` when unparseable.
    fn refine(&self, game: &mut Game, observer: &str, victim: &str) -> Result<Option<Vec<String>>, EngineError> {
        game.llm_refine(observer, victim)
    }

    fn vote(&self, game: &mut Game, voter: &str, victim: &str) -> Result<String, EngineError> {
        game.default_vote(voter, victim)
    }
}

#[derive(Debug, Default)]
pub struct PlayerStar;

impl Strategy for PlayerStar {
    fn id(&self) -> &str {
        PLAYER_STAR
    }
}

/// Uniformly random targets; questions, replies and pruning as PLAYER*.
#[derive(Debug, Default)]
pub struct RandomStrategy;

impl Strategy for RandomStrategy {
    fn id(&self) -> &str {
        RANDOM
    }

    fn select_target(
        &self,
        game: &mut Game,
        _observer: &str,
        _victim: &str,
        candidates: &[String],
    ) -> Result<TargetChoice, EngineError> {
        let target = game.random_choice(candidates)?;
        Ok(TargetChoice {
            target,
            detail: json!({"strategy": RANDOM}),
        })
    }
}

/// Random targets and questions drawn in order from
/// [`PREDEFINED_QUESTIONS`].
#[derive(Debug, Default)]
pub struct WerewolfPredefined;

impl Strategy for WerewolfPredefined {
    fn id(&self) -> &str {
        WEREWOLF_PREDEFINED
    }

    fn select_target(
        &self,
        game: &mut Game,
        _observer: &str,
        _victim: &str,
        candidates: &[String],
    ) -> Result<TargetChoice, EngineError> {
        let target = game.random_choice(candidates)?;
        Ok(TargetChoice {
            target,
            detail: json!({"strategy": WEREWOLF_PREDEFINED}),
        })
    }

    fn questions(
        &self,
        game: &mut Game,
        _observer: &str,
        victim: &str,
        _target: &str,
        count: usize,
    ) -> Result<Vec<String>, EngineError> {
        let start = (game.round() as usize - 1) * count;
        Ok((start..start + count).map(|i| predefined_question(i, victim)).collect())
    }
}

/// A pending decision for the human seat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum HumanRequest {
    Ask {
        victim: String,
        candidates: Vec<String>,
        question_index: usize,
        questions_total: usize,
    },
    Answer {
        question_id: u64,
        asker: String,
        victim: String,
        question: String,
    },
    Vote {
        victim: String,
        choices: Vec<String>,
    },
}

impl HumanRequest {
    pub fn kind(&self) -> &'static str {
        match self {
            HumanRequest::Ask { .. } => "ask",
            HumanRequest::Answer { .. } => "answer",
            HumanRequest::Vote { .. } => "vote",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum HumanResponse {
    Ask { target: String, text: String },
    Answer { text: String },
    Vote { accused: String },
}

/// Source of human decisions. `request` blocks up to `timeout` and returns
/// `None` when nothing arrived.
pub trait HumanChannel: Send + Sync {
    fn request(&self, seat: &str, request: &HumanRequest, timeout: Duration) -> Option<HumanResponse>;
}

/// Receives every transcript event as it is appended.
pub trait EventSink: Send + Sync {
    fn on_event(&self, event: &TranscriptEvent);
}

/// Decisions come from a [`HumanChannel`]; a missing channel, a timeout or
/// an illegal response falls back to [`RandomStrategy`].
#[derive(Debug, Default)]
pub struct HumanStrategy {
    /// Question text received with the target choice, keyed by (observer, victim).
    pending: Mutex<BTreeMap<(String, String), String>>,
}

impl HumanStrategy {
    fn ask(game: &mut Game, seat: &str, request: HumanRequest) -> Result<Option<HumanResponse>, EngineError> {
        let Some(channel) = game.human_channel() else {
            return Ok(None);
        };
        let timeout = Duration::from_secs(game.config().human_timeout_secs);
        game.emit(
            EventKind::Diagnostic,
            vec![seat.to_string()],
            json!({"kind": "awaiting_human", "request": request, "timeout_secs": timeout.as_secs()}),
        );
        Ok(channel.request(seat, &request, timeout))
    }

    fn fallback(game: &mut Game, seat: &str, action: &str, reason: &str) {
        game.emit(
            EventKind::Diagnostic,
            vec![seat.to_string()],
            json!({"kind": "human_fallback", "action": action, "reason": reason}),
        );
    }
}

impl Strategy for HumanStrategy {
    fn id(&self) -> &str {
        HUMAN
    }

    fn select_target(
        &self,
        game: &mut Game,
        observer: &str,
        victim: &str,
        candidates: &[String],
    ) -> Result<TargetChoice, EngineError> {
        let total = game.config().questions_per_round as usize;
        let request = HumanRequest::Ask {
            victim: victim.into(),
            candidates: candidates.to_vec(),
            question_index: 0,
            questions_total: total,
        };
        match Self::ask(game, observer, request)? {
            Some(HumanResponse::Ask { target, text }) if candidates.contains(&target) && !text.trim().is_empty() => {
                self.pending
                    .lock()
                    .unwrap_or_else(|e| e.into_inner())
                    .insert((observer.into(), victim.into()), text.trim().to_string());
                Ok(TargetChoice {
                    target,
                    detail: json!({"strategy": HUMAN}),
                })
            }
            other => {
                let reason = if other.is_some() { "illegal" } else { "timeout" };
                Self::fallback(game, observer, "ask", reason);
                RandomStrategy.select_target(game, observer, victim, candidates)
            }
        }
    }

    fn questions(
        &self,
        game: &mut Game,
        observer: &str,
        victim: &str,
        target: &str,
        count: usize,
    ) -> Result<Vec<String>, EngineError> {
        let first = self
            .pending
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(&(observer.to_string(), victim.to_string()));
        let Some(first) = first else {
            return game.generate_questions(observer, victim, target, count);
        };
        let mut out = vec![first];
        while out.len() < count {
            let request = HumanRequest::Ask {
                victim: victim.into(),
                candidates: vec![target.to_string()],
                question_index: out.len(),
                questions_total: count,
            };
            match Self::ask(game, observer, request)? {
                Some(HumanResponse::Ask { target: t, text }) if t == target && !text.trim().is_empty() => {
                    out.push(text.trim().to_string())
                }
                other => {
                    let reason = if other.is_some() { "illegal" } else { "timeout" };
                    Self::fallback(game, observer, "ask", reason);
                    let rest = game.generate_questions(observer, victim, target, count - out.len())?;
                    out.extend(rest);
                }
            }
        }
        Ok(out)
    }

    fn reply(
        &self,
        game: &mut Game,
        responder: &str,
        asker: &str,
        victim: &str,
        question: &str,
        question_ordinal: u64,
    ) -> Result<String, EngineError> {
        let request = HumanRequest::Answer {
            question_id: question_ordinal,
            asker: asker.into(),
            victim: victim.into(),
            question: question.into(),
        };
        match Self::ask(game, responder, request)? {
            Some(HumanResponse::Answer { text }) if !text.trim().is_empty() => Ok(text.trim().to_string()),
            other => {
                let reason = if other.is_some() { "illegal" } else { "timeout" };
                Self::fallback(game, responder, "answer", reason);
                game.llm_reply(responder, asker, victim, question)
            }
        }
    }

    fn refine(&self, game: &mut Game, observer: &str, victim: &str) -> Result<Option<Vec<String>>, EngineError> {
        Ok(Some(game.suspects(observer, victim)?))
    }

    fn vote(&self, game: &mut Game, voter: &str, victim: &str) -> Result<String, EngineError> {
        let choices = game.legal_accusations(voter, victim);
        let request = HumanRequest::Vote {
            victim: victim.into(),
            choices: choices.clone(),
        };
        match Self::ask(game, voter, request)? {
            Some(HumanResponse::Vote { accused }) if choices.contains(&accused) => Ok(accused),
            other => {
                let reason = if other.is_some() { "illegal" } else { "timeout" };
                Self::fallback(game, voter, "vote", reason);
                game.default_vote(voter, victim)
            }
        }
    }
}

/// Strategies by id.
#[derive(Clone)]
pub struct StrategyRegistry {
    map: BTreeMap<String, Arc<dyn Strategy>>,
}

impl std::fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.map.keys()).finish()
    }
}

impl Default for StrategyRegistry {
    /// The shipped strategies.
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(PLAYER_STAR, Arc::new(PlayerStar)).expect("fresh id");
        r.register(WEREWOLF_PREDEFINED, Arc::new(WerewolfPredefined)).expect("fresh id");
        r.register(RANDOM, Arc::new(RandomStrategy)).expect("fresh id");
        r.register(HUMAN, Arc::new(HumanStrategy::default())).expect("fresh id");
        r
    }
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        Self { map: BTreeMap::new() }
    }

    pub fn register(&mut self, id: &str, strategy: Arc<dyn Strategy>) -> Result<(), EngineError> {
        if self.map.contains_key(id) {
            return Err(EngineError::DuplicateStrategy(id.to_string()));
        }
        self.map.insert(id.to_string(), strategy);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Arc<dyn Strategy>> {
        self.map.get(id).cloned()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_predefined_question() {
        assert_eq!(predefined_question(0, "V"), "What was your timeline on the day of the incident?");
        assert_eq!(predefined_question(10, "V"), predefined_question(0, "V"));
        assert_eq!(predefined_question(2, "Ada"), "When was the last time you saw Ada?");
    }

    #[test]
    fn duplicate_registration() {
        let mut r = StrategyRegistry::default();
        assert!(matches!(
            r.register(PLAYER_STAR, Arc::new(PlayerStar)),
            Err(EngineError::DuplicateStrategy(_))
        ));
        assert_eq!(r.ids().count(), 4);
    }

    #[test]
    fn human_messages_round_trip() {
        let r = HumanResponse::Ask {
            target: "B".into(),
            text: "Why?".into(),
        };
        let s = serde_json::to_string(&r).unwrap();
        assert_eq!(s, r#"{"action":"ask","target":"B","text":"Why?"}"#);
        assert_eq!(serde_json::from_str::<HumanResponse>(&s).unwrap(), r);
    }
}
