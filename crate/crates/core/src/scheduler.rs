//! Target selection by information gain and suspect-list pruning.
//!
//! For each (observer, victim) case the [`IgLedger`] holds one information
//! gain value per completed round and subject. The score of a candidate
//! fuses its recency-weighted historical gain with the expected gain read
//! off a yes/no probe; an ε-greedy rule picks the target.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::oracle::{BinaryProbe, ProbeLabel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("no candidates to select from")]
    EmptyCandidates,
    #[error("candidate {0:?} has no score")]
    MissingScore(String),
    #[error("case ({observer}, {victim}) is not tracked")]
    UntrackedCase { observer: String, victim: String },
    #[error("subject {subject:?} is not tracked for ({observer}, {victim})")]
    UntrackedSubject {
        observer: String,
        victim: String,
        subject: String,
    },
    #[error("parameter {name} = {value} outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("entropy must be non-negative, got {0}")]
    NegativeEntropy(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SchedulerParams {
    #[serde(default = "SchedulerParams::default_beta")]
    pub beta: f64,
    #[serde(default = "SchedulerParams::default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub rng_seed: u64,
}

impl SchedulerParams {
    pub const DEFAULT_BETA: f64 = 0.2;
    pub const DEFAULT_EPSILON: f64 = 0.1;

    fn default_beta() -> f64 {
        Self::DEFAULT_BETA
    }

    fn default_epsilon() -> f64 {
        Self::DEFAULT_EPSILON
    }

    pub fn validate(&self) -> Result<(), SchedulerError> {
        for (name, value) in [("beta", self.beta), ("epsilon", self.epsilon)] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SchedulerError::OutOfRange { name, value });
            }
        }
        Ok(())
    }
}

impl Default for SchedulerParams {
    fn default() -> Self {
        Self {
            beta: Self::DEFAULT_BETA,
            epsilon: Self::DEFAULT_EPSILON,
            rng_seed: 0,
        }
    }
}

type CaseKey = (String, String);

/// Per-round information gains, keyed by (observer, victim) then subject.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IgLedger {
    cases: BTreeMap<String, BTreeMap<String, BTreeMap<String, Vec<f64>>>>,
}

impl IgLedger {
    /// Starts tracking `subjects` for the case with empty histories.
    pub fn track<'a>(&mut self, observer: &str, victim: &str, subjects: impl IntoIterator<Item = &'a str>) {
        let case = self
            .cases
            .entry(observer.to_string())
            .or_default()
            .entry(victim.to_string())
            .or_default();
        for s in subjects {
            case.entry(s.to_string()).or_default();
        }
    }

    fn case(&self, observer: &str, victim: &str) -> Result<&BTreeMap<String, Vec<f64>>, SchedulerError> {
        self.cases
            .get(observer)
            .and_then(|v| v.get(victim))
            .ok_or_else(|| SchedulerError::UntrackedCase {
                observer: observer.into(),
                victim: victim.into(),
            })
    }

    /// Appends `h_prev - h_now` for `questioned` and 0.0 for every other
    /// tracked subject. Returns the recorded gain.
    pub fn record_round_ig(
        &mut self,
        observer: &str,
        victim: &str,
        questioned: &str,
        h_prev: f64,
        h_now: f64,
    ) -> Result<f64, SchedulerError> {
        for h in [h_prev, h_now] {
            if h.is_nan() || h < 0.0 {
                return Err(SchedulerError::NegativeEntropy(h));
            }
        }
        let case = self
            .cases
            .get_mut(observer)
            .and_then(|v| v.get_mut(victim))
            .ok_or_else(|| SchedulerError::UntrackedCase {
                observer: observer.into(),
                victim: victim.into(),
            })?;
        if !case.contains_key(questioned) {
            return Err(SchedulerError::UntrackedSubject {
                observer: observer.into(),
                victim: victim.into(),
                subject: questioned.into(),
            });
        }
        let ig = h_prev - h_now;
        for (subject, history) in case.iter_mut() {
            history.push(if subject == questioned { ig } else { 0.0 });
        }
        Ok(ig)
    }

    pub fn history(&self, observer: &str, victim: &str, subject: &str) -> Result<&[f64], SchedulerError> {
        self.case(observer, victim)?
            .get(subject)
            .map(Vec::as_slice)
            .ok_or_else(|| SchedulerError::UntrackedSubject {
                observer: observer.into(),
                victim: victim.into(),
                subject: subject.into(),
            })
    }

    pub fn cases(&self) -> impl Iterator<Item = CaseKey> + '_ {
        self.cases
            .iter()
            .flat_map(|(o, vs)| vs.keys().map(move |v| (o.clone(), v.clone())))
    }

    pub fn subjects(&self, observer: &str, victim: &str) -> Result<Vec<&str>, SchedulerError> {
        Ok(self.case(observer, victim)?.keys().map(String::as_str).collect())
    }

    /// Recency-weighted mean of the subject's gains before `round`.
    pub fn weighted_historical_ig(
        &self,
        observer: &str,
        victim: &str,
        subject: &str,
        round: usize,
    ) -> Result<f64, SchedulerError> {
        Ok(weighted_historical_ig(self.history(observer, victim, subject)?, round))
    }
}

/// `history[j-1]` is the gain of round `j`. Entries at rounds `j < round`
/// are weighted by `exp(-(round - j))`. An empty window yields 0.
pub fn weighted_historical_ig(history: &[f64], round: usize) -> f64 {
    let upto = history.len().min(round.saturating_sub(1));
    if upto == 0 {
        return 0.0;
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (idx, ig) in history[..upto].iter().enumerate() {
        let j = idx + 1;
        let w = (-((round - j) as f64)).exp();
        num += w * ig;
        den += w;
    }
    num / den
}

/// Probability that questioning yields information: `p` for a yes probe,
/// `1 - p` for a no probe.
pub fn expected_ig(probe: &BinaryProbe) -> f64 {
    let p = probe.probability.clamp(0.0, 1.0);
    match probe.label {
        ProbeLabel::Yes => p,
        ProbeLabel::No => 1.0 - p,
    }
}

pub fn score(params: &SchedulerParams, ig_weighted: f64, e_ig: f64) -> f64 {
    params.beta * ig_weighted + (1.0 - params.beta) * e_ig
}

/// Whether a selection exploited the argmax or explored uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Exploit,
    Explore,
}

/// First candidate with the maximal score.
pub fn argmax<'a>(candidates: &'a [String], scores: &BTreeMap<String, f64>) -> Result<&'a String, SchedulerError> {
    let mut best: Option<(&String, f64)> = None;
    for c in candidates {
        let s = *scores.get(c).ok_or_else(|| SchedulerError::MissingScore(c.clone()))?;
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((c, s));
        }
    }
    best.map(|(c, _)| c).ok_or(SchedulerError::EmptyCandidates)
}

/// ε-greedy selection. Draws one uniform sample for the explore decision
/// and, only when exploring, one uniform index.
pub fn select_target<R: Rng + ?Sized>(
    params: &SchedulerParams,
    candidates: &[String],
    scores: &BTreeMap<String, f64>,
    rng: &mut R,
) -> Result<(String, SelectionMode), SchedulerError> {
    if candidates.is_empty() {
        return Err(SchedulerError::EmptyCandidates);
    }
    let best = argmax(candidates, scores)?;
    if rng.gen::<f64>() < params.epsilon {
        let i = rng.gen_range(0..candidates.len());
        return Ok((candidates[i].clone(), SelectionMode::Explore));
    }
    Ok((best.clone(), SelectionMode::Exploit))
}

/// Names under the `suspicion` key of a refinement reply.
pub fn parse_suspicion(map: &serde_json::Map<String, serde_json::Value>) -> Option<Vec<String>> {
    crate::oracle::json::string_list(map, "suspicion")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneFallback {
    Unparseable,
    EmptyIntersection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneOutcome {
    pub suspects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<PruneFallback>,
    /// Parsed names not in the current list.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
}

/// Intersects the parsed names with `current`, keeping `current`'s order.
/// Names match exactly, else case-insensitively after trimming. An empty
/// or missing result keeps `current`.
pub fn prune_suspects(current: &[String], parsed: Option<&[String]>) -> PruneOutcome {
    let Some(parsed) = parsed else {
        return PruneOutcome {
            suspects: current.to_vec(),
            fallback: Some(PruneFallback::Unparseable),
            dropped: Vec::new(),
        };
    };
    let resolve = |name: &str| -> Option<&String> {
        let name = name.trim();
        current
            .iter()
            .find(|c| c.as_str() == name)
            .or_else(|| current.iter().find(|c| c.to_lowercase() == name.to_lowercase()))
    };
    let mut keep = vec![false; current.len()];
    let mut dropped = Vec::new();
    for name in parsed {
        match resolve(name) {
            Some(c) => {
                let idx = current.iter().position(|x| x == c).expect("resolved from current");
                keep[idx] = true;
            }
            None => dropped.push(name.clone()),
        }
    }
    let suspects: Vec<String> = current
        .iter()
        .zip(&keep)
        .filter(|(_, k)| **k)
        .map(|(c, _)| c.clone())
        .collect();
    if suspects.is_empty() {
        return PruneOutcome {
            suspects: current.to_vec(),
            fallback: Some(PruneFallback::EmptyIntersection),
            dropped,
        };
    }
    PruneOutcome {
        suspects,
        fallback: None,
        dropped,
    }
}
