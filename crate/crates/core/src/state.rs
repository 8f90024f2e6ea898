//! Per-observer beliefs: sensor readings, murderer profiles and the binary
//! suspect matrix.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::Scenario;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("entropy is undefined for a suspect list of size {0}")]
    Domain(usize),
    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),
    #[error("{value:?} is not a legal choice for sensor {sensor:?}")]
    IllegalChoice { sensor: String, value: String },
    #[error("unknown character {0:?}")]
    UnknownCharacter(String),
    #[error("unknown victim {0:?}")]
    UnknownVictim(String),
    #[error("an observer cannot suspect themself ({0:?})")]
    SelfEntry(String),
    #[error("suspect list of {observer:?} for {victim:?} would become empty")]
    EmptySuspectList { observer: String, victim: String },
    #[error("duplicate sensor name {0:?}")]
    DuplicateSensor(String),
    #[error("sensor {0:?} has no choices")]
    NoChoices(String),
}

/// Entropy in nats of a uniform belief over `n` suspects: `ln n`.
pub fn entropy(n: usize) -> Result<f64, StateError> {
    if n < 1 {
        return Err(StateError::Domain(n));
    }
    Ok((n as f64).ln())
}

/// Entropy of the initial suspect list, which holds every other agent.
pub fn initial_entropy(num_agents: usize) -> Result<f64, StateError> {
    entropy(num_agents.saturating_sub(1))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSpec {
    pub name: String,
    #[serde(rename = "sensor_prompt")]
    pub prompt_text: String,
    pub choices: Vec<String>,
    #[serde(rename = "for_search_by_questioning")]
    pub use_in_search: bool,
    #[serde(rename = "for_action_space_refinement")]
    pub use_in_refinement: bool,
    /// Reading assumed before the first probe. Defaults to the last choice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<String>,
}

impl SensorSpec {
    fn builtin(
        name: &str,
        prompt: &str,
        choices: &[&str],
        search: bool,
        refinement: bool,
        initial: &str,
    ) -> Self {
        Self {
            name: name.into(),
            prompt_text: prompt.into(),
            choices: choices.iter().map(|c| c.to_string()).collect(),
            use_in_search: search,
            use_in_refinement: refinement,
            initial: Some(initial.into()),
        }
    }

    pub fn initial_value(&self) -> &str {
        self.initial
            .as_deref()
            .or_else(|| self.choices.last().map(String::as_str))
            .unwrap_or_default()
    }

    pub fn is_legal(&self, value: &str) -> bool {
        self.choices.iter().any(|c| c == value)
    }

    /// The choices formatted for a prompt, e.g. `"Yes" or "No"`.
    pub fn choices_text(&self) -> String {
        let quoted: Vec<String> = self.choices.iter().map(|c| format!("\"{c}\"")).collect();
        match quoted.len() {
            0 => String::new(),
            1 => quoted[0].clone(),
            n => format!("{} or {}", quoted[..n - 1].join(", "), quoted[n - 1]),
        }
    }
}

pub const EMOTION: &str = "emotion";
pub const MOTIVATION: &str = "motivation";
pub const SUSPICION: &str = "suspicion";
pub const INFORMATION_VALUE: &str = "information value";
pub const EVIDENCE: &str = "evidence";
pub const BACKGROUND: &str = "background";

/// Every sensor the engine knows by name.
pub fn sensor_catalog() -> Vec<SensorSpec> {
    vec![
        SensorSpec::builtin(
            EMOTION,
            "What is your emotional inclination towards the character mentioned above?",
            &["Positive", "Natural", "Negative"],
            true,
            true,
            "Natural",
        ),
        SensorSpec::builtin(
            MOTIVATION,
            "What do you think is the relationship between the character mentioned above and the victim? \n  Do you think the character mentioned above has a motive for the crime?",
            &["Yes", "No"],
            true,
            true,
            "No",
        ),
        SensorSpec::builtin(
            SUSPICION,
            "Do you think the character mentioned above is a suspect? \n  This refers to whether the character objectively had the opportunity to commit the crime, such as if someone saw the character at the scene of the crime.",
            &["Yes", "No"],
            true,
            true,
            "No",
        ),
        SensorSpec::builtin(
            INFORMATION_VALUE,
            "What do you think is the probability of obtaining valuable information by continuing to question the character mentioned above?",
            &["High", "Medium", "Low"],
            false,
            true,
            "Medium",
        ),
        SensorSpec::builtin(
            EVIDENCE,
            "Is there direct evidence linking the character mentioned above to the crime scene?",
            &["Yes", "No"],
            true,
            true,
            "No",
        ),
        SensorSpec::builtin(
            BACKGROUND,
            "Does the character mentioned above have a history of conflict, rivalry, or enmity with the victim or others?",
            &["Yes", "No"],
            true,
            true,
            "No",
        ),
    ]
}

/// The five candidate search sensors swept by sensor-selection ablations.
pub const ABLATION_SENSORS: [&str; 5] = [EMOTION, MOTIVATION, SUSPICION, EVIDENCE, BACKGROUND];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorSet {
    sensors: Vec<SensorSpec>,
}

impl Default for SensorSet {
    /// Emotion, motivation and suspicion for both phases, plus the
    /// refinement-only information-value sensor.
    fn default() -> Self {
        Self::from_catalog(&[EMOTION, MOTIVATION, SUSPICION, INFORMATION_VALUE])
            .expect("builtin sensors")
    }
}

impl SensorSet {
    pub fn new(sensors: Vec<SensorSpec>) -> Result<Self, StateError> {
        let mut seen = std::collections::BTreeSet::new();
        for s in &sensors {
            if !seen.insert(s.name.clone()) {
                return Err(StateError::DuplicateSensor(s.name.clone()));
            }
            if s.choices.is_empty() {
                return Err(StateError::NoChoices(s.name.clone()));
            }
        }
        Ok(Self { sensors })
    }

    pub fn from_catalog(names: &[&str]) -> Result<Self, StateError> {
        Self::from_specs(names, &[])
    }

    /// Picks sensors by name from the builtin catalog extended with `extra`.
    pub fn from_specs(names: &[&str], extra: &[SensorSpec]) -> Result<Self, StateError> {
        let catalog = sensor_catalog();
        let sensors = names
            .iter()
            .map(|n| {
                extra
                    .iter()
                    .chain(catalog.iter())
                    .find(|s| s.name == *n)
                    .cloned()
                    .ok_or_else(|| StateError::UnknownSensor(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(sensors)
    }

    pub fn get(&self, name: &str) -> Option<&SensorSpec> {
        self.sensors.iter().find(|s| s.name == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SensorSpec> {
        self.sensors.iter()
    }

    pub fn search(&self) -> impl Iterator<Item = &SensorSpec> {
        self.sensors.iter().filter(|s| s.use_in_search)
    }

    pub fn refinement(&self) -> impl Iterator<Item = &SensorSpec> {
        self.sensors.iter().filter(|s| s.use_in_refinement)
    }

    pub fn names(&self) -> Vec<&str> {
        self.sensors.iter().map(|s| s.name.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorReading {
    pub sensor: String,
    pub value: String,
    pub rationale: String,
    /// 0 for the pre-game prior.
    pub round: u32,
}

/// What one observer currently believes about one subject in one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacterStateVector {
    pub observer: String,
    pub subject: String,
    pub victim: String,
    /// Append-only history per sensor; the last entry is the current value.
    readings: BTreeMap<String, Vec<SensorReading>>,
}

impl CharacterStateVector {
    pub fn new(observer: &str, subject: &str, victim: &str, sensors: &SensorSet) -> Self {
        let readings = sensors
            .iter()
            .map(|s| {
                let prior = SensorReading {
                    sensor: s.name.clone(),
                    value: s.initial_value().to_string(),
                    rationale: "prior".into(),
                    round: 0,
                };
                (s.name.clone(), vec![prior])
            })
            .collect();
        Self {
            observer: observer.into(),
            subject: subject.into(),
            victim: victim.into(),
            readings,
        }
    }

    pub fn update_reading(
        &mut self,
        sensors: &SensorSet,
        reading: SensorReading,
    ) -> Result<(), StateError> {
        let spec = sensors
            .get(&reading.sensor)
            .ok_or_else(|| StateError::UnknownSensor(reading.sensor.clone()))?;
        if !spec.is_legal(&reading.value) {
            return Err(StateError::IllegalChoice {
                sensor: reading.sensor,
                value: reading.value,
            });
        }
        self.readings
            .entry(reading.sensor.clone())
            .or_default()
            .push(reading);
        Ok(())
    }

    pub fn latest(&self, sensor: &str) -> Option<&SensorReading> {
        self.readings.get(sensor).and_then(|h| h.last())
    }

    pub fn history(&self, sensor: &str) -> &[SensorReading] {
        self.readings.get(sensor).map(Vec::as_slice).unwrap_or_default()
    }

    /// One line per sensor in `sensors`, e.g. `emotion: Negative (she lied)`.
    pub fn summary<'a>(&self, sensors: impl Iterator<Item = &'a SensorSpec>) -> String {
        sensors
            .filter_map(|s| self.latest(&s.name))
            .map(|r| format!("{}: {} ({})", r.sensor, r.value, r.rationale))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// State vectors for every (observer, subject, victim) triple of a game.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct StateStore {
    vectors: BTreeMap<(String, String, String), CharacterStateVector>,
}

impl StateStore {
    pub fn init(scenario: &Scenario, sensors: &SensorSet) -> Self {
        let mut vectors = BTreeMap::new();
        for obs in scenario.agent_names() {
            for subj in scenario.agent_names().filter(|s| *s != obs) {
                for v in &scenario.victims {
                    vectors.insert(
                        (obs.to_string(), subj.to_string(), v.name.clone()),
                        CharacterStateVector::new(obs, subj, &v.name, sensors),
                    );
                }
            }
        }
        Self { vectors }
    }

    pub fn get(&self, observer: &str, subject: &str, victim: &str) -> Option<&CharacterStateVector> {
        self.vectors
            .get(&(observer.to_string(), subject.to_string(), victim.to_string()))
    }

    pub fn get_mut(
        &mut self,
        observer: &str,
        subject: &str,
        victim: &str,
    ) -> Option<&mut CharacterStateVector> {
        self.vectors
            .get_mut(&(observer.to_string(), subject.to_string(), victim.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trait {
    Motive,
    Emotion,
    Opportunity,
}

impl Trait {
    pub const ALL: [Trait; 3] = [Trait::Motive, Trait::Emotion, Trait::Opportunity];
}

/// The evolving sketch of the ideal murderer of one victim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MurdererProfile {
    pub victim: String,
    pub traits: BTreeMap<Trait, String>,
    pub revision: u32,
}

impl MurdererProfile {
    pub fn new(victim: &str) -> Self {
        let traits = BTreeMap::from([
            (Trait::Motive, "strong motive".to_string()),
            (Trait::Emotion, "negative emotion".to_string()),
            (Trait::Opportunity, "sufficient opportunity".to_string()),
        ]);
        Self {
            victim: victim.into(),
            traits,
            revision: 0,
        }
    }

    /// Appends an evidence sentence to a trait and bumps the revision.
    pub fn add_evidence(&mut self, t: Trait, evidence: &str) {
        let evidence = evidence.trim();
        if evidence.is_empty() {
            return;
        }
        let entry = self.traits.entry(t).or_default();
        entry.push_str("; ");
        entry.push_str(evidence);
        self.revision += 1;
    }

    pub fn describe(&self) -> String {
        Trait::ALL
            .iter()
            .map(|t| self.traits.get(t).map(String::as_str).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// Binary beliefs `observer suspects subject of killing victim`.
///
/// Stored densely as `[observer][victim][subject]`; the diagonal
/// (observer == subject) is never readable or writable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuspectMatrix {
    agents: Vec<String>,
    victims: Vec<String>,
    bits: Vec<bool>,
}

impl SuspectMatrix {
    /// Everyone but the observer is a suspect for every victim.
    pub fn init(scenario: &Scenario) -> Self {
        let agents: Vec<String> = scenario.agent_names().map(str::to_string).collect();
        let victims: Vec<String> = scenario.victims.iter().map(|v| v.name.clone()).collect();
        let n = agents.len();
        let mut bits = vec![true; n * victims.len() * n];
        for o in 0..n {
            for k in 0..victims.len() {
                bits[(o * victims.len() + k) * n + o] = false;
            }
        }
        Self {
            agents,
            victims,
            bits,
        }
    }

    fn agent_idx(&self, name: &str) -> Result<usize, StateError> {
        self.agents
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| StateError::UnknownCharacter(name.to_string()))
    }

    fn victim_idx(&self, name: &str) -> Result<usize, StateError> {
        self.victims
            .iter()
            .position(|v| v == name)
            .ok_or_else(|| StateError::UnknownVictim(name.to_string()))
    }

    fn row_range(&self, o: usize, k: usize) -> std::ops::Range<usize> {
        let n = self.agents.len();
        let start = (o * self.victims.len() + k) * n;
        start..start + n
    }

    pub fn agents(&self) -> &[String] {
        &self.agents
    }

    pub fn victims(&self) -> &[String] {
        &self.victims
    }

    /// `None` for the diagonal.
    pub fn get(&self, observer: &str, subject: &str, victim: &str) -> Result<Option<bool>, StateError> {
        let (o, s, k) = (self.agent_idx(observer)?, self.agent_idx(subject)?, self.victim_idx(victim)?);
        if o == s {
            return Ok(None);
        }
        Ok(Some(self.bits[self.row_range(o, k).start + s]))
    }

    /// Sets one bit, refusing self entries and refusing to empty a row.
    pub fn set(&mut self, observer: &str, subject: &str, victim: &str, bit: bool) -> Result<(), StateError> {
        let (o, s, k) = (self.agent_idx(observer)?, self.agent_idx(subject)?, self.victim_idx(victim)?);
        if o == s {
            return Err(StateError::SelfEntry(observer.to_string()));
        }
        let range = self.row_range(o, k);
        if !bit {
            let remaining = self.bits[range.clone()]
                .iter()
                .enumerate()
                .filter(|(j, b)| **b && *j != s)
                .count();
            if remaining == 0 {
                return Err(StateError::EmptySuspectList {
                    observer: observer.to_string(),
                    victim: victim.to_string(),
                });
            }
        }
        self.bits[range.start + s] = bit;
        Ok(())
    }

    /// Suspects in canonical agent order.
    pub fn suspect_list(&self, observer: &str, victim: &str) -> Result<Vec<String>, StateError> {
        let (o, k) = (self.agent_idx(observer)?, self.victim_idx(victim)?);
        let range = self.row_range(o, k);
        Ok(self.bits[range]
            .iter()
            .zip(&self.agents)
            .filter(|(b, _)| **b)
            .map(|(_, a)| a.clone())
            .collect())
    }

    /// Rewrites a whole row so exactly `suspects` are marked.
    pub fn set_row(&mut self, observer: &str, victim: &str, suspects: &[String]) -> Result<(), StateError> {
        let (o, k) = (self.agent_idx(observer)?, self.victim_idx(victim)?);
        let mut row = vec![false; self.agents.len()];
        for s in suspects {
            let j = self.agent_idx(s)?;
            if j == o {
                return Err(StateError::SelfEntry(observer.to_string()));
            }
            row[j] = true;
        }
        if !row.iter().any(|b| *b) {
            return Err(StateError::EmptySuspectList {
                observer: observer.to_string(),
                victim: victim.to_string(),
            });
        }
        let range = self.row_range(o, k);
        self.bits[range].copy_from_slice(&row);
        Ok(())
    }

    pub fn entropy(&self, observer: &str, victim: &str) -> Result<f64, StateError> {
        entropy(self.suspect_list(observer, victim)?.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{CharacterScript, Victim};
    use proptest::prelude::*;

    fn scenario(names: &[&str], victims: &[&str]) -> Scenario {
        Scenario {
            id: "t".into(),
            title: "t".into(),
            language_tag: "en".into(),
            rules_text: String::new(),
            agents: names
                .iter()
                .enumerate()
                .map(|(i, n)| CharacterScript {
                    name: n.to_string(),
                    background: format!("bg {n}"),
                    objectives: vec![],
                    murderer_of: if i == 0 { victims.iter().map(|v| v.to_string()).collect() } else { vec![] },
                    no_objectives: true,
                })
                .collect(),
            victims: victims
                .iter()
                .map(|v| Victim { name: v.to_string(), murderers: vec![names[0].to_string()] })
                .collect(),
        }
    }

    #[test]
    fn entropy_values() {
        assert!((entropy(5).unwrap() - 1.609_437_912_434_100_3).abs() < 1e-15);
        assert_eq!(entropy(1).unwrap(), 0.0);
        assert!((entropy(3).unwrap() - 1.098_612_288_668_109_8).abs() < 1e-15);
        assert_eq!(entropy(0), Err(StateError::Domain(0)));
    }

    proptest! {
        #[test]
        fn entropy_is_additive(a in 1usize..5000, b in 1usize..5000) {
            let lhs = entropy(a * b).unwrap();
            let rhs = entropy(a).unwrap() + entropy(b).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn entropy_strictly_increasing(n in 1usize..100_000) {
            prop_assert!(entropy(n + 1).unwrap() > entropy(n).unwrap());
        }
    }

    #[test]
    fn init_six_by_four() {
        let s = scenario(&["A", "B", "C", "D", "E", "F"], &["V1", "V2", "V3", "V4"]);
        let m = SuspectMatrix::init(&s);
        for o in s.agent_names() {
            for v in &s.victims {
                let list = m.suspect_list(o, &v.name).unwrap();
                assert_eq!(list.len(), 5);
                assert!(!list.iter().any(|x| x == o));
                assert!((m.entropy(o, &v.name).unwrap() - 5f64.ln()).abs() < 1e-15);
            }
        }
        assert_eq!(initial_entropy(6).unwrap(), 5f64.ln());
    }

    #[test]
    fn two_agents_have_zero_initial_entropy() {
        let s = scenario(&["A", "B"], &["V"]);
        let m = SuspectMatrix::init(&s);
        assert_eq!(m.suspect_list("A", "V").unwrap(), vec!["B".to_string()]);
        assert_eq!(m.entropy("A", "V").unwrap(), 0.0);
    }

    #[test]
    fn suspect_list_follows_canonical_order() {
        let names = ["Observer", "Zhou Lianyi", "Xi Yan", "Yu Sunian", "Yannan", "Zhou Chitong"];
        let s = scenario(&names, &["V"]);
        let mut m = SuspectMatrix::init(&s);
        m.set_row("Observer", "V", &["Yannan".into(), "Zhou Lianyi".into()]).unwrap();
        assert_eq!(m.suspect_list("Observer", "V").unwrap(), vec!["Zhou Lianyi", "Yannan"]);
    }

    #[test]
    fn emptying_a_row_is_rejected() {
        let s = scenario(&["A", "B", "C", "D"], &["V"]);
        let mut m = SuspectMatrix::init(&s);
        m.set("A", "B", "V", false).unwrap();
        m.set("A", "C", "V", false).unwrap();
        assert!(matches!(m.set("A", "D", "V", false), Err(StateError::EmptySuspectList { .. })));
        assert!(matches!(m.set_row("A", "V", &[]), Err(StateError::EmptySuspectList { .. })));
        assert_eq!(m.suspect_list("A", "V").unwrap(), vec!["D"]);
    }

    #[test]
    fn diagonal_is_unreachable() {
        let s = scenario(&["A", "B"], &["V"]);
        let mut m = SuspectMatrix::init(&s);
        assert_eq!(m.get("A", "A", "V").unwrap(), None);
        assert!(matches!(m.set("A", "A", "V", true), Err(StateError::SelfEntry(_))));
        assert!(matches!(m.set_row("A", "V", &["A".into()]), Err(StateError::SelfEntry(_))));
    }

    #[test]
    fn default_sensor_set() {
        let set = SensorSet::default();
        assert_eq!(set.names(), vec![EMOTION, MOTIVATION, SUSPICION, INFORMATION_VALUE]);
        let search: Vec<_> = set.search().map(|s| s.name.as_str()).collect();
        assert_eq!(search, vec![EMOTION, MOTIVATION, SUSPICION]);
        let info = set.get(INFORMATION_VALUE).unwrap();
        assert!(!info.use_in_search && info.use_in_refinement);
        assert_eq!(set.get(EMOTION).unwrap().choices, vec!["Positive", "Natural", "Negative"]);
        assert_eq!(set.get(MOTIVATION).unwrap().choices, vec!["Yes", "No"]);
        assert_eq!(info.choices, vec!["High", "Medium", "Low"]);
    }

    #[test]
    fn initial_readings_are_neutral() {
        let set = SensorSet::default();
        let v = CharacterStateVector::new("A", "B", "V", &set);
        assert_eq!(v.latest(EMOTION).unwrap().value, "Natural");
        assert_eq!(v.latest(MOTIVATION).unwrap().value, "No");
        assert_eq!(v.latest(SUSPICION).unwrap().value, "No");
        assert_eq!(v.latest(INFORMATION_VALUE).unwrap().value, "Medium");
    }

    #[test]
    fn update_reading_appends() {
        let set = SensorSet::default();
        let mut v = CharacterStateVector::new("A", "B", "V", &set);
        v.update_reading(
            &set,
            SensorReading { sensor: EMOTION.into(), value: "Negative".into(), rationale: "lied".into(), round: 2 },
        )
        .unwrap();
        assert_eq!(v.latest(EMOTION).unwrap().value, "Negative");
        assert_eq!(v.history(EMOTION).len(), 2);

        let err = v
            .update_reading(
                &set,
                SensorReading { sensor: "alibi".into(), value: "Yes".into(), rationale: String::new(), round: 1 },
            )
            .unwrap_err();
        assert_eq!(err, StateError::UnknownSensor("alibi".into()));

        let err = v
            .update_reading(
                &set,
                SensorReading { sensor: MOTIVATION.into(), value: "Maybe".into(), rationale: String::new(), round: 1 },
            )
            .unwrap_err();
        assert!(matches!(err, StateError::IllegalChoice { .. }));
    }

    proptest! {
        #[test]
        fn audit_log_is_append_only(values in proptest::collection::vec(0usize..3, 0..20)) {
            let set = SensorSet::default();
            let mut v = CharacterStateVector::new("A", "B", "V", &set);
            let choices = set.get(EMOTION).unwrap().choices.clone();
            for (i, c) in values.iter().enumerate() {
                let before: Vec<_> = v.history(EMOTION).to_vec();
                v.update_reading(&set, SensorReading {
                    sensor: EMOTION.into(), value: choices[*c].clone(), rationale: String::new(), round: i as u32 + 1,
                }).unwrap();
                prop_assert_eq!(&v.history(EMOTION)[..before.len()], &before[..]);
            }
            prop_assert_eq!(v.history(EMOTION).len(), values.len() + 1);
        }
    }

    #[test]
    fn profile_revisions_grow() {
        let mut p = MurdererProfile::new("V");
        assert_eq!(p.describe(), "strong motive, negative emotion, sufficient opportunity");
        p.add_evidence(Trait::Opportunity, "was seen near the ward at midnight");
        p.add_evidence(Trait::Motive, "");
        assert_eq!(p.revision, 1);
        assert!(p.traits[&Trait::Opportunity].ends_with("midnight"));
    }

    #[test]
    fn catalog_has_five_ablation_sensors() {
        let catalog = sensor_catalog();
        for name in ABLATION_SENSORS {
            assert!(catalog.iter().any(|s| s.name == name));
        }
    }

    #[test]
    fn duplicate_sensors_rejected() {
        let s = sensor_catalog()[0].clone();
        assert!(matches!(SensorSet::new(vec![s.clone(), s]), Err(StateError::DuplicateSensor(_))));
    }
}
