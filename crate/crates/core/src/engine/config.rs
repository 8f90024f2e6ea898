//! Game configuration and its defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::memory::RetrievalBudget;
use crate::oracle::{
    Backend, Gateway, RemoteBackend, RemoteConfig, Sampling, ScriptedBackend, ScriptedRules, TemplateRegistry,
    UnitPrices,
};
use crate::scheduler::SchedulerParams;
use crate::state::{SensorSet, SensorSpec, EMOTION, INFORMATION_VALUE, MOTIVATION, SUSPICION};

pub const PLAYER_STAR: &str = "player_star";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Scripted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rules_path: Option<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rules: Option<ScriptedRules>,
    },
    Remote(RemoteConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Scripted {
            rules_path: None,
            rules: None,
        }
    }
}

impl BackendConfig {
    /// Short id used by `--backend` and in reports.
    pub fn id(&self) -> &'static str {
        match self {
            BackendConfig::Scripted { .. } => "scripted",
            BackendConfig::Remote(_) => "remote",
        }
    }

    /// Relative rule paths resolve against `base`.
    pub fn build(&self, base: Option<&Path>) -> Result<Arc<dyn Backend>, EngineError> {
        match self {
            BackendConfig::Scripted { rules_path, rules } => {
                let mut table = rules.clone().unwrap_or_default();
                if let Some(p) = rules_path {
                    let p = match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p.clone(),
                    };
                    let loaded = ScriptedRules::load(&p).map_err(|e| EngineError::Config(e.to_string()))?;
                    table.rules.extend(loaded.rules);
                    table.embeddings.extend(loaded.embeddings);
                }
                Ok(Arc::new(ScriptedBackend::new(table)))
            }
            BackendConfig::Remote(rc) => Ok(Arc::new(RemoteBackend::new(rc.clone())?)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    #[serde(default = "Budgets::gameplay_default")]
    pub gameplay: RetrievalBudget,
    #[serde(default = "Budgets::evaluation_default")]
    pub evaluation: RetrievalBudget,
}

impl Budgets {
    fn gameplay_default() -> RetrievalBudget {
        RetrievalBudget::GAMEPLAY
    }

    fn evaluation_default() -> RetrievalBudget {
        RetrievalBudget::EVALUATION
    }
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            gameplay: RetrievalBudget::GAMEPLAY,
            evaluation: RetrievalBudget::EVALUATION,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    #[serde(default = "SamplingConfig::gameplay_default")]
    pub gameplay: Sampling,
    #[serde(default = "SamplingConfig::evaluation_default")]
    pub evaluation: Sampling,
}

impl SamplingConfig {
    fn gameplay_default() -> Sampling {
        Sampling {
            temperature: 0.7,
            max_tokens: 512,
        }
    }

    fn evaluation_default() -> Sampling {
        Sampling {
            temperature: 0.0,
            max_tokens: 512,
        }
    }
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            gameplay: Self::gameplay_default(),
            evaluation: Self::evaluation_default(),
        }
    }
}

fn default_rounds() -> u32 {
    3
}

fn default_questions() -> u32 {
    1
}

fn default_sensors() -> Vec<String> {
    [EMOTION, MOTIVATION, SUSPICION, INFORMATION_VALUE]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn default_strategy() -> String {
    PLAYER_STAR.into()
}

fn default_human_timeout() -> u64 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameConfig {
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_questions")]
    pub questions_per_round: u32,
    #[serde(default)]
    pub scheduler: SchedulerParams,
    /// Seeds the game RNG; copied into `scheduler.rng_seed`.
    #[serde(default)]
    pub seed: u64,
    /// Sensor names, resolved against the builtin catalog and `custom_sensors`.
    #[serde(default = "default_sensors")]
    pub sensors: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub custom_sensors: Vec<SensorSpec>,
    #[serde(default = "default_strategy")]
    pub default_strategy: String,
    /// Per-agent strategy overrides.
    #[serde(default)]
    pub strategies: BTreeMap<String, String>,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub pricing: UnitPrices,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default = "default_human_timeout")]
    pub human_timeout_secs: u64,
    /// Template overrides by id.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub templates: BTreeMap<String, String>,
}

impl Default for GameConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl GameConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| EngineError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: GameConfig = serde_json::from_str(&text)
            .map_err(|e| EngineError::Config(format!("malformed config {}: {e}", path.display())))?;
        if let (BackendConfig::Scripted { rules_path: Some(p), .. }, Some(dir)) = (&mut cfg.backend, path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.rounds < 1 {
            return Err(EngineError::Config("rounds must be at least 1".into()));
        }
        if self.questions_per_round < 1 {
            return Err(EngineError::Config("questions_per_round must be at least 1".into()));
        }
        self.scheduler.validate()?;
        for (name, b) in [("gameplay", self.budgets.gameplay), ("evaluation", self.budgets.evaluation)] {
            if b.max_tokens == 0 {
                return Err(EngineError::Config(format!("{name} budget must be positive")));
            }
        }
        for s in [self.sampling.gameplay, self.sampling.evaluation] {
            if s.temperature < 0.0 {
                return Err(EngineError::Config("temperature must be non-negative".into()));
            }
        }
        self.sensor_set()?;
        Ok(())
    }

    pub fn sensor_set(&self) -> Result<SensorSet, EngineError> {
        let names: Vec<&str> = self.sensors.iter().map(String::as_str).collect();
        let set = SensorSet::from_specs(&names, &self.custom_sensors)?;
        if set.search().next().is_none() {
            return Err(EngineError::Config("sensor set has no search-phase sensor".into()));
        }
        Ok(set)
    }

    pub fn strategy_for(&self, agent: &str) -> &str {
        self.strategies.get(agent).unwrap_or(&self.default_strategy)
    }

    pub fn templates(&self) -> TemplateRegistry {
        let mut reg = TemplateRegistry::default();
        for (id, text) in &self.templates {
            reg.set(id.clone(), text.clone());
        }
        reg
    }

    /// A gateway over the configured backend, prices and templates.
    pub fn gateway(&self, base: Option<&Path>) -> Result<Gateway, EngineError> {
        Ok(Gateway::new(self.backend.build(base)?)
            .with_prices(self.pricing)
            .with_templates(self.templates()))
    }
}
