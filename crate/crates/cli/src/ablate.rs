//! Ablation grids over rounds, questions per round and sensor subsets.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use itertools::Itertools;
use mmg_core::engine::{run_game, EngineError, GameConfig};
use mmg_core::eval::{repeat_eval, EvalSource};
use mmg_core::scenario::{QuestionBank, Scenario};
use mmg_core::state::{ABLATION_SENSORS, INFORMATION_VALUE};
use serde::{Deserialize, Serialize};

use crate::{prepare_out, write, CliError};

/// Axes of an ablation; an absent axis keeps the base config value.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounds: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub questions_per_round: Option<Vec<u32>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensor_k: Option<Vec<usize>>,
}

impl Grid {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read grid {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("malformed grid {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub id: String,
    pub rounds: u32,
    pub questions_per_round: u32,
    /// Search sensors; `None` keeps the base config's sensors.
    pub sensors: Option<Vec<String>>,
}

impl Cell {
    pub fn config(&self, base: &GameConfig) -> GameConfig {
        let mut c = base.clone();
        c.rounds = self.rounds;
        c.questions_per_round = self.questions_per_round;
        if let Some(s) = &self.sensors {
            c.sensors = s.iter().cloned().chain([INFORMATION_VALUE.to_string()]).collect();
        }
        c
    }
}

/// Every `k`-subset of the five ablation sensors, in catalog order.
pub fn sensor_subsets(k: usize) -> Vec<Vec<&'static str>> {
    ABLATION_SENSORS.iter().copied().combinations(k).collect()
}

fn axis<T: Copy>(name: &str, values: &Option<Vec<T>>, default: T) -> Result<Vec<T>, CliError> {
    match values {
        None => Ok(vec![default]),
        Some(v) if v.is_empty() => Err(CliError::Validation(format!("grid axis {name} is empty"))),
        Some(v) => Ok(v.clone()),
    }
}

/// Cells of the cartesian product of the grid axes.
pub fn expand(grid: &Grid, base: &GameConfig) -> Result<Vec<Cell>, CliError> {
    if grid.rounds.is_none() && grid.questions_per_round.is_none() && grid.sensor_k.is_none() {
        return Err(CliError::Validation("empty grid: give at least one axis".into()));
    }
    let rounds = axis("rounds", &grid.rounds, base.rounds)?;
    let questions = axis("questions_per_round", &grid.questions_per_round, base.questions_per_round)?;
    if let Some(bad) = rounds.iter().chain(&questions).find(|v| **v == 0) {
        return Err(CliError::Validation(format!("grid value {bad} must be at least 1")));
    }
    let subsets: Vec<Option<Vec<String>>> = match &grid.sensor_k {
        None => vec![None],
        Some(ks) if ks.is_empty() => return Err(CliError::Validation("grid axis sensor_k is empty".into())),
        Some(ks) => {
            let mut out = Vec::new();
            for &k in ks {
                if k == 0 || k > ABLATION_SENSORS.len() {
                    return Err(CliError::Validation(format!(
                        "sensor_k {k} outside 1..={}",
                        ABLATION_SENSORS.len()
                    )));
                }
                out.extend(sensor_subsets(k).into_iter().map(|s| Some(s.iter().map(|x| x.to_string()).collect())));
            }
            out
        }
    };
    let mut cells = Vec::new();
    for (&r, &m, s) in itertools::iproduct!(&rounds, &questions, &subsets) {
        let mut id = format!("r{r}-m{m}");
        if let Some(s) = s {
            id += &format!("-{}", s.join("+"));
        }
        cells.push(Cell {
            id,
            rounds: r,
            questions_per_round: m,
            sensors: s.clone(),
        });
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub cell: Cell,
    /// Post-game overall accuracy with a bank, else the win rate.
    pub score: f64,
    pub win_rate: f64,
    pub accuracy: Option<f64>,
    pub calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost_usd: f64,
    /// Measured on this machine; the only field that varies between runs.
    pub wall_time_s: f64,
    pub error: Option<String>,
    pub backend_failure: bool,
}

fn run_cell(
    scenario: &Scenario,
    base: &GameConfig,
    cell: &Cell,
    bank: Option<&QuestionBank>,
    transcripts: Option<&Path>,
) -> CellResult {
    let started = Instant::now();
    let mut result = CellResult {
        cell: cell.clone(),
        score: 0.0,
        win_rate: 0.0,
        accuracy: None,
        calls: 0,
        prompt_tokens: 0,
        completion_tokens: 0,
        cost_usd: 0.0,
        wall_time_s: 0.0,
        error: None,
        backend_failure: false,
    };
    let config = cell.config(base);
    let outcome = (|| -> Result<(), CliError> {
        let run = match run_game(scenario, &config) {
            Ok(run) => run,
            Err(EngineError::Aborted { transcript, source }) => {
                if let Some(dir) = transcripts {
                    write(&dir.join(format!("{}.jsonl", cell.id)), transcript.to_jsonl())?;
                }
                return Err((*source).into());
            }
            Err(e) => return Err(e.into()),
        };
        if let Some(dir) = transcripts {
            write(&dir.join(format!("{}.jsonl", cell.id)), run.transcript.to_jsonl())?;
        }
        let mut totals = run.ledger.totals();
        result.win_rate = run.win_rate;
        result.score = run.win_rate;
        if let Some(bank) = bank {
            let gateway = config.gateway(None)?;
            let agents: Vec<String> = scenario.agent_names().map(str::to_string).collect();
            let (report, _) = repeat_eval(
                &gateway,
                scenario,
                bank,
                EvalSource::Transcript(&run.transcript),
                &agents,
                1,
                config.budgets.evaluation,
                config.sampling.evaluation,
            )?;
            result.accuracy = Some(report.overall.mean);
            result.score = report.overall.mean;
            let e = gateway.ledger().totals();
            totals.calls += e.calls;
            totals.prompt_tokens += e.prompt_tokens;
            totals.completion_tokens += e.completion_tokens;
            totals.dollars += e.dollars;
        }
        result.calls = totals.calls;
        result.prompt_tokens = totals.prompt_tokens;
        result.completion_tokens = totals.completion_tokens;
        result.cost_usd = totals.dollars;
        Ok(())
    })();
    if let Err(e) = outcome {
        result.backend_failure = matches!(e, CliError::Backend(_));
        result.error = Some(e.to_string());
    }
    result.wall_time_s = started.elapsed().as_secs_f64();
    result
}

/// Runs every cell on a pool of `jobs` threads; results keep cell order.
pub fn run_cells(
    scenario: &Scenario,
    base: &GameConfig,
    cells: &[Cell],
    bank: Option<&QuestionBank>,
    jobs: usize,
    transcripts: Option<&Path>,
) -> Result<Vec<CellResult>, CliError> {
    if jobs == 0 {
        return Err(CliError::Validation("jobs must be at least 1".into()));
    }
    if let Some(dir) = transcripts {
        prepare_out(dir)?;
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<CellResult>>> = Mutex::new(vec![None; cells.len()]);
    std::thread::scope(|s| {
        for _ in 0..jobs.min(cells.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(i) else { break };
                let r = run_cell(scenario, base, cell, bank, transcripts);
                slots.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    Ok(slots
        .into_inner()
        .expect("workers finished")
        .into_iter()
        .map(|r| r.expect("every cell ran"))
        .collect())
}

#[derive(Serialize)]
struct CsvRow<'a> {
    cell: &'a str,
    rounds: u32,
    questions_per_round: u32,
    sensors: String,
    score: f64,
    win_rate: f64,
    accuracy: Option<f64>,
    calls: u64,
    prompt_tokens: u64,
    completion_tokens: u64,
    cost_usd: f64,
    wall_time_s: f64,
    error: Option<&'a str>,
}

pub fn to_csv(results: &[CellResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in results {
        w.serialize(CsvRow {
            cell: &r.cell.id,
            rounds: r.cell.rounds,
            questions_per_round: r.cell.questions_per_round,
            sensors: r.cell.sensors.as_ref().map(|s| s.join("+")).unwrap_or_default(),
            score: r.score,
            win_rate: r.win_rate,
            accuracy: r.accuracy,
            calls: r.calls,
            prompt_tokens: r.prompt_tokens,
            completion_tokens: r.completion_tokens,
            cost_usd: r.cost_usd,
            wall_time_s: r.wall_time_s,
            error: r.error.as_deref(),
        })
        .expect("rows serialize");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

pub fn write_outputs(out: &Path, grid: &Grid, results: &[CellResult]) -> Result<(), CliError> {
    write(&out.join("ablation.csv"), to_csv(results))?;
    let json = serde_json::json!({"grid": grid, "cells": results});
    write(&out.join("ablation.json"), serde_json::to_string_pretty(&json).expect("results serialize") + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(r: Option<Vec<u32>>, m: Option<Vec<u32>>, k: Option<Vec<usize>>) -> Grid {
        Grid {
            rounds: r,
            questions_per_round: m,
            sensor_k: k,
        }
    }

    #[test]
    fn rounds_by_questions_gives_six_cells() {
        let cells = expand(&grid(Some(vec![1, 2, 3]), Some(vec![1, 2]), None), &GameConfig::default()).unwrap();
        assert_eq!(cells.len(), 6);
        assert_eq!(cells[0].id, "r1-m1");
        assert_eq!(cells[5].id, "r3-m2");
    }

    #[test]
    fn sensor_pairs_give_ten_distinct_cells() {
        let cells = expand(&grid(None, None, Some(vec![2])), &GameConfig::default()).unwrap();
        assert_eq!(cells.len(), 10);
        let ids: std::collections::BTreeSet<_> = cells.iter().map(|c| c.id.clone()).collect();
        assert_eq!(ids.len(), 10);
        assert!(cells.iter().all(|c| c.rounds == 3 && c.questions_per_round == 1));
    }

    #[test]
    fn subset_counts_are_binomial() {
        let counts: Vec<usize> = (0..=5).map(|k| sensor_subsets(k).len()).collect();
        assert_eq!(counts, vec![1, 5, 10, 10, 5, 1]);
    }

    #[test]
    fn empty_grids_are_rejected() {
        let base = GameConfig::default();
        assert!(expand(&Grid::default(), &base).is_err());
        assert!(expand(&grid(Some(vec![]), None, None), &base).is_err());
        assert!(expand(&grid(None, None, Some(vec![6])), &base).is_err());
        assert!(expand(&grid(Some(vec![0]), None, None), &base).is_err());
    }

    #[test]
    fn cell_config_keeps_the_refinement_sensor() {
        let cell = &expand(&grid(None, None, Some(vec![1])), &GameConfig::default()).unwrap()[0];
        let c = cell.config(&GameConfig::default());
        assert_eq!(c.sensors, vec!["emotion".to_string(), INFORMATION_VALUE.to_string()]);
        c.validate().unwrap();
    }
}
