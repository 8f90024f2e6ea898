use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use mmg_core::engine::{run_game, GameConfig};
use mmg_core::eval::{
    answer_questions, expected_random_accuracy, repeat_eval, score_records, weighted_mean, weighted_std,
    EvalMemory, EvalMode, EvalSource, ScoreReport, ScriptScore,
};
use mmg_core::memory::RetrievalBudget;
use mmg_core::oracle::{
    Backend, ChatRequest, Completion, EmbedResponse, Gateway, OracleError, RawProbe, ScriptedBackend, ScriptedRules,
    Usage,
};
use mmg_core::scenario::{load_question_bank, load_scenario, Category, QuestionBank, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn planted() -> (Scenario, GameConfig, QuestionBank) {
    let scenario = load_scenario(fixture("planted_clue.scenario.json")).unwrap();
    let config = GameConfig::load(fixture("planted_clue.config.json")).unwrap();
    let bank = load_question_bank(fixture("planted_clue.bank.json"), &scenario).unwrap().bank;
    (scenario, config, bank)
}

/// Wraps a backend and keeps every prompt it sees.
struct Recording {
    inner: Arc<dyn Backend>,
    prompts: Mutex<Vec<String>>,
}

impl Backend for Recording {
    fn id(&self) -> &str {
        "recording"
    }
    fn complete(&self, req: &ChatRequest) -> Result<Completion, OracleError> {
        self.prompts.lock().unwrap().push(req.rendered_prompt.clone());
        self.inner.complete(req)
    }
    fn probe(&self, req: &ChatRequest) -> Result<RawProbe, OracleError> {
        self.inner.probe(req)
    }
    fn embed(&self, text: &str) -> Result<EmbedResponse, OracleError> {
        self.inner.embed(text)
    }
}

fn recording(config: &GameConfig) -> (Arc<Recording>, Gateway) {
    let rec = Arc::new(Recording {
        inner: config.backend.build(None).unwrap(),
        prompts: Mutex::new(Vec::new()),
    });
    (rec.clone(), Gateway::new(rec))
}

fn agents(s: &Scenario) -> Vec<String> {
    s.agents.iter().map(|a| a.name.clone()).collect()
}

fn eval_sampling(config: &GameConfig) -> mmg_core::oracle::Sampling {
    config.sampling.evaluation
}

#[test]
fn post_game_scores_match_the_hand_count() {
    let (scenario, config, bank) = planted();
    let run = run_game(&scenario, &config).unwrap();
    let gw = config.gateway(None).unwrap();
    let (report, runs) = repeat_eval(
        &gw,
        &scenario,
        &bank,
        EvalSource::Transcript(&run.transcript),
        &agents(&scenario),
        3,
        config.budgets.evaluation,
        eval_sampling(&config),
    )
    .unwrap();
    assert_eq!(runs.len(), 3);
    // The scripted answers miss only the two-label clue question (2 points).
    assert!((report.overall.mean - 32.0 / 34.0).abs() < 1e-12);
    assert!((report.overall_by_count.mean - 5.0 / 6.0).abs() < 1e-12);
    assert_eq!(report.overall.std, 0.0);
    assert_eq!(report.categories[&Category::Reasoning].mean, 0.5);
    assert_eq!(report.win_rate.as_ref().unwrap().mean, 1.0);
    assert_eq!(report.mode, EvalMode::PostGame);
}

#[test]
fn personal_mode_prompts_hold_only_the_agents_own_script() {
    let (scenario, config, bank) = planted();
    for agent in agents(&scenario) {
        let (rec, gw) = recording(&config);
        let memory = EvalMemory::from_scripts(&scenario, &gw, EvalMode::Personal).unwrap();
        let records =
            answer_questions(&gw, &memory, &scenario, &agent, &bank, RetrievalBudget::EVALUATION, eval_sampling(&config))
                .unwrap();
        assert_eq!(records.len(), bank.questions.len());
        let prompts = rec.prompts.lock().unwrap();
        assert_eq!(prompts.len(), bank.questions.len(), "one call per question");
        let own = &scenario.agent(&agent).unwrap().background;
        for p in prompts.iter() {
            assert!(p.contains(own.split('.').next().unwrap()));
            for other in scenario.agents.iter().filter(|a| a.name != agent) {
                for sentence in other.background.split('.').map(str::trim).filter(|s| s.len() > 8) {
                    assert!(!p.contains(sentence), "{agent} saw {}'s script", other.name);
                }
            }
            assert!(p.contains("dialog history relative to the question is none"));
        }
    }
}

#[test]
fn omniscient_mode_prompts_hold_several_scripts() {
    let (scenario, config, bank) = planted();
    let (rec, gw) = recording(&config);
    let memory = EvalMemory::from_scripts(&scenario, &gw, EvalMode::Omniscient).unwrap();
    answer_questions(&gw, &memory, &scenario, "Alice", &bank, RetrievalBudget::EVALUATION, eval_sampling(&config))
        .unwrap();
    for p in rec.prompts.lock().unwrap().iter() {
        let present = scenario
            .agents
            .iter()
            .filter(|a| p.contains(a.background.split('.').next().unwrap()))
            .count();
        assert!(present >= 2, "{p}");
    }
}

#[test]
fn unparseable_answers_are_marked_incorrect_with_raw_text() {
    let (scenario, _, bank) = planted();
    let rules: ScriptedRules = serde_json::from_str(
        r#"{"rules": [{"template": "evaluation_*", "response": "I refuse to pick."},
                       {"template": "*", "response": "still no json"}]}"#,
    )
    .unwrap();
    let gw = Gateway::new(Arc::new(ScriptedBackend::new(rules)));
    let memory = EvalMemory::from_scripts(&scenario, &gw, EvalMode::Personal).unwrap();
    let records = answer_questions(
        &gw,
        &memory,
        &scenario,
        "Bob",
        &bank,
        RetrievalBudget::EVALUATION,
        GameConfig::default().sampling.evaluation,
    )
    .unwrap();
    for r in &records {
        assert!(!r.correct);
        assert!(r.parse_failed);
        assert!(!r.raw.is_empty());
    }
}

#[test]
fn post_game_requires_a_transcript() {
    let (scenario, config, _) = planted();
    let gw = config.gateway(None).unwrap();
    assert!(EvalMemory::from_scripts(&scenario, &gw, EvalMode::PostGame).is_err());
}

fn synthetic(id: &str, acc: [(usize, usize); 3], points: (u32, u32)) -> ScriptScore {
    let mut categories = std::collections::BTreeMap::new();
    for (c, (correct, total)) in Category::ALL.iter().zip(acc) {
        categories.insert(
            *c,
            mmg_core::eval::CategoryScore {
                correct,
                total,
                accuracy: correct as f64 / total as f64,
            },
        );
    }
    let questions: usize = acc.iter().map(|a| a.1).sum();
    let correct: usize = acc.iter().map(|a| a.0).sum();
    ScriptScore {
        scenario_id: id.into(),
        run: 0,
        categories,
        questions,
        correct,
        points_earned: points.0,
        points_possible: points.1,
        overall: points.0 as f64 / points.1 as f64,
        overall_by_count: correct as f64 / questions as f64,
        win_rate: None,
        cases: 0,
    }
}

/// Three scripts pooled, checked against sums written out by hand.
#[test]
fn three_script_report_matches_hand_sums() {
    let a = synthetic("a", [(2, 3), (11, 20), (15, 21)], (160, 243));
    let b = synthetic("b", [(1, 2), (4, 8), (9, 10)], (70, 101));
    let c = synthetic("c", [(4, 4), (0, 5), (3, 12)], (40, 110));
    let report = ScoreReport::aggregate(EvalMode::Personal, "all", vec![a, b, c]);

    // Weighted by question counts, a category mean is pooled correct / pooled total.
    assert!((report.categories[&Category::Objective].mean - 7.0 / 9.0).abs() < 1e-9);
    assert!((report.categories[&Category::Reasoning].mean - 15.0 / 33.0).abs() < 1e-9);
    assert!((report.categories[&Category::Relations].mean - 27.0 / 43.0).abs() < 1e-9);
    assert!((report.overall.mean - 270.0 / 454.0).abs() < 1e-9);
    assert!((report.overall_by_count.mean - 49.0 / 85.0).abs() < 1e-9);

    let xs: [f64; 3] = [160.0 / 243.0, 70.0 / 101.0, 40.0 / 110.0];
    let ws = [243.0, 101.0, 110.0];
    let m: f64 = 270.0 / 454.0;
    let var = (ws[0] * (xs[0] - m) * (xs[0] - m) + ws[1] * (xs[1] - m) * (xs[1] - m) + ws[2] * (xs[2] - m) * (xs[2] - m))
        / 454.0;
    assert!((report.overall.std - var.sqrt()).abs() < 1e-9);

    let unweighted = (2.0 / 3.0 + 0.5 + 1.0) / 3.0;
    assert!((report.categories[&Category::Objective].unweighted_mean - unweighted).abs() < 1e-9);

    let combined = ScoreReport::combine(&[report.clone(), report.clone()]).unwrap();
    assert!((combined.overall.mean - report.overall.mean).abs() < 1e-12);
}

#[test]
fn repeated_runs_report_mean_and_population_std() {
    let (_, _, bank) = planted();
    let scores: Vec<ScriptScore> = [0.4, 0.5, 0.6]
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let mut s = score_records(&[], &bank, i, None, 0).unwrap();
            s.overall = *v;
            s.points_possible = 34;
            s
        })
        .collect();
    let report = ScoreReport::aggregate(EvalMode::Personal, "A", scores);
    assert!((report.overall.mean - 0.5).abs() < 1e-12);
    assert!((report.overall.std - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
    assert!((weighted_std(&[0.4, 0.5, 0.6], &[1.0; 3]) - report.overall.std).abs() < 1e-12);
    assert_eq!(weighted_mean(&[0.4, 0.5, 0.6], &[1.0; 3]), report.overall.unweighted_mean);
}

/// Answers every question with one uniformly random label from the prompt.
struct RandomAnswers {
    rng: Mutex<ChaCha8Rng>,
}

impl Backend for RandomAnswers {
    fn id(&self) -> &str {
        "random"
    }
    fn complete(&self, req: &ChatRequest) -> Result<Completion, OracleError> {
        let labels: Vec<&str> = req.vars["choices"].lines().filter_map(|l| l.split('.').next()).collect();
        let pick = labels[self.rng.lock().unwrap().gen_range(0..labels.len())];
        Ok(Completion {
            text: format!("{{\"answer\": \"{pick}\"}}"),
            usage: Usage::default(),
            wall_time: Default::default(),
        })
    }
    fn probe(&self, _: &ChatRequest) -> Result<RawProbe, OracleError> {
        Err(OracleError::Protocol("unused".into()))
    }
    fn embed(&self, text: &str) -> Result<EmbedResponse, OracleError> {
        ScriptedBackend::new(ScriptedRules::default()).embed(text)
    }
}

#[test]
fn random_answers_converge_to_chance() {
    let (scenario, _, bank) = planted();
    let gw = Gateway::new(Arc::new(RandomAnswers {
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(99)),
    }));
    let memory = EvalMemory::from_scripts(&scenario, &gw, EvalMode::Personal).unwrap();
    let trials = 1000;
    let mut total = 0.0;
    for _ in 0..trials {
        let records = answer_questions(
            &gw,
            &memory,
            &scenario,
            "Dave",
            &bank,
            RetrievalBudget::EVALUATION,
            GameConfig::default().sampling.evaluation,
        )
        .unwrap();
        total += records.iter().filter(|r| r.correct).count() as f64 / records.len() as f64;
    }
    let mean = total / trials as f64;
    let expected = expected_random_accuracy(&bank);
    let n = bank.questions.len() as f64;
    let var: f64 = bank
        .questions
        .iter()
        .map(|q| {
            let p = if q.gold.len() == 1 { 1.0 / q.choices.len() as f64 } else { 0.0 };
            p * (1.0 - p)
        })
        .sum::<f64>()
        / (n * n);
    let sigma = (var / trials as f64).sqrt();
    assert!((mean - expected).abs() < 3.0 * sigma, "mean {mean} expected {expected} sigma {sigma}");
}

#[test]
fn forty_four_question_bank_loads() {
    let scenario = load_scenario(fixture("grey_gull.scenario.json")).unwrap();
    let bank = load_question_bank(fixture("grey_gull.bank.json"), &scenario).unwrap().bank;
    let c = bank.counts();
    assert_eq!((c.objective, c.reasoning, c.relations), (3, 20, 21));
    assert_eq!(c.total(), 44);
}
