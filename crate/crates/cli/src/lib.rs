//! Command implementations behind the `mmg` binary.

pub mod ablate;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mmg_core::engine::{run_game, EngineError, GameConfig, GameRun, Transcript};
use mmg_core::eval::{repeat_eval, EvalError, EvalMode, EvalSource};
use mmg_core::scenario::{load_question_bank, load_scenario, QuestionBank, Scenario};
use serde_json::json;
use thiserror::Error;

pub use ablate::{expand, run_cells, sensor_subsets, Cell, CellResult, Grid};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("backend failure: {0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<EngineError> for CliError {
    fn from(e: EngineError) -> Self {
        if e.is_backend_failure() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        if e.is_backend_failure() {
            CliError::Backend(e.to_string())
        } else {
            CliError::Validation(e.to_string())
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "mmg",
    version,
    about = "Run murder-mystery games, evaluations and ablations",
    after_help = "Remote backends read their API key from MMG_API_KEY."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Play one game and write its transcript and vote tallies.
    Play(PlayArgs),
    /// Answer a question bank and write a score report.
    Eval(EvalArgs),
    /// Run one game per grid cell and write a CSV and JSON summary.
    Ablate(AblateArgs),
    /// Serve human-play sessions over HTTP and a push socket.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GameArgs {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Game config JSON file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Required backend id; must match the configured backend.
    #[arg(long)]
    pub backend: Option<String>,
}

#[derive(Debug, Args)]
pub struct PlayArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Play a fresh game, then evaluate its transcript.
    Play,
    /// Each agent sees only its own script.
    Pp,
    /// Each agent sees every script.
    Op,
    /// Evaluate an existing transcript.
    Post,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Question bank JSON file.
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long, value_enum, default_value = "pp")]
    pub mode: ModeArg,
    /// Transcript to evaluate in `post` mode.
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    /// Independent evaluation runs.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub game: GameArgs,
    /// Optional bank; cells are then scored by post-game accuracy.
    #[arg(long)]
    pub bank: Option<PathBuf>,
    /// Grid JSON file with `rounds`, `questions_per_round` and `sensor_k` lists.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Rounds axis, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    pub rounds: Option<Vec<u32>>,
    /// Questions-per-round axis, comma separated.
    #[arg(long = "questions", value_delimiter = ',', num_args = 0..)]
    pub questions_per_round: Option<Vec<u32>>,
    /// Sensor subset sizes drawn from the five ablation sensors.
    #[arg(long = "sensor-k", value_delimiter = ',', num_args = 0..)]
    pub sensor_k: Option<Vec<usize>>,
    /// Cells run concurrently.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Hosted scenario; repeat for several.
    #[arg(long, required = true)]
    pub scenario: Vec<PathBuf>,
    /// Config per scenario, or one config shared by all.
    #[arg(long)]
    pub config: Vec<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Directory for finished session transcripts.
    #[arg(long)]
    pub transcripts: Option<PathBuf>,
}

pub fn run(cli: Cli) -> ExitCode {
    let result = match cli.command {
        Command::Play(a) => cmd_play(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Ablate(a) => cmd_ablate(&a),
        Command::Serve(a) => cmd_serve(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// Loads and checks the scenario and config named by `args`.
pub fn load_game(args: &GameArgs) -> Result<(Scenario, GameConfig), CliError> {
    let scenario = load_scenario(&args.scenario).map_err(|e| CliError::Validation(e.to_string()))?;
    let mut config = match &args.config {
        Some(p) => GameConfig::load(p)?,
        None => GameConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(id) = &args.backend {
        if id != config.backend.id() {
            return Err(CliError::Validation(format!(
                "backend {id:?} is not configured; the config uses {:?}",
                config.backend.id()
            )));
        }
    }
    config.validate()?;
    Ok((scenario, config))
}

pub fn load_bank(path: &Path, scenario: &Scenario) -> Result<QuestionBank, CliError> {
    let loaded = load_question_bank(path, scenario).map_err(|e| CliError::Validation(e.to_string()))?;
    for w in &loaded.warnings {
        eprintln!("warning: {w}");
    }
    Ok(loaded.bank)
}

pub fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create output directory {}: {e}", dir.display())))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

fn tallies_json(run: &GameRun, config: &GameConfig) -> String {
    let v = json!({
        "scenario_id": run.transcript.header.scenario_id,
        "seed": config.seed,
        "win_rate": run.win_rate,
        "tallies": run.tallies,
        "final_suspects": run.final_suspects,
        "costs": run.ledger.totals(),
    });
    serde_json::to_string_pretty(&v).expect("tallies serialize") + "\n"
}

/// Plays a game; a partial transcript is still written when it aborts.
pub fn play_to(scenario: &Scenario, config: &GameConfig, out: &Path) -> Result<GameRun, CliError> {
    prepare_out(out)?;
    match run_game(scenario, config) {
        Ok(run) => {
            write(&out.join("transcript.jsonl"), run.transcript.to_jsonl())?;
            write(&out.join("tallies.json"), tallies_json(&run, config))?;
            Ok(run)
        }
        Err(EngineError::Aborted { transcript, source }) => {
            write(&out.join("transcript.jsonl"), transcript.to_jsonl())?;
            Err((*source).into())
        }
        Err(e) => Err(e.into()),
    }
}

pub fn cmd_play(args: &PlayArgs) -> Result<(), CliError> {
    let (scenario, config) = load_game(&args.game)?;
    let run = play_to(&scenario, &config, &args.out)?;
    let won = run.tallies.iter().filter(|t| t.case_won).count();
    println!(
        "{}: win rate {:.3} ({won}/{} cases), {} events, transcript in {}",
        scenario.id,
        run.win_rate,
        run.tallies.len(),
        run.transcript.events.len(),
        args.out.join("transcript.jsonl").display()
    );
    Ok(())
}

fn mode_title(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::PostGame => "post-game (scripts plus game dialogue)",
        EvalMode::Personal => "personal perspective (own script only)",
        EvalMode::Omniscient => "omniscient perspective (every script)",
    }
}

pub fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    if args.repeat == 0 {
        return Err(CliError::Validation("--repeat must be at least 1".into()));
    }
    let (scenario, config) = load_game(&args.game)?;
    let bank = load_bank(&args.bank, &scenario)?;
    prepare_out(&args.out)?;
    let transcript: Option<Transcript> = match (args.mode, &args.transcript) {
        (ModeArg::Post, Some(p)) => Some(Transcript::load(p)?),
        (ModeArg::Post, None) => return Err(CliError::Validation("--mode post needs --transcript".into())),
        (ModeArg::Play, _) => Some(play_to(&scenario, &config, &args.out)?.transcript),
        _ => None,
    };
    if let Some(t) = &transcript {
        if t.header.scenario_id != scenario.id {
            return Err(CliError::Validation(format!(
                "transcript is for scenario {:?}, not {:?}",
                t.header.scenario_id, scenario.id
            )));
        }
    }
    let source = match (args.mode, &transcript) {
        (ModeArg::Pp, _) => EvalSource::Scripts(EvalMode::Personal),
        (ModeArg::Op, _) => EvalSource::Scripts(EvalMode::Omniscient),
        (_, Some(t)) => EvalSource::Transcript(t),
        (_, None) => unreachable!("post and play modes always carry a transcript"),
    };
    let gateway = config.gateway(None)?;
    let agents: Vec<String> = scenario.agent_names().map(str::to_string).collect();
    let (report, runs) = repeat_eval(
        &gateway,
        &scenario,
        &bank,
        source,
        &agents,
        args.repeat,
        config.budgets.evaluation,
        config.sampling.evaluation,
    )?;
    write(&args.out.join("report.json"), report.to_json() + "\n")?;
    let table = format!(
        "scenario: {}\nmode: {} {}\nbackend: {}\nruns: {}\n\n{}",
        scenario.id,
        report.mode.as_str(),
        mode_title(report.mode),
        gateway.backend_id(),
        args.repeat,
        report.to_table()
    );
    write(&args.out.join("report.txt"), &table)?;
    let mut answers = String::new();
    for (run, records) in runs.iter().enumerate() {
        for r in records {
            let mut v = serde_json::to_value(r).expect("records serialize");
            v["run"] = json!(run);
            answers += &v.to_string();
            answers.push('\n');
        }
    }
    write(&args.out.join("answers.jsonl"), answers)?;
    print!("{table}");
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<(), CliError> {
    if args.jobs == 0 {
        return Err(CliError::Validation("--jobs must be at least 1".into()));
    }
    let (scenario, config) = load_game(&args.game)?;
    let mut grid = match &args.grid {
        Some(p) => Grid::load(p)?,
        None => Grid::default(),
    };
    if args.rounds.is_some() {
        grid.rounds = args.rounds.clone();
    }
    if args.questions_per_round.is_some() {
        grid.questions_per_round = args.questions_per_round.clone();
    }
    if args.sensor_k.is_some() {
        grid.sensor_k = args.sensor_k.clone();
    }
    let cells = expand(&grid, &config)?;
    let bank = args.bank.as_deref().map(|p| load_bank(p, &scenario)).transpose()?;
    prepare_out(&args.out)?;
    let results = run_cells(&scenario, &config, &cells, bank.as_ref(), args.jobs, Some(&args.out.join("cells")))?;
    ablate::write_outputs(&args.out, &grid, &results)?;
    for r in &results {
        match &r.error {
            None => println!("{}: score {:.3}, ${:.4}, {:.2}s", r.cell.id, r.score, r.cost_usd, r.wall_time_s),
            Some(e) => println!("{}: failed: {e}", r.cell.id),
        }
    }
    match results.iter().find(|r| r.error.is_some()) {
        Some(r) if r.backend_failure => Err(CliError::Backend(format!("cell {} failed", r.cell.id))),
        Some(r) => Err(CliError::Validation(format!("cell {} failed", r.cell.id))),
        None => Ok(()),
    }
}

pub fn service_config(args: &ServeArgs) -> Result<mmg_session::ServiceConfig, CliError> {
    if !args.config.is_empty() && args.config.len() != 1 && args.config.len() != args.scenario.len() {
        return Err(CliError::Validation(
            "give one --config, or one per --scenario".into(),
        ));
    }
    let mut scenarios = std::collections::BTreeMap::new();
    for (i, path) in args.scenario.iter().enumerate() {
        let game = GameArgs {
            scenario: path.clone(),
            config: args.config.get(i).or(args.config.first()).cloned(),
            seed: None,
            backend: None,
        };
        let (scenario, config) = load_game(&game)?;
        if scenarios.contains_key(&scenario.id) {
            return Err(CliError::Validation(format!("scenario {:?} given twice", scenario.id)));
        }
        scenarios.insert(scenario.id.clone(), mmg_session::HostedScenario { scenario, config });
    }
    if let Some(dir) = &args.transcripts {
        prepare_out(dir)?;
    }
    Ok(mmg_session::ServiceConfig {
        scenarios,
        transcripts_dir: args.transcripts.clone(),
        ..Default::default()
    })
}

pub fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    let service = mmg_session::SessionService::new(service_config(args)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Validation(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&args.addr)
            .await
            .map_err(|e| CliError::Validation(format!("cannot bind {}: {e}", args.addr)))?;
        let addr = listener.local_addr().map_err(|e| CliError::Validation(e.to_string()))?;
        println!("listening on http://{addr}");
        use std::io::Write;
        let _ = std::io::stdout().flush();
        mmg_session::serve(listener, Arc::clone(&service))
            .await
            .map_err(|e| CliError::Validation(e.to_string()))
    })
}
