//! `prosody-rl` command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 bad or unreadable data.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::gridworld::{generate_map, value_iteration, GridMap, MdpSolution, RewardSpec};
use crate::live::{AppState, LiveConfig};
use crate::prosody::{read_labels, read_wav, segment_utterances, FeatureConfig, VadConfig};
use crate::reward::{evaluate_reward, policy_from_reward, train, TrainConfig};
use crate::session::{parse_snippets, render_frame, replay, snippets_to_jsonl, Frame, SessionLog};
use crate::stats::analysis::{
    analyze_demo_dataset, analyze_intrl_session, event_rows_csv, link_events,
};
use crate::tamer::{evaluate_policy, train_offline, CreditAssigner, HModel, Variant};
use crate::teacher::{generate_demo_dataset, generate_intrl_session, TeacherProfile};

pub const LOG_ENV: &str = "PROSODY_RL_LOG_LEVEL";

const SOLVE_TOL: f64 = 1e-10;

#[derive(Debug, Parser)]
#[command(
    name = "prosody-rl",
    version,
    about = "Speech prosody as a teaching signal for learning agents"
)]
pub struct Cli {
    /// Seed for every random choice; falls back to the config file, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML file with `[teacher]`, `[trex]` and `[serve]` sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment a WAV recording at labelled words and write utterance JSONL.
    Extract(ExtractArgs),
    /// Solve a map and write state,action,Q,advantage CSV.
    Solve(SolveArgs),
    /// Generate a synthetic feedback session or demonstration dataset.
    Simulate(SimulateArgs),
    /// Replay a session log through TAMER; prints the optimal-action count.
    TrainTamer(TrainTamerArgs),
    /// Train a reward net on a snippet dataset; prints held-out Spearman.
    TrainTrex(TrainTrexArgs),
    /// Statistical report for a session log or a snippet dataset.
    Analyze(AnalyzeArgs),
    /// Step through a session log frame by frame.
    Replay(ReplayArgs),
    /// Run the live teaching service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub wav: PathBuf,
    /// JSONL rows `{"word": "yes", "t": 1.2}`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub fmin: Option<f64>,
    #[arg(long)]
    pub fmax: Option<f64>,
    /// Largest pause (s) between same-word utterances counted as a repetition.
    #[arg(long, default_value_t = 1.0)]
    pub repetition_gap: f64,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    /// Map JSON; a map is generated from the seed when absent.
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Interior rows of a generated map.
    #[arg(long, default_value_t = 8)]
    pub rows: usize,
    /// Interior columns of a generated map.
    #[arg(long, default_value_t = 8)]
    pub cols: usize,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub map: MapArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SimKind {
    Session,
    Dataset,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value_t = SimKind::Session)]
    pub kind: SimKind,
    #[command(flatten)]
    pub map: MapArgs,
    /// Ticks in a session.
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    /// Snippets in a dataset.
    #[arg(long, default_value_t = 500)]
    pub snippets: usize,
    #[arg(long)]
    pub expressiveness: Option<f64>,
    #[arg(long)]
    pub pos_bias: Option<f64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the map used.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainTamerArgs {
    #[arg(long)]
    pub session: PathBuf,
    /// Defaults to the variant recorded in the log.
    #[arg(long)]
    pub variant: Option<Variant>,
    /// RBF center spacing in cells.
    #[arg(long, default_value_t = 2)]
    pub stride: usize,
    /// Checkpoint path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainTrexArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    /// Held-out snippets; otherwise the last `--holdout` share of the dataset.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Score a greedy policy under the learned reward on this map.
    #[arg(long)]
    pub map: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Loss curve CSV.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub session: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
    /// Per-utterance rows for plotting (sessions only).
    #[arg(long)]
    pub events_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub log: PathBuf,
    /// Fill skipped ticks with linearly interpolated positions.
    #[arg(long)]
    pub interpolate: bool,
    /// Playback speed relative to the recorded tick; 0 prints at once.
    #[arg(long, default_value_t = 0.0)]
    pub speed: f64,
    /// One JSON frame per line instead of drawn grids.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub map: MapArgs,
    #[arg(long)]
    pub host: Option<String>,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long)]
    pub tick: Option<f64>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub log_dir: Option<PathBuf>,
    /// Directory served at `/` (the teaching console build).
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

/// Config file contents. Flags given on the command line take precedence.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub teacher: Option<TeacherProfile>,
    pub trex: Option<TrainConfig>,
    pub serve: ServeConfig,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeConfig {
    pub host: Option<String>,
    pub port: Option<u16>,
    pub tick: Option<f64>,
    pub epsilon: Option<f64>,
    pub idle_ticks: Option<u64>,
    pub practice_ticks: Option<u64>,
    pub max_game_ticks: Option<u64>,
    pub variant: Option<Variant>,
    pub log_dir: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(String),
}

type Result<T> = std::result::Result<T, CliError>;

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn emit(out: &mut dyn Write, path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_text(p, text),
        None => out.write_all(text.as_bytes()).map_err(data),
    }
}

/// Sets up logging from `PROSODY_RL_LOG_LEVEL` (default `warn`).
pub fn init_logging() {
    let _ =
        env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
}

/// Runs the CLI and returns the process exit code. Normal output goes to
/// `out`, diagnostics to stderr.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    0
                }
                _ => {
                    eprint!("{e}");
                    1
                }
            };
        }
    };
    match execute(cli, out) {
        Ok(()) => 0,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(CliError::Data(m)) => {
            eprintln!("error: {m}");
            2
        }
    }
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = match &cli.config {
        Some(p) => toml::from_str::<FileConfig>(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => FileConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(0);
    match cli.command {
        Command::Extract(a) => extract(a, out),
        Command::Solve(a) => {
            let map = load_map(&a.map, seed)?;
            let sol = value_iteration(&map, &RewardSpec::default(), SOLVE_TOL);
            emit(out, a.out.as_deref(), &sol.to_csv())
        }
        Command::Simulate(a) => simulate(a, &config, seed),
        Command::TrainTamer(a) => train_tamer(a, out),
        Command::TrainTrex(a) => train_trex(a, &config, seed, out),
        Command::Analyze(a) => analyze(a, out),
        Command::Replay(a) => replay_cmd(a, out),
        Command::Serve(a) => serve(a, &config, seed),
    }
}

fn load_map(args: &MapArgs, seed: u64) -> Result<GridMap> {
    match &args.map {
        Some(p) => GridMap::from_json(&read_text(p)?).map_err(data),
        None => generate_map(args.rows, args.cols, seed).map_err(data),
    }
}

fn solve(map: &GridMap) -> MdpSolution {
    value_iteration(map, &RewardSpec::default(), SOLVE_TOL)
}

fn extract(a: ExtractArgs, out: &mut dyn Write) -> Result<()> {
    let audio = read_wav(&a.wav).map_err(data)?;
    let file = fs::File::open(&a.labels)
        .map_err(|e| CliError::Data(format!("{}: {e}", a.labels.display())))?;
    let labels = read_labels(BufReader::new(file)).map_err(data)?;
    let mut features = FeatureConfig::default();
    if let Some(f) = a.fmin {
        features.yin.f_min = f;
    }
    if let Some(f) = a.fmax {
        features.yin.f_max = f;
    }
    let records = segment_utterances(
        &audio,
        &labels,
        &VadConfig::default(),
        &features,
        a.repetition_gap,
    )
    .map_err(data)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&r.to_jsonl_line());
        text.push('\n');
    }
    emit(out, a.out.as_deref(), &text)
}

fn simulate(a: SimulateArgs, config: &FileConfig, seed: u64) -> Result<()> {
    let map = load_map(&a.map, seed)?;
    let sol = solve(&map);
    let mut profile = config.teacher.unwrap_or_default();
    profile.seed = seed;
    if let Some(e) = a.expressiveness {
        profile.expressiveness = e;
    }
    if a.pos_bias.is_some() {
        profile.pos_bias = a.pos_bias;
    }
    let text = match a.kind {
        SimKind::Session => {
            let session = generate_intrl_session(&map, &sol, &profile, a.steps).map_err(data)?;
            let variant = a.variant.unwrap_or_default();
            let log = SessionLog::from_intrl(
                &map,
                RewardSpec::default(),
                profile.tick,
                "synthetic",
                variant,
                &session,
            );
            log.to_jsonl()
        }
        SimKind::Dataset => {
            let snippets = generate_demo_dataset(&map, &sol, &profile, a.snippets).map_err(data)?;
            snippets_to_jsonl(&snippets)
        }
    };
    write_text(&a.out, &text)?;
    if let Some(p) = &a.map_out {
        write_text(p, &map.to_json())?;
    }
    Ok(())
}

fn train_tamer(a: TrainTamerArgs, out: &mut dyn Write) -> Result<()> {
    let log = SessionLog::read(&a.session).map_err(data)?;
    let map = &log.header.map;
    let variant = a.variant.unwrap_or(log.header.variant);
    let base = HModel::for_map(map);
    let model = HModel::new(
        crate::tamer::RbfFeaturizer::new(
            map.rows,
            map.cols,
            a.stride,
            base.featurizer.sigmas.clone(),
        ),
        base.learning_rate,
    );
    let credit = CreditAssigner {
        tick: log.header.tick,
        ..CreditAssigner::default()
    };
    let model =
        train_offline(model, &log.steps(), &log.feedback(), variant, credit).map_err(data)?;
    let count = evaluate_policy(&model, &solve(map));
    if let Some(p) = &a.out {
        write_text(p, &model.to_checkpoint_json())?;
    }
    writeln!(out, "{count}").map_err(data)
}

fn train_trex(a: TrainTrexArgs, config: &FileConfig, seed: u64, out: &mut dyn Write) -> Result<()> {
    let mut snippets = parse_snippets(&read_text(&a.dataset)?).map_err(data)?;
    let heldout = match &a.heldout {
        Some(p) => parse_snippets(&read_text(p)?).map_err(data)?,
        None => {
            if !(0.0..1.0).contains(&a.holdout) {
                return Err(CliError::Usage("--holdout must be in [0, 1)".into()));
            }
            let n_held = (snippets.len() as f64 * a.holdout).round() as usize;
            snippets.split_off(snippets.len() - n_held)
        }
    };
    let mut cfg = config.trex.unwrap_or_default();
    cfg.seed = seed;
    if let Some(x) = a.alpha {
        cfg.alpha = x;
    }
    if let Some(x) = a.t0 {
        cfg.t0 = x;
    }
    if let Some(x) = a.epochs {
        cfg.epochs = x;
    }
    if let Some(x) = a.pairs {
        cfg.num_pairs = x;
    }
    let outcome = train(&snippets, &cfg).map_err(data)?;
    let eval_set = if heldout.is_empty() {
        &snippets
    } else {
        &heldout
    };
    let rho = evaluate_reward(&outcome.net, eval_set).map_err(data)?;
    writeln!(out, "spearman {rho:.6}").map_err(data)?;
    if let Some(p) = &a.map {
        let map = GridMap::from_json(&read_text(p)?).map_err(data)?;
        let net = &outcome.net;
        let score = policy_from_reward(|x| net.forward(x).unwrap_or(0.0), &map, 30, seed);
        writeln!(out, "policy_score {:.6}", score.mean_score).map_err(data)?;
    }
    if let Some(p) = &a.out {
        write_text(p, &serde_json::to_string(&outcome.net).map_err(data)?)?;
    }
    if let Some(p) = &a.curve {
        write_text(p, &outcome.curve_csv())?;
    }
    Ok(())
}

fn analyze(a: AnalyzeArgs, out: &mut dyn Write) -> Result<()> {
    let text = if let Some(path) = &a.session {
        let log = SessionLog::read(path).map_err(data)?;
        let map = &log.header.map;
        let sol = solve(map);
        let steps = log.steps();
        let utts = log.utterances();
        let report = analyze_intrl_session(&steps, &utts, map, &sol, log.header.baseline.as_ref())
            .map_err(data)?;
        if let Some(p) = &a.events_csv {
            let (rows, _) = link_events(&steps, &utts, &sol);
            write_text(p, &event_rows_csv(&rows))?;
        }
        if a.json {
            serde_json::to_string_pretty(&report).map_err(data)? + "\n"
        } else {
            report.to_text()
        }
    } else {
        let path = a.dataset.as_ref().expect("clap requires one input");
        let snippets = parse_snippets(&read_text(path)?).map_err(data)?;
        let report = analyze_demo_dataset(&snippets).map_err(data)?;
        if a.json {
            serde_json::to_string_pretty(&report).map_err(data)? + "\n"
        } else {
            report.to_text()
        }
    };
    out.write_all(text.as_bytes()).map_err(data)
}

fn replay_cmd(a: ReplayArgs, out: &mut dyn Write) -> Result<()> {
    if !(a.speed >= 0.0 && a.speed.is_finite()) {
        return Err(CliError::Usage(
            "--speed must be a non-negative number".into(),
        ));
    }
    let log = SessionLog::read(&a.log).map_err(data)?;
    let r = replay(&log, a.interpolate);
    for g in &r.gaps {
        eprintln!(
            "warning: {} tick(s) missing after tick {}",
            g.missing, g.after_tick
        );
    }
    let delay =
        (a.speed > 0.0).then(|| std::time::Duration::from_secs_f64(log.header.tick / a.speed));
    for (i, frame) in r.frames.iter().enumerate() {
        if let (Some(d), true, Frame::Step { .. }) = (delay, i > 1, frame) {
            std::thread::sleep(d);
        }
        let text = if a.json {
            serde_json::to_string(frame).map_err(data)? + "\n"
        } else {
            render_frame(&log.header.map, frame)
        };
        out.write_all(text.as_bytes()).map_err(data)?;
        out.flush().map_err(data)?;
    }
    Ok(())
}

fn serve(a: ServeArgs, config: &FileConfig, seed: u64) -> Result<()> {
    let sc = &config.serve;
    let map = load_map(&a.map, seed)?;
    let mut cfg = LiveConfig::new(map);
    cfg.seed = seed;
    if let Some(t) = a.tick.or(sc.tick) {
        if !(t > 0.0 && t.is_finite()) {
            return Err(CliError::Usage("--tick must be positive".into()));
        }
        cfg.tick = t;
    }
    if let Some(v) = a.variant.or(sc.variant) {
        cfg.variant = v;
    }
    if let Some(e) = sc.epsilon {
        cfg.epsilon = e;
    }
    if let Some(n) = sc.idle_ticks {
        // 0 turns the idle rule off
        cfg.idle_ticks = (n > 0).then_some(n);
    }
    if let Some(n) = sc.practice_ticks {
        cfg.practice_ticks = n;
    }
    if let Some(n) = sc.max_game_ticks {
        cfg.max_game_ticks = n;
    }
    let host = a
        .host
        .or_else(|| sc.host.clone())
        .unwrap_or_else(|| "127.0.0.1".into());
    let port = a.port.or(sc.port).unwrap_or(8080);
    let addr: std::net::SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| CliError::Usage(format!("bad address {host}:{port}: {e}")))?;
    let state = AppState::new(cfg, a.log_dir.or_else(|| sc.log_dir.clone()));
    let static_dir = a.static_dir.or_else(|| sc.static_dir.clone());
    let rt = tokio::runtime::Runtime::new().map_err(data)?;
    rt.block_on(crate::live::serve(addr, state, static_dir))
        .map_err(data)
}
