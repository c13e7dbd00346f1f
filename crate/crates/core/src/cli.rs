//! The `ssg` command-line frontend.
//!
//! Every command writes its outputs and a `manifest.json` into `--out-dir`.
//! The manifest records the fully resolved arguments, so
//! `ssg replay --manifest DIR/manifest.json --out-dir OTHER` reproduces the
//! same bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export::{csv_table, fmt_f64};
use crate::fpe::{iterate_to_fixed_point, FixedPointReport, FpeConfig, FpeStatus, RegionTieRule, ValuePair};
use crate::game::{
    compare_unchecked, make_example_game, random_game, Dominance, Game, LeaderPolicy, RandomGameSpec,
    ValueFunction,
};
use crate::improve::Scalarization;
use crate::mdp::{follower_best_response_with, TieBreak};
use crate::oracle::{build_archive, check_singleton_pareto, OracleConfig, ParetoArchive, DEFAULT_ENUMERATION_CAP};
use crate::popi::{run_popi, PopiConfig, PopiMode, PopiTrace, RegionScan, SearchConfig};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "ssg", version, about = "Stochastic Stackelberg game solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write a game file.
    #[command(subcommand)]
    Gen(GenCommand),
    /// Follower best response to a leader policy.
    BestResponse(BestResponseArgs),
    /// Pareto-optimal policy iteration.
    Popi(PopiArgs),
    /// Fixed-point iteration of the one-step game operator.
    Fpe(FpeArgs),
    /// Exhaustive Pareto archive over a policy grid.
    ParetoOracle(OracleArgs),
    /// Oracle, both POPI variants and FPE on one game.
    Compare(CompareArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Subcommand)]
pub enum GenCommand {
    /// The two-state game without a stationary strong Stackelberg equilibrium.
    Example(GenExampleArgs),
    /// A seeded random game.
    Random(GenRandomArgs),
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OutDir {
    /// Directory receiving the outputs and manifest.json.
    #[arg(long, default_value = "out")]
    #[serde(skip)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenExampleArgs {
    #[arg(long, allow_negative_numbers = true)]
    pub x: f64,
    #[arg(long, allow_negative_numbers = true)]
    pub y: f64,
    #[arg(long)]
    pub gamma_a: f64,
    #[arg(long)]
    pub gamma_b: f64,
    /// Initial distribution as a comma list (default 0.5,0.5).
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenRandomArgs {
    #[arg(long)]
    pub states: usize,
    #[arg(long)]
    pub leader_actions: usize,
    #[arg(long)]
    pub follower_actions: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = -1.0, allow_negative_numbers = true)]
    pub reward_min: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub reward_max: f64,
    #[arg(long, default_value_t = 0.5)]
    pub gamma_a: f64,
    #[arg(long, default_value_t = 0.9)]
    pub gamma_b: f64,
    /// Transition probabilities are multiples of 1/lattice.
    #[arg(long, default_value_t = 10)]
    pub lattice: usize,
    /// Copy the leader's rewards and discount to the follower.
    #[arg(long)]
    pub cooperative: bool,
    #[arg(long)]
    pub integer_rewards: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GameArgs {
    /// Game JSON file.
    #[arg(long)]
    pub game: PathBuf,
    /// Override the leader's discount factor.
    #[arg(long)]
    pub gamma_a: Option<f64>,
    /// Override the follower's discount factor.
    #[arg(long)]
    pub gamma_b: Option<f64>,
    /// Rescale probability rows that are off by at most 1e-6.
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct BestResponseArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub game: GameArgs,
    /// Leader policy JSON: `{"probs": [[...], ...]}` or a bare matrix.
    #[arg(long)]
    pub policy: PathBuf,
    #[arg(long, default_value_t = TieBreak::default())]
    pub tie_break: TieBreak,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PopiArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub game: GameArgs,
    #[arg(long, default_value = "practical-split")]
    pub mode: PopiMode,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 21)]
    pub resolution: usize,
    /// `rho` (initial distribution), `uniform`, or a comma list of
    /// non-negative weights.
    #[arg(long, default_value = "rho")]
    pub weights: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-10)]
    pub improvement_tol: f64,
    #[arg(long, default_value_t = TieBreak::default())]
    pub tie_break: TieBreak,
    #[arg(long, default_value = "all-regions")]
    pub scan: RegionScan,
    #[arg(long, default_value_t = 20_000)]
    pub max_probes: usize,
    /// Starting leader policy (default uniform).
    #[arg(long)]
    pub start: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FpeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub game: GameArgs,
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 64)]
    pub cycle_window: usize,
    #[arg(long, default_value_t = TieBreak::default())]
    pub tie_break: TieBreak,
    #[arg(long, default_value = "optimistic")]
    pub region_tie: RegionTieRule,
    #[arg(long, default_value_t = 200_000)]
    pub vertex_cap: u64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct OracleArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub game: GameArgs,
    #[arg(long, default_value_t = 21)]
    pub resolution: usize,
    /// Refuse grids with more policies than this.
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP as u64)]
    pub cap: u64,
    #[arg(long, default_value_t = TieBreak::default())]
    pub tie_break: TieBreak,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct CompareArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub game: GameArgs,
    /// Oracle grid resolution.
    #[arg(long, default_value_t = 21)]
    pub resolution: usize,
    #[arg(long, default_value_t = DEFAULT_ENUMERATION_CAP as u64)]
    pub cap: u64,
    /// POPI probe grid resolution.
    #[arg(long, default_value_t = 21)]
    pub popi_resolution: usize,
    #[arg(long, default_value = "rho")]
    pub weights: String,
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub max_iters: usize,
    #[arg(long, default_value_t = TieBreak::default())]
    pub tie_break: TieBreak,
    #[arg(long, default_value_t = 1e-8)]
    pub fpe_tol: f64,
    #[arg(long, default_value_t = 10_000)]
    pub fpe_max_iters: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutDir,
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    /// Subcommand path, e.g. `gen random` or `popi`.
    pub command: String,
    /// Arguments with every default filled in (paths canonical).
    pub args: serde_json::Value,
    /// The library configuration the arguments resolve to.
    pub resolved_config: serde_json::Value,
    pub game_source: Option<String>,
    pub seed: Option<u64>,
    /// Output files, relative to the manifest's directory.
    pub outputs: Vec<String>,
}

/// Parses `std::env::args`, runs, and maps errors to exit codes: 2 for bad
/// input, 3 for an internal invariant breach.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_input_error() {
        2
    } else {
        3
    }
}

/// Runs one command and returns a one-line summary for stdout.
pub fn run(command: Command) -> Result<String> {
    match command {
        Command::Gen(GenCommand::Example(a)) => gen_example(a),
        Command::Gen(GenCommand::Random(a)) => gen_random(a),
        Command::BestResponse(a) => best_response(a),
        Command::Popi(a) => popi(a),
        Command::Fpe(a) => fpe(a),
        Command::ParetoOracle(a) => pareto_oracle(a),
        Command::Compare(a) => compare(a),
        Command::Replay(a) => replay(a),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn io_context(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_context(path, e))
}

fn canonical(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).map_err(|e| io_context(path, e))
}

/// Collects output files and writes them with the manifest.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Outputs {
    fn new(dir: &Path) -> Outputs {
        Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        }
    }

    fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    fn finish<A: Serialize, C: Serialize>(
        self,
        command: &str,
        args: &A,
        config: &C,
        game_source: Option<&Path>,
        seed: Option<u64>,
    ) -> Result<()> {
        fs::create_dir_all(&self.dir).map_err(|e| io_context(&self.dir, e))?;
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            args: serde_json::to_value(args)?,
            resolved_config: serde_json::to_value(config)?,
            game_source: game_source.map(|p| p.display().to_string()),
            seed,
            outputs: self.files.iter().map(|(n, _)| n.clone()).collect(),
        };
        for (name, contents) in &self.files {
            let path = self.dir.join(name);
            fs::write(&path, contents).map_err(|e| io_context(&path, e))?;
        }
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, json(&manifest)?).map_err(|e| io_context(&path, e))
    }
}

/// Loads the game, applies discount overrides, and canonicalizes the path.
fn load_game(args: &mut GameArgs) -> Result<Game> {
    args.game = canonical(&args.game)?;
    let mut game = Game::from_json_str(&read_text(&args.game)?, args.renormalize)?;
    if args.gamma_a.is_some() || args.gamma_b.is_some() {
        let ga = args.gamma_a.unwrap_or(game.gamma_leader);
        let gb = args.gamma_b.unwrap_or(game.gamma_follower);
        game = game.with_gammas(ga, gb)?;
    }
    Ok(game)
}

fn read_policy(path: &Path, game: &Game) -> Result<LeaderPolicy> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum PolicyFile {
        Wrapped(LeaderPolicy),
        Bare(Vec<Vec<f64>>),
    }
    let probs = match serde_json::from_str(&read_text(path)?)? {
        PolicyFile::Wrapped(p) => p.probs,
        PolicyFile::Bare(m) => m,
    };
    let policy = LeaderPolicy::new(probs)?;
    policy.check_for(game)?;
    Ok(policy)
}

/// `rho`, `uniform`, or a comma list of non-negative weights.
pub fn parse_weights(spec: &str, game: &Game) -> Result<Scalarization> {
    let l = match spec.trim() {
        "rho" => Scalarization::from_initial_distribution(game),
        "uniform" => Scalarization::uniform(game.num_states),
        list => {
            let w = list
                .split(',')
                .map(|t| t.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidParameter(format!("bad --weights `{list}`: {e}")))?;
            Scalarization::from_nonnegative(&w)?
        }
    };
    if l.len() != game.num_states {
        return Err(Error::InvalidParameter(format!(
            "--weights has {} entries, the game has {} states",
            l.len(),
            game.num_states
        )));
    }
    Ok(l)
}

fn gen_example(args: GenExampleArgs) -> Result<String> {
    let mut game = make_example_game(args.x, args.y, args.gamma_a, args.gamma_b)?;
    if let Some(rho) = &args.rho {
        game = game.with_initial_distribution(rho.clone())?;
    }
    let mut out = Outputs::new(&args.out.out_dir);
    out.add("game.json", json(&game)?);
    let summary = format!(
        "wrote {} (gamma_B * y = {}, x = {})",
        args.out.out_dir.join("game.json").display(),
        args.gamma_b * args.y,
        args.x
    );
    out.finish("gen example", &args, &serde_json::Value::Null, None, None)?;
    Ok(summary)
}

fn gen_random(args: GenRandomArgs) -> Result<String> {
    let mut spec = RandomGameSpec::new(args.states, args.leader_actions, args.follower_actions)
        .gammas(args.gamma_a, args.gamma_b)
        .rewards(args.reward_min, args.reward_max);
    spec.lattice = args.lattice;
    spec.cooperative = args.cooperative;
    spec.integer_rewards = args.integer_rewards;
    let game = random_game(&spec, args.seed)?;
    let mut out = Outputs::new(&args.out.out_dir);
    out.add("game.json", json(&game)?);
    let summary = format!("wrote {}", args.out.out_dir.join("game.json").display());
    out.finish("gen random", &args, &spec, None, Some(args.seed))?;
    Ok(summary)
}

fn best_response(mut args: BestResponseArgs) -> Result<String> {
    let game = load_game(&mut args.game)?;
    args.policy = canonical(&args.policy)?;
    let policy = read_policy(&args.policy, &game)?;
    let br = follower_best_response_with(&game, &policy, args.tie_break)?;
    let mut out = Outputs::new(&args.out.out_dir);
    out.add("best_response.json", json(&br)?);
    let summary = format!("follower best response {}", br.policy);
    out.finish("best-response", &args, &args.tie_break, Some(&args.game.game), None)?;
    Ok(summary)
}

fn popi_config(game: &Game, args: &PopiArgs) -> Result<PopiConfig> {
    Ok(PopiConfig {
        scalarization: parse_weights(&args.weights, game)?,
        epsilon: args.epsilon,
        max_iters: args.max_iters,
        improvement_tol: args.improvement_tol,
        search: SearchConfig {
            resolution: args.resolution,
            max_probes: args.max_probes,
            scan: args.scan,
            ..SearchConfig::default()
        },
        mode: args.mode,
        seed: args.seed,
        tie_break: args.tie_break,
    })
}

/// Runs POPI and fails with an invariant error if the trace is not monotone.
fn checked_popi(game: &Game, start: &LeaderPolicy, config: &PopiConfig) -> Result<PopiTrace> {
    let trace = run_popi(game, start, config)?;
    trace
        .verify(crate::game::ETA)
        .map_err(Error::InvariantBreach)?;
    Ok(trace)
}

fn popi(mut args: PopiArgs) -> Result<String> {
    let game = load_game(&mut args.game)?;
    let config = popi_config(&game, &args)?;
    let start = match &mut args.start {
        Some(path) => {
            *path = canonical(path)?;
            read_policy(path, &game)?
        }
        None => LeaderPolicy::uniform(game.num_states, game.num_leader_actions),
    };
    let trace = checked_popi(&game, &start, &config)?;
    let last = trace.final_iterate();
    let summary = format!(
        "{:?} after {} iterates: L = {}, values {:?}",
        trace.termination,
        trace.iterates.len(),
        last.scalarized,
        last.values.0
    );
    let mut out = Outputs::new(&args.out.out_dir);
    out.add("trace.json", json(&trace)?);
    out.add("trace.csv", trace.to_csv());
    out.finish("popi", &args, &config, Some(&args.game.game), Some(args.seed))?;
    Ok(summary)
}

fn fpe_deltas_csv(report: &FixedPointReport) -> String {
    let rows: Vec<Vec<String>> = report
        .deltas
        .iter()
        .enumerate()
        .map(|(i, d)| vec![(i + 1).to_string(), fmt_f64(*d)])
        .collect();
    csv_table(&["iteration".into(), "delta".into()], &rows)
}

fn fpe(mut args: FpeArgs) -> Result<String> {
    let game = load_game(&mut args.game)?;
    let config = FpeConfig {
        tol: args.tol,
        max_iters: args.max_iters,
        cycle_window: args.cycle_window,
        tie_break: args.tie_break,
        region_tie: args.region_tie,
        vertex_cap: u128::from(args.vertex_cap),
    };
    let report = iterate_to_fixed_point(&game, &ValuePair::zeros(game.num_states), &config)?;
    let summary = format!(
        "{:?} after {} iterations, V_A {:?}",
        report.status, report.iterations, report.values.v_a.0
    );
    let mut out = Outputs::new(&args.out.out_dir);
    out.add("fpe_report.json", json(&report)?);
    out.add("fpe_deltas.csv", fpe_deltas_csv(&report));
    out.finish("fpe", &args, &config, Some(&args.game.game), None)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub verdict: String,
    pub pareto_values: Vec<ValueFunction>,
    pub se_upper: ValueFunction,
    pub evaluated: u64,
}

fn oracle_summary(archive: &ParetoArchive) -> OracleSummary {
    OracleSummary {
        verdict: check_singleton_pareto(archive).to_string(),
        pareto_values: archive.entries.iter().map(|e| e.values.clone()).collect(),
        se_upper: archive.se_upper.clone(),
        evaluated: archive.evaluated,
    }
}

fn pareto_oracle(mut args: OracleArgs) -> Result<String> {
    let game = load_game(&mut args.game)?;
    let config = OracleConfig {
        resolution: args.resolution,
        cap: u128::from(args.cap),
        tie_break: args.tie_break,
    };
    let archive = build_archive(&game, &config)?;
    let summary = oracle_summary(&archive);
    let line = format!(
        "{} ({} Pareto values, se_upper {:?})",
        summary.verdict,
        archive.entries.len(),
        archive.se_upper.0
    );
    let mut out = Outputs::new(&args.out.out_dir);
    out.add("archive.csv", archive.to_csv());
    out.add("oracle.json", json(&summary)?);
    out.finish("pareto-oracle", &args, &config, Some(&args.game.game), None)?;
    Ok(line)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub status: String,
    pub values: ValueFunction,
    pub scalarized: f64,
    /// `se_upper − values` per state.
    pub se_gap: Vec<f64>,
    /// Archive entries strictly dominating `values` by more than 1e-6.
    pub dominated_by_archive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRelation {
    pub left: String,
    pub right: String,
    /// `compare(left, right, 1e-6)`
    pub relation: Dominance,
}

/// `max over archive v of min_s(v − v∞) − γ_A max_s(v − v∞)`; a
/// non-positive value (up to tolerance) passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeCheck {
    pub method: String,
    pub worst_excess: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub oracle: OracleSummary,
    pub fpe_status: FpeStatus,
    pub methods: Vec<MethodResult>,
    pub relations: Vec<PairRelation>,
    pub cone_checks: Vec<ConeCheck>,
}

/// Comparison tolerance for values produced by different methods.
pub const COMPARE_TOL: f64 = 1e-6;

/// Worst cone excess of archive values over `v_inf`.
pub fn cone_excess(archive: &ParetoArchive, v_inf: &[f64], gamma_leader: f64) -> f64 {
    archive
        .entries
        .iter()
        .map(|e| {
            let d: Vec<f64> = e.values.iter().zip(v_inf).map(|(a, b)| a - b).collect();
            let lo = d.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            lo - gamma_leader * hi
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Serialize)]
struct CompareConfig<'a> {
    oracle: &'a OracleConfig,
    popi: &'a PopiConfig,
    fpe: &'a FpeConfig,
}

fn compare(mut args: CompareArgs) -> Result<String> {
    let game = load_game(&mut args.game)?;
    let oracle_config = OracleConfig {
        resolution: args.resolution,
        cap: u128::from(args.cap),
        tie_break: args.tie_break,
    };
    let popi_config = PopiConfig {
        scalarization: parse_weights(&args.weights, &game)?,
        epsilon: args.epsilon,
        max_iters: args.max_iters,
        seed: args.seed,
        tie_break: args.tie_break,
        ..PopiConfig::for_game(&game).resolution(args.popi_resolution)
    };
    let fpe_config = FpeConfig {
        tol: args.fpe_tol,
        max_iters: args.fpe_max_iters,
        tie_break: args.tie_break,
        ..FpeConfig::default()
    };
    let l = &popi_config.scalarization;

    let archive = build_archive(&game, &oracle_config)?;
    let start = LeaderPolicy::uniform(game.num_states, game.num_leader_actions);
    let mut results: Vec<(String, String, ValueFunction)> = Vec::new();
    if let Some(best) = archive
        .entries
        .iter()
        .max_by(|a, b| l.apply(&a.values).total_cmp(&l.apply(&b.values)))
    {
        results.push(("oracle-best".into(), "grid".into(), best.values.clone()));
    }
    let mut popi_methods = Vec::new();
    for mode in [PopiMode::IdealGrid, PopiMode::PracticalSplit] {
        let trace = checked_popi(&game, &start, &popi_config.clone().mode(mode))?;
        let name = format!("popi-{}", serde_json::to_value(mode)?.as_str().unwrap_or("?"));
        popi_methods.push(name.clone());
        results.push((
            name,
            serde_json::to_value(trace.termination)?.as_str().unwrap_or("?").to_string(),
            trace.final_values().clone(),
        ));
    }
    let fpe_report = iterate_to_fixed_point(&game, &ValuePair::zeros(game.num_states), &fpe_config)?;
    results.push((
        "fpe".into(),
        serde_json::to_value(fpe_report.status)?.as_str().unwrap_or("?").to_string(),
        fpe_report.values.v_a.clone(),
    ));

    let methods: Vec<MethodResult> = results
        .iter()
        .map(|(method, status, values)| MethodResult {
            method: method.clone(),
            status: status.clone(),
            scalarized: l.apply(values),
            se_gap: archive.se_upper.iter().zip(values.iter()).map(|(u, v)| u - v).collect(),
            dominated_by_archive: archive.dominating(values, COMPARE_TOL).len(),
            values: values.clone(),
        })
        .collect();
    let mut relations = Vec::new();
    for (i, a) in methods.iter().enumerate() {
        for b in &methods[i + 1..] {
            relations.push(PairRelation {
                left: a.method.clone(),
                right: b.method.clone(),
                relation: compare_unchecked(&a.values, &b.values, COMPARE_TOL),
            });
        }
    }
    let cone_checks = methods
        .iter()
        .filter(|m| popi_methods.contains(&m.method))
        .map(|m| {
            let worst = cone_excess(&archive, &m.values, game.gamma_leader);
            ConeCheck {
                method: m.method.clone(),
                worst_excess: worst,
                holds: worst <= COMPARE_TOL,
            }
        })
        .collect();
    let report = CompareReport {
        oracle: oracle_summary(&archive),
        fpe_status: fpe_report.status,
        methods,
        relations,
        cone_checks,
    };

    let n = game.num_states;
    let mut header = vec!["method".to_string(), "status".to_string(), "scalarized".to_string()];
    header.extend((0..n).map(|s| format!("v_{s}")));
    header.extend((0..n).map(|s| format!("se_gap_{s}")));
    let rows: Vec<Vec<String>> = report
        .methods
        .iter()
        .map(|m| {
            let mut row = vec![m.method.clone(), m.status.clone(), fmt_f64(m.scalarized)];
            row.extend(m.values.iter().chain(&m.se_gap).map(|&x| fmt_f64(x)));
            row
        })
        .collect();
    let summary = report
        .methods
        .iter()
        .map(|m| format!("{} L={:.6}", m.method, m.scalarized))
        .collect::<Vec<_>>()
        .join("; ");

    let mut out = Outputs::new(&args.out.out_dir);
    out.add("compare.json", json(&report)?);
    out.add("compare.csv", csv_table(&header, &rows));
    let config = CompareConfig {
        oracle: &oracle_config,
        popi: &popi_config,
        fpe: &fpe_config,
    };
    out.finish("compare", &args, &config, Some(&args.game.game), Some(args.seed))?;
    Ok(summary)
}

fn replay(args: ReplayArgs) -> Result<String> {
    let manifest: RunManifest = serde_json::from_str(&read_text(&args.manifest)?)?;
    let out = OutDir {
        out_dir: args.out_dir,
    };
    fn parsed<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> Result<T> {
        Ok(serde_json::from_value(v)?)
    }
    let command = match manifest.command.as_str() {
        "gen example" => Command::Gen(GenCommand::Example(GenExampleArgs {
            out,
            ..parsed(manifest.args)?
        })),
        "gen random" => Command::Gen(GenCommand::Random(GenRandomArgs {
            out,
            ..parsed(manifest.args)?
        })),
        "best-response" => Command::BestResponse(BestResponseArgs {
            out,
            ..parsed(manifest.args)?
        }),
        "popi" => Command::Popi(PopiArgs {
            out,
            ..parsed(manifest.args)?
        }),
        "fpe" => Command::Fpe(FpeArgs {
            out,
            ..parsed(manifest.args)?
        }),
        "pareto-oracle" => Command::ParetoOracle(OracleArgs {
            out,
            ..parsed(manifest.args)?
        }),
        "compare" => Command::Compare(CompareArgs {
            out,
            ..parsed(manifest.args)?
        }),
        other => {
            return Err(Error::InvalidParameter(format!(
                "manifest names unknown command `{other}`"
            )))
        }
    };
    run(command)
}
