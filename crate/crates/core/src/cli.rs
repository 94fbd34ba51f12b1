//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 runtime
//! error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::bench::{self, BenchmarkSpec, EpisodeMode};
use crate::controllers::{
    load_weights, CenterlineFollower, NetworkWeights, NeuralPolicy, Policy, PolicyFactory, RandomPolicy,
};
use crate::error::{Error, Result};
use crate::eval::{self, EpisodeRecord, MetricsRow};
use crate::geom::mix_seed;
use crate::imaging::render_fluoro;
use crate::vessel::{generate_aortic_arch, ArchRanges};

/// Environment variable naming the default output directory.
pub const OUT_DIR_VAR: &str = "VESSELNAV_OUT";
const DEFAULT_OUT_DIR: &str = "vesselnav-out";
/// Noise level of rendered frames, gray levels.
const FRAME_NOISE: f64 = 10.0;

#[derive(Parser, Debug)]
#[command(name = "vesselnav", version, about = "Endovascular navigation benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List or run benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Procedural aortic arches.
    #[command(subcommand)]
    Arch(ArchCommand),
    /// Re-simulate a trajectory file and check it reproduces.
    Replay(ReplayArgs),
    /// Re-simulate a trajectory file and write fluoroscopy frames.
    Render(RenderArgs),
    /// Metrics of one or more trajectory files.
    Metrics(MetricsArgs),
}

#[derive(Subcommand, Debug)]
enum BenchCommand {
    /// Print the benchmark names and their card files.
    List,
    /// Roll out a policy on a benchmark.
    Run(RunArgs),
    /// Write the JSON and markdown cards of every benchmark.
    Cards {
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Subcommand, Debug)]
enum ArchCommand {
    /// Write a procedural arch as vessel tree JSON.
    Generate {
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Random,
    Follower,
    Neural,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeArg {
    Train,
    Eval,
}

impl From<ModeArg> for EpisodeMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Train => EpisodeMode::Train,
            ModeArg::Eval => EpisodeMode::Eval,
        }
    }
}

#[derive(Args, Debug, Default)]
struct RunArgs {
    /// JSON file with the same keys as the flags; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    benchmark: Option<String>,
    #[arg(long, value_enum)]
    policy: Option<PolicyKind>,
    /// Weight bundle for the neural policy.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// Sample actions from the neural policy instead of using its mean.
    #[arg(long)]
    stochastic: bool,
    /// Vessel tree JSON replacing the benchmark's vessel.
    #[arg(long)]
    vessel: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Also write the last frame of every episode as PNG.
    #[arg(long)]
    render: bool,
}

/// A fully resolved `bench run` configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub benchmark: String,
    pub policy: PolicyKind,
    #[serde(default)]
    pub weights: Option<PathBuf>,
    pub episodes: usize,
    pub seed: u64,
    pub parallelism: usize,
    pub mode: ModeArg,
    #[serde(default)]
    pub stochastic: bool,
    #[serde(default)]
    pub vessel: Option<PathBuf>,
    pub output: PathBuf,
    #[serde(default)]
    pub render: bool,
}

/// Partial form read from a config file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfigFile {
    benchmark: Option<String>,
    policy: Option<PolicyKind>,
    weights: Option<PathBuf>,
    episodes: Option<usize>,
    seed: Option<u64>,
    parallelism: Option<usize>,
    mode: Option<ModeArg>,
    stochastic: Option<bool>,
    vessel: Option<PathBuf>,
    output: Option<PathBuf>,
    render: Option<bool>,
}

impl RunConfig {
    fn resolve(args: RunArgs) -> std::result::Result<Self, String> {
        let file = match &args.config {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| format!("config {}: {e}", p.display()))?;
                serde_json::from_str::<RunConfigFile>(&text).map_err(|e| format!("config {}: {e}", p.display()))?
            }
            None => RunConfigFile::default(),
        };
        let benchmark = args
            .benchmark
            .or(file.benchmark)
            .ok_or("--benchmark is required")?;
        let config = RunConfig {
            benchmark,
            policy: args.policy.or(file.policy).unwrap_or(PolicyKind::Follower),
            weights: args.weights.or(file.weights),
            episodes: args.episodes.or(file.episodes).unwrap_or(100),
            seed: args.seed.or(file.seed).unwrap_or(0),
            parallelism: args
                .parallelism
                .or(file.parallelism)
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
            mode: args.mode.or(file.mode).unwrap_or(ModeArg::Eval),
            stochastic: args.stochastic || file.stochastic.unwrap_or(false),
            vessel: args.vessel.or(file.vessel),
            output: args.output.or(file.output).unwrap_or_else(default_out_dir),
            render: args.render || file.render.unwrap_or(false),
        };
        if config.episodes == 0 {
            return Err("--episodes must be positive".into());
        }
        if config.parallelism == 0 {
            return Err("--parallelism must be positive".into());
        }
        if config.policy == PolicyKind::Neural && config.weights.is_none() {
            return Err("the neural policy needs --weights".into());
        }
        Ok(config)
    }

    pub fn spec(&self) -> Result<BenchmarkSpec> {
        let spec = bench::by_name(&self.benchmark).map_err(|e| match e {
            Error::InvalidInput(m) => Error::Usage(m),
            other => other,
        })?;
        Ok(match &self.vessel {
            Some(p) => spec.with_vessel_file(p),
            None => spec,
        })
    }
}

fn default_out_dir() -> PathBuf {
    std::env::var_os(OUT_DIR_VAR).map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from)
}

/// Builds the per-worker policy constructor for a run.
pub fn policy_factory(config: &RunConfig, spec: &BenchmarkSpec) -> Result<PolicyFactory> {
    let n = spec.devices.len();
    let seed = config.seed;
    Ok(match config.policy {
        PolicyKind::Random => Arc::new(move || Ok(Box::new(RandomPolicy::new(n, seed)) as Box<dyn Policy>)),
        PolicyKind::Follower => Arc::new(|| Ok(Box::new(CenterlineFollower::default()) as Box<dyn Policy>)),
        PolicyKind::Neural => {
            let path = config
                .weights
                .as_ref()
                .ok_or_else(|| Error::Usage("the neural policy needs weights".into()))?;
            let weights = Arc::new(NetworkWeights::from_bundle(&spec.network, &load_weights(path)?)?);
            let deterministic = !config.stochastic;
            Arc::new(move || {
                Ok(Box::new(NeuralPolicy::new(weights.clone(), deterministic, seed)) as Box<dyn Policy>)
            })
        }
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    episode_seeds: Vec<u64>,
    warnings: Vec<String>,
    spec: &'a BenchmarkSpec,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    trajectory: PathBuf,
    /// Vessel tree JSON the run used, if any.
    #[arg(long)]
    vessel: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    trajectory: PathBuf,
    /// Directory for the frames; defaults to `frames` in the output directory.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Episode to render; all when omitted.
    #[arg(long)]
    episode: Option<usize>,
    /// Write every k-th step.
    #[arg(long, default_value_t = 1)]
    every: usize,
    /// PNG instead of PGM.
    #[arg(long)]
    png: bool,
    #[arg(long)]
    vessel: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    /// Trajectory files, one per run.
    #[arg(required = true)]
    records: Vec<PathBuf>,
    /// Add p-values of every run against the first.
    #[arg(long)]
    compare: bool,
    /// Also write the report as JSON here.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Usage(m) => Failure::Usage(m),
            other => Failure::Runtime(other),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn dispatch(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Bench(BenchCommand::List) => {
            let cards = cards_dir();
            for spec in bench::all() {
                println!(
                    "{}\t{}\t{}",
                    spec.name,
                    cards.join(format!("{}.json", spec.name)).display(),
                    cards.join(format!("{}.md", spec.name)).display()
                );
            }
            Ok(())
        }
        Command::Bench(BenchCommand::Cards { output }) => {
            let dir = output.unwrap_or_else(cards_dir);
            fs::create_dir_all(&dir)?;
            for spec in bench::all() {
                fs::write(dir.join(format!("{}.json", spec.name)), bench::card_json(&spec))?;
                fs::write(dir.join(format!("{}.md", spec.name)), bench::card_markdown(&spec))?;
            }
            println!("wrote cards to {}", dir.display());
            Ok(())
        }
        Command::Bench(BenchCommand::Run(args)) => {
            let config = RunConfig::resolve(args).map_err(Failure::Usage)?;
            bench_run(&config)?;
            Ok(())
        }
        Command::Arch(ArchCommand::Generate { seed, output }) => {
            let tree = generate_aortic_arch(seed, &ArchRanges::default())?;
            create_parent(&output)?;
            tree.save(&output)?;
            println!("wrote {}", output.display());
            Ok(())
        }
        Command::Replay(args) => replay(&args),
        Command::Render(args) => render(&args),
        Command::Metrics(args) => metrics(&args),
    }
}

/// Where the benchmark cards live in the source tree.
pub fn cards_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../cards")
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(())
}

/// Executes a run and writes trajectories, metrics and the manifest into
/// the output directory.
pub fn bench_run(config: &RunConfig) -> Result<Vec<EpisodeRecord>> {
    let spec = config.spec()?;
    spec.validate()?;
    let factory = policy_factory(config, &spec)?;
    let mode = EpisodeMode::from(config.mode);
    let records = eval::run_episodes(&spec, mode, &factory, config.episodes, config.seed, config.parallelism)?;
    let out = &config.output;
    fs::create_dir_all(out)?;

    let mut traj = BufWriter::new(fs::File::create(out.join("trajectory.jsonl"))?);
    eval::write_trajectories(&records, &mut traj)?;
    traj.flush()?;

    let rows = [MetricsRow::new(&spec.name, &records)?];
    fs::write(out.join("metrics.json"), eval::metrics_json(&rows))?;
    let table = eval::metrics_table(&rows);
    fs::write(out.join("metrics.txt"), &table)?;

    let (_, warnings) = spec.vessel_source(mode).build(0).map(|(_, w)| ((), w))?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config,
        episode_seeds: records.iter().map(|r| r.seed).collect(),
        warnings: warnings.into_iter().collect(),
        spec: &spec,
    };
    let mut m = serde_json::to_string_pretty(&manifest)?;
    m.push('\n');
    fs::write(out.join("manifest.json"), m)?;

    if config.render {
        let dir = out.join("frames");
        fs::create_dir_all(&dir)?;
        for r in &records {
            let last = r.steps.len();
            eval::replay_with(&spec, r, |env, step| {
                if step == last {
                    let frame = frame_of(env, r.seed, step)?;
                    frame.save_png(&dir.join(format!("episode_{:04}.png", r.episode)))?;
                }
                Ok(())
            })?;
        }
    }
    print!("{table}");
    println!("wrote {}", out.display());
    Ok(records)
}

fn frame_of(env: &crate::env::NavEnv, seed: u64, step: usize) -> Result<crate::imaging::GrayFrame> {
    render_fluoro(
        env.rod_states()?,
        env.tree()?,
        &env.spec().imaging,
        FRAME_NOISE,
        mix_seed(mix_seed(seed, 3), step as u64),
    )
}

fn read_records(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))?;
    eval::read_trajectories(BufReader::new(f))
}

fn spec_for(record: &EpisodeRecord, vessel: &Option<PathBuf>) -> Result<BenchmarkSpec> {
    let spec = bench::by_name(&record.benchmark)?;
    Ok(match vessel {
        Some(p) => spec.with_vessel_file(p),
        None => spec,
    })
}

fn replay(args: &ReplayArgs) -> std::result::Result<(), Failure> {
    let records = read_records(&args.trajectory)?;
    let mut failed = 0;
    for r in &records {
        let report = eval::replay(&spec_for(r, &args.vessel)?, r)?;
        match report.first_mismatch {
            None => println!("episode {} seed {}: reproduced {} steps, {}", r.episode, r.seed, report.steps, report.outcome.label()),
            Some(i) => {
                failed += 1;
                println!("episode {} seed {}: diverged at step {}", r.episode, r.seed, i + 1);
            }
        }
    }
    if failed > 0 {
        return Err(Failure::Runtime(Error::Internal(format!("{failed} episode(s) did not reproduce"))));
    }
    Ok(())
}

fn render(args: &RenderArgs) -> std::result::Result<(), Failure> {
    if args.every == 0 {
        return Err(Failure::Usage("--every must be positive".into()));
    }
    let records = read_records(&args.trajectory)?;
    let dir = args.frames.clone().unwrap_or_else(|| default_out_dir().join("frames"));
    fs::create_dir_all(&dir)?;
    let chosen: Vec<&EpisodeRecord> = records
        .iter()
        .filter(|r| args.episode.is_none_or(|e| e == r.episode))
        .collect();
    if chosen.is_empty() {
        return Err(Failure::Usage("no matching episode in the trajectory".into()));
    }
    let mut written = 0;
    for r in chosen {
        let last = r.steps.len();
        eval::replay_with(&spec_for(r, &args.vessel)?, r, |env, step| {
            if step % args.every == 0 || step == last {
                let frame = frame_of(env, r.seed, step)?;
                let base = dir.join(format!("episode_{:04}_step_{:04}", r.episode, step));
                if args.png {
                    frame.save_png(&base.with_extension("png"))?;
                } else {
                    fs::write(base.with_extension("pgm"), frame.to_pgm())?;
                }
                written += 1;
            }
            Ok(())
        })?;
    }
    println!("wrote {written} frames to {}", dir.display());
    Ok(())
}

fn metrics(args: &MetricsArgs) -> std::result::Result<(), Failure> {
    let sets = args
        .records
        .iter()
        .map(|p| read_records(p))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (path, records) in args.records.iter().zip(&sets) {
        rows.push(MetricsRow::new(path.display().to_string(), records)?);
    }
    if args.compare {
        if sets.len() < 2 {
            return Err(Failure::Usage("--compare needs at least two record files".into()));
        }
        for i in 1..sets.len() {
            rows[i].compare_to(&sets[i], &sets[0])?;
        }
    }
    print!("{}", eval::metrics_table(&rows));
    if let Some(out) = &args.output {
        create_parent(out)?;
        fs::write(out, eval::metrics_json(&rows))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.json");
        fs::write(&cfg, r#"{"benchmark": "arch_variety", "episodes": 7, "seed": 3}"#).unwrap();
        let args = RunArgs {
            config: Some(cfg),
            seed: Some(9),
            ..RunArgs::default()
        };
        let c = RunConfig::resolve(args).unwrap();
        assert_eq!((c.benchmark.as_str(), c.episodes, c.seed), ("arch_variety", 7, 9));
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["vesselnav", "frobnicate"]), 1);
        assert_eq!(run(["vesselnav", "bench", "run", "--policy", "neural", "--benchmark", "basic_wire_nav"]), 1);
        assert_eq!(run(["vesselnav", "bench", "list"]), 0);
    }
}
