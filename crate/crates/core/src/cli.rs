//! Experiment configuration and the `navq` command implementations.
//!
//! A run is described by one TOML file (every section optional, unknown keys
//! rejected); command-line flags override individual keys. Each command
//! writes its artifacts plus a `manifest.json` holding the fully resolved
//! configuration.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agent::{
    collect_hidden_states, evaluate_policy, train_run, write_outcomes_csv, AgentConfig, Checkpoint, Critic, CriticConfig, GradientMode,
    GreedyPolicy, RunRecord, SceneBank,
};
use crate::analysis::{aggregate_runs, fim_report, uniform_inputs, FimConfig, ValueModel};
use crate::env::scenes::{generate_scenes, SceneGridConfig, Split};
use crate::env::EnvConfig;
use crate::error::{NavqError, Result};
use crate::qsim::{DepolarizingSpec, GateErrorSpec, NoiseSpec};
use crate::rng::{substream, Stream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Number of eigenvalues written to the spectrum CSV.
pub const SPECTRUM_EXPORT: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub agent: AgentConfig,
    #[serde(default)]
    pub env: EnvConfig,
    /// Training scene grid.
    #[serde(default = "train_grid")]
    pub train_scenes: SceneGridConfig,
    /// Evaluation scene grid.
    #[serde(default = "test_grid")]
    pub eval_scenes: SceneGridConfig,
    /// One training run per seed; empty means `[agent.seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub fim: FimConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn train_grid() -> SceneGridConfig {
    SceneGridConfig::default_for(Split::Train)
}
fn test_grid() -> SceneGridConfig {
    SceneGridConfig::default_for(Split::Test)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            agent: AgentConfig::default(),
            env: EnvConfig::default(),
            train_scenes: train_grid(),
            eval_scenes: test_grid(),
            seeds: Vec::new(),
            fim: FimConfig::default(),
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| NavqError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| NavqError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| NavqError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.env.validate()?;
        self.train_scenes.speed.values()?;
        self.train_scenes.distance.values()?;
        self.eval_scenes.speed.values()?;
        self.eval_scenes.distance.values()?;
        crate::analysis::kappa(self.fim.gamma, self.fim.n_data)?;
        if self.fim.theta_samples < 2 || self.fim.inputs == 0 {
            return Err(NavqError::Config("fim needs theta_samples >= 2 and inputs >= 1".into()));
        }
        Ok(())
    }

    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.agent.seed]
        } else {
            self.seeds.clone()
        }
    }
}

/// `none`, `gate:<scale>`, `depol:<p>` or `depol:<p>:per_gate`, joined by `+`.
pub fn parse_noise(spec: &str) -> Result<NoiseSpec> {
    let mut noise = NoiseSpec::none();
    if spec == "none" {
        return Ok(noise);
    }
    for part in spec.split('+') {
        let fields: Vec<&str> = part.split(':').collect();
        let num = |s: &str| s.parse::<f64>().map_err(|_| NavqError::Config(format!("bad number {s:?} in noise spec {spec:?}")));
        match fields.as_slice() {
            ["gate"] => noise.gate_error = Some(GateErrorSpec::default()),
            ["gate", s] => noise.gate_error = Some(GateErrorSpec { scale: num(s)? }),
            ["depol", p] => noise.depolarizing = Some(DepolarizingSpec { p: num(p)?, placement: Default::default() }),
            ["depol", p, "per_gate"] => {
                noise.depolarizing = Some(DepolarizingSpec { p: num(p)?, placement: crate::qsim::DepolarizingPlacement::PerGate })
            }
            ["depol", p, "per_segment"] => noise.depolarizing = Some(DepolarizingSpec { p: num(p)?, placement: Default::default() }),
            _ => return Err(NavqError::Config(format!("unrecognized noise spec {part:?}"))),
        }
    }
    noise.validate()?;
    Ok(noise)
}

/// `classical`, `quantum` (4 qubits, 2 layers) or `quantum:<n>x<L>`.
pub fn parse_critic(spec: &str, current: &CriticConfig) -> Result<CriticConfig> {
    let bad = || NavqError::Config(format!("unrecognized critic {spec:?}; use classical, quantum or quantum:<n>x<L>"));
    let noise = match current {
        CriticConfig::Quantum { noise, .. } => *noise,
        _ => NoiseSpec::none(),
    };
    match spec.split_once(':') {
        None if spec == "classical" => Ok(CriticConfig::Classical { hidden: 64 }),
        None if spec == "quantum" => Ok(CriticConfig::Quantum { qubits: 4, layers: 2, noise, axes: Default::default(), prescale: false }),
        Some(("quantum", shape)) => {
            let (n, l) = shape.split_once('x').ok_or_else(bad)?;
            let qubits = n.parse().map_err(|_| bad())?;
            let layers = l.parse().map_err(|_| bad())?;
            Ok(CriticConfig::Quantum { qubits, layers, noise, axes: Default::default(), prescale: false })
        }
        _ => Err(bad()),
    }
}

#[derive(Debug, Parser)]
#[command(name = "navq", version, about = "Hybrid quantum-classical actor-critic for collision-free navigation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one run per seed and write curves, checkpoints and a manifest.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint over a scene grid.
    Eval(EvalArgs),
    /// Aggregate run curves and/or compute the Fisher spectrum of a checkpoint.
    Analyze(AnalyzeArgs),
    /// Dump a generated scene grid as JSON lines (one scene per line).
    Scenes(ScenesArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GradientArg {
    BackpropSim,
    ParameterShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML experiment description.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Train a single run with this seed (replaces the seed list).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub gradient_mode: Option<GradientArg>,
    /// Quantum noise, e.g. `none`, `gate:0.01`, `depol:0.1+gate`.
    #[arg(long)]
    pub noise: Option<String>,
    #[arg(long)]
    pub episodes: Option<usize>,
    /// `classical`, `quantum` or `quantum:<qubits>x<layers>`.
    #[arg(long)]
    pub critic: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Use a default grid instead of the configured evaluation grid.
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    /// Evaluate only the first N scenes of the grid.
    #[arg(long)]
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Run directories (a `curve.csv` or `seed-*/curve.csv` inside each).
    #[arg(long = "run", num_args = 1..)]
    pub runs: Vec<PathBuf>,
    /// Checkpoint whose critic is analyzed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Draw Fisher inputs uniformly from [−1, 1] instead of policy rollouts.
    #[arg(long)]
    pub uniform_inputs: bool,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct ScenesArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long, value_enum, default_value = "train")]
    pub split: SplitArg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: String,
    pub error: Option<String>,
    pub episodes: usize,
    pub curve: Option<String>,
    pub checkpoint: Option<String>,
    pub wall_clock_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub layout: Option<crate::qidep::QidepLayout>,
    pub critic_params: usize,
    pub total_params: usize,
    pub initialization: String,
    pub runs: Vec<SeedResult>,
    pub partial: bool,
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

fn resolve(common: &CommonArgs) -> Result<RunConfig> {
    match &common.config {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn out_dir(cfg: &RunConfig, common: &CommonArgs, fallback: &str) -> PathBuf {
    common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(fallback))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| NavqError::Io(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| NavqError::Io(format!("{}: {e}", path.display())))
}

fn param_counts(cfg: &RunConfig) -> Result<(usize, usize)> {
    let mut rng = rand::rngs::mock::StepRng::new(0, 0);
    let model = crate::agent::ActorCritic::new(&cfg.agent, cfg.env.observation_dim(), &mut rng)?;
    Ok((model.critic.num_params(), model.num_params()))
}

fn manifest(command: &str, cfg: &RunConfig) -> Result<Manifest> {
    let (critic_params, total_params) = param_counts(cfg)?;
    Ok(Manifest {
        command: command.into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config: cfg.clone(),
        layout: cfg.agent.layout()?,
        critic_params,
        total_params,
        initialization: "dense/LSTM weights Xavier-uniform, biases 0, LayerNorm gain 1; circuit angles U(-pi, pi); readout weights Xavier-uniform, bias 0".into(),
        runs: Vec::new(),
        partial: false,
        notes: Vec::new(),
        wall_clock_s: 0.0,
    })
}

/// Applies `train` flags to the file configuration.
pub fn apply_train_overrides(cfg: &mut RunConfig, args: &TrainArgs) -> Result<()> {
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
        cfg.agent.seed = s;
    }
    if let Some(m) = args.gradient_mode {
        cfg.agent.gradient_mode = match m {
            GradientArg::BackpropSim => GradientMode::BackpropSim,
            GradientArg::ParameterShift => GradientMode::ParameterShift,
        };
    }
    if let Some(e) = args.episodes {
        cfg.agent.episodes = e;
    }
    if let Some(c) = &args.critic {
        cfg.agent.critic = parse_critic(c, &cfg.agent.critic)?;
    }
    if let Some(n) = &args.noise {
        let parsed = parse_noise(n)?;
        match &mut cfg.agent.critic {
            CriticConfig::Quantum { noise, .. } => *noise = parsed,
            CriticConfig::Classical { .. } if parsed.is_noiseless() => {}
            CriticConfig::Classical { .. } => return Err(NavqError::Config("--noise requires a quantum critic".into())),
        }
    }
    if let Some(o) = &args.common.out {
        cfg.out = Some(o.clone());
    }
    Ok(())
}

pub fn cmd_train(args: &TrainArgs) -> Result<Manifest> {
    let mut cfg = resolve(&args.common)?;
    apply_train_overrides(&mut cfg, args)?;
    cfg.validate()?;
    let out = out_dir(&cfg, &args.common, "runs/train");
    create_dir(&out)?;
    let scenes = generate_scenes(&cfg.train_scenes)?;
    let mut m = manifest("train", &cfg)?;
    let start = Instant::now();
    for seed in cfg.seed_list() {
        let t0 = Instant::now();
        let dir = out.join(format!("seed-{seed}"));
        create_dir(&dir)?;
        let agent = AgentConfig { seed, ..cfg.agent.clone() };
        let mut res = SeedResult { seed, status: "ok".into(), error: None, episodes: 0, curve: None, checkpoint: None, wall_clock_s: 0.0 };
        match train_run(&agent, &cfg.env, &scenes) {
            Ok(o) => {
                let curve = dir.join("curve.csv");
                let ckpt = dir.join("checkpoint.json");
                fs::write(&curve, o.record.to_csv_string()?)?;
                o.checkpoint.save(&ckpt)?;
                res.episodes = o.record.episodes.len();
                res.curve = Some(rel(&out, &curve));
                res.checkpoint = Some(rel(&out, &ckpt));
            }
            Err(e) => {
                res.status = "failed".into();
                res.error = Some(e.to_string());
                m.partial = true;
            }
        }
        res.wall_clock_s = t0.elapsed().as_secs_f64();
        m.runs.push(res);
    }
    m.wall_clock_s = start.elapsed().as_secs_f64();
    write_json(&out.join("manifest.json"), &m)?;
    if m.partial {
        let errs: Vec<String> = m.runs.iter().filter_map(|r| r.error.clone()).collect();
        return Err(NavqError::Usage(format!("some runs failed: {}", errs.join("; "))));
    }
    Ok(m)
}

fn rel(base: &Path, p: &Path) -> String {
    p.strip_prefix(base).unwrap_or(p).display().to_string()
}

pub fn cmd_eval(args: &EvalArgs) -> Result<crate::agent::PolicyMetrics> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let mut cfg = match &args.common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig { agent: ckpt.agent.clone(), env: ckpt.env.clone(), ..RunConfig::default() },
    };
    if let Some(s) = args.split {
        cfg.eval_scenes = SceneGridConfig::default_for(s.into());
    }
    cfg.validate()?;
    let model = ckpt.to_model()?;
    let mut scenes = generate_scenes(&cfg.eval_scenes)?;
    if let Some(n) = args.limit {
        scenes.truncate(n.max(1));
    }
    let out = out_dir(&cfg, &args.common, "runs/eval");
    create_dir(&out)?;
    let start = Instant::now();
    let mut bank = SceneBank::new(ckpt.env.clone(), scenes)?;
    let (metrics, outcomes) = evaluate_policy(&mut GreedyPolicy::new(&model), &mut bank)?;
    write_json(&out.join("metrics.json"), &metrics)?;
    write_outcomes_csv(&outcomes, fs::File::create(out.join("outcomes.csv"))?)?;
    let mut m = manifest("eval", &cfg)?;
    m.notes.push(format!("checkpoint {}", args.checkpoint.display()));
    m.wall_clock_s = start.elapsed().as_secs_f64();
    write_json(&out.join("manifest.json"), &m)?;
    Ok(metrics)
}

/// Curve files found under a run directory, sorted.
/// Curve files under a run path: the file itself, `<dir>/curve.csv`, or
/// `<dir>/*/curve.csv` (a multi-seed training output).
pub fn find_curves(dir: &Path) -> Result<Vec<PathBuf>> {
    if dir.is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let direct = dir.join("curve.csv");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut found = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| NavqError::Io(format!("{}: {e}", dir.display())))?;
    for e in entries {
        let p = e?.path().join("curve.csv");
        if p.is_file() {
            found.push(p);
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(NavqError::Io(format!("{}: no curve.csv found", dir.display())));
    }
    Ok(found)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeOutput {
    pub curves: Option<crate::analysis::CurveStats>,
    pub fim: Option<crate::analysis::FimReport>,
}

pub fn cmd_analyze(args: &AnalyzeArgs) -> Result<AnalyzeOutput> {
    let cfg = resolve(&args.common)?;
    cfg.validate()?;
    if args.runs.is_empty() && args.checkpoint.is_none() {
        return Err(NavqError::Config("analyze needs --run and/or --checkpoint".into()));
    }
    let out = out_dir(&cfg, &args.common, "runs/analysis");
    create_dir(&out)?;
    let start = Instant::now();
    let mut m = manifest("analyze", &cfg)?;
    let mut result = AnalyzeOutput { curves: None, fim: None };
    if !args.runs.is_empty() {
        let mut files = Vec::new();
        for d in &args.runs {
            files.extend(find_curves(d)?);
        }
        let window = cfg.agent.smoothing_window;
        let runs = files.iter().map(|f| RunRecord::read_csv(f, window).map(|r| r.returns())).collect::<Result<Vec<_>>>()?;
        let stats = aggregate_runs(&runs, window)?;
        if stats.truncated {
            m.notes.push(format!("runs had different lengths; truncated to {} episodes", stats.episodes));
        }
        let mut w = csv::Writer::from_path(out.join("curve_stats.csv"))?;
        w.write_record(["episode", "mean", "std", "min", "max"])?;
        for i in 0..stats.episodes {
            w.write_record([i.to_string(), stats.mean[i].to_string(), stats.std[i].to_string(), stats.min[i].to_string(), stats.max[i].to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(out.join("auc.csv"))?;
        w.write_record(["run", "auc"])?;
        for (f, a) in files.iter().zip(&stats.aucs) {
            w.write_record([f.display().to_string(), a.to_string()])?;
        }
        w.write_record(["mean".to_string(), stats.auc_mean.to_string()])?;
        w.write_record(["std".to_string(), stats.auc_std.to_string()])?;
        w.flush()?;
        result.curves = Some(stats);
    }
    if let Some(path) = &args.checkpoint {
        let ckpt = Checkpoint::load(path)?;
        let model = ckpt.to_model()?;
        let seed = args.seed.unwrap_or(ckpt.agent.seed);
        let mut rng = substream(seed, Stream::Analysis);
        let inputs = if args.uniform_inputs {
            uniform_inputs(cfg.fim.inputs, model.critic.input_dim(), &mut rng)
        } else {
            let mut bank = SceneBank::new(ckpt.env.clone(), generate_scenes(&cfg.train_scenes)?)?;
            collect_hidden_states(&model, &mut bank, cfg.fim.inputs)?
        };
        let critic: &Critic = &model.critic;
        let report = fim_report(critic, &inputs, &cfg.fim, &mut rng)?;
        write_json(&out.join("fim.json"), &report)?;
        let mut w = csv::Writer::from_path(out.join("eigenspectrum.csv"))?;
        w.write_record(["rank", "eigenvalue"])?;
        for (i, v) in report.eigenvalues.iter().take(SPECTRUM_EXPORT).enumerate() {
            w.write_record([(i + 1).to_string(), v.to_string()])?;
        }
        w.flush()?;
        m.notes.push(format!("checkpoint {}", path.display()));
        result.fim = Some(report);
    }
    m.wall_clock_s = start.elapsed().as_secs_f64();
    write_json(&out.join("manifest.json"), &m)?;
    Ok(result)
}

pub fn cmd_scenes(args: &ScenesArgs) -> Result<usize> {
    let cfg = resolve(&args.common)?;
    let grid = match (&args.common.config, args.split) {
        (Some(_), SplitArg::Train) => cfg.train_scenes.clone(),
        (Some(_), SplitArg::Test) => cfg.eval_scenes.clone(),
        (None, s) => SceneGridConfig::default_for(s.into()),
    };
    let scenes = generate_scenes(&grid)?;
    let mut text = String::new();
    for s in &scenes {
        text.push_str(&serde_json::to_string(s)?);
        text.push('\n');
    }
    match &args.common.out {
        Some(p) => fs::write(p, text).map_err(|e| NavqError::Io(format!("{}: {e}", p.display())))?,
        None => {
            let mut out = std::io::stdout().lock();
            match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
                Ok(()) => {}
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => {}
                Err(e) => return Err(e.into()),
            }
        }
    }
    Ok(scenes.len())
}

pub fn exit_code(e: &NavqError) -> i32 {
    match e {
        NavqError::Config(_) | NavqError::Layout(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|m| {
            for r in &m.runs {
                eprintln!("seed {}: {} episodes ({:.1}s)", r.seed, r.episodes, r.wall_clock_s);
            }
        }),
        Command::Eval(a) => cmd_eval(a).map(|m| {
            eprintln!(
                "{} scenes: crash {:.1}%, near miss {:.1}%, goal {:.1}%, SI {}",
                m.episodes, m.crash_rate, m.near_miss_rate, m.goal_rate, m.safety_index
            );
        }),
        Command::Analyze(a) => cmd_analyze(a).map(|o| {
            if let Some(c) = &o.curves {
                eprintln!("{} runs: AUC {:.2} ± {:.2}", c.runs, c.auc_mean, c.auc_std);
            }
            if let Some(f) = &o.fim {
                eprintln!("effective dimension {:.3} of {} (normalized {:.4})", f.effective_dimension, f.d, f.normalized_effective_dimension);
            }
        }),
        Command::Scenes(a) => cmd_scenes(a).map(|n| eprintln!("{n} scenes")),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("navq: {e}");
            exit_code(&e)
        }
    }
}
