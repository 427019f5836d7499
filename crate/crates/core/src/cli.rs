//! The `sfp` command-line front end.
//!
//! Every subcommand is fully determined by its arguments (and config file),
//! prints a one-line JSON summary on success and writes its outputs, plus a
//! `resolved_config.json` echo, into its output directory. Wall-clock
//! measurements only ever appear in columns whose names end in `_ns`.
//!
//! Exit codes: 0 success, 2 usage, 3 invalid configuration, 4 runtime error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::baseline::baseline_train;
use crate::chunk::ChunkParams;
use crate::dataset::{Dataset, GeneratorInfo, ObservationHistory};
use crate::envs::{self, PointMassConfig, PointMassEnv};
use crate::error::Error;
use crate::eval::{self, write_text};
use crate::field::ConditionalField;
use crate::flows::FlowConfig;
use crate::model::{FlowSpec, VelocityModel};
use crate::stream::{run_receding_horizon, sample_trajectories, InitMode};
use crate::svg::{self, Figure, Style};
use crate::train::{train_policy, TrainConfig};
use crate::trajectory::Trajectory;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config { .. } => EXIT_CONFIG,
            _ => EXIT_RUNTIME,
        };
        CliError { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "sfp", version, about = "Streaming flow policies: data, training, sampling and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a demonstration dataset.
    GenData(GenDataArgs),
    /// Train a velocity field from a run config.
    Train(TrainArgs),
    /// Integrate full-horizon samples from a trained model.
    Sample(SampleArgs),
    /// Run the model closed-loop on the point-mass task.
    Rollout(RolloutArgs),
    /// Evaluation harnesses.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Compare streaming and trajectory-space latency.
    Bench(BenchArgs),
    /// Score the point-mass task across chunk sizes.
    SweepChunk(SweepArgs),
    /// Render demonstrations and optional samples to SVG.
    Plot(PlotArgs),
}

#[derive(Subcommand, Debug)]
enum EvalCommand {
    /// Per-timestep W1 between samples and the demonstrations.
    Marginals(MarginalsArgs),
    /// Mode coverage, sign consistency and shape classes of samples.
    Modes(ModesArgs),
    /// Terminal error from a perturbed start, stabilized vs not.
    Ablation(AblationArgs),
    /// Velocity interval and position bound checks.
    Convexity(ConvexityArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum EnvKind {
    Bimodal,
    IntersectingS,
    Lines,
    SingleLine,
    Pointmass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum InitArg {
    Action,
    State,
}

impl From<InitArg> for InitMode {
    fn from(a: InitArg) -> Self {
        match a {
            InitArg::Action => InitMode::ActionImitation,
            InitArg::State => InitMode::StateImitation,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    env: EnvKind,
    /// Number of demonstrations (episodes for `pointmass`).
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Amplitude jitter of the toy generators.
    #[arg(long, default_value_t = 0.02)]
    noise_std: f64,
    /// Slope of the `single-line` demonstration.
    #[arg(long, default_value_t = 0.5)]
    slope: f64,
    /// Prediction horizon in seconds for `pointmass`.
    #[arg(long, default_value_t = 1.6)]
    t_pred: f64,
    /// Waypoints per `pointmass` window.
    #[arg(long, default_value_t = 17)]
    waypoints: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Contents of a `train --config` file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset path, relative to the working directory.
    pub data: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

impl RunConfig {
    pub fn validate(&self) -> crate::Result<()> {
        if !self.data.is_file() {
            return Err(Error::config("data", format!("no such file: {}", self.data.display())));
        }
        self.train.validate()
    }
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `out_dir` from the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Supplies the history and start action (first demonstration);
    /// defaults to zeros.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Initial noise; 0 gives deterministic samples.
    #[arg(long, default_value_t = 0.0)]
    sigma0: f64,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    dt: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct RolloutArgs {
    #[arg(long)]
    model: PathBuf,
    /// Point-mass config JSON; defaults are used otherwise.
    #[arg(long)]
    env_config: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    chunk_steps: usize,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    dt: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Action)]
    init_mode: InitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct MarginalsArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma0: f64,
    #[arg(long, default_value_t = 17)]
    grid: usize,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ModesArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma0: f64,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct AblationArgs {
    /// Model trained with the stabilizing gain.
    #[arg(long)]
    model_k: PathBuf,
    /// Model trained with k = 0.
    #[arg(long)]
    model_k0: PathBuf,
    /// Single-demonstration dataset both were trained on.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    perturb: f64,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    dt: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct ConvexityArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 512)]
    probes: usize,
    #[arg(long, default_value_t = 0.1)]
    eps: f64,
    #[arg(long, default_value_t = 256)]
    n: usize,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    baseline: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 8)]
    chunk_steps: usize,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    dt: f64,
    #[arg(long, default_value_t = 10)]
    baseline_steps: usize,
    #[arg(long, default_value_t = 1000)]
    min_actions: usize,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    env_config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16")]
    chunk_sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    rollouts: usize,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    dt: f64,
    #[arg(long, value_enum, default_value_t = InitArg::Action)]
    init_mode: InitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct PlotArgs {
    #[arg(long)]
    data: PathBuf,
    /// Adds samples and per-mode bands from this model.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma0: f64,
    #[arg(long, default_value_t = 1.0 / 64.0)]
    dt: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "")]
    title: String,
    #[arg(long)]
    out_dir: PathBuf,
}

/// Parses `argv` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn run(cmd: Command) -> CliResult<serde_json::Value> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Sample(a) => sample(a),
        Command::Rollout(a) => rollout(a),
        Command::Eval(EvalCommand::Marginals(a)) => eval_marginals(a),
        Command::Eval(EvalCommand::Modes(a)) => eval_modes(a),
        Command::Eval(EvalCommand::Ablation(a)) => eval_ablation(a),
        Command::Eval(EvalCommand::Convexity(a)) => eval_convexity(a),
        Command::Bench(a) => bench(a),
        Command::SweepChunk(a) => sweep(a),
        Command::Plot(a) => plot(a),
    }
}

fn prepare_out_dir(dir: &Path, resolved: &impl Serialize) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut s = serde_json::to_string_pretty(resolved).map_err(Error::from)?;
    s.push('\n');
    write_text(&dir.join("resolved_config.json"), &s)?;
    Ok(())
}

fn config_error(field: &str, reason: impl Into<String>) -> CliError {
    Error::config(field, reason).into()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, what: &str) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(what, format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| config_error(what, format!("{}: {e}", path.display())))
}

fn env_config(path: &Option<PathBuf>, action_period: f64) -> CliResult<PointMassConfig> {
    let mut cfg = match path {
        Some(p) => read_json::<PointMassConfig>(p, "env_config")?,
        None => PointMassConfig::default(),
    };
    cfg.action_period = action_period;
    cfg.validate()?;
    Ok(cfg)
}

/// History and start action for open-loop sampling: the first
/// demonstration's when a dataset is given, zeros otherwise.
fn sampling_context(model: &VelocityModel, data: Option<&Dataset>) -> CliResult<(ObservationHistory, Vec<f64>)> {
    match data {
        Some(ds) => {
            Error::check_dim("dataset action_dim", model.action_dim, ds.action_dim)?;
            Error::check_dim("dataset history width", model.history_width(), ds.history_width())?;
            let d = &ds.demos[0];
            Ok((d.history.clone(), d.trajectory.start().to_vec()))
        }
        None => Ok((
            ObservationHistory::repeated(&vec![0.0; model.obs_dim], model.history_len)?,
            vec![0.0; model.action_dim],
        )),
    }
}

fn require_streaming(model: &VelocityModel, what: &str) -> CliResult<()> {
    if let FlowSpec::Baseline { .. } = model.flow {
        return Err(config_error("model.variant", format!("{what} needs a streaming model")));
    }
    Ok(())
}

fn samples_csv(samples: &[Trajectory]) -> String {
    let d = samples.first().map_or(0, |s| s.dim());
    let mut out = String::from("sample,t");
    for j in 0..d {
        out.push_str(&format!(",a{j}"));
    }
    out.push('\n');
    for (i, s) in samples.iter().enumerate() {
        let h = s.spacing();
        for (m, w) in s.waypoints().enumerate() {
            out.push_str(&format!("{i},{}", m as f64 * h));
            for v in w {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
    }
    out
}

fn draw_samples(
    model: &VelocityModel,
    ds: Option<&Dataset>,
    n: usize,
    sigma0: f64,
    dt: f64,
    seed: u64,
) -> CliResult<Vec<Trajectory>> {
    require_streaming(model, "sampling")?;
    let (h, a0) = sampling_context(model, ds)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_trajectories(model, &h, &a0, sigma0, n, dt, &mut rng)?)
}

fn gen_data(a: GenDataArgs) -> CliResult<serde_json::Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut ds = match a.env {
        EnvKind::Bimodal => envs::gen_bimodal_1d(a.n, &mut rng, a.noise_std)?,
        EnvKind::IntersectingS => envs::gen_intersecting_s(a.n, &mut rng, a.noise_std)?,
        EnvKind::Lines => envs::gen_lines(a.n, &mut rng)?,
        EnvKind::SingleLine => envs::gen_single_line(a.slope)?,
        EnvKind::Pointmass => {
            let cfg = PointMassConfig {
                action_period: a.t_pred / (a.waypoints.saturating_sub(1).max(1)) as f64,
                ..PointMassConfig::default()
            };
            envs::gen_pointmass(a.n, &mut rng, &cfg, a.t_pred, a.waypoints)?
        }
    };
    let name = ds.generator.as_ref().map_or_else(String::new, |g| g.name.clone());
    ds.generator = Some(GeneratorInfo {
        name,
        seed: a.seed,
        noise_std: matches!(a.env, EnvKind::Bimodal | EnvKind::IntersectingS).then_some(a.noise_std),
    });
    if let Some(dir) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ds.save(&a.out)?;
    Ok(json!({"command": "gen-data", "num_demos": ds.len(), "out": a.out}))
}

fn train(a: TrainArgs) -> CliResult<serde_json::Value> {
    let mut cfg: RunConfig = read_json(&a.config, "config")?;
    if let Some(o) = a.out_dir {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    let ds = Dataset::load(&cfg.data)?;
    prepare_out_dir(&cfg.out_dir, &cfg)?;
    let outcome = match cfg.train.flow {
        FlowSpec::Baseline { .. } => baseline_train(&ds, &cfg.train)?,
        _ => train_policy(&ds, &cfg.train)?,
    };
    let model_path = cfg.out_dir.join("model.json");
    outcome.model.save(&model_path)?;
    outcome.losses.write_csv(cfg.out_dir.join("loss.csv"))?;
    Ok(json!({
        "command": "train",
        "variant": cfg.train.flow.name(),
        "steps": cfg.train.num_steps,
        "final_loss": outcome.losses.last(),
        "tail_loss": outcome.losses.tail_mean(100),
        "model": model_path,
    }))
}

fn sample(a: SampleArgs) -> CliResult<serde_json::Value> {
    let model = VelocityModel::load(&a.model)?;
    let ds = a.data.as_ref().map(Dataset::load).transpose()?;
    prepare_out_dir(&a.out_dir, &a)?;
    let samples = draw_samples(&model, ds.as_ref(), a.n, a.sigma0, a.dt, a.seed)?;
    write_text(&a.out_dir.join("samples.csv"), &samples_csv(&samples))?;
    let finals: Vec<f64> = samples.iter().map(|s| s.end()[0]).collect();
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    Ok(json!({"command": "sample", "n": samples.len(), "mean_final_a0": mean}))
}

fn rollout(a: RolloutArgs) -> CliResult<serde_json::Value> {
    let model = VelocityModel::load(&a.model)?;
    require_streaming(&model, "rollout")?;
    let chunk = ChunkParams::from_steps(model.t_pred_seconds, a.chunk_steps, a.dt)?;
    let mut cfg = env_config(&a.env_config, chunk.action_period())?;
    cfg.seed = a.seed;
    prepare_out_dir(&a.out_dir, &json!({"args": &a, "env": &cfg}))?;
    let mut env = PointMassEnv::new(cfg)?;
    let max_steps = a.max_steps.unwrap_or(env.config().episode_actions());
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let rec = run_receding_horizon(&model, &mut env, &chunk, a.init_mode.into(), model.history_len, max_steps, &mut rng)?;
    rec.write_csv(a.out_dir.join("rollout.csv"), true)?;
    Ok(json!({
        "command": "rollout",
        "steps": rec.steps.len(),
        "chunks": rec.chunk_starts.len(),
        "score": rec.score,
        "failed": rec.failed,
    }))
}

fn eval_marginals(a: MarginalsArgs) -> CliResult<serde_json::Value> {
    let model = VelocityModel::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    prepare_out_dir(&a.out_dir, &a)?;
    let samples = draw_samples(&model, Some(&ds), a.n, a.sigma0, a.dt, a.seed)?;
    let reference: Vec<Trajectory> = ds.trajectories().cloned().collect();
    let rep = eval::w1_per_timestep(&samples, &reference, &eval::uniform_grid(a.grid))?;
    rep.write_csv(a.out_dir.join("marginals.csv"))?;
    let mut bands = svg::mode_bands(&samples, &rep.grid, 2, eval::sign_at_end)?;
    if model.action_dim > 1 {
        bands = vec![svg::report_band(&rep)];
    }
    let fig = Figure { title: "marginals".into(), demos: reference, samples, bands };
    write_text(&a.out_dir.join("marginals.svg"), &svg::render_figure(&fig, &Style::default())?)?;
    Ok(json!({"command": "eval marginals", "mean_w1": rep.mean_w1(), "max_w1": rep.max_w1()}))
}

fn eval_modes(a: ModesArgs) -> CliResult<serde_json::Value> {
    let model = VelocityModel::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    prepare_out_dir(&a.out_dir, &a)?;
    let samples = draw_samples(&model, Some(&ds), a.n, a.sigma0, a.dt, a.seed)?;
    let cov = eval::mode_coverage(&samples, 2, eval::sign_at_end)?;
    let consistency = eval::sign_consistency(&samples)?;
    let shapes = eval::shape_classes(&samples);
    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("mode_positive,{}\nmode_negative,{}\nsign_consistency,{consistency}\n", cov[0], cov[1]));
    for (c, n) in eval::ShapeClass::ALL.iter().zip(shapes) {
        csv.push_str(&format!("shape_{},{n}\n", c.name()));
    }
    write_text(&a.out_dir.join("modes.csv"), &csv)?;
    Ok(json!({
        "command": "eval modes",
        "mode_fractions": cov,
        "sign_consistency": consistency,
        "shape_counts": shapes,
    }))
}

fn eval_ablation(a: AblationArgs) -> CliResult<serde_json::Value> {
    let mk = VelocityModel::load(&a.model_k)?;
    let m0 = VelocityModel::load(&a.model_k0)?;
    let ds = Dataset::load(&a.data)?;
    require_streaming(&mk, "ablation")?;
    require_streaming(&m0, "ablation")?;
    prepare_out_dir(&a.out_dir, &a)?;
    let demo = &ds.demos[0];
    let learned = eval::stabilization_ablation(&mk, &m0, &demo.trajectory, &demo.history, a.perturb, a.dt)?;
    let FlowSpec::Plain(flow) = mk.flow else {
        return Err(config_error("model.variant", "ablation expects plain models"));
    };
    let oracle_k = ConditionalField { trajectory: demo.trajectory.clone(), flow };
    let oracle_0 = ConditionalField { trajectory: demo.trajectory.clone(), flow: FlowConfig { k: 0.0, ..flow } };
    let analytic = eval::stabilization_ablation(&oracle_k, &oracle_0, &demo.trajectory, &demo.history, a.perturb, 1e-3)?;
    let csv = format!(
        "field,err_k,err_k0,ratio\nlearned,{},{},{}\nanalytic,{},{},{}\n",
        learned.err_k, learned.err_k0, learned.ratio, analytic.err_k, analytic.err_k0, analytic.ratio
    );
    write_text(&a.out_dir.join("ablation.csv"), &csv)?;
    Ok(json!({
        "command": "eval ablation",
        "ratio": learned.ratio,
        "analytic_ratio": analytic.ratio,
        "exp_minus_k": (-flow.k).exp(),
    }))
}

fn eval_convexity(a: ConvexityArgs) -> CliResult<serde_json::Value> {
    let model = VelocityModel::load(&a.model)?;
    let ds = Dataset::load(&a.data)?;
    let FlowSpec::Plain(flow) = model.flow else {
        return Err(config_error("model.variant", "convexity check expects a plain model"));
    };
    prepare_out_dir(&a.out_dir, &a)?;
    let samples = draw_samples(&model, Some(&ds), a.n, flow.sigma0, a.dt, a.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed.wrapping_add(1));
    let conv = eval::convexity_check(&model, &ds, &samples, flow.k, flow.sigma0, a.eps, a.probes, &mut rng)?;
    let bound = eval::position_bound_check(&samples, &ds, flow.sigma0)?;
    let csv = format!(
        "metric,value\nprobes,{}\ninside,{}\nexcluded,{}\nfraction_inside,{}\nbound,{}\nactions,{}\noutside,{}\nfraction_outside,{}\n",
        conv.probes, conv.inside, conv.excluded, conv.fraction_inside, bound.bound, bound.total, bound.outside, bound.fraction_outside
    );
    write_text(&a.out_dir.join("convexity.csv"), &csv)?;
    Ok(json!({
        "command": "eval convexity",
        "fraction_inside": conv.fraction_inside,
        "fraction_outside_bound": bound.fraction_outside,
    }))
}

fn bench(a: BenchArgs) -> CliResult<serde_json::Value> {
    let model = VelocityModel::load(&a.model)?;
    let base = VelocityModel::load(&a.baseline)?;
    let ds = Dataset::load(&a.data)?;
    require_streaming(&model, "bench --model")?;
    if !matches!(base.flow, FlowSpec::Baseline { .. }) {
        return Err(config_error("baseline.variant", "expected a baseline model"));
    }
    prepare_out_dir(&a.out_dir, &a)?;
    let chunk = ChunkParams::from_steps(model.t_pred_seconds, a.chunk_steps, a.dt)?;
    let (h, a0) = sampling_context(&model, Some(&ds))?;
    let rep = eval::latency_bench(&model, &base, base.action_dim, &h, &a0, &chunk, a.baseline_steps, a.min_actions)?;
    write_text(&a.out_dir.join("latency.csv"), &rep.to_csv())?;
    Ok(json!({
        "command": "bench",
        "stream_ttfa_evals": rep.stream_ttfa_evals,
        "baseline_ttfa_evals": rep.baseline_ttfa_evals,
        "ttfa_ratio_wall": rep.ttfa_ratio(),
    }))
}

fn sweep(a: SweepArgs) -> CliResult<serde_json::Value> {
    let model = VelocityModel::load(&a.model)?;
    require_streaming(&model, "sweep-chunk")?;
    let period = model.t_pred_seconds * a.dt;
    let cfg = env_config(&a.env_config, period)?;
    prepare_out_dir(&a.out_dir, &json!({"args": &a, "env": &cfg}))?;
    let rep = eval::chunk_sweep(
        &model,
        &cfg,
        model.t_pred_seconds,
        a.dt,
        &a.chunk_sizes,
        a.rollouts,
        a.init_mode.into(),
        model.history_len,
        a.seed,
    )?;
    rep.write_csv(a.out_dir.join("sweep.csv"))?;
    Ok(json!({"command": "sweep-chunk", "rows": rep.rows.len(), "peak_chunk_steps": rep.peak()}))
}

fn plot(a: PlotArgs) -> CliResult<serde_json::Value> {
    let ds = Dataset::load(&a.data)?;
    prepare_out_dir(&a.out_dir, &a)?;
    let demos: Vec<Trajectory> = ds.trajectories().cloned().collect();
    let mut fig = Figure { title: a.title.clone(), demos, ..Figure::default() };
    if let Some(p) = &a.model {
        let model = VelocityModel::load(p)?;
        let samples = draw_samples(&model, Some(&ds), a.n, a.sigma0, a.dt, a.seed)?;
        fig.bands = svg::mode_bands(&samples, &eval::uniform_grid(33), 2, eval::sign_at_end)?;
        fig.samples = samples;
    }
    let out = a.out_dir.join("figure.svg");
    write_text(&out, &svg::render_figure(&fig, &Style::default())?)?;
    Ok(json!({"command": "plot", "samples": fig.samples.len(), "out": out}))
}
