//! Command-line harness: `train`, `simulate`, `evaluate`, `ablate`, and
//! `gen-scenario`.
//!
//! Every run is a deterministic function of its configuration file, command
//! line, and seed. Failures surface as a single machine-parsable JSON line
//! on stderr and a nonzero exit code. The `CROWDFLOW_THREADS` variable caps
//! how many ablation rows run concurrently.

use crate::config::RunConfig;
use crate::metrics::{evaluate, MetricReport};
use crate::model::CrowdModel;
use crate::scenario::{self, ScenarioSpec, Template};
use crate::scene::{load_scene, load_trajectories, save_trajectories, Episode, SceneEnvironment};
use crate::training::{simulate, train, SimOptions};
use crate::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser, Debug)]
#[command(
    name = "crowdflow",
    about = "Crowd simulation with social-force dynamics and a conditional diffusion model",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model on a trajectory dataset.
    Train(TrainArgs),
    /// Roll out a trained model and write the predicted trajectories.
    Simulate(SimulateArgs),
    /// Score predicted trajectories against ground truth.
    Evaluate(EvaluateArgs),
    /// Train and evaluate each combination of a toggle grid.
    Ablate(AblateArgs),
    /// Generate a synthetic scenario dataset.
    GenScenario(GenScenarioArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Run configuration file.
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    /// Override the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoints and the training log.
    #[arg(short = 'o', long = "out", default_value = "train_out")]
    pub out: PathBuf,
    /// Resume from a training checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Dotted-path config overrides, e.g. `training.epochs=40`.
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    /// Parameter or training checkpoint to load.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Output trajectory CSV.
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Predicted trajectory CSV.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth trajectory CSV.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output JSON report.
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
    /// Optional run configuration supplying the metrics section.
    #[arg(short = 'c', long = "config")]
    pub config: Option<PathBuf>,
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(short = 'c', long = "config")]
    pub config: PathBuf,
    /// Comma-separated toggle list; groups `env` and `igi` expand to their
    /// members. Known toggles: env.obstacles, env.oois, env.lighting,
    /// igi.r, igi.sim1, igi.sim2, igi.sim3, repulsion, channel.
    #[arg(long)]
    pub grid: String,
    #[arg(short = 'o', long = "out", default_value = "ablate_out")]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "set")]
    pub set: Vec<String>,
}

#[derive(Args, Debug)]
pub struct GenScenarioArgs {
    /// corridor | crossing | obstacle-slalom | ooi-attractor
    #[arg(long)]
    pub template: String,
    /// Number of agents.
    #[arg(short = 'n', long = "agents", default_value_t = 20)]
    pub agents: usize,
    /// Number of frames.
    #[arg(long, default_value_t = 600)]
    pub frames: usize,
    /// Acceleration noise level (m/s^2).
    #[arg(long, default_value_t = 0.02)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(short = 'o', long = "out")]
    pub out: PathBuf,
}

/// Entry point used by the binary; returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Ablate(args) => cmd_ablate(&args),
        Command::GenScenario(args) => cmd_gen_scenario(&args),
    };
    match result {
        Ok(()) => 0,
        Err(err) => {
            let line = serde_json::json!({ "error": err.to_string() });
            eprintln!("{line}");
            1
        }
    }
}

fn load_run_config(path: &Path, overrides: &[String], seed: Option<u64>) -> Result<RunConfig> {
    let mut all = overrides.to_vec();
    if let Some(seed) = seed {
        all.push(format!("seed={seed}"));
    }
    RunConfig::load(path, &all)
}

/// Paths inside a config resolve relative to the config file's directory.
fn resolve(base: &Path, relative: &str) -> PathBuf {
    let p = Path::new(relative);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.parent().unwrap_or_else(|| Path::new(".")).join(p)
    }
}

struct LoadedRun {
    config: RunConfig,
    scene: SceneEnvironment,
    episode: Episode,
}

fn load_run(config_path: &Path, overrides: &[String], seed: Option<u64>) -> Result<LoadedRun> {
    let config = load_run_config(config_path, overrides, seed)?;
    if config.scene.path.is_empty() {
        return Err(Error::config("scene.path is not set"));
    }
    if config.data.trajectories.is_empty() {
        return Err(Error::config("data.trajectories is not set"));
    }
    let scene = load_scene(resolve(config_path, &config.scene.path), None)?;
    let episode = load_trajectories(
        resolve(config_path, &config.data.trajectories),
        config.data.frame_interval,
    )?;
    Ok(LoadedRun {
        config,
        scene,
        episode,
    })
}

fn build_model(run: &LoadedRun, config_path: &Path) -> Result<CrowdModel> {
    let external = run
        .config
        .scene
        .embeddings
        .as_ref()
        .map(|p| resolve(config_path, p));
    CrowdModel::build(
        &run.config.model,
        &run.scene,
        run.config.seed,
        external.as_deref(),
    )
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let run = load_run(&args.config, &args.set, args.seed)?;
    let model = build_model(&run, &args.config)?;
    std::fs::create_dir_all(&args.out)?;
    let output = train(
        &run.episode,
        &run.scene,
        &model,
        &run.config,
        Some(&args.out),
        args.resume.as_deref(),
    )?;
    if let Some(last) = output.log.last() {
        println!(
            "trained {} epochs; loss {:.6}, val_mae {:.6}",
            last.epoch, last.loss, last.val_mae
        );
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let run = load_run(&args.config, &args.set, args.seed)?;
    let model = build_model(&run, &args.config)?;
    model.load(&args.checkpoint)?;
    let options = SimOptions::from_config(&run.config, &run.episode)?;
    let sim = simulate(&run.episode, &run.scene, &model, &run.config, options)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_trajectories(&args.out, &sim)?;
    println!(
        "simulated {} frames from frame {} into {}",
        options.frames,
        options.start_frame,
        args.out.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let config = match &args.config {
        Some(path) => load_run_config(path, &args.set, None)?,
        None => RunConfig::parse_with_overrides("", &args.set)?,
    };
    let pred = load_trajectories(&args.pred, config.data.frame_interval)?;
    let gt = load_trajectories(&args.gt, config.data.frame_interval)?;
    let report = evaluate(&pred, &gt, &config.metrics)?;
    write_report(&args.out, &report)?;
    println!("{}", report.csv_row());
    Ok(())
}

fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| Error::Metric(format!("report serialization: {e}")))?;
    std::fs::write(path, json + "\n")?;
    Ok(())
}

fn cmd_gen_scenario(args: &GenScenarioArgs) -> Result<()> {
    let spec = ScenarioSpec {
        template: Template::parse(&args.template)?,
        agents: args.agents,
        frames: args.frames,
        noise: args.noise,
        seed: args.seed,
    };
    let generated = scenario::generate(&spec)?;
    scenario::write_to_dir(&args.out, &generated)?;
    println!(
        "wrote {} agents x {} frames ({}) to {}",
        args.agents,
        args.frames,
        spec.template.name(),
        args.out.display()
    );
    Ok(())
}

// ---- ablation grid ----

/// A single on/off (or variant) axis of the ablation grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Toggle {
    pub name: &'static str,
    pub values: Vec<&'static str>,
}

/// Expand a `--grid` spec into toggle axes. Groups `env` and `igi` expand to
/// their members; row count is the product of axis cardinalities.
pub fn parse_grid(spec: &str) -> Result<Vec<Toggle>> {
    let mut axes = Vec::new();
    let mut push_unique = |t: Toggle| {
        if !axes.iter().any(|a: &Toggle| a.name == t.name) {
            axes.push(t);
        }
    };
    for raw in spec.split(',') {
        let name = raw.trim();
        if name.is_empty() {
            continue;
        }
        match name {
            "env" => {
                for n in ["env.obstacles", "env.oois", "env.lighting"] {
                    push_unique(on_off(n));
                }
            }
            "igi" => {
                for n in ["igi.r", "igi.sim1", "igi.sim2", "igi.sim3"] {
                    push_unique(on_off(n));
                }
            }
            "env.obstacles" | "env.oois" | "env.lighting" | "igi.r" | "igi.sim1" | "igi.sim2"
            | "igi.sim3" | "repulsion" => push_unique(on_off(name_static(name))),
            "channel" => push_unique(Toggle {
                name: "channel",
                values: vec!["lighting", "density"],
            }),
            other => {
                return Err(Error::invalid(format!(
                    "unknown grid toggle `{other}`"
                )))
            }
        }
    }
    if axes.is_empty() {
        return Err(Error::invalid("grid selects no toggles"));
    }
    Ok(axes)
}

fn name_static(name: &str) -> &'static str {
    match name {
        "env.obstacles" => "env.obstacles",
        "env.oois" => "env.oois",
        "env.lighting" => "env.lighting",
        "igi.r" => "igi.r",
        "igi.sim1" => "igi.sim1",
        "igi.sim2" => "igi.sim2",
        "igi.sim3" => "igi.sim3",
        "repulsion" => "repulsion",
        _ => unreachable!("validated by caller"),
    }
}

fn on_off(name: &'static str) -> Toggle {
    Toggle {
        name,
        values: vec!["on", "off"],
    }
}

/// All grid rows in lexicographic axis order.
pub fn grid_rows(axes: &[Toggle]) -> Vec<Vec<(&'static str, &'static str)>> {
    let mut rows: Vec<Vec<(&'static str, &'static str)>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(rows.len() * axis.values.len());
        for row in &rows {
            for value in &axis.values {
                let mut r = row.clone();
                r.push((axis.name, value));
                next.push(r);
            }
        }
        rows = next;
    }
    rows
}

/// Apply one grid row to a configuration.
pub fn apply_row(config: &mut RunConfig, row: &[(&str, &str)]) {
    for (name, value) in row {
        let on = *value == "on";
        match *name {
            "env.obstacles" => config.model.env.obstacles = on,
            "env.oois" => config.model.env.oois = on,
            "env.lighting" => {
                if !on {
                    config.model.env.channel = "none".into();
                }
            }
            "igi.r" => config.model.igi.use_relative_motion = on,
            "igi.sim1" => config.model.igi.use_sim1 = on,
            "igi.sim2" => config.model.igi.use_sim2 = on,
            "igi.sim3" => config.model.igi.use_sim3 = on,
            "repulsion" => config.physics.repulsion.enabled = on,
            "channel" => config.model.env.channel = (*value).into(),
            _ => unreachable!("rows come from parse_grid"),
        }
    }
}

fn row_slug(row: &[(&str, &str)]) -> String {
    row.iter()
        .map(|(name, value)| format!("{}-{}", name.replace('.', "_"), value))
        .collect::<Vec<_>>()
        .join("_")
}

/// Worker-pool size: `CROWDFLOW_THREADS` when set, otherwise the machine's
/// available parallelism.
pub fn thread_cap() -> usize {
    std::env::var("CROWDFLOW_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let axes = parse_grid(&args.grid)?;
    let rows = grid_rows(&axes);
    let base = load_run(&args.config, &args.set, args.seed)?;
    std::fs::create_dir_all(&args.out)?;

    // Each row is independent: train (or reuse its checkpoint), roll out the
    // validation span, and score it. Rows run on a bounded worker pool and
    // results are emitted in row order.
    let mut results: Vec<Option<(String, MetricReport)>> = Vec::new();
    results.resize_with(rows.len(), || None);
    let cap = thread_cap().max(1);
    let mut next = 0usize;
    while next < rows.len() {
        let chunk_end = (next + cap).min(rows.len());
        std::thread::scope(|scope| -> Result<()> {
            let mut handles = Vec::new();
            for index in next..chunk_end {
                let row = rows[index].clone();
                let base = &base;
                let out = args.out.clone();
                let config_path = args.config.clone();
                handles.push((index, scope.spawn(move || -> Result<(String, MetricReport)> {
                    ablate_row(base, &config_path, &out, &row)
                })));
            }
            for (index, handle) in handles {
                let value = handle
                    .join()
                    .map_err(|_| Error::Training("ablation worker panicked".into()))??;
                results[index] = Some(value);
            }
            Ok(())
        })?;
        next = chunk_end;
    }

    let mut csv = String::from("combo,mae,ot,fde,mmd,dtw,col\n");
    for value in results.into_iter().flatten() {
        let (slug, report) = value;
        csv.push_str(&format!("{slug},{}\n", report.csv_row()));
    }
    let report_path = args.out.join("report.csv");
    std::fs::write(&report_path, &csv)?;
    print!("{csv}");
    Ok(())
}

fn ablate_row(
    base: &LoadedRun,
    config_path: &Path,
    out: &Path,
    row: &[(&'static str, &'static str)],
) -> Result<(String, MetricReport)> {
    let mut config = base.config.clone();
    apply_row(&mut config, row);
    let slug = row_slug(row);
    let run = LoadedRun {
        config,
        scene: base.scene.clone(),
        episode: base.episode.clone(),
    };
    let model = build_model(&run, config_path)?;
    let ckpt = out.join(format!("{slug}.esdf"));
    if ckpt.exists() {
        model.load(&ckpt)?;
    } else {
        train(&run.episode, &run.scene, &model, &run.config, None, None)?;
        model.save(&ckpt)?;
    }
    // Score the validation span with a closed-loop rollout.
    let val_start = crate::training::validation_start(&run.episode, &run.config);
    let mut sim_config = run.config.clone();
    sim_config.simulate.start_frame = Some(val_start);
    sim_config.simulate.frames = None;
    let options = SimOptions::from_config(&sim_config, &run.episode)?;
    let sim = simulate(&run.episode, &run.scene, &model, &sim_config, options)?;
    let report = evaluate(&sim, &run.episode, &run.config.metrics)?;
    Ok((slug, report))
}
