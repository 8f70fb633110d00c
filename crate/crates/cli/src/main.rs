mod commands;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use commands::{
    CapacityConfig, GreenConfig, MomentsConfig, Outcome, RateConfig, SimulateConfig, TrailCheckConfig,
};
use ilt_core::ExperimentConfig;

#[derive(Parser)]
#[command(name = "ilt", version, about = "Intersection local times of transient lattice walks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the subcommand, or a manifest from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Solve the Green table on a box.
    Green,
    /// Capacity of a finite set.
    Capacity,
    /// Moments and tail of the interpolated intersection functional.
    Moments,
    /// Exhaustive and sampled trail certificate checks.
    TrailCheck,
    /// Minimize the rate functional on a set.
    Rate,
    /// Simulate local-time fields.
    Simulate,
    /// Run a configured experiment.
    Experiment,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Green => "green",
            Command::Capacity => "capacity",
            Command::Moments => "moments",
            Command::TrailCheck => "trail-check",
            Command::Rate => "rate",
            Command::Simulate => "simulate",
            Command::Experiment => "experiment",
        }
    }

    fn takes_seed(self) -> bool {
        matches!(
            self,
            Command::Capacity | Command::Moments | Command::Simulate | Command::Experiment
        )
    }
}

enum Failure {
    Config(String),
    Numeric(String),
}

impl Failure {
    fn exit(self) -> ExitCode {
        match self {
            Failure::Config(m) => {
                eprintln!("config error: {m}");
                ExitCode::from(2)
            }
            Failure::Numeric(m) => {
                eprintln!("error: {m}");
                ExitCode::from(3)
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => f.exit(),
    }
}

fn load_config(cli: &Cli) -> Result<Value, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config <path.json> is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config file {}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{}: invalid JSON: {e}", path.display())))?;
    // a manifest carries the resolved config of the run it describes
    if value.get("outputs").is_some() {
        if let Some(cfg) = value.get("config").cloned() {
            let command = value.get("command").and_then(Value::as_str).unwrap_or_default();
            if command != cli.command.name() {
                return Err(Failure::Config(format!(
                    "{} is a manifest for `{command}`, not `{}`",
                    path.display(),
                    cli.command.name()
                )));
            }
            value = cfg;
        }
    }
    if let Some(seed) = cli.seed {
        if !cli.command.takes_seed() {
            return Err(Failure::Config(format!("`{}` takes no seed", cli.command.name())));
        }
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Failure::Config("config must be a JSON object".into()))?;
        obj.insert("seed".into(), json!(seed));
    }
    Ok(value)
}

/// Parses and validates a config, then runs it.
fn prepare<T, V, R>(value: Value, validate: V, run: R) -> Result<(Value, Box<dyn FnOnce() -> Outcome + Send>), Failure>
where
    T: DeserializeOwned + Serialize + Send + 'static,
    V: Fn(&T) -> ilt_core::Result<()>,
    R: Fn(&T) -> Outcome + Send + 'static,
{
    let cfg: T = serde_json::from_value(value).map_err(|e| Failure::Config(e.to_string()))?;
    validate(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    let resolved = serde_json::to_value(&cfg).map_err(|e| Failure::Config(e.to_string()))?;
    Ok((resolved, Box::new(move || run(&cfg))))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let value = load_config(cli)?;
    let (resolved, job) = match cli.command {
        Command::Green => prepare(value, GreenConfig::validate, GreenConfig::run)?,
        Command::Capacity => prepare(value, CapacityConfig::validate, CapacityConfig::run)?,
        Command::Moments => prepare(value, MomentsConfig::validate, MomentsConfig::run)?,
        Command::TrailCheck => prepare(value, TrailCheckConfig::validate, TrailCheckConfig::run)?,
        Command::Rate => prepare(value, RateConfig::validate, RateConfig::run)?,
        Command::Simulate => prepare(value, SimulateConfig::validate, SimulateConfig::run)?,
        Command::Experiment => prepare(value, ExperimentConfig::validate, commands::run_experiment)?,
    };
    if cli.threads == Some(0) {
        return Err(Failure::Config("--threads must be at least 1".into()));
    }
    let manifest_path = cli.out.join("manifest.json");
    if manifest_path.exists() && !cli.force {
        return Err(Failure::Config(format!(
            "{} already holds results; pass --force to overwrite",
            cli.out.display()
        )));
    }

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Failure::Numeric(format!("thread pool: {e}")))?;
    let start = Instant::now();
    let artifacts = pool
        .install(job)
        .map_err(|e| Failure::Numeric(format!("{}: {e}", cli.command.name())))?;
    let wall = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&cli.out)
        .map_err(|e| Failure::Numeric(format!("cannot create {}: {e}", cli.out.display())))?;
    let mut outputs = Vec::with_capacity(artifacts.len());
    for a in &artifacts {
        write(&cli.out.join(&a.name), &a.bytes)?;
        outputs.push(json!({
            "name": a.name,
            "bytes": a.bytes.len(),
            "sha256": hex(&Sha256::digest(&a.bytes)),
        }));
    }
    let manifest = json!({
        "tool": "ilt",
        "version": env!("CARGO_PKG_VERSION"),
        "core_version": ilt_core::VERSION,
        "command": cli.command.name(),
        "config": resolved,
        "threads": pool.current_num_threads(),
        "wall_time_seconds": wall,
        "outputs": outputs,
    });
    let mut bytes = serde_json::to_vec_pretty(&manifest).expect("json values serialize");
    bytes.push(b'\n');
    write(&manifest_path, &bytes)?;
    for a in &artifacts {
        println!("{}", cli.out.join(&a.name).display());
    }
    Ok(())
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::Numeric(format!("cannot write {}: {e}", path.display())))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
