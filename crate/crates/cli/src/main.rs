//! Command-line front end for the decoupled-policy training laboratory.
//!
//! Subcommands:
//!   * `run` — train from a TOML experiment config and write metrics,
//!     checkpoints, and a manifest into an output directory.
//!   * `verify` — run the built-in self-check suites (occupancy bijection,
//!     gradient fidelity, invariance and performance-bound checks) and
//!     report one pass/fail line per check.
//!   * `plot` — render SVG plots plus CSV data tables from run artifacts.
//!   * `inspect-checkpoint` — print a checkpoint's metadata and sections.
//!
//! Exit codes: 0 success, 1 failure (training error, failed verification,
//! malformed artifact), 2 usage error (missing config file, unknown suite).

mod plots;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use depo_core::approx::Checkpoint;
use depo_core::trainer::{
    config_hash, cotrain_run, rl_mode_run, run_algorithm1, transfer_run, ExperimentConfig,
    RewardSource, RunArtifacts,
};
use depo_core::verify::{run_suite, SUITE_NAMES};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "depo",
    version,
    about = "Train, verify, and visualize decoupled state-planning policies"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a TOML experiment config and write artifacts.
    Run {
        /// Path to the experiment configuration (TOML).
        config: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: runs/<config-stem>-seed<seed>).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run built-in self-check suites.
    Verify {
        /// Suite name, or "all".
        #[arg(long, default_value = "all")]
        suite: String,
    },
    /// Render a plot (SVG + CSV data table) from run artifacts.
    Plot {
        /// Inputs: metrics CSVs for `curves`; one checkpoint for
        /// `heatmap`/`rollout`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        kind: PlotKind,
        /// Output SVG path; the data table lands next to it as `.csv`.
        #[arg(long)]
        out: PathBuf,
        /// Metrics column to aggregate (curves).
        #[arg(long, default_value = "success_rate")]
        metric: String,
        /// Rollout length in steps (rollout).
        #[arg(long, default_value_t = 20)]
        steps: usize,
        /// Experiment config naming the environment (rollout).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the rollout start state (rollout).
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print a checkpoint's metadata and parameter sections.
    InspectCheckpoint {
        path: PathBuf,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum PlotKind {
    /// Mean +/- std of one metrics column across runs.
    Curves,
    /// Planner argmax predictions on the 6x6 grid.
    Heatmap,
    /// Imagined planner trace vs. realized environment trace.
    Rollout,
}

/// Everything needed to reproduce and locate a run's outputs.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config_path: String,
    /// SHA-256 of the config file exactly as read from disk.
    config_sha256: String,
    seed: u64,
    out_dir: String,
    timestamp_unix: u64,
    artifacts: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, seed, out } => cmd_run(&config, seed, out),
        Command::Verify { suite } => cmd_verify(&suite),
        Command::Plot { inputs, kind, out, metric, steps, config, seed } => {
            cmd_plot(&inputs, kind, &out, &metric, steps, config.as_deref(), seed)
        }
        Command::InspectCheckpoint { path } => cmd_inspect(&path),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

/// Turns an environment id into a filename fragment.
fn sanitize(id: &str) -> String {
    id.chars().map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '-' }).collect()
}

fn cmd_run(config_path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<ExitCode> {
    if !config_path.is_file() {
        eprintln!("config not found: {}", config_path.display());
        return Ok(ExitCode::from(2));
    }
    let raw = fs::read(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let text = String::from_utf8(raw.clone())
        .with_context(|| format!("{} is not valid UTF-8", config_path.display()))?;
    let mut config = ExperimentConfig::from_toml(&text)
        .with_context(|| format!("parsing {}", config_path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate().context("invalid configuration")?;

    let stem = config_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let out_dir = out.unwrap_or_else(|| {
        PathBuf::from("runs").join(format!("{stem}-seed{}", config.seed))
    });
    fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;

    let agents: Vec<RunArtifacts> = if let Some(transfer) = &config.transfer {
        let ck_path = Path::new(&transfer.planner_checkpoint);
        let bytes = fs::read(ck_path)
            .with_context(|| format!("reading planner checkpoint {}", ck_path.display()))?;
        let cp = Checkpoint::from_bytes(&bytes)
            .with_context(|| format!("parsing checkpoint {}", ck_path.display()))?;
        let planner = cp.section("planner").with_context(|| {
            format!("checkpoint {} has no 'planner' section", ck_path.display())
        })?;
        vec![transfer_run(planner, &config)?]
    } else if !config.cotrain.is_empty() {
        cotrain_run(&config)?
    } else if config.reward_source == RewardSource::Environment {
        vec![rl_mode_run(&config)?]
    } else {
        vec![run_algorithm1(&config)?]
    };

    let mut artifacts = Vec::new();
    let multi = agents.len() > 1;
    for (i, agent) in agents.iter().enumerate() {
        let tag = if multi {
            format!("_agent{i}_{}", sanitize(&agent.metrics.env_id))
        } else {
            String::new()
        };
        let metrics_name = format!("metrics{tag}.csv");
        fs::write(out_dir.join(&metrics_name), agent.metrics.to_csv())
            .with_context(|| format!("writing {metrics_name}"))?;
        artifacts.push(metrics_name);

        let meta = format!(
            "env={} variant={} seed={}",
            agent.metrics.env_id, agent.metrics.variant, config.seed
        );
        let ck_name = format!("checkpoint{tag}.ckpt");
        fs::write(out_dir.join(&ck_name), agent.policy.checkpoint(&meta).to_bytes())
            .with_context(|| format!("writing {ck_name}"))?;
        artifacts.push(ck_name);
    }

    let manifest = RunManifest {
        command: std::env::args().collect::<Vec<_>>().join(" "),
        config_path: config_path.display().to_string(),
        config_sha256: config_hash(&raw),
        seed: config.seed,
        out_dir: out_dir.display().to_string(),
        timestamp_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        artifacts: artifacts.clone(),
    };
    fs::write(
        out_dir.join("manifest.toml"),
        toml::to_string(&manifest).context("serializing manifest")?,
    )
    .context("writing manifest.toml")?;

    for name in &artifacts {
        println!("wrote {}", out_dir.join(name).display());
    }
    println!("wrote {}", out_dir.join("manifest.toml").display());
    for agent in &agents {
        if let Some(last) = agent.metrics.rows.last() {
            println!(
                "{}: final success_rate={:.3} mean_return={:.3} after {} env steps",
                agent.metrics.env_id, last.success_rate, last.mean_return, last.env_steps
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

fn cmd_verify(suite: &str) -> Result<ExitCode> {
    let names: Vec<&str> = if suite == "all" {
        SUITE_NAMES.to_vec()
    } else if SUITE_NAMES.contains(&suite) {
        vec![suite]
    } else {
        eprintln!(
            "unknown suite '{suite}'; available: {}, all",
            SUITE_NAMES.join(", ")
        );
        return Ok(ExitCode::from(2));
    };

    let mut all_pass = true;
    for name in names {
        let report = run_suite(name).expect("suite names were validated above");
        print!("{}", report.render());
        all_pass &= report.pass();
    }
    Ok(if all_pass { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

// ---------------------------------------------------------------------------
// plot
// ---------------------------------------------------------------------------

fn cmd_plot(
    inputs: &[PathBuf],
    kind: PlotKind,
    out: &Path,
    metric: &str,
    steps: usize,
    config: Option<&Path>,
    seed: u64,
) -> Result<ExitCode> {
    let written = match kind {
        PlotKind::Curves => plots::curves(inputs, metric, out)?,
        PlotKind::Heatmap => {
            if inputs.len() != 1 {
                bail!("heatmap takes exactly one checkpoint input, got {}", inputs.len());
            }
            plots::heatmap(&inputs[0], out)?
        }
        PlotKind::Rollout => {
            if inputs.len() != 1 {
                bail!("rollout takes exactly one checkpoint input, got {}", inputs.len());
            }
            let config_path =
                config.context("rollout needs --config to name the environment")?;
            let text = fs::read_to_string(config_path)
                .with_context(|| format!("reading {}", config_path.display()))?;
            let config = ExperimentConfig::from_toml(&text)
                .with_context(|| format!("parsing {}", config_path.display()))?;
            plots::rollout(&inputs[0], &config, seed, steps, out)?
        }
    };
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// inspect-checkpoint
// ---------------------------------------------------------------------------

fn cmd_inspect(path: &Path) -> Result<ExitCode> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let cp = Checkpoint::from_bytes(&bytes)
        .with_context(|| format!("parsing checkpoint {}", path.display()))?;
    println!("meta: {}", cp.meta);
    println!("sections: {}", cp.sections.len());
    for (name, params) in &cp.sections {
        let v = &params.values;
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n.max(1) as f64;
        let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        println!("  {name:<10} len={n:>7}  mean={mean:>+12.4e}  min={min:>+12.4e}  max={max:>+12.4e}");
        for slice in params.layout.slices() {
            println!("    {:<24} [{:>7}..{:>7}]", slice.name, slice.offset, slice.offset + slice.len);
        }
    }
    Ok(ExitCode::SUCCESS)
}
