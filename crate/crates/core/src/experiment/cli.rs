//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for usage and validation errors, 2 for
//! failures while running (I/O, infeasible calibration, ...).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::Value;

use super::config::{self, ConfigError, ScenarioConfig, Violation};
use super::{emit_csv, emit_summary_json, run_experiment, ExperimentError, RunSummary};
use crate::mac_sim::CollisionModel;
use crate::traffic;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable holding the default output directory.
pub const OUT_ENV: &str = "ALOHA_BANDIT_OUT";

#[derive(Debug, Parser)]
#[command(name = "aloha-bandit", version, about = "Bandit channel selection over ALOHA channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Output directory
    #[arg(long, env = OUT_ENV, default_value = "./results")]
    out: PathBuf,
    /// Overrides `master_seed`
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `repetitions`
    #[arg(long)]
    reps: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run all repetitions and write `<name>_metrics.csv` and `<name>_summary.json`
    Run {
        config: PathBuf,
        #[command(flatten)]
        args: RunArgs,
    },
    /// Check a scenario file and report every problem
    Validate { config: PathBuf },
    /// Print the factor that scales the Poisson rates to a target uniform success
    Calibrate {
        config: PathBuf,
        #[arg(long)]
        target: f64,
    },
    /// One run per value of a config field, with suffixed output names
    Sweep {
        config: PathBuf,
        /// Dotted field path, e.g. `timing.ack_delay` or `devices.1.ucb_alpha`
        #[arg(long)]
        param: String,
        /// Comma-separated values, each parsed as JSON (bare words as strings)
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[command(flatten)]
        args: RunArgs,
    },
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run { config, args } => cmd_run(&config, &args),
        Command::Validate { config } => cmd_validate(&config),
        Command::Calibrate { config, target } => cmd_calibrate(&config, target),
        Command::Sweep { config, param, values, args } => cmd_sweep(&config, &param, &values, &args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| {
        ConfigError::Io { path: path.display().to_string(), source }.into()
    })
}

fn apply_overrides(mut cfg: ScenarioConfig, args: &RunArgs) -> ScenarioConfig {
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = args.reps {
        cfg.repetitions = reps;
    }
    cfg
}

fn run_and_write(cfg: &ScenarioConfig, out: &Path) -> Result<(), ExperimentError> {
    cfg.validate()?;
    let result = run_experiment(cfg)?;
    std::fs::create_dir_all(out).map_err(|source| super::OutputError { path: out.to_path_buf(), source })?;
    let csv = out.join(format!("{}_metrics.csv", cfg.name));
    let json = out.join(format!("{}_summary.json", cfg.name));
    emit_csv(&result.rows, &csv)?;
    emit_summary_json(&result.summary, &json)?;
    print_summary(&result.summary);
    println!("wrote {}", csv.display());
    println!("wrote {}", json.display());
    Ok(())
}

fn print_summary(s: &RunSummary) {
    println!(
        "{}: {} repetition(s) x {} message(s), best channel {} (mu {:?})",
        s.config.name,
        s.config.repetitions,
        s.config.horizon,
        s.channels.best_channel,
        s.channels.mu_source
    );
    println!("{:<18} {:>9} {:>9} {:>12} {:>10}", "policy", "success", "std", "best (last¼)", "regret");
    for p in &s.policies {
        println!(
            "{:<18} {:>9.4} {:>9.4} {:>12.4} {:>10.2}",
            p.policy.label(),
            p.final_success_rate,
            p.final_success_std,
            p.best_channel_fraction_final_quarter,
            p.final_regret
        );
    }
}

fn cmd_run(path: &Path, args: &RunArgs) -> Result<(), ExperimentError> {
    let cfg = apply_overrides(config::parse_config(&read(path)?, &path.display().to_string())?, args);
    run_and_write(&cfg, &args.out)
}

fn cmd_validate(path: &Path) -> Result<(), ExperimentError> {
    let cfg = config::load_config(path)?;
    // also catches infeasible calibration targets
    cfg.resolve()?;
    println!("{}: ok", path.display());
    Ok(())
}

fn cmd_calibrate(path: &Path, target: f64) -> Result<(), ExperimentError> {
    let cfg = config::load_config(path)?;
    let mut v = Vec::new();
    if cfg.collision_mode != CollisionModel::PureAloha {
        v.push(Violation { field: "collision_mode".into(), message: "calibration needs pure_aloha".into() });
    }
    if !(target > 0.0 && target < 1.0) {
        v.push(Violation { field: "--target".into(), message: format!("{target} must lie in (0, 1)") });
    }
    if !v.is_empty() {
        return Err(ConfigError::Validation(v).into());
    }
    let base = cfg.base_poisson().expect("validated pure_aloha config");
    let exposure = cfg.timing.exposure();
    let s = traffic::calibrate_scenario(&base, &exposure, target)?;
    let achieved = traffic::uniform_success(&base.scaled(s), &exposure);
    println!("scale {s:.12}");
    println!("uniform_success {achieved:.9}");
    Ok(())
}

/// Sets a dotted path (object keys or array indices) inside `doc`.
fn set_path(doc: &mut Value, path: &str, value: Value) -> Result<(), String> {
    let mut cur = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| format!("`{part}` is not an array index"))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| format!("index {idx} out of range ({len})"))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(format!("`{part}` does not name a container")),
        };
    }
    Err("empty parameter path".into())
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '-' }).collect()
}

fn cmd_sweep(path: &Path, param: &str, values: &[String], args: &RunArgs) -> Result<(), ExperimentError> {
    let text = read(path)?;
    let origin = path.display().to_string();
    let base: Value = serde_json::from_str(&text).map_err(|e| ConfigError::Syntax {
        path: origin.clone(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut configs = Vec::with_capacity(values.len());
    for raw in values {
        let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
        let mut doc = base.clone();
        set_path(&mut doc, param, value).map_err(|message| {
            ConfigError::Validation(vec![Violation { field: param.to_string(), message }])
        })?;
        let mut cfg = config::parse_config(&doc.to_string(), &format!("{origin} [{param}={raw}]"))?;
        cfg.name = format!("{}_{}-{}", cfg.name, sanitize(param), sanitize(raw.trim()));
        let cfg = apply_overrides(cfg, args);
        cfg.validate()?;
        configs.push(cfg);
    }
    for cfg in &configs {
        run_and_write(cfg, &args.out)?;
    }
    Ok(())
}
