//! Command-line front end: run | sweep | pulses | validate.
//!
//! Exit codes: 0 success, 2 config error, 3 numerical-tolerance failure,
//! 4 io error.

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use jc_sta::config;
use jc_sta::error::JcError;
use jc_sta::runner;

#[derive(Parser)]
#[command(name = "jc-sta", version, about = "STA state engineering in the Jaynes-Cummings model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON config file.
    #[arg(long)]
    config: Option<String>,
    /// Named preset (fig2b, fig2d, fig3, figS5, figS6a, figS6b).
    #[arg(long)]
    preset: Option<String>,
    /// Dotted-path overrides, e.g. --set base_protocol.tau=8.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Output directory override.
    #[arg(long)]
    output: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(ConfigArgs),
    /// Map one experiment over a list of values for a config field.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dotted config path to vary.
        #[arg(long)]
        param: String,
        /// Comma-separated values (JSON scalars).
        #[arg(long)]
        values: String,
    },
    /// Export the drive waveform table (t, omega_q, lambda, theta, ...).
    Pulses {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Rows in the exported table.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Parse and validate a config, echoing the resolved document.
    Validate(ConfigArgs),
}

fn collect_sets(args: &ConfigArgs) -> Result<Vec<(String, String)>, JcError> {
    let mut out = Vec::new();
    for s in &args.sets {
        let (k, v) = s.split_once('=').ok_or_else(|| {
            JcError::config("--set", format!("expected KEY=VALUE, got `{s}`"))
        })?;
        out.push((k.to_string(), v.to_string()));
    }
    if let Some(dir) = &args.output {
        out.push(("output_dir".to_string(), format!("\"{dir}\"")));
    }
    Ok(out)
}

fn resolve_value(args: &ConfigArgs) -> Result<Value, JcError> {
    let file = match &args.config {
        Some(path) => Some(config::load_file(path)?),
        None => None,
    };
    let sets = collect_sets(args)?;
    let cfg = config::resolve(args.preset.as_deref(), file, &sets)?;
    Ok(serde_json::to_value(&cfg).expect("config serializes"))
}

fn init_workers(cfg_workers: Option<usize>) {
    let n = std::env::var("JC_STA_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .or(cfg_workers);
    if let Some(n) = n {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn main() {
    let cli = Cli::parse();
    let started = std::time::Instant::now();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    eprintln!("elapsed: {:.2}s", started.elapsed().as_secs_f64());
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), JcError> {
    match cli.command {
        Command::Run(args) => {
            let value = resolve_value(&args)?;
            let cfg: config::ExperimentConfig =
                serde_json::from_value(value).expect("validated config");
            init_workers(cfg.workers);
            let out = runner::run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.summary).unwrap());
            Ok(())
        }
        Command::Sweep { cfg, param, values } => {
            let value = resolve_value(&cfg)?;
            let parsed: Result<Vec<Value>, _> = values
                .split(',')
                .map(|s| serde_json::from_str::<Value>(s.trim()))
                .collect();
            let vals = parsed.map_err(|e| JcError::config("--values", e.to_string()))?;
            let cfg_typed: config::ExperimentConfig =
                serde_json::from_value(value.clone()).expect("validated config");
            init_workers(cfg_typed.workers);
            let out = runner::sweep(&value, &param, &vals)?;
            let rows = out["rows"].as_array().unwrap();
            let failed = rows.iter().filter(|r| r.get("error").is_some()).count();
            println!("swept {} values over {param} ({failed} failed)", rows.len());
            Ok(())
        }
        Command::Pulses { cfg, samples } => {
            let mut args = cfg;
            args.sets.push("experiment=\"pulse_export\"".to_string());
            if let Some(n) = samples {
                args.sets.push(format!("pulse_samples={n}"));
            }
            let value = resolve_value(&args)?;
            let cfg: config::ExperimentConfig =
                serde_json::from_value(value).expect("validated config");
            let out = runner::run_experiment(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&out.summary).unwrap());
            Ok(())
        }
        Command::Validate(args) => {
            let value = resolve_value(&args)?;
            println!("{}", serde_json::to_string_pretty(&value).unwrap());
            Ok(())
        }
    }
}
