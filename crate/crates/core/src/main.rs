use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use filver::runner::compare::compare;
use filver::runner::config::{resolve, ConfigErrors, Layer, Origin};
use filver::runner::presets::{preset, PRESET_NAMES};
use filver::runner::{self, RunError, RunOptions};

/// Federated incremental learning simulator.
#[derive(Parser)]
#[command(name = "filver", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config, a preset, or a run manifest.
    Run {
        /// Config file (`.toml`) or a previous run's `manifest.json`.
        config: Option<PathBuf>,
        /// Start from a named preset; a config file then overrides it.
        #[arg(long)]
        preset: Option<String>,
        /// Master seed; replaces any seed list.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads for client training.
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Continue the run in this directory from its checkpoint.
        #[arg(long, conflicts_with_all = ["config", "preset", "seed", "out"])]
        resume: Option<PathBuf>,
        /// Stop with a checkpoint once this many rounds have run in total.
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        stop_after: Option<u64>,
    },
    /// Compare the final accuracies of finished runs.
    Compare {
        /// Run directories; the first is the baseline for deltas.
        dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

fn flag_layer(seed: Option<u64>, out: Option<PathBuf>) -> Layer {
    let mut table = toml::Table::new();
    if let Some(s) = seed {
        table.insert("seed".into(), toml::Value::Integer(s as i64));
        table.insert("seeds".into(), toml::Value::Array(Vec::new()));
    }
    if let Some(o) = out {
        table.insert("output".into(), toml::Value::String(o.display().to_string()));
    }
    Layer {
        origin: Origin::Flag,
        table,
    }
}

fn run_command(
    config: Option<PathBuf>,
    preset_name: Option<String>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    opts: RunOptions,
) -> Result<runner::RunOutcome, RunError> {
    let mut layers = Vec::new();
    if let Some(name) = &preset_name {
        let text = preset(name).ok_or_else(|| {
            ConfigErrors::single("", format!("unknown preset {name:?}; available: {}", PRESET_NAMES.join(", ")))
        })?;
        layers.push(Layer::parse(Origin::Preset, &text, name)?);
    }
    match &config {
        Some(path) => layers.push(Layer::from_file(path)?),
        None if preset_name.is_none() => {
            return Err(ConfigErrors::single("", "give a config file, --preset or --resume").into());
        }
        None => {}
    }
    if seed.is_some() && seed.unwrap() > i64::MAX as u64 {
        return Err(ConfigErrors::single("seed", "must fit in a signed 64-bit integer").into());
    }
    layers.push(flag_layer(seed, out));
    let resolved = resolve(&layers)?;
    runner::run(&resolved, &opts)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Presets => {
            for p in PRESET_NAMES {
                println!("{p}");
            }
            ExitCode::SUCCESS
        }
        Command::Compare { dirs, out } => match compare(&dirs) {
            Ok(c) => {
                print!("{}", c.to_pretty());
                if let Some(path) = out {
                    if let Err(e) = std::fs::write(&path, c.to_csv()) {
                        eprintln!("error: {}: {e}", path.display());
                        return ExitCode::from(3);
                    }
                }
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Command::Run {
            config,
            preset,
            seed,
            out,
            threads,
            resume,
            stop_after,
        } => {
            let opts = RunOptions {
                threads,
                stop_after: stop_after.map(|n| n as usize),
            };
            let result = match resume {
                Some(dir) => runner::resume(&dir, &opts),
                None => run_command(config, preset, seed, out, opts),
            };
            match result {
                Ok(outcome) => {
                    for (dir, s) in &outcome.runs {
                        println!("{:<24} avg {:.4}  {}", s.arm, s.average, dir.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprint!("error: {e}");
                    if !e.to_string().ends_with('\n') {
                        eprintln!();
                    }
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
