use clap::{Args, Parser, Subcommand};
use dyncap::config::{self, ConfigError, ExperimentConfig};
use dyncap::data::Regime;
use dyncap::harness::{self, HarnessError};
use dyncap::schedule::SchedulePreset;
use dyncap::tensor::OpKind;
use std::path::PathBuf;
use std::process::ExitCode;

/// GAN lab with a discriminator whose capacity changes during training.
///
/// Any config key can also be given as `--key=value`; it overrides the
/// config file.
#[derive(Parser, Debug)]
#[command(name = "dyncap", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Short runs and 8192-sample evaluations.
    #[arg(long)]
    fast: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// fixed-full | fixed-half | dynamic-increase | dynamic-decrease
    #[arg(long)]
    preset: Option<String>,
    /// limited-tiny | limited | sufficient
    #[arg(long)]
    regime: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one configuration.
    Train(Common),
    /// Run presets x regimes x seeds and summarize.
    Grid {
        #[command(flatten)]
        common: Common,
        /// Comma-separated presets (default: all four).
        #[arg(long)]
        presets: Option<String>,
        /// Comma-separated regimes (default: all three).
        #[arg(long)]
        regimes: Option<String>,
        /// Comma-separated seeds (default: 0-4, or 0-1 with --fast).
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Finite-difference check of every primitive and layer kind.
    Gradcheck {
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Active parameter and FLOP accounting against the fixed-full baseline.
    Flops(Common),
}

/// Flags clap owns; every other `--key=value` is a config override.
const CLI_FLAGS: &[&str] = &["config", "seed", "fast", "out", "preset", "regime", "presets", "regimes", "seeds", "fault"];

fn split_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<(String, String)>), ConfigError> {
    let mut keep = Vec::new();
    let mut overrides = Vec::new();
    for arg in args {
        if let Some((name, value)) = arg.strip_prefix("--").and_then(|a| a.split_once('=')) {
            if !CLI_FLAGS.contains(&name) {
                config::check_key(name)?;
                overrides.push((name.to_string(), value.to_string()));
                continue;
            }
        }
        keep.push(arg);
    }
    Ok((keep, overrides))
}

fn flag_pairs(c: &Common) -> Vec<(String, String)> {
    let mut p = Vec::new();
    if let Some(s) = c.seed {
        p.push(("seed".into(), s.to_string()));
    }
    if c.fast {
        p.push(("fast".into(), "true".into()));
    }
    if let Some(o) = &c.out {
        p.push(("out".into(), o.display().to_string()));
    }
    if let Some(v) = &c.preset {
        p.push(("preset".into(), v.clone()));
    }
    if let Some(v) = &c.regime {
        p.push(("regime".into(), v.clone()));
    }
    p
}

fn load(c: &Common, overrides: &[(String, String)]) -> Result<(ExperimentConfig, Option<String>), HarnessError> {
    let mut all = flag_pairs(c);
    all.extend(overrides.iter().cloned());
    Ok(ExperimentConfig::load(c.config.as_deref(), &all)?)
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, HarnessError>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(|s| {
            s.trim().parse().map_err(|e: T::Err| {
                HarnessError::Config(ConfigError::BadValue {
                    key: key.into(),
                    value: s.into(),
                    msg: e.to_string(),
                })
            })
        })
        .collect()
}

fn run(command: Command, overrides: Vec<(String, String)>) -> Result<(), HarnessError> {
    match command {
        Command::Train(common) => {
            let (cfg, text) = load(&common, &overrides)?;
            let s = harness::cmd_train(&cfg, text.as_deref())?;
            print!("{}", s.to_text());
            println!("artifacts in {}", cfg.run_dir().display());
        }
        Command::Grid {
            common,
            presets,
            regimes,
            seeds,
        } => {
            let mut base = match &common.config {
                Some(p) => {
                    let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                        path: p.clone(),
                        source,
                    })?;
                    config::parse_pairs(&text)?
                }
                None => Vec::new(),
            };
            base.extend(flag_pairs(&Common {
                preset: None,
                regime: None,
                seed: None,
                out: None,
                ..common
            }));
            base.extend(overrides);
            let presets: Vec<SchedulePreset> = match presets {
                Some(v) => parse_list("presets", &v)?,
                None => SchedulePreset::ALL.to_vec(),
            };
            let regimes: Vec<Regime> = match regimes {
                Some(v) => parse_list("regimes", &v)?,
                None => Regime::ALL.to_vec(),
            };
            let seeds: Vec<u64> = match seeds {
                Some(v) => parse_list("seeds", &v)?,
                None if common.fast => vec![0, 1],
                None => (0..5).collect(),
            };
            let out = common.out.unwrap_or_else(|| PathBuf::from("out"));
            let summary = harness::cmd_grid(&base, &presets, &regimes, &seeds, &out, harness::grid_threads())?;
            print!("{}", summary.to_csv());
            let failed: usize = summary.cells.iter().map(|c| c.failures.len()).sum();
            if failed > 0 {
                eprintln!("{failed} run(s) failed; see {}", out.join("grid_summary.txt").display());
            }
        }
        Command::Gradcheck { fault } => {
            let fault = match fault {
                Some(name) => Some(OpKind::from_name(&name).ok_or_else(|| {
                    HarnessError::Config(ConfigError::BadValue {
                        key: "fault".into(),
                        value: name.clone(),
                        msg: "not an op name".into(),
                    })
                })?),
                None => None,
            };
            let report = harness::cmd_gradcheck(fault)?;
            print!("{}", report.render());
            if !report.passed() {
                let names: Vec<String> = report.failing().iter().map(|g| g.group.clone()).collect();
                return Err(HarnessError::CheckFailed(names.join(", ")));
            }
        }
        Command::Flops(common) => {
            let (cfg, _) = load(&common, &overrides)?;
            print!("{}", harness::cmd_flops(&cfg)?.render());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let (args, overrides) = match split_overrides(std::env::args().collect()) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let cli = Cli::parse_from(args);
    match run(cli.command, overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
