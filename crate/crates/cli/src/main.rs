use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dida_core::harness::{self, ExperimentConfig, VerifyOptions, PRESETS};
use dida_core::Error;

#[derive(Parser)]
#[command(name = "dida", version, about = "Delayed-RL experiments and bound verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write per-seed and aggregate learning curves.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        /// Recompute the aggregate from the per-seed files and fail on mismatch.
        #[arg(long)]
        audit: bool,
    },
    /// Run a config at several delays with all other settings fixed.
    SweepDelay {
        #[command(flatten)]
        source: ConfigSource,
        /// Comma-separated delays, e.g. 1,2,5,10.
        #[arg(long, value_delimiter = ',', required = true)]
        delays: Vec<f64>,
    },
    /// Run one verification suite and write its records as JSON lines.
    Verify {
        /// One of lemma1, thm2, cor3, cor4, thm5, appendixA, fractional.
        suite: String,
        #[arg(long, default_value = "reports")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Monte Carlo steps per Gaussian-walk estimate.
        #[arg(long)]
        mc_steps: Option<usize>,
        /// Skip training a DIDA policy for the lower-bound suite.
        #[arg(long)]
        no_dida: bool,
    },
    /// List the shipped presets, or print one as TOML.
    ListPresets {
        #[arg(long)]
        show: Option<String>,
    },
}

#[derive(Args)]
struct ConfigSource {
    /// TOML config file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory; overrides `experiment.output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds; overrides `experiment.seeds`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Overrides `experiment.delay`.
    #[arg(long)]
    delay: Option<f64>,
}

impl ConfigSource {
    fn load(&self) -> anyhow::Result<(ExperimentConfig, PathBuf)> {
        let (mut config, default_out) = match (&self.config, &self.preset) {
            (Some(path), _) => {
                let config = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                (config, PathBuf::from("runs").join(stem))
            }
            (None, Some(name)) => (harness::preset(name)?, PathBuf::from("runs").join(name)),
            (None, None) => bail!("give --config or --preset"),
        };
        if let Some(seeds) = &self.seeds {
            config.experiment.seeds = seeds.clone();
        }
        if let Some(delay) = self.delay {
            config.experiment.delay = Some(delay);
        }
        config.validate()?;
        let out = self
            .out
            .clone()
            .or_else(|| config.experiment.output_dir.clone())
            .unwrap_or(default_out);
        Ok((config, out))
    }
}

fn execute(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::Run { source, audit } => {
            let (config, out) = source.load()?;
            let artifacts = harness::run(&config, &out)?;
            if audit {
                harness::audit(&out, &config)?;
                println!("audit: aggregate matches {} per-seed files", artifacts.seed_files.len());
            }
            if let Some(last) = artifacts.aggregate.last() {
                println!(
                    "iteration {}  env_steps {}  return {:.2} +- {:.2} over {} seeds  (config {})",
                    last.iteration, last.env_steps, last.mean_return, last.std_return, last.n_seeds, last.config_hash
                );
            }
            println!("wrote {}", out.display());
            Ok(true)
        }
        Command::SweepDelay { source, delays } => {
            let (config, out) = source.load()?;
            let rows = harness::sweep_delay(&config, &delays, &out)?;
            println!("{:>8} {:>18} {:>10}", "delay", "mean_final_return", "std");
            for r in &rows {
                println!("{:>8} {:>18.2} {:>10.2}", r.delay, r.mean_final_return, r.std);
            }
            println!("wrote {}", out.join(harness::SWEEP_FILE).display());
            Ok(true)
        }
        Command::Verify {
            suite,
            out,
            seed,
            mc_steps,
            no_dida,
        } => {
            let defaults = VerifyOptions::default();
            let opts = VerifyOptions {
                seed,
                mc_steps: mc_steps.unwrap_or(defaults.mc_steps),
                dida: !no_dida,
                ..defaults
            };
            let report = harness::verify(&suite, &opts)?;
            let path = harness::write_report(&report, &out)?;
            print!("{}", report.summary());
            println!("wrote {}", path.display());
            Ok(report.pass())
        }
        Command::ListPresets { show } => {
            match show {
                Some(name) => {
                    let p = PRESETS
                        .iter()
                        .find(|p| p.name == name)
                        .ok_or_else(|| Error::Usage(format!("unknown preset `{name}`")))?;
                    print!("{}", p.toml);
                }
                None => {
                    for p in PRESETS {
                        println!("{:<26} {}", p.name, p.description);
                    }
                }
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(
                e.downcast_ref::<Error>(),
                Some(Error::Usage(_) | Error::Config { .. } | Error::Parse(_))
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
