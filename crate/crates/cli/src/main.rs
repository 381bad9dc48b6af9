use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use vkmeans::bench::data::{self, Dataset};
use vkmeans::bench::experiment::{run_experiment, write_trajectory_csv, ExperimentConfig};
use vkmeans::bench::lloyd::{lloyd_plaintext, TieRule};
use vkmeans::bench::metrics::{cluster_accuracy, normalized_loss};
use vkmeans::bench::network::{estimate_wallclock, profile_by_name, profiles, NetworkConfig};
use vkmeans::protocol::{communication_plan, init_centroids, PartyId, Transcript};

#[derive(Parser)]
#[command(name = "vkmeans", version, about = "Vertically partitioned k-means protocol simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the secure protocol and the plaintext baseline for an experiment.
    Run {
        #[command(flatten)]
        io: ConfigIo,
        /// Also write per-round centroids to trajectory.csv.
        #[arg(long)]
        trajectory: bool,
        /// Also write the first seed's full transcript to transcript.json.
        #[arg(long)]
        transcript: bool,
    },
    /// Generate a labelled synthetic dataset as CSV.
    Gen {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        bound: f64,
        #[arg(long)]
        std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plaintext Lloyd only, with the experiment's data, seeds and rounds.
    Baseline {
        #[command(flatten)]
        io: ConfigIo,
    },
    /// Estimate wall-clock seconds of a transcript on network profiles.
    Estimate {
        /// Transcript JSON as written by `run --transcript`.
        #[arg(long, conflicts_with = "config", required_unless_present = "config")]
        transcript: Option<PathBuf>,
        /// Experiment config; its planned transcript is estimated.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Profile name; repeat for several. Default: all profiles.
        #[arg(long = "network")]
        networks: Vec<String>,
        #[arg(long, default_value_t = 0.0)]
        compute_seconds: f64,
        /// Write the estimates as JSON here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigIo {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ExperimentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    cfg.validate().with_context(|| format!("validating {}", path.display()))?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("creating {}", path.display()))
}

#[derive(Serialize)]
struct BaselineSeed {
    seed: u64,
    loss: f64,
    accuracy: Option<f64>,
    centroids: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct BaselineReport {
    name: String,
    dataset: String,
    n: usize,
    d: usize,
    k: usize,
    rounds: u32,
    seeds: Vec<BaselineSeed>,
    mean_loss: f64,
    mean_accuracy: Option<f64>,
}

fn baseline(cfg: &ExperimentConfig, data: &Dataset, bound: f64) -> Result<BaselineReport> {
    let labels = data.labels.as_deref().filter(|l| l.iter().all(|v| *v < cfg.k));
    let mut seeds = Vec::new();
    for &seed in &cfg.seeds {
        let init = init_centroids(cfg.k, data.d(), bound, seed)?;
        let out = lloyd_plaintext(&data.points, &init, cfg.rounds, TieRule::LowestIndex, seed);
        let centers = out.centroids.centers;
        seeds.push(BaselineSeed {
            seed,
            loss: normalized_loss(&data.points, &centers),
            accuracy: labels.map(|l| cluster_accuracy(&data.points, &centers, Some(l))).transpose()?,
            centroids: centers,
        });
    }
    let count = seeds.len() as f64;
    let mean_accuracy = seeds
        .iter()
        .map(|s| s.accuracy)
        .collect::<Option<Vec<f64>>>()
        .map(|a| a.iter().sum::<f64>() / count);
    Ok(BaselineReport {
        name: cfg.name.clone(),
        dataset: data.name.clone(),
        n: data.n(),
        d: data.d(),
        k: cfg.k,
        rounds: cfg.rounds,
        mean_loss: seeds.iter().map(|s| s.loss).sum::<f64>() / count,
        mean_accuracy,
        seeds,
    })
}

fn planned_transcript(cfg: &ExperimentConfig) -> Result<Transcript> {
    let (data, bound) = cfg.load_dataset()?;
    let split = cfg.party_split(data.d())?;
    let dims: Vec<(PartyId, usize)> = split.iter().enumerate().map(|(i, f)| (i, f.len())).collect();
    let seed = cfg.seeds.first().copied().unwrap_or(0);
    Ok(communication_plan(data.n(), &dims, cfg.model, &cfg.protocol_config(data.n(), bound, seed))?)
}

#[derive(Serialize)]
struct Estimate {
    network: String,
    seconds: f64,
}

fn networks(names: &[String]) -> Result<Vec<NetworkConfig>> {
    if names.is_empty() {
        return Ok(profiles());
    }
    Ok(names.iter().map(|n| profile_by_name(n)).collect::<vkmeans::Result<_>>()?)
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { io, trajectory, transcript } => {
            let cfg = load_config(&io.config)?;
            let report = run_experiment(&cfg)?;
            out_dir(&io.out)?;
            write_json(&io.out.join("report.json"), &report)?;
            if trajectory {
                write_trajectory_csv(&report, io.out.join("trajectory.csv"))?;
            }
            if transcript {
                write_json(&io.out.join("transcript.json"), &report.first_transcript)?;
            }
            println!(
                "{}: secure loss {:.5}, baseline loss {:.5}, {} bytes",
                report.name, report.mean.secure_loss, report.mean.baseline_loss, report.transcript.total_bytes
            );
        }
        Command::Gen { n, k, d, bound, std, seed, out } => {
            let data = data::gen_synthetic(n, k, d, bound, std, seed)?;
            data::write_csv(&data, &out)?;
            println!("wrote {} points to {}", data.n(), out.display());
        }
        Command::Baseline { io } => {
            let cfg = load_config(&io.config)?;
            let (data, bound) = cfg.load_dataset()?;
            if data.n() < cfg.k {
                bail!("k = {} exceeds the {} points", cfg.k, data.n());
            }
            let report = baseline(&cfg, &data, bound)?;
            out_dir(&io.out)?;
            write_json(&io.out.join("report.json"), &report)?;
            println!("{}: baseline loss {:.5}", report.name, report.mean_loss);
        }
        Command::Estimate { transcript, config, networks: names, compute_seconds, out } => {
            if compute_seconds.is_nan() || compute_seconds < 0.0 {
                bail!("--compute-seconds must be non-negative");
            }
            let t = match (transcript, config) {
                (Some(path), _) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
                }
                (None, Some(path)) => planned_transcript(&load_config(&path)?)?,
                (None, None) => bail!("either --transcript or --config is required"),
            };
            let estimates: Vec<Estimate> = networks(&names)?
                .iter()
                .map(|net| Estimate {
                    network: net.name.clone(),
                    seconds: estimate_wallclock(&t, net, compute_seconds),
                })
                .collect();
            match out {
                Some(path) => write_json(&path, &estimates)?,
                None => {
                    for e in &estimates {
                        println!("{:<10} {:>12.3} s", e.network, e.seconds);
                    }
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
