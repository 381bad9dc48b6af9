//! Experiment configuration, execution and reporting.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dp::{Composition, SigmaAssignment};
use crate::engine::SizeModel;
use crate::error::{Error, Result};
use crate::packed::PaddingMode;
use crate::protocol::{
    init_centroids, run_multiparty, CentroidSet, Convergence, DataPartition, DeploymentModel, PartyId,
    PrivacySettings, ProtocolConfig, Transcript, TranscriptSummary,
};

use super::data::{gen_synthetic, load_csv, s1_like, CsvOptions, Dataset};
use super::lloyd::{lloyd_plaintext, TieRule};
use super::metrics::{cluster_accuracy, normalized_loss};
use super::network::{estimate_wallclock, profile_by_name, profiles};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Local CSV. Normalized data is shifted to `[-0.5, 0.5]`.
    Csv {
        path: PathBuf,
        #[serde(default)]
        has_header: bool,
        #[serde(default)]
        label_column: Option<usize>,
        #[serde(default = "yes")]
        normalize: bool,
        /// Required when `normalize` is off; defaults to the largest |value|.
        #[serde(default)]
        bound: Option<f64>,
    },
    Synthetic {
        n: usize,
        /// Blob count; defaults to the experiment's `k`.
        #[serde(default)]
        clusters: Option<usize>,
        d: usize,
        #[serde(default = "one")]
        bound: f64,
        cluster_std: f64,
        #[serde(default)]
        seed: u64,
    },
    S1Like {
        #[serde(default)]
        seed: u64,
    },
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    /// Defaults to `1 / n`.
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub composition: Composition,
    #[serde(default)]
    pub sigma_assignment: SigmaAssignment,
}

/// Optional protocol knobs; unset fields keep library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolOverrides {
    pub slot_count: Option<usize>,
    pub padding: Option<PaddingMode>,
    pub sign_degree: Option<usize>,
    pub tie_margin: Option<f64>,
    pub refinements: Option<u32>,
    pub approx_perturbation: Option<f64>,
    pub bytes_per_slot_per_level: Option<f64>,
    pub convergence: Option<Convergence>,
    pub two_cluster_fast_path: Option<bool>,
    pub computing_party: Option<PartyId>,
    pub key_holder: Option<PartyId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub dataset: DatasetSpec,
    pub k: usize,
    #[serde(default = "default_rounds")]
    pub rounds: u32,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Feature indices per party. Default: two parties splitting the
    /// features in half.
    #[serde(default)]
    pub parties: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub model: DeploymentModel,
    #[serde(default)]
    pub privacy: Option<PrivacyConfig>,
    /// Profile names; empty means all built-in profiles.
    #[serde(default)]
    pub networks: Vec<String>,
    #[serde(default)]
    pub protocol: ProtocolOverrides,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_rounds() -> u32 {
    crate::protocol::DEFAULT_ROUNDS
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn field(name: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("field `{name}`: {msg}"))
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(field("k", format!("{} is below 2", self.k)));
        }
        if self.rounds == 0 {
            return Err(field("rounds", "must be at least 1"));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required"));
        }
        for n in &self.networks {
            profile_by_name(n).map_err(|e| field("networks", e))?;
        }
        if let Some(p) = &self.privacy {
            if !(p.epsilon > 0.0) {
                return Err(field("privacy.epsilon", "must be positive"));
            }
            if let Some(d) = p.delta {
                if !(d > 0.0 && d < 1.0) {
                    return Err(field("privacy.delta", "must lie in (0, 1)"));
                }
            }
        }
        match &self.dataset {
            DatasetSpec::Synthetic { n, d, bound, cluster_std, clusters, .. } => {
                if *d == 0 {
                    return Err(field("dataset.d", "must be positive"));
                }
                if *n < clusters.unwrap_or(self.k) {
                    return Err(field("dataset.n", "must be at least the cluster count"));
                }
                if !(*bound > 0.0) {
                    return Err(field("dataset.bound", "must be positive"));
                }
                if !(*cluster_std >= 0.0) {
                    return Err(field("dataset.cluster_std", "must be non-negative"));
                }
            }
            DatasetSpec::Csv { bound: Some(b), .. } if !(*b > 0.0) => {
                return Err(field("dataset.bound", "must be positive"));
            }
            _ => {}
        }
        Ok(())
    }

    /// Loads or generates the dataset and returns it with its bound `B`.
    pub fn load_dataset(&self) -> Result<(Dataset, f64)> {
        match &self.dataset {
            DatasetSpec::Csv {
                path,
                has_header,
                label_column,
                normalize,
                bound,
            } => {
                let opts = CsvOptions {
                    has_header: *has_header,
                    label_column: *label_column,
                    normalize: *normalize,
                };
                let mut data = load_csv(path, &opts)?;
                if *normalize {
                    data.shift(-0.5);
                    Ok((data, 0.5))
                } else {
                    let b = bound.unwrap_or_else(|| data.max_abs());
                    if data.max_abs() > b {
                        return Err(field("dataset.bound", format!("data exceeds {b}")));
                    }
                    Ok((data, b))
                }
            }
            DatasetSpec::Synthetic {
                n,
                clusters,
                d,
                bound,
                cluster_std,
                seed,
            } => Ok((
                gen_synthetic(*n, clusters.unwrap_or(self.k), *d, *bound, *cluster_std, *seed)?,
                *bound,
            )),
            DatasetSpec::S1Like { seed } => Ok((s1_like(*seed), 0.5)),
        }
    }

    pub fn party_split(&self, d: usize) -> Result<Vec<Vec<usize>>> {
        match &self.parties {
            Some(p) => {
                if p.len() < 2 {
                    return Err(field("parties", "at least two parties are required"));
                }
                let mut all: Vec<usize> = p.iter().flatten().copied().collect();
                all.sort_unstable();
                if all != (0..d).collect::<Vec<_>>() || p.iter().any(|c| c.is_empty()) {
                    return Err(field(
                        "parties",
                        format!("each party needs features and together they must cover 0..{d} once"),
                    ));
                }
                Ok(p.clone())
            }
            None => {
                if d < 2 {
                    return Err(field("parties", "one feature cannot be split between two parties"));
                }
                let half = d.div_ceil(2);
                Ok(vec![(0..half).collect(), (half..d).collect()])
            }
        }
    }

    pub fn protocol_config(&self, n: usize, bound: f64, seed: u64) -> ProtocolConfig {
        let o = &self.protocol;
        let mut c = ProtocolConfig::new(self.k, bound);
        c.rounds = self.rounds;
        c.seed = seed;
        c.privacy = self.privacy.as_ref().map(|p| PrivacySettings {
            epsilon: p.epsilon,
            delta: p.delta.unwrap_or(1.0 / n as f64),
            composition: p.composition,
            sigma_assignment: p.sigma_assignment,
        });
        if let Some(v) = o.slot_count {
            c.slot_count = v;
        }
        if let Some(v) = o.padding {
            c.padding = v;
        }
        if let Some(v) = o.sign_degree {
            c.sign_degree = v;
        }
        if let Some(v) = o.tie_margin {
            c.tie_margin = v;
        }
        if let Some(v) = o.refinements {
            c.refinements = v;
        }
        if let Some(v) = o.approx_perturbation {
            c.approx_perturbation = v;
        }
        if let Some(v) = o.bytes_per_slot_per_level {
            c.size_model = SizeModel {
                bytes_per_slot_per_level: v,
                ..c.size_model
            };
        }
        if let Some(v) = o.convergence {
            c.convergence = v;
        }
        if let Some(v) = o.two_cluster_fast_path {
            c.two_cluster_fast_path = v;
        }
        c.computing_party = o.computing_party;
        c.key_holder = o.key_holder;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub name: String,
    pub n: usize,
    pub d: usize,
    pub bound: f64,
    pub labelled: bool,
    pub preprocessing: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub secure_loss: f64,
    pub secure_accuracy: Option<f64>,
    pub baseline_loss: f64,
    pub baseline_accuracy: Option<f64>,
    pub rounds_run: u32,
    pub compute_seconds: f64,
    pub total_bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub secure_loss: f64,
    pub secure_accuracy: Option<f64>,
    pub baseline_loss: f64,
    pub baseline_accuracy: Option<f64>,
    pub compute_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub epsilon_total: f64,
    pub delta_total: f64,
    pub composition: Composition,
    pub epsilon_round: f64,
    pub delta_round: f64,
    pub sigma_sum: f64,
    pub sigma_count: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WallclockEstimate {
    pub network: String,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub seed: u64,
    pub secure: Vec<CentroidSet>,
    pub baseline: Vec<CentroidSet>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub dataset: DatasetInfo,
    pub k: usize,
    pub rounds: u32,
    pub model: DeploymentModel,
    pub depth_budget: u32,
    pub seeds: Vec<SeedReport>,
    pub mean: MeanReport,
    /// Transcript of the first seed.
    pub transcript: TranscriptSummary,
    pub privacy: Option<PrivacyReport>,
    pub wallclock: Vec<WallclockEstimate>,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
    /// Full transcript of the first seed.
    #[serde(skip)]
    pub first_transcript: Transcript,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = v.fold((0.0, 0usize), |(s, c), x| (s + x, c + 1));
    s / c.max(1) as f64
}

fn mean_opt(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let all: Option<Vec<f64>> = v.collect();
    all.map(|a| mean(a.into_iter()))
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let (data, bound) = cfg.load_dataset()?;
    let (n, d) = (data.n(), data.d());
    if n < cfg.k {
        return Err(field("k", format!("{} exceeds the {n} points", cfg.k)));
    }
    let split = cfg.party_split(d)?;
    let partitions = DataPartition::split(&data.points, &split)?;
    let labels = data
        .labels
        .as_deref()
        .filter(|l| l.iter().all(|v| *v < cfg.k));
    let accuracy = |c: &[Vec<f64>]| labels.map(|l| cluster_accuracy(&data.points, c, Some(l))).transpose();

    let mut seeds = Vec::new();
    let mut trajectories = Vec::new();
    let mut first = None;
    for &seed in &cfg.seeds {
        let pcfg = cfg.protocol_config(n, bound, seed);
        let out = run_multiparty(&partitions, cfg.model, &pcfg)?;
        let init = init_centroids(cfg.k, d, bound, seed)?;
        let base = lloyd_plaintext(&data.points, &init, cfg.rounds, TieRule::LowestIndex, seed);
        seeds.push(SeedReport {
            seed,
            secure_loss: normalized_loss(&data.points, &out.centroids.centers),
            secure_accuracy: accuracy(&out.centroids.centers)?,
            baseline_loss: normalized_loss(&data.points, &base.centroids.centers),
            baseline_accuracy: accuracy(&base.centroids.centers)?,
            rounds_run: out.rounds_run,
            compute_seconds: out.compute_seconds,
            total_bytes: out.transcript.total_bytes(),
        });
        trajectories.push(Trajectory {
            seed,
            secure: out.trajectory.clone(),
            baseline: base.trajectory,
        });
        if first.is_none() {
            first = Some((out, pcfg));
        }
    }
    let (out, pcfg) = first.expect("at least one seed");
    let compute = mean(seeds.iter().map(|s| s.compute_seconds));
    let nets = if cfg.networks.is_empty() {
        profiles()
    } else {
        cfg.networks.iter().map(|n| profile_by_name(n)).collect::<Result<_>>()?
    };
    let privacy = match (&pcfg.privacy, out.round_budget) {
        (Some(p), Some(rb)) => Some(PrivacyReport {
            epsilon_total: p.epsilon,
            delta_total: p.delta,
            composition: rb.composition,
            epsilon_round: rb.epsilon,
            delta_round: rb.delta,
            sigma_sum: out.noise.sigma_sum,
            sigma_count: out.noise.sigma_count,
        }),
        _ => None,
    };
    Ok(ExperimentReport {
        name: cfg.name.clone(),
        dataset: DatasetInfo {
            name: data.name.clone(),
            n,
            d,
            bound,
            labelled: labels.is_some(),
            preprocessing: data.preprocessing.clone(),
        },
        k: cfg.k,
        rounds: cfg.rounds,
        model: cfg.model,
        depth_budget: out.depth_budget,
        mean: MeanReport {
            secure_loss: mean(seeds.iter().map(|s| s.secure_loss)),
            secure_accuracy: mean_opt(seeds.iter().map(|s| s.secure_accuracy)),
            baseline_loss: mean(seeds.iter().map(|s| s.baseline_loss)),
            baseline_accuracy: mean_opt(seeds.iter().map(|s| s.baseline_accuracy)),
            compute_seconds: compute,
        },
        seeds,
        transcript: out.transcript.summary(),
        privacy,
        wallclock: nets
            .iter()
            .map(|net| WallclockEstimate {
                network: net.name.clone(),
                seconds: estimate_wallclock(&out.transcript, net, compute),
            })
            .collect(),
        trajectories,
        first_transcript: out.transcript,
    })
}

/// One row per seed, source, round, cluster: coordinates in columns `x0..`.
pub fn write_trajectory_csv(report: &ExperimentReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = report.dataset.d;
    let mut header = vec!["seed".to_string(), "source".into(), "round".into(), "cluster".into()];
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header)?;
    for t in &report.trajectories {
        for (source, sets) in [("secure", &t.secure), ("baseline", &t.baseline)] {
            for (round, set) in sets.iter().enumerate() {
                for (j, c) in set.centers.iter().enumerate() {
                    let mut row = vec![t.seed.to_string(), source.into(), round.to_string(), j.to_string()];
                    row.extend(c.iter().map(|v| v.to_string()));
                    w.write_record(&row)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}
