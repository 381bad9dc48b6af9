//! Vertically partitioned k-means between a computing party (Alice), a
//! key holder (Bob) and optional further data owners.
//!
//! Alice evaluates distances, the packed argmin and the cluster aggregates
//! over everyone's features; Bob only ever sees noisy per-cluster sums and
//! counts. Every message is logged in a [`Transcript`].

mod pipeline;
mod transcript;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::argmin::{self, SignApproxConfig, DEFAULT_SIGN_DEGREE, DEFAULT_TIE_MARGIN};
use crate::dp::{self, Composition, NoiseScales, PrivacyBudget, RoundBudget, SigmaAssignment};
use crate::engine::{Engine, EngineConfig, OpStats, SizeModel, SlotVector};
use crate::error::{Error, Result};
use crate::packed::{PackedLayout, PaddingMode};

pub use pipeline::{
    aggregate_clusters, batch_blocks, batch_plan, centroid_grids,
    compact_column, distance_step, encode_points, fold_all, pad_grids, Batch, CentroidGrids,
    EncodedPartition, PAD_DISTANCE_FACTOR, PADDED_SCALE_FACTOR,
};
pub use transcript::*;

use pipeline::{FeatureColumn, Pipeline};

pub type PartyId = usize;

/// Default slot count, matching a ring dimension of 2^15.
pub const DEFAULT_SLOT_COUNT: usize = 1 << 14;
pub const DEFAULT_ROUNDS: u32 = 10;
/// Rejection attempts per initial centroid before accepting unconditionally.
pub const MAX_INIT_ATTEMPTS: usize = 100;
/// Centroid-shift tolerance as a fraction of `B`.
pub const DEFAULT_SHIFT_TOLERANCE: f64 = 1e-4;

/// Stream tags of the per-run generator.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const UPDATE: u64 = 1;
    pub const NOISE: u64 = 2;
    pub const SHARES: u64 = 3;
    pub const DATA: u64 = 4;
}

/// Independent generator for one purpose within a seeded run.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    Computing,
    KeyHolder,
    DataOwner,
}

/// One party's vertical slice of the data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataPartition {
    pub owner: PartyId,
    /// Global feature indices, one per column of `features`.
    pub columns: Vec<usize>,
    /// Column-major: `features[j][i]` is feature `columns[j]` of point `i`.
    pub features: Vec<Vec<f64>>,
    pub role: Role,
}

impl DataPartition {
    pub fn new(owner: PartyId, columns: Vec<usize>, features: Vec<Vec<f64>>, role: Role) -> Result<Self> {
        if columns.len() != features.len() {
            return Err(Error::LengthMismatch {
                left: columns.len(),
                right: features.len(),
            });
        }
        if columns.is_empty() {
            return Err(Error::Data(format!("party {owner} holds no features")));
        }
        let n = features[0].len();
        if let Some(bad) = features.iter().find(|f| f.len() != n) {
            return Err(Error::LengthMismatch {
                left: n,
                right: bad.len(),
            });
        }
        Ok(DataPartition {
            owner,
            columns,
            features,
            role,
        })
    }

    /// Vertical split of row-major `points`: party `p` gets the columns in
    /// `split[p]`. Party 0 is the computing party, party 1 the key holder.
    pub fn split(points: &[Vec<f64>], split: &[Vec<usize>]) -> Result<Vec<Self>> {
        split
            .iter()
            .enumerate()
            .map(|(p, cols)| {
                let features = cols
                    .iter()
                    .map(|&c| {
                        points
                            .iter()
                            .map(|x| {
                                x.get(c).copied().ok_or_else(|| {
                                    Error::Data(format!("feature {c} out of range"))
                                })
                            })
                            .collect::<Result<Vec<_>>>()
                    })
                    .collect::<Result<Vec<_>>>()?;
                let role = match p {
                    0 => Role::Computing,
                    1 => Role::KeyHolder,
                    _ => Role::DataOwner,
                };
                DataPartition::new(p, cols.clone(), features, role)
            })
            .collect()
    }

    pub fn n(&self) -> usize {
        self.features.first().map_or(0, |f| f.len())
    }

    pub fn dims(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CentroidSet {
    pub centers: Vec<Vec<f64>>,
    pub bound: f64,
    pub round: u32,
}

impl CentroidSet {
    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dims(&self) -> usize {
        self.centers.first().map_or(0, |c| c.len())
    }

    /// Largest coordinate-wise movement between two sets.
    pub fn max_shift(&self, other: &CentroidSet) -> f64 {
        self.centers
            .iter()
            .zip(&other.centers)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}

/// Minimum spacing enforced between initial centroids.
pub fn init_spacing(k: usize, d: usize, bound: f64) -> f64 {
    2.0 * bound * (d as f64).sqrt() / (4.0 * k as f64)
}

fn uniform_point(rng: &mut impl Rng, d: usize, bound: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-bound..=bound)).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Centroids drawn from an explicit generator.
pub fn init_centroids_with(k: usize, d: usize, bound: f64, rng: &mut impl Rng) -> Result<CentroidSet> {
    if k < 2 {
        return Err(Error::Config(format!("k = {k} must be at least 2")));
    }
    if d == 0 || !(bound > 0.0 && bound.is_finite()) {
        return Err(Error::Config("need d >= 1 and a positive bound".into()));
    }
    let min2 = init_spacing(k, d, bound).powi(2);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(k);
    while centers.len() < k {
        let mut cand = uniform_point(rng, d, bound);
        for _ in 1..MAX_INIT_ATTEMPTS {
            if centers.iter().all(|c| dist2(c, &cand) >= min2) {
                break;
            }
            cand = uniform_point(rng, d, bound);
        }
        centers.push(cand);
    }
    Ok(CentroidSet {
        centers,
        bound,
        round: 0,
    })
}

pub fn init_centroids(k: usize, d: usize, bound: f64, seed: u64) -> Result<CentroidSet> {
    init_centroids_with(k, d, bound, &mut stream_rng(seed, streams::INIT))
}

/// `s / t` per cluster, clamped to `[-B, B]`; clusters with `t < 1` are
/// re-drawn uniformly from `rng`.
pub fn update_centroids(
    s: &[Vec<f64>],
    t: &[f64],
    bound: f64,
    round: u32,
    rng: &mut impl Rng,
) -> CentroidSet {
    let centers = t
        .iter()
        .enumerate()
        .map(|(j, &tj)| {
            if tj < 1.0 {
                uniform_point(rng, s.len(), bound)
            } else {
                s.iter().map(|dim| (dim[j] / tj).clamp(-bound, bound)).collect()
            }
        })
        .collect();
    CentroidSet {
        centers,
        bound,
        round,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum Convergence {
    #[default]
    FixedRounds,
    /// Stop once no coordinate moves more than `tolerance * B`.
    CentroidShift { tolerance: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DeploymentModel {
    #[default]
    ServerAided,
    MpcSimulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrivacySettings {
    pub epsilon: f64,
    pub delta: f64,
    #[serde(default)]
    pub composition: Composition,
    #[serde(default)]
    pub sigma_assignment: SigmaAssignment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub k: usize,
    /// Maximum number of rounds.
    pub rounds: u32,
    pub bound: f64,
    pub slot_count: usize,
    pub padding: PaddingMode,
    pub sign_degree: usize,
    pub tie_margin: f64,
    pub refinements: u32,
    /// `None` runs without noise.
    pub privacy: Option<PrivacySettings>,
    pub approx_perturbation: f64,
    pub size_model: SizeModel,
    pub seed: u64,
    pub convergence: Convergence,
    /// Compact two-cluster path instead of packing when `k == 2`.
    pub two_cluster_fast_path: bool,
    pub computing_party: Option<PartyId>,
    pub key_holder: Option<PartyId>,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            k: 2,
            rounds: DEFAULT_ROUNDS,
            bound: 1.0,
            slot_count: DEFAULT_SLOT_COUNT,
            padding: PaddingMode::Unpadded,
            sign_degree: DEFAULT_SIGN_DEGREE,
            tie_margin: DEFAULT_TIE_MARGIN,
            refinements: 0,
            privacy: None,
            approx_perturbation: 0.0,
            size_model: SizeModel::default(),
            seed: 0,
            convergence: Convergence::FixedRounds,
            two_cluster_fast_path: true,
            computing_party: None,
            key_holder: None,
        }
    }
}

impl ProtocolConfig {
    pub fn new(k: usize, bound: f64) -> Self {
        ProtocolConfig {
            k,
            bound,
            ..Self::default()
        }
    }

    pub fn uses_fast_path(&self) -> bool {
        self.k == 2 && self.two_cluster_fast_path
    }

    /// Comparison settings for `d` features. The scale maps the largest
    /// squared-distance difference (the pad distance, when padded) into range.
    pub fn sign_config(&self, d: usize) -> SignApproxConfig {
        let max = argmin::max_squared_distance(d, self.bound);
        let scale = match self.padding {
            PaddingMode::Padded if !self.uses_fast_path() => 1.0 / (PADDED_SCALE_FACTOR * max),
            _ => 1.0 / max,
        };
        SignApproxConfig {
            degree: self.sign_degree,
            input_scale: scale,
            tie_margin: self.tie_margin,
            refinements: self.refinements,
        }
    }

    pub fn layout(&self) -> Result<PackedLayout> {
        PackedLayout::new(self.k, self.slot_count, self.padding)
    }

    pub fn privacy_budget(&self) -> Result<Option<PrivacyBudget>> {
        self.privacy
            .map(|p| PrivacyBudget::new(p.epsilon, p.delta, self.rounds, p.composition))
            .transpose()
    }

    /// Per-round budget and the resulting noise scales.
    pub fn noise(&self) -> Result<(Option<RoundBudget>, NoiseScales)> {
        match (self.privacy_budget()?, self.privacy) {
            (Some(b), Some(p)) => {
                let rb = dp::per_round_budget(&b)?;
                let scales = NoiseScales::from_round_budget(&rb, self.bound, p.sigma_assignment)?;
                Ok((Some(rb), scales))
            }
            _ => Ok((None, NoiseScales::zero(self.bound))),
        }
    }

    /// Depth consumed by one round for `d` features.
    pub fn round_depth(&self, d: usize) -> u32 {
        round_depth(self.k, &self.sign_config(d), self.uses_fast_path())
    }

    pub fn engine_config(&self, d: usize) -> Result<EngineConfig> {
        let cfg = EngineConfig {
            slot_count: self.slot_count,
            depth_budget: self.round_depth(d),
            approx_perturbation: self.approx_perturbation,
            size_model: self.size_model,
            perturbation_seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("k = {} must be at least 2", self.k)));
        }
        if self.rounds == 0 {
            return Err(Error::Config("rounds must be at least 1".into()));
        }
        if !(self.bound > 0.0 && self.bound.is_finite()) {
            return Err(Error::Config(format!("bound {} must be positive", self.bound)));
        }
        if let Convergence::CentroidShift { tolerance } = self.convergence {
            if !(tolerance > 0.0) {
                return Err(Error::Config("shift tolerance must be positive".into()));
            }
        }
        if !self.uses_fast_path() {
            self.layout()?;
        }
        self.sign_config(1).validate()?;
        self.privacy_budget()?;
        Ok(())
    }
}

/// Levels used by one round: block extraction, squaring, argmin, the
/// aggregate product and the release mask. The two-cluster path needs
/// squaring, one comparison, the product and the split mask.
pub fn round_depth(k: usize, sign: &SignApproxConfig, fast_path: bool) -> u32 {
    if k == 2 && fast_path {
        1 + sign.depth() + 1 + 1
    } else {
        1 + 1 + argmin::argmin_depth(k, sign) + 1 + 1
    }
}

/// Indices (into `dims`) of the computing party and the key holder.
/// Defaults: the party with most features computes, and the next largest
/// holds the key; ties go to the lower index.
pub fn select_roles(
    dims: &[(PartyId, usize)],
    roles: Option<&[Role]>,
    computing: Option<PartyId>,
    key_holder: Option<PartyId>,
    model: DeploymentModel,
) -> Result<(usize, Option<usize>)> {
    if dims.len() < 2 {
        return Err(Error::Config("at least two parties are required".into()));
    }
    let by_id = |id: PartyId| {
        dims.iter()
            .position(|(p, _)| *p == id)
            .ok_or_else(|| Error::Config(format!("unknown party {id}")))
    };
    let by_role = |role: Role| roles.and_then(|r| r.iter().position(|x| *x == role));
    let largest = |skip: Option<usize>| {
        (0..dims.len())
            .filter(|i| Some(*i) != skip)
            .max_by(|a, b| dims[*a].1.cmp(&dims[*b].1).then(b.cmp(a)))
            .expect("two or more parties")
    };
    let alice = match computing {
        Some(id) => by_id(id)?,
        None => by_role(Role::Computing).unwrap_or_else(|| largest(None)),
    };
    if model == DeploymentModel::MpcSimulated {
        return Ok((alice, None));
    }
    let bob = match key_holder {
        Some(id) => by_id(id)?,
        None => by_role(Role::KeyHolder)
            .filter(|b| *b != alice)
            .unwrap_or_else(|| largest(Some(alice))),
    };
    if bob == alice {
        return Err(Error::Config("computing party cannot hold the key".into()));
    }
    Ok((alice, Some(bob)))
}

/// Message bookkeeping shared by real runs and dry-run plans.
struct Accounting<'a> {
    engine: &'a EngineConfig,
    model: DeploymentModel,
    parties: &'a [(PartyId, usize)],
    alice: usize,
    bob: Option<usize>,
    n: usize,
    k: usize,
    d: usize,
}

impl Accounting<'_> {
    fn id(&self, i: usize) -> PartyId {
        self.parties[i].0
    }

    fn others(&self, skip: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.parties.len()).filter(move |i| *i != skip)
    }

    fn ct(&self, level: u32, count: u64) -> u64 {
        count * self.engine.ciphertext_size_bytes(level)
    }

    #[allow(clippy::too_many_arguments)]
    fn send(&self, t: &mut Transcript, round: u32, from: usize, to: usize, kind: MessageKind, cts: u64, bytes: u64, reals: u64) {
        t.push(Message {
            round,
            sender: self.id(from),
            receiver: self.id(to),
            kind,
            byte_size: bytes,
            ciphertext_count: cts,
            plaintext_reals: reals,
        });
    }

    fn setup(&self, t: &mut Transcript) {
        let top = self.engine.depth_budget;
        match self.bob {
            Some(bob) => {
                for p in self.others(bob) {
                    self.send(t, 0, bob, p, MessageKind::PublicKey, 1, self.ct(top, 1), 0);
                }
            }
            None => {
                for p in self.others(self.alice) {
                    self.send(t, 0, p, self.alice, MessageKind::PublicKey, 1, self.ct(top, 1), 0);
                }
                for p in self.others(self.alice) {
                    self.send(t, 0, self.alice, p, MessageKind::PublicKey, 1, self.ct(top, 1), 0);
                }
            }
        }
        let groups = self.n.div_ceil(self.engine.slot_count) as u64;
        for p in self.others(self.alice) {
            let cts = self.parties[p].1 as u64 * groups;
            self.send(t, 0, p, self.alice, MessageKind::EncryptedFeatures, cts, self.ct(top, cts), 0);
        }
    }

    /// `levels` holds the remaining levels of each released ciphertext.
    fn round(&self, t: &mut Transcript, round: u32, levels: &[u32]) {
        let agg_bytes: u64 = levels.iter().map(|l| self.ct(*l, 1)).sum();
        let cts = levels.len() as u64;
        let reals = (self.k * self.d) as u64;
        let centroid_bytes = reals * BYTES_PER_REAL;
        match self.bob {
            Some(bob) => {
                self.send(t, round, self.alice, bob, MessageKind::NoisyAggregates, cts, agg_bytes, 0);
                self.send(t, round, bob, self.alice, MessageKind::Centroids, 0, centroid_bytes, reals);
            }
            None => {
                for p in self.others(self.alice) {
                    self.send(t, round, self.alice, p, MessageKind::NoisyAggregates, cts, agg_bytes, 0);
                }
                for p in self.others(self.alice) {
                    self.send(t, round, p, self.alice, MessageKind::DecryptionShare, 0, agg_bytes / 2, 0);
                }
            }
        }
    }

    fn finish(&self, t: &mut Transcript, round: u32) {
        let reals = (self.k * self.d) as u64;
        let sender = self.bob.unwrap_or(self.alice);
        for p in self.others(sender).filter(|p| *p != self.alice) {
            self.send(t, round, sender, p, MessageKind::Centroids, 0, reals * BYTES_PER_REAL, reals);
        }
    }
}

/// Transcript of a fixed-round run without executing it.
pub fn communication_plan(
    n: usize,
    party_dims: &[(PartyId, usize)],
    model: DeploymentModel,
    cfg: &ProtocolConfig,
) -> Result<Transcript> {
    cfg.validate()?;
    let d: usize = party_dims.iter().map(|p| p.1).sum();
    let engine = cfg.engine_config(d)?;
    let (alice, bob) = select_roles(party_dims, None, cfg.computing_party, cfg.key_holder, model)?;
    let acc = Accounting {
        engine: &engine,
        model,
        parties: party_dims,
        alice,
        bob,
        n,
        k: cfg.k,
        d,
    };
    let mut t = Transcript::default();
    acc.setup(&mut t);
    // The packed count skips the product with the data, so it keeps a level.
    let mut levels = vec![0; d + 1];
    levels[d] = u32::from(!cfg.uses_fast_path());
    for r in 1..=cfg.rounds {
        acc.round(&mut t, r, &levels);
    }
    acc.finish(&mut t, cfg.rounds + 1);
    debug_assert!(matches!(acc.model, DeploymentModel::ServerAided) == acc.bob.is_some());
    Ok(t)
}

/// Bytes per slot per level that make the planned transcript of the given
/// cell total `target_bytes`.
pub fn calibrate_size_model(
    target_bytes: f64,
    n: usize,
    party_dims: &[(PartyId, usize)],
    model: DeploymentModel,
    cfg: &ProtocolConfig,
) -> Result<SizeModel> {
    let mut unit = cfg.clone();
    unit.size_model = SizeModel {
        bytes_per_slot_per_level: 1.0,
        base_overhead_bytes: 0.0,
    };
    let t = communication_plan(n, party_dims, model, &unit)?;
    let plain: u64 = t.of_kind(MessageKind::Centroids).map(|m| m.byte_size).sum();
    let per_unit = (t.total_bytes() - plain) as f64;
    let b = (target_bytes - plain as f64) / per_unit;
    if !(b > 0.0) {
        return Err(Error::Config(format!("target {target_bytes} below plaintext traffic")));
    }
    Ok(SizeModel {
        bytes_per_slot_per_level: b,
        base_overhead_bytes: 0.0,
    })
}

/// Checks the message-count invariants of a transcript.
pub fn check_transcript(
    t: &Transcript,
    n: usize,
    party_dims: &[(PartyId, usize)],
    alice: PartyId,
    k: usize,
    slot_count: usize,
) -> Result<()> {
    let d: usize = party_dims.iter().map(|p| p.1).sum();
    let groups = n.div_ceil(slot_count);
    for m in t.of_kind(MessageKind::EncryptedFeatures) {
        let dims = party_dims
            .iter()
            .find(|p| p.0 == m.sender)
            .map_or(0, |p| p.1);
        if m.ciphertext_count != (dims * groups) as u64 {
            return Err(Error::Data(format!(
                "party {} uploaded {} ciphertexts, expected {}",
                m.sender,
                m.ciphertext_count,
                dims * groups
            )));
        }
    }
    let uploaded: u64 = t.of_kind(MessageKind::EncryptedFeatures).map(|m| m.ciphertext_count).sum();
    let non_alice: usize = party_dims.iter().filter(|p| p.0 != alice).map(|p| p.1).sum();
    if uploaded != (non_alice * groups) as u64 {
        return Err(Error::Data(format!("{uploaded} ciphertexts uploaded")));
    }
    for m in t.of_kind(MessageKind::NoisyAggregates) {
        if m.ciphertext_count != (d + 1) as u64 {
            return Err(Error::Data(format!(
                "round {} aggregates carry {} ciphertexts",
                m.round, m.ciphertext_count
            )));
        }
    }
    for m in t.of_kind(MessageKind::Centroids) {
        if m.plaintext_reals != (k * d) as u64 {
            return Err(Error::Data(format!(
                "round {} centroids carry {} reals",
                m.round, m.plaintext_reals
            )));
        }
    }
    Ok(())
}

/// Exact additive shares of `values` over `parties` parties, on the bit
/// patterns modulo 2^64.
pub fn additive_shares(values: &[f64], parties: usize, rng: &mut impl Rng) -> Vec<Vec<u64>> {
    let mut shares: Vec<Vec<u64>> = (1..parties)
        .map(|_| values.iter().map(|_| rng.random()).collect())
        .collect();
    let last = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            shares
                .iter()
                .fold(v.to_bits(), |acc, s| acc.wrapping_sub(s[i]))
        })
        .collect();
    shares.push(last);
    shares
}

pub fn reconstruct(shares: &[Vec<u64>]) -> Vec<f64> {
    let len = shares.first().map_or(0, |s| s.len());
    (0..len)
        .map(|i| f64::from_bits(shares.iter().fold(0u64, |acc, s| acc.wrapping_add(s[i]))))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub centroids: CentroidSet,
    /// Initial centroids followed by one set per completed round.
    pub trajectory: Vec<CentroidSet>,
    pub transcript: Transcript,
    pub noise: NoiseScales,
    pub round_budget: Option<RoundBudget>,
    pub depth_budget: u32,
    /// Deepest released ciphertext of each round.
    pub round_depths: Vec<u32>,
    pub computing_party: PartyId,
    pub key_holder: Option<PartyId>,
    pub model: DeploymentModel,
    pub rounds_run: u32,
    pub layout: Option<PackedLayout>,
    pub batches: usize,
    pub ops: OpStats,
    pub compute_seconds: f64,
}

/// Two-party run: Alice computes, Bob holds the key.
pub fn run(alice: &DataPartition, bob: &DataPartition, cfg: &ProtocolConfig) -> Result<RunOutput> {
    let mut cfg = cfg.clone();
    cfg.computing_party = Some(alice.owner);
    cfg.key_holder = Some(bob.owner);
    execute(&[alice.clone(), bob.clone()], DeploymentModel::ServerAided, &cfg)
}

pub fn run_multiparty(
    partitions: &[DataPartition],
    model: DeploymentModel,
    cfg: &ProtocolConfig,
) -> Result<RunOutput> {
    execute(partitions, model, cfg)
}

fn validate_partitions(parts: &[DataPartition], bound: f64) -> Result<(usize, usize)> {
    if parts.len() < 2 {
        return Err(Error::Config("at least two partitions are required".into()));
    }
    let n = parts[0].n();
    if n == 0 {
        return Err(Error::Data("no points".into()));
    }
    let mut cols: Vec<usize> = Vec::new();
    for p in parts {
        if p.n() != n {
            return Err(Error::LengthMismatch { left: n, right: p.n() });
        }
        if p.columns.len() != p.features.len() {
            return Err(Error::LengthMismatch {
                left: p.columns.len(),
                right: p.features.len(),
            });
        }
        for (c, f) in p.columns.iter().zip(&p.features) {
            if let Some(v) = f.iter().find(|v| !(v.abs() <= bound)) {
                return Err(Error::Data(format!(
                    "party {} feature {c} has value {v} outside [-{bound}, {bound}]",
                    p.owner
                )));
            }
        }
        cols.extend(&p.columns);
    }
    let d = cols.len();
    cols.sort_unstable();
    cols.dedup();
    if cols.len() != d || cols.last() != Some(&(d - 1)) {
        return Err(Error::Data("feature columns must cover 0..d exactly once".into()));
    }
    Ok((n, d))
}

fn execute(parts: &[DataPartition], model: DeploymentModel, cfg: &ProtocolConfig) -> Result<RunOutput> {
    let started = Instant::now();
    cfg.validate()?;
    let (n, d) = validate_partitions(parts, cfg.bound)?;
    let dims: Vec<(PartyId, usize)> = parts.iter().map(|p| (p.owner, p.dims())).collect();
    let roles: Vec<Role> = parts.iter().map(|p| p.role).collect();
    let (alice, bob) = select_roles(&dims, Some(&roles), cfg.computing_party, cfg.key_holder, model)?;

    let sign = cfg.sign_config(d);
    let engine_cfg = cfg.engine_config(d)?;
    let engine = Engine::new(engine_cfg.clone())?;
    let (round_budget, noise) = cfg.noise()?;

    let acc = Accounting {
        engine: &engine_cfg,
        model,
        parties: &dims,
        alice,
        bob,
        n,
        k: cfg.k,
        d,
    };
    let mut transcript = Transcript::default();
    acc.setup(&mut transcript);

    let mut columns: Vec<Option<FeatureColumn>> = (0..d).map(|_| None).collect();
    for (i, p) in parts.iter().enumerate() {
        for (c, f) in p.columns.iter().zip(&p.features) {
            columns[*c] = Some(FeatureColumn {
                values: f,
                encrypted: i != alice,
            });
        }
    }
    let columns: Vec<FeatureColumn> = columns.into_iter().map(|c| c.expect("validated")).collect();
    let pipeline = if cfg.uses_fast_path() {
        Pipeline::compact(&engine, sign.clone(), &columns)?
    } else {
        let pad = PAD_DISTANCE_FACTOR * argmin::max_squared_distance(d, cfg.bound);
        Pipeline::packed(&engine, cfg.layout()?, sign.clone(), &columns, Some(pad))?
    };

    let mut centroids = init_centroids(cfg.k, d, cfg.bound, cfg.seed)?;
    let mut trajectory = vec![centroids.clone()];
    let mut round_depths = Vec::new();
    let mut update_rng = stream_rng(cfg.seed, streams::UPDATE);
    let mut noise_rng = stream_rng(cfg.seed, streams::NOISE);
    let mut share_rng = stream_rng(cfg.seed, streams::SHARES);
    let noise_slots: Vec<usize> = (0..cfg.k).collect();

    let mut rounds_run = 0;
    for round in 1..=cfg.rounds {
        let mut step = || -> Result<(Vec<Vec<f64>>, Vec<f64>, Vec<u32>)> {
            let (s, t) = pipeline.round(&centroids.centers)?;
            let (s, t) = dp::perturb_aggregates(&engine, &s, &t, &noise, &noise_slots, &mut noise_rng)?;
            let released: Vec<&SlotVector> = s.iter().chain(std::iter::once(&t)).collect();
            let levels = released.iter().map(|v| engine.levels_remaining(v)).collect();
            let mut plain: Vec<Vec<f64>> = released
                .iter()
                .map(|v| {
                    let values = engine.decrypt(v);
                    match bob {
                        Some(_) => values[..cfg.k].to_vec(),
                        None => reconstruct(&additive_shares(&values[..cfg.k], parts.len(), &mut share_rng)),
                    }
                })
                .collect();
            let t = plain.pop().expect("count vector");
            Ok((plain, t, levels))
        };
        let (s, t, levels) = step().map_err(|e| e.in_round(round))?;
        round_depths.push(engine_cfg.depth_budget - levels.iter().copied().min().unwrap_or(0));
        acc.round(&mut transcript, round, &levels);
        let next = update_centroids(&s, &t, cfg.bound, round, &mut update_rng);
        let shift = next.max_shift(&centroids);
        centroids = next;
        trajectory.push(centroids.clone());
        rounds_run = round;
        if let Convergence::CentroidShift { tolerance } = cfg.convergence {
            if shift < tolerance * cfg.bound {
                break;
            }
        }
    }
    acc.finish(&mut transcript, rounds_run + 1);
    check_transcript(&transcript, n, &dims, dims[alice].0, cfg.k, cfg.slot_count)?;

    Ok(RunOutput {
        centroids,
        trajectory,
        transcript,
        noise,
        round_budget,
        depth_budget: engine_cfg.depth_budget,
        round_depths,
        computing_party: dims[alice].0,
        key_holder: bob.map(|b| dims[b].0),
        model,
        rounds_run,
        layout: pipeline.layout(),
        batches: pipeline.batch_count(),
        ops: engine.stats(),
        compute_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn update_divides_and_reinitializes() {
        let mut rng = stream_rng(1, streams::UPDATE);
        let c = update_centroids(&[vec![10.0, 0.0]], &[5.0, 2.0], 100.0, 1, &mut rng);
        assert_eq!(c.centers, vec![vec![2.0], vec![0.0]]);
        let c = update_centroids(&[vec![10.0, 1.0]], &[5.0, 0.3], 1.0, 1, &mut rng);
        assert_eq!(c.centers[0], vec![1.0]);
        assert!(c.centers[1][0].abs() <= 1.0 && c.centers[1][0] != 1.0 / 0.3);
    }

    #[test]
    fn init_is_deterministic_and_rejects_k1() {
        assert_eq!(init_centroids(5, 2, 1.0, 7).unwrap(), init_centroids(5, 2, 1.0, 7).unwrap());
        assert!(init_centroids(1, 2, 1.0, 7).is_err());
    }

    #[test]
    fn shares_reconstruct_exactly() {
        let mut rng = stream_rng(3, streams::SHARES);
        let v = vec![0.1, -3.5, 1e-300, f64::MAX];
        for p in 2..5 {
            assert_eq!(reconstruct(&additive_shares(&v, p, &mut rng)), v);
        }
    }

    #[test]
    fn depth_matches_plan() {
        let sign = SignApproxConfig::default();
        assert_eq!(round_depth(2, &sign, true), 11);
        assert_eq!(round_depth(3, &sign, false), 15);
        assert_eq!(round_depth(15, &sign, false), 18);
    }

    #[test]
    fn roles_prefer_most_features() {
        let dims = [(0, 1), (1, 3), (2, 2)];
        let (a, b) = select_roles(&dims, None, None, None, DeploymentModel::ServerAided).unwrap();
        assert_eq!((a, b), (1, Some(2)));
        let (a, b) = select_roles(&dims, None, None, None, DeploymentModel::MpcSimulated).unwrap();
        assert_eq!((a, b), (1, None));
    }
}
