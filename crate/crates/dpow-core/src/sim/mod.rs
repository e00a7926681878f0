//! Deterministic discrete-event simulation harness.
//!
//! Everything in here is driven by a single `u64` seed. Independent random
//! streams are derived per (trial, actor, purpose) with [`rng::stream`], so
//! adding a consumer never perturbs the draws seen by existing ones and a
//! given config reproduces byte-identical results on every run.
//!
//! The harness has three entry points:
//!
//! * [`exp1::run_experiment_1`]: solo-vs-sharded mining benchmark on a
//!   virtual clock (assignment latency, hashing at a fixed rate, submission
//!   latency), with the two arms coupled through shared random streams.
//! * [`exp2::run_experiment_2`]: verifier groups with conspiring minorities
//!   and majorities fed valid and invalid candidate blocks, reporting a
//!   valid/invalid verdict grid.
//! * [`campaign::run_safety_campaign`]: randomized consensus runs over a
//!   lossy network plus a scripted lock/unlock regression scenario, checked
//!   for chain conflicts and double-signed votes.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod campaign;
pub mod driver;
pub mod exp1;
pub mod exp2;
pub mod fabric;
pub mod queue;
pub mod rng;
pub mod trace;

pub use campaign::{
    run_lock_scenario, run_safety_campaign, CampaignReport, RunRecord, ScenarioReport,
};
pub use driver::{
    run_net, ByzBehavior, CandidateSource, FinalVerifier, FixedCandidates, NetConfig, NetMessage,
    NetOutcome, PerVerifierCandidates, SentMessage,
};
pub use exp1::{run_experiment_1, Exp1Summary};
pub use exp2::{run_experiment_2, Exp2Row};
pub use fabric::{DropRule, Envelope, Fabric, MsgKind, Route, ScriptedFabric, UniformFabric};
pub use queue::{EventKind, EventQueue, SimEvent};
pub use trace::{replay_trace, write_trace, TraceError, TraceKind, TRACE_VERSION};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unsupported config schema_version {0}, this build reads version {CONFIG_SCHEMA_VERSION}")]
    BadSchemaVersion(u32),
    #[error("drop_rate must lie in [0, 1), got {0}")]
    BadDropRate(f64),
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("latency band [{0}, {1}] is invalid")]
    BadLatency(f64, f64),
    #[error("topology needs at least one miner and one verifier")]
    EmptyTopology,
    #[error("byzantine assignment names verifier {0} outside the group")]
    BadByzantineIndex(u32),
    #[error("byzantine verifiers must number fewer than a third of the group ({got} of {size})")]
    TooManyByzantine { got: usize, size: u32 },
    #[error("difficulty band [{0}, {1}] is invalid (need 1 <= min <= max)")]
    BadDifficultyBand(u64, u64),
    #[error("hash_rate must be positive, got {0}")]
    BadHashRate(f64),
    #[error("phase_window must be positive, got {0}")]
    BadPhaseWindow(f64),
    #[error("max_sim_time must be positive, got {0}")]
    BadMaxSimTime(f64),
    #[error("heights must be at least 1")]
    NoHeights,
    #[error("candidates_per_height must be at least 1")]
    NoCandidates,
}

/// Number of miners and verifiers in play.
///
/// The benchmark compares `miners` solo servers against one server that
/// shards across the same `miners` workers, so a single field covers both
/// arms. `verifiers` is the PBFT group size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub miners: u32,
    pub verifiers: u32,
}

impl Default for Topology {
    fn default() -> Self {
        Topology { miners: 7, verifiers: 4 }
    }
}

/// How per-trial difficulty is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyPolicy {
    Fixed { difficulty: u64 },
    /// Log-uniform over `[min, max]`: heavy and light rounds both appear,
    /// like difficulty retargeting produces in the wild.
    LogUniform { min: u64, max: u64 },
}

impl Default for DifficultyPolicy {
    fn default() -> Self {
        DifficultyPolicy::LogUniform { min: 1 << 10, max: 1 << 15 }
    }
}

/// Uniform one-way message latency band, in simulated seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBand {
    pub min: f64,
    pub max: f64,
}

impl Default for LatencyBand {
    fn default() -> Self {
        LatencyBand { min: 0.05, max: 0.3 }
    }
}

/// Misbehavior modes for corrupted verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzantineStrategy {
    /// Vote for a designated target block regardless of validity, or vote
    /// empty to stonewall when no target is supplied.
    ConspireValidateInvalid,
    /// Flip a per-trial coin: behave honestly, or stonewall with empty votes.
    VoteMixed,
    /// Send nothing at all.
    Withhold,
    /// Propose and vote for different blocks to different peers.
    Equivocate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByzantineAssignment {
    pub verifier: u32,
    pub strategy: ByzantineStrategy,
}

/// Current [`SimConfig`] JSON layout version.
pub const CONFIG_SCHEMA_VERSION: u32 = 1;

/// Full description of a simulation. Serializable so a run can be
/// reconstructed from its trace header alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Config layout version; bumped on breaking changes so old files
    /// fail loudly instead of parsing into something else.
    #[serde(default = "default_schema_version")]
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub topology: Topology,
    #[serde(default)]
    pub difficulty: DifficultyPolicy,
    #[serde(default)]
    pub latency: LatencyBand,
    #[serde(default)]
    pub drop_rate: f64,
    #[serde(default)]
    pub byzantine: Vec<ByzantineAssignment>,
    #[serde(default = "default_trials")]
    pub trials: u64,
    /// Miner hash rate in hashes per simulated second.
    #[serde(default = "default_hash_rate")]
    pub hash_rate: f64,
    /// Consensus rounds allowed per height before a verifier gives up.
    #[serde(default = "default_max_step")]
    pub max_step: u32,
    /// Wall-clock length of each consensus phase (propose, prevote,
    /// precommit) in simulated seconds.
    #[serde(default = "default_phase_window")]
    pub phase_window: f64,
    /// Heights each campaign run tries to commit.
    #[serde(default = "default_heights")]
    pub heights: u64,
    /// Distinct candidate blocks offered per height in campaign runs.
    #[serde(default = "default_candidates_per_height")]
    pub candidates_per_height: u32,
    /// Server-side re-shard timeout in simulated seconds; `None` disables
    /// remapping. The mining benchmark leaves this off so every trial runs
    /// a single assignment to completion.
    #[serde(default)]
    pub remap_timeout: Option<f64>,
    /// Hard stop for any single simulated run.
    #[serde(default = "default_max_sim_time")]
    pub max_sim_time: f64,
    /// Mining benchmark only: perform the hashing for real and measure
    /// wall-clock time instead of running the virtual-time model. Hash
    /// counts stay deterministic; times become machine-dependent, so this
    /// is strictly a micro-benchmark mode.
    #[serde(default)]
    pub real_hash: bool,
    /// Test hook: corrupt one verifier's recorded chain after the first
    /// campaign run so the conflict detector (and the caller's failure
    /// path) can be exercised on demand.
    #[serde(default)]
    pub inject_conflict: bool,
}

fn default_schema_version() -> u32 {
    CONFIG_SCHEMA_VERSION
}
fn default_trials() -> u64 {
    1000
}
fn default_hash_rate() -> f64 {
    1000.0
}
fn default_max_step() -> u32 {
    crate::pbft::DEFAULT_MAX_STEP
}
fn default_phase_window() -> f64 {
    0.5
}
fn default_heights() -> u64 {
    3
}
fn default_candidates_per_height() -> u32 {
    2
}
fn default_max_sim_time() -> f64 {
    3600.0
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 42,
            topology: Topology::default(),
            difficulty: DifficultyPolicy::default(),
            latency: LatencyBand::default(),
            drop_rate: 0.0,
            byzantine: Vec::new(),
            trials: default_trials(),
            hash_rate: default_hash_rate(),
            max_step: default_max_step(),
            phase_window: default_phase_window(),
            heights: default_heights(),
            candidates_per_height: default_candidates_per_height(),
            remap_timeout: None,
            max_sim_time: default_max_sim_time(),
            real_hash: false,
            inject_conflict: false,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(SimError::BadSchemaVersion(self.schema_version));
        }
        if !(0.0..1.0).contains(&self.drop_rate) {
            return Err(SimError::BadDropRate(self.drop_rate));
        }
        if self.trials == 0 {
            return Err(SimError::NoTrials);
        }
        if !(self.latency.min >= 0.0 && self.latency.min <= self.latency.max) {
            return Err(SimError::BadLatency(self.latency.min, self.latency.max));
        }
        if self.topology.miners == 0 || self.topology.verifiers == 0 {
            return Err(SimError::EmptyTopology);
        }
        for b in &self.byzantine {
            if b.verifier >= self.topology.verifiers {
                return Err(SimError::BadByzantineIndex(b.verifier));
            }
        }
        match self.difficulty {
            DifficultyPolicy::Fixed { difficulty } => {
                if difficulty == 0 {
                    return Err(SimError::BadDifficultyBand(0, 0));
                }
            }
            DifficultyPolicy::LogUniform { min, max } => {
                if min == 0 || min > max {
                    return Err(SimError::BadDifficultyBand(min, max));
                }
            }
        }
        if self.hash_rate.is_nan() || self.hash_rate <= 0.0 {
            return Err(SimError::BadHashRate(self.hash_rate));
        }
        if self.phase_window.is_nan() || self.phase_window <= 0.0 {
            return Err(SimError::BadPhaseWindow(self.phase_window));
        }
        if self.max_sim_time.is_nan() || self.max_sim_time <= 0.0 {
            return Err(SimError::BadMaxSimTime(self.max_sim_time));
        }
        if self.heights == 0 {
            return Err(SimError::NoHeights);
        }
        if self.candidates_per_height == 0 {
            return Err(SimError::NoCandidates);
        }
        Ok(())
    }

    /// Additional precondition for safety campaigns: corrupted verifiers
    /// must stay a strict minority third, otherwise no safety claim holds.
    pub fn validate_campaign(&self) -> Result<(), SimError> {
        self.validate()?;
        if 3 * self.byzantine.len() as u64 >= self.topology.verifiers as u64 {
            return Err(SimError::TooManyByzantine {
                got: self.byzantine.len(),
                size: self.topology.verifiers,
            });
        }
        Ok(())
    }
}

/// Verdict a verifier group reaches on a candidate block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    /// A quorum certificate for the candidate appeared on the network.
    V,
    /// The group never certified the candidate (committed empty rounds,
    /// stalled, or gave up entirely).
    I,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::V => "V",
            Verdict::I => "I",
        })
    }
}

/// One benchmark measurement: how long one arm of one trial took and how
/// much work it burned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: u64,
    pub arm: String,
    pub difficulty: u64,
    pub solve_time: f64,
    pub hashes: u64,
}
