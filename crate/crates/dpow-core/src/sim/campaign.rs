//! Randomized safety campaign and the scripted lock/unlock regression.
//!
//! Each campaign run drives a verifier group through several heights over
//! a lossy fabric, with any configured corrupted verifiers attached, then
//! audits the honest survivors: committed chains must be pairwise
//! prefix-consistent, no height may carry two different blocks, and no
//! honest verifier may have signed two different hashes for the same
//! phase of the same round.
//!
//! The scripted scenario pins the lock dance: verifier A alone collects a
//! precommit quorum for block X and commits, the others miss it thanks to
//! three dropped precommits; the next proposer (never having locked)
//! offers a different block Y, which the two lock holders refuse; the
//! round after that, a lock holder re-proposes X and everyone left
//! converges on it. X must be the only block ever committed.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::block::Block;
use crate::hash::{keccak256, Hash256};
use crate::mining::{mine_shard, BlockTemplate, MinerId, MinerStats, ShardingServer};
use crate::pbft::{Phase, VerifierGroup, VerifierId};
use crate::pow::StopSignal;
use crate::Transaction;

use super::driver::{
    run_net, ByzBehavior, CandidateSource, NetConfig, NetOutcome, PerVerifierCandidates,
};
use super::fabric::{DropRule, MsgKind, ScriptedFabric, UniformFabric};
use super::rng::{purpose, stream};
use super::{ByzantineStrategy, SimConfig, SimError};

/// Outcome of one campaign run, in replay-comparable form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u64,
    /// Committed chains of the honest verifiers, as hex block hashes.
    pub chains: Vec<Vec<String>>,
    /// Honest verifiers that gave up on some height.
    pub aborted: Vec<u32>,
    /// Height conflicts found by the auditor in this run.
    pub conflicts: u64,
    /// Double-signed (phase, height, round) slots found in this run.
    pub double_signs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub target_hash: String,
    pub decoy_hash: String,
    /// Every honest verifier committed the target at height 1.
    pub all_committed_target: bool,
    /// Some verifier committed the decoy (must never happen).
    pub decoy_committed: bool,
    pub conflicts: u64,
    pub double_signs: u64,
    /// Round in which each verifier committed height 1, if it did.
    pub commit_rounds: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub runs: u64,
    /// Runs containing at least one height conflict.
    pub conflict_runs: u64,
    /// Total conflicting heights across all runs.
    pub conflicts: u64,
    /// Total double-signed slots across all runs.
    pub double_signs: u64,
    /// Runs where every honest verifier committed every height.
    pub fully_committed_runs: u64,
    /// Runs where some honest verifier aborted a height.
    pub aborted_runs: u64,
    pub total_messages: u64,
    pub total_bytes: u64,
    pub scenario: ScenarioReport,
}

impl CampaignReport {
    /// The property the campaign exists to check.
    pub fn safe(&self) -> bool {
        self.conflicts == 0
            && self.double_signs == 0
            && self.scenario.conflicts == 0
            && self.scenario.double_signs == 0
            && self.scenario.all_committed_target
            && !self.scenario.decoy_committed
    }
}

/// Candidates mined on demand at whatever tip a verifier asks for, with a
/// per-verifier ordering shuffle so proposers do not all agree on the
/// "first" candidate.
struct LazyMinedCandidates {
    seed: u64,
    run: u64,
    per_height: u32,
    difficulty: u64,
    cache: BTreeMap<(u64, Hash256), Vec<Block>>,
}

impl CandidateSource for LazyMinedCandidates {
    fn candidates(&mut self, height: u64, tip: Hash256, verifier: VerifierId) -> Vec<Block> {
        let (per_height, difficulty, run) = (self.per_height, self.difficulty, self.run);
        let mut blocks = self
            .cache
            .entry((height, tip))
            .or_insert_with(|| {
                (0..per_height as u64)
                    .map(|j| mine_candidate(tip, run << 24 | height << 8 | j, difficulty))
                    .collect()
            })
            .clone();
        let mut order = stream(
            self.seed,
            &[purpose::SHUFFLE, run, height, verifier.0 as u64],
        );
        blocks.shuffle(&mut order);
        blocks
    }
}

/// Mine one real block extending `tip`, salted so distinct salts give
/// distinct blocks.
pub(crate) fn mine_candidate(tip: Hash256, salt: u64, difficulty: u64) -> Block {
    let template = BlockTemplate {
        prev_hash: tip,
        difficulty,
        timestamp: 1_700_000_000,
        transactions: vec![Transaction::new(salt.to_be_bytes().to_vec())],
        receiver: vec![0xaa; 20],
    };
    let mut server = ShardingServer::new(template).expect("positive difficulty");
    let assignment = server
        .map_shards(&[MinerId::from_index(salt)])
        .expect("one miner")
        .remove(0);
    let result = mine_shard(&assignment, &StopSignal::new(), &mut MinerStats::default())
        .expect("search space is effectively unbounded");
    server.build_block(&result).expect("self-mined block verifies")
}

/// Chains as hash sequences, audit them for conflicts: any two honest
/// chains must agree on their common prefix (which also rules out two
/// different blocks at one height).
fn count_conflicts(chains: &[Vec<Hash256>]) -> u64 {
    let mut conflicts = 0;
    for (i, a) in chains.iter().enumerate() {
        for b in chains.iter().skip(i + 1) {
            let common = a.len().min(b.len());
            conflicts += (0..common).filter(|&h| a[h] != b[h]).count() as u64;
        }
    }
    conflicts
}

/// Per-verifier audit: an honest verifier must never sign two different
/// hashes for the same (phase, height, round).
fn count_double_signs(out: &NetOutcome) -> u64 {
    let mut total = 0;
    for f in out.finals.iter().filter(|f| f.honest) {
        let mut seen: BTreeMap<(Phase, u64, u32), Hash256> = BTreeMap::new();
        for v in f.state.sent_votes() {
            match seen.entry((v.phase, v.height, v.round)) {
                std::collections::btree_map::Entry::Vacant(e) => {
                    e.insert(v.block_hash);
                }
                std::collections::btree_map::Entry::Occupied(e) => {
                    if *e.get() != v.block_hash {
                        total += 1;
                    }
                }
            }
        }
    }
    total
}

fn strategy_behavior(
    cfg: &SimConfig,
    run: u64,
    verifier: u32,
    strategy: ByzantineStrategy,
) -> Option<ByzBehavior> {
    match strategy {
        ByzantineStrategy::ConspireValidateInvalid => Some(ByzBehavior::Conspire { target: None }),
        ByzantineStrategy::VoteMixed => {
            let mut coin = stream(
                cfg.seed,
                &[purpose::BYZ_COIN, purpose::CAMPAIGN, run, verifier as u64],
            );
            if coin.random::<bool>() {
                None
            } else {
                Some(ByzBehavior::Conspire { target: None })
            }
        }
        ByzantineStrategy::Withhold => Some(ByzBehavior::Withhold),
        ByzantineStrategy::Equivocate => Some(ByzBehavior::Equivocate),
    }
}

fn run_once(cfg: &SimConfig, run: u64) -> (NetOutcome, RunRecord) {
    let size = cfg.topology.verifiers;
    let genesis = keccak256(&[b"campaign-genesis".as_slice(), &run.to_be_bytes()].concat());

    let mut byzantine = BTreeMap::new();
    for b in &cfg.byzantine {
        if let Some(behavior) = strategy_behavior(cfg, run, b.verifier, b.strategy) {
            byzantine.insert(b.verifier, behavior);
        }
    }

    let net_cfg = NetConfig {
        group: VerifierGroup::new((0..size).map(VerifierId).collect()).unwrap(),
        scheme_seed: stream(cfg.seed, &[purpose::CAMPAIGN, run, 0]).random(),
        genesis,
        max_step: cfg.max_step,
        phase_window: cfg.phase_window,
        target_height: cfg.heights,
        max_sim_time: cfg.max_sim_time,
        byzantine,
    };
    let mut fabric = UniformFabric::new(
        cfg.latency,
        cfg.drop_rate,
        stream(cfg.seed, &[purpose::FABRIC, run]),
    );
    let mut source = LazyMinedCandidates {
        seed: cfg.seed,
        run,
        per_height: cfg.candidates_per_height,
        difficulty: 16,
        cache: BTreeMap::new(),
    };
    let out = run_net(&net_cfg, &mut fabric, &mut source);

    let mut chains = out.honest_chains();
    if cfg.inject_conflict && run == 0 {
        // Test hook: present the auditor with a fabricated pair of honest
        // verifiers that committed different height-1 blocks.
        let fake_a = keccak256(b"injected-conflict-a");
        let fake_b = keccak256(b"injected-conflict-b");
        chains.push(vec![fake_a]);
        chains.push(vec![fake_b]);
    }
    let conflicts = count_conflicts(&chains);
    let double_signs = count_double_signs(&out);
    let record = RunRecord {
        run,
        chains: chains
            .iter()
            .map(|c| c.iter().map(|h| h.to_hex()).collect())
            .collect(),
        aborted: out
            .finals
            .iter()
            .filter(|f| f.honest && f.aborted)
            .map(|f| f.id.0)
            .collect(),
        conflicts,
        double_signs,
    };
    (out, record)
}

/// Run the campaign: `config.trials` randomized executions plus the
/// scripted scenario.
pub fn run_safety_campaign(cfg: &SimConfig) -> Result<(CampaignReport, Vec<RunRecord>), SimError> {
    cfg.validate_campaign()?;
    let mut records = Vec::with_capacity(cfg.trials as usize);
    let mut report = CampaignReport {
        runs: cfg.trials,
        conflict_runs: 0,
        conflicts: 0,
        double_signs: 0,
        fully_committed_runs: 0,
        aborted_runs: 0,
        total_messages: 0,
        total_bytes: 0,
        scenario: run_lock_scenario(),
    };
    for run in 0..cfg.trials {
        let (out, record) = run_once(cfg, run);
        report.conflicts += record.conflicts;
        report.double_signs += record.double_signs;
        if record.conflicts > 0 {
            report.conflict_runs += 1;
        }
        let full = out
            .finals
            .iter()
            .filter(|f| f.honest)
            .all(|f| f.state.chain().len() as u64 == cfg.heights);
        if full {
            report.fully_committed_runs += 1;
        }
        if !record.aborted.is_empty() {
            report.aborted_runs += 1;
        }
        report.total_messages += out.total_messages;
        report.total_bytes += out.total_bytes;
        records.push(record);
    }
    Ok((report, records))
}

/// The deterministic lock/unlock regression case. Four honest verifiers;
/// scripted drops isolate one early commit and force a re-proposal from a
/// lock before the group converges.
pub fn run_lock_scenario() -> ScenarioReport {
    let genesis = keccak256(b"lock-scenario-genesis");
    let target = mine_candidate(genesis, 1, 16);
    let decoy = mine_candidate(genesis, 2, 16);
    assert_ne!(target.hash(), decoy.hash());

    // Verifier 1 proposes first (round 0), verifier 2 next, then verifier
    // 3. Everyone offers the target except verifier 2, which would propose
    // the decoy if it reaches round 1 unlocked.
    let mut lists = PerVerifierCandidates::default();
    lists.0.insert((1, 0), vec![target.clone()]);
    lists.0.insert((1, 1), vec![target.clone()]);
    lists.0.insert((1, 2), vec![decoy.clone(), target.clone()]);
    lists.0.insert((1, 3), vec![target.clone()]);

    // Round 0: verifier 2 misses two prevotes, so it alone fails to lock;
    // verifier 1's precommit reaches nobody, so verifier 1 alone commits.
    let rules = vec![
        DropRule { src: 3, dst: 2, kind: MsgKind::Prevote, height: 1, round: 0 },
        DropRule { src: 0, dst: 2, kind: MsgKind::Prevote, height: 1, round: 0 },
        DropRule { src: 1, dst: 0, kind: MsgKind::Precommit, height: 1, round: 0 },
        DropRule { src: 1, dst: 2, kind: MsgKind::Precommit, height: 1, round: 0 },
        DropRule { src: 1, dst: 3, kind: MsgKind::Precommit, height: 1, round: 0 },
    ];
    let mut fabric = ScriptedFabric { delay: 0.01, rules };

    let net_cfg = NetConfig {
        group: VerifierGroup::new((0..4).map(VerifierId).collect()).unwrap(),
        scheme_seed: 0x10c4,
        genesis,
        max_step: 20,
        phase_window: 0.5,
        target_height: 1,
        max_sim_time: 600.0,
        byzantine: BTreeMap::new(),
    };
    let out = run_net(&net_cfg, &mut fabric, &mut lists);

    let chains = out.honest_chains();
    let target_hash = target.hash();
    let decoy_hash = decoy.hash();
    let commit_rounds = out
        .finals
        .iter()
        .map(|f| f.state.chain().first().map(|c| c.precommits[0].round))
        .collect();
    ScenarioReport {
        target_hash: target_hash.to_hex(),
        decoy_hash: decoy_hash.to_hex(),
        all_committed_target: chains.iter().all(|c| c.first() == Some(&target_hash)),
        decoy_committed: chains.iter().any(|c| c.contains(&decoy_hash)),
        conflicts: count_conflicts(&chains),
        double_signs: count_double_signs(&out),
        commit_rounds,
    }
}
