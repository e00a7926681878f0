//! Verifier-group verdict grid.
//!
//! Six groups of four verifiers each process candidate blocks: the A
//! groups receive a genuinely valid block, the B groups a block whose
//! proof of work is broken. Groups 1/2/3 contain one, two, and three
//! corrupted verifiers. Corrupted verifiers in the B groups conspire to
//! certify the bad block; in the A groups they stonewall with empty votes,
//! except in group A2 where each flips a per-trial coin between honest
//! cooperation and stonewalling.
//!
//! A trial's verdict is taken from the wire: valid (V) when any round
//! carries a quorum of distinct precommits for the fed candidate, invalid
//! (I) otherwise. That observer's view is what makes the three-conspirator
//! groups dangerous: their certificate for a bad block is real even though
//! no honest verifier ever signs it.

use std::collections::BTreeMap;

use rand::Rng;

use crate::block::Block;
use crate::mining::{mine_shard, BlockTemplate, MinerId, MinerStats, ShardingServer};
use crate::pbft::{quorum, VerifierGroup, VerifierId};
use crate::pow::StopSignal;
use crate::Transaction;

use super::driver::{run_net, ByzBehavior, FixedCandidates, NetConfig};
use super::fabric::ScriptedFabric;
use super::rng::{purpose, stream};
use super::{SimConfig, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Exp2Row {
    pub group: String,
    pub verdicts: Vec<Verdict>,
}

const GROUPS: [(&str, u32, bool); 6] = [
    ("A1", 1, true),
    ("A2", 2, true),
    ("A3", 3, true),
    ("B1", 1, false),
    ("B2", 2, false),
    ("B3", 3, false),
];

/// Run the full grid: one row per group, one verdict per trial.
pub fn run_experiment_2(cfg: &SimConfig) -> Vec<Exp2Row> {
    GROUPS
        .iter()
        .map(|&(name, bad, valid)| Exp2Row {
            group: name.to_string(),
            verdicts: (0..cfg.trials)
                .map(|trial| run_group_trial(cfg, name, bad, valid, trial))
                .collect(),
        })
        .collect()
}

fn group_index(name: &str) -> u64 {
    GROUPS.iter().position(|g| g.0 == name).unwrap() as u64
}

fn run_group_trial(cfg: &SimConfig, name: &str, bad: u32, valid: bool, trial: u64) -> Verdict {
    let size = 4u32;
    let gidx = group_index(name);
    let genesis = crate::hash::keccak256(&[b"exp2-genesis".as_slice(), &gidx.to_be_bytes(), &trial.to_be_bytes()].concat());

    let candidate = make_candidate(genesis, gidx, trial, valid);
    let target = candidate.hash();

    // Corrupted verifiers take the high indices; the proposer rotation
    // still hands them the lead in some rounds.
    let mut byzantine = BTreeMap::new();
    for v in (size - bad)..size {
        let behavior = if name == "A2" {
            let mut coin = stream(cfg.seed, &[purpose::BYZ_COIN, gidx, trial, v as u64]);
            if coin.random::<bool>() {
                // Cooperative this trial: plays fully honest.
                continue;
            }
            ByzBehavior::Conspire { target: None }
        } else if valid {
            // Conspirators in the A groups deny the valid block.
            ByzBehavior::Conspire { target: None }
        } else {
            // Conspirators in the B groups push the invalid block.
            ByzBehavior::Conspire { target: Some(candidate.clone()) }
        };
        byzantine.insert(v, behavior);
    }

    let net_cfg = NetConfig {
        group: VerifierGroup::new((0..size).map(VerifierId).collect()).unwrap(),
        scheme_seed: cfg.seed ^ (gidx << 32) ^ trial,
        genesis,
        max_step: cfg.max_step,
        phase_window: cfg.phase_window,
        target_height: 1,
        max_sim_time: cfg.max_sim_time,
        byzantine,
    };
    let mut fabric = ScriptedFabric { delay: 0.01, rules: Vec::new() };
    let mut source = FixedCandidates(BTreeMap::from([(1u64, vec![candidate])]));
    let out = run_net(&net_cfg, &mut fabric, &mut source);

    if out.has_commit_certificate(1, target, quorum(size as u64)) {
        Verdict::V
    } else {
        Verdict::I
    }
}

/// Mine a real block at `genesis`, then break its proof of work when an
/// invalid candidate is wanted. The header still parses and the
/// transaction root still checks out; only the work is wrong.
fn make_candidate(genesis: crate::hash::Hash256, gidx: u64, trial: u64, valid: bool) -> Block {
    let template = BlockTemplate {
        prev_hash: genesis,
        difficulty: 16,
        timestamp: 1_700_000_000 + trial,
        transactions: vec![Transaction::new(
            [gidx.to_be_bytes(), trial.to_be_bytes()].concat(),
        )],
        receiver: vec![0xbb; 20],
    };
    let mut server = ShardingServer::new(template).unwrap();
    let assignment = server
        .map_shards(&[MinerId::from_index(gidx * 1000 + trial)])
        .unwrap()
        .remove(0);
    let result = mine_shard(&assignment, &StopSignal::new(), &mut MinerStats::default()).unwrap();
    let mut block = server.build_block(&result).unwrap();
    if !valid {
        // Nudge the nonce off the solution. At difficulty 16 a neighboring
        // nonce passes with probability 1/16, so walk until it fails.
        let target = crate::pow::Target::from_difficulty(block.header.difficulty).unwrap();
        loop {
            block.header.nonce = block.header.nonce.wrapping_add(1);
            if !crate::pow::check_pow(&block.hash(), &target) {
                break;
            }
        }
    }
    block
}
