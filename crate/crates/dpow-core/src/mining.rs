//! Sharding server and miner protocol.
//!
//! The server builds a block template and hands each miner the same header
//! fields and coinbase Merkle branch, differing only in the miner id that
//! prefixes the coinbase. Every coinbase a miner can construct therefore
//! starts with its own id, so two miners can never hash the same header
//! preimage: distinct coinbases give distinct roots (barring a Keccak
//! collision, which [`collision_probability`] quantifies).

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::{Block, BlockHeader, CoinbaseTx, Transaction};
use crate::hash::Hash256;
use crate::merkle::{apply_branch, merkle_branch, MerkleBranch};
use crate::pow::{check_pow, search_nonce, SearchOutcome, StopSignal, Target};

/// Fixed miner id width. Equal-length ids make the no-prefix property
/// unconditional: no id can be a prefix of a different id.
pub const MINER_ID_LEN: usize = 20;

/// Width of the big-endian extra-data counter in the coinbase.
pub const EXTRA_LEN: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MiningError {
    #[error("duplicate miner id {0}")]
    DuplicateMinerId(MinerId),
    #[error("cannot map shards to an empty miner list")]
    NoMiners,
    #[error("difficulty must be nonzero")]
    ZeroDifficulty,
}

/// Address-like miner identity, exactly [`MINER_ID_LEN`] bytes.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MinerId(#[serde(with = "hex_array")] pub [u8; MINER_ID_LEN]);

impl MinerId {
    /// Deterministic id for simulations: the index in big-endian, left
    /// padded to 20 bytes.
    pub fn from_index(index: u64) -> Self {
        let mut id = [0u8; MINER_ID_LEN];
        id[MINER_ID_LEN - 8..].copy_from_slice(&index.to_be_bytes());
        MinerId(id)
    }

    pub fn as_bytes(&self) -> &[u8; MINER_ID_LEN] {
        &self.0
    }
}

impl fmt::Display for MinerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for MinerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Everything a miner needs to search its shard.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardAssignment {
    pub prev_hash: Hash256,
    pub difficulty: u64,
    pub timestamp: u64,
    pub coinbase_branch: MerkleBranch,
    pub coinbase_receiver: Vec<u8>,
    pub miner_id: MinerId,
    pub epoch: u64,
}

impl ShardAssignment {
    /// Coinbase for one point of this miner's extra-data space.
    pub fn coinbase_for(&self, extra: u64) -> CoinbaseTx {
        CoinbaseTx {
            miner_id: self.miner_id.0.to_vec(),
            extra: extra.to_be_bytes().to_vec(),
            receiver: self.coinbase_receiver.clone(),
        }
    }

    /// Transaction root induced by a coinbase choice.
    pub fn root_for(&self, coinbase: &CoinbaseTx) -> Hash256 {
        apply_branch(&coinbase.hash(), &self.coinbase_branch)
    }

    /// Header candidate for a (root, nonce) pair.
    pub fn header_for(&self, tx_root: Hash256, nonce: u32) -> BlockHeader {
        BlockHeader {
            prev_hash: self.prev_hash,
            difficulty: self.difficulty,
            timestamp: self.timestamp,
            tx_root,
            nonce,
        }
    }
}

/// A miner's claim that it solved the puzzle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkResult {
    pub assignment_epoch: u64,
    pub coinbase: CoinbaseTx,
    pub nonce: u32,
    pub claimed_root: Hash256,
}

/// Monotone per-miner counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerStats {
    pub hashes_tried: u64,
    pub shards_received: u64,
    pub solutions_found: u64,
}

/// Server-side verdict on a submitted [`WorkResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SubmissionVerdict {
    Accepted,
    Stale,
    Invalid,
}

/// Block contents the server is ready to mine on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockTemplate {
    pub prev_hash: Hash256,
    pub difficulty: u64,
    pub timestamp: u64,
    /// Non-coinbase transactions, in tree order after the coinbase.
    pub transactions: Vec<Transaction>,
    pub receiver: Vec<u8>,
}

/// Master node: owns the template, maps shards, verifies submissions.
#[derive(Debug, Clone)]
pub struct ShardingServer {
    template: BlockTemplate,
    branch: MerkleBranch,
    target: Target,
    epoch: u64,
    current_miners: BTreeSet<MinerId>,
}

impl ShardingServer {
    pub fn new(template: BlockTemplate) -> Result<Self, MiningError> {
        let target =
            Target::from_difficulty(template.difficulty).map_err(|_| MiningError::ZeroDifficulty)?;
        // The branch for leaf 0 depends only on the other leaves, so a zero
        // placeholder stands in for the not-yet-chosen coinbase.
        let mut leaves = vec![Hash256::ZERO];
        leaves.extend(template.transactions.iter().map(Transaction::hash));
        let branch = merkle_branch(&leaves, 0).expect("leaf list is never empty");
        Ok(ShardingServer {
            template,
            branch,
            target,
            epoch: 0,
            current_miners: BTreeSet::new(),
        })
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn template(&self) -> &BlockTemplate {
        &self.template
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    /// One assignment per miner, all sharing the template fields and branch.
    /// Each call starts a new epoch, invalidating outstanding assignments.
    pub fn map_shards(&mut self, miners: &[MinerId]) -> Result<Vec<ShardAssignment>, MiningError> {
        if miners.is_empty() {
            return Err(MiningError::NoMiners);
        }
        let mut seen = BTreeSet::new();
        for id in miners {
            if !seen.insert(*id) {
                return Err(MiningError::DuplicateMinerId(*id));
            }
        }
        self.epoch += 1;
        self.current_miners = seen;
        Ok(miners
            .iter()
            .map(|id| ShardAssignment {
                prev_hash: self.template.prev_hash,
                difficulty: self.template.difficulty,
                timestamp: self.template.timestamp,
                coinbase_branch: self.branch.clone(),
                coinbase_receiver: self.template.receiver.clone(),
                miner_id: *id,
                epoch: self.epoch,
            })
            .collect())
    }

    /// Check a submission against the current epoch.
    pub fn verify_submission(&self, w: &WorkResult) -> SubmissionVerdict {
        if w.assignment_epoch < self.epoch {
            return SubmissionVerdict::Stale;
        }
        if w.assignment_epoch > self.epoch {
            return SubmissionVerdict::Invalid;
        }
        let cb = &w.coinbase;
        let known_miner = cb.miner_id.len() == MINER_ID_LEN
            && self
                .current_miners
                .contains(&MinerId(cb.miner_id[..].try_into().unwrap()));
        if !known_miner
            || cb.extra.len() != EXTRA_LEN
            || cb.receiver != self.template.receiver
        {
            return SubmissionVerdict::Invalid;
        }
        if apply_branch(&cb.hash(), &self.branch) != w.claimed_root {
            return SubmissionVerdict::Invalid;
        }
        let header = BlockHeader {
            prev_hash: self.template.prev_hash,
            difficulty: self.template.difficulty,
            timestamp: self.template.timestamp,
            tx_root: w.claimed_root,
            nonce: w.nonce,
        };
        if !check_pow(&header.hash(), &self.target) {
            return SubmissionVerdict::Invalid;
        }
        SubmissionVerdict::Accepted
    }

    /// Full block for an accepted result. The tx root recomputed from the
    /// bodies must equal the branch-derived claimed root; this cross-checks
    /// the two Merkle code paths on every assembled block.
    pub fn build_block(&self, w: &WorkResult) -> Option<Block> {
        if self.verify_submission(w) != SubmissionVerdict::Accepted {
            return None;
        }
        let block = Block {
            header: BlockHeader {
                prev_hash: self.template.prev_hash,
                difficulty: self.template.difficulty,
                timestamp: self.template.timestamp,
                tx_root: w.claimed_root,
                nonce: w.nonce,
            },
            coinbase: w.coinbase.clone(),
            transactions: self.template.transactions.clone(),
        };
        assert!(
            block.root_consistent(),
            "branch-derived root disagrees with full-tree root"
        );
        Some(block)
    }
}

/// Miner loop: walk extras 0, 1, 2, ... in big-endian order, and for each
/// one search the full 32-bit nonce space, until a hit or the stop signal.
pub fn mine_shard(
    a: &ShardAssignment,
    stop: &StopSignal,
    stats: &mut MinerStats,
) -> Option<WorkResult> {
    mine_shard_bounded(a, stop, stats, u64::MAX, u32::MAX)
}

/// [`mine_shard`] with explicit bounds on extras tried and nonces per extra,
/// for tests and the virtual-time simulator. Returns the first success.
pub fn mine_shard_bounded(
    a: &ShardAssignment,
    stop: &StopSignal,
    stats: &mut MinerStats,
    max_extras: u64,
    nonces_per_extra: u32,
) -> Option<WorkResult> {
    let target = Target::from_difficulty(a.difficulty).ok()?;
    for extra in 0..max_extras {
        if stop.is_stopped() {
            return None;
        }
        let coinbase = a.coinbase_for(extra);
        let root = a.root_for(&coinbase);
        let header = a.header_for(root, 0);
        let report = search_nonce(&header, &target, 0, nonces_per_extra, stop)
            .expect("0 <= nonces_per_extra");
        stats.hashes_tried += report.hashes;
        match report.outcome {
            SearchOutcome::Found { nonce, .. } => {
                stats.solutions_found += 1;
                return Some(WorkResult {
                    assignment_epoch: a.epoch,
                    coinbase,
                    nonce,
                    claimed_root: root,
                });
            }
            SearchOutcome::Stopped => return None,
            SearchOutcome::Exhausted => continue,
        }
    }
    None
}

/// Lower bound on the probability that at least two of `m` distinct
/// coinbase messages collide under a 256-bit hash: the birthday quadratic
/// m(m-1)/2^257, clamped to [0, 1] and evaluated in log space so values
/// like 2^-225 survive instead of underflowing.
pub fn collision_probability(m: f64) -> f64 {
    if m.is_nan() || m <= 1.0 {
        return 0.0;
    }
    let ln_p = m.ln() + (m - 1.0).ln() - 257.0 * std::f64::consts::LN_2;
    ln_p.exp().min(1.0)
}

/// Hex serde for fixed-size id arrays.
mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8; 20], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<[u8; 20], D::Error> {
        let s = String::deserialize(de)?;
        let v = hex::decode(&s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom("expected 20 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn template(difficulty: u64) -> BlockTemplate {
        BlockTemplate {
            prev_hash: Hash256([0x77; 32]),
            difficulty,
            timestamp: 1_700_000_123,
            transactions: vec![
                Transaction::new(b"tx-a".to_vec()),
                Transaction::new(b"tx-b".to_vec()),
                Transaction::new(b"tx-c".to_vec()),
            ],
            receiver: vec![0xaa; 20],
        }
    }

    fn ids(n: u64) -> Vec<MinerId> {
        (1..=n).map(MinerId::from_index).collect()
    }

    #[test]
    fn map_shards_single_miner() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        let out = server.map_shards(&ids(1)).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].epoch, 1);
        assert_eq!(out[0].miner_id, MinerId::from_index(1));
    }

    #[test]
    fn map_shards_seven_miners_share_everything_but_id() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        let out = server.map_shards(&ids(7)).unwrap();
        assert_eq!(out.len(), 7);
        let first = &out[0];
        let mut seen = BTreeSet::new();
        for a in &out {
            assert_eq!(a.prev_hash, first.prev_hash);
            assert_eq!(a.difficulty, first.difficulty);
            assert_eq!(a.timestamp, first.timestamp);
            assert_eq!(a.coinbase_branch, first.coinbase_branch);
            assert_eq!(a.coinbase_receiver, first.coinbase_receiver);
            assert_eq!(a.epoch, first.epoch);
            assert!(seen.insert(a.miner_id), "duplicate id in output");
        }
    }

    #[test]
    fn map_shards_rejects_duplicates_and_empty() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        let dup = vec![MinerId::from_index(3), MinerId::from_index(3)];
        assert_eq!(
            server.map_shards(&dup),
            Err(MiningError::DuplicateMinerId(MinerId::from_index(3)))
        );
        assert_eq!(server.map_shards(&[]), Err(MiningError::NoMiners));
        // failed calls must not burn an epoch
        assert_eq!(server.epoch(), 0);
    }

    #[test]
    fn epoch_increments_per_remap() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        for expect in 1..=4 {
            let out = server.map_shards(&ids(2)).unwrap();
            assert_eq!(out[0].epoch, expect);
            assert_eq!(server.epoch(), expect);
        }
    }

    #[test]
    fn closed_loop_mine_then_accept() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        let a = server.map_shards(&ids(1)).unwrap().remove(0);
        let stop = StopSignal::new();
        let mut stats = MinerStats::default();
        let result = mine_shard(&a, &stop, &mut stats).expect("difficulty 2^12 must be minable");
        assert_eq!(server.verify_submission(&result), SubmissionVerdict::Accepted);
        assert!(stats.hashes_tried > 0);
        assert_eq!(stats.solutions_found, 1);

        let block = server.build_block(&result).unwrap();
        assert!(block.root_consistent());
        assert!(check_pow(&block.hash(), server.target()));
        assert_eq!(&block.coinbase.miner_id[..], a.miner_id.as_bytes());
    }

    #[test]
    fn stopped_miner_returns_none() {
        let mut server = ShardingServer::new(template(u64::MAX)).unwrap();
        let a = server.map_shards(&ids(1)).unwrap().remove(0);
        let stop = StopSignal::new();
        stop.stop();
        let mut stats = MinerStats::default();
        assert_eq!(mine_shard(&a, &stop, &mut stats), None);
        assert_eq!(stats.hashes_tried, 0);
    }

    #[test]
    fn stale_after_remap() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        let a = server.map_shards(&ids(1)).unwrap().remove(0);
        let stop = StopSignal::new();
        let mut stats = MinerStats::default();
        let result = mine_shard(&a, &stop, &mut stats).unwrap();
        server.map_shards(&ids(1)).unwrap();
        assert_eq!(server.verify_submission(&result), SubmissionVerdict::Stale);
    }

    #[test]
    fn tampering_makes_submission_invalid() {
        let mut server = ShardingServer::new(template(1 << 16)).unwrap();
        let a = server.map_shards(&ids(1)).unwrap().remove(0);
        let stop = StopSignal::new();
        let mut stats = MinerStats::default();
        let good = mine_shard(&a, &stop, &mut stats).unwrap();
        assert_eq!(server.verify_submission(&good), SubmissionVerdict::Accepted);

        let mut bad = good.clone();
        bad.nonce = bad.nonce.wrapping_add(1);
        assert_eq!(server.verify_submission(&bad), SubmissionVerdict::Invalid);

        let mut bad = good.clone();
        bad.claimed_root.0[0] ^= 1;
        assert_eq!(server.verify_submission(&bad), SubmissionVerdict::Invalid);

        let mut bad = good.clone();
        bad.coinbase.miner_id = MinerId::from_index(999).0.to_vec();
        assert_eq!(server.verify_submission(&bad), SubmissionVerdict::Invalid);

        let mut bad = good.clone();
        bad.coinbase.receiver = vec![0xbb; 20];
        assert_eq!(server.verify_submission(&bad), SubmissionVerdict::Invalid);

        let mut bad = good;
        bad.assignment_epoch += 1;
        assert_eq!(server.verify_submission(&bad), SubmissionVerdict::Invalid);
    }

    #[test]
    fn disjoint_roots_across_miners_small_extras() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        let out = server.map_shards(&ids(2)).unwrap();
        let roots = |a: &ShardAssignment| -> BTreeSet<Hash256> {
            (0..256u64).map(|e| a.root_for(&a.coinbase_for(e))).collect()
        };
        let r0 = roots(&out[0]);
        let r1 = roots(&out[1]);
        assert_eq!(r0.len(), 256, "extras must map to distinct roots");
        assert_eq!(r1.len(), 256);
        assert!(r0.is_disjoint(&r1), "miners share a root");
    }

    // Across 10^5 consecutive extras one miner must never repeat a root:
    // the root map stays injective at test scale.
    #[test]
    fn root_injective_over_many_extras() {
        let mut server = ShardingServer::new(template(1 << 12)).unwrap();
        let a = server.map_shards(&ids(1)).unwrap().remove(0);
        let mut seen = BTreeSet::new();
        for extra in 0..100_000u64 {
            assert!(
                seen.insert(a.root_for(&a.coinbase_for(extra))),
                "root collision at extra {extra}"
            );
        }
    }

    // Expected hashes to a solution at difficulty d is d (geometric with
    // success probability ~1/d). Mean of 200 independent puzzles must sit
    // within 3 standard errors of d.
    #[test]
    fn liveness_mean_trials_matches_difficulty() {
        let d = 256u64;
        let runs = 200;
        let mut total = 0u64;
        for i in 0..runs as u64 {
            let mut t = template(d);
            t.prev_hash = crate::hash::keccak256(&i.to_be_bytes());
            let mut server = ShardingServer::new(t).unwrap();
            let a = server.map_shards(&ids(1)).unwrap().remove(0);
            let mut stats = MinerStats::default();
            let stop = StopSignal::new();
            mine_shard(&a, &stop, &mut stats).unwrap();
            total += stats.hashes_tried;
        }
        let mean = total as f64 / runs as f64;
        let sigma_mean = d as f64 / (runs as f64).sqrt();
        assert!(
            (mean - d as f64).abs() <= 3.0 * sigma_mean,
            "mean {mean:.1} too far from {d} (3 sigma = {:.1})",
            3.0 * sigma_mean
        );
    }

    #[test]
    fn collision_probability_table_anchors() {
        assert_eq!(collision_probability(0.0), 0.0);
        assert_eq!(collision_probability(1.0), 0.0);
        let p128 = collision_probability(2f64.powi(128));
        assert!((p128 - 0.5).abs() / 0.5 < 0.01, "p(2^128) = {p128}");
        let p127 = collision_probability(2f64.powi(127));
        assert!((p127 - 0.125).abs() / 0.125 < 0.05, "p(2^127) = {p127}");
        // tiny values must not underflow to zero
        let p16 = collision_probability(2f64.powi(16));
        assert!(p16 > 0.0);
        assert!((p16.log2() - -225.0).abs() < 0.01, "p(2^16) = 2^{}", p16.log2());
    }

    #[test]
    fn collision_probability_monotone_and_clamped() {
        let mut prev = 0.0;
        for k in [2.0, 10.0, 1e6, 2f64.powi(64), 2f64.powi(120), 2f64.powi(129)] {
            let p = collision_probability(k);
            assert!(p >= prev, "not monotone at m={k}");
            assert!((0.0..=1.0).contains(&p));
            prev = p;
        }
        assert_eq!(collision_probability(2f64.powi(200)), 1.0);
    }

    #[test]
    fn miner_id_serde_and_display() {
        let id = MinerId::from_index(0xabcd);
        let json = serde_json::to_string(&id).unwrap();
        assert_eq!(json, format!("\"{id}\""));
        let back: MinerId = serde_json::from_str(&json).unwrap();
        assert_eq!(back, id);
    }
}
