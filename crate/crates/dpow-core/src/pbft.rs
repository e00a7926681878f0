//! Verifier-group agreement over mined blocks.
//!
//! Each height runs numbered rounds of propose → prevote → precommit. The
//! primary rotates per round; a verifier that sees a prevote quorum for the
//! block it validated locks that block and precommits it, and a precommit
//! quorum commits. A locked verifier re-proposes its lock when primary and
//! prevotes empty against anything else, so a block that might already be
//! committed somewhere can never be displaced. If a round decides nothing
//! the round number advances; hitting `max_step` abandons the height as a
//! suspected partition.
//!
//! All nondeterminism (delivery order, drops, byzantine peers) lives in the
//! caller: the state machine itself is a deterministic function of its
//! message inboxes, which is what makes simulation traces replayable.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::block::Block;
use crate::hash::{keccak256, Hash256};
use crate::pow::{check_pow, Target};
use crate::wire;

/// Votes needed to decide: the smallest integer strictly greater than 2M/3.
pub fn quorum(members: u64) -> u64 {
    2 * members / 3 + 1
}

/// Rounds per height before the group abandons it.
pub const DEFAULT_MAX_STEP: u32 = 20;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GroupError {
    #[error("verifier group cannot be empty")]
    Empty,
    #[error("duplicate verifier {0} in group")]
    DuplicateMember(VerifierId),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CertificateError {
    #[error("vote is not a precommit")]
    WrongPhase,
    #[error("vote targets a different height/round")]
    WrongRound,
    #[error("vote hash does not match the certified block")]
    HashMismatch,
    #[error("voter {0} is not a group member")]
    UnknownVoter(VerifierId),
    #[error("voter {0} appears twice")]
    DuplicateVoter(VerifierId),
    #[error("signature check failed for voter {0}")]
    BadSignature(VerifierId),
    #[error("{got} precommits, quorum needs {need}")]
    BelowQuorum { got: u64, need: u64 },
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VerifierId(pub u32);

impl fmt::Display for VerifierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

impl fmt::Debug for VerifierId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Fixed, ordered verifier membership for one period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierGroup {
    members: Vec<VerifierId>,
}

impl VerifierGroup {
    pub fn new(members: Vec<VerifierId>) -> Result<Self, GroupError> {
        if members.is_empty() {
            return Err(GroupError::Empty);
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &members {
            if !seen.insert(*m) {
                return Err(GroupError::DuplicateMember(*m));
            }
        }
        Ok(VerifierGroup { members })
    }

    pub fn members(&self) -> &[VerifierId] {
        &self.members
    }

    pub fn size(&self) -> u64 {
        self.members.len() as u64
    }

    pub fn quorum(&self) -> u64 {
        quorum(self.size())
    }

    pub fn contains(&self, id: VerifierId) -> bool {
        self.members.contains(&id)
    }
}

/// Round-robin primary: `members[(h + r) mod M]`.
pub fn primary_for(group: &VerifierGroup, height: u64, round: u32) -> VerifierId {
    let m = group.size();
    group.members[((height + u64::from(round)) % m) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Signature(pub Hash256);

/// Sign/verify abstraction. The protocol only needs that honest verifiers'
/// votes cannot be forged by the test harness's adversaries.
pub trait SignatureScheme {
    fn sign(&self, signer: VerifierId, payload: &[u8]) -> Signature;

    fn verify(&self, signer: VerifierId, payload: &[u8], sig: &Signature) -> bool {
        self.sign(signer, payload) == *sig
    }
}

/// Deterministic keyed-MAC stand-in: key(id) = keccak(seed ‖ id), and the
/// signature is keccak(key ‖ payload). Not a real signature scheme (anyone
/// holding the seed can sign for anyone); sufficient for a simulator whose
/// adversaries only ever sign as themselves.
#[derive(Debug, Clone, Copy)]
pub struct MacScheme {
    seed: u64,
}

impl MacScheme {
    pub fn new(seed: u64) -> Self {
        MacScheme { seed }
    }

    fn key(&self, id: VerifierId) -> Hash256 {
        let mut buf = [0u8; 12];
        buf[..8].copy_from_slice(&self.seed.to_be_bytes());
        buf[8..].copy_from_slice(&id.0.to_be_bytes());
        keccak256(&buf)
    }
}

impl SignatureScheme for MacScheme {
    fn sign(&self, signer: VerifierId, payload: &[u8]) -> Signature {
        let key = self.key(signer);
        let mut buf = Vec::with_capacity(32 + payload.len());
        buf.extend_from_slice(key.as_bytes());
        buf.extend_from_slice(payload);
        Signature(keccak256(&buf))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    Prevote,
    Precommit,
}

/// Signed round proposal; `block: None` is the explicit empty proposal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub height: u64,
    pub round: u32,
    pub block: Option<Block>,
    pub proposer: VerifierId,
    pub signature: Signature,
}

impl Proposal {
    pub fn new(
        height: u64,
        round: u32,
        block: Option<Block>,
        proposer: VerifierId,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        let payload = wire::proposal_signing_bytes(height, round, block.as_ref(), proposer);
        let signature = scheme.sign(proposer, &payload);
        Proposal {
            height,
            round,
            block,
            proposer,
            signature,
        }
    }

    pub fn verify(&self, scheme: &dyn SignatureScheme) -> bool {
        let payload =
            wire::proposal_signing_bytes(self.height, self.round, self.block.as_ref(), self.proposer);
        scheme.verify(self.proposer, &payload, &self.signature)
    }

    /// Hash of the carried block, or the zero sentinel for empty.
    pub fn block_hash(&self) -> Hash256 {
        self.block.as_ref().map_or(Hash256::ZERO, Block::hash)
    }
}

/// Signed phase vote; the all-zero hash votes for "no block".
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vote {
    pub phase: Phase,
    pub height: u64,
    pub round: u32,
    pub block_hash: Hash256,
    pub voter: VerifierId,
    pub signature: Signature,
}

impl Vote {
    pub fn new(
        phase: Phase,
        height: u64,
        round: u32,
        block_hash: Hash256,
        voter: VerifierId,
        scheme: &dyn SignatureScheme,
    ) -> Self {
        let payload = wire::vote_signing_bytes(phase, height, round, &block_hash, voter);
        let signature = scheme.sign(voter, &payload);
        Vote {
            phase,
            height,
            round,
            block_hash,
            voter,
            signature,
        }
    }

    pub fn verify(&self, scheme: &dyn SignatureScheme) -> bool {
        let payload =
            wire::vote_signing_bytes(self.phase, self.height, self.round, &self.block_hash, self.voter);
        scheme.verify(self.voter, &payload, &self.signature)
    }
}

/// A committed block plus the quorum of precommits that justified it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitCertificate {
    pub block: Block,
    pub precommits: Vec<Vote>,
}

impl CommitCertificate {
    /// Validates phase, height/round agreement, hash match, membership,
    /// signatures, voter uniqueness, and the quorum count.
    pub fn new(
        block: Block,
        precommits: Vec<Vote>,
        group: &VerifierGroup,
        scheme: &dyn SignatureScheme,
    ) -> Result<Self, CertificateError> {
        let hash = block.hash();
        let (height, round) = match precommits.first() {
            Some(v) => (v.height, v.round),
            None => (0, 0),
        };
        let mut seen = std::collections::BTreeSet::new();
        for v in &precommits {
            if v.phase != Phase::Precommit {
                return Err(CertificateError::WrongPhase);
            }
            if v.height != height || v.round != round {
                return Err(CertificateError::WrongRound);
            }
            if v.block_hash != hash {
                return Err(CertificateError::HashMismatch);
            }
            if !group.contains(v.voter) {
                return Err(CertificateError::UnknownVoter(v.voter));
            }
            if !seen.insert(v.voter) {
                return Err(CertificateError::DuplicateVoter(v.voter));
            }
            if !v.verify(scheme) {
                return Err(CertificateError::BadSignature(v.voter));
            }
        }
        let need = group.quorum();
        let got = precommits.len() as u64;
        if got < need {
            return Err(CertificateError::BelowQuorum { got, need });
        }
        Ok(CommitCertificate { block, precommits })
    }

    pub fn height(&self) -> u64 {
        self.precommits[0].height
    }
}

/// What one verifier's synchronous round produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Committed(Block),
    RoundAdvanced,
    Aborted,
}

/// One verifier's view of the protocol.
#[derive(Debug, Clone)]
pub struct ConsensusState {
    pub id: VerifierId,
    pub group: VerifierGroup,
    pub max_step: u32,
    height: u64,
    round: u32,
    genesis: Hash256,
    locked_block: Option<Block>,
    chain: Vec<CommitCertificate>,
    /// Block from this round's proposal that this verifier itself validated.
    validated: Option<Block>,
    /// Every vote this verifier ever signed, for double-sign audits.
    sent_votes: Vec<Vote>,
}

impl ConsensusState {
    pub fn new(id: VerifierId, group: VerifierGroup, genesis: Hash256, max_step: u32) -> Self {
        ConsensusState {
            id,
            group,
            max_step,
            height: 1,
            round: 0,
            genesis,
            locked_block: None,
            chain: Vec::new(),
            validated: None,
            sent_votes: Vec::new(),
        }
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn locked_block(&self) -> Option<&Block> {
        self.locked_block.as_ref()
    }

    pub fn chain(&self) -> &[CommitCertificate] {
        &self.chain
    }

    pub fn sent_votes(&self) -> &[Vote] {
        &self.sent_votes
    }

    /// Hash this height's blocks must link to.
    pub fn tip_hash(&self) -> Hash256 {
        self.chain.last().map_or(self.genesis, |c| c.block.hash())
    }

    pub fn is_primary(&self) -> bool {
        primary_for(&self.group, self.height, self.round) == self.id
    }

    /// Full block validation at the current tip: linkage, proof of work,
    /// and root consistency.
    pub fn validate_block(&self, block: &Block) -> bool {
        if block.header.prev_hash != self.tip_hash() {
            return false;
        }
        let Ok(target) = Target::from_difficulty(block.header.difficulty) else {
            return false;
        };
        check_pow(&block.hash(), &target) && block.root_consistent()
    }

    /// Primary path: propose the locked block if any, else the first valid
    /// candidate received in the collection window, else empty.
    pub fn compose_proposal(
        &self,
        scheme: &dyn SignatureScheme,
        candidates: &[Block],
    ) -> Proposal {
        let block = match &self.locked_block {
            Some(locked) => Some(locked.clone()),
            None => candidates.iter().find(|c| self.validate_block(c)).cloned(),
        };
        Proposal::new(self.height, self.round, block, self.id, scheme)
    }

    /// Stage 1: judge the round's proposal and pick the prevote hash.
    ///
    /// Anything malformed (bad signature, wrong proposer, wrong height or
    /// round, block failing validation) degrades to the empty prevote
    /// rather than an error. A locked verifier prevotes its lock only for a
    /// proposal carrying exactly that block and empty for everything else.
    pub fn process_proposal(
        &mut self,
        scheme: &dyn SignatureScheme,
        proposal: Option<&Proposal>,
    ) -> Hash256 {
        self.validated = None;
        let candidate = proposal.and_then(|p| {
            if p.height != self.height || p.round != self.round {
                return None;
            }
            if p.proposer != primary_for(&self.group, self.height, self.round) {
                return None;
            }
            if !p.verify(scheme) {
                return None;
            }
            p.block.as_ref().filter(|b| self.validate_block(b))
        });
        match (&self.locked_block, candidate) {
            (Some(locked), Some(block)) if *locked == *block => {
                let hash = block.hash();
                self.validated = Some(block.clone());
                hash
            }
            (Some(_), _) => Hash256::ZERO,
            (None, Some(block)) => {
                let hash = block.hash();
                self.validated = Some(block.clone());
                hash
            }
            (None, None) => Hash256::ZERO,
        }
    }

    /// Count one phase's inbox for the current (height, round): the first
    /// vote per member wins, everything malformed is dropped, and the
    /// result is the hash holding a quorum, or the zero hash when no
    /// non-empty hash does.
    pub fn tally_votes(
        &self,
        scheme: &dyn SignatureScheme,
        phase: Phase,
        votes: &[Vote],
    ) -> Hash256 {
        let mut first_per_voter: BTreeMap<VerifierId, Hash256> = BTreeMap::new();
        for v in votes {
            if v.phase != phase || v.height != self.height || v.round != self.round {
                continue;
            }
            if !self.group.contains(v.voter) || !v.verify(scheme) {
                continue;
            }
            first_per_voter.entry(v.voter).or_insert(v.block_hash);
        }
        let mut counts: BTreeMap<Hash256, u64> = BTreeMap::new();
        for hash in first_per_voter.values() {
            *counts.entry(*hash).or_insert(0) += 1;
        }
        counts
            .into_iter()
            .find(|(hash, count)| !hash.is_zero() && *count >= self.group.quorum())
            .map_or(Hash256::ZERO, |(hash, _)| hash)
    }

    /// Locking rule, applied to the prevote tally: adopt the quorum block
    /// as the lock only when it is the block this verifier itself validated
    /// (or already holds locked); a quorum for an unvalidated hash is
    /// someone else's problem. Returns the hash to precommit.
    pub fn apply_prevote_quorum(&mut self, quorum_hash: Hash256) -> Hash256 {
        if quorum_hash.is_zero() {
            return Hash256::ZERO;
        }
        if let Some(locked) = &self.locked_block {
            return if locked.hash() == quorum_hash {
                quorum_hash
            } else {
                Hash256::ZERO
            };
        }
        if let Some(validated) = &self.validated {
            if validated.hash() == quorum_hash {
                self.locked_block = Some(validated.clone());
                return quorum_hash;
            }
        }
        Hash256::ZERO
    }

    /// Commit rule, applied to the precommit tally: append the block when a
    /// non-empty quorum hash names the block this verifier holds and
    /// validated, attaching the justifying certificate. The lock is
    /// released only here.
    pub fn apply_precommit_quorum(
        &mut self,
        scheme: &dyn SignatureScheme,
        quorum_hash: Hash256,
        inbox: &[Vote],
    ) -> Option<Block> {
        if quorum_hash.is_zero() {
            return None;
        }
        let block = match (&self.locked_block, &self.validated) {
            (Some(locked), _) if locked.hash() == quorum_hash => locked.clone(),
            (_, Some(validated)) if validated.hash() == quorum_hash => validated.clone(),
            _ => return None,
        };
        let mut seen = std::collections::BTreeSet::new();
        let votes: Vec<Vote> = inbox
            .iter()
            .filter(|v| {
                v.phase == Phase::Precommit
                    && v.height == self.height
                    && v.round == self.round
                    && v.block_hash == quorum_hash
                    && self.group.contains(v.voter)
                    && v.verify(scheme)
                    && seen.insert(v.voter)
            })
            .cloned()
            .collect();
        let cert = CommitCertificate::new(block.clone(), votes, &self.group, scheme)
            .expect("tally quorum guarantees a valid certificate");
        self.chain.push(cert);
        self.height += 1;
        self.round = 0;
        self.locked_block = None;
        self.validated = None;
        Some(block)
    }

    /// No decision this round: move on, aborting the height at `max_step`.
    pub fn advance_round(&mut self) -> StepOutcome {
        self.validated = None;
        self.round += 1;
        if self.round >= self.max_step {
            StepOutcome::Aborted
        } else {
            StepOutcome::RoundAdvanced
        }
    }

    /// Sign a vote as this verifier and record it in the audit log.
    pub fn sign_vote(&mut self, scheme: &dyn SignatureScheme, phase: Phase, hash: Hash256) -> Vote {
        let vote = Vote::new(phase, self.height, self.round, hash, self.id, scheme);
        self.sent_votes.push(vote.clone());
        vote
    }
}

/// Messages one verifier received during a round.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepEnvironment<'a> {
    /// Blocks delivered by sharding servers (consulted only when primary).
    pub candidates: &'a [Block],
    /// The proposal the network delivered, if any.
    pub proposal: Option<&'a Proposal>,
    /// Peer prevotes; the verifier's own vote is added internally.
    pub prevotes: &'a [Vote],
    /// Peer precommits; ditto.
    pub precommits: &'a [Vote],
}

/// One verifier's full round: propose, prevote, precommit, then commit or
/// advance. Self-proposes when primary, otherwise judges the delivered
/// proposal.
pub fn consensus_step(
    state: &mut ConsensusState,
    scheme: &dyn SignatureScheme,
    env: &StepEnvironment,
) -> StepOutcome {
    let own_proposal;
    let proposal = if state.is_primary() {
        own_proposal = state.compose_proposal(scheme, env.candidates);
        Some(&own_proposal)
    } else {
        env.proposal
    };

    let my_prevote = state.process_proposal(scheme, proposal);
    let mut prevotes = env.prevotes.to_vec();
    prevotes.push(state.sign_vote(scheme, Phase::Prevote, my_prevote));
    let prevote_quorum = state.tally_votes(scheme, Phase::Prevote, &prevotes);

    let my_precommit = state.apply_prevote_quorum(prevote_quorum);
    let mut precommits = env.precommits.to_vec();
    precommits.push(state.sign_vote(scheme, Phase::Precommit, my_precommit));
    let precommit_quorum = state.tally_votes(scheme, Phase::Precommit, &precommits);

    match state.apply_precommit_quorum(scheme, precommit_quorum, &precommits) {
        Some(block) => StepOutcome::Committed(block),
        None => state.advance_round(),
    }
}
