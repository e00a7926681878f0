//! Event-driven consensus network.
//!
//! Each verifier runs on its own timer chain through the shared event
//! queue: round start (primary proposes), prevote cast, precommit cast,
//! round close (commit or advance). Messages travel point to point through
//! a [`Fabric`], so latency and loss are injected there.
//!
//! Corrupted verifiers keep an honest state machine internally to stay
//! height-aligned with the group, but what they put on the wire is decided
//! by their [`ByzBehavior`]. Honest verifiers are exactly the consensus
//! state machine plus timers; no extra logic hides here.

use std::collections::BTreeMap;

use crate::block::Block;
use crate::hash::Hash256;
use crate::pbft::{
    primary_for, ConsensusState, MacScheme, Phase, Proposal, SignatureScheme, StepOutcome,
    VerifierGroup, VerifierId, Vote,
};
use crate::wire;

use super::fabric::{Envelope, Fabric, MsgKind, Route};
use super::queue::{EventKind, EventQueue};

/// Supplies candidate blocks, standing in for the sharding servers.
///
/// Called once per verifier per height, with that verifier's current tip.
/// Implementations may return different orderings (or different blocks) per
/// verifier to model skewed submission timing.
pub trait CandidateSource {
    fn candidates(&mut self, height: u64, tip: Hash256, verifier: VerifierId) -> Vec<Block>;
}

/// The same candidate list for every verifier, keyed by height.
#[derive(Debug, Clone, Default)]
pub struct FixedCandidates(pub BTreeMap<u64, Vec<Block>>);

impl CandidateSource for FixedCandidates {
    fn candidates(&mut self, height: u64, _tip: Hash256, _verifier: VerifierId) -> Vec<Block> {
        self.0.get(&height).cloned().unwrap_or_default()
    }
}

/// Per-verifier candidate lists for one height, for scripted scenarios.
#[derive(Debug, Clone, Default)]
pub struct PerVerifierCandidates(pub BTreeMap<(u64, u32), Vec<Block>>);

impl CandidateSource for PerVerifierCandidates {
    fn candidates(&mut self, height: u64, _tip: Hash256, verifier: VerifierId) -> Vec<Block> {
        self.0.get(&(height, verifier.0)).cloned().unwrap_or_default()
    }
}

/// Wire behavior of a corrupted verifier.
#[derive(Debug, Clone)]
pub enum ByzBehavior {
    /// Propose and vote for the target block in every round regardless of
    /// validity; with no target, propose empty and vote empty, denying
    /// quorum to everyone else.
    Conspire { target: Option<Block> },
    /// Never send anything.
    Withhold,
    /// Send the first candidate to one half of the group and the second to
    /// the other half, in proposals and votes alike.
    Equivocate,
}

#[derive(Debug, Clone)]
pub struct NetConfig {
    pub group: VerifierGroup,
    /// Seed for the shared MAC signature scheme.
    pub scheme_seed: u64,
    pub genesis: Hash256,
    pub max_step: u32,
    pub phase_window: f64,
    /// Run until every live verifier has committed this many heights.
    pub target_height: u64,
    pub max_sim_time: f64,
    /// Corrupted verifiers, keyed by verifier id.
    pub byzantine: BTreeMap<u32, ByzBehavior>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NetMessage {
    Proposal(Proposal),
    Vote(Vote),
}

impl NetMessage {
    fn height(&self) -> u64 {
        match self {
            NetMessage::Proposal(p) => p.height,
            NetMessage::Vote(v) => v.height,
        }
    }

    fn round(&self) -> u32 {
        match self {
            NetMessage::Proposal(p) => p.round,
            NetMessage::Vote(v) => v.round,
        }
    }

    fn kind(&self) -> MsgKind {
        match self {
            NetMessage::Proposal(_) => MsgKind::Proposal,
            NetMessage::Vote(v) => match v.phase {
                Phase::Prevote => MsgKind::Prevote,
                Phase::Precommit => MsgKind::Precommit,
            },
        }
    }

    fn wire_len(&self) -> u64 {
        let bytes = match self {
            NetMessage::Proposal(p) => wire::encode_proposal(p),
            NetMessage::Vote(v) => wire::encode_vote(v),
        };
        bytes.len() as u64
    }
}

/// One message put on the wire, logged before the fabric decides its fate.
#[derive(Debug, Clone)]
pub struct SentMessage {
    pub time: f64,
    pub src: VerifierId,
    pub dst: VerifierId,
    pub msg: NetMessage,
}

/// Where one verifier ended up.
#[derive(Debug, Clone)]
pub struct FinalVerifier {
    pub id: VerifierId,
    pub honest: bool,
    pub aborted: bool,
    pub state: ConsensusState,
}

#[derive(Debug, Clone)]
pub struct NetOutcome {
    pub finals: Vec<FinalVerifier>,
    pub emitted: Vec<SentMessage>,
    pub end_time: f64,
    pub total_messages: u64,
    pub total_bytes: u64,
}

impl NetOutcome {
    /// Final chains of the honest verifiers, as block hashes.
    pub fn honest_chains(&self) -> Vec<Vec<Hash256>> {
        self.finals
            .iter()
            .filter(|f| f.honest)
            .map(|f| f.state.chain().iter().map(|c| c.block.hash()).collect())
            .collect()
    }

    /// Whether the emitted messages contain a quorum of distinct precommit
    /// voters for `hash` at `height` in any single round.
    pub fn has_commit_certificate(&self, height: u64, hash: Hash256, quorum: u64) -> bool {
        let mut per_round: BTreeMap<u32, std::collections::BTreeSet<VerifierId>> = BTreeMap::new();
        for sent in &self.emitted {
            if let NetMessage::Vote(v) = &sent.msg {
                if v.phase == Phase::Precommit && v.height == height && v.block_hash == hash {
                    per_round.entry(v.round).or_default().insert(v.voter);
                }
            }
        }
        per_round.values().any(|voters| voters.len() as u64 >= quorum)
    }
}

#[derive(Debug, Clone, Copy)]
enum Stage {
    RoundStart,
    CastPrevote,
    CastPrecommit,
    CloseRound,
}

// Full messages ride the event queue by value; cheaper than boxing for
// the queue depths these nets reach.
#[allow(clippy::large_enum_variant)]
enum Payload {
    Timer { verifier: usize, stage: Stage },
    Deliver { dst: usize, msg: NetMessage },
}

enum Role {
    Honest,
    Byz(ByzBehavior),
}

struct Runtime {
    state: ConsensusState,
    role: Role,
    proposals: BTreeMap<(u64, u32), Vec<Proposal>>,
    prevotes: BTreeMap<(u64, u32), Vec<Vote>>,
    precommits: BTreeMap<(u64, u32), Vec<Vote>>,
    candidates: Vec<Block>,
    candidates_for: Option<u64>,
    done: bool,
    aborted: bool,
}

impl Runtime {
    fn votes(&self, phase: Phase, key: (u64, u32)) -> Vec<Vote> {
        let map = match phase {
            Phase::Prevote => &self.prevotes,
            Phase::Precommit => &self.precommits,
        };
        map.get(&key).cloned().unwrap_or_default()
    }
}

/// A message to put on the wire: to everyone, or to one half of the group
/// when equivocating.
#[allow(clippy::large_enum_variant)]
enum Emit {
    ToAll(NetMessage),
    Split { first: NetMessage, second: NetMessage },
}

struct Net<'a> {
    cfg: &'a NetConfig,
    scheme: MacScheme,
    fabric: &'a mut dyn Fabric,
    source: &'a mut dyn CandidateSource,
    queue: EventQueue<Payload>,
    runtimes: Vec<Runtime>,
    emitted: Vec<SentMessage>,
    total_messages: u64,
    total_bytes: u64,
    now: f64,
}

/// Run one network to completion and report where everyone ended up.
pub fn run_net(
    cfg: &NetConfig,
    fabric: &mut dyn Fabric,
    source: &mut dyn CandidateSource,
) -> NetOutcome {
    let runtimes = cfg
        .group
        .members()
        .iter()
        .map(|&id| Runtime {
            state: ConsensusState::new(id, cfg.group.clone(), cfg.genesis, cfg.max_step),
            role: match cfg.byzantine.get(&id.0) {
                Some(b) => Role::Byz(b.clone()),
                None => Role::Honest,
            },
            proposals: BTreeMap::new(),
            prevotes: BTreeMap::new(),
            precommits: BTreeMap::new(),
            candidates: Vec::new(),
            candidates_for: None,
            done: false,
            aborted: false,
        })
        .collect();

    let mut net = Net {
        cfg,
        scheme: MacScheme::new(cfg.scheme_seed),
        fabric,
        source,
        queue: EventQueue::new(),
        runtimes,
        emitted: Vec::new(),
        total_messages: 0,
        total_bytes: 0,
        now: 0.0,
    };
    net.run()
}

impl<'a> Net<'a> {
    fn run(&mut self) -> NetOutcome {
        for i in 0..self.runtimes.len() {
            self.queue.push(0.0, EventKind::Timer, Payload::Timer {
                verifier: i,
                stage: Stage::RoundStart,
            });
        }
        while let Some(event) = self.queue.pop() {
            if event.time > self.cfg.max_sim_time {
                break;
            }
            self.now = event.time;
            match event.payload {
                Payload::Timer { verifier, stage } => self.on_timer(verifier, stage),
                Payload::Deliver { dst, msg } => self.on_deliver(dst, msg),
            }
        }
        NetOutcome {
            finals: self
                .runtimes
                .iter()
                .map(|rt| FinalVerifier {
                    id: rt.state.id,
                    honest: matches!(rt.role, Role::Honest),
                    aborted: rt.aborted,
                    state: rt.state.clone(),
                })
                .collect(),
            emitted: std::mem::take(&mut self.emitted),
            end_time: self.now,
            total_messages: self.total_messages,
            total_bytes: self.total_bytes,
        }
    }

    fn on_deliver(&mut self, dst: usize, msg: NetMessage) {
        let rt = &mut self.runtimes[dst];
        // Below the receiver's height the message can never matter again.
        if msg.height() < rt.state.height() {
            return;
        }
        let key = (msg.height(), msg.round());
        match msg {
            NetMessage::Proposal(p) => rt.proposals.entry(key).or_default().push(p),
            NetMessage::Vote(v) => match v.phase {
                Phase::Prevote => rt.prevotes.entry(key).or_default().push(v),
                Phase::Precommit => rt.precommits.entry(key).or_default().push(v),
            },
        }
    }

    fn on_timer(&mut self, i: usize, stage: Stage) {
        if self.runtimes[i].done {
            return;
        }
        match stage {
            Stage::RoundStart => self.on_round_start(i),
            Stage::CastPrevote => self.on_cast_prevote(i),
            Stage::CastPrecommit => self.on_cast_precommit(i),
            Stage::CloseRound => self.on_close_round(i),
        }
    }

    fn on_round_start(&mut self, i: usize) {
        if self.runtimes[i].state.height() > self.cfg.target_height {
            self.runtimes[i].done = true;
            return;
        }

        // Fresh height: ask the sharding side for candidates at our tip.
        let (h, r, id, tip) = {
            let rt = &self.runtimes[i];
            (rt.state.height(), rt.state.round(), rt.state.id, rt.state.tip_hash())
        };
        if self.runtimes[i].candidates_for != Some(h) {
            let c = self.source.candidates(h, tip, id);
            let rt = &mut self.runtimes[i];
            rt.candidates = c;
            rt.candidates_for = Some(h);
        }

        let is_primary = primary_for(&self.cfg.group, h, r) == id;
        let mut emit = None;
        let mut inject = None;
        {
            let rt = &mut self.runtimes[i];
            match &rt.role {
                Role::Honest => {
                    if is_primary {
                        let prop = rt.state.compose_proposal(&self.scheme, &rt.candidates);
                        inject = Some(NetMessage::Proposal(prop.clone()));
                        emit = Some(Emit::ToAll(NetMessage::Proposal(prop)));
                    }
                }
                Role::Byz(ByzBehavior::Conspire { target }) => {
                    if is_primary {
                        let prop = Proposal::new(h, r, target.clone(), id, &self.scheme);
                        emit = Some(Emit::ToAll(NetMessage::Proposal(prop)));
                    }
                }
                Role::Byz(ByzBehavior::Equivocate) => {
                    if is_primary {
                        if let Some(first) = rt.candidates.first().cloned() {
                            let second =
                                rt.candidates.get(1).cloned().unwrap_or_else(|| first.clone());
                            emit = Some(Emit::Split {
                                first: NetMessage::Proposal(Proposal::new(
                                    h,
                                    r,
                                    Some(first),
                                    id,
                                    &self.scheme,
                                )),
                                second: NetMessage::Proposal(Proposal::new(
                                    h,
                                    r,
                                    Some(second),
                                    id,
                                    &self.scheme,
                                )),
                            });
                        }
                    }
                }
                Role::Byz(ByzBehavior::Withhold) => {}
            }
        }
        if let Some(msg) = inject {
            self.on_deliver(i, msg);
        }
        if let Some(emit) = emit {
            self.dispatch(i, emit);
        }
        self.schedule(i, Stage::CastPrevote);
    }

    fn on_cast_prevote(&mut self, i: usize) {
        let (h, r, id) = {
            let rt = &self.runtimes[i];
            (rt.state.height(), rt.state.round(), rt.state.id)
        };
        let expected = primary_for(&self.cfg.group, h, r);
        let emit;
        let mut inject = None;
        {
            let rt = &mut self.runtimes[i];
            let proposal = rt
                .proposals
                .get(&(h, r))
                .and_then(|list| list.iter().find(|p| p.proposer == expected))
                .cloned();
            // Everyone, corrupted included, tracks the round honestly; the
            // difference is purely in what goes on the wire below.
            let my_hash = rt.state.process_proposal(&self.scheme, proposal.as_ref());
            emit = match &rt.role {
                Role::Honest => {
                    let vote = rt.state.sign_vote(&self.scheme, Phase::Prevote, my_hash);
                    inject = Some(NetMessage::Vote(vote.clone()));
                    Some(Emit::ToAll(NetMessage::Vote(vote)))
                }
                Role::Byz(b) => byz_vote(b, &rt.candidates, Phase::Prevote, h, r, id, &self.scheme),
            };
        }
        if let Some(msg) = inject {
            self.on_deliver(i, msg);
        }
        if let Some(emit) = emit {
            self.dispatch(i, emit);
        }
        self.schedule(i, Stage::CastPrecommit);
    }

    fn on_cast_precommit(&mut self, i: usize) {
        let (h, r, id) = {
            let rt = &self.runtimes[i];
            (rt.state.height(), rt.state.round(), rt.state.id)
        };
        let emit;
        let mut inject = None;
        {
            let rt = &mut self.runtimes[i];
            let prevotes = rt.votes(Phase::Prevote, (h, r));
            let quorum_hash = rt.state.tally_votes(&self.scheme, Phase::Prevote, &prevotes);
            let my_hash = rt.state.apply_prevote_quorum(quorum_hash);
            emit = match &rt.role {
                Role::Honest => {
                    let vote = rt.state.sign_vote(&self.scheme, Phase::Precommit, my_hash);
                    inject = Some(NetMessage::Vote(vote.clone()));
                    Some(Emit::ToAll(NetMessage::Vote(vote)))
                }
                Role::Byz(b) => {
                    byz_vote(b, &rt.candidates, Phase::Precommit, h, r, id, &self.scheme)
                }
            };
        }
        if let Some(msg) = inject {
            self.on_deliver(i, msg);
        }
        if let Some(emit) = emit {
            self.dispatch(i, emit);
        }
        self.schedule(i, Stage::CloseRound);
    }

    fn on_close_round(&mut self, i: usize) {
        let rt = &mut self.runtimes[i];
        let key = (rt.state.height(), rt.state.round());
        let precommits = rt.votes(Phase::Precommit, key);
        let quorum_hash = rt.state.tally_votes(&self.scheme, Phase::Precommit, &precommits);
        let committed = rt
            .state
            .apply_precommit_quorum(&self.scheme, quorum_hash, &precommits);
        if committed.is_none() {
            if let StepOutcome::Aborted = rt.state.advance_round() {
                rt.done = true;
                rt.aborted = true;
                return;
            }
        }
        self.schedule_at(i, Stage::RoundStart, self.now);
    }

    fn schedule(&mut self, i: usize, stage: Stage) {
        self.schedule_at(i, stage, self.now + self.cfg.phase_window);
    }

    fn schedule_at(&mut self, i: usize, stage: Stage, time: f64) {
        self.queue
            .push(time, EventKind::Timer, Payload::Timer { verifier: i, stage });
    }

    fn dispatch(&mut self, src: usize, emit: Emit) {
        let members: Vec<VerifierId> = self.cfg.group.members().to_vec();
        match emit {
            Emit::ToAll(msg) => {
                for (pos, &dst) in members.iter().enumerate() {
                    if pos != src {
                        self.send(src, pos, dst, msg.clone());
                    }
                }
            }
            Emit::Split { first, second } => {
                let half = members.len() / 2;
                for (pos, &dst) in members.iter().enumerate() {
                    if pos != src {
                        let msg = if pos < half { first.clone() } else { second.clone() };
                        self.send(src, pos, dst, msg);
                    }
                }
            }
        }
    }

    fn send(&mut self, src: usize, dst_pos: usize, dst: VerifierId, msg: NetMessage) {
        let src_id = self.cfg.group.members()[src];
        self.emitted.push(SentMessage {
            time: self.now,
            src: src_id,
            dst,
            msg: msg.clone(),
        });
        self.total_messages += 1;
        self.total_bytes += msg.wire_len();
        let env = Envelope {
            src: src_id.0,
            dst: dst.0,
            kind: msg.kind(),
            height: msg.height(),
            round: msg.round(),
        };
        match self.fabric.route(&env) {
            Route::Deliver { delay } => {
                self.queue.push(
                    self.now + delay,
                    EventKind::Deliver,
                    Payload::Deliver { dst: dst_pos, msg },
                );
            }
            Route::Drop => {}
        }
    }
}

/// What a corrupted verifier puts on the wire for one vote phase.
fn byz_vote(
    behavior: &ByzBehavior,
    candidates: &[Block],
    phase: Phase,
    height: u64,
    round: u32,
    id: VerifierId,
    scheme: &dyn SignatureScheme,
) -> Option<Emit> {
    match behavior {
        ByzBehavior::Conspire { target } => {
            let hash = target.as_ref().map_or(Hash256::ZERO, Block::hash);
            Some(Emit::ToAll(NetMessage::Vote(Vote::new(
                phase, height, round, hash, id, scheme,
            ))))
        }
        ByzBehavior::Withhold => None,
        ByzBehavior::Equivocate => {
            let first = candidates.first().map_or(Hash256::ZERO, Block::hash);
            let second = candidates.get(1).map_or(first, Block::hash);
            Some(Emit::Split {
                first: NetMessage::Vote(Vote::new(phase, height, round, first, id, scheme)),
                second: NetMessage::Vote(Vote::new(phase, height, round, second, id, scheme)),
            })
        }
    }
}
