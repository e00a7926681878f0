//! Length-prefixed binary records for protocol messages.
//!
//! Every message is framed as a tag byte followed by a big-endian u32 body
//! length. Inside a body, fixed-width integers are big-endian, hashes are
//! raw 32 bytes, and variable-length byte strings carry their own u32
//! length prefix. Fields appear in the order the corresponding type
//! declares them. The simulator meters message sizes off these encodings,
//! and proposals and votes are signed over their body bytes minus the
//! trailing signature.

use thiserror::Error;

use crate::block::{Block, BlockHeader, CoinbaseTx, Transaction, HEADER_LEN};
use crate::hash::Hash256;
use crate::merkle::MerkleBranch;
use crate::mining::{MinerId, ShardAssignment, WorkResult, MINER_ID_LEN};
use crate::pbft::{Phase, Proposal, Signature, VerifierId, Vote};

pub const TAG_ASSIGNMENT: u8 = 0x01;
pub const TAG_WORK_RESULT: u8 = 0x02;
pub const TAG_PROPOSAL: u8 = 0x03;
pub const TAG_VOTE: u8 = 0x04;
pub const TAG_BLOCK: u8 = 0x05;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("record truncated")]
    Truncated,
    #[error("expected tag {expected:#04x}, found {found:#04x}")]
    WrongTag { expected: u8, found: u8 },
    #[error("{0} trailing bytes after record body")]
    TrailingBytes(usize),
    #[error("declared length {declared} disagrees with remaining {remaining}")]
    LengthMismatch { declared: usize, remaining: usize },
    #[error("invalid field value: {0}")]
    BadField(&'static str),
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }

    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    fn hash(&mut self, h: &Hash256) {
        self.buf.extend_from_slice(h.as_bytes());
    }

    fn raw(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    fn var_bytes(&mut self, bytes: &[u8]) {
        self.u32(bytes.len() as u32);
        self.raw(bytes);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.buf.len() < n {
            return Err(WireError::Truncated);
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn hash(&mut self) -> Result<Hash256, WireError> {
        Ok(Hash256(self.take(32)?.try_into().unwrap()))
    }

    fn var_bytes(&mut self) -> Result<Vec<u8>, WireError> {
        let len = self.u32()? as usize;
        Ok(self.take(len)?.to_vec())
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(WireError::TrailingBytes(self.buf.len()))
        }
    }
}

fn frame(tag: u8, body: Vec<u8>) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + body.len());
    out.push(tag);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(&body);
    out
}

fn unframe(tag: u8, bytes: &[u8]) -> Result<Reader<'_>, WireError> {
    let mut r = Reader { buf: bytes };
    let found = r.u8()?;
    if found != tag {
        return Err(WireError::WrongTag { expected: tag, found });
    }
    let declared = r.u32()? as usize;
    if declared != r.buf.len() {
        return Err(WireError::LengthMismatch {
            declared,
            remaining: r.buf.len(),
        });
    }
    Ok(r)
}

fn write_block_body(w: &mut Writer, b: &Block) {
    w.raw(&b.header.serialize());
    w.var_bytes(&b.coinbase.miner_id);
    w.var_bytes(&b.coinbase.extra);
    w.var_bytes(&b.coinbase.receiver);
    w.u32(b.transactions.len() as u32);
    for tx in &b.transactions {
        w.var_bytes(&tx.payload);
    }
}

fn read_block_body(r: &mut Reader) -> Result<Block, WireError> {
    let header = BlockHeader::deserialize(r.take(HEADER_LEN)?)
        .map_err(|_| WireError::BadField("header"))?;
    let coinbase = CoinbaseTx {
        miner_id: r.var_bytes()?,
        extra: r.var_bytes()?,
        receiver: r.var_bytes()?,
    };
    let count = r.u32()? as usize;
    let mut transactions = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        transactions.push(Transaction::new(r.var_bytes()?));
    }
    Ok(Block {
        header,
        coinbase,
        transactions,
    })
}

pub fn encode_block(b: &Block) -> Vec<u8> {
    let mut w = Writer::new();
    write_block_body(&mut w, b);
    frame(TAG_BLOCK, w.buf)
}

pub fn decode_block(bytes: &[u8]) -> Result<Block, WireError> {
    let mut r = unframe(TAG_BLOCK, bytes)?;
    let block = read_block_body(&mut r)?;
    r.finish()?;
    Ok(block)
}

pub fn encode_assignment(a: &ShardAssignment) -> Vec<u8> {
    let mut w = Writer::new();
    w.hash(&a.prev_hash);
    w.u64(a.difficulty);
    w.u64(a.timestamp);
    w.u64(a.coinbase_branch.leaf_index);
    w.u32(a.coinbase_branch.siblings.len() as u32);
    for s in &a.coinbase_branch.siblings {
        w.hash(s);
    }
    w.var_bytes(&a.coinbase_receiver);
    w.raw(a.miner_id.as_bytes());
    w.u64(a.epoch);
    frame(TAG_ASSIGNMENT, w.buf)
}

pub fn decode_assignment(bytes: &[u8]) -> Result<ShardAssignment, WireError> {
    let mut r = unframe(TAG_ASSIGNMENT, bytes)?;
    let prev_hash = r.hash()?;
    let difficulty = r.u64()?;
    let timestamp = r.u64()?;
    let leaf_index = r.u64()?;
    let count = r.u32()? as usize;
    let mut siblings = Vec::with_capacity(count.min(1 << 10));
    for _ in 0..count {
        siblings.push(r.hash()?);
    }
    let coinbase_receiver = r.var_bytes()?;
    let miner_id = MinerId(
        r.take(MINER_ID_LEN)?
            .try_into()
            .expect("take returns exactly MINER_ID_LEN bytes"),
    );
    let epoch = r.u64()?;
    r.finish()?;
    Ok(ShardAssignment {
        prev_hash,
        difficulty,
        timestamp,
        coinbase_branch: MerkleBranch {
            leaf_index,
            siblings,
        },
        coinbase_receiver,
        miner_id,
        epoch,
    })
}

pub fn encode_work_result(wr: &WorkResult) -> Vec<u8> {
    let mut w = Writer::new();
    w.u64(wr.assignment_epoch);
    w.var_bytes(&wr.coinbase.miner_id);
    w.var_bytes(&wr.coinbase.extra);
    w.var_bytes(&wr.coinbase.receiver);
    w.u32(wr.nonce);
    w.hash(&wr.claimed_root);
    frame(TAG_WORK_RESULT, w.buf)
}

pub fn decode_work_result(bytes: &[u8]) -> Result<WorkResult, WireError> {
    let mut r = unframe(TAG_WORK_RESULT, bytes)?;
    let assignment_epoch = r.u64()?;
    let coinbase = CoinbaseTx {
        miner_id: r.var_bytes()?,
        extra: r.var_bytes()?,
        receiver: r.var_bytes()?,
    };
    let nonce = r.u32()?;
    let claimed_root = r.hash()?;
    r.finish()?;
    Ok(WorkResult {
        assignment_epoch,
        coinbase,
        nonce,
        claimed_root,
    })
}

/// Proposal body bytes up to (excluding) the signature; this is the signed
/// payload. The leading tag byte keeps the domains of proposal and vote
/// signatures disjoint.
pub fn proposal_signing_bytes(
    height: u64,
    round: u32,
    block: Option<&Block>,
    proposer: VerifierId,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(TAG_PROPOSAL);
    w.u64(height);
    w.u32(round);
    match block {
        Some(b) => {
            w.u8(1);
            write_block_body(&mut w, b);
        }
        None => w.u8(0),
    }
    w.u32(proposer.0);
    w.buf
}

pub fn encode_proposal(p: &Proposal) -> Vec<u8> {
    let mut body = proposal_signing_bytes(p.height, p.round, p.block.as_ref(), p.proposer);
    body.drain(..1); // tag moves into the frame
    body.extend_from_slice(p.signature.0.as_bytes());
    frame(TAG_PROPOSAL, body)
}

pub fn decode_proposal(bytes: &[u8]) -> Result<Proposal, WireError> {
    let mut r = unframe(TAG_PROPOSAL, bytes)?;
    let height = r.u64()?;
    let round = r.u32()?;
    let block = match r.u8()? {
        0 => None,
        1 => Some(read_block_body(&mut r)?),
        _ => return Err(WireError::BadField("block flag")),
    };
    let proposer = VerifierId(r.u32()?);
    let signature = Signature(r.hash()?);
    r.finish()?;
    Ok(Proposal {
        height,
        round,
        block,
        proposer,
        signature,
    })
}

/// Vote body bytes up to (excluding) the signature; the signed payload.
pub fn vote_signing_bytes(
    phase: Phase,
    height: u64,
    round: u32,
    block_hash: &Hash256,
    voter: VerifierId,
) -> Vec<u8> {
    let mut w = Writer::new();
    w.u8(TAG_VOTE);
    w.u8(match phase {
        Phase::Prevote => 0,
        Phase::Precommit => 1,
    });
    w.u64(height);
    w.u32(round);
    w.hash(block_hash);
    w.u32(voter.0);
    w.buf
}

pub fn encode_vote(v: &Vote) -> Vec<u8> {
    let mut body = vote_signing_bytes(v.phase, v.height, v.round, &v.block_hash, v.voter);
    body.drain(..1);
    body.extend_from_slice(v.signature.0.as_bytes());
    frame(TAG_VOTE, body)
}

pub fn decode_vote(bytes: &[u8]) -> Result<Vote, WireError> {
    let mut r = unframe(TAG_VOTE, bytes)?;
    let phase = match r.u8()? {
        0 => Phase::Prevote,
        1 => Phase::Precommit,
        _ => return Err(WireError::BadField("phase")),
    };
    let height = r.u64()?;
    let round = r.u32()?;
    let block_hash = r.hash()?;
    let voter = VerifierId(r.u32()?);
    let signature = Signature(r.hash()?);
    r.finish()?;
    Ok(Vote {
        phase,
        height,
        round,
        block_hash,
        voter,
        signature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pbft::MacScheme;
    use proptest::prelude::*;

    fn sample_block(tx_count: usize) -> Block {
        Block {
            header: BlockHeader {
                prev_hash: Hash256([1; 32]),
                difficulty: 77,
                timestamp: 1_700_000_000,
                tx_root: Hash256([2; 32]),
                nonce: 42,
            },
            coinbase: CoinbaseTx {
                miner_id: vec![3; MINER_ID_LEN],
                extra: vec![0, 0, 0, 0, 0, 0, 0, 9],
                receiver: vec![4; 20],
            },
            transactions: (0..tx_count)
                .map(|i| Transaction::new(vec![i as u8; i + 1]))
                .collect(),
        }
    }

    #[test]
    fn block_round_trip() {
        for n in [0, 1, 5] {
            let b = sample_block(n);
            let bytes = encode_block(&b);
            assert_eq!(bytes[0], TAG_BLOCK);
            assert_eq!(decode_block(&bytes).unwrap(), b);
        }
    }

    #[test]
    fn assignment_round_trip() {
        let a = ShardAssignment {
            prev_hash: Hash256([9; 32]),
            difficulty: 1 << 20,
            timestamp: 1_700_000_500,
            coinbase_branch: MerkleBranch {
                leaf_index: 0,
                siblings: vec![Hash256([5; 32]), Hash256([6; 32])],
            },
            coinbase_receiver: vec![7; 20],
            miner_id: MinerId::from_index(12),
            epoch: 3,
        };
        let bytes = encode_assignment(&a);
        assert_eq!(decode_assignment(&bytes).unwrap(), a);
    }

    #[test]
    fn work_result_round_trip() {
        let w = WorkResult {
            assignment_epoch: 5,
            coinbase: CoinbaseTx {
                miner_id: vec![1; MINER_ID_LEN],
                extra: vec![0; 8],
                receiver: vec![2; 20],
            },
            nonce: 0xdead,
            claimed_root: Hash256([8; 32]),
        };
        let bytes = encode_work_result(&w);
        assert_eq!(decode_work_result(&bytes).unwrap(), w);
    }

    #[test]
    fn proposal_and_vote_round_trip() {
        let s = MacScheme::new(1);
        for block in [None, Some(sample_block(2))] {
            let p = Proposal::new(4, 1, block, VerifierId(2), &s);
            let bytes = encode_proposal(&p);
            let back = decode_proposal(&bytes).unwrap();
            assert_eq!(back, p);
            assert!(back.verify(&s), "signature must survive the round trip");
        }
        let v = Vote::new(Phase::Precommit, 4, 1, Hash256([3; 32]), VerifierId(0), &s);
        let bytes = encode_vote(&v);
        let back = decode_vote(&bytes).unwrap();
        assert_eq!(back, v);
        assert!(back.verify(&s));
    }

    #[test]
    fn decode_rejects_malformed_input() {
        let b = sample_block(1);
        let good = encode_block(&b);

        assert_eq!(
            decode_vote(&good),
            Err(WireError::WrongTag { expected: TAG_VOTE, found: TAG_BLOCK })
        );
        assert_eq!(decode_block(&good[..good.len() - 1]), Err(WireError::LengthMismatch {
            declared: good.len() - 5,
            remaining: good.len() - 6,
        }));
        let mut extended = good.clone();
        extended.push(0);
        assert!(matches!(
            decode_block(&extended),
            Err(WireError::LengthMismatch { .. })
        ));
        assert_eq!(decode_block(&[]), Err(WireError::Truncated));

        // declared body length exceeding the buffer
        let mut lying = good;
        lying[1..5].copy_from_slice(&u32::MAX.to_be_bytes());
        assert!(matches!(decode_block(&lying), Err(WireError::LengthMismatch { .. })));
    }

    #[test]
    fn signing_bytes_exclude_signature() {
        let s = MacScheme::new(9);
        let v1 = Vote::new(Phase::Prevote, 1, 0, Hash256([1; 32]), VerifierId(3), &s);
        let mut v2 = v1.clone();
        v2.signature = Signature(Hash256([0xff; 32]));
        assert_eq!(
            vote_signing_bytes(v1.phase, v1.height, v1.round, &v1.block_hash, v1.voter),
            vote_signing_bytes(v2.phase, v2.height, v2.round, &v2.block_hash, v2.voter),
        );
        // but the encodings differ exactly in the trailing signature bytes
        let e1 = encode_vote(&v1);
        let e2 = encode_vote(&v2);
        assert_eq!(e1[..e1.len() - 32], e2[..e2.len() - 32]);
        assert_ne!(e1, e2);
    }

    #[test]
    fn phase_domains_are_separated() {
        let s = MacScheme::new(9);
        let pre = Vote::new(Phase::Prevote, 1, 0, Hash256([1; 32]), VerifierId(3), &s);
        let mut fake = pre.clone();
        fake.phase = Phase::Precommit;
        assert!(!fake.verify(&s), "a prevote signature must not validate a precommit");
    }

    proptest! {
        #[test]
        fn vote_round_trip_prop(height in any::<u64>(),
                                round in any::<u32>(),
                                hash in any::<[u8; 32]>(),
                                voter in any::<u32>(),
                                precommit in any::<bool>()) {
            let s = MacScheme::new(3);
            let phase = if precommit { Phase::Precommit } else { Phase::Prevote };
            let v = Vote::new(phase, height, round, Hash256(hash), VerifierId(voter), &s);
            prop_assert_eq!(decode_vote(&encode_vote(&v)).unwrap(), v);
        }

        #[test]
        fn work_result_round_trip_prop(epoch in any::<u64>(),
                                       extra in proptest::collection::vec(any::<u8>(), 0..32),
                                       nonce in any::<u32>(),
                                       root in any::<[u8; 32]>()) {
            let w = WorkResult {
                assignment_epoch: epoch,
                coinbase: CoinbaseTx {
                    miner_id: vec![1; MINER_ID_LEN],
                    extra,
                    receiver: vec![2; 20],
                },
                nonce,
                claimed_root: Hash256(root),
            };
            prop_assert_eq!(decode_work_result(&encode_work_result(&w)).unwrap(), w);
        }
    }
}
