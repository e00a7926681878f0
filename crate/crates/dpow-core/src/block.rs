//! Block and header types.
//!
//! The header serializes to exactly 84 bytes and that byte string is the
//! proof-of-work preimage, so the layout here is consensus-critical:
//!
//! ```text
//! prev_hash  32 bytes
//! difficulty  8 bytes, big-endian
//! timestamp   8 bytes, big-endian (unix seconds)
//! tx_root    32 bytes
//! nonce       4 bytes, big-endian
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{keccak256, Hash256};
use crate::merkle::{merkle_root, MerkleError};

pub const HEADER_LEN: usize = 84;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BlockError {
    #[error("header must be {HEADER_LEN} bytes, got {0}")]
    BadHeaderLength(usize),
    #[error("block has no transactions (coinbase is mandatory)")]
    NoTransactions,
    #[error(transparent)]
    Merkle(#[from] MerkleError),
}

/// Opaque transaction payload; consensus only ever sees its hash.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    #[serde(with = "serde_bytes_hex")]
    pub payload: Vec<u8>,
}

impl Transaction {
    pub fn new(payload: Vec<u8>) -> Self {
        Transaction { payload }
    }

    pub fn hash(&self) -> Hash256 {
        keccak256(&self.payload)
    }
}

/// Coinbase transaction: miner identity, the extra bytes the miner is free
/// to vary, and the reward receiver. Always leaf 0 of the tx tree.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinbaseTx {
    #[serde(with = "serde_bytes_hex")]
    pub miner_id: Vec<u8>,
    #[serde(with = "serde_bytes_hex")]
    pub extra: Vec<u8>,
    #[serde(with = "serde_bytes_hex")]
    pub receiver: Vec<u8>,
}

impl CoinbaseTx {
    pub fn encode(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(self.miner_id.len() + self.extra.len() + self.receiver.len());
        out.extend_from_slice(&self.miner_id);
        out.extend_from_slice(&self.extra);
        out.extend_from_slice(&self.receiver);
        out
    }

    pub fn hash(&self) -> Hash256 {
        keccak256(&self.encode())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockHeader {
    pub prev_hash: Hash256,
    pub difficulty: u64,
    pub timestamp: u64,
    pub tx_root: Hash256,
    pub nonce: u32,
}

impl BlockHeader {
    pub fn serialize(&self) -> [u8; HEADER_LEN] {
        let mut out = [0u8; HEADER_LEN];
        out[0..32].copy_from_slice(self.prev_hash.as_bytes());
        out[32..40].copy_from_slice(&self.difficulty.to_be_bytes());
        out[40..48].copy_from_slice(&self.timestamp.to_be_bytes());
        out[48..80].copy_from_slice(self.tx_root.as_bytes());
        out[80..84].copy_from_slice(&self.nonce.to_be_bytes());
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, BlockError> {
        if bytes.len() != HEADER_LEN {
            return Err(BlockError::BadHeaderLength(bytes.len()));
        }
        let mut prev = [0u8; 32];
        prev.copy_from_slice(&bytes[0..32]);
        let mut root = [0u8; 32];
        root.copy_from_slice(&bytes[48..80]);
        Ok(BlockHeader {
            prev_hash: Hash256(prev),
            difficulty: u64::from_be_bytes(bytes[32..40].try_into().unwrap()),
            timestamp: u64::from_be_bytes(bytes[40..48].try_into().unwrap()),
            tx_root: Hash256(root),
            nonce: u32::from_be_bytes(bytes[80..84].try_into().unwrap()),
        })
    }

    /// Proof-of-work hash: Keccak-256 over the 84-byte serialization.
    pub fn hash(&self) -> Hash256 {
        keccak256(&self.serialize())
    }
}

pub fn hash_header(header: &BlockHeader) -> Hash256 {
    header.hash()
}

/// Full block: header plus transaction bodies, coinbase first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: BlockHeader,
    pub coinbase: CoinbaseTx,
    pub transactions: Vec<Transaction>,
}

impl Block {
    /// Leaf hashes in tree order: coinbase at index 0, then each tx.
    pub fn leaf_hashes(&self) -> Vec<Hash256> {
        let mut leaves = Vec::with_capacity(1 + self.transactions.len());
        leaves.push(self.coinbase.hash());
        leaves.extend(self.transactions.iter().map(Transaction::hash));
        leaves
    }

    pub fn compute_tx_root(&self) -> Hash256 {
        // leaf_hashes always yields at least the coinbase
        merkle_root(&self.leaf_hashes()).expect("coinbase guarantees a leaf")
    }

    /// Header tx_root matches the body.
    pub fn root_consistent(&self) -> bool {
        self.header.tx_root == self.compute_tx_root()
    }

    pub fn hash(&self) -> Hash256 {
        self.header.hash()
    }
}

/// Hex-string serde for byte vectors, so JSON traces stay readable.
mod serde_bytes_hex {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], ser: S) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&hex::encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(de: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(de)?;
        hex::decode(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_header() -> BlockHeader {
        BlockHeader {
            prev_hash: Hash256([0xab; 32]),
            difficulty: 0x0102030405060708,
            timestamp: 0x1112131415161718,
            tx_root: Hash256([0xcd; 32]),
            nonce: 0xdeadbeef,
        }
    }

    #[test]
    fn header_layout_is_exact() {
        let bytes = sample_header().serialize();
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[0..32], &[0xab; 32]);
        assert_eq!(&bytes[32..40], &[1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(
            &bytes[40..48],
            &[0x11, 0x12, 0x13, 0x14, 0x15, 0x16, 0x17, 0x18]
        );
        assert_eq!(&bytes[48..80], &[0xcd; 32]);
        assert_eq!(&bytes[80..84], &[0xde, 0xad, 0xbe, 0xef]);
    }

    // Golden digest of the all-zero header, pinned with an out-of-tree
    // Keccak reference. Catches any drift in layout or hash function.
    #[test]
    fn zero_header_golden_hash() {
        let h = BlockHeader {
            prev_hash: Hash256::ZERO,
            difficulty: 0,
            timestamp: 0,
            tx_root: Hash256::ZERO,
            nonce: 0,
        };
        assert_eq!(
            h.hash().to_hex(),
            "7733ef1f65c467ebbbb75072ade6f3677cc49a146089f0a95abd1e4015c837b9"
        );
    }

    #[test]
    fn deserialize_round_trip() {
        let h = sample_header();
        assert_eq!(BlockHeader::deserialize(&h.serialize()).unwrap(), h);
    }

    #[test]
    fn deserialize_rejects_bad_length() {
        assert_eq!(
            BlockHeader::deserialize(&[0u8; 83]),
            Err(BlockError::BadHeaderLength(83))
        );
        assert_eq!(
            BlockHeader::deserialize(&[0u8; 85]),
            Err(BlockError::BadHeaderLength(85))
        );
    }

    #[test]
    fn nonce_changes_hash() {
        let mut h = sample_header();
        let h1 = h.hash();
        h.nonce ^= 1;
        assert_ne!(h.hash(), h1);
    }

    #[test]
    fn block_root_consistency() {
        let coinbase = CoinbaseTx {
            miner_id: vec![0x01; 20],
            extra: vec![0, 0, 0, 0, 0, 0, 0, 0],
            receiver: vec![0x02; 20],
        };
        let txs = vec![Transaction::new(b"pay alice".to_vec())];
        let mut block = Block {
            header: sample_header(),
            coinbase,
            transactions: txs,
        };
        assert!(!block.root_consistent());
        block.header.tx_root = block.compute_tx_root();
        assert!(block.root_consistent());
        // mutating the coinbase extra must invalidate the root
        block.coinbase.extra[7] ^= 1;
        assert!(!block.root_consistent());
    }

    #[test]
    fn coinbase_encoding_is_concatenation() {
        let cb = CoinbaseTx {
            miner_id: vec![1, 2],
            extra: vec![3],
            receiver: vec![4, 5, 6],
        };
        assert_eq!(cb.encode(), vec![1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn block_serde_json_round_trip() {
        let block = Block {
            header: sample_header(),
            coinbase: CoinbaseTx {
                miner_id: vec![0x01; 20],
                extra: vec![0; 8],
                receiver: vec![0x02; 20],
            },
            transactions: vec![Transaction::new(vec![9, 9, 9])],
        };
        let json = serde_json::to_string(&block).unwrap();
        let back: Block = serde_json::from_str(&json).unwrap();
        assert_eq!(back, block);
    }

    proptest! {
        #[test]
        fn header_round_trip(prev in any::<[u8; 32]>(),
                             diff in any::<u64>(),
                             ts in any::<u64>(),
                             root in any::<[u8; 32]>(),
                             nonce in any::<u32>()) {
            let h = BlockHeader {
                prev_hash: Hash256(prev),
                difficulty: diff,
                timestamp: ts,
                tx_root: Hash256(root),
                nonce,
            };
            prop_assert_eq!(BlockHeader::deserialize(&h.serialize()).unwrap(), h);
        }
    }
}
