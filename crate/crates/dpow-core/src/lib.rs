//! Core library for a deterministic proof-of-work consensus protocol.
//!
//! The protocol splits block production into two roles. Sharding servers
//! assemble block templates and hand miners disjoint slices of the search
//! space (distinct coinbase prefixes, hence distinct Merkle roots, hence
//! non-overlapping hash streams). A small rotating verifier group then runs
//! a three-phase Byzantine agreement (prevote, precommit, commit) over each
//! candidate block, so a block is final after one round of voting instead
//! of after probabilistic chain depth.
//!
//! Modules:
//!
//! - [`hash`], [`merkle`], [`block`], [`pow`]: the data plane. Keccak-256
//!   headers, binary Merkle trees, difficulty targets, nonce search.
//! - [`mining`]: the sharding server and the miner loop built on top.
//! - [`pbft`]: verifier-group state machine with block locking.
//! - [`security`]: closed-form and Monte Carlo attack probabilities.
//! - [`wire`]: length-prefixed binary encoding for protocol messages.
//! - [`sim`]: deterministic discrete-event simulator, experiment drivers,
//!   and trace record/replay.
//! - [`report`]: CSV/JSON rendering of experiment outputs.

pub mod block;
pub mod hash;
pub mod merkle;
pub mod mining;
pub mod pbft;
pub mod pow;
pub mod report;
pub mod security;
pub mod sim;
pub mod wire;

pub use block::{Block, BlockHeader, CoinbaseTx, Transaction, HEADER_LEN};
pub use hash::{keccak256, keccak256_pair, Hash256};
pub use merkle::{apply_branch, merkle_branch, merkle_root, MerkleBranch};
pub use pow::{check_pow, search_nonce, SearchOutcome, StopSignal, Target};
