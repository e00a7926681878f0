//! Binary Merkle trees with Bitcoin-style odd-node duplication.
//!
//! A branch (the sibling path for one leaf) lets a miner recompute the root
//! after mutating only its own leaf, which is what makes coinbase-based
//! search-space sharding cheap: the branch for leaf 0 never depends on the
//! value of leaf 0 itself.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hash::{keccak256_pair, Hash256};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MerkleError {
    #[error("cannot build a Merkle tree from an empty leaf list")]
    EmptyLeaves,
    #[error("leaf index {index} out of range for {leaves} leaves")]
    IndexOutOfRange { index: usize, leaves: usize },
}

/// Sibling path from one leaf up to the root, bottom level first.
///
/// `leaf_index` fixes the concatenation order at every level: an even index
/// hashes `(current ‖ sibling)`, an odd one `(sibling ‖ current)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerkleBranch {
    pub leaf_index: u64,
    pub siblings: Vec<Hash256>,
}

impl MerkleBranch {
    pub fn len(&self) -> usize {
        self.siblings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.siblings.is_empty()
    }
}

/// Root of the binary Merkle tree over `leaves`.
///
/// Levels with an odd node count duplicate their last node; the parent rule
/// is Keccak-256 of the concatenated children.
pub fn merkle_root(leaves: &[Hash256]) -> Result<Hash256, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = hash_level(&level);
    }
    Ok(level[0])
}

/// Sibling path for `leaves[index]`, usable with [`apply_branch`].
pub fn merkle_branch(leaves: &[Hash256], index: usize) -> Result<MerkleBranch, MerkleError> {
    if leaves.is_empty() {
        return Err(MerkleError::EmptyLeaves);
    }
    if index >= leaves.len() {
        return Err(MerkleError::IndexOutOfRange {
            index,
            leaves: leaves.len(),
        });
    }
    let mut siblings = Vec::new();
    let mut level = leaves.to_vec();
    let mut pos = index;
    while level.len() > 1 {
        let sibling = if pos % 2 == 0 {
            // duplicated last node is its own sibling
            *level.get(pos + 1).unwrap_or(&level[pos])
        } else {
            level[pos - 1]
        };
        siblings.push(sibling);
        level = hash_level(&level);
        pos /= 2;
    }
    Ok(MerkleBranch {
        leaf_index: index as u64,
        siblings,
    })
}

/// Fold `leaf` up the branch to the root it proves membership in.
pub fn apply_branch(leaf: &Hash256, branch: &MerkleBranch) -> Hash256 {
    let mut current = *leaf;
    let mut pos = branch.leaf_index;
    for sibling in &branch.siblings {
        current = if pos % 2 == 0 {
            keccak256_pair(&current, sibling)
        } else {
            keccak256_pair(sibling, &current)
        };
        pos /= 2;
    }
    current
}

fn hash_level(level: &[Hash256]) -> Vec<Hash256> {
    level
        .chunks(2)
        .map(|pair| match pair {
            [l, r] => keccak256_pair(l, r),
            [only] => keccak256_pair(only, only),
            _ => unreachable!(),
        })
        .collect()
}
