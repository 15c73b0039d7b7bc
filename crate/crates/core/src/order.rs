//! Total order on bins: by load, heaviest first, then by a random rank.
//!
//! Ordered positions are 1-based. Position 1 holds the heaviest bin with the
//! lowest tie-break priority; position `n` the lightest bin with the highest
//! priority. A ball offered several bins goes to the one at the largest
//! ordered position.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::RngStream;
use crate::table::TableState;

/// Sort key shared by every placement and enumeration path. Larger keys win:
/// lower load first, then higher rank.
#[inline]
pub fn priority_key(load: u64, rank: u64) -> u128 {
    (((u64::MAX - load) as u128) << 64) | rank as u128
}

/// Whether a candidate with key `challenger` takes the ball from `holder`.
#[inline(always)]
pub fn beats(challenger: u128, holder: u128) -> bool {
    challenger > holder
}

/// Index into `choices` of the winning candidate given per-candidate keys.
#[inline]
pub fn winner_index(keys: impl Iterator<Item = u128>) -> usize {
    let mut best = 0;
    let mut best_key = 0u128;
    for (i, key) in keys.enumerate() {
        if i == 0 || beats(key, best_key) {
            best = i;
            best_key = key;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrderedView {
    /// `rank[bin]`, a permutation of `0..n`; higher means higher priority.
    rank: Vec<u64>,
    /// `order[j - 1]` is the bin at ordered position `j`.
    order: Vec<usize>,
    /// Inverse of `order`, 1-based.
    position: Vec<usize>,
}

impl OrderedView {
    /// Orders `state` under a fixed rank permutation.
    pub fn with_ranks(state: &TableState, rank: Vec<u64>) -> Self {
        assert_eq!(rank.len(), state.n(), "rank length must equal bin count");
        let mut order: Vec<usize> = (0..state.n()).collect();
        order.sort_unstable_by_key(|&bin| priority_key(state.load(bin), rank[bin]));
        let mut position = vec![0; order.len()];
        for (j, &bin) in order.iter().enumerate() {
            position[bin] = j + 1;
        }
        Self {
            rank,
            order,
            position,
        }
    }

    pub fn rank(&self, bin: usize) -> u64 {
        self.rank[bin]
    }

    pub fn ranks(&self) -> &[u64] {
        &self.rank
    }

    /// Bin at 1-based ordered position `j`.
    pub fn bin_at(&self, j: usize) -> usize {
        self.order[j - 1]
    }

    pub fn position_of(&self, bin: usize) -> usize {
        self.position[bin]
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn n(&self) -> usize {
        self.order.len()
    }
}

/// A uniformly random rank permutation of `0..n`.
pub fn random_ranks(n: usize, rng: &mut RngStream) -> Vec<u64> {
    let mut rank: Vec<u64> = (0..n as u64).collect();
    rank.shuffle(rng);
    rank
}

/// Orders the bins of `state` under a freshly drawn rank permutation.
pub fn ordered_view(state: &TableState, rng: &mut RngStream) -> OrderedView {
    OrderedView::with_ranks(state, random_ranks(state.n(), rng))
}
