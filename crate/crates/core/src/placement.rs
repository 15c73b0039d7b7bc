//! Placement strategies and the ordered-position law of the modified process.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::order::{priority_key, winner_index, OrderedView};
use crate::rng::{RngStream, Streams};
use crate::table::{HashPair, SimConfig, Strategy, TableState};

/// The `d` distinct candidate bins offered to one ball.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSet {
    bins: Vec<usize>,
}

impl ChoiceSet {
    /// Fails if `bins` is empty or contains a repeat.
    pub fn new(bins: Vec<usize>) -> Option<Self> {
        if bins.is_empty() {
            return None;
        }
        for (i, b) in bins.iter().enumerate() {
            if bins[..i].contains(b) {
                return None;
            }
        }
        Some(Self { bins })
    }

    pub fn bins(&self) -> &[usize] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    DChoice,
    UniformSingle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacementOutcome {
    pub bin: usize,
    pub branch: Branch,
    /// Absent for [`Branch::UniformSingle`].
    pub choices: Option<ChoiceSet>,
}

/// How ties between equally loaded candidates are broken.
#[derive(Debug, Clone, Copy)]
pub enum TieBreak<'a> {
    /// Fresh i.i.d. 64-bit keys for just the candidates, drawn from the
    /// tie-break stream. Equivalent in law to restricting a uniform
    /// permutation to the candidates, at O(d) cost.
    Lazy,
    /// Ranks from a full per-step permutation.
    Ranked(&'a OrderedView),
}

/// `(f + k g) mod n` for `k = 0..d`.
pub fn double_hash_choices(pair: HashPair, d: usize, n: u64) -> ChoiceSet {
    debug_assert!(d as u64 <= n && pair.f < n && pair.g >= 1 && pair.g < n);
    let mut bins = Vec::with_capacity(d);
    let mut h = pair.f;
    for _ in 0..d {
        bins.push(h as usize);
        h += pair.g;
        if h >= n {
            h -= n;
        }
    }
    ChoiceSet { bins }
}

/// Puts a ball into the least loaded candidate, breaking ties with fresh
/// random keys. Returns the chosen bin.
pub fn place_least_loaded(
    state: &mut TableState,
    choices: &ChoiceSet,
    tiebreak: &mut RngStream,
) -> usize {
    let bin = if choices.len() == 1 {
        choices.bins[0]
    } else {
        let keys: Vec<u64> = choices.bins.iter().map(|_| tiebreak.key()).collect();
        let won = winner_index(
            choices
                .bins
                .iter()
                .zip(&keys)
                .map(|(&b, &k)| priority_key(state.load(b), k)),
        );
        choices.bins[won]
    };
    state.place(bin);
    bin
}

/// The candidate that wins under the given rank permutation, without placing.
pub fn ranked_winner(state: &TableState, choices: &ChoiceSet, ranks: &[u64]) -> usize {
    let won = winner_index(
        choices
            .bins
            .iter()
            .map(|&b| priority_key(state.load(b), ranks[b])),
    );
    choices.bins[won]
}

/// Like [`place_least_loaded`] but with ranks taken from a full permutation.
pub fn place_least_loaded_ranked(
    state: &mut TableState,
    choices: &ChoiceSet,
    ranks: &[u64],
) -> usize {
    let bin = ranked_winner(state, choices, ranks);
    state.place(bin);
    bin
}

fn place_among(
    state: &mut TableState,
    choices: ChoiceSet,
    tiebreak: &mut RngStream,
    tie: TieBreak<'_>,
) -> PlacementOutcome {
    let bin = match tie {
        TieBreak::Lazy => place_least_loaded(state, &choices, tiebreak),
        TieBreak::Ranked(view) => place_least_loaded_ranked(state, &choices, view.ranks()),
    };
    PlacementOutcome {
        bin,
        branch: Branch::DChoice,
        choices: Some(choices),
    }
}

/// `d` distinct uniform bins, uniform over all `C(n, d)` subsets.
pub fn sample_distinct(n: usize, d: usize, rng: &mut RngStream) -> ChoiceSet {
    ChoiceSet {
        bins: index::sample(rng, n, d).into_vec(),
    }
}

pub fn place_random_d(
    state: &mut TableState,
    d: usize,
    streams: &mut Streams,
    tie: TieBreak<'_>,
) -> PlacementOutcome {
    let choices = sample_distinct(state.n(), d, &mut streams.choices);
    place_among(state, choices, &mut streams.tiebreak, tie)
}

pub fn place_double(
    state: &mut TableState,
    d: usize,
    streams: &mut Streams,
    tie: TieBreak<'_>,
) -> PlacementOutcome {
    let n = state.n() as u64;
    let pair = HashPair::sample(n, &mut streams.choices);
    let choices = double_hash_choices(pair, d, n);
    place_among(state, choices, &mut streams.tiebreak, tie)
}

pub fn place_single(state: &mut TableState, streams: &mut Streams) -> PlacementOutcome {
    let bin = streams.choices.below(state.n() as u64) as usize;
    state.place(bin);
    PlacementOutcome {
        bin,
        branch: Branch::UniformSingle,
        choices: None,
    }
}

/// Probability that the modified process ignores its choices: `n^-0.4`.
pub fn uniform_branch_probability(n: u64) -> f64 {
    (n as f64).powf(-0.4)
}

pub fn place_modified(
    state: &mut TableState,
    d: usize,
    streams: &mut Streams,
    tie: TieBreak<'_>,
) -> PlacementOutcome {
    let eps = uniform_branch_probability(state.n() as u64);
    if streams.branch.unit() < eps {
        place_single(state, streams)
    } else {
        place_random_d(state, d, streams, tie)
    }
}

pub fn place(
    state: &mut TableState,
    strategy: Strategy,
    d: usize,
    streams: &mut Streams,
    tie: TieBreak<'_>,
) -> PlacementOutcome {
    match strategy {
        Strategy::Single => place_single(state, streams),
        Strategy::Random => place_random_d(state, d, streams, tie),
        Strategy::Double => place_double(state, d, streams, tie),
        Strategy::Modified => place_modified(state, d, streams, tie),
    }
}

/// Places `floor(T n)` balls into an empty table.
pub fn run_process(cfg: &SimConfig) -> TableState {
    let mut state = TableState::empty(cfg.n as usize);
    let mut streams = Streams::new(cfg.seed);
    for _ in 0..cfg.balls() {
        place(
            &mut state,
            cfg.strategy,
            cfg.d,
            &mut streams,
            TieBreak::Lazy,
        );
    }
    state
}

/// `C(j-1, d-1) / C(n-1, d-1)` as a product of `d - 1` ratios.
pub fn binomial_ratio(j: usize, d: usize, n: usize) -> f64 {
    if j < d {
        return 0.0;
    }
    (1..d).map(|k| (j - k) as f64 / (n - k) as f64).product()
}

/// Probability that a uniform `d`-subset has the bin at ordered position `j`
/// as its lowest-placed member, i.e. that random hashing sends the ball there.
pub fn random_d_position_probability(j: usize, d: usize, n: usize) -> f64 {
    d as f64 / n as f64 * binomial_ratio(j, d, n)
}

/// `p_j` over ordered positions `j = 1..=n` for the modified process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderedDistribution {
    p: Vec<f64>,
}

impl OrderedDistribution {
    /// `p_j`, 1-based.
    pub fn p(&self, j: usize) -> f64 {
        self.p[j - 1]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn n(&self) -> usize {
        self.p.len()
    }
}

pub fn ordered_distribution(n: usize, d: usize) -> OrderedDistribution {
    assert!(d >= 1 && d <= n, "need 1 <= d <= n");
    let eps = uniform_branch_probability(n as u64);
    let floor = (n as f64).powf(-1.4);
    let p = (1..=n)
        .map(|j| (1.0 - eps) * random_d_position_probability(j, d, n) + floor)
        .collect();
    OrderedDistribution { p }
}
