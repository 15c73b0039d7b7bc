use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::primes::{is_prime, next_prime_at_least};
use crate::rng::RngStream;

/// How each ball picks its bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// One uniform bin, ignoring `d`.
    Single,
    /// Least loaded of `d` distinct uniform bins.
    Random,
    /// Least loaded of the `d` probes `(f + k g) mod n`.
    Double,
    /// With probability `n^-0.4` a uniform bin, otherwise as `Random`.
    Modified,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Single,
        Strategy::Random,
        Strategy::Double,
        Strategy::Modified,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Single => "single",
            Strategy::Random => "random",
            Strategy::Double => "double",
            Strategy::Modified => "modified",
        }
    }

    /// Number of choices the fluid limit should be solved with.
    pub fn effective_d(self, d: usize) -> usize {
        match self {
            Strategy::Single => 1,
            _ => d,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|strategy| strategy.as_str() == s)
            .ok_or_else(|| {
                Error::Parse(format!(
                    "unknown strategy {s:?}; expected one of single, random, double, modified"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: u64,
    pub d: usize,
    /// Balls per bin; the run places `floor(t * n)` balls.
    pub t: f64,
    pub seed: u64,
    pub strategy: Strategy,
}

impl SimConfig {
    pub fn new(n: u64, d: usize, t: f64, seed: u64, strategy: Strategy) -> Result<Self> {
        if !is_prime(n) {
            let suggestion = next_prime_at_least(n.max(2))?;
            return Err(Error::NotPrime { n, suggestion });
        }
        if d == 0 {
            return Err(Error::InvalidParameter("d must be at least 1".into()));
        }
        if d as u64 > n {
            return Err(Error::TooManyChoices { d, n });
        }
        if !t.is_finite() || t < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "T must be a finite non-negative number, got {t}"
            )));
        }
        if t * n as f64 >= u64::MAX as f64 {
            return Err(Error::Overflow("T * n does not fit in 64 bits"));
        }
        Ok(Self {
            n,
            d,
            t,
            seed,
            strategy,
        })
    }

    pub fn balls(&self) -> u64 {
        (self.t * self.n as f64).floor() as u64
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn with_strategy(&self, strategy: Strategy) -> Self {
        Self {
            strategy,
            ..self.clone()
        }
    }
}

/// Loads of every bin, 0-indexed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableState {
    loads: Vec<u64>,
    balls_placed: u64,
}

impl TableState {
    pub fn empty(n: usize) -> Self {
        Self {
            loads: vec![0; n],
            balls_placed: 0,
        }
    }

    /// Builds a state with the given loads, as if the balls had been placed
    /// one at a time.
    pub fn from_loads(loads: Vec<u64>) -> Result<Self> {
        let balls_placed = loads
            .iter()
            .try_fold(0u64, |acc, &l| acc.checked_add(l))
            .ok_or(Error::Overflow("total load"))?;
        Ok(Self {
            loads,
            balls_placed,
        })
    }

    pub fn n(&self) -> usize {
        self.loads.len()
    }

    pub fn loads(&self) -> &[u64] {
        &self.loads
    }

    pub fn load(&self, bin: usize) -> u64 {
        self.loads[bin]
    }

    pub fn balls_placed(&self) -> u64 {
        self.balls_placed
    }

    pub fn max_load(&self) -> u64 {
        self.loads.iter().copied().max().unwrap_or(0)
    }

    /// Adds one ball to `bin`.
    pub fn place(&mut self, bin: usize) {
        debug_assert!(self.loads[bin] < u64::MAX, "bin load overflow");
        self.loads[bin] += 1;
        self.balls_placed += 1;
    }
}

/// `b ⪰ a`: every bin of `b` holds at least as many balls as in `a`.
pub fn dominates(b: &TableState, a: &TableState) -> Result<bool> {
    if b.n() != a.n() {
        return Err(Error::SizeMismatch {
            left: b.n(),
            right: a.n(),
        });
    }
    Ok(b.loads.iter().zip(&a.loads).all(|(bi, ai)| bi >= ai))
}

/// The two hash values driving double hashing: `f ∈ [0, n)`, `g ∈ [1, n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HashPair {
    pub f: u64,
    pub g: u64,
}

impl HashPair {
    pub fn new(f: u64, g: u64, n: u64) -> Result<Self> {
        if f >= n || g == 0 || g >= n {
            return Err(Error::OutOfRange {
                what: "hash pair",
                detail: format!("(f, g) = ({f}, {g}) with n = {n}"),
            });
        }
        Ok(Self { f, g })
    }

    pub fn sample(n: u64, rng: &mut RngStream) -> Self {
        debug_assert!(n >= 2);
        let f = rng.below(n);
        let g = 1 + rng.below(n - 1);
        Self { f, g }
    }

    /// Position of this pair in the enumeration `f * (n - 1) + (g - 1)`.
    pub fn index(&self, n: u64) -> u64 {
        self.f * (n - 1) + (self.g - 1)
    }
}
