//! Balanced allocations under double hashing.
//!
//! Balls are placed one at a time into a prime number `n` of bins, each into
//! the least loaded of `d` candidates. The candidates come from one of four
//! strategies: a single uniform bin, `d` distinct uniform bins, the double
//! hashing probes `(f + k g) mod n`, or a modified process that places
//! uniformly with probability `n^-0.4`.
//!
//! Besides the simulators, the crate has:
//!
//! * [`eta`]: exact enumeration of which hash pairs send the next ball where;
//! * [`coupling`]: a step-by-step coupling that builds a modified-process run
//!   containing a pure double-hashing run, with a shadow table checking that
//!   the first dominates the second;
//! * [`fluid`]: the fluid-limit ODEs `x_i' = x_{i-1}^d - x_i^d`;
//! * [`experiments`]: batch runners for load fractions and maximum load.

pub mod coupling;
pub mod error;
pub mod eta;
pub mod experiments;
pub mod fluid;
pub mod order;
pub mod parse;
pub mod placement;
pub mod primes;
pub mod rng;
pub mod table;

pub use error::{Error, Result};
pub use order::{ordered_view, OrderedView};
pub use primes::{is_prime, next_prime_at_least};
pub use rng::{RngStream, Streams};
pub use table::{dominates, HashPair, SimConfig, Strategy, TableState};

/// Version tag written into every JSON and CSV output.
pub const SCHEMA_VERSION: u32 = 1;
