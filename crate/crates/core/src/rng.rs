//! Labeled, seedable random streams.
//!
//! Every random decision in a run comes from one of a few streams, each a
//! ChaCha8 generator keyed by `SHA-256(label || seed)`. Separate streams
//! keep one feature's draws from shifting another's: turning on the
//! modified-process coin, for instance, leaves the hash-pair sequence intact.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const CHOICES: &str = "choices";
pub const TIEBREAK: &str = "tiebreak";
pub const BRANCH: &str = "branch";
pub const CORRECTION: &str = "correction";
pub const AUDIT: &str = "audit";

fn digest(label: &str, seed: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(label.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    hasher.finalize().into()
}

/// Seed for trial `index` of a batch started from `seed`.
pub fn trial_seed(seed: u64, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(b"trial\0");
    hasher.update(seed.to_le_bytes());
    hasher.update(index.to_le_bytes());
    let out: [u8; 32] = hasher.finalize().into();
    u64::from_le_bytes(out[..8].try_into().unwrap())
}

#[derive(Debug, Clone)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        Self {
            inner: ChaCha8Rng::from_seed(digest(label, seed)),
        }
    }

    /// Uniform on `[0, bound)`. Sampled through `u64` so results do not
    /// depend on the platform's pointer width.
    pub fn below(&mut self, bound: u64) -> u64 {
        self.inner.gen_range(0..bound)
    }

    /// Uniform on `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    pub fn key(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// The full set of streams a placement run draws from.
#[derive(Debug, Clone)]
pub struct Streams {
    pub choices: RngStream,
    pub tiebreak: RngStream,
    pub branch: RngStream,
    pub correction: RngStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            choices: RngStream::new(seed, CHOICES),
            tiebreak: RngStream::new(seed, TIEBREAK),
            branch: RngStream::new(seed, BRANCH),
            correction: RngStream::new(seed, CORRECTION),
        }
    }
}
