//! Exact hash-pair enumeration.
//!
//! For a table state and a rank permutation, `eta_exact` counts, for every
//! bin `z`, how many of the `n(n-1)` hash pairs `(f, g)` would send the next
//! ball to `z` under double hashing. Counts are exact integers; the
//! probability `η(z)` is `count / n(n-1)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::order::{ordered_view, OrderedView};
use crate::placement::{binomial_ratio, ordered_distribution, place_modified, TieBreak};
use crate::primes::is_prime;
use crate::rng::{trial_seed, RngStream, Streams, AUDIT};
use crate::table::{SimConfig, TableState};

/// Relative slack applied before declaring `η(z) > (1 + δ) p_j`.
pub const EXCEEDANCE_TOLERANCE: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtaVector {
    counts: Vec<u64>,
    n_pairs: u64,
}

impl EtaVector {
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn count(&self, bin: usize) -> u64 {
        self.counts[bin]
    }

    /// `n(n-1)`.
    pub fn n_pairs(&self) -> u64 {
        self.n_pairs
    }

    pub fn eta(&self, bin: usize) -> f64 {
        self.counts[bin] as f64 / self.n_pairs as f64
    }

    /// Whether `η(bin) > (1 + delta) * p`, compared as
    /// `count > (1 + delta) * p * n(n-1)` with [`EXCEEDANCE_TOLERANCE`] slack.
    pub fn exceeds(&self, bin: usize, p: f64, delta: f64) -> bool {
        let bound = (1.0 + delta) * p * self.n_pairs as f64;
        self.counts[bin] as f64 > bound * (1.0 + EXCEEDANCE_TOLERANCE)
    }
}

/// Counts the winner of every hash pair. `O(n^2 d)`; meant for `n` up to a
/// few thousand.
pub fn eta_exact(state: &TableState, view: &OrderedView, d: usize) -> EtaVector {
    let n = state.n();
    assert!(d >= 1 && d <= n, "need 1 <= d <= n");
    assert!(n <= u32::MAX as usize);
    debug_assert!(
        is_prime(n as u64),
        "double hashing needs a prime table size"
    );
    assert_eq!(view.n(), n);

    // The view sorts bins by `priority_key`, so comparing ordered positions
    // is the same comparison placement makes. Packing the bin below the
    // position lets a plain `max` pick the winner without branching.
    let packed: Vec<u64> = (0..n)
        .map(|b| ((view.position_of(b) as u64) << 32) | b as u64)
        .collect();
    let packed = &packed;

    // For a fixed step g, probe k of every f is `packed` rotated by k g, so
    // the winners for all f at once are an element-wise max of rotations.
    // Four interleaved tallies keep consecutive increments of the same bin
    // from serializing on one memory slot.
    let mut lanes = vec![[0u64; 4]; n];
    let mut best = vec![0u64; n];
    for g in 1..n {
        best.copy_from_slice(packed);
        let mut offset = 0;
        for _ in 1..d {
            offset += g;
            if offset >= n {
                offset -= n;
            }
            let (head, tail) = best.split_at_mut(n - offset);
            for (x, &y) in head.iter_mut().zip(&packed[offset..]) {
                *x = (*x).max(y);
            }
            for (x, &y) in tail.iter_mut().zip(&packed[..offset]) {
                *x = (*x).max(y);
            }
        }
        let mut quads = best.chunks_exact(4);
        for q in &mut quads {
            lanes[(q[0] & 0xffff_ffff) as usize][0] += 1;
            lanes[(q[1] & 0xffff_ffff) as usize][1] += 1;
            lanes[(q[2] & 0xffff_ffff) as usize][2] += 1;
            lanes[(q[3] & 0xffff_ffff) as usize][3] += 1;
        }
        for &w in quads.remainder() {
            lanes[(w & 0xffff_ffff) as usize][0] += 1;
        }
    }
    let counts: Vec<u64> = lanes.iter().map(|l| l.iter().sum()).collect();

    let n_pairs = (n * (n - 1)) as u64;
    let total: u64 = counts.iter().sum();
    assert_eq!(total, n_pairs, "every hash pair has exactly one winner");
    EtaVector { counts, n_pairs }
}

/// `E[η̂(z)]` for the bin at ordered position `j` when the order is a uniform
/// permutation: `d (n-1) C(j-1, d-1) / C(n-1, d-1)`.
pub fn expected_count(j: usize, d: usize, n: usize) -> f64 {
    d as f64 * (n - 1) as f64 * binomial_ratio(j, d, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRow {
    pub j: usize,
    pub formula_mean: f64,
    pub empirical_mean: f64,
    pub stderr: f64,
}

impl AuditRow {
    /// Empirical mean within `k` standard errors of the formula. A zero
    /// standard error demands equality up to float rounding.
    pub fn within(&self, k: f64) -> bool {
        let slack = 1e-9 * self.formula_mean.abs().max(1.0);
        (self.empirical_mean - self.formula_mean).abs() <= k * self.stderr + slack
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaAudit {
    pub n: usize,
    pub d: usize,
    pub samples: u64,
    pub rows: Vec<AuditRow>,
}

impl EtaAudit {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("j,formula_mean,empirical_mean,stderr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.j, r.formula_mean, r.empirical_mean, r.stderr
            ));
        }
        out
    }
}

/// Averages `η̂` at each ordered position over fresh rank permutations of an
/// all-tied table.
pub fn eta_expectation_audit(n: usize, d: usize, samples: u64, rng: &mut RngStream) -> EtaAudit {
    assert!(samples >= 1);
    let empty = TableState::empty(n);
    let mut sum = vec![0u128; n];
    let mut sum_sq = vec![0u128; n];
    for _ in 0..samples {
        let view = ordered_view(&empty, rng);
        let eta = eta_exact(&empty, &view, d);
        for j in 1..=n {
            let c = eta.count(view.bin_at(j)) as u128;
            sum[j - 1] += c;
            sum_sq[j - 1] += c * c;
        }
    }
    let s = samples as u128;
    let rows = (1..=n)
        .map(|j| {
            let (t, tt) = (sum[j - 1], sum_sq[j - 1]);
            let stderr = if samples > 1 {
                // s * Σc² - (Σc)² is exact in u128
                let var = (s * tt - t * t) as f64 / (s * (s - 1)) as f64;
                (var / samples as f64).sqrt()
            } else {
                0.0
            };
            AuditRow {
                j,
                formula_mean: expected_count(j, d, n),
                empirical_mean: t as f64 / samples as f64,
                stderr,
            }
        })
        .collect();
    EtaAudit {
        n,
        d,
        samples,
        rows,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanCheckpoint {
    pub balls_placed: u64,
    /// Trials evaluated at this fill level.
    pub checks: u64,
    /// Trials with at least one bin over the bound.
    pub failed_checks: u64,
    pub flagged_bins: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureScan {
    pub n: u64,
    pub d: usize,
    pub t: f64,
    pub seed: u64,
    pub delta: f64,
    pub trials: u64,
    /// Balls placed between consecutive checkpoints.
    pub cadence: u64,
    pub checkpoints: Vec<ScanCheckpoint>,
    /// Flag counts per ordered position, index `j - 1`.
    pub flags_by_position: Vec<u64>,
    pub total_checks: u64,
    pub failed_checks: u64,
    pub failure_rate: f64,
}

/// Checkpoint spacing: every ball for `n <= 211`, every 10th otherwise.
pub fn scan_cadence(n: u64) -> u64 {
    if n <= 211 {
        1
    } else {
        10
    }
}

fn checkpoint_fills(m: u64, cadence: u64) -> Vec<u64> {
    let mut fills: Vec<u64> = (0..=m).step_by(cadence as usize).collect();
    if fills.last() != Some(&m) {
        fills.push(m);
    }
    fills
}

struct TrialScan {
    failed: Vec<bool>,
    flagged: Vec<u64>,
    by_position: Vec<u64>,
}

fn scan_trial(cfg: &SimConfig, delta: f64, seed: u64, fills: &[u64]) -> TrialScan {
    let n = cfg.n as usize;
    let p = ordered_distribution(n, cfg.d);
    let mut streams = Streams::new(seed);
    let mut audit = RngStream::new(seed, AUDIT);
    let mut state = TableState::empty(n);
    let mut out = TrialScan {
        failed: Vec::with_capacity(fills.len()),
        flagged: Vec::with_capacity(fills.len()),
        by_position: vec![0; n],
    };
    for &fill in fills {
        while state.balls_placed() < fill {
            place_modified(&mut state, cfg.d, &mut streams, TieBreak::Lazy);
        }
        let view = ordered_view(&state, &mut audit);
        let eta = eta_exact(&state, &view, cfg.d);
        let mut flagged = 0;
        for j in 1..=n {
            if eta.exceeds(view.bin_at(j), p.p(j), delta) {
                flagged += 1;
                out.by_position[j - 1] += 1;
            }
        }
        out.failed.push(flagged > 0);
        out.flagged.push(flagged);
    }
    out
}

/// Runs the modified process and, at regular fill levels, measures how often
/// some bin has `η(z) > (1 + delta) p_j`. A measurement, not an assertion.
pub fn lemma4_failure_scan(cfg: &SimConfig, delta: f64, trials: u64) -> FailureScan {
    let n = cfg.n as usize;
    let cadence = scan_cadence(cfg.n);
    let fills = checkpoint_fills(cfg.balls(), cadence);
    let runs: Vec<TrialScan> = (0..trials)
        .into_par_iter()
        .map(|i| scan_trial(cfg, delta, trial_seed(cfg.seed, i), &fills))
        .collect();

    let mut checkpoints: Vec<ScanCheckpoint> = fills
        .iter()
        .map(|&balls_placed| ScanCheckpoint {
            balls_placed,
            checks: trials,
            failed_checks: 0,
            flagged_bins: 0,
        })
        .collect();
    let mut flags_by_position = vec![0u64; n];
    for run in &runs {
        for (c, (&failed, &flagged)) in checkpoints
            .iter_mut()
            .zip(run.failed.iter().zip(&run.flagged))
        {
            c.failed_checks += failed as u64;
            c.flagged_bins += flagged;
        }
        for (acc, x) in flags_by_position.iter_mut().zip(&run.by_position) {
            *acc += x;
        }
    }
    let total_checks = trials * fills.len() as u64;
    let failed_checks: u64 = checkpoints.iter().map(|c| c.failed_checks).sum();
    FailureScan {
        n: cfg.n,
        d: cfg.d,
        t: cfg.t,
        seed: cfg.seed,
        delta,
        trials,
        cadence,
        checkpoints,
        flags_by_position,
        total_checks,
        failed_checks,
        failure_rate: if total_checks == 0 {
            0.0
        } else {
            failed_checks as f64 / total_checks as f64
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Strategy;

    fn state(loads: &[u64]) -> TableState {
        TableState::from_loads(loads.to_vec()).unwrap()
    }

    #[test]
    fn one_choice_spreads_evenly() {
        let mut rng = RngStream::new(1, "t");
        for n in [2usize, 5, 7, 13] {
            let s = TableState::from_loads((0..n as u64).map(|i| i % 3).collect()).unwrap();
            let view = ordered_view(&s, &mut rng);
            let eta = eta_exact(&s, &view, 1);
            assert!(eta.counts().iter().all(|&c| c == n as u64 - 1));
        }
    }

    #[test]
    fn two_choices_on_tied_table_count_lower_positions() {
        // With d = 2 every unordered pair of bins occurs as (f, g) exactly
        // twice, so η̂ at ordered position j is 2 (j - 1) for any state.
        let mut rng = RngStream::new(2, "t");
        for loads in [vec![0u64; 7], vec![2, 0, 1, 1, 0, 3, 0]] {
            let s = state(&loads);
            let view = ordered_view(&s, &mut rng);
            let eta = eta_exact(&s, &view, 2);
            for j in 1..=7 {
                assert_eq!(eta.count(view.bin_at(j)), 2 * (j as u64 - 1));
            }
        }
    }

    #[test]
    fn exceedance_uses_the_scaled_bound() {
        let s = TableState::empty(5);
        let view = OrderedView::with_ranks(&s, vec![0, 1, 2, 3, 4]);
        let eta = eta_exact(&s, &view, 2);
        // bin 4 is at position 5 with count 8 of 20
        assert_eq!(eta.count(4), 8);
        assert!(!eta.exceeds(4, 0.4, 0.0));
        assert!(eta.exceeds(4, 0.399, 0.0));
        assert!(!eta.exceeds(4, 0.399, 0.01));
    }

    #[test]
    fn expected_counts() {
        assert_eq!(expected_count(1, 2, 101), 0.0);
        assert!((expected_count(51, 2, 101) - 100.0).abs() < 1e-12);
        assert_eq!(expected_count(3, 1, 11), 10.0);
    }

    #[test]
    fn one_choice_audit_is_flat() {
        let mut rng = RngStream::new(3, "t");
        let audit = eta_expectation_audit(11, 1, 50, &mut rng);
        for r in &audit.rows {
            assert_eq!(r.empirical_mean, 10.0);
            assert_eq!(r.stderr, 0.0);
            assert!(r.within(3.0));
        }
        let csv = audit.to_csv();
        assert!(csv.starts_with("j,formula_mean,empirical_mean,stderr\n1,10,10,0\n"));
    }

    #[test]
    fn three_choice_audit_within_three_stderr() {
        let mut rng = RngStream::new(4, "t");
        let audit = eta_expectation_audit(31, 3, 2_000, &mut rng);
        assert_eq!(audit.rows[0].formula_mean, 0.0);
        assert!(audit.rows[0].empirical_mean >= 0.0);
        for r in &audit.rows {
            assert!(r.within(3.0), "{r:?}");
        }
    }

    #[test]
    fn cadence_and_fills() {
        assert_eq!(scan_cadence(211), 1);
        assert_eq!(scan_cadence(223), 10);
        assert_eq!(checkpoint_fills(25, 10), vec![0, 10, 20, 25]);
        assert_eq!(checkpoint_fills(3, 1), vec![0, 1, 2, 3]);
    }

    #[test]
    fn huge_delta_never_fails() {
        let cfg = SimConfig::new(31, 3, 1.0, 5, Strategy::Modified).unwrap();
        let scan = lemma4_failure_scan(&cfg, 30.0, 3);
        assert_eq!(scan.failed_checks, 0);
        assert_eq!(scan.total_checks, 3 * 32);
    }

    #[test]
    fn single_choice_never_fails() {
        let cfg = SimConfig::new(31, 1, 1.0, 6, Strategy::Modified).unwrap();
        let scan = lemma4_failure_scan(&cfg, 0.0, 3);
        assert_eq!(scan.failure_rate, 0.0);
    }

    #[test]
    fn two_choice_baseline_at_499() {
        let cfg = SimConfig::new(499, 2, 1.0, 0, Strategy::Modified).unwrap();
        let scan = lemma4_failure_scan(&cfg, 0.05, 2);
        assert_eq!(scan.total_checks, 2 * 51);
        assert_eq!(scan.failed_checks, 0);
        assert_eq!(scan.failure_rate, 0.0);
    }

    #[test]
    fn scan_is_deterministic() {
        let cfg = SimConfig::new(23, 3, 1.0, 7, Strategy::Modified).unwrap();
        assert_eq!(
            lemma4_failure_scan(&cfg, 0.05, 4),
            lemma4_failure_scan(&cfg, 0.05, 4)
        );
    }
}
