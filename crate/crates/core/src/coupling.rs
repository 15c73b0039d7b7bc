//! Coupling of the modified process with double hashing.
//!
//! Each step orders the main table under a fresh rank permutation and counts
//! `η(z)` exactly. If some bin has `η(z) > (1 + δ) p_j` the run fails and
//! stops. Otherwise, with probability `1 / (1 + δ)`, a uniform hash pair
//! places a ball by double hashing into both the main table and a shadow
//! table; with probability `δ / (1 + δ)` a correction ball goes to the main
//! table only, at ordered position `j` with probability
//! `q_j = ((1 + δ) p_j - η(z_j)) / δ`. Every main-table ball then lands at
//! position `j` with probability exactly `p_j`, and the shadow table holds a
//! pure double-hashing run that the main table dominates bin by bin.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eta::{eta_exact, EtaVector};
use crate::order::{ordered_view, OrderedView};
use crate::placement::{
    double_hash_choices, ordered_distribution, place_least_loaded_ranked, ChoiceSet,
    OrderedDistribution,
};
use crate::rng::Streams;
use crate::table::{dominates, HashPair, SimConfig, TableState};

/// Largest tolerated negative correction weight.
pub const CORRECTION_NEGATIVE_TOLERANCE: f64 = 1e-12;
/// Largest tolerated `|Σ q - 1|`.
pub const CORRECTION_SUM_TOLERANCE: f64 = 1e-9;
/// Largest tolerated error in `η/(1+δ) + δ q/(1+δ) = p_j`.
pub const MIXTURE_TOLERANCE: f64 = 1e-12;

/// What to do when some bin has `η(z) > (1 + δ) p_j`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Record the failure and end the run.
    Stop,
    /// Keep going; correction weights are clipped at zero and renormalized.
    /// The resulting run no longer follows the modified process exactly.
    ForcePass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingConfig {
    pub base: SimConfig,
    pub delta: f64,
    pub total_balls: u64,
    pub policy: FailurePolicy,
}

impl CouplingConfig {
    /// `total_balls` defaults to `floor((1 + 2δ) m)`.
    pub fn new(base: SimConfig, delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "delta must be positive and finite, got {delta}"
            )));
        }
        let total_balls = ((1.0 + 2.0 * delta) * base.balls() as f64).floor() as u64;
        if total_balls == 0 {
            return Err(Error::InvalidParameter(
                "the coupling would throw no balls; raise T or delta".into(),
            ));
        }
        Ok(Self {
            base,
            delta,
            total_balls,
            policy: FailurePolicy::Stop,
        })
    }

    /// `n^-0.01`.
    pub fn default_delta(n: u64) -> f64 {
        (n as f64).powf(-0.01)
    }

    pub fn with_total_balls(mut self, total_balls: u64) -> Result<Self> {
        if total_balls == 0 {
            return Err(Error::InvalidParameter(
                "total_balls must be at least 1".into(),
            ));
        }
        self.total_balls = total_balls;
        Ok(self)
    }

    pub fn with_policy(mut self, policy: FailurePolicy) -> Self {
        self.policy = policy;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingBranch {
    Double,
    Correction,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingStep {
    pub step_index: u64,
    /// Absent on a failed step.
    pub branch: Option<CouplingBranch>,
    pub failed: bool,
    pub chosen_bin: Option<usize>,
    /// Bin the shadow table received, on double steps.
    pub shadow_bin: Option<usize>,
    /// Hash pair used, on double steps.
    pub pair: Option<HashPair>,
    pub eta_snapshot_hash: String,
}

/// Worst-case values of the per-step checks over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingDiagnostics {
    pub max_mixture_error: f64,
    pub min_correction_weight: f64,
    pub max_correction_sum_error: f64,
    /// Steps on which step 2 was violated but the run continued.
    pub forced_steps: u64,
    pub dominance_checks: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingResult {
    pub main_table: TableState,
    pub shadow_table: TableState,
    pub double_count: u64,
    pub extra_count: u64,
    pub failed_at: Option<u64>,
    pub diagnostics: CouplingDiagnostics,
    pub trace: Vec<CouplingStep>,
}

impl CouplingResult {
    pub fn steps_completed(&self) -> u64 {
        self.double_count + self.extra_count
    }
}

/// Hex digest of the η counts, for the trace.
pub fn eta_digest(eta: &EtaVector) -> String {
    let mut hasher = Sha256::new();
    for &c in eta.counts() {
        hasher.update(c.to_le_bytes());
    }
    let out: [u8; 32] = hasher.finalize().into();
    out[..8].iter().map(|b| format!("{b:02x}")).collect()
}

fn violates(p: &OrderedDistribution, eta: &EtaVector, view: &OrderedView, delta: f64) -> bool {
    (1..=view.n()).any(|j| eta.exceeds(view.bin_at(j), p.p(j), delta))
}

fn raw_correction(
    p: &OrderedDistribution,
    eta: &EtaVector,
    view: &OrderedView,
    delta: f64,
) -> Vec<f64> {
    (1..=view.n())
        .map(|j| ((1.0 + delta) * p.p(j) - eta.eta(view.bin_at(j))) / delta)
        .collect()
}

/// `q_j = ((1 + δ) p_j - η(z_j)) / δ` over ordered positions, index `j - 1`.
///
/// Requires that no bin exceeds `(1 + δ) p_j`. A resulting weight below
/// `-1e-12` or a total off by more than `1e-9` is reported as a
/// consistency error.
pub fn correction_distribution(
    p: &OrderedDistribution,
    eta: &EtaVector,
    view: &OrderedView,
    delta: f64,
) -> Result<Vec<f64>> {
    if p.n() != view.n() || eta.counts().len() != view.n() {
        return Err(Error::SizeMismatch {
            left: p.n(),
            right: view.n(),
        });
    }
    if violates(p, eta, view, delta) {
        return Err(Error::Precondition(
            "some bin has eta(z) > (1 + delta) p_j; no correction distribution exists".into(),
        ));
    }
    let q = raw_correction(p, eta, view, delta);
    let min = q.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = q.iter().sum();
    if min < -CORRECTION_NEGATIVE_TOLERANCE {
        return Err(Error::Consistency(format!(
            "correction weight {min} is negative"
        )));
    }
    if (sum - 1.0).abs() > CORRECTION_SUM_TOLERANCE {
        return Err(Error::Consistency(format!(
            "correction weights sum to {sum}"
        )));
    }
    Ok(q)
}

/// Clipped and renormalized weights for [`FailurePolicy::ForcePass`].
fn forced_correction(
    p: &OrderedDistribution,
    eta: &EtaVector,
    view: &OrderedView,
    delta: f64,
) -> Vec<f64> {
    let mut q: Vec<f64> = raw_correction(p, eta, view, delta)
        .into_iter()
        .map(|x| x.max(0.0))
        .collect();
    let sum: f64 = q.iter().sum();
    if sum > 0.0 {
        q.iter_mut().for_each(|x| *x /= sum);
    } else {
        q = p.as_slice().to_vec();
    }
    q
}

/// Inverse-CDF draw of a 1-based position. Boundary ties go to the lower
/// index; negative weights count as zero.
pub fn sample_position(q: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 1;
    for (i, &w) in q.iter().enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last_positive = i + 1;
        if u < acc {
            return i + 1;
        }
    }
    last_positive
}

/// Inserts one ball with the same choices and ranks into both tables and
/// reports whether `b ⪰ a` still holds. Requires `b ⪰ a` beforehand.
pub fn domination_step_property(
    b: &TableState,
    a: &TableState,
    choices: &ChoiceSet,
    ranks: &[u64],
) -> Result<bool> {
    if !dominates(b, a)? {
        return Err(Error::Precondition("b must dominate a".into()));
    }
    if ranks.len() != b.n() || choices.bins().iter().any(|&x| x >= b.n()) {
        return Err(Error::OutOfRange {
            what: "choices or ranks",
            detail: format!("table has {} bins", b.n()),
        });
    }
    let (mut b, mut a) = (b.clone(), a.clone());
    place_least_loaded_ranked(&mut b, choices, ranks);
    place_least_loaded_ranked(&mut a, choices, ranks);
    dominates(&b, &a)
}

pub fn run_coupling(cc: &CouplingConfig) -> Result<CouplingResult> {
    let n = cc.base.n as usize;
    let d = cc.base.d;
    let delta = cc.delta;
    let p = ordered_distribution(n, d);
    let mut streams = Streams::new(cc.base.seed);
    let mut main = TableState::empty(n);
    let mut shadow = TableState::empty(n);
    let mut trace = Vec::with_capacity(cc.total_balls as usize);
    let mut diag = CouplingDiagnostics {
        max_mixture_error: 0.0,
        min_correction_weight: f64::INFINITY,
        max_correction_sum_error: 0.0,
        forced_steps: 0,
        dominance_checks: 0,
    };
    let (mut double_count, mut extra_count) = (0u64, 0u64);
    let mut failed_at = None;
    let stay = 1.0 / (1.0 + delta);

    for step_index in 0..cc.total_balls {
        let view = ordered_view(&main, &mut streams.tiebreak);
        let eta = eta_exact(&main, &view, d);
        let eta_snapshot_hash = eta_digest(&eta);

        let q = if violates(&p, &eta, &view, delta) {
            match cc.policy {
                FailurePolicy::Stop => {
                    trace.push(CouplingStep {
                        step_index,
                        branch: None,
                        failed: true,
                        chosen_bin: None,
                        shadow_bin: None,
                        pair: None,
                        eta_snapshot_hash,
                    });
                    failed_at = Some(step_index);
                    break;
                }
                FailurePolicy::ForcePass => {
                    diag.forced_steps += 1;
                    forced_correction(&p, &eta, &view, delta)
                }
            }
        } else {
            let q = correction_distribution(&p, &eta, &view, delta)?;
            let sum: f64 = q.iter().sum();
            diag.max_correction_sum_error = diag.max_correction_sum_error.max((sum - 1.0).abs());
            for (j, &qj) in q.iter().enumerate() {
                diag.min_correction_weight = diag.min_correction_weight.min(qj);
                let mixed = stay * eta.eta(view.bin_at(j + 1)) + delta * stay * qj;
                let err = (mixed - p.p(j + 1)).abs();
                diag.max_mixture_error = diag.max_mixture_error.max(err);
                if err > MIXTURE_TOLERANCE {
                    return Err(Error::Consistency(format!(
                        "mixture identity off by {err} at step {step_index}, position {}",
                        j + 1
                    )));
                }
            }
            q
        };

        // The pair is drawn every step, before and independently of the
        // branch coin, so the accepted pairs are i.i.d. uniform.
        let pair = HashPair::sample(n as u64, &mut streams.choices);
        let step = if streams.branch.unit() < stay {
            let choices = double_hash_choices(pair, d, n as u64);
            let bin = place_least_loaded_ranked(&mut main, &choices, view.ranks());
            let shadow_bin = place_least_loaded_ranked(&mut shadow, &choices, view.ranks());
            double_count += 1;
            CouplingStep {
                step_index,
                branch: Some(CouplingBranch::Double),
                failed: false,
                chosen_bin: Some(bin),
                shadow_bin: Some(shadow_bin),
                pair: Some(pair),
                eta_snapshot_hash,
            }
        } else {
            let j = sample_position(&q, streams.correction.unit());
            let bin = view.bin_at(j);
            main.place(bin);
            extra_count += 1;
            CouplingStep {
                step_index,
                branch: Some(CouplingBranch::Correction),
                failed: false,
                chosen_bin: Some(bin),
                shadow_bin: None,
                pair: None,
                eta_snapshot_hash,
            }
        };
        trace.push(step);

        diag.dominance_checks += 1;
        if !dominates(&main, &shadow)? {
            return Err(Error::Consistency(format!(
                "main table stopped dominating the shadow table at step {step_index}"
            )));
        }
    }

    Ok(CouplingResult {
        main_table: main,
        shadow_table: shadow,
        double_count,
        extra_count,
        failed_at,
        diagnostics: diag,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtraBallTally {
    pub m: u64,
    pub total: u64,
    pub double_count: u64,
    pub extra_count: u64,
    pub double_at_least_m: bool,
    pub extra_fraction: f64,
    /// `δ / (1 + δ)`.
    pub expected_extra_fraction: f64,
}

pub fn extra_ball_tally(result: &CouplingResult, m: u64, delta: f64) -> Result<ExtraBallTally> {
    if let Some(step) = result.failed_at {
        return Err(Error::Precondition(format!(
            "the coupling failed at step {step}; no tally for an incomplete run"
        )));
    }
    let total = result.steps_completed();
    Ok(ExtraBallTally {
        m,
        total,
        double_count: result.double_count,
        extra_count: result.extra_count,
        double_at_least_m: result.double_count >= m,
        extra_fraction: if total == 0 {
            0.0
        } else {
            result.extra_count as f64 / total as f64
        },
        expected_extra_fraction: delta / (1.0 + delta),
    })
}
