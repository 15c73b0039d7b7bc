//! Batch trials: load fractions against the fluid limit, strategy
//! comparisons and maximum-load scaling.
//!
//! The finite-`n` tolerances used with these reports (0.01 on load
//! fractions at `n` around 10^5) are calibrated against random-vs-random
//! null runs; the asymptotic statements behind them carry no rates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fluid::{solve_fluid, DEFAULT_DT, DEFAULT_I_MAX};
use crate::placement::run_process;
use crate::rng::trial_seed;
use crate::table::{SimConfig, Strategy, TableState};
use crate::SCHEMA_VERSION;

const CALIBRATION_NOTE: &str =
    "tolerances are calibrated against random-vs-random null runs; the limit theorems give no finite-n rates";

/// `counts_at_least[i]` is the number of bins with load at least `i`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadHistogram {
    pub counts_at_least: Vec<u64>,
    pub max_load: u64,
}

impl LoadHistogram {
    pub fn from_state(state: &TableState) -> Self {
        let max_load = state.max_load();
        let mut exact = vec![0u64; max_load as usize + 2];
        for &l in state.loads() {
            exact[l as usize] += 1;
        }
        let mut counts_at_least = exact;
        for i in (0..counts_at_least.len() - 1).rev() {
            counts_at_least[i] += counts_at_least[i + 1];
        }
        Self {
            counts_at_least,
            max_load,
        }
    }

    /// `X_i`, zero beyond the stored range.
    pub fn at_least(&self, i: usize) -> u64 {
        self.counts_at_least.get(i).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub index: u64,
    pub seed: u64,
    pub histogram: LoadHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelStat {
    pub i: usize,
    pub mean_fraction: f64,
    pub std_fraction: f64,
    /// `x_i(T)`, when `i <= i_max`.
    pub fluid: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLoadStats {
    /// max load -> number of trials
    pub distribution: BTreeMap<u64, u64>,
    pub median: f64,
    pub min: u64,
    pub max: u64,
}

impl MaxLoadStats {
    pub fn from_values(values: &[u64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let mut distribution = BTreeMap::new();
        for &v in &sorted {
            *distribution.entry(v).or_insert(0) += 1;
        }
        let k = sorted.len();
        let median = if k == 0 {
            0.0
        } else if k % 2 == 1 {
            sorted[k / 2] as f64
        } else {
            (sorted[k / 2 - 1] + sorted[k / 2]) as f64 / 2.0
        };
        Self {
            distribution,
            median,
            min: sorted.first().copied().unwrap_or(0),
            max: sorted.last().copied().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidReference {
    pub d: usize,
    pub i_max: usize,
    pub dt: f64,
    /// `x_i(T)` for `i` in `0..=i_max`.
    pub x: Vec<f64>,
}

impl FluidReference {
    pub fn solve(d: usize, t: f64) -> Result<Self> {
        let x = if t == 0.0 {
            let mut x = vec![0.0; DEFAULT_I_MAX + 1];
            x[0] = 1.0;
            x
        } else {
            let dt = DEFAULT_DT.min(t);
            solve_fluid(d, t, DEFAULT_I_MAX, dt)?
                .final_fractions()
                .to_vec()
        };
        Ok(Self {
            d,
            i_max: DEFAULT_I_MAX,
            dt: DEFAULT_DT,
            x,
        })
    }

    pub fn at(&self, i: usize) -> Option<f64> {
        self.x.get(i).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialBatchReport {
    pub schema_version: u32,
    pub config: SimConfig,
    pub balls: u64,
    pub trials: u64,
    pub fluid: FluidReference,
    pub levels: Vec<LevelStat>,
    pub max_load: MaxLoadStats,
    pub per_trial: Vec<TrialRecord>,
    pub notes: Vec<String>,
}

impl TrialBatchReport {
    pub fn level(&self, i: usize) -> Option<&LevelStat> {
        self.levels.iter().find(|l| l.i == i)
    }

    /// Mean `X_i / n` at level `i`, zero above the largest observed load.
    pub fn mean_fraction(&self, i: usize) -> f64 {
        self.level(i).map_or(0.0, |l| l.mean_fraction)
    }

    pub fn levels_csv(&self) -> String {
        let c = &self.config;
        let mut out = format!(
            "# hashalloc simulate schema_version={SCHEMA_VERSION} n={} d={} T={} strategy={} seed={} trials={}\n",
            c.n, c.d, c.t, c.strategy, c.seed, self.trials
        );
        out.push_str("i,mean_fraction,std_fraction,fluid\n");
        for l in &self.levels {
            let fluid = l.fluid.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{}\n",
                l.i, l.mean_fraction, l.std_fraction, fluid
            ));
        }
        out
    }
}

/// Runs trials in order on `threads` workers; results come back in trial
/// order regardless of scheduling.
fn run_parallel<T, F>(count: u64, threads: usize, job: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    if threads <= 1 {
        return Ok((0..count).map(job).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(|| (0..count).into_par_iter().map(job).collect()))
}

fn mean_and_std(values: impl Iterator<Item = f64> + Clone, count: usize) -> (f64, f64) {
    let mean = values.clone().sum::<f64>() / count as f64;
    if count < 2 {
        return (mean, 0.0);
    }
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
    (mean, var.sqrt())
}

pub fn run_trials(cfg: &SimConfig, trials: u64, threads: usize) -> Result<TrialBatchReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let per_trial = run_parallel(trials, threads, |index| {
        let seed = trial_seed(cfg.seed, index);
        let state = run_process(&cfg.with_seed(seed));
        TrialRecord {
            index,
            seed,
            histogram: LoadHistogram::from_state(&state),
        }
    })?;

    let fluid = FluidReference::solve(cfg.strategy.effective_d(cfg.d), cfg.t)?;
    let n = cfg.n as f64;
    let top = per_trial
        .iter()
        .map(|r| r.histogram.max_load)
        .max()
        .unwrap_or(0) as usize
        + 1;
    let levels = (1..=top)
        .map(|i| {
            let fractions = per_trial
                .iter()
                .map(move |r| r.histogram.at_least(i) as f64 / n);
            let (mean_fraction, std_fraction) = mean_and_std(fractions, per_trial.len());
            LevelStat {
                i,
                mean_fraction,
                std_fraction,
                fluid: fluid.at(i),
            }
        })
        .collect();
    let max_loads: Vec<u64> = per_trial.iter().map(|r| r.histogram.max_load).collect();

    Ok(TrialBatchReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        balls: cfg.balls(),
        trials,
        fluid,
        levels,
        max_load: MaxLoadStats::from_values(&max_loads),
        per_trial,
        notes: vec![CALIBRATION_NOTE.to_string()],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelComparison {
    pub i: usize,
    pub mean_a: f64,
    pub mean_b: f64,
    /// `mean_a - mean_b`
    pub difference: f64,
    /// Pooled standard error of the difference.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub schema_version: u32,
    pub config_a: SimConfig,
    pub config_b: SimConfig,
    pub trials: u64,
    pub levels: Vec<LevelComparison>,
    pub max_load_a: MaxLoadStats,
    pub max_load_b: MaxLoadStats,
    pub max_abs_difference: f64,
    pub notes: Vec<String>,
}

impl ComparisonReport {
    pub fn levels_csv(&self) -> String {
        let mut out = format!(
            "# hashalloc compare schema_version={SCHEMA_VERSION} n={} d={} T={} strategy_a={} strategy_b={} seed_a={} seed_b={} trials={}\n",
            self.config_a.n,
            self.config_a.d,
            self.config_a.t,
            self.config_a.strategy,
            self.config_b.strategy,
            self.config_a.seed,
            self.config_b.seed,
            self.trials
        );
        out.push_str("i,mean_a,mean_b,difference,stderr\n");
        for l in &self.levels {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                l.i, l.mean_a, l.mean_b, l.difference, l.stderr
            ));
        }
        out
    }
}

fn comparison_from(a: TrialBatchReport, b: TrialBatchReport) -> ComparisonReport {
    let top = a.levels.len().max(b.levels.len());
    let (ta, tb) = (a.trials as f64, b.trials as f64);
    let levels: Vec<LevelComparison> = (1..=top)
        .map(|i| {
            let (sa, sb) = (
                a.level(i).map_or(0.0, |l| l.std_fraction),
                b.level(i).map_or(0.0, |l| l.std_fraction),
            );
            let (mean_a, mean_b) = (a.mean_fraction(i), b.mean_fraction(i));
            LevelComparison {
                i,
                mean_a,
                mean_b,
                difference: mean_a - mean_b,
                stderr: (sa * sa / ta + sb * sb / tb).sqrt(),
            }
        })
        .collect();
    let max_abs_difference = levels
        .iter()
        .map(|l| l.difference.abs())
        .fold(0.0, f64::max);
    ComparisonReport {
        schema_version: SCHEMA_VERSION,
        config_a: a.config,
        config_b: b.config,
        trials: a.trials,
        levels,
        max_load_a: a.max_load,
        max_load_b: b.max_load,
        max_abs_difference,
        notes: vec![CALIBRATION_NOTE.to_string()],
    }
}

/// Runs both configurations and reports per-level differences of the mean
/// `X_i / n`. Each side uses its own seed.
pub fn compare_strategies(
    cfg_a: &SimConfig,
    cfg_b: &SimConfig,
    trials: u64,
    threads: usize,
) -> Result<ComparisonReport> {
    if cfg_a.n != cfg_b.n || cfg_a.d != cfg_b.d || cfg_a.t != cfg_b.t {
        return Err(Error::InvalidParameter(format!(
            "compared configurations must share n, d and T (got n={}/{}, d={}/{}, T={}/{})",
            cfg_a.n, cfg_b.n, cfg_a.d, cfg_b.d, cfg_a.t, cfg_b.t
        )));
    }
    let a = run_trials(cfg_a, trials, threads)?;
    let b = run_trials(cfg_b, trials, threads)?;
    Ok(comparison_from(a, b))
}

/// `n e^{(d^{i-6} - 1)/(d - 1)} / (2e)^{d^{i-6}}`. Underflows to zero a few
/// levels above 6; see [`ln_beta_bound`].
pub fn beta_bound(i: usize, d: usize, n: u64) -> Result<f64> {
    ln_beta_bound(i, d, n).map(f64::exp)
}

/// Natural log of [`beta_bound`].
pub fn ln_beta_bound(i: usize, d: usize, n: u64) -> Result<f64> {
    if d < 2 {
        return Err(Error::InvalidParameter(
            "beta_bound needs d >= 2 (it divides by d - 1)".into(),
        ));
    }
    if i < 6 {
        return Err(Error::InvalidParameter(format!(
            "beta_bound is defined for i >= 6, got {i}"
        )));
    }
    let power = (d as f64).powi((i - 6) as i32);
    Ok((n as f64).ln() + (power - 1.0) / (d as f64 - 1.0) - power * (1.0 + 2f64.ln()))
}

/// `ln ln n / ln d` for `d >= 2`; `ln n / ln ln n` for a single choice.
pub fn max_load_reference(n: u64, d: usize) -> f64 {
    let ln_n = (n as f64).ln();
    if d >= 2 {
        ln_n.ln() / (d as f64).ln()
    } else {
        ln_n / ln_n.ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaRow {
    pub i: usize,
    pub observed_mean: f64,
    pub beta: f64,
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLoadRow {
    pub n: u64,
    pub reference: f64,
    pub max_load: MaxLoadStats,
    /// Trial max loads in trial order.
    pub per_trial: Vec<u64>,
    pub median_offset: f64,
    /// Observed `X_i` against the layered-induction bound, `d >= 2` only.
    pub beta: Vec<BetaRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxLoadStudy {
    pub schema_version: u32,
    pub d: usize,
    pub t: f64,
    pub trials: u64,
    pub strategy: Strategy,
    pub seed: u64,
    pub reference_formula: String,
    pub rows: Vec<MaxLoadRow>,
    pub notes: Vec<String>,
}

impl MaxLoadStudy {
    /// Plot data: one line per `n`.
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "# hashalloc maxload schema_version={SCHEMA_VERSION} d={} T={} strategy={} seed={} trials={}\n",
            self.d, self.t, self.strategy, self.seed, self.trials
        );
        out.push_str("n,reference,median,min,max,median_offset\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.n,
                r.reference,
                r.max_load.median,
                r.max_load.min,
                r.max_load.max,
                r.median_offset
            ));
        }
        out
    }
}

pub fn max_load_study(
    n_list: &[u64],
    d: usize,
    t: f64,
    trials: u64,
    strategy: Strategy,
    seed: u64,
    threads: usize,
) -> Result<MaxLoadStudy> {
    let d_eff = strategy.effective_d(d);
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let cfg = SimConfig::new(n, d, t, seed, strategy)?;
        let report = run_trials(&cfg, trials, threads)?;
        let per_trial: Vec<u64> = report
            .per_trial
            .iter()
            .map(|r| r.histogram.max_load)
            .collect();
        let reference = max_load_reference(n, d_eff);
        let beta = if d_eff >= 2 {
            (6..=12)
                .map(|i| {
                    let beta = beta_bound(i, d_eff, n)?;
                    let observed_mean = report.mean_fraction(i) * n as f64;
                    Ok(BetaRow {
                        i,
                        observed_mean,
                        beta,
                        within: observed_mean <= beta,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        rows.push(MaxLoadRow {
            n,
            reference,
            median_offset: report.max_load.median - reference,
            max_load: report.max_load,
            per_trial,
            beta,
        });
    }
    Ok(MaxLoadStudy {
        schema_version: SCHEMA_VERSION,
        d,
        t,
        trials,
        strategy,
        seed,
        reference_formula: if d_eff >= 2 {
            "ln(ln n) / ln d".into()
        } else {
            "ln n / ln(ln n)".into()
        },
        rows,
        notes: vec![
            "the O(1) offset between max load and the reference is reported, not asserted".into(),
            "beta rows are a with-high-probability diagnostic, not a guarantee".into(),
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: u64, d: usize, t: f64, strategy: Strategy) -> SimConfig {
        SimConfig::new(n, d, t, 3, strategy).unwrap()
    }

    #[test]
    fn histogram_shape() {
        let s = TableState::from_loads(vec![0, 2, 1, 2, 0, 5]).unwrap();
        let h = LoadHistogram::from_state(&s);
        assert_eq!(h.counts_at_least, vec![6, 4, 3, 1, 1, 1, 0]);
        assert_eq!(h.max_load, 5);
        assert_eq!(h.at_least(40), 0);
        let total: u64 = h.counts_at_least[1..].iter().sum();
        assert_eq!(total, s.balls_placed());
    }

    #[test]
    fn empty_batch() {
        let r = run_trials(&cfg(101, 2, 0.0, Strategy::Double), 3, 1).unwrap();
        assert_eq!(r.max_load.max, 0);
        assert_eq!(r.levels.len(), 1);
        assert_eq!(r.levels[0].mean_fraction, 0.0);
        assert!(r
            .per_trial
            .iter()
            .all(|t| t.histogram.counts_at_least == vec![101, 0]));
        assert!(run_trials(&cfg(101, 2, 1.0, Strategy::Double), 0, 1).is_err());
    }

    #[test]
    fn batch_coherence() {
        let c = cfg(1009, 2, 2.0, Strategy::Random);
        let r = run_trials(&c, 4, 1).unwrap();
        assert_eq!(r.per_trial.len(), 4);
        for t in &r.per_trial {
            let h = &t.histogram;
            assert_eq!(h.counts_at_least[0], 1009);
            assert!(h.counts_at_least.windows(2).all(|w| w[0] >= w[1]));
            assert!(h.at_least(h.max_load as usize) >= 1);
            assert_eq!(h.at_least(h.max_load as usize + 1), 0);
            assert_eq!(h.counts_at_least[1..].iter().sum::<u64>(), c.balls());
            assert!(h.at_least(1) <= c.balls());
            assert_eq!(t.seed, trial_seed(3, t.index));
        }
    }

    #[test]
    fn threads_do_not_change_results() {
        let c = cfg(1009, 3, 1.0, Strategy::Modified);
        let one = run_trials(&c, 5, 1).unwrap();
        let many = run_trials(&c, 5, 3).unwrap();
        assert_eq!(
            serde_json::to_string(&one).unwrap(),
            serde_json::to_string(&many).unwrap()
        );
    }

    #[test]
    fn identical_sides_compare_to_zero() {
        let c = cfg(1009, 2, 1.0, Strategy::Double);
        let r = compare_strategies(&c, &c, 3, 1).unwrap();
        assert!(r.levels.iter().all(|l| l.difference == 0.0));
        assert_eq!(r.max_abs_difference, 0.0);
        assert_eq!(r.max_load_a, r.max_load_b);
    }

    #[test]
    fn mismatched_comparison_is_rejected() {
        let a = cfg(1009, 2, 1.0, Strategy::Double);
        let b = cfg(1009, 3, 1.0, Strategy::Random);
        assert!(compare_strategies(&a, &b, 2, 1).is_err());
        let b = cfg(1013, 2, 1.0, Strategy::Random);
        assert!(compare_strategies(&a, &b, 2, 1).is_err());
    }

    #[test]
    fn beta_values() {
        let n = 1_000_003;
        let e = std::f64::consts::E;
        let b6 = beta_bound(6, 3, n).unwrap();
        assert!((b6 / (n as f64 / (2.0 * e)) - 1.0).abs() < 1e-12);
        let b7 = beta_bound(7, 2, n).unwrap();
        assert!((b7 / (n as f64 / (4.0 * e)) - 1.0).abs() < 1e-12);
        for d in 2..=4 {
            let seq: Vec<f64> = (6..=12).map(|i| ln_beta_bound(i, d, n).unwrap()).collect();
            assert!(seq.windows(2).all(|w| w[1] < w[0]), "d = {d}: {seq:?}");
            let plain: Vec<f64> = (6..=12).map(|i| beta_bound(i, d, n).unwrap()).collect();
            assert!(plain.windows(2).all(|w| w[1] <= w[0]));
        }
        assert!(beta_bound(6, 1, n).is_err());
        assert!(beta_bound(5, 2, n).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(MaxLoadStats::from_values(&[3, 1, 2]).median, 2.0);
        assert_eq!(MaxLoadStats::from_values(&[4, 1, 2, 3]).median, 2.5);
        let s = MaxLoadStats::from_values(&[3, 3, 4]);
        assert_eq!(s.distribution, BTreeMap::from([(3, 2), (4, 1)]));
        assert_eq!((s.min, s.max), (3, 4));
    }

    #[test]
    fn study_is_deterministic_and_separates_choices() {
        let one = max_load_study(&[10_007], 1, 1.0, 5, Strategy::Random, 9, 1).unwrap();
        let two = max_load_study(&[10_007], 2, 1.0, 5, Strategy::Random, 9, 1).unwrap();
        assert!(one.rows[0].max_load.median > two.rows[0].max_load.median);
        assert!(one.rows[0].beta.is_empty());
        assert_eq!(two.rows[0].beta.len(), 7);
        let again = max_load_study(&[10_007], 2, 1.0, 5, Strategy::Random, 9, 1).unwrap();
        assert_eq!(two, again);
        assert!(max_load_study(&[10_000], 2, 1.0, 1, Strategy::Random, 9, 1).is_err());
    }
}
