//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use hashalloc::coupling::{
    domination_step_property, run_coupling, CouplingBranch, CouplingConfig,
    CORRECTION_NEGATIVE_TOLERANCE, CORRECTION_SUM_TOLERANCE, MIXTURE_TOLERANCE,
};
use hashalloc::eta::{eta_exact, eta_expectation_audit};
use hashalloc::experiments::{compare_strategies, max_load_study, run_trials, TrialBatchReport};
use hashalloc::fluid::solve_fluid;
use hashalloc::order::random_ranks;
use hashalloc::parse::parse_fluid_csv;
use hashalloc::placement::ChoiceSet;
use hashalloc::rng::AUDIT;
use hashalloc::{dominates, OrderedView, RngStream, SimConfig, Strategy, TableState};

type Verdict = Result<String, String>;
type Criterion = (&'static str, fn() -> Verdict);

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn trials(n: u64, strategy: Strategy, d: usize, seed: u64) -> TrialBatchReport {
    let cfg = SimConfig::new(n, d, 1.0, seed, strategy).unwrap();
    run_trials(&cfg, 10, 1).unwrap()
}

fn fluid_closed_forms() -> Verdict {
    let start = Instant::now();
    let one = solve_fluid(1, 1.0, 20, 1e-3).map_err(|e| e.to_string())?;
    let two = solve_fluid(2, 1.0, 20, 1e-3).map_err(|e| e.to_string())?;
    let err1 = (one.fraction_at(1, 1.0).unwrap() - (1.0 - (-1.0f64).exp())).abs();
    let err2 = (two.fraction_at(1, 1.0).unwrap() - 1.0f64.tanh()).abs();
    let secs = start.elapsed().as_secs_f64();
    check(
        err1 <= 1e-8 && err2 <= 1e-8 && secs < 1.0,
        format!(
            "|x_1 - (1 - 1/e)| = {err1:.2e} (d=1), |x_1 - tanh 1| = {err2:.2e} (d=2), {secs:.3} s"
        ),
    )
}

/// For each level 1..=4, the trial mean of |X_i/n - x_i(1)|; returns the
/// largest of the four and their average.
fn fluid_gap(r: &TrialBatchReport) -> (f64, f64) {
    let n = r.config.n as f64;
    let gaps: Vec<f64> = (1..=4)
        .map(|i| {
            let x = r.fluid.at(i).unwrap();
            r.per_trial
                .iter()
                .map(|t| (t.histogram.at_least(i) as f64 / n - x).abs())
                .sum::<f64>()
                / r.per_trial.len() as f64
        })
        .collect();
    (
        gaps.iter().cloned().fold(0.0, f64::max),
        gaps.iter().sum::<f64>() / 4.0,
    )
}

fn simulation_matches_fluid() -> Verdict {
    let n = 100_003;
    let mut ok = true;
    let mut parts = Vec::new();
    for strategy in [Strategy::Random, Strategy::Modified, Strategy::Double] {
        let r = trials(n, strategy, 2, 7);
        let (worst, mean) = fluid_gap(&r);
        ok &= worst <= 0.01;
        parts.push(format!(
            "{strategy} worst level {worst:.2e} (average over levels {mean:.2e})"
        ));
    }
    let a = SimConfig::new(n, 2, 1.0, 101, Strategy::Random).unwrap();
    let b = a.with_seed(202);
    let null = compare_strategies(&a, &b, 10, 1).map_err(|e| e.to_string())?;
    parts.push(format!(
        "null random-vs-random max level difference {:.2e}",
        null.max_abs_difference
    ));
    check(ok, parts.join("; "))
}

fn double_matches_random() -> Verdict {
    let a = SimConfig::new(100_003, 2, 1.0, 7, Strategy::Double).unwrap();
    let b = SimConfig::new(100_003, 2, 1.0, 8, Strategy::Random).unwrap();
    let cmp = compare_strategies(&a, &b, 10, 1).map_err(|e| e.to_string())?;
    let big_double = trials(1_000_003, Strategy::Double, 2, 7);
    let big_random = trials(1_000_003, Strategy::Random, 2, 8);
    let (md, mr) = (big_double.max_load.median, big_random.max_load.median);
    check(
        cmp.max_abs_difference <= 0.01 && (md - mr).abs() <= 1.0,
        format!(
            "max per-level difference {:.2e} at n=100003; max-load medians {md} (double) vs {mr} (random) at n=1000003",
            cmp.max_abs_difference
        ),
    )
}

fn max_load_scaling() -> Verdict {
    let n_list = [100_003u64, 1_000_003];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut medians = Vec::new();
    for d in 2..=4 {
        let study = max_load_study(&n_list, d, 1.0, 10, Strategy::Double, 7, 1)
            .map_err(|e| e.to_string())?;
        for row in &study.rows {
            for &m in &row.per_trial {
                let offset = m as f64 - row.reference;
                lo = lo.min(offset);
                hi = hi.max(offset);
            }
            if d == 2 {
                medians.push((row.n, row.max_load.median));
            }
        }
    }
    let single =
        max_load_study(&n_list, 1, 1.0, 10, Strategy::Single, 7, 1).map_err(|e| e.to_string())?;
    let mut ordered = true;
    let mut parts = vec![format!(
        "offsets in [{lo:.3}, {hi:.3}], width {:.3}",
        hi - lo
    )];
    for (row, &(n, m2)) in single.rows.iter().zip(&medians) {
        ordered &= row.max_load.median > m2;
        parts.push(format!(
            "n={n}: median d=1 {} vs d=2 {m2}",
            row.max_load.median
        ));
    }
    check(hi - lo <= 3.0 && ordered, parts.join("; "))
}

/// Independent enumeration: the winner among the probes is the least loaded,
/// ties going to the larger rank.
fn brute_force_eta(loads: &[u64], ranks: &[u64], d: usize) -> Vec<u64> {
    let n = loads.len();
    let mut counts = vec![0u64; n];
    for f in 0..n {
        for g in 1..n {
            let winner = (0..d)
                .map(|k| (f + k * g) % n)
                .min_by(|&x, &y| loads[x].cmp(&loads[y]).then(ranks[y].cmp(&ranks[x])))
                .unwrap();
            counts[winner] += 1;
        }
    }
    counts
}

fn eta_exactness() -> Verdict {
    let start = Instant::now();
    let mut rng = RngStream::new(5, "acceptance-eta");
    let mut mismatches = 0;
    for case in 0..100 {
        let n = [5usize, 7, 11][case % 3];
        let loads: Vec<u64> = (0..n).map(|_| rng.below(4)).collect();
        let d = 1 + rng.below(n as u64) as usize;
        let ranks = random_ranks(n, &mut rng);
        let state = TableState::from_loads(loads.clone()).unwrap();
        let view = OrderedView::with_ranks(&state, ranks.clone());
        let eta = eta_exact(&state, &view, d);
        let total: u64 = eta.counts().iter().sum();
        if eta.counts() != brute_force_eta(&loads, &ranks, d).as_slice()
            || total != (n * (n - 1)) as u64
        {
            mismatches += 1;
        }
    }
    let mut audit_rng = RngStream::new(11, AUDIT);
    let audit = eta_expectation_audit(101, 2, 10_000, &mut audit_rng);
    let outside = audit.rows.iter().filter(|r| !r.within(3.0)).count();
    let secs = start.elapsed().as_secs_f64();
    check(
        mismatches == 0 && outside == 0 && secs < 60.0,
        format!(
            "{mismatches} of 100 enumeration mismatches; {outside} of {} audit positions outside 3 standard errors; {secs:.2} s",
            audit.rows.len()
        ),
    )
}

fn coupling_correctness() -> Verdict {
    let (n, delta) = (499u64, 0.05);
    let (mut doubles, mut steps, mut failures) = (0u64, 0u64, 0u64);
    let (mut mixture, mut neg, mut sum_err) = (0.0f64, f64::INFINITY, 0.0f64);
    let mut replay_ok = true;
    for seed in 0..5 {
        let base = SimConfig::new(n, 2, 1.0, seed, Strategy::Modified).unwrap();
        let cc = CouplingConfig::new(base, delta).unwrap();
        let r = run_coupling(&cc).map_err(|e| format!("seed {seed}: {e}"))?;
        failures += r.failed_at.is_some() as u64;
        doubles += r.double_count;
        steps += r.steps_completed();
        mixture = mixture.max(r.diagnostics.max_mixture_error);
        neg = neg.min(r.diagnostics.min_correction_weight);
        sum_err = sum_err.max(r.diagnostics.max_correction_sum_error);

        let mut main = TableState::empty(n as usize);
        let mut shadow = TableState::empty(n as usize);
        for step in r.trace.iter().filter(|s| !s.failed) {
            main.place(step.chosen_bin.unwrap());
            if step.branch == Some(CouplingBranch::Double) {
                shadow.place(step.shadow_bin.unwrap());
            }
            replay_ok &= dominates(&main, &shadow).unwrap();
        }
        replay_ok &= main == r.main_table && shadow == r.shadow_table;
    }
    let p = 1.0 / (1.0 + delta);
    let freq = doubles as f64 / steps as f64;
    let sigma = (p * (1.0 - p) / steps as f64).sqrt();
    let z = (freq - p) / sigma;
    check(
        mixture <= MIXTURE_TOLERANCE
            && neg >= -CORRECTION_NEGATIVE_TOLERANCE
            && sum_err <= CORRECTION_SUM_TOLERANCE
            && replay_ok
            && z.abs() <= 3.0,
        format!(
            "mixture error {mixture:.1e}, min correction weight {neg:.2e}, sum error {sum_err:.1e}, \
             dominance {}, double frequency {freq:.4} vs {p:.4} (z = {z:+.2}, {steps} steps); \
             step-2 failures in {failures} of 5 runs",
            if replay_ok { "held at every step" } else { "BROKEN" }
        ),
    )
}

fn domination_property() -> Verdict {
    let start = Instant::now();
    let mut rng = RngStream::new(3, "acceptance-domination");
    let mut broken = 0;
    for _ in 0..100_000 {
        let n = 2 + rng.below(15) as usize;
        let a: Vec<u64> = (0..n).map(|_| rng.below(6)).collect();
        let b: Vec<u64> = a.iter().map(|&x| x + rng.below(3)).collect();
        let d = 1 + rng.below(n as u64) as usize;
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..d {
            let j = i + rng.below((n - i) as u64) as usize;
            pool.swap(i, j);
        }
        let choices = ChoiceSet::new(pool[..d].to_vec()).unwrap();
        let ranks = random_ranks(n, &mut rng);
        let (b, a) = (
            TableState::from_loads(b).unwrap(),
            TableState::from_loads(a).unwrap(),
        );
        if !domination_step_property(&b, &a, &choices, &ranks).unwrap() {
            broken += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        broken == 0 && secs < 10.0,
        format!("{broken} of 100000 pairs lost domination; {secs:.2} s"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hashalloc"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`hashalloc {}` exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn determinism() -> Verdict {
    let commands: [&[&str]; 6] = [
        &[
            "simulate",
            "--n",
            "100003",
            "--d",
            "2",
            "--T",
            "1",
            "--strategy",
            "double",
            "--trials",
            "10",
            "--seed",
            "7",
            "--out",
            "simulate.json",
            "--csv",
            "simulate.csv",
        ],
        &[
            "fluid",
            "--d",
            "2",
            "--T",
            "1",
            "--imax",
            "20",
            "--dt",
            "1e-4",
            "--out",
            "fluid.csv",
        ],
        &[
            "couple",
            "--n",
            "499",
            "--d",
            "2",
            "--T",
            "1",
            "--delta",
            "0.05",
            "--seed",
            "1",
            "--trace",
            "couple.jsonl",
            "--out",
            "couple.json",
        ],
        &[
            "audit-eta",
            "--n",
            "101",
            "--d",
            "2",
            "--samples",
            "10000",
            "--seed",
            "3",
            "--out",
            "audit.csv",
            "--scan-delta",
            "0.05",
            "--scan-trials",
            "2",
            "--scan-out",
            "scan.json",
        ],
        &[
            "compare",
            "--n",
            "100003",
            "--d",
            "2",
            "--T",
            "1",
            "--strategy-a",
            "double",
            "--strategy-b",
            "random",
            "--trials",
            "10",
            "--seed",
            "7",
            "--out",
            "compare.json",
            "--csv",
            "compare.csv",
        ],
        &[
            "maxload",
            "--n-list",
            "100003,1000003",
            "--d",
            "2",
            "--T",
            "1",
            "--trials",
            "10",
            "--strategy",
            "double",
            "--seed",
            "7",
            "--out",
            "maxload.json",
            "--csv",
            "maxload.csv",
        ],
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: Vec<_> = (0..2)
        .map(|k| {
            let dir = tmp.path().join(format!("run{k}"));
            fs::create_dir(&dir).unwrap();
            dir
        })
        .collect();
    for dir in &runs {
        for args in commands {
            run_cli(dir, args)?;
        }
    }
    run_cli(
        &runs[1],
        &[
            "simulate",
            "--n",
            "100003",
            "--d",
            "2",
            "--T",
            "1",
            "--strategy",
            "double",
            "--trials",
            "10",
            "--seed",
            "7",
            "--threads",
            "2",
            "--out",
            "threaded.json",
        ],
    )?;

    let mut names: Vec<_> = fs::read_dir(&runs[0])
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for name in &names {
        let first = fs::read(runs[0].join(name)).unwrap();
        let second = fs::read(runs[1].join(name)).map_err(|e| e.to_string())?;
        if first != second {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    let threaded_same = fs::read(runs[0].join("simulate.json")).unwrap()
        == fs::read(runs[1].join("threaded.json")).unwrap();

    let fluid = parse_fluid_csv(&fs::read_to_string(runs[0].join("fluid.csv")).unwrap())
        .map_err(|e| e.to_string())?;
    let x1 = fluid.levels.last().unwrap()[0];
    let fluid_err = (x1 - 1.0f64.tanh()).abs();

    check(
        differing.is_empty() && threaded_same && fluid_err <= 1e-8,
        format!(
            "{} files compared across two runs, differing: {:?}; --threads 2 matches --threads 1: {threaded_same}; \
             CLI fluid |x_1(1) - tanh 1| = {fluid_err:.1e}",
            names.len(),
            differing
        ),
    )
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("fluid closed forms", fluid_closed_forms),
        (
            "simulation matches the fluid limit",
            simulation_matches_fluid,
        ),
        (
            "double hashing matches random choices",
            double_matches_random,
        ),
        ("max-load scaling", max_load_scaling),
        ("exact eta enumeration", eta_exactness),
        ("coupling correctness", coupling_correctness),
        ("shared insertions preserve domination", domination_property),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let verdict = run();
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(detail) => println!("criterion {} PASS {name} ({secs:.1} s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name} ({secs:.1} s): {detail}", k + 1);
            }
        }
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
