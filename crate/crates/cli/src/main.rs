mod args;

use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use hashalloc::coupling::{extra_ball_tally, run_coupling, CouplingConfig, FailurePolicy};
use hashalloc::eta::{eta_expectation_audit, lemma4_failure_scan};
use hashalloc::experiments::{compare_strategies, max_load_study, run_trials};
use hashalloc::fluid::{solve_fluid_with, Perturbation};
use hashalloc::parse::write_trace;
use hashalloc::rng::AUDIT;
use hashalloc::{RngStream, SimConfig, Strategy, SCHEMA_VERSION};
use serde_json::json;

use args::{
    AuditEtaArgs, Cli, Command, CompareArgs, CoupleArgs, FluidArgs, MaxloadArgs, SimulateArgs,
};

enum Failure {
    Invalid(String),
    Consistency(String),
}

impl From<hashalloc::Error> for Failure {
    fn from(e: hashalloc::Error) -> Self {
        if e.is_consistency() {
            Failure::Consistency(e.to_string())
        } else {
            Failure::Invalid(e.to_string())
        }
    }
}

type Outcome = Result<(), Failure>;

fn emit(path: Option<&Path>, body: &str) -> Outcome {
    match path {
        Some(p) => fs::write(p, body)
            .map_err(|e| Failure::Invalid(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(body.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| Failure::Invalid(format!("cannot write to standard output: {e}")))
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Failure> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Failure::Consistency(format!("cannot serialize report: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn progress(msg: &str) {
    eprintln!("hashalloc: {msg}");
}

fn simulate(a: SimulateArgs) -> Outcome {
    let cfg = SimConfig::new(a.n, a.d, a.t, a.seed, a.strategy)?;
    progress(&format!(
        "simulate n={} d={} T={} strategy={} trials={} ({} balls each)",
        cfg.n,
        cfg.d,
        cfg.t,
        cfg.strategy,
        a.trials,
        cfg.balls()
    ));
    let report = run_trials(&cfg, a.trials, a.threads)?;
    if let Some(csv) = &a.csv {
        emit(Some(csv), &report.levels_csv())?;
    }
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn fluid(a: FluidArgs) -> Outcome {
    if let Some(n) = a.perturb_n {
        if n == 0 {
            return Err(Failure::Invalid("--perturb-n must be at least 1".into()));
        }
    }
    let sol = solve_fluid_with(a.d, a.t, a.imax, a.dt, a.perturb_n.map(Perturbation::for_n))?;
    if !sol.faults.is_empty() {
        progress(&format!(
            "{} solver faults recorded (values clamped)",
            sol.faults.len()
        ));
    }
    emit(a.out.as_deref(), &sol.to_csv())
}

fn couple(a: CoupleArgs) -> Outcome {
    let base = SimConfig::new(a.n, a.d, a.t, a.seed, Strategy::Modified)?;
    let delta = a
        .delta
        .unwrap_or_else(|| CouplingConfig::default_delta(a.n));
    let mut cc = CouplingConfig::new(base, delta)?;
    if let Some(total) = a.total_balls {
        cc = cc.with_total_balls(total)?;
    }
    if a.force_pass {
        cc = cc.with_policy(FailurePolicy::ForcePass);
    }
    progress(&format!(
        "couple n={} d={} delta={} total_balls={} (exact enumeration each step)",
        cc.base.n, cc.base.d, cc.delta, cc.total_balls
    ));
    let result = run_coupling(&cc)?;
    let m = cc.base.balls();
    if let Some(trace) = &a.trace {
        emit(Some(trace), &write_trace(&result.trace))?;
    }
    let tally = match result.failed_at {
        None => Some(extra_ball_tally(&result, m, cc.delta)?),
        Some(step) => {
            progress(&format!("step 2 failed at step {step}; stopping"));
            None
        }
    };
    let summary = json!({
        "schema_version": SCHEMA_VERSION,
        "config": cc,
        "m": m,
        "steps_completed": result.steps_completed(),
        "failed_at": result.failed_at,
        "double_count": result.double_count,
        "extra_count": result.extra_count,
        "tally": tally,
        "diagnostics": result.diagnostics,
        "main_max_load": result.main_table.max_load(),
        "shadow_max_load": result.shadow_table.max_load(),
        "main_loads": result.main_table.loads(),
        "shadow_loads": result.shadow_table.loads(),
    });
    emit(a.out.as_deref(), &to_json(&summary)?)
}

fn audit_eta(a: AuditEtaArgs) -> Outcome {
    let cfg = SimConfig::new(a.n, a.d, a.scan_t, a.seed, Strategy::Modified)?;
    let n = usize::try_from(a.n)
        .ok()
        .filter(|&n| n <= u32::MAX as usize)
        .ok_or_else(|| Failure::Invalid(format!("n = {} is too large to enumerate", a.n)))?;
    if a.samples == 0 {
        return Err(Failure::Invalid("--samples must be at least 1".into()));
    }
    progress(&format!(
        "audit-eta n={} d={} samples={}",
        a.n, a.d, a.samples
    ));
    let mut rng = RngStream::new(a.seed, AUDIT);
    let audit = eta_expectation_audit(n, a.d, a.samples, &mut rng);
    let body = format!(
        "# hashalloc audit-eta schema_version={SCHEMA_VERSION} n={} d={} samples={} seed={}\n{}",
        a.n,
        a.d,
        a.samples,
        a.seed,
        audit.to_csv()
    );
    emit(a.out.as_deref(), &body)?;

    if let Some(delta) = a.scan_delta {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Failure::Invalid(format!(
                "--scan-delta must be non-negative and finite, got {delta}"
            )));
        }
        progress(&format!(
            "scan n={} d={} delta={} trials={} T={}",
            a.n, a.d, delta, a.scan_trials, a.scan_t
        ));
        let scan = lemma4_failure_scan(&cfg, delta, a.scan_trials);
        let wrapped = json!({
            "schema_version": SCHEMA_VERSION,
            "scan": scan,
        });
        emit(a.scan_out.as_deref(), &to_json(&wrapped)?)?;
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Outcome {
    let seed_b = a.seed_b.unwrap_or(a.seed.wrapping_add(1));
    let cfg_a = SimConfig::new(a.n, a.d, a.t, a.seed, a.strategy_a)?;
    let cfg_b = SimConfig::new(a.n, a.d, a.t, seed_b, a.strategy_b)?;
    progress(&format!(
        "compare n={} d={} {} (seed {}) vs {} (seed {}) trials={}",
        a.n, a.d, a.strategy_a, a.seed, a.strategy_b, seed_b, a.trials
    ));
    let report = compare_strategies(&cfg_a, &cfg_b, a.trials, a.threads)?;
    if let Some(csv) = &a.csv {
        emit(Some(csv), &report.levels_csv())?;
    }
    emit(a.out.as_deref(), &to_json(&report)?)
}

fn maxload(a: MaxloadArgs) -> Outcome {
    let n_list = a.n_list.0;
    if n_list.is_empty() {
        return Err(Failure::Invalid("--n-list needs at least one prime".into()));
    }
    for &n in &n_list {
        if let Err(e) = SimConfig::new(n, a.d, a.t, a.seed, a.strategy) {
            return Err(match e {
                hashalloc::Error::NotPrime { n, suggestion } => Failure::Invalid(format!(
                    "--n-list entry {n} is not prime; the next prime is {suggestion}"
                )),
                other => other.into(),
            });
        }
    }
    progress(&format!(
        "maxload n={:?} d={} strategy={} trials={}",
        n_list, a.d, a.strategy, a.trials
    ));
    let study = max_load_study(&n_list, a.d, a.t, a.trials, a.strategy, a.seed, a.threads)?;
    if let Some(csv) = &a.csv {
        emit(Some(csv), &study.to_csv())?;
    }
    emit(a.out.as_deref(), &to_json(&study)?)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Fluid(a) => fluid(a),
        Command::Couple(a) => couple(a),
        Command::AuditEta(a) => audit_eta(a),
        Command::Compare(a) => compare(a),
        Command::Maxload(a) => maxload(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Consistency(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
