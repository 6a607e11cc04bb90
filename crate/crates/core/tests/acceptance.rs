//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//!
//! Two checks cannot hold as stated and are reported as FAIL without
//! failing the process (see `KNOWN_RED`):
//! - criterion 1's numeric inversion lands on a different member of the
//!   conjugate's asymptotic class than `1/L`, still off by a few percent at 1e300;
//! - criterion 8's growth factor from n = 1e6 to 1e12 is exactly
//!   `(2/3) ln²((2/3) ln n) / ln ln n` evaluated at both ends, i.e. 1.362.
//!
//! Any other failure exits nonzero.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use slln_lab::cli::{execute, ExperimentConfig, Params, RunSection, Subcommand};
use slln_lab::convergence::{baum_katz_series, decomposition_over_seeds, normalizer_for, slln_trajectory, Verdict};
use slln_lab::counterexample::CounterexampleFamily;
use slln_lab::dependence::{
    build_model, phi_coefficient, phi_series_check, variance_domination_ratio, MarkovChain, Transform,
};
use slln_lab::domination::{moment_via_tail, MomentFunctional, TailFunction, DEFAULT_UPPER};
use slln_lab::law::Law;
use slln_lab::rv_funcs::{
    de_bruijn_conjugate, geometric_grid, numeric_conjugate, verify_conjugate_pair, Conjugate, SlowlyVarying,
};
use std::time::{Duration, Instant};

const KNOWN_RED: &[u32] = &[1, 8];

/// Presets used wherever a criterion ranges over the dependence structures.
/// The two-lag m-pairwise preset uses lags 0.3, -0.1: the pair 0.5, -0.3
/// is not a valid correlation sequence.
const PRESETS: &[&str] = &[
    "iid-normal",
    "mpnd:m=2,lags=0.3,-0.1",
    "na-gauss:rho=-0.05",
    "mend:m=3,block=na-gauss:rho=-0.05",
    "phimix:a=0.3,b=0.2,emit=identity",
];

type Check = (u32, &'static str, fn() -> Outcome, Duration);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn c1() -> Outcome {
    let mut specs = vec!["one".to_string()];
    for g in ["-1", "0.5", "2"] {
        specs.push(format!("logpow:{g}"));
        specs.push(format!("loglogpow:{g}"));
    }
    let grid = geometric_grid(1e2, 1e300, 32).unwrap();
    let samples = geometric_grid(1e3, 1e300, 20).unwrap();
    let mut closed_ok = true;
    let mut trend_ok = true;
    let mut worst_numeric = 0.0f64;
    let mut worst_spec = String::new();
    for s in &specs {
        let l: SlowlyVarying = s.parse().unwrap();
        let pair = de_bruijn_conjugate(&l);
        match &pair.lt {
            Conjugate::ClosedForm(lt) => {
                for &x in &grid {
                    let want = 1.0 / l.eval(x).unwrap();
                    closed_ok &= rel(lt.eval(x).unwrap(), want) <= 1e-14;
                }
            }
            Conjugate::NumericInversion(_) => closed_ok = false,
        }
        trend_ok &= verify_conjugate_pair(&pair, &grid, 0.2).map(|r| r.pass).unwrap_or(false);
        for &x in &samples {
            let closed = 1.0 / l.eval(x).unwrap();
            let d = rel(numeric_conjugate(&l, x).unwrap(), closed);
            if d > worst_numeric {
                worst_numeric = d;
                worst_spec = format!("{s} at x = {x:.1e}");
            }
        }
    }
    let numeric_ok = worst_numeric <= 1e-6;
    outcome(
        closed_ok && trend_ok && numeric_ok,
        format!(
            "closed form 1/L: {closed_ok}, trend check: {trend_ok}, numeric vs closed worst rel {worst_numeric:.2e} ({worst_spec})"
        ),
    )
}

fn c2() -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (i, s) in PRESETS.iter().enumerate() {
        let model = build_model(s).unwrap();
        let r = variance_domination_ratio(
            &model,
            &Transform::standard_sets(),
            &[0, 7, 100],
            &[1, 16, 256],
            10_000,
            1000 + i as u64,
        )
        .unwrap();
        ok &= r.within_declared();
        if *s == "iid-normal" {
            let identity_ok = r
                .cells
                .iter()
                .filter(|c| c.transform == "identity")
                .all(|c| (c.ratio - 1.0).abs() <= c.halfwidth);
            ok &= identity_ok;
            parts.push(format!("iid identity cells at 1 within CI: {identity_ok}"));
        }
        parts.push(format!("{s}: C_hat {:.3} vs C {:.3}", r.c_hat, r.declared_c));
    }
    outcome(ok, parts.join("; "))
}

/// `max_i max_B |P^n(i, B) − π(B)|` by enumerating subsets.
fn phi_brute(p: &[Vec<f64>], pi: &[f64], n: u32) -> f64 {
    let k = p.len();
    let mut pn: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _ in 0..n {
        pn = (0..k)
            .map(|i| (0..k).map(|j| (0..k).map(|m| pn[i][m] * p[m][j]).sum()).collect())
            .collect();
    }
    let mut best = 0.0f64;
    for row in &pn {
        for mask in 0u32..(1 << k) {
            let d: f64 = (0..k).filter(|j| mask >> j & 1 == 1).map(|j| row[j] - pi[j]).sum();
            best = best.max(d.abs());
        }
    }
    best
}

fn stationary_by_power(p: &[Vec<f64>]) -> Vec<f64> {
    let k = p.len();
    let mut v = vec![1.0 / k as f64; k];
    for _ in 0..5000 {
        v = (0..k).map(|j| (0..k).map(|i| v[i] * p[i][j]).sum()).collect();
    }
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn c3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut fixtures = 0;
    for k in 2..=10usize {
        for _ in 0..3 {
            let rows: Vec<Vec<f64>> = (0..k)
                .map(|_| {
                    let r: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.05).collect();
                    let s: f64 = r.iter().sum();
                    r.iter().map(|x| x / s).collect()
                })
                .collect();
            let chain = MarkovChain::new(&rows).unwrap();
            let pi = stationary_by_power(&rows);
            for n in [1u32, 2, 3, 5] {
                let d = (phi_coefficient(&chain, n as u64).unwrap() - phi_brute(&rows, &pi, n)).abs();
                worst = worst.max(d);
            }
            fixtures += 1;
        }
    }
    let chain = MarkovChain::two_state(0.3, 0.2).unwrap();
    let mut two_state = 0.0f64;
    for n in 1..=40u64 {
        let exact = 0.6 * 0.5f64.powi(n as i32);
        two_state = two_state.max(rel(phi_coefficient(&chain, n).unwrap(), exact));
    }
    let series = phi_series_check(&chain, 20).unwrap();
    let at6 = series.rows.iter().find(|r| r.0 == 6).unwrap().2;
    let settled = series.rows.iter().filter(|r| r.0 >= 6).all(|r| (r.2 - at6).abs() <= 4.0 * f64::EPSILON * at6);
    outcome(
        worst <= 1e-12 && two_state <= 1e-10 && settled,
        format!(
            "{fixtures} fixtures worst |diff| {worst:.1e}; two-state worst rel {two_state:.1e}; partial sums fixed from n = 6: {settled}"
        ),
    )
}

fn c4() -> Outcome {
    let exp = TailFunction::closed_form(Law::Exponential { rate: 1.0 }).unwrap();
    let m1 = moment_via_tail(&MomentFunctional::power(1.0).unwrap(), &exp, 0.0, DEFAULT_UPPER).unwrap().value;
    let m2 = moment_via_tail(&MomentFunctional::power(2.0).unwrap(), &exp, 0.0, DEFAULT_UPPER).unwrap().value;
    let pareto = TailFunction::closed_form(Law::Pareto { alpha: 1.2, scale: 1.0 }).unwrap();
    let div = moment_via_tail(&MomentFunctional::power(1.5).unwrap(), &pareto, 0.0, DEFAULT_UPPER).unwrap();
    outcome(
        rel(m1, 1.0) <= 1e-8 && rel(m2, 2.0) <= 1e-8 && div.diverged,
        format!("E xi = {m1:.12}, E xi^2 = {m2:.12}, Pareto(1.2) vs x^1.5 diverged: {}", div.diverged),
    )
}

fn c5() -> Outcome {
    let seeds: Vec<u64> = (0..100).collect();
    let norm = normalizer_for(1.5, 1.0 / 1.5, &SlowlyVarying::one()).unwrap();
    let (mut held, mut total) = (0, 0);
    for s in PRESETS {
        let reports = decomposition_over_seeds(&build_model(s).unwrap(), &norm, 10, &seeds).unwrap();
        held += reports.iter().filter(|r| r.holds()).count();
        total += reports.len();
    }
    outcome(held == total && total >= 400, format!("inequality held on {held} of {total} paths at n = 2^10"))
}

fn c6() -> Outcome {
    let seeds: Vec<u64> = (60..68).collect();
    let checkpoints: Vec<usize> = (1..=20).map(|k| 1usize << k).collect();
    let n = (1u64 << 20) as f64;
    let iid = slln_trajectory(&build_model("iid-normal").unwrap(), 1.0, &SlowlyVarying::one(), &checkpoints, &seeds)
        .unwrap();
    // b_n = n for p = 1, so the envelope for S_n / n is sqrt(2 n ln ln n) / n.
    let envelope = 5.0 * (2.0 * n * n.ln().ln()).sqrt() / n;
    let iid_ok = iid.final_max_abs <= envelope;
    let na = slln_trajectory(
        &build_model("na-gauss:rho=-0.05").unwrap(),
        1.5,
        &SlowlyVarying::one(),
        &checkpoints,
        &seeds,
    )
    .unwrap();
    let na_ok = na.final_max_abs < 0.05;
    outcome(
        iid_ok && na_ok,
        format!(
            "iid p = 1: max |S_n/n| {:.2e} vs envelope {envelope:.2e}; na-gauss p = 1.5: max {:.2e} vs 0.05",
            iid.final_max_abs, na.final_max_abs
        ),
    )
}

fn c7() -> Outcome {
    let one = SlowlyVarying::one();
    let alpha = 2.0 / 3.0;
    let iid = baum_katz_series(&build_model("iid-normal").unwrap(), 1.5, alpha, &one, &[1.0], 13, 2000, 7).unwrap();
    let ce = baum_katz_series(&build_model("ce:p=1.5,L=one").unwrap(), 1.5, alpha, &one, &[0.4], 13, 2000, 7).unwrap();
    let (e, c) = (&iid.estimates[0], &ce.estimates[0]);
    outcome(
        e.verdict == Verdict::Stabilizing && e.last_ratio < 1e-3 && c.verdict != Verdict::Stabilizing,
        format!(
            "iid: {} (last ratio {:.2e}); counterexample: {} (partial sum {:.3})",
            e.verdict,
            e.last_ratio,
            c.verdict,
            c.partial_sum()
        ),
    )
}

/// Double-double accumulation of `Σ_{n=lo}^{hi} 1 / (n ln n ln ln n)`.
fn bc_oracle(lo: u64, hi: u64) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for n in lo..=hi {
        let x = n as f64;
        let t = 1.0 / (x * x.ln().max(1.0) * x.ln().max(1.0).ln().max(1.0));
        let sum = s + t;
        let bp = sum - s;
        let err = (s - (sum - bp)) + (t - bp);
        s = sum;
        c += err;
    }
    s + c
}

fn c8() -> Outcome {
    let fam = CounterexampleFamily::new(1.5, SlowlyVarying::one()).unwrap();
    // With L ≡ 1, h(n) = n^{2/3}; both weights then have closed forms.
    let oracle = |n: f64| {
        let lh = (2.0 / 3.0) * n.ln();
        let base = lh / (n.ln() * n.ln().ln());
        (base * lh.ln() * lh.ln(), base * lh.ln())
    };
    let (d6, s6) = fam.moment_dichotomy(1e6).unwrap();
    let (o6, os6) = oracle(1e6);
    let values_ok = (d6 - 1.2517).abs() <= 1e-3
        && (s6 - 0.5637).abs() <= 1e-3
        && rel(d6, o6) <= 1e-12
        && rel(s6, os6) <= 1e-12;
    let (d12, _) = fam.moment_dichotomy(1e12).unwrap();
    let growth = d12 / d6;
    let growth_ok = growth >= 1.5;
    let b = fam.b();
    let s3 = fam.bc_series(1_000).unwrap().partial_sum;
    let s6n = fam.bc_series(1_000_000).unwrap().partial_sum;
    let bc_err = rel(s3, bc_oracle(b, 1_000)).max(rel(s6n, bc_oracle(b, 1_000_000)));
    let bc_ok = bc_err <= 1e-10 && s6n > s3;
    outcome(
        values_ok && growth_ok && bc_ok,
        format!(
            "double {d6:.6}, single {s6:.6}: {values_ok}; growth 1e6 -> 1e12 {growth:.4} (needs >= 1.5): {growth_ok}; \
             BC sums {s3:.6} -> {s6n:.6}, oracle rel {bc_err:.1e}: {bc_ok}"
        ),
    )
}

fn run_cli(sub: Subcommand, params: Params, workers: usize, dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let cfg = ExperimentConfig {
        run: RunSection {
            subcommand: Some(sub),
            seed: Some(11),
            workers: Some(workers),
            out: Some(dir.display().to_string()),
        },
        params,
        manifest: None,
    };
    let summary = execute(&cfg).unwrap();
    summary
        .files
        .iter()
        .map(|f| (f.clone(), std::fs::read(dir.join(f)).unwrap()))
        .collect()
}

fn c9() -> Outcome {
    let runs: Vec<(Subcommand, Params)> = vec![
        (
            Subcommand::BaumKatz,
            Params { model: Some("iid-normal".into()), reps: Some(2000), k: Some(13), ..Params::default() },
        ),
        (
            Subcommand::VarRatio,
            Params { model: Some("mpnd:m=2,lags=0.3,-0.1".into()), reps: Some(1000), ..Params::default() },
        ),
        (
            Subcommand::DecompositionCheck,
            Params { model: Some("mend:m=3,block=na-gauss:rho=-0.05".into()), ..Params::default() },
        ),
        (
            Subcommand::Slln,
            Params { model: Some("phimix:a=0.3,b=0.2,emit=identity".into()), k: Some(16), ..Params::default() },
        ),
        (Subcommand::Counterexample, Params { n: Some(100_000), ..Params::default() }),
        (
            Subcommand::Generate,
            Params { model: Some("na-gauss:rho=-0.05".into()), n: Some(4096), ..Params::default() },
        ),
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut files = 0;
    let mut mismatched = Vec::new();
    for (i, (sub, params)) in runs.into_iter().enumerate() {
        let a = run_cli(sub, params.clone(), 1, &tmp.path().join(format!("{i}-a")));
        let b = run_cli(sub, params.clone(), 8, &tmp.path().join(format!("{i}-b")));
        let c = run_cli(sub, params, 8, &tmp.path().join(format!("{i}-c")));
        files += a.len();
        if a != b || b != c {
            mismatched.push(sub.to_string());
        }
    }
    outcome(
        mismatched.is_empty(),
        format!("{files} output files compared across worker counts 1, 8, 8; mismatches: {mismatched:?}"),
    )
}

fn main() {
    let criteria: [Check; 9] = [
        (1, "conjugate calculus", c1, Duration::from_secs(5)),
        (2, "variance domination", c2, Duration::from_secs(120)),
        (3, "phi-mixing coefficients", c3, Duration::from_secs(1)),
        (4, "tail-integral moments", c4, Duration::from_secs(1)),
        (5, "decomposition inequality", c5, Duration::from_secs(120)),
        (6, "strong-law trajectories", c6, Duration::from_secs(180)),
        (7, "Baum-Katz contrast", c7, Duration::from_secs(600)),
        (8, "counterexample dichotomy", c8, Duration::from_secs(1)),
        (9, "reproducibility", c9, Duration::from_secs(600)),
    ];
    let only: Option<u32> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut unexpected = Vec::new();
    for (id, name, f, budget) in criteria {
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = o.pass && in_time;
        let tag = match (pass, KNOWN_RED.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id} {name}: {tag} [{:.2}s of {}s] {}",
            took.as_secs_f64(),
            budget.as_secs(),
            o.detail
        );
        if !pass && !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
