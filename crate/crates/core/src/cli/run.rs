use super::config::{parse_grid, AlphaSetting, ConfigError, ExperimentConfig, ManifestSection, OutputEntry, Params, Subcommand};
use super::CliError;
use crate::convergence::{baum_katz_series, decomposition_over_seeds, normalizer_for, slln_trajectory};
use crate::counterexample::{q_term, CounterexampleFamily};
use crate::dependence::{
    generate_path, phi_coefficient, phi_series_check, variance_domination_ratio, DependenceModel, Marginal, Structure,
    Transform,
};
use crate::domination::{check_uniform_moment, moment_via_tail, LogWeight, MomentFamily, MomentFunctional, TailFunction, DEFAULT_UPPER};
use crate::error::LabError;
use crate::rv_funcs::{check_galambos, de_bruijn_conjugate, geometric_grid, verify_conjugate_pair, Conjugate, SlowlyVarying};
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

const DEFAULT_OUT: &str = "slln-lab-out";
const MANIFEST_FILE: &str = "manifest.toml";

/// What a run wrote and what it reports on stdout.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub lines: Vec<String>,
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

struct Table {
    name: String,
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&'static str]) -> Self {
        Table { name: name.to_string(), header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn bytes(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

/// Two-column whitespace-separated plot data.
fn dat(points: impl IntoIterator<Item = (f64, f64)>) -> Vec<u8> {
    let mut s = String::new();
    for (x, y) in points {
        s.push_str(&format!("{} {}\n", num(x), num(y)));
    }
    s.into_bytes()
}

#[derive(Default)]
struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    lines: Vec<String>,
}

impl Artifacts {
    fn table(&mut self, t: Table) {
        let bytes = t.bytes();
        self.files.push((t.name, bytes));
    }

    fn dat(&mut self, name: impl Into<String>, points: impl IntoIterator<Item = (f64, f64)>) {
        self.files.push((name.into(), dat(points)));
    }

    fn say(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }
}

fn parse_key<T: FromStr<Err = LabError>>(key: &str, s: &str) -> Result<T, ConfigError> {
    s.parse().map_err(|e: LabError| ConfigError::new(key, e.to_string()))
}

fn required<'a, T>(v: &'a Option<T>, key: &str, sub: Subcommand) -> Result<&'a T, ConfigError> {
    v.as_ref().ok_or_else(|| ConfigError::new(key, format!("required by `{sub}`")))
}

/// Fills in the defaults of `sub` for every key left unset.
fn fill_defaults(sub: Subcommand, p: &mut Params) {
    fn set<T>(slot: &mut Option<T>, v: T) {
        if slot.is_none() {
            *slot = Some(v);
        }
    }
    match sub {
        Subcommand::Conjugate | Subcommand::Galambos => {
            set(&mut p.l, "one".into());
            set(&mut p.grid, "1e2:1e300:32".into());
            set(&mut p.tol, 0.2);
        }
        Subcommand::Generate => set(&mut p.n, 1024),
        Subcommand::VarRatio => set(&mut p.reps, 10_000),
        Subcommand::Phi => {
            set(&mut p.model, "phimix:a=0.3,b=0.2,emit=identity".into());
            set(&mut p.n, 20);
        }
        Subcommand::Moment => {
            set(&mut p.p, 1.5);
            set(&mut p.l, "one".into());
            set(&mut p.weight, "none".into());
        }
        Subcommand::BaumKatz => {
            set(&mut p.p, 1.5);
            set(&mut p.alpha, AlphaSetting::Keyword("auto".into()));
            set(&mut p.l, "one".into());
            set(&mut p.eps, vec![0.25, 0.5, 1.0]);
            set(&mut p.k, 13);
            set(&mut p.reps, 2000);
        }
        Subcommand::Slln => {
            set(&mut p.p, 1.5);
            set(&mut p.l, "one".into());
            set(&mut p.k, 20);
            set(&mut p.reps, 8);
        }
        Subcommand::DecompositionCheck => {
            set(&mut p.p, 1.5);
            set(&mut p.alpha, AlphaSetting::Keyword("auto".into()));
            set(&mut p.l, "one".into());
            set(&mut p.n, 10);
            set(&mut p.reps, 100);
        }
        Subcommand::Counterexample => {
            set(&mut p.p, 1.5);
            set(&mut p.l, "one".into());
            set(&mut p.n, 1_000_000);
            set(&mut p.k, 12);
            set(&mut p.reps, 8);
        }
    }
}

fn check_p(p: f64) -> Result<f64, ConfigError> {
    if (1.0..2.0).contains(&p) {
        Ok(p)
    } else {
        Err(ConfigError::new("p", format!("p must lie in [1, 2), got {p}")))
    }
}

fn resolve_alpha(params: &Params, p: f64) -> Result<f64, ConfigError> {
    let alpha = params.alpha.as_ref().expect("defaulted").resolve(p)?;
    if !(alpha.is_finite() && alpha >= 1.0 / p - 1e-12) {
        return Err(ConfigError::new("alpha", format!("alpha must be at least 1/p = {}, got {alpha}", 1.0 / p)));
    }
    Ok(alpha)
}

fn seeds_from(seed: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| seed.wrapping_add(i)).collect()
}

fn canonical_hash(cfg: &ExperimentConfig) -> String {
    let mut canon = cfg.clone();
    canon.run.workers = None;
    canon.run.out = None;
    canon.manifest = None;
    hex::encode(Sha256::digest(canon.to_toml().as_bytes()))
}

/// Validates `cfg`, runs its subcommand on a pool of `run.workers` threads,
/// and writes the outputs plus a manifest into `run.out`.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunSummary, CliError> {
    let sub = cfg
        .run
        .subcommand
        .ok_or_else(|| ConfigError::new("subcommand", "no subcommand given"))?;
    cfg.check_keys(sub)?;
    let seed = cfg.run.seed.unwrap_or(0);
    if seed > i64::MAX as u64 {
        return Err(ConfigError::new("seed", format!("seed must be at most {}, got {seed}", i64::MAX)).into());
    }
    let workers = cfg.run.workers.unwrap_or(0);
    if cfg.run.workers == Some(0) {
        return Err(ConfigError::new("workers", "workers must be at least 1").into());
    }
    let out_dir = PathBuf::from(cfg.run.out.clone().unwrap_or_else(|| DEFAULT_OUT.into()));

    let mut effective = cfg.clone();
    effective.run.seed = Some(seed);
    fill_defaults(sub, &mut effective.params);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ConfigError::new("workers", e.to_string()))?;
    let artifacts = pool.install(|| dispatch(sub, &effective.params, seed))?;

    std::fs::create_dir_all(&out_dir)
        .map_err(|source| CliError::Io { path: out_dir.display().to_string(), source })?;
    let mut outputs = Vec::with_capacity(artifacts.files.len());
    for (name, bytes) in &artifacts.files {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes).map_err(|source| CliError::Io { path: path.display().to_string(), source })?;
        outputs.push(OutputEntry { file: name.clone(), sha256: hex::encode(Sha256::digest(bytes)) });
    }
    let config_sha256 = canonical_hash(&effective);
    effective.manifest = Some(ManifestSection {
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        config_sha256,
        outputs,
    });
    let manifest_path = out_dir.join(MANIFEST_FILE);
    std::fs::write(&manifest_path, effective.to_toml())
        .map_err(|source| CliError::Io { path: manifest_path.display().to_string(), source })?;

    let mut lines = artifacts.lines;
    lines.push(format!("wrote {} files and {MANIFEST_FILE} to {}", artifacts.files.len(), out_dir.display()));
    Ok(RunSummary {
        out_dir,
        files: artifacts.files.into_iter().map(|(n, _)| n).collect(),
        lines,
    })
}

fn dispatch(sub: Subcommand, params: &Params, seed: u64) -> Result<Artifacts, CliError> {
    match sub {
        Subcommand::Conjugate => conjugate(params),
        Subcommand::Galambos => galambos(params),
        Subcommand::Generate => generate(params, seed),
        Subcommand::VarRatio => var_ratio(params, seed),
        Subcommand::Phi => phi(params),
        Subcommand::Moment => moment(params),
        Subcommand::BaumKatz => baum_katz(params, seed),
        Subcommand::Slln => slln(params, seed),
        Subcommand::DecompositionCheck => decomposition(params, seed),
        Subcommand::Counterexample => counterexample(params, seed),
    }
}

fn grid_of(params: &Params) -> Result<Vec<f64>, CliError> {
    let (lo, hi, count) = parse_grid(params.grid.as_deref().expect("defaulted"))?;
    geometric_grid(lo, hi, count).map_err(|e| ConfigError::new("grid", e.to_string()).into())
}

fn l_of(params: &Params) -> Result<SlowlyVarying, ConfigError> {
    parse_key("L", params.l.as_deref().expect("defaulted"))
}

fn model_of(params: &Params, sub: Subcommand) -> Result<DependenceModel, ConfigError> {
    parse_key("model", required(&params.model, "model", sub)?)
}

fn conjugate(params: &Params) -> Result<Artifacts, CliError> {
    let l = l_of(params)?;
    let grid = grid_of(params)?;
    let pair = de_bruijn_conjugate(&l);
    let report = verify_conjugate_pair(&pair, &grid, params.tol.expect("defaulted"))?;
    let provenance = match pair.lt {
        Conjugate::ClosedForm(_) => "closed-form",
        Conjugate::NumericInversion(_) => "numeric",
    };
    let mut t = Table::new("conjugate.csv", &["x", "L", "L_conj", "forward", "backward", "provenance"]);
    for r in &report.rows {
        t.push(vec![num(r.x), num(r.l), num(r.lt), num(r.forward), num(r.backward), provenance.into()]);
    }
    let mut a = Artifacts::default();
    a.table(t);
    a.dat("conjugate_forward.dat", report.rows.iter().map(|r| (r.x, r.forward)));
    a.dat("conjugate_backward.dat", report.rows.iter().map(|r| (r.x, r.backward)));
    a.say(format!("conjugate L = {l} ({provenance}): {}", if report.pass { "pass" } else { "fail" }));
    Ok(a)
}

fn galambos(params: &Params) -> Result<Artifacts, CliError> {
    let l = l_of(params)?;
    let grid = grid_of(params)?;
    let report = check_galambos(&l, &grid, params.tol.expect("defaulted"))?;
    let mut t = Table::new("galambos.csv", &["x", "ratio"]);
    for &(x, r) in &report.values {
        t.push(vec![num(x), num(r)]);
    }
    let mut a = Artifacts::default();
    a.table(t);
    a.dat("galambos.dat", report.values.iter().copied());
    a.say(format!("galambos L = {l}: {}", if report.pass { "pass" } else { "fail" }));
    Ok(a)
}

fn generate(params: &Params, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(params, Subcommand::Generate)?;
    let n = params.n.expect("defaulted") as usize;
    let path = generate_path(&model, n, seed)?;
    let mut t = Table::new("path.csv", &["i", "x"]);
    for (i, x) in path.values.iter().enumerate() {
        t.push(vec![(i + 1).to_string(), num(*x)]);
    }
    let mut a = Artifacts::default();
    a.table(t);
    a.dat("path.dat", path.values.iter().enumerate().map(|(i, &x)| ((i + 1) as f64, x)));
    a.say(format!("generated {n} values of {} with seed {seed}", path.fingerprint));
    Ok(a)
}

fn var_ratio(params: &Params, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(params, Subcommand::VarRatio)?;
    let report = variance_domination_ratio(
        &model,
        &Transform::standard_sets(),
        &[0, 7, 100],
        &[1, 16, 256],
        params.reps.expect("defaulted"),
        seed,
    )?;
    let mut t = Table::new("var_ratio.csv", &["k", "ell", "transform", "ratio", "std_error", "halfwidth"]);
    for c in &report.cells {
        t.push(vec![
            c.k.to_string(),
            c.ell.to_string(),
            c.transform.clone(),
            num(c.ratio),
            num(c.std_error),
            num(c.halfwidth),
        ]);
    }
    let mut a = Artifacts::default();
    a.table(t);
    a.say(format!(
        "C_hat = {:.4}, declared C = {:.4}: {}",
        report.c_hat,
        report.declared_c,
        if report.within_declared() { "within" } else { "exceeds" }
    ));
    Ok(a)
}

fn phi(params: &Params) -> Result<Artifacts, CliError> {
    let model = model_of(params, Subcommand::Phi)?;
    let chain = match model.structure() {
        Structure::PhiMixingMarkov { chain, .. } => chain,
        _ => return Err(ConfigError::new("model", "phi needs a phimix model").into()),
    };
    let n_max = u32::try_from(params.n.expect("defaulted"))
        .map_err(|_| ConfigError::new("n", "n is too large"))?;
    let series = phi_series_check(chain, n_max)?;
    let mut t = Table::new("phi.csv", &["n", "phi"]);
    let mut points = Vec::new();
    for n in 1..=n_max as u64 {
        let v = phi_coefficient(chain, n)?;
        t.push(vec![n.to_string(), num(v)]);
        points.push((n as f64, v));
    }
    let mut s = Table::new("phi_series.csv", &["n", "phi_2n", "partial_sum"]);
    for &(n, v, partial) in &series.rows {
        s.push(vec![n.to_string(), num(v), num(partial)]);
    }
    let mut a = Artifacts::default();
    a.table(t);
    a.table(s);
    a.dat("phi.dat", points);
    a.say(format!(
        "sum phi^(1/2)(2^n) up to n = {n_max}: {:.12e} ({})",
        series.partial_sum,
        if series.geometric_bound_pass() { "geometric decay" } else { "inconclusive" }
    ));
    Ok(a)
}

fn moment(params: &Params) -> Result<Artifacts, CliError> {
    let p = params.p.expect("defaulted");
    let l = l_of(params)?;
    let weight: LogWeight = parse_key("weight", params.weight.as_deref().expect("defaulted"))?;
    let g = MomentFunctional::new(p, l, weight).map_err(|e| ConfigError::new("p", e.to_string()))?;
    let mut a = Artifacts::default();
    match (&params.tail, &params.model) {
        (Some(_), Some(_)) => return Err(ConfigError::new("tail", "give either tail or model, not both").into()),
        (None, None) => return Err(ConfigError::new("tail", "`moment` needs tail or model").into()),
        (Some(tail), None) => {
            let tail: TailFunction = parse_key("tail", tail)?;
            let r = moment_via_tail(&g, &tail, g.cutoff(), DEFAULT_UPPER)?;
            let mut t = Table::new(
                "moment.csv",
                &["tail", "value", "diverged", "below", "at_cutoff", "above", "decay_exponent", "panels"],
            );
            t.push(vec![
                tail.to_string(),
                num(r.value),
                r.diverged.to_string(),
                num(r.below),
                num(r.at_cutoff),
                num(r.above),
                r.decay_exponent.map(num).unwrap_or_default(),
                r.panels.to_string(),
            ]);
            a.table(t);
            a.say(if r.diverged {
                format!("E g(|X|) diverges for {tail}")
            } else {
                format!("E g(|X|) = {:.12e} for {tail}", r.value)
            });
        }
        (None, Some(spec)) => {
            let model: DependenceModel = parse_key("model", spec)?;
            let family = match model.marginal() {
                Some(Marginal::ThreePoint(fam)) => MomentFamily::Counterexample(Arc::clone(fam)),
                Some(m) => MomentFamily::Iid(TailFunction::closed_form(m.fixed_law().expect("fixed marginal"))?),
                None => return Err(ConfigError::new("model", "model has no marginal law").into()),
            };
            let r = check_uniform_moment(&family, &g)?;
            let mut t = Table::new("moment_family.csv", &["n", "value"]);
            for &(n, v) in &r.values {
                t.push(vec![num(n), num(v)]);
            }
            a.table(t);
            a.dat("moment_family.dat", r.values.iter().copied());
            a.say(if r.finite {
                format!("sup_n E g(|X_n|) = {:.12e} (finite)", r.sup)
            } else {
                format!("sup_n E g(|X_n|) infinite, log log slope {:.4e}", r.loglog_slope)
            });
        }
    }
    Ok(a)
}

fn baum_katz(params: &Params, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(params, Subcommand::BaumKatz)?;
    let p = check_p(params.p.expect("defaulted"))?;
    let alpha = resolve_alpha(params, p)?;
    let l = l_of(params)?;
    let eps = params.eps.as_ref().expect("defaulted");
    let report = baum_katz_series(
        &model,
        p,
        alpha,
        &l,
        eps,
        params.k.expect("defaulted"),
        params.reps.expect("defaulted"),
        seed,
    )?;
    let mut t = Table::new("baum_katz.csv", &["n", "eps", "p_hat", "ci_lo", "ci_hi", "weight", "partial_sum", "verdict"]);
    let mut d = Table::new(
        "baum_katz_dyadic.csv",
        &["n", "eps", "p_hat", "weight", "partial_sum", "verdict"],
    );
    let mut a = Artifacts::default();
    for (i, est) in report.estimates.iter().enumerate() {
        for r in &est.rows {
            t.push(vec![
                r.n.to_string(),
                num(r.eps),
                num(r.p_hat),
                num(r.ci.lo),
                num(r.ci.hi),
                num(r.weight),
                num(r.partial_sum),
                est.verdict.to_string(),
            ]);
            d.push(vec![
                r.n.to_string(),
                num(r.eps),
                num(r.dyadic_p_hat),
                num(r.dyadic_weight),
                num(r.dyadic_partial_sum),
                est.dyadic_verdict.to_string(),
            ]);
        }
        a.dat(format!("baum_katz_{i}.dat"), est.rows.iter().map(|r| (r.n as f64, r.partial_sum)));
        a.say(format!(
            "eps = {}: partial sum {:.6e}, last increment ratio {:.3e}, {} (dyadic form {})",
            est.eps,
            est.partial_sum(),
            est.last_ratio,
            est.verdict,
            est.dyadic_verdict
        ));
    }
    a.table(t);
    a.table(d);
    Ok(a)
}

fn slln(params: &Params, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(params, Subcommand::Slln)?;
    let p = check_p(params.p.expect("defaulted"))?;
    let l = l_of(params)?;
    let lt = match de_bruijn_conjugate(&l).lt {
        Conjugate::ClosedForm(lt) => lt,
        Conjugate::NumericInversion(_) => {
            return Err(LabError::Unsupported(format!("trajectories need a closed-form conjugate; L = {l} has none")).into())
        }
    };
    let k = params.k.expect("defaulted");
    if !(1..=28).contains(&k) {
        return Err(ConfigError::new("K", format!("K must lie in 1..=28, got {k}")).into());
    }
    let checkpoints: Vec<usize> = (1..=k).map(|j| 1usize << j).collect();
    let seeds = seeds_from(seed, params.reps.expect("defaulted"));
    let report = slln_trajectory(&model, p, &lt, &checkpoints, &seeds)?;
    let mut t = Table::new("trajectory.csv", &["n", "seed", "normalized_sum"]);
    for r in &report.rows {
        t.push(vec![r.n.to_string(), r.seed.to_string(), num(r.normalized_sum)]);
    }
    let mut a = Artifacts::default();
    a.table(t);
    for s in &seeds {
        a.dat(
            format!("trajectory_{s}.dat"),
            report.rows.iter().filter(|r| r.seed == *s).map(|r| (r.n as f64, r.normalized_sum)),
        );
    }
    a.say(format!("max |normalized sum| at n = 2^{k}: {:.6e}", report.final_max_abs));
    Ok(a)
}

fn decomposition(params: &Params, seed: u64) -> Result<Artifacts, CliError> {
    let model = model_of(params, Subcommand::DecompositionCheck)?;
    let p = check_p(params.p.expect("defaulted"))?;
    let alpha = resolve_alpha(params, p)?;
    let norm = normalizer_for(p, alpha, &l_of(params)?)?;
    let n = u32::try_from(params.n.expect("defaulted")).map_err(|_| ConfigError::new("n", "n is too large"))?;
    let seeds = seeds_from(seed, params.reps.expect("defaulted"));
    let reports = decomposition_over_seeds(&model, &norm, n, &seeds)?;
    let mut t = Table::new(
        "decomposition.csv",
        &["seed", "part", "lhs", "term1", "term2", "term3", "rhs", "holds", "telescoping_exact"],
    );
    for r in &reports {
        for (part, d) in [("positive", &r.positive), ("negative", &r.negative)] {
            t.push(vec![
                r.seed.to_string(),
                part.into(),
                num(d.lhs),
                num(d.rhs_terms[0]),
                num(d.rhs_terms[1]),
                num(d.rhs_terms[2]),
                num(d.rhs),
                d.holds.to_string(),
                d.telescoping_exact.to_string(),
            ]);
        }
    }
    let held = reports.iter().filter(|r| r.holds()).count();
    let mut a = Artifacts::default();
    a.table(t);
    a.say(format!("inequality holds on {held} of {} paths at n = 2^{n}", reports.len()));
    Ok(a)
}

fn counterexample(params: &Params, seed: u64) -> Result<Artifacts, CliError> {
    let p = check_p(params.p.expect("defaulted"))?;
    let fam = CounterexampleFamily::new(p, l_of(params)?)?;
    let n_top = params.n.expect("defaulted");
    let k = params.k.expect("defaulted");
    if !(1..=300).contains(&k) {
        return Err(ConfigError::new("K", format!("K must lie in 1..=300, got {k}")).into());
    }
    let b = fam.b() as f64;

    let mut t = Table::new("counterexample.csv", &["n", "h", "q", "double_weight", "single_weight"]);
    let mut points = Vec::new();
    for n in (1..=k as i32).map(|j| 10f64.powi(j)).filter(|&n| n >= b) {
        let (double, single) = fam.moment_dichotomy(n)?;
        t.push(vec![num(n), num(fam.h(n)?), num(q_term(n)), num(double), num(single)]);
        points.push((n, double));
    }

    let mut tops: Vec<u64> = (1..=19).map(|j| 10u64.pow(j)).filter(|&m| m >= fam.b() && m < n_top).collect();
    tops.push(n_top);
    let mut bc = Table::new("bc.csv", &["N", "partial_sum", "integral_lower_bound"]);
    for &m in &tops {
        let s = fam.bc_series(m)?;
        bc.push(vec![m.to_string(), num(s.partial_sum), num(s.integral_lower_bound)]);
    }

    let seeds = seeds_from(seed, params.reps.expect("defaulted"));
    let ex = fam.exceedance_counts(n_top, &seeds)?;
    let mut e = Table::new("exceedance.csv", &["seed", "count"]);
    for (s, c) in seeds.iter().zip(&ex.counts) {
        e.push(vec![s.to_string(), c.to_string()]);
    }

    let mut a = Artifacts::default();
    a.table(t);
    a.table(bc);
    a.table(e);
    a.dat("counterexample.dat", points);
    let (double, single) = fam.moment_dichotomy(n_top as f64)?;
    a.say(format!("n = {n_top}: double-weight moment {double:.6}, single-weight moment {single:.6}"));
    a.say(format!(
        "exceedances up to N = {n_top}: mean {:.3} vs expected {:.3} (z = {:.2})",
        ex.mean, ex.expected, ex.z
    ));
    Ok(a)
}
