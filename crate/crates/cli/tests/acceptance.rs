//! Acceptance run. One verdict line per criterion; criteria listed in `KNOWN_RED`
//! print FAIL without failing the process, anything else failing exits nonzero.
//! `KACTURING_ACCEPTANCE=3,7` restricts the run to the listed criteria.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use kac_turing::fluct::{prediction, run_fluctuation_ensemble, synthetic_projected, v_variances, EnsembleConfig, VarianceKernel, WaveCoefficients};
use kac_turing::hydro::{eigen_aligned_state, fit_growth_exponent, HydroDynamics, HydroSolver, SpectralState};
use kac_turing::micro::{Dynamics, FlipObserver, Line, SpinState};
use kac_turing::rng::{master_rng, replica_rng};
use kac_turing::stability::{classify_turing, construct_unimodular, exp_bound_check, growth_rate, matrix_exp, necessity_check, ModeMatrix};
use kac_turing::stats::{median, normal_cdf};
use kac_turing::{LatticeSpec, ModelParams};
use kac_turing_cli::{execute, Command, RunConfig};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

const SEED: u64 = 20240601;
const KNOWN_RED: [u32; 4] = [1, 5, 7, 10];

struct Outcome {
    pass: bool,
    summary: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Outcome {
            pass,
            summary: summary.into(),
            notes: Vec::new(),
        }
    }

    fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }
}

type Check = fn(&Ctx) -> Result<Outcome, String>;

struct Ctx {
    work: PathBuf,
    params: ModelParams,
}

impl Ctx {
    fn config(&self, name: &str) -> RunConfig {
        let mut c = RunConfig::default();
        c.params = Some(self.params);
        c.seed = SEED;
        c.out = self.work.join(name);
        c
    }
}

fn canonical() -> ModelParams {
    let c = construct_unimodular(1.15, 0.84, 0.02).expect("replacement set builds");
    assert!(c.certified);
    c.params
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn random_params(rng: &mut impl Rng) -> ModelParams {
    ModelParams::new(
        rng.gen_range(0.2..1.8),
        rng.gen_range(0.2..1.8),
        rng.gen_range(0.001..0.2),
        rng.gen_range(0.001..0.2),
        rng.gen_range(0.01..2.0),
    )
    .expect("draws inside the valid box")
}

fn c1(ctx: &Ctx) -> Result<Outcome, String> {
    let mut cfg = ctx.config("c1");
    cfg.construct.beta1 = 1.05;
    cfg.construct.beta2 = 0.97;
    cfg.construct.margin = 0.02;
    match execute(Command::ConstructParams, &cfg) {
        Ok(out) => {
            let ok = out.passed == Some(true);
            Ok(Outcome::new(ok, format!("certified = {:?}", out.passed)).note(format!("details {}", out.details)))
        }
        Err(e) => Ok(Outcome::new(false, format!("construction rejected: {e}"))),
    }
}

fn c2(_: &Ctx) -> Result<Outcome, String> {
    let mut rng = master_rng(SEED);
    let (mut turing, mut inconclusive, mut counter) = (0, 0, 0);
    for _ in 0..10_000 {
        let p = random_params(&mut rng);
        let r = classify_turing(&p, None).map_err(err)?;
        inconclusive += r.inconclusive as usize;
        if r.is_turing_unstable {
            turing += 1;
            if !necessity_check(&p) {
                counter += 1;
            }
        }
    }
    // denser sample of the region where instabilities live
    let (mut extra, mut extra_counter) = (0, 0);
    for _ in 0..10_000 {
        let p = ModelParams::new(
            rng.gen_range(1.0..1.8),
            rng.gen_range(0.2..1.0),
            rng.gen_range(0.001..0.05),
            rng.gen_range(0.001..0.2),
            rng.gen_range(0.01..0.5),
        )
        .map_err(err)?;
        if classify_turing(&p, None).map_err(err)?.is_turing_unstable {
            extra += 1;
            extra_counter += !necessity_check(&p) as usize;
        }
    }
    Ok(Outcome::new(
        counter == 0,
        format!("{turing} Turing-unstable draws of 10000, {counter} counterexamples, {inconclusive} inconclusive"),
    )
    .note(format!(
        "diagnostic: 10000 draws from beta1 > 1, beta2 < 1, small tau1, lambda < 0.5: {extra} Turing-unstable, {extra_counter} counterexamples"
    )))
}

fn c3(ctx: &Ctx) -> Result<Outcome, String> {
    let p = ctx.params;
    let kmax = 8usize;
    let mut rng = master_rng(SEED ^ 3);
    let mut st = SpectralState::zeros(kmax);
    let mut init = Vec::new();
    for k in 0..=kmax as i64 {
        let mut c = [0usize, 1].map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        if k == 0 {
            c = c.map(|z| Complex64::new(z.re, 0.0));
        }
        st.set_mode(k, c).map_err(err)?;
        init.push(c);
    }
    let mut lin = HydroSolver::new(p, kmax).map_err(err)?;
    let end = lin.integrate(&st, 1.0, 1e-3, HydroDynamics::Linear, 1000).map_err(err)?;
    let mut prop_err: f64 = 0.0;
    for (k, c) in init.iter().enumerate() {
        let e = matrix_exp(&ModeMatrix::new(&p, k as i64).a, 1.0);
        let want = [e[0][0] * c[0] + e[0][1] * c[1], e[1][0] * c[0] + e[1][1] * c[1]];
        let got = end.last().coefficient(k as i64).expect("mode in range");
        prop_err = prop_err.max((got[0] - want[0]).norm()).max((got[1] - want[1]).norm());
    }

    let mu = growth_rate(&p).map_err(err)?;
    let start = eigen_aligned_state(&p, 32, 1, 1e-4).map_err(err)?;
    let mut nl = HydroSolver::new(p, 32).map_err(err)?;
    let traj = nl.integrate(&start, 130.0, 1e-3, HydroDynamics::Nonlinear, 100).map_err(err)?;
    let fit = fit_growth_exponent(&traj, 1).map_err(err)?;
    let rel = (fit.exponent - mu).abs() / mu;
    let zero_at_5 = traj
        .states
        .iter()
        .filter(|s| s.time <= 5.0 + 1e-9)
        .map(|s| s.mode_norm(0).expect("mode 0"))
        .fold(0.0, f64::max);
    let pass = prop_err < 1e-8 && rel < 0.01 && zero_at_5 < 1e-8;
    Ok(Outcome::new(
        pass,
        format!(
            "propagator error {prop_err:.2e} (< 1e-8), fitted {:.6} vs mu {mu:.6} rel {rel:.2e} (< 1e-2), max |mode 0| on [0,5] {zero_at_5:.2e} (< 1e-8)",
            fit.exponent
        ),
    ))
}

fn c4(_: &Ctx) -> Result<Outcome, String> {
    let mut rng = master_rng(SEED ^ 4);
    let n = 512;
    let (mut worst, mut literal, mut probes) = (0.0f64, 0.0f64, 0usize);
    for s in 0..1000u64 {
        let d = Dynamics::new(random_params(&mut rng), LatticeSpec::new(n).map_err(err)?).map_err(err)?;
        let st = d.init_random(SEED.wrapping_add(s), &[]);
        for _ in 0..100 {
            let line = if rng.gen::<bool>() { Line::First } else { Line::Second };
            let x = rng.gen_range(0..n);
            let r = d.flip_rate(&st, line, x);
            worst = worst.max((r + d.reversed_rate(&st, line, x) - 1.0).abs());
            probes += 1;
            if probes % 100 == 0 {
                let mut flipped = st.clone();
                d.apply_flip(&mut flipped, line, x);
                literal = literal.max((r + d.flip_rate(&flipped, line, x) - 1.0).abs());
            }
        }
    }
    Ok(Outcome::new(worst <= 1e-12, format!("{probes} probes, max |R + R_rev - 1| = {worst:.2e} (<= 1e-12)")).note(format!(
        "diagnostic: with the flipped configuration's own field the deviation reaches {literal:.3e} (self-interaction, order gamma)"
    )))
}

/// Per-state event counts and transition counts of the N = 3 chain.
struct Tally {
    last: u64,
    visits: Vec<u64>,
    moves: Vec<[u64; 6]>,
}

impl FlipObserver for Tally {
    fn before_flip(&mut self, _: &Dynamics, st: &SpinState, line: Line, x: usize) {
        let s = st.config_index() as usize;
        let p = st.proposals();
        self.visits[s] += p - self.last;
        self.last = p;
        self.moves[s][3 * line.index() + x] += 1;
    }
}

fn state_of(idx: usize) -> (Vec<i8>, Vec<i8>) {
    let spin = |b: usize| if idx >> b & 1 == 1 { 1 } else { -1 };
    ((0..3).map(spin).collect(), (3..6).map(spin).collect())
}

struct ChainFit {
    events: u64,
    visited: usize,
    exceed: usize,
    worst: f64,
    chi2: f64,
    dof: f64,
    expected_exceed: f64,
}

impl ChainFit {
    /// Wilson-Hilferty tail probability of the chi-square statistic.
    fn p_value(&self) -> f64 {
        let c = 2.0 / (9.0 * self.dof);
        1.0 - normal_cdf(((self.chi2 / self.dof).cbrt() - (1.0 - c)) / c.sqrt(), 1.0)
    }
}

fn run_chain(d: &Dynamics, gen: &[[f64; 6]], target: u64, seed: u64) -> Result<ChainFit, String> {
    let clock = 6.0;
    let mut st = d.init_random(seed, &[]);
    let mut tally = Tally {
        last: 0,
        visits: vec![0; 64],
        moves: vec![[0; 6]; 64],
    };
    let mut t = 0.0;
    while st.proposals() < target {
        t += 1.0;
        d.advance_with(&mut st, t, &mut tally).map_err(err)?;
    }
    let fin = st.config_index() as usize;
    tally.visits[fin] += st.proposals() - tally.last;

    let tail3 = 2.0 * (1.0 - normal_cdf(3.0, 1.0));
    let mut fit = ChainFit {
        events: tally.visits.iter().sum(),
        visited: tally.visits.iter().filter(|&&v| v > 0).count(),
        exceed: 0,
        worst: 0.0,
        chi2: 0.0,
        dof: 0.0,
        expected_exceed: 0.0,
    };
    for s in 0..64 {
        let n = tally.visits[s] as f64;
        if n == 0.0 {
            continue;
        }
        let mut stay = n;
        let mut stay_p = 1.0;
        for j in 0..6 {
            let q = gen[s][j] / clock;
            let obs = tally.moves[s][j] as f64;
            let z = (obs - n * q) / (n * q * (1.0 - q)).sqrt();
            fit.worst = fit.worst.max(z.abs());
            fit.exceed += (z.abs() > 3.0) as usize;
            fit.expected_exceed += tail3;
            fit.chi2 += (obs - n * q).powi(2) / (n * q);
            stay -= obs;
            stay_p -= q;
        }
        fit.chi2 += (stay - n * stay_p).powi(2) / (n * stay_p);
        fit.dof += 6.0;
    }
    Ok(fit)
}

fn c5(_: &Ctx) -> Result<Outcome, String> {
    let p = ModelParams::new(0.9, 0.7, 0.05, 0.08, 0.6).map_err(err)?;
    let d = Dynamics::new(p, LatticeSpec::new(3).map_err(err)?).map_err(err)?;
    let mut gen = vec![[0.0; 6]; 64];
    for (idx, row) in gen.iter_mut().enumerate() {
        let (a, b) = state_of(idx);
        let st = d.from_spins(a, b, 0, &[]).map_err(err)?;
        for (j, r) in row.iter_mut().enumerate() {
            let line = if j < 3 { Line::First } else { Line::Second };
            *r = d.flip_rate(&st, line, j % 3);
        }
    }
    let f = run_chain(&d, &gen, 1_000_000, SEED)?;
    let long = run_chain(&d, &gen, 10_000_000, SEED ^ 5)?;
    Ok(Outcome::new(
        f.exceed == 0,
        format!(
            "{} events over {}/64 states, 384 transitions, {} beyond 3 sigma, max |z| = {:.2}",
            f.events, f.visited, f.exceed, f.worst
        ),
    )
    .note(format!(
        "diagnostic: chi-square {:.1} on {} dof, p = {:.3}; {:.2} exceedances expected from an exact simulator",
        f.chi2,
        f.dof,
        f.p_value(),
        f.expected_exceed
    ))
    .note(format!(
        "diagnostic: {} events: {} beyond 3 sigma, max |z| = {:.2}, chi-square p = {:.3}",
        long.events,
        long.exceed,
        long.worst,
        long.p_value()
    )))
}

struct SupZero {
    sums: [i64; 2],
    gamma: f64,
    sup: f64,
}

impl SupZero {
    fn new(d: &Dynamics, st: &SpinState) -> Self {
        let sum = |l: Line| st.line(l).iter().map(|&s| s as i64).sum::<i64>();
        let mut s = SupZero {
            sums: [sum(Line::First), sum(Line::Second)],
            gamma: d.lattice().gamma(),
            sup: 0.0,
        };
        s.record();
        s
    }

    fn record(&mut self) {
        let [a, b] = self.sums;
        self.sup = self.sup.max(self.gamma * ((a * a + b * b) as f64).sqrt());
    }
}

impl FlipObserver for SupZero {
    fn before_flip(&mut self, _: &Dynamics, st: &SpinState, line: Line, x: usize) {
        self.sums[line.index()] -= 2 * st.line(line)[x] as i64;
        self.record();
    }
}

fn sup_median(p: &ModelParams, n: usize) -> Result<f64, String> {
    let d = Dynamics::new(*p, LatticeSpec::new(n).map_err(err)?).map_err(err)?;
    let sups: Vec<f64> = (0..50u64)
        .into_par_iter()
        .map(|r| {
            let mut st = d.init_with_rng(replica_rng(SEED ^ n as u64, r), &[]);
            let mut obs = SupZero::new(&d, &st);
            d.advance_with(&mut st, 1.0, &mut obs).map_err(err)?;
            Ok(obs.sup)
        })
        .collect::<Result<_, String>>()?;
    Ok(median(&sups))
}

fn c6(ctx: &Ctx) -> Result<Outcome, String> {
    let a = sup_median(&ctx.params, 1024)?;
    let b = sup_median(&ctx.params, 2048)?;
    let ratio = a / b;
    let dev = ratio / 2f64.sqrt() - 1.0;
    Ok(Outcome::new(
        dev.abs() <= 0.3,
        format!("median sup|X0|: N=1024 {a:.5}, N=2048 {b:.5}; ratio {ratio:.4} vs sqrt 2 ({:+.1}%, within 30%)", 100.0 * dev),
    ))
}

fn c7(ctx: &Ctx) -> Result<Outcome, String> {
    let p = ctx.params;
    let pred = prediction(&p).map_err(err)?;
    let synth = synthetic_projected(&pred, 4_000_000, SEED ^ 7);
    let mut push_dev: f64 = 0.0;
    for i in 0..4 {
        let v = synth.iter().map(|x| x[i] * x[i]).sum::<f64>() / synth.len() as f64;
        push_dev = push_dev.max((v / pred.covariance[i][i] - 1.0).abs());
    }
    let big = run_fluctuation_ensemble(&p, 0.5, &EnsembleConfig::new(4096, 400, SEED)).map_err(err)?;
    let small = run_fluctuation_ensemble(&p, 0.5, &EnsembleConfig::new(1024, 400, SEED)).map_err(err)?;
    let ratios_ok = big.variance_ratios.iter().all(|r| (r - 1.0).abs() <= 0.15);
    let ks_ok = big.ks.iter().all(|k| k.p_value > 0.01);
    let mut delta_ok = true;
    let mut delta_notes = Vec::new();
    for m in &big.other_modes {
        let s = small.other_modes.iter().find(|o| o.k == m.k).expect("same modes");
        delta_ok &= m.median_abs < 0.5 * s.median_abs;
        delta_notes.push(format!("k={} {:.3}/{:.3}", m.k, m.median_abs, s.median_abs));
    }
    let pass = push_dev <= 0.005 && ratios_ok && ks_ok && delta_ok;
    let fmt4 = |x: [f64; 4]| x.map(|v| format!("{v:.3}")).join(", ");
    Ok(Outcome::new(
        pass,
        format!(
            "variance ratios [{}], KS p [{}], push-forward dev {:.2e}, delta clause {}",
            fmt4(big.variance_ratios),
            fmt4(big.ks.map(|k| k.p_value)),
            push_dev,
            if delta_ok { "holds" } else { "fails" }
        ),
    )
    .note(format!("t = {:.3}, N=4096 / N=1024 medians: {}", big.time, delta_notes.join(", ")))
    .note(format!("N=1024 variance ratios [{}]", fmt4(small.variance_ratios))))
}

fn c8(_: &Ctx) -> Result<Outcome, String> {
    let mut rng = master_rng(SEED ^ 8);
    let (mut sets, mut tries, mut worst) = (0, 0, 0.0f64);
    let unit1 = WaveCoefficients {
        a1_re: 1.0,
        ..Default::default()
    };
    let unit2 = WaveCoefficients {
        a2_im: 1.0,
        ..Default::default()
    };
    while sets < 100 && tries < 10_000 {
        tries += 1;
        let b1 = rng.gen_range(1.01..1.6);
        let b2 = rng.gen_range(0.3..(1.99f64 - b1).min(0.99));
        let Ok(c) = construct_unimodular(b1, b2, rng.gen_range(0.0..0.05)) else {
            continue;
        };
        if !c.certified {
            continue;
        }
        sets += 1;
        let pred = prediction(&c.params).map_err(err)?;
        let (v1, v2) = v_variances(pred.mu, c.params.coupling1(), c.params.coupling2(), pred.var_u);
        let k = VarianceKernel::new(&c.params, pred.normalization).map_err(err)?;
        worst = worst
            .max((k.cumulative(f64::INFINITY, &unit1) - v1).abs())
            .max((k.cumulative(f64::INFINITY, &unit2) - v2).abs());
    }
    Ok(Outcome::new(
        sets == 100 && worst <= 1e-10,
        format!("{sets} certified sets ({tries} draws), max |H(inf) - Var V| = {worst:.2e} (<= 1e-10)"),
    ))
}

fn num(v: &serde_json::Value) -> f64 {
    v.as_f64().unwrap_or(f64::NAN)
}

fn c9(ctx: &Ctx) -> Result<Outcome, String> {
    let mut cfg = ctx.config("c9");
    cfg.compensator.n_sites = 2048;
    cfg.compensator.t = 1.0;
    cfg.compensator.replicas = 500;
    cfg.compensator.coefficients = WaveCoefficients {
        a1_re: 1.0,
        ..Default::default()
    };
    let out = execute(Command::CompensatorCheck, &cfg).map_err(err)?;
    let d = &out.details;
    Ok(Outcome::new(
        out.passed == Some(true),
        format!(
            "Var I(1) = {:.4}, H(1) = {:.4}, ratio {:.4} (within 15%), 95% band [{:.3}, {:.3}]",
            num(&d["empirical_variance"]),
            num(&d["predicted"]),
            num(&d["ratio"]),
            num(&d["ratio_interval"][0]),
            num(&d["ratio_interval"][1])
        ),
    ))
}

fn quartiles(mut x: Vec<f64>) -> [f64; 3] {
    x.sort_by(f64::total_cmp);
    [0.25, 0.5, 0.75].map(|q| x[((x.len() - 1) as f64 * q).round() as usize])
}

fn c10(ctx: &Ctx) -> Result<Outcome, String> {
    let mut cfg = ctx.config("c10");
    cfg.critical.n_sites = 4096;
    cfg.critical.deltas = vec![0.05, 0.1, 0.2];
    cfg.critical.replicas = 200;
    let out = execute(Command::Critical, &cfg).map_err(err)?;
    let parts: Vec<String> = out.details["estimates"]
        .as_array()
        .ok_or("estimates missing")?
        .iter()
        .map(|e| {
            format!(
                "delta {} at t {:.2}: {:.3} +- {:.3}",
                e["delta"],
                num(&e["time"]),
                num(&e["proportion"]["estimate"]),
                (num(&e["proportion"]["upper"]) - num(&e["proportion"]["lower"])) / 2.0
            )
        })
        .collect();
    let mut outcome = Outcome::new(out.passed == Some(true), parts.join("; "));

    let mut rd = csv::Reader::from_path(cfg.out.join("critical.csv")).map_err(err)?;
    let mut norms: Vec<(f64, f64)> = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(err)?;
        let f = |i: usize| rec[i].parse::<f64>().map_err(err);
        norms.push((f(0)?, f(3)?));
    }
    for d in &cfg.critical.deltas {
        let q = quartiles(norms.iter().filter(|n| n.0 == *d).map(|n| n.1).collect());
        outcome = outcome.note(format!("delta {d}: quartiles of ||X^(1)|| {:.3} {:.3} {:.3}", q[0], q[1], q[2]));
    }
    let mut solver = HydroSolver::new(ctx.params, 16).map_err(err)?;
    let start = eigen_aligned_state(&ctx.params, 16, 1, 1e-4).map_err(err)?;
    let traj = solver.integrate(&start, 500.0, 1e-2, HydroDynamics::Nonlinear, 1000).map_err(err)?;
    let sat = traj.last().mode_norm(1).expect("mode 1");
    Ok(outcome.note(format!("diagnostic: saturated hydrodynamic amplitude of mode 1 is {sat:.4}")))
}

fn c11(ctx: &Ctx) -> Result<Outcome, String> {
    let mut cfg = ctx.config("c11");
    cfg.clt.n = 10_000;
    cfg.clt.replicas = 10_000;
    let out = execute(Command::CltCheck, &cfg).map_err(err)?;
    let d = &out.details;
    Ok(Outcome::new(
        out.passed == Some(true),
        format!(
            "variance {:.5} vs {:.5} (within 3%), KS p {:.3} (> 0.01)",
            d["empirical_variance"].as_f64().unwrap_or(f64::NAN),
            d["target_variance"].as_f64().unwrap_or(f64::NAN),
            d["ks"]["p_value"].as_f64().unwrap_or(f64::NAN)
        ),
    ))
}

fn c12(ctx: &Ctx) -> Result<Outcome, String> {
    let grid: Vec<f64> = (0..=40).map(|i| 0.5 * i as f64).collect();
    let mut ks: Vec<i64> = vec![-1, 1];
    ks.extend((2..=50).flat_map(|k| [k, -k]));
    let mut failing = Vec::new();
    let mut tightest = f64::INFINITY;
    for &k in &ks {
        let r = exp_bound_check(&ctx.params, k, &grid, 10.0).map_err(err)?;
        if !r.holds {
            failing.push(k);
        }
        for pt in &r.points {
            tightest = tightest.min(pt.bound / pt.norm);
        }
    }
    Ok(Outcome::new(
        failing.is_empty(),
        format!("{} modes x {} times, failing modes {failing:?}, smallest bound/norm {tightest:.3}", ks.len(), grid.len()),
    ))
}

fn csv_files(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .map(|r| r.filter_map(|e| e.ok().map(|e| e.path())).collect())
        .unwrap_or_default();
    v.retain(|p| p.extension().is_some_and(|e| e == "csv"));
    v.sort();
    v
}

/// Byte comparison of every CSV in `a` against its namesake in `b`.
fn same_csv(a: &Path, b: &Path) -> Result<usize, String> {
    let files = csv_files(a);
    if files.is_empty() {
        return Err(format!("no CSV in {}", a.display()));
    }
    for f in &files {
        let other = b.join(f.file_name().expect("file"));
        if fs::read(f).map_err(err)? != fs::read(&other).map_err(err)? {
            return Err(format!("{} differs", f.file_name().expect("file").to_string_lossy()));
        }
    }
    Ok(files.len())
}

fn c13(ctx: &Ctx) -> Result<Outcome, String> {
    let mut checked = Vec::new();
    let mut failures = Vec::new();
    let mut compare = |label: &str, a: &Path, b: &Path| match same_csv(a, b) {
        Ok(n) => checked.push(format!("{label} ({n})")),
        Err(e) => failures.push(format!("{label}: {e}")),
    };

    let mut runs: Vec<(Command, Box<dyn Fn(&mut RunConfig)>)> = vec![
        (Command::Stability, Box::new(|_| {})),
        (Command::ConstructParams, Box::new(|_| {})),
        (
            Command::Pde,
            Box::new(|c| {
                c.pde.k_max = 8;
                c.pde.t_end = 2.0;
            }),
        ),
        (
            Command::Simulate,
            Box::new(|c| {
                c.simulate.n_sites = 1024;
                c.simulate.t_end = 1.0;
            }),
        ),
        (
            Command::Critical,
            Box::new(|c| {
                c.critical.n_sites = 512;
                c.critical.replicas = 16;
            }),
        ),
    ];
    // full-size repeats of criteria 9 and 11, compared against the runs above
    runs.push((
        Command::CompensatorCheck,
        Box::new(|c| {
            c.compensator.n_sites = 2048;
            c.compensator.replicas = 500;
        }),
    ));
    runs.push((
        Command::CltCheck,
        Box::new(|c| {
            c.clt.n = 10_000;
            c.clt.replicas = 10_000;
        }),
    ));
    for (cmd, edit) in &runs {
        let name = cmd.name();
        let mut a = ctx.config(&format!("c13/{name}-b"));
        edit(&mut a);
        execute(*cmd, &a).map_err(err)?;
        let earlier = match cmd {
            Command::CompensatorCheck => Some(ctx.work.join("c9")),
            Command::CltCheck => Some(ctx.work.join("c11")),
            _ => None,
        };
        let reference = match earlier.filter(|d| !csv_files(d).is_empty()) {
            Some(d) => d,
            None => {
                let mut b = ctx.config(&format!("c13/{name}-a"));
                edit(&mut b);
                execute(*cmd, &b).map_err(err)?;
                b.out
            }
        };
        compare(name, &reference, &a.out);
    }

    // same seed under different worker counts
    let pools = [1, 3];
    let mut dirs = Vec::new();
    for n in pools {
        let mut c = ctx.config(&format!("c13/fluctuations-{n}"));
        c.fluctuations.n_sites = 512;
        c.fluctuations.replicas = 16;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(err)?;
        pool.install(|| execute(Command::Fluctuations, &c)).map_err(err)?;
        dirs.push(c.out);
    }
    compare("fluctuations across 1 and 3 threads", &dirs[0], &dirs[1]);

    Ok(Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!("identical CSV for {}", checked.join(", "))
        } else {
            format!("mismatch: {}", failures.join("; "))
        },
    ))
}

fn selected() -> Option<Vec<u32>> {
    let s = std::env::var("KACTURING_ACCEPTANCE").ok()?;
    Some(s.split(',').filter_map(|x| x.trim().parse().ok()).collect())
}

fn main() -> ExitCode {
    let criteria: [(u32, f64, Check); 13] = [
        (1, 1.0, c1),
        (2, 30.0, c2),
        (3, 10.0, c3),
        (4, 1.0, c4),
        (5, 30.0, c5),
        (6, 300.0, c6),
        (7, 2700.0, c7),
        (8, 1.0, c8),
        (9, 900.0, c9),
        (10, 2700.0, c10),
        (11, 10.0, c11),
        (12, 1.0, c12),
        (13, f64::INFINITY, c13),
    ];
    let only = selected();
    let tmp = tempfile::tempdir().expect("temp dir");
    let ctx = Ctx {
        work: tmp.path().to_path_buf(),
        params: canonical(),
    };
    println!("acceptance: seed {SEED}, parameters {:?}", ctx.params);
    let mut unexpected = Vec::new();
    for (id, budget, check) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let result = check(&ctx);
        let secs = start.elapsed().as_secs_f64();
        let (mut out, errored) = match result {
            Ok(o) => (o, false),
            Err(e) => (Outcome::new(false, format!("error: {e}")), true),
        };
        if secs > budget {
            out.pass = false;
            out.summary.push_str("; runtime over budget");
        }
        let known = KNOWN_RED.contains(&id) && !errored;
        let verdict = match (out.pass, known) {
            (true, _) => "PASS",
            (false, true) => "FAIL [known red]",
            (false, false) => "FAIL",
        };
        let budget_txt = if budget.is_finite() { format!("{budget:.0} s") } else { "none".into() };
        println!("criterion {id:>2}: {verdict} ({secs:.1} s, budget {budget_txt}) {}", out.summary);
        for n in &out.notes {
            println!("               {n}");
        }
        if !out.pass && !known {
            unexpected.push(id);
        }
    }
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {unexpected:?}");
        ExitCode::FAILURE
    }
}
