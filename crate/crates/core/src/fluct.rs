//! Ensemble experiments around the Turing instability: Gaussian fluctuations of
//! the unstable mode at mesoscopic times, escape from the origin before the
//! critical time, pattern statistics and the martingale variance check.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::micro::{Dynamics, FlipObserver, Line, ModeSample, SpinState};
use crate::model::{LatticeSpec, ModelParams};
use crate::rng::{master_rng, replica_rng};
use crate::stability::{growth_rate, mode_spectrum, unstable_projector};
use crate::stats::{self, KsResult, Proportion};

pub const DEFAULT_MODES: [i64; 7] = [-3, -2, -1, 0, 1, 2, 3];

/// Per-component variance of the initial-noise limit `U`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// `int_0^1 cos^2(2 pi r) dr = 1/2`, the exact variance of
    /// `gamma^{-1/2} Re X^(1)` under the product measure.
    #[default]
    Lattice,
    /// Base variance `pi`.
    Published,
}

impl Normalization {
    pub fn base_variance(self) -> f64 {
        match self {
            Normalization::Lattice => 0.5,
            Normalization::Published => PI,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaTime {
    pub theta: f64,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaTime {
    pub delta: f64,
    /// `T_delta = log(1/delta) / (2 mu)`
    pub lead: f64,
    /// `t_c - T_delta`
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    pub gamma: f64,
    pub mu: f64,
    pub thetas: Vec<ThetaTime>,
    pub t_c: f64,
    pub deltas: Vec<DeltaTime>,
}

pub fn theta_time(mu: f64, gamma: f64, theta: f64) -> f64 {
    -theta * gamma.ln() / (2.0 * mu)
}

pub fn schedule(params: &ModelParams, gamma: f64, thetas: &[f64], deltas: &[f64]) -> Result<TimeSchedule> {
    let mu = growth_rate(params)?;
    schedule_with_rate(mu, gamma, thetas, deltas)
}

pub fn schedule_with_rate(mu: f64, gamma: f64, thetas: &[f64], deltas: &[f64]) -> Result<TimeSchedule> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::Domain(format!("need 0 < gamma < 1, got {gamma}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::Domain(format!("need a positive growth rate, got {mu}")));
    }
    let thetas = thetas
        .iter()
        .map(|&theta| {
            if !(0.0..=1.0).contains(&theta) {
                return Err(Error::Domain(format!("theta must lie in [0, 1], got {theta}")));
            }
            Ok(ThetaTime {
                theta,
                time: theta_time(mu, gamma, theta),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let t_c = theta_time(mu, gamma, 1.0);
    let deltas = deltas
        .iter()
        .map(|&delta| {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
            }
            let lead = -delta.ln() / (2.0 * mu);
            if t_c <= lead {
                return Err(Error::Domain(format!(
                    "t_c = {t_c} does not exceed T_delta = {lead} for delta = {delta}; gamma too large"
                )));
            }
            Ok(DeltaTime {
                delta,
                lead,
                time: t_c - lead,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeSchedule {
        gamma,
        mu,
        thetas,
        t_c,
        deltas,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluctuationPrediction {
    pub mu: f64,
    pub normalization: Normalization,
    pub var_u: f64,
    pub var_v1: f64,
    pub var_v2: f64,
    pub projector: [[f64; 2]; 2],
    /// Covariance of `(Re Z1, Im Z1, Re Z2, Im Z2)` for `Z = P1 (U + V)`.
    pub covariance: [[f64; 4]; 4],
}

/// Limit variances `Var V_i = c/mu -+ tanh_i (tanh_1 - tanh_2) c / (2 mu^2 + 2 mu)`.
pub fn v_variances(mu: f64, tanh1: f64, tanh2: f64, c: f64) -> (f64, f64) {
    let d = tanh1 - tanh2;
    let q = c / (2.0 * mu * mu + 2.0 * mu);
    (c / mu - tanh1 * d * q, c / mu + tanh2 * d * q)
}

pub fn prediction(params: &ModelParams) -> Result<FluctuationPrediction> {
    prediction_with(params, Normalization::default())
}

pub fn prediction_with(params: &ModelParams, normalization: Normalization) -> Result<FluctuationPrediction> {
    let mu = growth_rate(params)?;
    let s = mode_spectrum(params, 1);
    if s.discriminant == 0.0 {
        return Err(Error::Domain("defective mode-1 matrix".into()));
    }
    let p = unstable_projector(params)?;
    let c = normalization.base_variance();
    let (v1, v2) = v_variances(mu, params.coupling1(), params.coupling2(), c);
    let d = [c + v1, c + v2];
    let mut cre = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cre[i][j] = p[i][0] * d[0] * p[j][0] + p[i][1] * d[1] * p[j][1];
        }
    }
    let mut cov = [[0.0; 4]; 4];
    for i in 0..2 {
        for j in 0..2 {
            cov[2 * i][2 * j] = cre[i][j];
            cov[2 * i + 1][2 * j + 1] = cre[i][j];
        }
    }
    Ok(FluctuationPrediction {
        mu,
        normalization,
        var_u: c,
        var_v1: v1,
        var_v2: v2,
        projector: p,
        covariance: cov,
    })
}

/// Coefficients of the test functions `G_i(r) = a_re cos(2 pi r) + a_im sin(2 pi r)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct WaveCoefficients {
    pub a1_re: f64,
    pub a1_im: f64,
    pub a2_re: f64,
    pub a2_im: f64,
}

impl WaveCoefficients {
    fn weights(&self) -> [f64; 2] {
        [
            self.a1_re * self.a1_re + self.a1_im * self.a1_im,
            self.a2_re * self.a2_re + self.a2_im * self.a2_im,
        ]
    }
}

/// Quadratic-variation density `h` and its discounted integral `H`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceKernel {
    pub mu: f64,
    pub tanh1: f64,
    pub tanh2: f64,
    pub base_variance: f64,
}

impl VarianceKernel {
    pub fn new(params: &ModelParams, normalization: Normalization) -> Result<Self> {
        Ok(Self::with_rate(
            growth_rate(params)?,
            params.coupling1(),
            params.coupling2(),
            normalization,
        ))
    }

    pub fn with_rate(mu: f64, tanh1: f64, tanh2: f64, normalization: Normalization) -> Self {
        VarianceKernel {
            mu,
            tanh1,
            tanh2,
            base_variance: normalization.base_variance(),
        }
    }

    /// `(A_i, B_i)` with `h_i(t) = w_i (A_i + B_i (1 - e^{-2t}))`.
    fn parts(&self) -> [(f64, f64); 2] {
        let c = self.base_variance;
        let d = self.tanh1 - self.tanh2;
        [(2.0 * c, -c * self.tanh1 * d), (2.0 * c, c * self.tanh2 * d)]
    }

    pub fn integrand(&self, t: f64, a: &WaveCoefficients) -> f64 {
        let w = a.weights();
        let e = 1.0 - (-2.0 * t).exp();
        self.parts()
            .iter()
            .zip(w)
            .map(|(&(p, q), w)| w * (p + q * e))
            .sum()
    }

    /// `H(t) = int_0^t e^{-2 mu s} h(s) ds`, also valid for `t = inf`.
    pub fn cumulative(&self, t: f64, a: &WaveCoefficients) -> f64 {
        let m = self.mu;
        let w = a.weights();
        let f1 = -(-2.0 * m * t).exp_m1() / (2.0 * m);
        let f2 = -(-(2.0 * m + 2.0) * t).exp_m1() / (2.0 * m + 2.0);
        self.parts()
            .iter()
            .zip(w)
            .map(|(&(p, q), w)| w * ((p + q) * f1 - q * f2))
            .sum()
    }
}

/// Raw mode amplitudes of one replica at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSample {
    pub replica: u64,
    pub time: f64,
    pub modes: Vec<ModeSample>,
    pub proposals: u64,
    pub flips: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub k: i64,
    /// Median over replicas of `scale * ||(X1, X2)||`.
    pub median_abs: f64,
    pub max_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub params: ModelParams,
    pub n_sites: usize,
    pub theta: f64,
    pub time: f64,
    pub replicas: usize,
    pub master_seed: u64,
    /// `gamma^{(theta - 1)/2}`
    pub scale: f64,
    pub prediction: FluctuationPrediction,
    /// Rescaled `P1 (X1^(1), X2^(1))` as `(Re Z1, Im Z1, Re Z2, Im Z2)`.
    pub projected: Vec<[f64; 4]>,
    pub covariance: [[f64; 4]; 4],
    pub variance_ratios: [f64; 4],
    pub ks: [KsResult; 4],
    pub other_modes: Vec<ModeSummary>,
    pub samples: Vec<ReplicaSample>,
    pub acceptance_ratio: f64,
}

impl EnsembleStats {
    /// Rescaled projected amplitudes of one line as complex numbers.
    pub fn projected_line(&self, line: Line) -> Vec<Complex64> {
        let o = 2 * line.index();
        self.projected.iter().map(|v| Complex64::new(v[o], v[o + 1])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub n_sites: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub modes: Vec<i64>,
    pub normalization: Normalization,
}

impl EnsembleConfig {
    pub fn new(n_sites: usize, replicas: usize, master_seed: u64) -> Self {
        EnsembleConfig {
            n_sites,
            replicas,
            master_seed,
            modes: DEFAULT_MODES.to_vec(),
            normalization: Normalization::default(),
        }
    }
}

fn run_replicas<T, F>(replicas: usize, master_seed: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            f(r).map_err(|e| Error::Replica {
                replica: r,
                master_seed,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Advances one replica through `times` (ascending) and records `ks` at each.
pub fn simulate_replica(
    dynamics: &Dynamics,
    master_seed: u64,
    replica: u64,
    ks: &[i64],
    times: &[f64],
) -> Result<Vec<ReplicaSample>> {
    let mut st = dynamics.init_with_rng(replica_rng(master_seed, replica), ks);
    times
        .iter()
        .map(|&t| {
            dynamics.advance(&mut st, t)?;
            Ok(sample_of(dynamics, &st, replica, ks))
        })
        .collect()
}

fn sample_of(dynamics: &Dynamics, st: &SpinState, replica: u64, ks: &[i64]) -> ReplicaSample {
    let obs = dynamics.observe(st, ks);
    ReplicaSample {
        replica,
        time: st.time(),
        modes: obs.modes,
        proposals: st.proposals(),
        flips: st.accepted(Line::First) + st.accepted(Line::Second),
    }
}

pub fn run_fluctuation_ensemble(params: &ModelParams, theta: f64, config: &EnsembleConfig) -> Result<EnsembleStats> {
    if config.replicas < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: config.replicas,
        });
    }
    let lattice = LatticeSpec::new(config.n_sites)?;
    let gamma = lattice.gamma();
    let pred = prediction_with(params, config.normalization)?;
    let sched = schedule_with_rate(pred.mu, gamma, &[theta], &[])?;
    let time = sched.thetas[0].time;
    let mut ks = config.modes.clone();
    if !ks.contains(&1) {
        ks.push(1);
    }
    let dynamics = Dynamics::new(*params, lattice)?;
    let samples: Vec<ReplicaSample> = run_replicas(config.replicas, config.master_seed, |r| {
        Ok(simulate_replica(&dynamics, config.master_seed, r, &ks, &[time])?.remove(0))
    })?;
    Ok(summarize(params, &pred, config, theta, time, gamma, samples))
}

fn summarize(
    params: &ModelParams,
    pred: &FluctuationPrediction,
    config: &EnsembleConfig,
    theta: f64,
    time: f64,
    gamma: f64,
    samples: Vec<ReplicaSample>,
) -> EnsembleStats {
    let scale = gamma.powf(0.5 * (theta - 1.0));
    let p = pred.projector;
    let projected: Vec<[f64; 4]> = samples
        .iter()
        .map(|s| {
            let m = s.modes.iter().find(|m| m.k == 1).expect("mode 1 is always recorded");
            let z1 = (m.x1 * p[0][0] + m.x2 * p[0][1]) * scale;
            let z2 = (m.x1 * p[1][0] + m.x2 * p[1][1]) * scale;
            [z1.re, z1.im, z2.re, z2.im]
        })
        .collect();
    let covariance = stats::covariance(&projected);
    let mut variance_ratios = [0.0; 4];
    let ks: Vec<KsResult> = (0..4)
        .map(|i| {
            let v = pred.covariance[i][i];
            variance_ratios[i] = covariance[i][i] / v;
            let col: Vec<f64> = projected.iter().map(|x| x[i]).collect();
            stats::ks_one_sample(&col, |x| stats::normal_cdf(x, v)).expect("non-empty ensemble")
        })
        .collect();
    let mut other_modes = Vec::new();
    for &k in &config.modes {
        if k.abs() == 1 {
            continue;
        }
        let mags: Vec<f64> = samples
            .iter()
            .filter_map(|s| s.modes.iter().find(|m| m.k == k))
            .map(|m| scale * (m.x1.norm_sqr() + m.x2.norm_sqr()).sqrt())
            .collect();
        other_modes.push(ModeSummary {
            k,
            median_abs: stats::median(&mags),
            max_abs: mags.iter().cloned().fold(0.0, f64::max),
        });
    }
    let (prop, flips) = samples
        .iter()
        .fold((0u64, 0u64), |(p, f), s| (p + s.proposals, f + s.flips));
    EnsembleStats {
        params: *params,
        n_sites: (1.0 / gamma).round() as usize,
        theta,
        time,
        replicas: samples.len(),
        master_seed: config.master_seed,
        scale,
        prediction: *pred,
        projected,
        covariance,
        variance_ratios,
        ks: [ks[0], ks[1], ks[2], ks[3]],
        other_modes,
        samples,
        acceptance_ratio: if prop == 0 { 0.0 } else { flips as f64 / prop as f64 },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EscapeEstimate {
    pub delta: f64,
    pub time: f64,
    pub proportion: Proportion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscapeStats {
    pub params: ModelParams,
    pub n_sites: usize,
    pub replicas: usize,
    pub master_seed: u64,
    pub schedule: TimeSchedule,
    pub estimates: Vec<EscapeEstimate>,
    /// `||(X1^(1), X2^(1))||` per replica, one row per delta.
    pub norms: Vec<Vec<f64>>,
}

impl EscapeStats {
    pub fn estimate(&self, delta: f64) -> Option<&EscapeEstimate> {
        self.estimates.iter().find(|e| e.delta == delta)
    }
}

/// Probability that the unstable mode has left the `delta`-ball at `t_c - T_delta`,
/// for each requested `delta`, from one trajectory per replica.
pub fn run_escape_ensemble(
    params: &ModelParams,
    n_sites: usize,
    deltas: &[f64],
    replicas: usize,
    master_seed: u64,
) -> Result<EscapeStats> {
    if replicas == 0 {
        return Err(Error::InsufficientSamples { needed: 1, got: 0 });
    }
    let lattice = LatticeSpec::new(n_sites)?;
    let sched = schedule(params, lattice.gamma(), &[], deltas)?;
    let mut order: Vec<usize> = (0..deltas.len()).collect();
    order.sort_by(|&a, &b| sched.deltas[a].time.total_cmp(&sched.deltas[b].time));
    let times: Vec<f64> = order.iter().map(|&i| sched.deltas[i].time).collect();
    let dynamics = Dynamics::new(*params, lattice)?;
    let runs = run_replicas(replicas, master_seed, |r| {
        simulate_replica(&dynamics, master_seed, r, &[1], &times)
    })?;
    let mut norms = vec![Vec::with_capacity(replicas); deltas.len()];
    for run in &runs {
        for (slot, &i) in order.iter().enumerate() {
            let m = run[slot].modes[0];
            norms[i].push((m.x1.norm_sqr() + m.x2.norm_sqr()).sqrt());
        }
    }
    let estimates = sched
        .deltas
        .iter()
        .zip(&norms)
        .map(|(d, ns)| EscapeEstimate {
            delta: d.delta,
            time: d.time,
            proportion: Proportion::new(ns.iter().filter(|&&n| n > d.delta).count() as u64, replicas as u64),
        })
        .collect();
    Ok(EscapeStats {
        params: *params,
        n_sites,
        replicas,
        master_seed,
        schedule: sched,
        estimates,
        norms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatternStats {
    pub samples: usize,
    pub phase: KsResult,
    pub amplitude: KsResult,
    pub mean_squared_amplitude: f64,
    pub predicted_mean_squared_amplitude: f64,
}

pub fn phase(z: Complex64) -> f64 {
    (-z.im.atan2(z.re)).rem_euclid(2.0 * PI)
}

/// Phase uniformity and exponential squared amplitude for an isotropic complex
/// Gaussian with per-component variance `component_variance`.
pub fn pattern_test(samples: &[Complex64], component_variance: f64) -> Result<PatternStats> {
    if samples.len() < 100 {
        return Err(Error::InsufficientSamples {
            needed: 100,
            got: samples.len(),
        });
    }
    let phases: Vec<f64> = samples.iter().map(|&z| phase(z)).collect();
    let amps: Vec<f64> = samples.iter().map(|z| z.norm_sqr()).collect();
    let mean = 2.0 * component_variance;
    Ok(PatternStats {
        samples: samples.len(),
        phase: stats::ks_one_sample(&phases, |x| (x / (2.0 * PI)).clamp(0.0, 1.0))?,
        amplitude: stats::ks_one_sample(&amps, |x| if x <= 0.0 { 0.0 } else { 1.0 - (-x / mean).exp() })?,
        mean_squared_amplitude: stats::mean(&amps),
        predicted_mean_squared_amplitude: mean,
    })
}

/// Squared amplitudes against synthetic Gaussian draws with the given component
/// variances, which covers the non-isotropic gamma-type case.
pub fn amplitude_oracle_test(samples: &[Complex64], var_re: f64, var_im: f64, draws: usize, seed: u64) -> Result<KsResult> {
    let mut rng = master_rng(seed);
    let synth: Vec<f64> = (0..draws)
        .map(|_| {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            a * a * var_re + b * b * var_im
        })
        .collect();
    let amps: Vec<f64> = samples.iter().map(|z| z.norm_sqr()).collect();
    stats::ks_two_sample(&amps, &synth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinFn {
    Cos,
    Sin,
    Constant(f64),
}

impl BuiltinFn {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            BuiltinFn::Cos => (2.0 * PI * r).cos(),
            BuiltinFn::Sin => (2.0 * PI * r).sin(),
            BuiltinFn::Constant(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltResult {
    pub n: usize,
    pub replicas: usize,
    pub empirical_variance: f64,
    pub target_variance: f64,
    pub ks: Option<KsResult>,
    pub samples: Vec<f64>,
}

/// `int_0^1 f^2` by the trapezoid rule on a fine periodic grid.
pub fn square_integral(f: &dyn Fn(f64) -> f64) -> f64 {
    let m = 1 << 16;
    (0..m).map(|i| f(i as f64 / m as f64).powi(2)).sum::<f64>() / m as f64
}

/// Samples of `N^{-1/2} sum_i f(i/N) sigma_i` under fair independent spins.
pub fn clt_oracle(f: &(dyn Fn(f64) -> f64 + Sync), n: usize, replicas: usize, seed: u64) -> Result<CltResult> {
    if n == 0 || replicas < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: replicas.min(n),
        });
    }
    let weights: Vec<f64> = (0..n).map(|i| f(i as f64 / n as f64)).collect();
    let norm = 1.0 / (n as f64).sqrt();
    let samples: Vec<f64> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let mut s = 0.0;
            for chunk in weights.chunks(64) {
                let bits: u64 = rng.gen();
                for (b, w) in chunk.iter().enumerate() {
                    if (bits >> b) & 1 == 1 {
                        s += w;
                    } else {
                        s -= w;
                    }
                }
            }
            s * norm
        })
        .collect();
    let target = square_integral(f);
    let ks = if target > 0.0 {
        Some(stats::ks_one_sample(&samples, |x| stats::normal_cdf(x, target))?)
    } else {
        None
    };
    Ok(CltResult {
        n,
        replicas,
        empirical_variance: stats::variance(&samples),
        target_variance: target,
        ks,
        samples,
    })
}

/// Online accumulator for `gamma^{-1/2} int_0^t e^{-mu s} dM(s)` where `M` is the
/// martingale part of `<sigma1, G1> + <sigma2, G2>`.
#[derive(Debug, Clone)]
pub struct CompensatedIntegral {
    mu: f64,
    gamma: f64,
    waves: [Vec<f64>; 2],
    last_time: f64,
    generator: f64,
    jumps: f64,
    drift: f64,
}

impl CompensatedIntegral {
    pub fn new(dynamics: &Dynamics, state: &SpinState, mu: f64, a: &WaveCoefficients) -> Self {
        let n = dynamics.lattice().n_sites;
        let wave = |re: f64, im: f64| -> Vec<f64> {
            (0..n)
                .map(|x| {
                    let r = 2.0 * PI * x as f64 / n as f64;
                    re * r.cos() + im * r.sin()
                })
                .collect()
        };
        let mut acc = CompensatedIntegral {
            mu,
            gamma: dynamics.lattice().gamma(),
            waves: [wave(a.a1_re, a.a1_im), wave(a.a2_re, a.a2_im)],
            last_time: state.time(),
            generator: 0.0,
            jumps: 0.0,
            drift: 0.0,
        };
        acc.generator = acc.generator_value(dynamics, state);
        acc
    }

    /// Generator applied to the linear functional, through the simulator's own rates.
    fn generator_value(&self, dynamics: &Dynamics, st: &SpinState) -> f64 {
        let mut s = 0.0;
        for line in Line::BOTH {
            let g = &self.waves[line.index()];
            let spins = st.line(line);
            for x in 0..spins.len() {
                if g[x] != 0.0 {
                    s -= 2.0 * dynamics.flip_rate(st, line, x) * spins[x] as f64 * g[x];
                }
            }
        }
        s * self.gamma
    }

    fn integrate_drift(&mut self, t: f64) {
        let m = self.mu;
        let w = ((-m * self.last_time).exp() - (-m * t).exp()) / m;
        self.drift += self.generator * w;
        self.last_time = t;
    }

    /// Closes the drift integral at `t` and returns the current value.
    pub fn value_at(&mut self, t: f64) -> f64 {
        self.integrate_drift(t);
        (self.jumps - self.drift) / self.gamma.sqrt()
    }
}

impl FlipObserver for CompensatedIntegral {
    fn before_flip(&mut self, _dynamics: &Dynamics, st: &SpinState, line: Line, x: usize) {
        let t = st.time();
        self.integrate_drift(t);
        let s_old = st.line(line)[x] as f64;
        self.jumps += (-self.mu * t).exp() * (-2.0 * s_old * self.gamma * self.waves[line.index()][x]);
    }

    fn after_flip(&mut self, dynamics: &Dynamics, st: &SpinState) {
        self.generator = self.generator_value(dynamics, st);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompensatorCheck {
    pub n_sites: usize,
    pub time: f64,
    pub replicas: usize,
    pub coefficients: WaveCoefficients,
    pub empirical_variance: f64,
    pub predicted: f64,
    pub ratio: f64,
    /// Chi-square 95% interval for the variance ratio under normality.
    pub ratio_interval: (f64, f64),
    pub samples: Vec<f64>,
}

pub fn compensator_variance_check(
    params: &ModelParams,
    n_sites: usize,
    t: f64,
    a: &WaveCoefficients,
    replicas: usize,
    seed: u64,
    normalization: Normalization,
) -> Result<CompensatorCheck> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("time must be >= 0, got {t}")));
    }
    if replicas < 2 {
        return Err(Error::InsufficientSamples {
            needed: 2,
            got: replicas,
        });
    }
    let kernel = VarianceKernel::new(params, normalization)?;
    let lattice = LatticeSpec::new(n_sites)?;
    let dynamics = Dynamics::new(*params, lattice)?;
    let samples = run_replicas(replicas, seed, |r| {
        let mut st = dynamics.init_with_rng(replica_rng(seed, r), &[]);
        let mut acc = CompensatedIntegral::new(&dynamics, &st, kernel.mu, a);
        dynamics.advance_with(&mut st, t, &mut acc)?;
        Ok(acc.value_at(t))
    })?;
    let predicted = kernel.cumulative(t, a);
    let empirical = if samples.iter().all(|&s| s == 0.0) { 0.0 } else { stats::variance(&samples) };
    let dof = (replicas - 1) as f64;
    // Wilson-Hilferty approximation to the chi-square quantiles
    let q = |p: f64| {
        let z = stats::normal_quantile(p);
        let c = 2.0 / (9.0 * dof);
        dof * (1.0 - c + z * c.sqrt()).powi(3)
    };
    let ratio = if predicted > 0.0 { empirical / predicted } else { f64::NAN };
    Ok(CompensatorCheck {
        n_sites,
        time: t,
        replicas,
        coefficients: *a,
        empirical_variance: empirical,
        predicted,
        ratio,
        ratio_interval: (q(0.025) / dof, q(0.975) / dof),
        samples,
    })
}

/// Draws `n` synthetic `(U, V)` limits and pushes them through the projector.
pub fn synthetic_projected(pred: &FluctuationPrediction, n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = master_rng(seed);
    let sd = [(pred.var_u + pred.var_v1).sqrt(), (pred.var_u + pred.var_v2).sqrt()];
    let p = pred.projector;
    (0..n)
        .map(|_| {
            let mut w = [0.0; 4];
            for (i, v) in w.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *v = z * sd[i / 2];
            }
            // w = (Re W1, Im W1, Re W2, Im W2)
            [
                p[0][0] * w[0] + p[0][1] * w[2],
                p[0][0] * w[1] + p[0][1] * w[3],
                p[1][0] * w[0] + p[1][1] * w[2],
                p[1][0] * w[1] + p[1][1] * w[3],
            ]
        })
        .collect()
}
