//! Linear stability of the homogeneous zero state: per-mode 2x2 matrices, their
//! spectra, the Turing classification and the unimodular parameter construction.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{alpha, kernel_fourier, ModelParams};

/// Spectral abscissa below this magnitude is classified as marginal.
pub const MARGINAL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeMatrix {
    pub k: i64,
    pub a: [[f64; 2]; 2],
}

impl ModeMatrix {
    pub fn new(params: &ModelParams, k: i64) -> Self {
        let a11 = -1.0 + params.alpha1() * kernel_fourier(k, params.tau1);
        let a22 = -1.0 + params.alpha2() * kernel_fourier(k, params.tau2);
        ModeMatrix {
            k,
            a: [[a11, params.coupling1()], [-params.coupling2(), a22]],
        }
    }

    pub fn trace(&self) -> f64 {
        self.a[0][0] + self.a[1][1]
    }

    pub fn determinant(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    pub fn discriminant(&self) -> f64 {
        let d = self.a[0][0] - self.a[1][1];
        d * d + 4.0 * self.a[0][1] * self.a[1][0]
    }

    pub fn apply(&self, v: [Complex64; 2]) -> [Complex64; 2] {
        [
            v[0] * self.a[0][0] + v[1] * self.a[0][1],
            v[0] * self.a[1][0] + v[1] * self.a[1][1],
        ]
    }

    pub fn spectrum(&self) -> ModeSpectrum {
        ModeSpectrum::of(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityClass {
    Stable,
    Unstable,
    Marginal,
}

impl StabilityClass {
    pub fn as_str(&self) -> &'static str {
        match self {
            StabilityClass::Stable => "stable",
            StabilityClass::Unstable => "unstable",
            StabilityClass::Marginal => "marginal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpectrum {
    pub k: i64,
    pub trace: f64,
    pub determinant: f64,
    pub discriminant: f64,
    /// Eigenvalue with the larger real part first.
    pub mu1: Complex64,
    pub mu2: Complex64,
    pub v1: Option<[Complex64; 2]>,
    pub v2: Option<[Complex64; 2]>,
    pub class: StabilityClass,
}

fn eigenvector(a: &[[f64; 2]; 2], mu: Complex64) -> [Complex64; 2] {
    let c1 = [Complex64::new(a[0][1], 0.0), mu - a[0][0]];
    let c2 = [mu - a[1][1], Complex64::new(a[1][0], 0.0)];
    let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
    let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
    let (v, n) = if n1 >= n2 { (c1, n1) } else { (c2, n2) };
    if n == 0.0 {
        return [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)];
    }
    let s = n.sqrt();
    [v[0] / s, v[1] / s]
}

impl ModeSpectrum {
    pub fn of(m: &ModeMatrix) -> Self {
        let tr = m.trace();
        let det = m.determinant();
        let dis = m.discriminant();
        let (mu1, mu2) = if dis >= 0.0 {
            // avoid cancellation in the smaller root
            let sq = dis.sqrt();
            let q = 0.5 * (tr + tr.signum() * sq);
            let (r1, r2) = if q == 0.0 { (0.0, 0.0) } else { (q, det / q) };
            let (hi, lo) = if r1 >= r2 { (r1, r2) } else { (r2, r1) };
            (Complex64::new(hi, 0.0), Complex64::new(lo, 0.0))
        } else {
            let im = 0.5 * (-dis).sqrt();
            (Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im))
        };
        let (v1, v2) = if dis != 0.0 {
            (Some(eigenvector(&m.a, mu1)), Some(eigenvector(&m.a, mu2)))
        } else {
            (None, None)
        };
        let re = mu1.re;
        let class = if re.abs() <= MARGINAL_TOL {
            StabilityClass::Marginal
        } else if re > 0.0 {
            StabilityClass::Unstable
        } else {
            StabilityClass::Stable
        };
        ModeSpectrum {
            k: m.k,
            trace: tr,
            determinant: det,
            discriminant: dis,
            mu1,
            mu2,
            v1,
            v2,
            class,
        }
    }
}

pub fn mode_spectrum(params: &ModelParams, k: i64) -> ModeSpectrum {
    ModeMatrix::new(params, k).spectrum()
}

/// Past this wavenumber both `alpha_i phi_i_hat(k)` are below one, which forces
/// negative trace and positive determinant.
pub fn tail_bound(params: &ModelParams) -> u64 {
    let r1 = params.alpha1().ln() / params.scaled_tau1();
    let r2 = params.alpha2().ln() / params.scaled_tau2();
    let m = r1.max(r2).max(0.0);
    m.sqrt().ceil() as u64 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeConditions {
    pub k: i64,
    /// Negative trace.
    pub cond1: bool,
    /// Positive determinant.
    pub cond2: bool,
    /// Negative determinant, a witness of instability.
    pub cond3: bool,
}

impl ModeConditions {
    fn of(s: &ModeSpectrum) -> Self {
        ModeConditions {
            k: s.k,
            cond1: s.trace < 0.0,
            cond2: s.determinant > 0.0,
            cond3: s.determinant < 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuringReport {
    pub params: ModelParams,
    pub tail_bound: u64,
    pub scanned_up_to: u64,
    pub tail_verified: bool,
    pub spectra: Vec<ModeSpectrum>,
    pub conditions: Vec<ModeConditions>,
    pub unstable_modes: Vec<i64>,
    pub marginal_modes: Vec<i64>,
    pub zero_mode_stable: bool,
    pub is_turing_unstable: bool,
    pub is_unimodular: bool,
    /// A marginal mode prevents a definite verdict.
    pub inconclusive: bool,
}

impl TuringReport {
    pub fn spectrum(&self, k: u64) -> Option<&ModeSpectrum> {
        self.spectra.get(k as usize)
    }
}

/// Scans modes `0..=K` where `K` is the tail bound, or `k_max` when supplied.
/// A `k_max` below the tail bound leaves the tail unverified, so the report
/// can still detect instability but cannot certify unimodularity.
pub fn classify_turing(params: &ModelParams, k_max: Option<u64>) -> Result<TuringReport> {
    params.validate()?;
    let bound = tail_bound(params);
    let upto = k_max.unwrap_or(bound);
    let tail_verified = upto >= bound;
    let spectra: Vec<ModeSpectrum> = (0..=upto as i64).map(|k| mode_spectrum(params, k)).collect();
    let conditions: Vec<ModeConditions> = spectra.iter().map(ModeConditions::of).collect();

    let mut unstable = Vec::new();
    let mut marginal = Vec::new();
    for s in &spectra {
        let ks: Vec<i64> = if s.k == 0 { vec![0] } else { vec![-s.k, s.k] };
        match s.class {
            StabilityClass::Unstable => unstable.extend(ks),
            StabilityClass::Marginal => marginal.extend(ks),
            StabilityClass::Stable => {}
        }
    }
    unstable.sort_unstable();
    marginal.sort_unstable();

    let zero_mode_stable = spectra[0].class == StabilityClass::Stable;
    let inconclusive = !marginal.is_empty() || !tail_verified;
    let is_turing = zero_mode_stable && !unstable.is_empty();
    let is_unimodular = is_turing && !inconclusive && unstable == vec![-1, 1];
    Ok(TuringReport {
        params: *params,
        tail_bound: bound,
        scanned_up_to: upto,
        tail_verified,
        spectra,
        conditions,
        unstable_modes: unstable,
        marginal_modes: marginal,
        zero_mode_stable,
        is_turing_unstable: is_turing,
        is_unimodular,
        inconclusive,
    })
}

/// Necessary condition for a Turing instability: one line is an activator with
/// the narrower kernel, `alpha2 < 1 < alpha1` and `tau1 < tau2`, or the swap.
pub fn necessity_check(params: &ModelParams) -> bool {
    let (a1, a2) = (params.alpha1(), params.alpha2());
    (a2 < 1.0 && 1.0 < a1 && params.tau1 < params.tau2)
        || (a1 < 1.0 && 1.0 < a2 && params.tau2 < params.tau1)
}

fn check_betas(beta1: f64, beta2: f64) -> Result<()> {
    if !(beta1.is_finite() && beta2.is_finite()) {
        return Err(Error::Domain("betas must be finite".into()));
    }
    if !(beta2 > 0.0 && beta2 < 1.0 && 1.0 < beta1) {
        return Err(Error::Domain(format!(
            "need 0 < beta2 < 1 < beta1, got beta1 = {beta1}, beta2 = {beta2}"
        )));
    }
    if beta1 + beta2 >= 2.0 {
        return Err(Error::Domain(format!(
            "need beta1 + beta2 < 2, got {}",
            beta1 + beta2
        )));
    }
    Ok(())
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Coupling at which `alpha1` drops to one.
pub fn lambda_zero(beta1: f64) -> Result<f64> {
    if !(beta1 > 1.0 && beta1.is_finite()) {
        return Err(Error::Domain(format!("need beta1 > 1, got {beta1}")));
    }
    let mut hi = 1.0;
    while alpha(beta1, hi) >= 1.0 {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::Bracket("alpha1 = 1 not bracketed".into()));
        }
    }
    Ok(bisect(0.0, hi, |l| alpha(beta1, l) - 1.0))
}

/// Root of `(alpha1 - 1)(1 - alpha2) = tanh(beta1 lambda) tanh(beta2 lambda)` in `(0, lambda0)`.
/// At this coupling the zero mode's determinant vanishes.
pub fn lambda_star(beta1: f64, beta2: f64) -> Result<f64> {
    check_betas(beta1, beta2)?;
    let l0 = lambda_zero(beta1)?;
    let g = |l: f64| {
        (alpha(beta1, l) - 1.0) * (1.0 - alpha(beta2, l)) - (beta1 * l).tanh() * (beta2 * l).tanh()
    };
    if !(g(0.0) > 0.0 && g(l0) < 0.0) {
        return Err(Error::Bracket(format!(
            "sign change missing on [0, {l0}]: g(0) = {}, g(l0) = {}",
            g(0.0),
            g(l0)
        )));
    }
    let root = bisect(0.0, l0, g);
    let resid = g(root).abs();
    if resid > 1e-12 {
        return Err(Error::Bracket(format!("residual {resid} at lambda = {root}")));
    }
    Ok(root)
}

/// Root of `e^t (1 - t) = a` on `(0, 1)` for `a` in `(0, 1)`.
pub fn c_hat(a: f64) -> Result<f64> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Domain(format!("need 0 < a < 1, got {a}")));
    }
    Ok(bisect(0.0, 1.0, |t| t.exp() * (1.0 - t) - a))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstructionWitness {
    pub lambda_star: f64,
    pub lambda_margin: f64,
    pub alpha1_star: f64,
    pub alpha2_star: f64,
    pub scaled_tau1: f64,
    pub scaled_tau2: f64,
    /// `((alpha2*)^-1 e^{t2} - 1) / t2`
    pub window_lhs: f64,
    /// `(1 - (alpha1*)^-1 e^{t1}) / t1`
    pub window_rhs: f64,
    pub window_holds: bool,
    /// `t1 > log(alpha1*) / 4`
    pub mode_two_excluded: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Construction {
    pub params: ModelParams,
    pub witness: ConstructionWitness,
    pub report: TuringReport,
    /// The classification certifies exactly the modes `+-1` as unstable.
    pub certified: bool,
}

/// Kernel widths from `alpha*` at `lambda*` and coupling `lambda*(1 + margin)`,
/// then certified by a full mode scan rather than trusted.
pub fn construct_unimodular(beta1: f64, beta2: f64, lambda_margin: f64) -> Result<Construction> {
    check_betas(beta1, beta2)?;
    if !(lambda_margin.is_finite() && lambda_margin >= 0.0) {
        return Err(Error::param("lambda_margin", format!("must be >= 0, got {lambda_margin}")));
    }
    let ls = lambda_star(beta1, beta2)?;
    let a1 = alpha(beta1, ls);
    let a2 = alpha(beta2, ls);
    let t1 = a1.ln() / 3.0;
    let t2 = c_hat(a2)?;
    let window_lhs = (t2.exp() / a2 - 1.0) / t2;
    let window_rhs = (1.0 - t1.exp() / a1) / t1;
    let two_pi_sq = 2.0 * std::f64::consts::PI * std::f64::consts::PI;
    let params = ModelParams::new(
        beta1,
        beta2,
        t1 / two_pi_sq,
        t2 / two_pi_sq,
        ls * (1.0 + lambda_margin),
    )?;
    let report = classify_turing(&params, None)?;
    Ok(Construction {
        params,
        witness: ConstructionWitness {
            lambda_star: ls,
            lambda_margin,
            alpha1_star: a1,
            alpha2_star: a2,
            scaled_tau1: t1,
            scaled_tau2: t2,
            window_lhs,
            window_rhs,
            window_holds: window_lhs < window_rhs,
            mode_two_excluded: t1 > a1.ln() / 4.0,
        },
        certified: report.is_unimodular,
        report,
    })
}

/// Growth rate `mu` of modes `+-1`; requires a certified unimodular regime.
pub fn growth_rate(params: &ModelParams) -> Result<f64> {
    let report = classify_turing(params, None)?;
    if !report.is_unimodular {
        return Err(Error::Domain(format!(
            "parameters are not unimodular Turing unstable (unstable modes {:?})",
            report.unstable_modes
        )));
    }
    Ok(report.spectra[1].mu1.re)
}

/// `e^{tA}` for a real 2x2 matrix via Cayley-Hamilton.
pub fn matrix_exp(a: &[[f64; 2]; 2], t: f64) -> [[f64; 2]; 2] {
    let m = 0.5 * (a[0][0] + a[1][1]);
    let d = a[0][0] - a[1][1];
    let disc = 0.25 * (d * d + 4.0 * a[0][1] * a[1][0]);
    // e^{tA} = e^{tm} (f0 I + f1 (A - mI))
    let (f0, f1) = if disc > 0.0 {
        let w = disc.sqrt();
        ((t * w).cosh(), (t * w).sinh() / w)
    } else if disc < 0.0 {
        let w = (-disc).sqrt();
        ((t * w).cos(), (t * w).sin() / w)
    } else {
        (1.0, t)
    };
    let e = (t * m).exp();
    [
        [e * (f0 + f1 * (a[0][0] - m)), e * f1 * a[0][1]],
        [e * f1 * a[1][0], e * (f0 + f1 * (a[1][1] - m))],
    ]
}

/// Largest singular value of a real 2x2 matrix.
pub fn spectral_norm(b: &[[f64; 2]; 2]) -> f64 {
    let p = b[0][0] * b[0][0] + b[1][0] * b[1][0];
    let q = b[0][1] * b[0][1] + b[1][1] * b[1][1];
    let r = b[0][0] * b[0][1] + b[1][0] * b[1][1];
    let h = 0.5 * (p + q);
    let s = (0.25 * (p - q) * (p - q) + r * r).sqrt();
    (h + s).max(0.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpBoundPoint {
    pub t: f64,
    pub norm: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpBoundReport {
    pub k: i64,
    pub constant: f64,
    pub points: Vec<ExpBoundPoint>,
    pub holds: bool,
}

/// Checks `||e^{tA^(k)}|| <= C e^{t mu}` for `k = +-1` and
/// `||e^{tA^(k)}|| <= C e^{t Re(mu1^(k)) / 2}` otherwise.
pub fn exp_bound_check(params: &ModelParams, k: i64, t_grid: &[f64], constant: f64) -> Result<ExpBoundReport> {
    params.validate()?;
    let m = ModeMatrix::new(params, k);
    let s = m.spectrum();
    let rate = if k.abs() == 1 { s.mu1.re } else { 0.5 * s.mu1.re };
    let points: Vec<ExpBoundPoint> = t_grid
        .iter()
        .map(|&t| {
            let norm = spectral_norm(&matrix_exp(&m.a, t));
            let bound = constant * (t * rate).exp();
            ExpBoundPoint {
                t,
                norm,
                bound,
                holds: norm <= bound,
            }
        })
        .collect();
    Ok(ExpBoundReport {
        k,
        constant,
        holds: points.iter().all(|p| p.holds),
        points,
    })
}

/// Oblique projector onto the unstable eigenvector of mode 1 along the stable one.
pub fn unstable_projector(params: &ModelParams) -> Result<[[f64; 2]; 2]> {
    let s = mode_spectrum(params, 1);
    if s.discriminant <= 0.0 {
        return Err(Error::Domain("mode 1 has no real eigenbasis".into()));
    }
    let m = ModeMatrix::new(params, 1);
    let b = m.a[0][1];
    let v1 = [b, s.mu1.re - m.a[0][0]];
    let v2 = [b, s.mu2.re - m.a[0][0]];
    // P = v1 w1^T with w1 the first row of [v1 v2]^{-1}
    let det = v1[0] * v2[1] - v2[0] * v1[1];
    if det.abs() < 1e-300 {
        return Err(Error::Domain("degenerate eigenbasis".into()));
    }
    let w1 = [v2[1] / det, -v2[0] / det];
    Ok([
        [v1[0] * w1[0], v1[0] * w1[1]],
        [v1[1] * w1[0], v1[1] * w1[1]],
    ])
}
