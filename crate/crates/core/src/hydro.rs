//! Pseudo-spectral solver for the nonlocal hydrodynamic equations with RK4 time stepping.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{kernel_fourier, ModelParams};
use crate::stability::ModeMatrix;

/// Sup-norm above which the nonlinear solution is declared blown up.
pub const BLOWUP_BOUND: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HydroDynamics {
    Linear,
    Nonlinear,
    /// Linearized equations evaluated on the collocation grid, used to
    /// check the transform path against [`HydroDynamics::Linear`].
    #[doc(hidden)]
    LinearizedGrid,
}

/// Fourier coefficients of both profiles for `|k| <= K`, index `k + K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralState {
    pub k_max: usize,
    pub time: f64,
    pub u1: Vec<Complex64>,
    pub u2: Vec<Complex64>,
}

impl SpectralState {
    pub fn zeros(k_max: usize) -> Self {
        let z = vec![Complex64::new(0.0, 0.0); 2 * k_max + 1];
        SpectralState {
            k_max,
            time: 0.0,
            u1: z.clone(),
            u2: z,
        }
    }

    fn idx(&self, k: i64) -> Option<usize> {
        let km = self.k_max as i64;
        (k.abs() <= km).then(|| (k + km) as usize)
    }

    pub fn coefficient(&self, k: i64) -> Option<[Complex64; 2]> {
        self.idx(k).map(|i| [self.u1[i], self.u2[i]])
    }

    /// Sets mode `k` and its conjugate partner `-k`, keeping the profiles real.
    pub fn set_mode(&mut self, k: i64, c: [Complex64; 2]) -> Result<()> {
        let i = self
            .idx(k)
            .ok_or_else(|| Error::Domain(format!("mode {k} outside |k| <= {}", self.k_max)))?;
        let j = self.idx(-k).expect("symmetric range");
        if k == 0 {
            self.u1[i] = Complex64::new(c[0].re, 0.0);
            self.u2[i] = Complex64::new(c[1].re, 0.0);
        } else {
            self.u1[i] = c[0];
            self.u2[i] = c[1];
            self.u1[j] = c[0].conj();
            self.u2[j] = c[1].conj();
        }
        Ok(())
    }

    pub fn mode_norm(&self, k: i64) -> Option<f64> {
        self.coefficient(k).map(|c| (c[0].norm_sqr() + c[1].norm_sqr()).sqrt())
    }

    /// Largest `|u(k) - conj(u(-k))|` over both profiles.
    pub fn conjugate_defect(&self) -> f64 {
        let km = self.k_max as i64;
        let mut d: f64 = 0.0;
        for k in 0..=km {
            let (a, b) = (self.idx(k).unwrap(), self.idx(-k).unwrap());
            d = d.max((self.u1[a] - self.u1[b].conj()).norm());
            d = d.max((self.u2[a] - self.u2[b].conj()).norm());
        }
        d
    }

    fn axpy(&self, h: f64, d: &(Vec<Complex64>, Vec<Complex64>)) -> SpectralState {
        SpectralState {
            k_max: self.k_max,
            time: self.time,
            u1: self.u1.iter().zip(&d.0).map(|(a, b)| a + b * h).collect(),
            u2: self.u2.iter().zip(&d.1).map(|(a, b)| a + b * h).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<SpectralState>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.time).collect()
    }

    pub fn last(&self) -> &SpectralState {
        self.states.last().expect("trajectory holds the initial state")
    }
}

/// Right-hand side evaluator with cached FFT plans and kernel multipliers.
pub struct HydroSolver {
    params: ModelParams,
    k_max: usize,
    grid: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    phi1: Vec<f64>,
    phi2: Vec<f64>,
    mats: Vec<ModeMatrix>,
    /// Sup-norm of the profiles seen at the last nonlinear evaluation.
    last_sup: f64,
}

impl std::fmt::Debug for HydroSolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HydroSolver")
            .field("params", &self.params)
            .field("k_max", &self.k_max)
            .field("grid", &self.grid)
            .finish()
    }
}

type Deriv = (Vec<Complex64>, Vec<Complex64>);

impl HydroSolver {
    /// Solver on `|k| <= k_max` with collocation grid `4 k_max`.
    pub fn new(params: ModelParams, k_max: usize) -> Result<Self> {
        Self::with_grid(params, k_max, 4 * k_max)
    }

    pub fn with_grid(params: ModelParams, k_max: usize, grid: usize) -> Result<Self> {
        params.validate()?;
        if k_max == 0 {
            return Err(Error::param("k_max", "must be >= 1"));
        }
        if grid < 4 * k_max {
            return Err(Error::param("grid", format!("must be >= 4 k_max = {}, got {grid}", 4 * k_max)));
        }
        let mut planner = FftPlanner::new();
        let km = k_max as i64;
        Ok(HydroSolver {
            params,
            k_max,
            grid,
            fwd: planner.plan_fft_forward(grid),
            inv: planner.plan_fft_inverse(grid),
            phi1: (-km..=km).map(|k| kernel_fourier(k, params.tau1)).collect(),
            phi2: (-km..=km).map(|k| kernel_fourier(k, params.tau2)).collect(),
            mats: (-km..=km).map(|k| ModeMatrix::new(&params, k)).collect(),
            last_sup: 0.0,
        })
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    fn check(&self, s: &SpectralState) -> Result<()> {
        let len = 2 * self.k_max + 1;
        if s.k_max != self.k_max || s.u1.len() != len || s.u2.len() != len {
            return Err(Error::Shape {
                expected: len,
                got: s.u1.len().min(s.u2.len()),
            });
        }
        Ok(())
    }

    pub fn rhs_linear(&self, s: &SpectralState) -> Deriv {
        let mut d1 = Vec::with_capacity(s.u1.len());
        let mut d2 = Vec::with_capacity(s.u1.len());
        for (i, m) in self.mats.iter().enumerate() {
            let [a, b] = m.apply([s.u1[i], s.u2[i]]);
            d1.push(a);
            d2.push(b);
        }
        (d1, d2)
    }

    fn to_grid(&self, coeffs: &[Complex64], mult: Option<&[f64]>) -> Vec<Complex64> {
        let m = self.grid;
        let km = self.k_max as i64;
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for (i, c) in coeffs.iter().enumerate() {
            let k = i as i64 - km;
            let w = mult.map_or(1.0, |p| p[i]);
            buf[k.rem_euclid(m as i64) as usize] = c * w;
        }
        self.inv.process(&mut buf);
        buf
    }

    fn from_grid(&self, vals: Vec<f64>) -> Vec<Complex64> {
        let m = self.grid;
        let km = self.k_max as i64;
        let mut buf: Vec<Complex64> = vals.into_iter().map(|v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let inv_m = 1.0 / m as f64;
        (-km..=km)
            .map(|k| buf[k.rem_euclid(m as i64) as usize] * inv_m)
            .collect()
    }

    pub fn rhs_nonlinear(&mut self, s: &SpectralState) -> Deriv {
        self.rhs_grid(s, false)
    }

    fn rhs_grid(&mut self, s: &SpectralState, linearized: bool) -> Deriv {
        let p = self.params;
        let u1 = self.to_grid(&s.u1, None);
        let u2 = self.to_grid(&s.u2, None);
        let a1 = self.to_grid(&s.u1, Some(&self.phi1));
        let a2 = self.to_grid(&s.u2, Some(&self.phi2));
        let (bl1, bl2) = (p.beta1 * p.lambda, p.beta2 * p.lambda);
        let (al1, al2) = (p.alpha1(), p.alpha2());
        let (c1, c2) = (p.coupling1(), p.coupling2());
        let m = self.grid;
        let mut f1 = Vec::with_capacity(m);
        let mut f2 = Vec::with_capacity(m);
        let mut sup: f64 = 0.0;
        for n in 0..m {
            let (v1, v2) = (u1[n].re, u2[n].re);
            let (x1, x2) = (a1[n].re, a2[n].re);
            sup = sup.max(v1.abs()).max(v2.abs());
            if linearized {
                f1.push(-v1 + al1 * x1 + c1 * v2);
                f2.push(-v2 + al2 * x2 - c2 * v1);
            } else {
                let (tp, tm) = ((p.beta1 * x1 + bl1).tanh(), (p.beta1 * x1 - bl1).tanh());
                let (gp, gm) = ((p.beta2 * x2 + bl2).tanh(), (p.beta2 * x2 - bl2).tanh());
                f1.push(-v1 + 0.5 * (tp + tm) + 0.5 * v2 * (tp - tm));
                f2.push(-v2 + 0.5 * (gp + gm) - 0.5 * v1 * (gp - gm));
            }
        }
        self.last_sup = sup;
        (self.from_grid(f1), self.from_grid(f2))
    }

    fn rhs(&mut self, s: &SpectralState, dynamics: HydroDynamics) -> Deriv {
        match dynamics {
            HydroDynamics::Linear => self.rhs_linear(s),
            HydroDynamics::Nonlinear => self.rhs_grid(s, false),
            HydroDynamics::LinearizedGrid => self.rhs_grid(s, true),
        }
    }

    fn rk4_step(&mut self, s: &SpectralState, h: f64, dynamics: HydroDynamics) -> SpectralState {
        let k1 = self.rhs(s, dynamics);
        let k2 = self.rhs(&s.axpy(0.5 * h, &k1), dynamics);
        let k3 = self.rhs(&s.axpy(0.5 * h, &k2), dynamics);
        let k4 = self.rhs(&s.axpy(h, &k3), dynamics);
        let combine = |a: &[Complex64], b: &[Complex64], c: &[Complex64], d: &[Complex64], u: &[Complex64]| {
            u.iter()
                .enumerate()
                .map(|(i, x)| x + (a[i] + b[i] * 2.0 + c[i] * 2.0 + d[i]) * (h / 6.0))
                .collect::<Vec<_>>()
        };
        SpectralState {
            k_max: s.k_max,
            time: s.time + h,
            u1: combine(&k1.0, &k2.0, &k3.0, &k4.0, &s.u1),
            u2: combine(&k1.1, &k2.1, &k3.1, &k4.1, &s.u2),
        }
    }

    /// Fixed-step RK4 from `state.time` to `t_end`, keeping every `stride`-th step
    /// plus the endpoints. The last step is shortened to land on `t_end`.
    pub fn integrate(
        &mut self,
        state: &SpectralState,
        t_end: f64,
        dt: f64,
        dynamics: HydroDynamics,
        stride: usize,
    ) -> Result<Trajectory> {
        self.check(state)?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::param("dt", format!("must be > 0, got {dt}")));
        }
        if !(t_end.is_finite() && t_end >= state.time) {
            return Err(Error::param("t_end", format!("must be >= start time {}, got {t_end}", state.time)));
        }
        let stride = stride.max(1);
        let span = t_end - state.time;
        let steps = ((span / dt) - 1e-9).ceil().max(0.0) as usize;
        let mut cur = state.clone();
        let mut out = vec![cur.clone()];
        for n in 0..steps {
            let h = if n + 1 == steps { t_end - cur.time } else { dt };
            let next = self.rk4_step(&cur, h, dynamics);
            let finite = next.u1.iter().chain(&next.u2).all(|c| c.re.is_finite() && c.im.is_finite());
            if !finite {
                return Err(Error::Integration {
                    time: next.time,
                    reason: "non-finite coefficients".into(),
                });
            }
            if dynamics == HydroDynamics::Nonlinear && self.last_sup > BLOWUP_BOUND {
                return Err(Error::Integration {
                    time: cur.time,
                    reason: format!("sup-norm {} exceeds {BLOWUP_BOUND}", self.last_sup),
                });
            }
            cur = next;
            if (n + 1) % stride == 0 || n + 1 == steps {
                out.push(cur.clone());
            }
        }
        Ok(Trajectory { states: out })
    }
}

pub fn rhs_linear(state: &SpectralState, params: &ModelParams) -> Result<Deriv> {
    let solver = HydroSolver::new(*params, state.k_max)?;
    solver.check(state)?;
    Ok(solver.rhs_linear(state))
}

pub fn rhs_nonlinear(state: &SpectralState, params: &ModelParams) -> Result<Deriv> {
    let mut solver = HydroSolver::new(*params, state.k_max)?;
    solver.check(state)?;
    Ok(solver.rhs_nonlinear(state))
}

pub fn integrate(
    state: &SpectralState,
    params: &ModelParams,
    t_end: f64,
    dt: f64,
    dynamics: HydroDynamics,
    stride: usize,
) -> Result<Trajectory> {
    HydroSolver::new(*params, state.k_max)?.integrate(state, t_end, dt, dynamics, stride)
}

/// Norm window inside which the growth fit is taken.
pub const FIT_WINDOW: (f64, f64) = (1e-8, 1e-2);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthFit {
    pub k: i64,
    pub exponent: f64,
    pub intercept: f64,
    pub points: usize,
}

/// Least-squares slope of `log ||(u1(k), u2(k))||` against time over samples
/// whose norm lies in [`FIT_WINDOW`].
pub fn fit_growth_exponent(traj: &Trajectory, k: i64) -> Result<GrowthFit> {
    let pts: Vec<(f64, f64)> = traj
        .states
        .iter()
        .filter_map(|s| s.mode_norm(k).map(|n| (s.time, n)))
        .filter(|&(_, n)| n >= FIT_WINDOW.0 && n <= FIT_WINDOW.1)
        .map(|(t, n)| (t, n.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!(
            "mode {k}: {} samples inside the norm window",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt) * (p.0 - mt)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Fit(format!("mode {k}: samples share one time")));
    }
    let slope = sxy / sxx;
    Ok(GrowthFit {
        k,
        exponent: slope,
        intercept: my - slope * mt,
        points: pts.len(),
    })
}

/// State with mode `+-k` set along the leading eigenvector of `A^(k)`, scaled to norm `amplitude`.
pub fn eigen_aligned_state(params: &ModelParams, k_max: usize, k: i64, amplitude: f64) -> Result<SpectralState> {
    let s = ModeMatrix::new(params, k).spectrum();
    let v = s
        .v1
        .ok_or_else(|| Error::Domain(format!("mode {k} has a defective matrix")))?;
    if v[0].im != 0.0 || v[1].im != 0.0 {
        return Err(Error::Domain(format!("mode {k} has complex eigenvalues")));
    }
    let mut st = SpectralState::zeros(k_max);
    st.set_mode(k, [v[0] * amplitude, v[1] * amplitude])?;
    Ok(st)
}
