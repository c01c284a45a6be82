//! Two-line Glauber dynamics on the discrete torus, simulated exactly by
//! uniformization at total clock rate `2N`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{discrete_convolution, mode_index, twiddle_table, KernelTable, LatticeSpec, ModelParams};
use crate::rng::{master_rng, SimRng};

/// Cached fields and tracked modes are recomputed from scratch after this many accepted flips.
pub const RESYNC_INTERVAL: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Line {
    First,
    Second,
}

impl Line {
    pub const BOTH: [Line; 2] = [Line::First, Line::Second];

    pub fn index(self) -> usize {
        match self {
            Line::First => 0,
            Line::Second => 1,
        }
    }

    pub fn other(self) -> Line {
        match self {
            Line::First => Line::Second,
            Line::Second => Line::First,
        }
    }
}

/// Glauber rate `e^{-s u} / (2 cosh u)` for spin `s` in local field `u`.
#[inline]
pub fn glauber_rate(spin: f64, u: f64) -> f64 {
    1.0 / (1.0 + (2.0 * spin * u).exp())
}

/// How a flip propagates into the cached fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldUpdate {
    /// Every site is updated.
    Full,
    /// Only sites where the kernel exceeds `1e-12` of its peak are updated.
    Windowed,
}

/// Immutable per-run data shared by all replicas.
#[derive(Debug, Clone)]
pub struct Dynamics {
    params: ModelParams,
    lattice: LatticeSpec,
    kernels: [KernelTable; 2],
    /// `2 gamma phi(0, j gamma)`, the field change caused by one flip.
    flip_kernels: [Vec<f64>; 2],
    halfwidths: [usize; 2],
    twiddle: Vec<Complex64>,
}

#[derive(Debug, Clone)]
pub struct SpinState {
    lines: [Vec<i8>; 2],
    fields: [Vec<f64>; 2],
    tracked: Vec<i64>,
    modes: Vec<[Complex64; 2]>,
    time: f64,
    rng: SimRng,
    proposals: u64,
    accepted: [u64; 2],
    since_resync: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub time: f64,
    pub modes: Vec<ModeSample>,
    /// `gamma sum_x sigma1(x) sigma2(x)`
    pub pairing: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSample {
    pub k: i64,
    pub x1: Complex64,
    pub x2: Complex64,
}

impl Observation {
    pub fn mode(&self, k: i64) -> Option<&ModeSample> {
        self.modes.iter().find(|m| m.k == k)
    }
}

/// Hooks called around every accepted flip.
pub trait FlipObserver {
    fn before_flip(&mut self, _dynamics: &Dynamics, _state: &SpinState, _line: Line, _site: usize) {}
    fn after_flip(&mut self, _dynamics: &Dynamics, _state: &SpinState) {}
}

impl FlipObserver for () {}

impl Dynamics {
    pub fn new(params: ModelParams, lattice: LatticeSpec) -> Result<Self> {
        Self::with_update(params, lattice, FieldUpdate::Full)
    }

    pub fn with_update(params: ModelParams, lattice: LatticeSpec, update: FieldUpdate) -> Result<Self> {
        params.validate()?;
        let k1 = KernelTable::new(params.tau1, lattice)?;
        let k2 = KernelTable::new(params.tau2, lattice)?;
        let n = lattice.n_sites;
        let scale = 2.0 * lattice.gamma();
        let fk = |k: &KernelTable| k.values().iter().map(|v| scale * v).collect::<Vec<f64>>();
        let hw = |k: &KernelTable| match update {
            FieldUpdate::Full => n,
            FieldUpdate::Windowed => {
                let w = k.support_halfwidth(1e-12);
                if 2 * w + 1 >= n {
                    n
                } else {
                    w
                }
            }
        };
        Ok(Dynamics {
            params,
            lattice,
            flip_kernels: [fk(&k1), fk(&k2)],
            halfwidths: [hw(&k1), hw(&k2)],
            kernels: [k1, k2],
            twiddle: twiddle_table(n),
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.lattice
    }

    pub fn kernel(&self, line: Line) -> &KernelTable {
        &self.kernels[line.index()]
    }

    pub fn init_random(&self, seed: u64, tracked: &[i64]) -> SpinState {
        self.init_with_rng(master_rng(seed), tracked)
    }

    /// Independent fair spins on both lines, drawn from `rng` which then drives the dynamics.
    pub fn init_with_rng(&self, mut rng: SimRng, tracked: &[i64]) -> SpinState {
        let n = self.lattice.n_sites;
        let draw = |rng: &mut SimRng| -> Vec<i8> {
            let mut v = Vec::with_capacity(n);
            while v.len() < n {
                let bits: u64 = rng.gen();
                for b in 0..64.min(n - v.len()) {
                    v.push(if (bits >> b) & 1 == 1 { 1 } else { -1 });
                }
            }
            v
        };
        let l1 = draw(&mut rng);
        let l2 = draw(&mut rng);
        self.build_state(l1, l2, rng, tracked)
            .expect("generated lines have lattice length")
    }

    pub fn from_spins(&self, line1: Vec<i8>, line2: Vec<i8>, seed: u64, tracked: &[i64]) -> Result<SpinState> {
        for l in [&line1, &line2] {
            if l.iter().any(|&s| s != 1 && s != -1) {
                return Err(Error::Domain("spins must be +1 or -1".into()));
            }
        }
        self.build_state(line1, line2, master_rng(seed), tracked)
    }

    fn build_state(&self, l1: Vec<i8>, l2: Vec<i8>, rng: SimRng, tracked: &[i64]) -> Result<SpinState> {
        let n = self.lattice.n_sites;
        for l in [&l1, &l2] {
            if l.len() != n {
                return Err(Error::Shape {
                    expected: n,
                    got: l.len(),
                });
            }
        }
        let mut st = SpinState {
            lines: [l1, l2],
            fields: [Vec::new(), Vec::new()],
            tracked: tracked.to_vec(),
            modes: vec![[Complex64::new(0.0, 0.0); 2]; tracked.len()],
            time: 0.0,
            rng,
            proposals: 0,
            accepted: [0, 0],
            since_resync: 0,
        };
        self.resync(&mut st);
        Ok(st)
    }

    /// Recomputes the cached fields and tracked modes from the spins.
    pub fn resync(&self, st: &mut SpinState) {
        for line in Line::BOTH {
            let i = line.index();
            st.fields[i] = discrete_convolution(&st.lines[i], &self.kernels[i])
                .expect("state lines have lattice length");
        }
        for (j, &k) in st.tracked.iter().enumerate() {
            st.modes[j] = [self.mode_from_scratch(&st.lines[0], k), self.mode_from_scratch(&st.lines[1], k)];
        }
        st.since_resync = 0;
    }

    fn mode_from_scratch(&self, line: &[i8], k: i64) -> Complex64 {
        let n = self.lattice.n_sites;
        let mut s = Complex64::new(0.0, 0.0);
        for (x, &sx) in line.iter().enumerate() {
            let t = self.twiddle[mode_index(k, x, n)];
            if sx > 0 {
                s += t;
            } else {
                s -= t;
            }
        }
        s / n as f64
    }

    /// Argument `u` of the Glauber rate at site `x` of `line`.
    #[inline]
    pub fn local_field(&self, st: &SpinState, line: Line, x: usize) -> f64 {
        let p = &self.params;
        match line {
            Line::First => p.beta1 * (st.fields[0][x] + p.lambda * st.lines[1][x] as f64),
            Line::Second => p.beta2 * (st.fields[1][x] - p.lambda * st.lines[0][x] as f64),
        }
    }

    #[inline]
    pub fn flip_rate(&self, st: &SpinState, line: Line, x: usize) -> f64 {
        glauber_rate(st.lines[line.index()][x] as f64, self.local_field(st, line, x))
    }

    /// Rate at the same local field with the spin at `x` reversed.
    pub fn reversed_rate(&self, st: &SpinState, line: Line, x: usize) -> f64 {
        glauber_rate(-(st.lines[line.index()][x] as f64), self.local_field(st, line, x))
    }

    /// Flips one spin and updates the cached field and tracked modes.
    pub fn apply_flip(&self, st: &mut SpinState, line: Line, x: usize) {
        let i = line.index();
        let n = self.lattice.n_sites;
        let s_new = -st.lines[i][x];
        st.lines[i][x] = s_new;
        let s = s_new as f64;
        let kern = &self.flip_kernels[i];
        let field = &mut st.fields[i];
        let w = self.halfwidths[i];
        if w >= n {
            add_runs(field, kern, x, 0, n, s);
        } else {
            add_runs(field, kern, (x + n - w) % n, (n - w) % n, 2 * w + 1, s);
        }
        let g2 = 2.0 * s / n as f64;
        for (j, &k) in st.tracked.iter().enumerate() {
            st.modes[j][i] += self.twiddle[mode_index(k, x, n)] * g2;
        }
        st.accepted[i] += 1;
        st.since_resync += 1;
        if st.since_resync >= RESYNC_INTERVAL {
            self.resync(st);
        }
    }

    pub fn advance(&self, st: &mut SpinState, t_target: f64) -> Result<()> {
        self.advance_with(st, t_target, &mut ())
    }

    /// Runs the chain up to `t_target`, reporting accepted flips to `obs`.
    pub fn advance_with<O: FlipObserver>(&self, st: &mut SpinState, t_target: f64, obs: &mut O) -> Result<()> {
        if !t_target.is_finite() {
            return Err(Error::Domain(format!("target time must be finite, got {t_target}")));
        }
        if t_target < st.time {
            return Err(Error::Domain(format!(
                "target time {t_target} precedes current time {}",
                st.time
            )));
        }
        if t_target == st.time {
            return Ok(());
        }
        let n = self.lattice.n_sites;
        let clock = Exp::new(2.0 * n as f64).expect("positive rate");
        let total = 2 * n;
        loop {
            let dt: f64 = clock.sample(&mut st.rng);
            if st.time + dt > t_target {
                st.time = t_target;
                return Ok(());
            }
            st.time += dt;
            st.proposals += 1;
            let pick = st.rng.gen_range(0..total);
            let (line, x) = if pick < n { (Line::First, pick) } else { (Line::Second, pick - n) };
            let rate = self.flip_rate(st, line, x);
            if st.rng.gen::<f64>() < rate {
                obs.before_flip(self, st, line, x);
                self.apply_flip(st, line, x);
                obs.after_flip(self, st);
            }
        }
    }

    /// Mode amplitudes for `ks`; tracked modes are read from the cache.
    pub fn observe(&self, st: &SpinState, ks: &[i64]) -> Observation {
        let modes = ks
            .iter()
            .map(|&k| {
                let [x1, x2] = match st.tracked.iter().position(|&t| t == k) {
                    Some(j) => st.modes[j],
                    None => [self.mode_from_scratch(&st.lines[0], k), self.mode_from_scratch(&st.lines[1], k)],
                };
                ModeSample { k, x1, x2 }
            })
            .collect();
        let pairing = st.lines[0]
            .iter()
            .zip(&st.lines[1])
            .map(|(&a, &b)| (a * b) as f64)
            .sum::<f64>()
            / self.lattice.n_sites as f64;
        Observation {
            time: st.time,
            modes,
            pairing,
        }
    }
}

impl SpinState {
    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn line(&self, line: Line) -> &[i8] {
        &self.lines[line.index()]
    }

    pub fn field(&self, line: Line) -> &[f64] {
        &self.fields[line.index()]
    }

    pub fn tracked(&self) -> &[i64] {
        &self.tracked
    }

    pub fn proposals(&self) -> u64 {
        self.proposals
    }

    pub fn accepted(&self, line: Line) -> u64 {
        self.accepted[line.index()]
    }

    pub fn acceptance_ratio(&self) -> f64 {
        if self.proposals == 0 {
            0.0
        } else {
            (self.accepted[0] + self.accepted[1]) as f64 / self.proposals as f64
        }
    }

    /// Index of the configuration in `0..4^N`, line 1 in the low bits.
    pub fn config_index(&self) -> u64 {
        let n = self.lines[0].len();
        let mut idx = 0u64;
        for (i, line) in self.lines.iter().enumerate() {
            for (x, &s) in line.iter().enumerate() {
                if s > 0 {
                    idx |= 1 << (i * n + x);
                }
            }
        }
        idx
    }
}

/// Adds `s * kern[j..]` to `field[y..]` for `len` entries, both indices wrapping mod `N`.
fn add_runs(field: &mut [f64], kern: &[f64], mut y: usize, mut j: usize, mut len: usize, s: f64) {
    let n = field.len();
    while len > 0 {
        let run = len.min(n - y).min(n - j);
        for (f, k) in field[y..y + run].iter_mut().zip(&kern[j..j + run]) {
            *f += s * k;
        }
        y = (y + run) % n;
        j = (j + run) % n;
        len -= run;
    }
}

/// `<sigma, G> = gamma sum_x sigma(x) G(gamma x)` for `G(r) = a_re cos(2 pi r) + a_im sin(2 pi r)`.
pub fn pair_with_wave(line: &[i8], a_re: f64, a_im: f64) -> f64 {
    let n = line.len() as f64;
    line.iter()
        .enumerate()
        .map(|(x, &s)| {
            let r = 2.0 * PI * x as f64 / n;
            s as f64 * (a_re * r.cos() + a_im * r.sin())
        })
        .sum::<f64>()
        / n
}
