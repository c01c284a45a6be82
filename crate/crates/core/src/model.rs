//! Model parameters, the periodized Gaussian kernel, lattice convolution and
//! discrete Fourier modes on the unit torus.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tail mass tolerance used when truncating the image sum of the periodized kernel.
pub const IMAGE_TAIL_TOL: f64 = 1e-12;

/// Lattice size from which [`discrete_convolution`] switches to the FFT path.
pub const FFT_THRESHOLD: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub beta1: f64,
    pub beta2: f64,
    pub tau1: f64,
    pub tau2: f64,
    pub lambda: f64,
}

pub fn alpha(beta: f64, lambda: f64) -> f64 {
    let c = (lambda * beta).cosh();
    beta / (c * c)
}

/// `2 pi^2 tau`, the decay rate of the kernel's Fourier coefficients in `k^2`.
pub fn scaled_tau(tau: f64) -> f64 {
    2.0 * PI * PI * tau
}

impl ModelParams {
    pub fn new(beta1: f64, beta2: f64, tau1: f64, tau2: f64, lambda: f64) -> Result<Self> {
        let p = ModelParams {
            beta1,
            beta2,
            tau1,
            tau2,
            lambda,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(&'static str, f64, bool); 5] = [
            ("beta1", self.beta1, false),
            ("beta2", self.beta2, false),
            ("tau1", self.tau1, false),
            ("tau2", self.tau2, false),
            ("lambda", self.lambda, true),
        ];
        for (name, v, allow_zero) in checks {
            if !v.is_finite() {
                return Err(Error::param(name, format!("must be finite, got {v}")));
            }
            if v < 0.0 || (!allow_zero && v == 0.0) {
                let bound = if allow_zero { ">= 0" } else { "> 0" };
                return Err(Error::param(name, format!("must be {bound}, got {v}")));
            }
        }
        Ok(())
    }

    pub fn alpha1(&self) -> f64 {
        alpha(self.beta1, self.lambda)
    }

    pub fn alpha2(&self) -> f64 {
        alpha(self.beta2, self.lambda)
    }

    /// `tanh(beta1 lambda)`, the off-diagonal entry of the first row of every mode matrix.
    pub fn coupling1(&self) -> f64 {
        (self.beta1 * self.lambda).tanh()
    }

    pub fn coupling2(&self) -> f64 {
        (self.beta2 * self.lambda).tanh()
    }

    pub fn scaled_tau1(&self) -> f64 {
        scaled_tau(self.tau1)
    }

    pub fn scaled_tau2(&self) -> f64 {
        scaled_tau(self.tau2)
    }

    /// Parameters of the system seen after exchanging the lines and reversing the
    /// spins of the new second line. That map sends the dynamics onto itself.
    pub fn swapped(&self) -> Self {
        ModelParams {
            beta1: self.beta2,
            beta2: self.beta1,
            tau1: self.tau2,
            tau2: self.tau1,
            lambda: self.lambda,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub n_sites: usize,
}

impl LatticeSpec {
    pub fn new(n_sites: usize) -> Result<Self> {
        if n_sites < 2 {
            return Err(Error::param("n_sites", format!("must be >= 2, got {n_sites}")));
        }
        Ok(LatticeSpec { n_sites })
    }

    /// Lattice with spacing `gamma`; `1/gamma` must be an integer.
    pub fn from_gamma(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::param("gamma", format!("must be positive, got {gamma}")));
        }
        let n = (1.0 / gamma).round();
        if (n * gamma - 1.0).abs() > 1e-9 {
            return Err(Error::param("gamma", format!("1/gamma must be an integer, got {}", 1.0 / gamma)));
        }
        Self::new(n as usize)
    }

    pub fn gamma(&self) -> f64 {
        1.0 / self.n_sites as f64
    }
}

/// Number of images per side needed so that the omitted part of the image sum is
/// below [`IMAGE_TAIL_TOL`] for every separation in `[0, 1/2]`.
pub fn image_cutoff(tau: f64) -> usize {
    let norm = (2.0 * PI * tau).sqrt();
    let mut a = 1usize;
    loop {
        // omitted images sit at distance >= a - 1/2
        let d = a as f64 - 0.5;
        let first = (-d * d / (2.0 * tau)).exp() / norm;
        let ratio = (-d / tau).exp();
        let tail = 2.0 * first / (1.0 - ratio).max(f64::MIN_POSITIVE);
        if tail < IMAGE_TAIL_TOL || a > 10_000 {
            return a;
        }
        a += 1;
    }
}

fn circle_distance(r: f64, rp: f64) -> f64 {
    // |r - rp| first so the result is bitwise symmetric
    let d = (r - rp).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

fn gaussian_images(d: f64, tau: f64, cutoff: usize) -> f64 {
    let norm = (2.0 * PI * tau).sqrt();
    let mut s = (-d * d / (2.0 * tau)).exp();
    for a in 1..=cutoff {
        let a = a as f64;
        let p = d + a;
        let m = d - a;
        s += (-p * p / (2.0 * tau)).exp() + (-m * m / (2.0 * tau)).exp();
    }
    s / norm
}

/// Heat kernel on the unit circle at time `tau`, summed over periodic images.
pub fn periodized_gaussian(r: f64, rp: f64, tau: f64) -> Result<f64> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::param("tau", format!("must be > 0, got {tau}")));
    }
    if !(r.is_finite() && rp.is_finite()) {
        return Err(Error::Domain(format!("non-finite position ({r}, {rp})")));
    }
    Ok(gaussian_images(circle_distance(r, rp), tau, image_cutoff(tau)))
}

pub fn kernel_fourier(k: i64, tau: f64) -> f64 {
    let k = k as f64;
    (-scaled_tau(tau) * k * k).exp()
}

/// Kernel values `phi(0, j gamma)` for `j = 0..N`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    tau: f64,
    lattice: LatticeSpec,
    values: Vec<f64>,
    cutoff: usize,
}

impl KernelTable {
    pub fn new(tau: f64, lattice: LatticeSpec) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::param("tau", format!("must be > 0, got {tau}")));
        }
        let n = lattice.n_sites;
        let cutoff = image_cutoff(tau);
        let values = (0..n)
            .map(|j| {
                let d = j.min(n - j) as f64 / n as f64;
                gaussian_images(d, tau, cutoff)
            })
            .collect();
        Ok(KernelTable {
            tau,
            lattice,
            values,
            cutoff,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lattice(&self) -> LatticeSpec {
        self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn image_cutoff(&self) -> usize {
        self.cutoff
    }

    /// Riemann sum `gamma * sum_j phi(0, j gamma)`. Close to one whenever the kernel
    /// is resolved by the lattice, i.e. `exp(-2 pi^2 tau N^2)` is negligible.
    pub fn mass(&self) -> f64 {
        self.lattice.gamma() * self.values.iter().sum::<f64>()
    }

    /// Smallest half-width `w` such that all entries at circular distance `> w`
    /// are below `rel_tol` times the peak.
    pub fn support_halfwidth(&self, rel_tol: f64) -> usize {
        let n = self.lattice.n_sites;
        let peak = self.values[0];
        let half = n / 2;
        (0..=half)
            .rev()
            .find(|&j| self.values[j] > rel_tol * peak)
            .unwrap_or(0)
    }
}

fn check_len(line: &[i8], kernel: &KernelTable) -> Result<()> {
    let n = kernel.lattice.n_sites;
    if line.len() != n {
        return Err(Error::Shape {
            expected: n,
            got: line.len(),
        });
    }
    Ok(())
}

/// `(sigma * phi)(x) = gamma sum_y sigma(y) phi(gamma x, gamma y)`, self term included.
pub fn discrete_convolution(line: &[i8], kernel: &KernelTable) -> Result<Vec<f64>> {
    if kernel.lattice.n_sites >= FFT_THRESHOLD {
        convolve_fft(line, kernel)
    } else {
        convolve_direct(line, kernel)
    }
}

pub fn convolve_direct(line: &[i8], kernel: &KernelTable) -> Result<Vec<f64>> {
    check_len(line, kernel)?;
    let n = line.len();
    let g = kernel.lattice.gamma();
    let v = &kernel.values;
    Ok((0..n)
        .map(|x| {
            let mut s = 0.0;
            for (y, &sy) in line.iter().enumerate() {
                s += sy as f64 * v[(x + n - y) % n];
            }
            g * s
        })
        .collect())
}

pub fn convolve_fft(line: &[i8], kernel: &KernelTable) -> Result<Vec<f64>> {
    check_len(line, kernel)?;
    let n = line.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex64> = line.iter().map(|&s| Complex64::new(s as f64, 0.0)).collect();
    let mut b: Vec<Complex64> = kernel.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    let scale = kernel.lattice.gamma() / n as f64;
    Ok(a.iter().map(|c| c.re * scale).collect())
}

/// `e^{-2 pi i j / N}` for `j = 0..N`.
pub fn twiddle_table(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|j| Complex64::from_polar(1.0, -2.0 * PI * j as f64 / n as f64))
        .collect()
}

pub(crate) fn mode_index(k: i64, x: usize, n: usize) -> usize {
    let kr = k.rem_euclid(n as i64) as u128;
    ((kr * x as u128) % n as u128) as usize
}

/// `X^(k) = gamma sum_x sigma(x) e^{-2 pi i k gamma x}`.
pub fn discrete_fourier_mode(line: &[i8], k: i64) -> Complex64 {
    let n = line.len();
    if n == 0 {
        return Complex64::new(0.0, 0.0);
    }
    let mut s = Complex64::new(0.0, 0.0);
    for (x, &sx) in line.iter().enumerate() {
        let j = mode_index(k, x, n);
        s += Complex64::from_polar(sx as f64, -2.0 * PI * j as f64 / n as f64);
    }
    s / n as f64
}

/// All `N` modes at once via FFT, index `j` holding `X^(j)`.
pub fn all_fourier_modes(line: &[i8]) -> Vec<Complex64> {
    let n = line.len();
    let fft: Arc<dyn Fft<f64>> = FftPlanner::new().plan_fft_forward(n);
    let mut a: Vec<Complex64> = line.iter().map(|&s| Complex64::new(s as f64, 0.0)).collect();
    fft.process(&mut a);
    let g = 1.0 / n as f64;
    a.iter().map(|c| c * g).collect()
}
