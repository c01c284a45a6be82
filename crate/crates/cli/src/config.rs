//! Run configuration: JSON file, then `key.path=value` overrides, then validation.

use std::path::{Path, PathBuf};

use kac_turing::fluct::{BuiltinFn, Normalization, WaveCoefficients, DEFAULT_MODES};
use kac_turing::hydro::HydroDynamics;
use kac_turing::micro::FieldUpdate;
use kac_turing::ModelParams;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub params: Option<ModelParams>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub stability: StabilityOptions,
    #[serde(default)]
    pub construct: ConstructOptions,
    #[serde(default)]
    pub pde: PdeOptions,
    #[serde(default)]
    pub simulate: SimulateOptions,
    #[serde(default)]
    pub fluctuations: FluctuationOptions,
    #[serde(default)]
    pub critical: CriticalOptions,
    #[serde(default)]
    pub clt: CltOptions,
    #[serde(default)]
    pub compensator: CompensatorOptions,
}

fn default_seed() -> u64 {
    20_240_601
}

fn default_out() -> PathBuf {
    PathBuf::from("kacturing-out")
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityOptions {
    /// Scan `|k|` up to this bound instead of the analytic tail bound.
    pub scan_limit: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstructOptions {
    pub beta1: f64,
    pub beta2: f64,
    pub margin: f64,
}

impl Default for ConstructOptions {
    fn default() -> Self {
        ConstructOptions {
            beta1: 1.15,
            beta2: 0.84,
            margin: 0.02,
        }
    }
}

/// Initial Fourier coefficient of mode `k` (its conjugate partner is implied).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeInit {
    pub k: i64,
    pub u1_re: f64,
    pub u1_im: f64,
    pub u2_re: f64,
    pub u2_im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdeOptions {
    pub k_max: usize,
    pub grid: Option<usize>,
    pub dt: f64,
    pub t_end: f64,
    pub dynamics: HydroDynamics,
    pub stride: usize,
    pub modes: Vec<ModeInit>,
}

impl Default for PdeOptions {
    fn default() -> Self {
        PdeOptions {
            k_max: 32,
            grid: None,
            dt: 1e-3,
            t_end: 10.0,
            dynamics: HydroDynamics::Nonlinear,
            stride: 100,
            modes: vec![ModeInit {
                k: 1,
                u1_re: 1e-4,
                ..Default::default()
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateOptions {
    pub n_sites: usize,
    pub t_end: f64,
    pub sample_dt: f64,
    pub modes: Vec<i64>,
    pub field_update: FieldUpdate,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        SimulateOptions {
            n_sites: 1024,
            t_end: 1.0,
            sample_dt: 0.1,
            modes: DEFAULT_MODES.to_vec(),
            field_update: FieldUpdate::Full,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FluctuationOptions {
    pub n_sites: usize,
    pub thetas: Vec<f64>,
    pub replicas: usize,
    pub modes: Vec<i64>,
    pub normalization: Normalization,
}

impl Default for FluctuationOptions {
    fn default() -> Self {
        FluctuationOptions {
            n_sites: 4096,
            thetas: vec![0.5],
            replicas: 400,
            modes: DEFAULT_MODES.to_vec(),
            normalization: Normalization::Lattice,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalOptions {
    pub n_sites: usize,
    pub deltas: Vec<f64>,
    pub replicas: usize,
}

impl Default for CriticalOptions {
    fn default() -> Self {
        CriticalOptions {
            n_sites: 4096,
            deltas: vec![0.05, 0.1, 0.2],
            replicas: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CltOptions {
    pub function: BuiltinFn,
    pub n: usize,
    pub replicas: usize,
}

impl Default for CltOptions {
    fn default() -> Self {
        CltOptions {
            function: BuiltinFn::Cos,
            n: 10_000,
            replicas: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompensatorOptions {
    pub n_sites: usize,
    pub t: f64,
    pub coefficients: WaveCoefficients,
    pub replicas: usize,
    pub normalization: Normalization,
}

impl Default for CompensatorOptions {
    fn default() -> Self {
        CompensatorOptions {
            n_sites: 2048,
            t: 1.0,
            coefficients: WaveCoefficients {
                a1_re: 1.0,
                ..Default::default()
            },
            replicas: 500,
            normalization: Normalization::Lattice,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: None,
            seed: default_seed(),
            threads: None,
            out: default_out(),
            stability: Default::default(),
            construct: Default::default(),
            pde: Default::default(),
            simulate: Default::default(),
            fluctuations: Default::default(),
            critical: Default::default(),
            clt: Default::default(),
            compensator: Default::default(),
        }
    }
}

fn bad(path: &str, reason: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.to_string(),
        reason: reason.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(bad(path, format!("must be finite and > 0, got {v}")))
    }
}

fn at_least(path: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(bad(path, format!("must be >= {min}, got {v}")))
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if let Some(p) = &self.params {
            p.validate().map_err(|e| match e {
                kac_turing::Error::Parameter { name, reason } => bad(&format!("params.{name}"), reason),
                other => bad("params", other.to_string()),
            })?;
        }
        if let Some(t) = self.threads {
            at_least("threads", t, 1)?;
        }
        positive("construct.beta1", self.construct.beta1)?;
        positive("construct.beta2", self.construct.beta2)?;
        if !(self.construct.margin.is_finite() && self.construct.margin >= 0.0 && self.construct.margin < 1.0) {
            return Err(bad("construct.margin", format!("must lie in [0, 1), got {}", self.construct.margin)));
        }
        let pde = &self.pde;
        at_least("pde.k_max", pde.k_max, 1)?;
        if let Some(g) = pde.grid {
            at_least("pde.grid", g, 4 * pde.k_max)?;
        }
        positive("pde.dt", pde.dt)?;
        if !(pde.t_end.is_finite() && pde.t_end >= 0.0) {
            return Err(bad("pde.t_end", format!("must be >= 0, got {}", pde.t_end)));
        }
        at_least("pde.stride", pde.stride, 1)?;
        for (i, m) in pde.modes.iter().enumerate() {
            if m.k.unsigned_abs() as usize > pde.k_max {
                return Err(bad(&format!("pde.modes[{i}].k"), format!("|k| must be <= k_max = {}", pde.k_max)));
            }
        }
        let sim = &self.simulate;
        at_least("simulate.n_sites", sim.n_sites, 2)?;
        positive("simulate.t_end", sim.t_end)?;
        positive("simulate.sample_dt", sim.sample_dt)?;
        let fl = &self.fluctuations;
        at_least("fluctuations.n_sites", fl.n_sites, 2)?;
        at_least("fluctuations.replicas", fl.replicas, 2)?;
        for (i, &t) in fl.thetas.iter().enumerate() {
            if !(0.0..=1.0).contains(&t) {
                return Err(bad(&format!("fluctuations.thetas[{i}]"), format!("must lie in [0, 1], got {t}")));
            }
        }
        let cr = &self.critical;
        at_least("critical.n_sites", cr.n_sites, 2)?;
        at_least("critical.replicas", cr.replicas, 1)?;
        for (i, &d) in cr.deltas.iter().enumerate() {
            if !(d > 0.0 && d < 1.0) {
                return Err(bad(&format!("critical.deltas[{i}]"), format!("must lie in (0, 1), got {d}")));
            }
        }
        at_least("clt.n", self.clt.n, 1)?;
        at_least("clt.replicas", self.clt.replicas, 2)?;
        let co = &self.compensator;
        at_least("compensator.n_sites", co.n_sites, 2)?;
        at_least("compensator.replicas", co.replicas, 2)?;
        if !(co.t.is_finite() && co.t >= 0.0) {
            return Err(bad("compensator.t", format!("must be >= 0, got {}", co.t)));
        }
        Ok(())
    }

    pub fn require_params(&self) -> Result<ModelParams, CliError> {
        self.params.ok_or_else(|| bad("params", "required by this subcommand"))
    }
}

/// Sets `path` (dot separated, creating objects as needed) inside `root`.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<(), CliError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(bad(path, "empty key segment"));
    }
    for (i, part) in parts.iter().enumerate() {
        if !cur.is_object() {
            if cur.is_null() {
                *cur = Value::Object(Map::new());
            } else {
                return Err(bad(&parts[..i].join("."), "is not an object"));
            }
        }
        let obj = cur.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("loop returns on the last segment")
}

/// Parses `key.path=value`; the value is read as JSON and falls back to a string.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| bad(s, "override must look like key.path=value"))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

fn read_json(path: &Path) -> Result<Value, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| bad(&path.display().to_string(), format!("cannot read: {e}")))?;
    serde_json::from_str(&text).map_err(|e| bad(&path.display().to_string(), format!("invalid JSON: {e}")))
}

/// File, then `params` file, then overrides in order; defaults fill the rest.
pub fn resolve(file: Option<&Path>, params_file: Option<&Path>, overrides: &[(String, Value)]) -> Result<RunConfig, CliError> {
    let mut root = match file {
        Some(p) => read_json(p)?,
        None => Value::Object(Map::new()),
    };
    if let Some(p) = params_file {
        let mut v = read_json(p)?;
        // accept either bare parameters or a report that carries them
        if let Some(inner) = v.get("params").cloned() {
            v = inner;
        }
        set_path(&mut root, "params", v)?;
    }
    for (k, v) in overrides {
        set_path(&mut root, k, v.clone())?;
    }
    from_value(root)
}

pub fn from_value(root: Value) -> Result<RunConfig, CliError> {
    let cfg: RunConfig = serde_path_to_error::deserialize(root).map_err(|e| {
        let path = e.path().to_string();
        bad(&path, e.into_inner().to_string())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn from_json_str(text: &str) -> Result<RunConfig, CliError> {
    let v: Value = serde_json::from_str(text).map_err(|e| bad(".", format!("invalid JSON: {e}")))?;
    from_value(v)
}
