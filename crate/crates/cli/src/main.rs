use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kac_turing_cli::config::{parse_override, resolve};
use kac_turing_cli::{execute, CliError, Command};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "kacturing", version, about = "Turing instability toolkit for the two-line Kac-Ising system")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// JSON file holding model parameters (bare, or a report with a `params` key).
    #[arg(long, global = true)]
    params: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for replica ensembles.
    #[arg(long, global = true, env = "KACTURING_THREADS")]
    threads: Option<usize>,

    /// Config override `key.path=value`, applied after the file; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Sub,
}

#[derive(Debug, Subcommand)]
enum Sub {
    /// Classify a parameter set: spectra of every mode up to the tail bound.
    Stability {
        #[arg(long)]
        scan_limit: Option<u64>,
    },
    /// Build a certified unimodular parameter set from two inverse temperatures.
    ConstructParams {
        #[arg(long)]
        beta1: Option<f64>,
        #[arg(long)]
        beta2: Option<f64>,
        #[arg(long)]
        margin: Option<f64>,
    },
    /// Integrate the hydrodynamic equations.
    Pde(PdeArgs),
    /// Run one microscopic trajectory and record Fourier modes.
    Simulate {
        #[arg(long)]
        n_sites: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        sample_dt: Option<f64>,
        /// Comma separated wavenumbers.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        modes: Option<Vec<i64>>,
    },
    /// Fluctuation ensemble of the unstable mode at mesoscopic times.
    Fluctuations {
        #[arg(long)]
        n_sites: Option<usize>,
        #[arg(long = "theta", value_delimiter = ',')]
        thetas: Option<Vec<f64>>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        normalization: Option<Norm>,
    },
    /// Escape probabilities before the critical time.
    Critical {
        #[arg(long)]
        n_sites: Option<usize>,
        #[arg(long = "delta", value_delimiter = ',')]
        deltas: Option<Vec<f64>>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Central limit check for weighted sums of fair spins.
    CltCheck {
        /// `cos`, `sin` or `constant:<value>`.
        #[arg(long)]
        function: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replicas: Option<usize>,
    },
    /// Variance of the discounted martingale integral against its closed form.
    CompensatorCheck {
        #[arg(long)]
        n_sites: Option<usize>,
        #[arg(long)]
        t: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        a1_re: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        a1_im: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        a2_re: Option<f64>,
        #[arg(long, allow_negative_numbers = true)]
        a2_im: Option<f64>,
        #[arg(long)]
        replicas: Option<usize>,
        #[arg(long)]
        normalization: Option<Norm>,
    },
}

#[derive(Debug, Args)]
struct PdeArgs {
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, conflicts_with = "nonlinear")]
    linear: bool,
    #[arg(long)]
    nonlinear: bool,
    /// Initial mode `k:u1_re:u1_im:u2_re:u2_im`; repeatable, replaces the configured list.
    #[arg(long = "mode", allow_hyphen_values = true)]
    modes: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Norm {
    Lattice,
    Published,
}

impl Norm {
    fn json(self) -> Value {
        match self {
            Norm::Lattice => json!("lattice"),
            Norm::Published => json!("published"),
        }
    }
}

fn push<T: serde::Serialize>(out: &mut Vec<(String, Value)>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        out.push((key.to_string(), json!(v)));
    }
}

fn parse_mode(s: &str) -> Result<Value, CliError> {
    let bad = || CliError::Config {
        path: "pde.modes".into(),
        reason: format!("expected k:u1_re:u1_im:u2_re:u2_im, got `{s}`"),
    };
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 5 {
        return Err(bad());
    }
    let k: i64 = parts[0].parse().map_err(|_| bad())?;
    let v: Vec<f64> = parts[1..].iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    Ok(json!({ "k": k, "u1_re": v[0], "u1_im": v[1], "u2_re": v[2], "u2_im": v[3] }))
}

fn parse_function(s: &str) -> Result<Value, CliError> {
    match s {
        "cos" => Ok(json!("cos")),
        "sin" => Ok(json!("sin")),
        _ => {
            let c = s
                .strip_prefix("constant:")
                .and_then(|c| c.parse::<f64>().ok())
                .ok_or_else(|| CliError::Config {
                    path: "clt.function".into(),
                    reason: format!("expected cos, sin or constant:<value>, got `{s}`"),
                })?;
            Ok(json!({ "constant": c }))
        }
    }
}

fn overrides(cli: &Cli) -> Result<(Command, Vec<(String, Value)>), CliError> {
    let mut o = Vec::new();
    for s in &cli.sets {
        o.push(parse_override(s)?);
    }
    let cmd = match &cli.command {
        Sub::Stability { scan_limit } => {
            push(&mut o, "stability.scan_limit", *scan_limit);
            Command::Stability
        }
        Sub::ConstructParams { beta1, beta2, margin } => {
            push(&mut o, "construct.beta1", *beta1);
            push(&mut o, "construct.beta2", *beta2);
            push(&mut o, "construct.margin", *margin);
            Command::ConstructParams
        }
        Sub::Pde(a) => {
            push(&mut o, "pde.k_max", a.k_max);
            push(&mut o, "pde.grid", a.grid);
            push(&mut o, "pde.dt", a.dt);
            push(&mut o, "pde.t_end", a.t_end);
            push(&mut o, "pde.stride", a.stride);
            if a.linear {
                o.push(("pde.dynamics".into(), json!("linear")));
            }
            if a.nonlinear {
                o.push(("pde.dynamics".into(), json!("nonlinear")));
            }
            if !a.modes.is_empty() {
                let modes = a.modes.iter().map(|m| parse_mode(m)).collect::<Result<Vec<_>, _>>()?;
                o.push(("pde.modes".into(), Value::Array(modes)));
            }
            Command::Pde
        }
        Sub::Simulate { n_sites, t_end, sample_dt, modes } => {
            push(&mut o, "simulate.n_sites", *n_sites);
            push(&mut o, "simulate.t_end", *t_end);
            push(&mut o, "simulate.sample_dt", *sample_dt);
            push(&mut o, "simulate.modes", modes.clone());
            Command::Simulate
        }
        Sub::Fluctuations { n_sites, thetas, replicas, normalization } => {
            push(&mut o, "fluctuations.n_sites", *n_sites);
            push(&mut o, "fluctuations.thetas", thetas.clone());
            push(&mut o, "fluctuations.replicas", *replicas);
            push(&mut o, "fluctuations.normalization", normalization.map(Norm::json));
            Command::Fluctuations
        }
        Sub::Critical { n_sites, deltas, replicas } => {
            push(&mut o, "critical.n_sites", *n_sites);
            push(&mut o, "critical.deltas", deltas.clone());
            push(&mut o, "critical.replicas", *replicas);
            Command::Critical
        }
        Sub::CltCheck { function, n, replicas } => {
            if let Some(f) = function {
                o.push(("clt.function".into(), parse_function(f)?));
            }
            push(&mut o, "clt.n", *n);
            push(&mut o, "clt.replicas", *replicas);
            Command::CltCheck
        }
        Sub::CompensatorCheck { n_sites, t, a1_re, a1_im, a2_re, a2_im, replicas, normalization } => {
            push(&mut o, "compensator.n_sites", *n_sites);
            push(&mut o, "compensator.t", *t);
            push(&mut o, "compensator.coefficients.a1_re", *a1_re);
            push(&mut o, "compensator.coefficients.a1_im", *a1_im);
            push(&mut o, "compensator.coefficients.a2_re", *a2_re);
            push(&mut o, "compensator.coefficients.a2_im", *a2_im);
            push(&mut o, "compensator.replicas", *replicas);
            push(&mut o, "compensator.normalization", normalization.map(Norm::json));
            Command::CompensatorCheck
        }
    };
    push(&mut o, "seed", cli.seed);
    push(&mut o, "threads", cli.threads);
    push(&mut o, "out", cli.out.clone());
    Ok((cmd, o))
}

fn run(cli: &Cli) -> Result<i32, CliError> {
    let (cmd, o) = overrides(cli)?;
    let cfg = resolve(cli.config.as_deref(), cli.params.as_deref(), &o)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config {
                path: "threads".into(),
                reason: e.to_string(),
            })?;
    }
    let out = execute(cmd, &cfg)?;
    for f in &out.files {
        println!("wrote {}", f.display());
    }
    println!("wrote {}", out.manifest.display());
    match out.passed {
        Some(false) => {
            eprintln!("{}: check failed", cmd.name());
            Ok(1)
        }
        Some(true) => {
            println!("{}: check passed", cmd.name());
            Ok(0)
        }
        None => Ok(0),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
