//! Experiment configuration in TOML.
//!
//! ```toml
//! schema_version = 1        # optional, only 1 is accepted
//! n = 600
//! d = 2
//! seed = 1                  # default 1
//! trials = 1                # default 1
//! t_max = 10000             # default 10000
//! flock_tol = 1e-9          # default 1e-9, relative to max_pair(0)
//!
//! [radius]                  # exactly one of r, alpha, beta
//! alpha = 2.0               # r = (α log n / n)^{1/d}
//! # r = 0.15
//! # beta = 1.5              # r = n^{-1/d} (log n)^β
//!
//! [kernel]
//! family = "triangular"     # indicator | triangular | power-cap | tabulated
//! amplitude = "auto"        # a number or "auto" = 1/(π_d n r^d); default "auto"
//! # gamma = 1.0             # power-cap only
//! # samples = [1.0, 0.5, 0] # tabulated only, rescaled to the amplitude
//! delta = 0.0               # shift used by the condition checks, default 0
//!
//! [velocity]                # one of the modes below
//! mode = "halfsplit"        # ±v′ n^{-3/2} (log n)^{1/2} e_1 split at x_1 = 1/2
//! v_prime = 1.0
//! # mode = "nearest-origin"; v0 = 0.01 or scale = "bounded" | "vanishing"
//! # mode = "isolated-cluster"; v0 = 0.01
//! # mode = "random"; v_max = 0.01   (uniform in the ball)
//! # mode = "explicit"; rows = [[0.0, 0.1], ...]
//!
//! [diagnostics]             # all optional
//! spectral = false
//! drift = "exact"           # exact | bound | off
//! certificate_interval = 10
//!
//! [sweep]                   # optional, used by the sweep runner
//! alphas = [1.0, 2.0, 3.0]
//! v_primes = [0.1, 1.0, 10.0]
//! trials = 50
//! ```
//!
//! Unknown keys are errors. Every error names the offending key path and,
//! when it can be located, its line.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{adversarial_velocities, find_isolated_cluster, AdversarialMode};
use crate::dynamics::{DriftMode, SimOptions, SwarmState};
use crate::error::{Error, Result};
use crate::geometry::{radius_for_alpha, sample_positions, unit_ball_volume};
use crate::kernel::{Kernel, KernelFamily};
use crate::ldp::solve_kbar;
use crate::matrix::RowMatrix;
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub n: usize,
    pub d: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_t_max")]
    pub t_max: usize,
    #[serde(default = "default_flock_tol")]
    pub flock_tol: f64,
    pub radius: RadiusSpec,
    pub kernel: KernelSpec,
    pub velocity: VelocitySpec,
    #[serde(default)]
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
}

fn schema_version() -> u32 {
    SCHEMA_VERSION
}
fn default_seed() -> u64 {
    1
}
fn default_trials() -> usize {
    1
}
fn default_t_max() -> usize {
    SimOptions::default().t_max
}
fn default_flock_tol() -> f64 {
    SimOptions::default().flock_tol
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadiusSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

impl RadiusSpec {
    pub fn alpha(alpha: f64) -> Self {
        RadiusSpec { alpha: Some(alpha), ..Default::default() }
    }

    pub fn explicit(r: f64) -> Self {
        RadiusSpec { r: Some(r), ..Default::default() }
    }

    pub fn resolve(&self, n: usize, d: usize) -> Result<f64> {
        let r = match (self.r, self.alpha, self.beta) {
            (Some(r), None, None) => r,
            (None, Some(a), None) => {
                if !(a > 0.0) {
                    return Err(cfg_err("radius.alpha", "must be positive"));
                }
                radius_for_alpha(n, d, a)
            }
            (None, None, Some(b)) => (n as f64).powf(-1.0 / d as f64) * (n as f64).ln().powf(b),
            _ => return Err(cfg_err("radius", "give exactly one of r, alpha, beta")),
        };
        if !(r > 0.0 && r.is_finite()) {
            return Err(cfg_err("radius", format!("radius {r} must be positive and finite")));
        }
        Ok(r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Indicator,
    Triangular,
    PowerCap,
    Tabulated,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Amplitude {
    Value(f64),
    /// `1/(π_d n r^d)`, i.e. `1/(α π_d log n)` under the `α` radius law.
    Named(Auto),
}

impl Default for Amplitude {
    fn default() -> Self {
        Amplitude::Named(Auto::Auto)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub family: FamilyName,
    #[serde(default)]
    pub amplitude: Amplitude,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<f64>>,
    #[serde(default)]
    pub delta: f64,
}

impl KernelSpec {
    pub fn triangular() -> Self {
        KernelSpec {
            family: FamilyName::Triangular,
            amplitude: Amplitude::default(),
            gamma: None,
            samples: None,
            delta: 0.0,
        }
    }

    /// The unshifted kernel at radius `r`.
    pub fn build(&self, n: usize, d: usize, r: f64) -> Result<Kernel> {
        let amp = match self.amplitude {
            Amplitude::Value(a) => a,
            Amplitude::Named(Auto::Auto) => 1.0 / (unit_ball_volume(d) * n as f64 * r.powi(d as i32)),
        };
        let misplaced = |key: &str| cfg_err(format!("kernel.{key}"), format!("not used by family {:?}", self.family));
        let family = match self.family {
            FamilyName::Indicator | FamilyName::Triangular if self.gamma.is_some() => return Err(misplaced("gamma")),
            FamilyName::Indicator | FamilyName::Triangular | FamilyName::PowerCap if self.samples.is_some() => {
                return Err(misplaced("samples"))
            }
            FamilyName::Tabulated if self.gamma.is_some() => return Err(misplaced("gamma")),
            FamilyName::Indicator => KernelFamily::Indicator,
            FamilyName::Triangular => KernelFamily::Triangular,
            FamilyName::PowerCap => KernelFamily::PowerCap {
                gamma: self.gamma.ok_or_else(|| cfg_err("kernel.gamma", "required for power-cap"))?,
            },
            FamilyName::Tabulated => KernelFamily::Tabulated {
                samples: self.samples.clone().ok_or_else(|| cfg_err("kernel.samples", "required for tabulated"))?,
            },
        };
        let k = match family {
            KernelFamily::Tabulated { samples } => {
                Kernel::tabulated(samples, r).and_then(|k| k.with_radius_amplitude(r, amp))
            }
            fam => Kernel::new(fam, amp, r),
        };
        k.map_err(|e| cfg_err("kernel", e.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NonFlockScale {
    /// `2^{−d−1} k̄_n r`
    Bounded,
    /// `k̄_n r / 2`
    Vanishing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VelocitySpec {
    Halfsplit {
        v_prime: f64,
    },
    NearestOrigin {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        v0: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<NonFlockScale>,
    },
    IsolatedCluster {
        v0: f64,
    },
    Random {
        v_max: f64,
    },
    Explicit {
        rows: Vec<Vec<f64>>,
    },
}

/// `v′ n^{−3/2} (log n)^{1/2}`
pub fn halfsplit_speed(v_prime: f64, n: usize) -> f64 {
    let nf = n as f64;
    v_prime * nf.powf(-1.5) * nf.ln().sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Diagnostics {
    #[serde(default)]
    pub spectral: bool,
    #[serde(default = "default_drift")]
    pub drift: DriftMode,
    #[serde(default = "default_certificate_interval")]
    pub certificate_interval: usize,
}

fn default_drift() -> DriftMode {
    DriftMode::Exact
}
fn default_certificate_interval() -> usize {
    SimOptions::default().certificate_interval
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics { spectral: false, drift: default_drift(), certificate_interval: default_certificate_interval() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub v_primes: Vec<f64>,
    #[serde(default = "default_sweep_trials")]
    pub trials: usize,
}

fn default_sweep_trials() -> usize {
    50
}

impl Default for SweepSpec {
    /// `α ∈ {0.5, 0.75, …, 3}`, 20 log-spaced `v′` in `[0.01, 100]`, 50 trials.
    fn default() -> Self {
        SweepSpec {
            alphas: (0..11).map(|k| 0.5 + 0.25 * k as f64).collect(),
            v_primes: (0..20).map(|k| 10f64.powf(-2.0 + 4.0 * k as f64 / 19.0)).collect(),
            trials: default_sweep_trials(),
        }
    }
}

/// A concrete run: kernel, initial state and options.
#[derive(Clone, Debug)]
pub struct Instance {
    pub radius: f64,
    pub kernel: Kernel,
    pub state: SwarmState,
    pub options: SimOptions,
}

impl SimConfig {
    /// `n`, `α` and `v′` with documented defaults for everything else.
    pub fn minimal(n: usize, d: usize, alpha: f64, v_prime: f64) -> Self {
        SimConfig {
            schema_version: SCHEMA_VERSION,
            n,
            d,
            seed: default_seed(),
            trials: default_trials(),
            t_max: default_t_max(),
            flock_tol: default_flock_tol(),
            radius: RadiusSpec::alpha(alpha),
            kernel: KernelSpec::triangular(),
            velocity: VelocitySpec::Halfsplit { v_prime },
            diagnostics: Diagnostics::default(),
            sweep: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(cfg_err("schema_version", format!("unsupported version {}", self.schema_version)));
        }
        if self.n < 2 {
            return Err(cfg_err("n", "must be at least 2"));
        }
        if self.d < 2 {
            return Err(cfg_err("d", "must be at least 2"));
        }
        if self.trials == 0 {
            return Err(cfg_err("trials", "must be at least 1"));
        }
        if !(self.flock_tol > 0.0) {
            return Err(cfg_err("flock_tol", "must be positive"));
        }
        if !(self.kernel.delta >= 0.0) {
            return Err(cfg_err("kernel.delta", "must be non-negative"));
        }
        let r = self.radius.resolve(self.n, self.d)?;
        self.kernel.build(self.n, self.d, r)?;
        let positive = |v: f64, key: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(cfg_err(format!("velocity.{key}"), "must be positive"))
            }
        };
        match &self.velocity {
            VelocitySpec::Halfsplit { v_prime } => positive(*v_prime, "v_prime")?,
            VelocitySpec::NearestOrigin { v0, scale } => match (v0, scale) {
                (Some(v), None) => positive(*v, "v0")?,
                (None, Some(_)) => {}
                _ => return Err(cfg_err("velocity", "give exactly one of v0, scale")),
            },
            VelocitySpec::IsolatedCluster { v0 } => positive(*v0, "v0")?,
            VelocitySpec::Random { v_max } => positive(*v_max, "v_max")?,
            VelocitySpec::Explicit { rows } => {
                if rows.len() != self.n || rows.iter().any(|r| r.len() != self.d) {
                    return Err(cfg_err("velocity.rows", format!("expected {} rows of length {}", self.n, self.d)));
                }
            }
        }
        if let Some(s) = &self.sweep {
            if s.alphas.is_empty() || s.alphas.iter().any(|&a| !(a > 0.0)) {
                return Err(cfg_err("sweep.alphas", "need at least one positive value"));
            }
            if s.v_primes.is_empty() || s.v_primes.iter().any(|&v| !(v > 0.0)) {
                return Err(cfg_err("sweep.v_primes", "need at least one positive value"));
            }
            if s.trials == 0 {
                return Err(cfg_err("sweep.trials", "must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn radius(&self) -> Result<f64> {
        self.radius.resolve(self.n, self.d)
    }

    pub fn kernel(&self) -> Result<Kernel> {
        self.kernel.build(self.n, self.d, self.radius()?)
    }

    pub fn options(&self) -> SimOptions {
        SimOptions {
            t_max: self.t_max,
            flock_tol: self.flock_tol,
            drift: self.diagnostics.drift,
            spectral: self.diagnostics.spectral,
            certificate_interval: self.diagnostics.certificate_interval,
            record_trajectory: false,
        }
    }

    /// Seed of trial `k` of a plain run.
    pub fn trial_seed(&self, k: usize) -> u64 {
        rng::derive_seed(self.seed, &[k as u64])
    }

    pub fn with_alpha(&self, alpha: f64) -> Self {
        SimConfig { radius: RadiusSpec::alpha(alpha), ..self.clone() }
    }

    pub fn with_v_prime(&self, v_prime: f64) -> Self {
        SimConfig { velocity: VelocitySpec::Halfsplit { v_prime }, ..self.clone() }
    }

    /// Samples positions and builds velocities from the stream `run_seed`.
    pub fn instance(&self, run_seed: u64) -> Result<Instance> {
        self.validate()?;
        let (n, d) = (self.n, self.d);
        let radius = self.radius()?;
        let kernel = self.kernel()?;
        let x = sample_positions(n, d, rng::derive_seed(run_seed, &[rng::POSITIONS])).points;
        let v = match &self.velocity {
            VelocitySpec::Halfsplit { v_prime } => {
                adversarial_velocities(&x, AdversarialMode::HalfSplit, halfsplit_speed(*v_prime, n))
            }
            VelocitySpec::NearestOrigin { v0, scale } => {
                let v0 = match (v0, scale) {
                    (Some(v), _) => *v,
                    (None, Some(s)) => {
                        let kbar = solve_kbar(&kernel, n, d)?.kbar;
                        match s {
                            NonFlockScale::Bounded => kbar * radius / 2f64.powi(d as i32 + 1),
                            NonFlockScale::Vanishing => 0.5 * kbar * radius,
                        }
                    }
                    (None, None) => unreachable!("validated"),
                };
                adversarial_velocities(&x, AdversarialMode::NearestOrigin, v0)
            }
            VelocitySpec::IsolatedCluster { v0 } => match find_isolated_cluster(&x, radius, *v0)? {
                Some(c) => c.velocities(n),
                None => return Err(Error::Degenerate("no isolated cluster in this sample".into())),
            },
            VelocitySpec::Random { v_max } => {
                let mut g = rng::stream(rng::derive_seed(run_seed, &[rng::VELOCITIES]));
                let mut data = Vec::with_capacity(n * d);
                for _ in 0..n {
                    // rejection from the cube keeps the law uniform on the ball
                    loop {
                        let u: Vec<f64> = (0..d).map(|_| 2.0 * g.random::<f64>() - 1.0).collect();
                        if u.iter().map(|a| a * a).sum::<f64>() <= 1.0 {
                            data.extend(u.iter().map(|a| a * v_max));
                            break;
                        }
                    }
                }
                RowMatrix::from_vec(n, d, data)
            }
            VelocitySpec::Explicit { rows } => {
                RowMatrix::from_rows(rows).ok_or_else(|| cfg_err("velocity.rows", "ragged rows"))?
            }
        };
        Ok(Instance { radius, kernel, state: SwarmState::new(x, v)?, options: self.options() })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| cfg_err("<config>", e.to_string()))
    }
}

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), line: None, message: message.into() }
}

/// Parses and validates a config held in memory.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let cfg: SimConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().trim().to_string();
        let line = e.span().map(|s| refine_unknown_field(text, line_at(text, s.start), &message));
        Error::Config { path: "<config>".into(), line, message }
    })?;
    cfg.validate().map_err(|e| match e {
        Error::Config { path, line: None, message } => {
            let line = locate(text, &path);
            Error::Config { path, line, message }
        }
        other => other,
    })?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<SimConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_config(&text).map_err(|e| match e {
        Error::Config { path: key, line, message } => Error::Config {
            path: if key == "<config>" { path.display().to_string() } else { format!("{}: {key}", path.display()) },
            line,
            message,
        },
        other => other,
    })
}

pub fn save_config(cfg: &SimConfig, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, cfg.to_toml()?)?;
    Ok(())
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Spans of unknown fields in tagged tables point at the table header;
/// move to the offending key when it appears before the next header.
fn refine_unknown_field(text: &str, line: usize, message: &str) -> usize {
    let Some(name) = message.strip_prefix("unknown field `").and_then(|m| m.split('`').next()) else {
        return line;
    };
    for (i, l) in text.lines().enumerate().skip(line - 1) {
        let t = l.trim();
        if i + 1 > line && t.starts_with('[') {
            break;
        }
        if t.split('=').next().map(str::trim) == Some(name) {
            return i + 1;
        }
    }
    line
}

/// Line of a dotted key path (`key` or `table.key`), best effort.
fn locate(text: &str, path: &str) -> Option<usize> {
    let (table, key) = match path.split_once('.') {
        Some((t, k)) => (Some(t), Some(k)),
        None if text.lines().any(|l| l.trim() == format!("[{path}]")) => (Some(path), None),
        None => (None, Some(path)),
    };
    let mut in_table = table.is_none();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            if key.is_none() && Some(t) == table.map(|s| format!("[{s}]")).as_deref() {
                return Some(i + 1);
            }
            in_table = table.is_some_and(|s| t == format!("[{s}]"));
            continue;
        }
        if let Some(k) = key {
            if in_table && t.split('=').next().map(str::trim) == Some(k) {
                return Some(i + 1);
            }
        }
    }
    None
}
