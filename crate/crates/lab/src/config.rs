//! Run configuration: a flat `key = value` file, `--set key=value` pairs and
//! dedicated flags, merged in that order so later sources win.
//!
//! Grammar of a config file, one entry per line:
//!
//! ```text
//! # comment
//! key = value
//! param.NAME = value     # problem parameter override
//! ```
//!
//! Numbers accept `0.25`, `1/16` and `2^-4`. Lists accept `a,b,c` and the
//! halving range `2^-3..2^-8`.

use std::collections::BTreeMap;

use relaxctl_core::hjb::{HjbOptions, Stencil};
use relaxctl_core::rates::SweepConfig;
use relaxctl_core::sim::{ActionSampling, RolloutConfig};
use relaxctl_core::{problem, ProblemSpec, SolveParams};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{source_name}:{line}: {message}")]
    Line {
        source_name: String,
        line: usize,
        message: String,
    },
    #[error("field `{key}`: {message}")]
    Field { key: String, message: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

fn field(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        key: key.to_string(),
        message: message.into(),
    }
}

/// Keys a config may set. `param.*` keys are checked by the problem builder.
pub const KEYS: &[&str] = &[
    "problem",
    "h",
    "lambda",
    "nodes",
    "controls",
    "fp_substeps",
    "tol",
    "max_iterations",
    "hjb_tol",
    "hjb_max_iterations",
    "theta",
    "stencil",
    "h_list",
    "lambda_list",
    "refine",
    "paths",
    "seed",
    "horizon",
    "tail_tol",
    "euler_substeps",
    "time_step",
    "antithetic",
    "sampling",
    "x0",
    "policy",
    "mode",
    "t_end",
    "samples_per_h",
    "dump_kernel",
    "kernel_threshold",
    "dump_paths",
    "out",
    "force",
    "workers",
];

/// Keys left out of the manifest: they select where and how fast a run
/// happens, never what it computes.
pub const NON_REPRODUCIBLE_KEYS: &[&str] = &["out", "force", "workers"];

/// Parsed `key -> raw value` map, in sorted order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let mut cfg = RawConfig::default();
        for (k, line) in text.lines().enumerate() {
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| ConfigError::Line {
                source_name: source_name.to_string(),
                line: k + 1,
                message,
            };
            let (key, value) = body
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{body}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(err("empty key or value".into()));
            }
            cfg.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if !KEYS.contains(&key) && !key.starts_with("param.") {
            return Err(ConfigError::UnknownKey(key.to_string()));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// `key=value` form used by `--set` and `--param`.
    pub fn set_pair(&mut self, pair: &str, prefix: &str) -> Result<(), ConfigError> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| field(pair, "expected key=value"))?;
        self.set(&format!("{prefix}{}", k.trim()), v.trim())
    }

    pub fn merge(&mut self, other: &RawConfig) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Entries that determine the computed outputs.
    pub fn reproducible(&self) -> BTreeMap<String, String> {
        self.entries
            .iter()
            .filter(|(k, _)| !NON_REPRODUCIBLE_KEYS.contains(&k.as_str()))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// `0.25`, `1/16` or `2^-4`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some((b, e)) = s.split_once('^') {
        let b: f64 = b.trim().parse().ok()?;
        let e: i32 = e.trim().parse().ok()?;
        return Some(b.powi(e));
    }
    if let Some((a, b)) = s.split_once('/') {
        let a: f64 = a.trim().parse().ok()?;
        let b: f64 = b.trim().parse().ok()?;
        return Some(a / b);
    }
    s.parse().ok()
}

/// Comma list, or the inclusive halving range `a..b` with `b = a / 2^k`.
pub fn parse_list(s: &str) -> Option<Vec<f64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (parse_number(a)?, parse_number(b)?);
        if !(a > 0.0 && b > 0.0 && b <= a) {
            return None;
        }
        let k = (a / b).log2().round();
        if !(0.0..=60.0).contains(&k) || ((a / 2f64.powi(k as i32)) / b - 1.0).abs() > 1e-12 {
            return None;
        }
        // exact halving so endpoints like 2^-8 come out bitwise
        return Some((0..=k as i32).map(|i| a / 2f64.powi(i)).collect());
    }
    s.split(',').map(parse_number).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicySource {
    Mdp,
    Hjb,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Discrete,
    Continuous,
    Both,
}

/// Validated configuration of one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: String,
    pub params: Vec<(String, f64)>,
    pub spec: ProblemSpec,
    pub h: f64,
    pub lambda: f64,
    pub nodes: usize,
    pub controls: usize,
    pub fp_substeps: usize,
    pub tol: Option<f64>,
    pub max_iterations: usize,
    pub hjb: HjbOptions,
    pub stencil: Stencil,
    pub h_list: Vec<f64>,
    pub lambda_list: Vec<f64>,
    pub refine: bool,
    pub rollout: RolloutConfig,
    pub x0: [f64; 2],
    pub policy: PolicySource,
    pub mode: EvalMode,
    pub t_end: f64,
    pub samples_per_h: usize,
    pub dump_kernel: bool,
    pub kernel_threshold: f64,
    pub dump_paths: usize,
    pub out: Option<String>,
    pub force: bool,
    pub workers: Option<usize>,
}

fn num(raw: &RawConfig, key: &str, default: f64) -> Result<f64, ConfigError> {
    match raw.get(key) {
        None => Ok(default),
        Some(s) => parse_number(s)
            .filter(|v| v.is_finite())
            .ok_or_else(|| field(key, format!("`{s}` is not a number"))),
    }
}

fn opt_num(raw: &RawConfig, key: &str) -> Result<Option<f64>, ConfigError> {
    raw.get(key).map(|_| num(raw, key, 0.0)).transpose()
}

fn count(raw: &RawConfig, key: &str, default: usize) -> Result<usize, ConfigError> {
    match raw.get(key) {
        None => Ok(default),
        Some(s) => s
            .parse()
            .map_err(|_| field(key, format!("`{s}` is not a nonnegative integer"))),
    }
}

fn flag(raw: &RawConfig, key: &str) -> Result<bool, ConfigError> {
    match raw.get(key) {
        None => Ok(false),
        Some("true" | "1" | "yes") => Ok(true),
        Some("false" | "0" | "no") => Ok(false),
        Some(s) => Err(field(key, format!("`{s}` is not a boolean"))),
    }
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(field(key, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self, ConfigError> {
        let problem = raw.get("problem").unwrap_or("lq1d").to_string();
        let mut params = Vec::new();
        for (k, v) in raw.entries() {
            if let Some(name) = k.strip_prefix("param.") {
                let x = parse_number(v).ok_or_else(|| field(k, format!("`{v}` is not a number")))?;
                params.push((name.to_string(), x));
            }
        }
        let spec = problem::builtin_problem(&problem, &params).map_err(|e| field("problem", e.to_string()))?;
        let h = num(raw, "h", 1.0 / 16.0)?;
        let lambda = positive("lambda", num(raw, "lambda", 0.5)?)?;
        let list = |key: &str, default: f64| -> Result<Vec<f64>, ConfigError> {
            match raw.get(key) {
                None => Ok(vec![default]),
                Some(s) => parse_list(s).ok_or_else(|| field(key, format!("`{s}` is not a list or a halving range"))),
            }
        };
        let x0 = match raw.get("x0") {
            None => [0.0, 0.0],
            Some(s) => {
                let v = parse_list(s).filter(|v| !v.is_empty() && v.len() <= 2).ok_or_else(|| field("x0", "expected one or two coordinates"))?;
                [v[0], v.get(1).copied().unwrap_or(0.0)]
            }
        };
        let hjb = HjbOptions {
            tol: opt_num(raw, "hjb_tol")?,
            max_iterations: count(raw, "hjb_max_iterations", HjbOptions::default().max_iterations)?,
            theta: num(raw, "theta", 1.0)?,
        };
        let rollout = RolloutConfig {
            paths: count(raw, "paths", 10_000)?,
            horizon_t: opt_num(raw, "horizon")?,
            tail_tol: num(raw, "tail_tol", 1e-4)?,
            euler_substeps: count(raw, "euler_substeps", 8)?,
            time_step: num(raw, "time_step", 1.0 / 128.0)?,
            rng_seed: match raw.get("seed") {
                None => 0,
                Some(s) => s.parse().map_err(|_| field("seed", format!("`{s}` is not a 64-bit seed")))?,
            },
            antithetic: flag(raw, "antithetic")?,
            sampling: match raw.get("sampling").unwrap_or("atomic") {
                "atomic" => ActionSampling::Atomic,
                "linear" => ActionSampling::PiecewiseLinear,
                s => return Err(field("sampling", format!("`{s}`; valid: atomic, linear"))),
            },
        };
        let cfg = RunConfig {
            spec,
            problem,
            params,
            h,
            lambda,
            nodes: count(raw, "nodes", 128)?,
            controls: count(raw, "controls", 17)?,
            fp_substeps: count(raw, "fp_substeps", SolveParams::DEFAULT_FP_SUBSTEPS)?,
            tol: opt_num(raw, "tol")?,
            max_iterations: count(raw, "max_iterations", SolveParams::DEFAULT_MAX_ITERATIONS)?,
            hjb,
            stencil: match raw.get("stencil").unwrap_or("scheme") {
                "scheme" => Stencil::Scheme,
                "central" => Stencil::Central,
                s => return Err(field("stencil", format!("`{s}`; valid: scheme, central"))),
            },
            h_list: list("h_list", h)?,
            lambda_list: list("lambda_list", lambda)?,
            refine: flag(raw, "refine")?,
            rollout,
            x0,
            policy: match raw.get("policy").unwrap_or("mdp") {
                "mdp" => PolicySource::Mdp,
                "hjb" => PolicySource::Hjb,
                "uniform" => PolicySource::Uniform,
                s => return Err(field("policy", format!("`{s}`; valid: mdp, hjb, uniform"))),
            },
            mode: match raw.get("mode").unwrap_or("both") {
                "discrete" => EvalMode::Discrete,
                "continuous" => EvalMode::Continuous,
                "both" => EvalMode::Both,
                s => return Err(field("mode", format!("`{s}`; valid: discrete, continuous, both"))),
            },
            t_end: positive("t_end", num(raw, "t_end", 10.0)?)?,
            samples_per_h: count(raw, "samples_per_h", 8)?.max(1),
            dump_kernel: flag(raw, "dump_kernel")?,
            kernel_threshold: num(raw, "kernel_threshold", 1e-14)?,
            dump_paths: count(raw, "dump_paths", 0)?,
            out: raw.get("out").map(str::to_string),
            force: flag(raw, "force")?,
            workers: raw.get("workers").map(|s| s.parse().map_err(|_| field("workers", format!("`{s}` is not a count")))).transpose()?,
        };
        if cfg.workers == Some(0) {
            return Err(field("workers", "must be at least 1"));
        }
        Ok(cfg)
    }

    /// Every computation-relevant setting, in a form `RawConfig` reads back
    /// to the same `RunConfig`.
    pub fn resolved(&self) -> BTreeMap<String, String> {
        let f = |x: f64| format!("{x:?}");
        let list = |v: &[f64]| v.iter().map(|&x| f(x)).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("problem", self.problem.clone());
        for (k, v) in &self.params {
            put(&format!("param.{k}"), f(*v));
        }
        put("h", f(self.h));
        put("lambda", f(self.lambda));
        put("nodes", self.nodes.to_string());
        put("controls", self.controls.to_string());
        put("fp_substeps", self.fp_substeps.to_string());
        if let Some(t) = self.tol {
            put("tol", f(t));
        }
        put("max_iterations", self.max_iterations.to_string());
        if let Some(t) = self.hjb.tol {
            put("hjb_tol", f(t));
        }
        put("hjb_max_iterations", self.hjb.max_iterations.to_string());
        put("theta", f(self.hjb.theta));
        put("stencil", match self.stencil {
            Stencil::Scheme => "scheme",
            Stencil::Central => "central",
        }
        .into());
        put("h_list", list(&self.h_list));
        put("lambda_list", list(&self.lambda_list));
        put("refine", self.refine.to_string());
        let r = &self.rollout;
        put("paths", r.paths.to_string());
        put("seed", r.rng_seed.to_string());
        if let Some(t) = r.horizon_t {
            put("horizon", f(t));
        }
        put("tail_tol", f(r.tail_tol));
        put("euler_substeps", r.euler_substeps.to_string());
        put("time_step", f(r.time_step));
        put("antithetic", r.antithetic.to_string());
        put("sampling", match r.sampling {
            ActionSampling::Atomic => "atomic",
            ActionSampling::PiecewiseLinear => "linear",
        }
        .into());
        put("x0", list(&self.x0));
        put("policy", match self.policy {
            PolicySource::Mdp => "mdp",
            PolicySource::Hjb => "hjb",
            PolicySource::Uniform => "uniform",
        }
        .into());
        put("mode", match self.mode {
            EvalMode::Discrete => "discrete",
            EvalMode::Continuous => "continuous",
            EvalMode::Both => "both",
        }
        .into());
        put("t_end", f(self.t_end));
        put("samples_per_h", self.samples_per_h.to_string());
        put("dump_kernel", self.dump_kernel.to_string());
        put("kernel_threshold", f(self.kernel_threshold));
        put("dump_paths", self.dump_paths.to_string());
        m
    }

    pub fn solve_params(&self) -> Result<SolveParams, relaxctl_core::Error> {
        self.solve_params_at(self.h, self.lambda)
    }

    pub fn solve_params_at(&self, h: f64, lambda: f64) -> Result<SolveParams, relaxctl_core::Error> {
        let mut p = SolveParams::new(&self.spec, h, lambda, self.nodes, self.controls)?;
        p.fp_substeps = self.fp_substeps;
        p.max_iterations = self.max_iterations;
        if let Some(t) = self.tol {
            p.fixed_point_tol = t;
        }
        p.validate()?;
        Ok(p)
    }

    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            state_nodes: self.nodes,
            control_nodes: self.controls,
            fp_substeps: self.fp_substeps,
            fixed_point_tol: self.tol,
            hjb: self.hjb,
            vi_max_iterations: self.max_iterations,
            refinement_check: self.refine,
        }
    }
}
