//! Control problems: coefficients, domain, discount, and the built-in registry.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::grid::{ControlGrid, GridPair, Point, StateGrid};
use crate::math::{cos, exp, sin, sqrt, PI};

pub type Mat2 = [[f64; 2]; 2];

pub type DriftFn = Arc<dyn Fn(&Point, f64) -> Point + Send + Sync>;
pub type RewardFn = Arc<dyn Fn(&Point, f64) -> f64 + Send + Sync>;
pub type SigmaFn = Arc<dyn Fn(&Point) -> Mat2 + Send + Sync>;
pub type ControlledSigmaFn = Arc<dyn Fn(&Point, f64) -> Mat2 + Send + Sync>;
pub type FieldFn = Arc<dyn Fn(&Point) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum Diffusion {
    /// σ(x), the setting of the MDP pipeline.
    Uncontrolled(SigmaFn),
    /// σ(x, u); only the PDE solvers accept it, and they assume σσᵀ affine in u.
    Controlled(ControlledSigmaFn),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StateDomain {
    Torus { dim: usize, lower: Point, period: Point },
    /// Finite 1-D window with Dirichlet data from the attached reference field.
    Window { lo: f64, hi: f64 },
}

impl StateDomain {
    pub fn dim(&self) -> usize {
        match *self {
            StateDomain::Torus { dim, .. } => dim,
            StateDomain::Window { .. } => 1,
        }
    }
}

/// A fully specified control problem. Immutable; all closures are pure.
#[derive(Clone)]
pub struct ProblemSpec {
    pub name: String,
    pub drift: DriftFn,
    pub diffusion: Diffusion,
    pub reward: RewardFn,
    pub discount_beta: f64,
    pub control_set: (f64, f64),
    pub state_domain: StateDomain,
    /// Closed-form value function, when one is known.
    pub reference: Option<FieldFn>,
    /// Resolved registry parameters, in registry order.
    pub params: Vec<(String, f64)>,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemSpec")
            .field("name", &self.name)
            .field("discount_beta", &self.discount_beta)
            .field("control_set", &self.control_set)
            .field("state_domain", &self.state_domain)
            .field("controlled_diffusion", &self.has_controlled_diffusion())
            .field("params", &self.params)
            .finish()
    }
}

impl ProblemSpec {
    pub fn dim(&self) -> usize {
        self.state_domain.dim()
    }

    pub fn has_controlled_diffusion(&self) -> bool {
        matches!(self.diffusion, Diffusion::Controlled(_))
    }

    pub fn drift(&self, x: &Point, u: f64) -> Point {
        (self.drift)(x, u)
    }

    pub fn reward(&self, x: &Point, u: f64) -> f64 {
        (self.reward)(x, u)
    }

    pub fn sigma(&self, x: &Point, u: f64) -> Mat2 {
        match &self.diffusion {
            Diffusion::Uncontrolled(s) => s(x),
            Diffusion::Controlled(s) => s(x, u),
        }
    }

    /// Σ = σσᵀ.
    pub fn covariance(&self, x: &Point, u: f64) -> Mat2 {
        outer(&self.sigma(x, u), self.dim())
    }

    /// Control-independent Σ; errors for controlled diffusion.
    pub fn covariance_uncontrolled(&self, x: &Point) -> Result<Mat2> {
        match &self.diffusion {
            Diffusion::Uncontrolled(s) => Ok(outer(&s(x), self.dim())),
            Diffusion::Controlled(_) => Err(Error::Unsupported(format!(
                "problem `{}` has control-dependent diffusion; only the PDE solvers accept it",
                self.name
            ))),
        }
    }

    pub fn require_uncontrolled(&self) -> Result<()> {
        if self.has_controlled_diffusion() {
            Err(Error::Unsupported(format!(
                "problem `{}` has control-dependent diffusion and cannot be used by the kernel/MDP pipeline",
                self.name
            )))
        } else {
            Ok(())
        }
    }

    pub fn require_torus(&self) -> Result<()> {
        match self.state_domain {
            StateDomain::Torus { .. } => Ok(()),
            StateDomain::Window { .. } => Err(Error::Unsupported(format!(
                "problem `{}` lives on a finite window; this operation needs a periodic domain",
                self.name
            ))),
        }
    }

    pub fn control_volume(&self) -> f64 {
        self.control_set.1 - self.control_set.0
    }

    pub fn state_grid(&self, nodes_per_axis: usize) -> Result<StateGrid> {
        match self.state_domain {
            StateDomain::Torus { dim, lower, period } => StateGrid::torus(dim, nodes_per_axis, lower, period),
            StateDomain::Window { lo, hi } => StateGrid::window(nodes_per_axis, lo, hi),
        }
    }

    pub fn control_grid(&self, nodes: usize) -> Result<ControlGrid> {
        ControlGrid::new(self.control_set.0, self.control_set.1, nodes)
    }

    pub fn grids(&self, state_nodes: usize, control_nodes: usize) -> Result<GridPair> {
        Ok(GridPair::new(self.state_grid(state_nodes)?, self.control_grid(control_nodes)?))
    }

    /// Grid-sampled ‖r‖_∞ over state and control nodes.
    pub fn reward_sup(&self, grid: &GridPair) -> Result<f64> {
        let mut m: f64 = 0.0;
        for i in 0..grid.state.len() {
            let x = grid.state.node(i);
            for j in 0..grid.control.len() {
                let u = grid.control.node(j);
                let r = self.reward(&x, u);
                if !r.is_finite() {
                    return Err(invalid("reward", i, &x, j, u));
                }
                m = m.max(r.abs());
            }
        }
        Ok(m)
    }

    pub fn param(&self, key: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }
}

fn outer(s: &Mat2, dim: usize) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..dim {
        for j in 0..dim {
            c[i][j] = (0..dim).map(|k| s[i][k] * s[j][k]).sum();
        }
    }
    c
}

/// Smallest eigenvalue of a symmetric matrix (upper-left `dim` block).
pub fn min_eigenvalue(m: &Mat2, dim: usize) -> f64 {
    if dim == 1 {
        return m[0][0];
    }
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half = 0.5 * (m[0][0] - m[1][1]);
    let off = 0.5 * (m[0][1] + m[1][0]);
    mean - sqrt(half * half + off * off)
}

/// Spectral norm of a (not necessarily symmetric) matrix.
pub fn spectral_norm(m: &Mat2, dim: usize) -> f64 {
    if dim == 1 {
        return m[0][0].abs();
    }
    let t = outer(&transpose(m), 2);
    let mean = 0.5 * (t[0][0] + t[1][1]);
    let half = 0.5 * (t[0][0] - t[1][1]);
    sqrt(mean + sqrt(half * half + t[0][1] * t[0][1]))
}

fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

fn frobenius_diff(a: &Mat2, b: &Mat2, dim: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..dim {
        for j in 0..dim {
            let d = a[i][j] - b[i][j];
            s += d * d;
        }
    }
    sqrt(s)
}

fn vec_diff(a: &Point, b: &Point, dim: usize) -> f64 {
    sqrt((0..dim).map(|k| (a[k] - b[k]) * (a[k] - b[k])).sum())
}

fn vec_norm(a: &Point, dim: usize) -> f64 {
    vec_diff(a, &[0.0; 2], dim)
}

fn invalid(quantity: &'static str, i: usize, x: &Point, j: usize, u: f64) -> Error {
    Error::InvalidProblem {
        quantity,
        location: format!("state node {i} (x = {:?}), control node {j} (u = {u})", x),
    }
}

/// Discretization of one solve: time step, temperature, resolutions, tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveParams {
    step_h: f64,
    discount_beta: f64,
    discount_gamma: f64,
    pub temperature_lambda: f64,
    pub state_nodes_per_axis: usize,
    pub control_nodes: usize,
    pub fp_substeps: usize,
    pub fixed_point_tol: f64,
    pub max_iterations: usize,
}

impl SolveParams {
    pub const DEFAULT_FP_SUBSTEPS: usize = 16;
    pub const DEFAULT_MAX_ITERATIONS: usize = 1_000_000;

    /// Defaults: 16 Fokker–Planck substeps, tolerance `1e-10 max(1, ‖r‖/β)`.
    pub fn new(spec: &ProblemSpec, h: f64, lambda: f64, state_nodes: usize, control_nodes: usize) -> Result<Self> {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::Parameter(format!("time step h must lie in (0, 1), got {h}")));
        }
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!("temperature must be positive, got {lambda}")));
        }
        if state_nodes < 2 || control_nodes < 2 {
            return Err(Error::Parameter("node counts must be at least 2".into()));
        }
        let grid = spec.grids(state_nodes, control_nodes)?;
        let scale = spec.reward_sup(&grid)? / spec.discount_beta;
        let beta = spec.discount_beta;
        Ok(SolveParams {
            step_h: h,
            discount_beta: beta,
            discount_gamma: exp(-beta * h),
            temperature_lambda: lambda,
            state_nodes_per_axis: state_nodes,
            control_nodes,
            fp_substeps: Self::DEFAULT_FP_SUBSTEPS,
            fixed_point_tol: 1e-10 * scale.max(1.0),
            max_iterations: Self::DEFAULT_MAX_ITERATIONS,
        })
    }

    pub fn step_h(&self) -> f64 {
        self.step_h
    }

    pub fn discount_beta(&self) -> f64 {
        self.discount_beta
    }

    /// `exp(-β h)`.
    pub fn discount_gamma(&self) -> f64 {
        self.discount_gamma
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fixed_point_tol > 0.0) {
            return Err(Error::Parameter(format!("fixed_point_tol must be positive, got {}", self.fixed_point_tol)));
        }
        if self.fp_substeps == 0 {
            return Err(Error::Parameter("fp_substeps must be positive".into()));
        }
        if !(self.temperature_lambda > 0.0) {
            return Err(Error::Parameter(format!("temperature must be positive, got {}", self.temperature_lambda)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Grid-measured constants and per-assumption verdicts.
#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub sup_b: f64,
    pub sup_sigma: f64,
    pub lip_b_x: f64,
    pub lip_b_u: f64,
    pub lip_sigma_x: f64,
    pub sup_r: f64,
    pub lip_r_x: f64,
    pub lip_r_u: f64,
    pub m1: f64,
    pub m2: f64,
    pub lambda_min: f64,
    /// Sup over nodes of the x-difference quotient of Σ.
    pub grad_cov: f64,
    pub a0: f64,
    pub beta: f64,
    pub controlled_diffusion: bool,
    /// Max |r(x,u) - r(x+L,u)| over nodes and axes; `None` off the torus.
    pub reward_period_gap: Option<f64>,
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `‖∇σ‖ √h`, reported only.
    pub fn sigma_gradient_sqrt_h(&self, h: f64) -> f64 {
        self.lip_sigma_x * sqrt(h)
    }

    /// Named constants in a fixed order, for summaries and manifests.
    pub fn constants(&self) -> Vec<(&'static str, f64)> {
        let mut v = alloc::vec![
            ("sup_b", self.sup_b),
            ("sup_sigma", self.sup_sigma),
            ("lip_b_x", self.lip_b_x),
            ("lip_b_u", self.lip_b_u),
            ("lip_sigma_x", self.lip_sigma_x),
            ("sup_r", self.sup_r),
            ("lip_r_x", self.lip_r_x),
            ("lip_r_u", self.lip_r_u),
            ("M1", self.m1),
            ("M2", self.m2),
            ("lambda_min", self.lambda_min),
            ("grad_Sigma", self.grad_cov),
            ("A0", self.a0),
            ("beta", self.beta),
        ];
        if let Some(g) = self.reward_period_gap {
            v.push(("reward_period_gap", g));
        }
        v
    }
}

const PERIOD_TOL: f64 = 1e-12;

/// Measures sup-norms, Lipschitz quotients, ellipticity and A₀ on the grid.
pub fn validate_assumptions(spec: &ProblemSpec, grid: &GridPair) -> Result<AssumptionReport> {
    let sg = &grid.state;
    let cg = &grid.control;
    let dim = sg.dim();
    if dim != spec.dim() {
        return Err(Error::Dimension(format!("grid dimension {dim} vs problem dimension {}", spec.dim())));
    }
    for axis in 0..dim {
        if !(sg.spacing(axis) > 0.0) {
            return Err(Error::Parameter("state spacing must be positive".into()));
        }
    }
    let n = sg.len();
    let m = cg.len();
    let mut b = Vec::with_capacity(n * m);
    let mut r = Vec::with_capacity(n * m);
    let mut sig = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = sg.node(i);
        for j in 0..m {
            let u = cg.node(j);
            let bv = spec.drift(&x, u);
            if bv.iter().take(dim).any(|v| !v.is_finite()) {
                return Err(invalid("drift", i, &x, j, u));
            }
            let rv = spec.reward(&x, u);
            if !rv.is_finite() {
                return Err(invalid("reward", i, &x, j, u));
            }
            let sv = spec.sigma(&x, u);
            if sv.iter().flatten().any(|v| !v.is_finite()) {
                return Err(invalid("diffusion", i, &x, j, u));
            }
            b.push(bv);
            r.push(rv);
            sig.push(sv);
        }
    }
    let at = |i: usize, j: usize| i * m + j;

    let mut rep = AssumptionReport {
        sup_b: 0.0,
        sup_sigma: 0.0,
        lip_b_x: 0.0,
        lip_b_u: 0.0,
        lip_sigma_x: 0.0,
        sup_r: 0.0,
        lip_r_x: 0.0,
        lip_r_u: 0.0,
        m1: 0.0,
        m2: 0.0,
        lambda_min: f64::INFINITY,
        grad_cov: 0.0,
        a0: 0.0,
        beta: spec.discount_beta,
        controlled_diffusion: spec.has_controlled_diffusion(),
        reward_period_gap: None,
        checks: Vec::new(),
    };
    let du = cg.spacing();
    for i in 0..n {
        for j in 0..m {
            let k = at(i, j);
            rep.sup_b = rep.sup_b.max(vec_norm(&b[k], dim));
            rep.sup_sigma = rep.sup_sigma.max(spectral_norm(&sig[k], dim));
            rep.sup_r = rep.sup_r.max(r[k].abs());
            let cov = outer(&sig[k], dim);
            rep.lambda_min = rep.lambda_min.min(min_eigenvalue(&cov, dim));
            for axis in 0..dim {
                if let Some(ip) = sg.neighbor(i, axis, true) {
                    let kp = at(ip, j);
                    let dx = sg.spacing(axis);
                    rep.lip_b_x = rep.lip_b_x.max(vec_diff(&b[kp], &b[k], dim) / dx);
                    rep.lip_r_x = rep.lip_r_x.max((r[kp] - r[k]).abs() / dx);
                    rep.lip_sigma_x = rep.lip_sigma_x.max(frobenius_diff(&sig[kp], &sig[k], dim) / dx);
                    let covp = outer(&sig[kp], dim);
                    rep.grad_cov = rep.grad_cov.max(frobenius_diff(&covp, &cov, dim) / dx);
                }
            }
            if j + 1 < m {
                let kp = at(i, j + 1);
                rep.lip_b_u = rep.lip_b_u.max(vec_diff(&b[kp], &b[k], dim) / du);
                rep.lip_r_u = rep.lip_r_u.max((r[kp] - r[k]).abs() / du);
            }
        }
    }
    rep.m1 = rep.sup_b.max(rep.sup_sigma).max(rep.lip_b_x).max(rep.lip_b_u).max(rep.lip_sigma_x);
    rep.m2 = rep.sup_r.max(rep.lip_r_x).max(rep.lip_r_u);
    rep.a0 = if rep.lambda_min > 0.0 {
        2.0 * rep.lip_b_x + rep.grad_cov * rep.grad_cov / (4.0 * rep.lambda_min)
    } else {
        f64::INFINITY
    };

    if let StateDomain::Torus { period, .. } = spec.state_domain {
        let mut gap: f64 = 0.0;
        for i in 0..n {
            let x = sg.node(i);
            for axis in 0..dim {
                let mut y = x;
                y[axis] += period[axis];
                for j in 0..m {
                    let u = cg.node(j);
                    let ry = spec.reward(&y, u);
                    gap = gap.max((ry - r[at(i, j)]).abs());
                }
            }
        }
        rep.reward_period_gap = Some(gap);
    }

    let (lo, hi) = spec.control_set;
    let mut checks = Vec::new();
    checks.push(AssumptionCheck {
        name: "compact control set",
        passed: lo.is_finite() && hi.is_finite() && hi > lo,
        detail: format!("U = [{lo}, {hi}], |U| = {}", hi - lo),
    });
    checks.push(AssumptionCheck {
        name: "bounded Lipschitz coefficients",
        passed: rep.m1.is_finite() && rep.m2.is_finite(),
        detail: format!("M1 = {}, M2 = {}", rep.m1, rep.m2),
    });
    checks.push(AssumptionCheck {
        name: "uniform ellipticity",
        passed: rep.lambda_min > 0.0,
        detail: format!("lambda_min = {}", rep.lambda_min),
    });
    checks.push(AssumptionCheck {
        name: "diffusion control-independence",
        passed: !rep.controlled_diffusion,
        detail: if rep.controlled_diffusion {
            "diffusion depends on the control: unsupported by the regularized MDP pipeline".to_string()
        } else {
            "diffusion is control-independent".to_string()
        },
    });
    if let Some(gap) = rep.reward_period_gap {
        checks.push(AssumptionCheck {
            name: "reward periodicity",
            passed: gap <= PERIOD_TOL * rep.sup_r.max(1.0),
            detail: format!("max |r(x,u) - r(x+L,u)| = {gap:e}"),
        });
    }
    checks.push(AssumptionCheck {
        name: "gradient-bound discount (beta >= 1 + A0)",
        passed: spec.discount_beta >= 1.0 + rep.a0,
        detail: format!("beta = {}, A0 = {}", spec.discount_beta, rep.a0),
    });
    rep.checks = checks;
    Ok(rep)
}

/// Names accepted by [`builtin_problem`].
pub const BUILTIN_NAMES: &str = "lq1d, advective1d, temperature, instability";

/// Builds a registry problem; `params` override the defaults by key.
pub fn builtin_problem(name: &str, params: &[(String, f64)]) -> Result<ProblemSpec> {
    let defaults: &[(&str, f64)] = match name {
        "lq1d" => &[
            ("period", 8.0),
            ("beta", 3.0),
            ("sigma", core::f64::consts::SQRT_2),
            ("u_min", -1.0),
            ("u_max", 1.0),
            ("state_cost", 1.0),
            ("control_cost", 1.0),
        ],
        "advective1d" => &[
            ("period", 4.0),
            ("beta", 3.0),
            ("sigma", core::f64::consts::SQRT_2),
            ("u_min", -1.0),
            ("u_max", 1.0),
            ("drift_amp", 0.25),
            ("reward_amp", 1.0),
            ("control_cost", 1.0),
        ],
        "temperature" => &[("a", 0.5), ("beta", 1.0)],
        "instability" => &[
            ("beta", 1.0),
            ("gamma", 1.0),
            ("n", 2.0),
            ("h", 0.1),
            ("x_min", 0.0),
            ("x_max", 1.0),
        ],
        _ => {
            return Err(Error::UnknownProblem {
                name: name.to_string(),
                valid: BUILTIN_NAMES,
            })
        }
    };
    let mut resolved: Vec<(String, f64)> = defaults.iter().map(|&(k, v)| (k.to_string(), v)).collect();
    for (k, v) in params {
        match resolved.iter_mut().find(|(key, _)| key == k) {
            Some(slot) => slot.1 = *v,
            None => {
                let valid: Vec<&str> = defaults.iter().map(|(k, _)| *k).collect();
                return Err(Error::Parameter(format!(
                    "problem `{name}` has no parameter `{k}`; valid: {}",
                    valid.join(", ")
                )));
            }
        }
        if !v.is_finite() {
            return Err(Error::Parameter(format!("parameter `{k}` must be finite")));
        }
    }
    let get = |k: &str| resolved.iter().find(|(key, _)| key == k).map(|&(_, v)| v).unwrap();
    let beta = get("beta");
    if !(beta > 0.0) {
        return Err(Error::Parameter(format!("beta must be positive, got {beta}")));
    }
    let spec = match name {
        "lq1d" => lq1d(&get, beta)?,
        "advective1d" => advective1d(&get, beta)?,
        "temperature" => temperature(&get, beta)?,
        _ => instability(&get, beta)?,
    };
    Ok(ProblemSpec {
        name: name.to_string(),
        params: resolved,
        ..spec
    })
}

fn torus_1d(period: f64) -> Result<StateDomain> {
    if !(period > 0.0) {
        return Err(Error::Parameter(format!("period must be positive, got {period}")));
    }
    Ok(StateDomain::Torus {
        dim: 1,
        lower: [-0.5 * period, 0.0],
        period: [period, 0.0],
    })
}

fn control_box(lo: f64, hi: f64) -> Result<(f64, f64)> {
    if hi > lo {
        Ok((lo, hi))
    } else {
        Err(Error::Parameter(format!("empty control interval [{lo}, {hi}]")))
    }
}

fn constant_sigma(s: f64) -> Diffusion {
    Diffusion::Uncontrolled(Arc::new(move |_: &Point| [[s, 0.0], [0.0, 0.0]]))
}

fn lq1d(get: &dyn Fn(&str) -> f64, beta: f64) -> Result<ProblemSpec> {
    let period = get("period");
    let domain = torus_1d(period)?;
    let lower = -0.5 * period;
    let (qx, qu) = (get("state_cost"), get("control_cost"));
    Ok(ProblemSpec {
        name: String::new(),
        drift: Arc::new(|_: &Point, u: f64| [u, 0.0]),
        diffusion: constant_sigma(get("sigma")),
        // x² of the representative in [-L/2, L/2) so the reward is periodic
        reward: Arc::new(move |x: &Point, u: f64| {
            let y = crate::math::wrap_periodic(x[0], lower, period);
            -qx * y * y - qu * u * u
        }),
        discount_beta: beta,
        control_set: control_box(get("u_min"), get("u_max"))?,
        state_domain: domain,
        reference: None,
        params: Vec::new(),
    })
}

fn advective1d(get: &dyn Fn(&str) -> f64, beta: f64) -> Result<ProblemSpec> {
    let period = get("period");
    let domain = torus_1d(period)?;
    let k = 2.0 * PI / period;
    let (amp_b, amp_r, qu) = (get("drift_amp"), get("reward_amp"), get("control_cost"));
    Ok(ProblemSpec {
        name: String::new(),
        drift: Arc::new(move |x: &Point, u: f64| [u + amp_b * sin(k * x[0]), 0.0]),
        diffusion: constant_sigma(get("sigma")),
        reward: Arc::new(move |x: &Point, u: f64| amp_r * cos(k * x[0]) - qu * u * u),
        discount_beta: beta,
        control_set: control_box(get("u_min"), get("u_max"))?,
        state_domain: domain,
        reference: None,
        params: Vec::new(),
    })
}

// Minimizing E∫e^{-βt} f(X) with f = cos, written as maximization of r = -f.
fn temperature(get: &dyn Fn(&str) -> f64, beta: f64) -> Result<ProblemSpec> {
    let a = get("a");
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Parameter(format!("temperature lower bound a must lie in (0, 1), got {a}")));
    }
    Ok(ProblemSpec {
        name: String::new(),
        drift: Arc::new(|x: &Point, _u: f64| [sin(x[0]), 0.0]),
        diffusion: Diffusion::Controlled(Arc::new(|_: &Point, u: f64| [[sqrt(2.0 * u.max(0.0)), 0.0], [0.0, 0.0]])),
        reward: Arc::new(|x: &Point, _u: f64| -cos(x[0])),
        discount_beta: beta,
        control_set: (a, 1.0),
        state_domain: torus_1d(2.0 * PI)?,
        reference: None,
        params: Vec::new(),
    })
}

fn instability(get: &dyn Fn(&str) -> f64, beta: f64) -> Result<ProblemSpec> {
    let (slope, n, h) = (get("gamma"), get("n"), get("h"));
    let (lo, hi) = (get("x_min"), get("x_max"));
    if !(n >= 2.0) {
        return Err(Error::Parameter(format!("instability exponent n must be >= 2, got {n}")));
    }
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::Parameter(format!("instability h must lie in (0, 1), got {h}")));
    }
    if !(hi > lo) {
        return Err(Error::Parameter(format!("empty window [{lo}, {hi}]")));
    }
    let hn = libm::pow(h, n);
    let hn1 = libm::pow(h, n - 1.0);
    let w = 2.0 * PI / h;
    Ok(ProblemSpec {
        name: String::new(),
        drift: Arc::new(|_: &Point, u: f64| [u, 0.0]),
        diffusion: constant_sigma(0.0),
        reward: Arc::new(move |x: &Point, u: f64| {
            let t = w * x[0];
            beta * (slope * x[0] + hn * sin(t)) - slope * u - 2.0 * PI * hn1 * cos(t).abs()
        }),
        discount_beta: beta,
        control_set: (-1.0, 1.0),
        state_domain: StateDomain::Window { lo, hi },
        reference: Some(Arc::new(move |x: &Point| slope * x[0] + hn * sin(w * x[0]))),
        params: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec_trivial() -> ProblemSpec {
        ProblemSpec {
            name: "trivial".into(),
            drift: Arc::new(|_: &Point, _u: f64| [0.0, 0.0]),
            diffusion: constant_sigma(1.0),
            reward: Arc::new(|_: &Point, _u: f64| 0.0),
            discount_beta: 1.0,
            control_set: (-1.0, 1.0),
            state_domain: torus_1d(2.0).unwrap(),
            reference: None,
            params: Vec::new(),
        }
    }

    #[test]
    fn trivial_constants() {
        let s = spec_trivial();
        let rep = validate_assumptions(&s, &s.grids(16, 5).unwrap()).unwrap();
        assert_eq!(rep.m1, 1.0);
        assert_eq!(rep.m2, 0.0);
        assert_eq!(rep.lambda_min, 1.0);
        assert_eq!(rep.a0, 0.0);
        assert!(rep.passed());
    }

    #[test]
    fn trivial_constants_in_2d() {
        let s = ProblemSpec {
            diffusion: Diffusion::Uncontrolled(Arc::new(|_: &Point| [[1.0, 0.0], [0.0, 1.0]])),
            state_domain: StateDomain::Torus {
                dim: 2,
                lower: [0.0, 0.0],
                period: [1.0, 1.0],
            },
            ..spec_trivial()
        };
        let rep = validate_assumptions(&s, &s.grids(6, 3).unwrap()).unwrap();
        assert_eq!((rep.m1, rep.m2, rep.lambda_min, rep.a0), (1.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn advective_without_background_drift() {
        let s = builtin_problem("advective1d", &[("drift_amp".into(), 0.0)]).unwrap();
        let rep = validate_assumptions(&s, &s.grids(64, 9).unwrap()).unwrap();
        assert!((rep.lambda_min - 2.0).abs() < 1e-15);
        assert_eq!(rep.a0, 0.0);
        assert!(rep.check("gradient-bound discount (beta >= 1 + A0)").unwrap().passed);
    }

    #[test]
    fn temperature_is_flagged_controlled() {
        let s = builtin_problem("temperature", &[]).unwrap();
        let rep = validate_assumptions(&s, &s.grids(32, 9).unwrap()).unwrap();
        assert!(rep.controlled_diffusion);
        assert!(!rep.check("diffusion control-independence").unwrap().passed);
        assert!(s.require_uncontrolled().is_err());
        assert_eq!(s.control_set, (0.5, 1.0));
    }

    #[test]
    fn torus_builtins_pass() {
        for name in ["lq1d", "advective1d"] {
            let s = builtin_problem(name, &[]).unwrap();
            let rep = validate_assumptions(&s, &s.grids(128, 17).unwrap()).unwrap();
            assert!(rep.passed(), "{name}: {:?}", rep.checks);
            assert!(rep.a0 >= 0.0);
        }
    }

    #[test]
    fn instability_reward_matches_formula() {
        let s = builtin_problem(
            "instability",
            &[("beta".into(), 1.0), ("gamma".into(), 1.0), ("n".into(), 2.0), ("h".into(), 0.1)],
        )
        .unwrap();
        let x = [0.37, 0.0];
        let u = -0.4;
        let t = 2.0 * PI * x[0] / 0.1;
        let expect = (x[0] + 0.01 * sin(t)) + 0.4 - 2.0 * PI * 0.1 * cos(t).abs();
        assert!((s.reward(&x, u) - expect).abs() < 1e-14);
        let v = s.reference.as_ref().unwrap();
        assert!((v(&x) - (x[0] + 0.01 * sin(t))).abs() < 1e-15);
    }

    #[test]
    fn lq_defaults() {
        let s = builtin_problem("lq1d", &[]).unwrap();
        assert_eq!(s.drift(&[0.3, 0.0], 0.7)[0], 0.7);
        assert!((s.covariance(&[0.3, 0.0], 0.0)[0][0] - 2.0).abs() < 1e-15);
        assert_eq!(s.reward(&[1.0, 0.0], 0.5), -1.25);
        assert_eq!(s.control_set, (-1.0, 1.0));
        assert_eq!(s.state_domain, torus_1d(8.0).unwrap());
    }

    #[test]
    fn registry_errors() {
        assert!(matches!(builtin_problem("nope", &[]), Err(Error::UnknownProblem { .. })));
        let e = builtin_problem("lq1d", &[("bogus".into(), 1.0)]).unwrap_err();
        assert!(format!("{e}").contains("state_cost"));
    }

    #[test]
    fn non_finite_coefficient_names_the_node() {
        let s = ProblemSpec {
            reward: Arc::new(|x: &Point, _u: f64| if x[0] > 0.5 { f64::NAN } else { 0.0 }),
            ..spec_trivial()
        };
        match validate_assumptions(&s, &s.grids(8, 3).unwrap()) {
            Err(Error::InvalidProblem { quantity, location }) => {
                assert_eq!(quantity, "reward");
                assert!(location.contains("state node"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn gamma_is_exact_exponential() {
        let s = builtin_problem("lq1d", &[]).unwrap();
        let p = SolveParams::new(&s, 1.0 / 16.0, 0.5, 32, 9).unwrap();
        assert_eq!(p.discount_gamma(), exp(-3.0 / 16.0));
        assert!(SolveParams::new(&s, 1.5, 0.5, 32, 9).is_err());
        assert!(SolveParams::new(&s, 0.1, 0.0, 32, 9).is_err());
    }
}
