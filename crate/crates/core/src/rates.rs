//! (h, λ) sweeps: cross-evaluation errors between the discrete-time and
//! continuous-time layers, log-log rate fits, and the λ = h^{1/(N+1)} schedule.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::grid::{sup_norm_diff, GridPair, PolicyField, ScalarField};
use crate::hjb::{evaluate_policy_continuous, solve_classical_hjb, solve_exploratory_hjb, ClassicalSolution, ExploratorySolution, HjbOptions};
use crate::kernel::build_kernel;
use crate::math::{ln, sqrt};
use crate::mdp::Mdp;
use crate::problem::{ProblemSpec, SolveParams};

/// Dimension of the control set; every builtin has scalar controls.
pub const CONTROL_DIM: usize = 1;
/// Relative change allowed when the state grid is doubled.
pub const REFINEMENT_TOL: f64 = 0.2;
const MIN_FIT_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ln y` on `ln x`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Result<LogLogFit> {
    if xs.len() != ys.len() {
        return Err(Error::Dimension(format!("{} abscissae but {} ordinates", xs.len(), ys.len())));
    }
    if xs.len() < 2 {
        return Err(Error::Parameter("a log-log fit needs at least two points".into()));
    }
    if let Some(v) = xs.iter().chain(ys).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::Domain(format!("log-log fit needs positive finite data, got {v}")));
    }
    let lx: Vec<f64> = xs.iter().map(|&x| ln(x)).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| ln(y)).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Domain("log-log fit needs at least two distinct abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = lx.iter().zip(&ly).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let ss_tot: f64 = ly.iter().map(|y| (y - my) * (y - my)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Resolution and tolerances shared by every cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepConfig {
    pub state_nodes: usize,
    pub control_nodes: usize,
    pub fp_substeps: usize,
    /// `None` keeps the [`SolveParams`] default.
    pub fixed_point_tol: Option<f64>,
    pub hjb: HjbOptions,
    pub vi_max_iterations: usize,
    /// Re-run every cell on a doubled state grid and flag errors that move by more than 20%.
    pub refinement_check: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            state_nodes: 512,
            control_nodes: 17,
            fp_substeps: SolveParams::DEFAULT_FP_SUBSTEPS,
            fixed_point_tol: None,
            hjb: HjbOptions::default(),
            vi_max_iterations: SolveParams::DEFAULT_MAX_ITERATIONS,
            refinement_check: false,
        }
    }
}

impl SweepConfig {
    fn params(&self, spec: &ProblemSpec, h: f64, lambda: f64, state_nodes: usize) -> Result<SolveParams> {
        let mut p = SolveParams::new(spec, h, lambda, state_nodes, self.control_nodes)?;
        p.fp_substeps = self.fp_substeps;
        p.max_iterations = self.vi_max_iterations;
        if let Some(t) = self.fixed_point_tol {
            p.fixed_point_tol = t;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refinement {
    pub state_nodes: usize,
    /// Largest relative change of a recorded error after doubling the grid.
    pub max_relative_change: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRecord {
    pub h: f64,
    pub lambda: f64,
    pub state_nodes: usize,
    pub control_nodes: usize,
    /// `‖V - V_h‖`
    pub err_v_vs_vh: f64,
    /// `‖V[π*_h] - V‖`
    pub err_plugin_cont: f64,
    /// `‖V_h[π*] - V_h‖`
    pub err_plugin_disc: f64,
    /// `‖v - V[π*_h]‖`
    pub err_to_classical: f64,
    /// `‖v - v[π*_h]‖`, the unregularized value of the MDP policy
    pub err_to_classical_unreg: f64,
    /// `‖v - v[π*]‖`, the unregularized value of the continuous Gibbs policy
    pub err_relaxed_to_classical: f64,
    /// `‖V[π*_h] - V_h‖`, the middle leg of the triangle check
    pub err_plugin_vs_vh: f64,
    /// `max(V[π*_h] - V)`; nonpositive up to solver tolerance.
    pub plugin_cont_excess: f64,
    /// `max(V_h[π*] - V_h)`
    pub plugin_disc_excess: f64,
    pub tolerance: f64,
    pub pi_h_sup: f64,
    pub pi_sup: f64,
    /// `‖π*_h‖ λ^N`
    pub pi_h_sup_scaled: f64,
    pub vi_iterations: usize,
    pub vi_residual: f64,
    pub hjb_iterations: usize,
    pub hjb_residual: f64,
    pub refinement: Option<Refinement>,
}

impl ErrorRecord {
    pub fn plugin_ok(&self) -> bool {
        self.plugin_cont_excess <= 2.0 * self.tolerance && self.plugin_disc_excess <= 2.0 * self.tolerance
    }

    /// `‖V - V_h‖ ≤ ‖V - V[π*_h]‖ + ‖V[π*_h] - V_h‖` on the recorded norms.
    pub fn triangle_ok(&self) -> bool {
        self.err_v_vs_vh <= self.err_plugin_cont + self.err_plugin_vs_vh
    }

    pub fn errors(&self) -> [f64; 6] {
        [
            self.err_v_vs_vh,
            self.err_plugin_cont,
            self.err_plugin_disc,
            self.err_to_classical,
            self.err_to_classical_unreg,
            self.err_relaxed_to_classical,
        ]
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        METRICS.iter().position(|&m| m == name).map(|k| self.errors()[k])
    }
}

/// Metric names in the order of [`ErrorRecord::errors`].
pub const METRICS: [&str; 6] = [
    "err_V_vs_Vh",
    "err_plugin_cont",
    "err_plugin_disc",
    "err_to_classical",
    "err_to_classical_unreg",
    "err_relaxed_to_classical",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Abscissa {
    HLogH,
    H,
    LambdaLogLambda,
    Lambda,
}

impl Abscissa {
    pub fn name(self) -> &'static str {
        match self {
            Abscissa::HLogH => "h_abs_ln_h",
            Abscissa::H => "h",
            Abscissa::LambdaLogLambda => "lambda_abs_ln_lambda",
            Abscissa::Lambda => "lambda",
        }
    }

    pub fn eval(self, h: f64, lambda: f64) -> f64 {
        match self {
            Abscissa::HLogH => h * ln(h).abs(),
            Abscissa::H => h,
            Abscissa::LambdaLogLambda => lambda * ln(lambda).abs(),
            Abscissa::Lambda => lambda,
        }
    }

    fn varies_h(self) -> bool {
        matches!(self, Abscissa::HLogH | Abscissa::H)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    pub metric: &'static str,
    pub against: Abscissa,
    /// The parameter held fixed: λ for h-fits, h for λ-fits.
    pub fixed: f64,
    pub points: usize,
    pub fit: LogLogFit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissingCell {
    pub h: f64,
    pub lambda: f64,
    pub cause: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub records: Vec<ErrorRecord>,
    pub missing: Vec<MissingCell>,
    pub fits: Vec<RateFit>,
    pub classical_iterations: usize,
    pub classical_residual: f64,
}

impl RateReport {
    pub fn fit(&self, metric: &str, against: Abscissa, fixed: f64) -> Option<&RateFit> {
        self.fits
            .iter()
            .find(|f| f.metric == metric && f.against == against && f.fixed == fixed)
    }
}

// Everything one (h, λ) cell needs that is shared with other cells.
struct Shared<'a> {
    spec: &'a ProblemSpec,
    grid: GridPair,
    classical: &'a ClassicalSolution,
}

fn check_lists(h_list: &[f64], lambda_list: &[f64]) -> Result<()> {
    for &h in h_list {
        if !(h > 0.0 && h < 1.0) {
            return Err(Error::Parameter(format!("time step h must lie in (0, 1), got {h}")));
        }
    }
    for &l in lambda_list {
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Parameter(format!("temperature must be positive, got {l}")));
        }
    }
    Ok(())
}

struct DiscreteSide {
    params: SolveParams,
    vh: ScalarField,
    pi_h: PolicyField,
    vi_iterations: usize,
    vi_residual: f64,
    vh_pi_star: ScalarField,
}

fn discrete_side(
    shared: &Shared,
    kernel: &crate::kernel::TransitionKernel,
    params: SolveParams,
    pi_star: &PolicyField,
    exec: &dyn Executor,
) -> Result<DiscreteSide> {
    let mdp = Mdp::new(shared.spec, &params, kernel)?;
    let fp = mdp.solve_vh(exec)?;
    let pi_h = mdp.gibbs_policy(&fp.value, exec)?.policy;
    let pi_star = pi_star.resample(kernel.grid().state)?;
    let vh_pi_star = mdp.evaluate_policy(&pi_star, exec)?.value;
    Ok(DiscreteSide {
        params,
        vh: fp.value,
        pi_h,
        vi_iterations: fp.iterations,
        vi_residual: fp.residual,
        vh_pi_star,
    })
}

fn max_excess(a: &ScalarField, b: &ScalarField) -> Result<f64> {
    Ok(a.zip_with(b, |x, y| x - y)?
        .values()
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max))
}

fn assemble(shared: &Shared, lambda: f64, cont: &ExploratorySolution, disc: &DiscreteSide, tol_hjb: f64) -> Result<ErrorRecord> {
    let spec = shared.spec;
    let grid = &shared.grid;
    let pi_h = disc.pi_h.resample(grid.state)?;
    let v_pi_h = evaluate_policy_continuous(spec, lambda, grid, &pi_h, true)?;
    let v_pi_h_unreg = evaluate_policy_continuous(spec, lambda, grid, &pi_h, false)?;
    let v_pi_star_unreg = evaluate_policy_continuous(spec, lambda, grid, &cont.policy, false)?;
    let classical = &shared.classical.value;
    let record = ErrorRecord {
        h: disc.params.step_h(),
        lambda,
        state_nodes: grid.state.nodes_per_axis(),
        control_nodes: grid.control.len(),
        err_v_vs_vh: sup_norm_diff(&cont.value, &disc.vh)?,
        err_plugin_cont: sup_norm_diff(&v_pi_h, &cont.value)?,
        err_plugin_disc: sup_norm_diff(&disc.vh_pi_star, &disc.vh)?,
        err_to_classical: sup_norm_diff(classical, &v_pi_h)?,
        err_to_classical_unreg: sup_norm_diff(classical, &v_pi_h_unreg)?,
        err_relaxed_to_classical: sup_norm_diff(classical, &v_pi_star_unreg)?,
        err_plugin_vs_vh: sup_norm_diff(&v_pi_h, &disc.vh)?,
        plugin_cont_excess: max_excess(&v_pi_h, &cont.value)?,
        plugin_disc_excess: max_excess(&disc.vh_pi_star, &disc.vh)?,
        tolerance: disc.params.fixed_point_tol.max(tol_hjb),
        pi_h_sup: disc.pi_h.sup_norm(),
        pi_sup: cont.policy.sup_norm(),
        pi_h_sup_scaled: disc.pi_h.sup_norm() * libm::pow(lambda, CONTROL_DIM as f64),
        vi_iterations: disc.vi_iterations,
        vi_residual: disc.vi_residual,
        hjb_iterations: cont.iterations,
        hjb_residual: cont.residual,
        refinement: None,
    };
    if let Some(k) = record.errors().iter().position(|e| !e.is_finite()) {
        return Err(Error::Solver(format!("{} is not finite", METRICS[k])));
    }
    Ok(record)
}

fn cell_on_grid(
    spec: &ProblemSpec,
    cfg: &SweepConfig,
    h: f64,
    lambda: f64,
    nodes: usize,
    exec: &dyn Executor,
) -> Result<ErrorRecord> {
    let grid = spec.grids(nodes, cfg.control_nodes)?;
    let classical = solve_classical_hjb(spec, &grid, &cfg.hjb)?;
    let cont = solve_exploratory_hjb(spec, lambda, &grid, &cfg.hjb)?;
    let params = cfg.params(spec, h, lambda, nodes)?;
    let kernel = build_kernel(spec, &params, &grid, exec)?;
    let shared = Shared {
        spec,
        grid,
        classical: &classical,
    };
    let disc = discrete_side(&shared, &kernel, params, &cont.policy, exec)?;
    assemble(&shared, lambda, &cont, &disc, cfg.hjb.resolved_tol(spec, &grid)?)
}

fn refinement(spec: &ProblemSpec, cfg: &SweepConfig, base: &ErrorRecord, exec: &dyn Executor) -> Result<Refinement> {
    let nodes = 2 * base.state_nodes;
    let fine = cell_on_grid(spec, cfg, base.h, base.lambda, nodes, exec)?;
    let change = base
        .errors()
        .iter()
        .zip(fine.errors())
        .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max);
    Ok(Refinement {
        state_nodes: nodes,
        max_relative_change: change,
        stable: change <= REFINEMENT_TOL,
    })
}

/// Solves every (h, λ) cell. Kernels are built once per h and the HJB once
/// per λ; a failed cell is recorded as missing and the sweep continues.
pub fn run_sweep(
    spec: &ProblemSpec,
    h_list: &[f64],
    lambda_list: &[f64],
    cfg: &SweepConfig,
    exec: &dyn Executor,
) -> Result<RateReport> {
    check_lists(h_list, lambda_list)?;
    let grid = spec.grids(cfg.state_nodes, cfg.control_nodes)?;
    let classical = solve_classical_hjb(spec, &grid, &cfg.hjb)?;
    let tol_hjb = cfg.hjb.resolved_tol(spec, &grid)?;
    let continuous: Vec<Result<ExploratorySolution>> = lambda_list
        .iter()
        .map(|&l| solve_exploratory_hjb(spec, l, &grid, &cfg.hjb))
        .collect();
    let shared = Shared {
        spec,
        grid,
        classical: &classical,
    };
    let mut records = Vec::new();
    let mut missing = Vec::new();
    for &h in h_list {
        let kernel = cfg
            .params(spec, h, lambda_list.first().copied().unwrap_or(1.0), cfg.state_nodes)
            .and_then(|p| build_kernel(spec, &p, &grid, exec));
        for (k, &lambda) in lambda_list.iter().enumerate() {
            let cell = (|| {
                let kernel = kernel.as_ref().map_err(Clone::clone)?;
                let cont = continuous[k].as_ref().map_err(Clone::clone)?;
                let params = cfg.params(spec, h, lambda, cfg.state_nodes)?;
                let disc = discrete_side(&shared, kernel, params, &cont.policy, exec)?;
                let mut rec = assemble(&shared, lambda, cont, &disc, tol_hjb)?;
                if cfg.refinement_check {
                    rec.refinement = Some(refinement(spec, cfg, &rec, exec)?);
                }
                Ok::<_, Error>(rec)
            })();
            match cell {
                Ok(r) => records.push(r),
                Err(e) => missing.push(MissingCell {
                    h,
                    lambda,
                    cause: e.to_string(),
                }),
            }
        }
    }
    let fits = fit_records(&records);
    Ok(RateReport {
        records,
        missing,
        fits,
        classical_iterations: classical.iterations,
        classical_residual: classical.residual,
    })
}

/// h-fits at every λ with at least four surviving cells, and λ-fits at every h.
pub fn fit_records(records: &[ErrorRecord]) -> Vec<RateFit> {
    let mut fits = Vec::new();
    let mut lambdas: Vec<f64> = Vec::new();
    let mut hs: Vec<f64> = Vec::new();
    for r in records {
        if !lambdas.contains(&r.lambda) {
            lambdas.push(r.lambda);
        }
        if !hs.contains(&r.h) {
            hs.push(r.h);
        }
    }
    for against in [Abscissa::HLogH, Abscissa::H, Abscissa::LambdaLogLambda, Abscissa::Lambda] {
        let fixed_values = if against.varies_h() { &lambdas } else { &hs };
        for &fixed in fixed_values {
            let group: Vec<&ErrorRecord> = records
                .iter()
                .filter(|r| if against.varies_h() { r.lambda == fixed } else { r.h == fixed })
                .collect();
            if group.len() < MIN_FIT_POINTS {
                continue;
            }
            let xs: Vec<f64> = group.iter().map(|r| against.eval(r.h, r.lambda)).collect();
            for (k, &metric) in METRICS.iter().enumerate() {
                let ys: Vec<f64> = group.iter().map(|r| r.errors()[k]).collect();
                // exact zeros have no logarithm; such a metric gets no fit
                if let Ok(fit) = fit_loglog(&xs, &ys) {
                    fits.push(RateFit {
                        metric,
                        against,
                        fixed,
                        points: group.len(),
                        fit,
                    });
                }
            }
        }
    }
    fits
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleRow {
    pub h: f64,
    pub lambda: f64,
    /// `‖v - V[π*_h]‖`
    pub err_to_classical: f64,
    /// `‖v - v[π*_h]‖`
    pub err_to_classical_unreg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleReport {
    pub rows: Vec<ScheduleRow>,
    pub missing: Vec<MissingCell>,
    /// Slope against `h^{1/(N+1)} |ln h|`, when at least three rows survive.
    pub fit: Option<LogLogFit>,
}

impl ScheduleReport {
    /// `err_to_classical` strictly decreases as h decreases.
    pub fn strictly_decreasing(&self) -> bool {
        let mut rows = self.rows.clone();
        rows.sort_by(|a, b| b.h.total_cmp(&a.h));
        rows.windows(2).all(|w| w[1].err_to_classical < w[0].err_to_classical)
    }
}

/// `λ = h^{1/(N+1)}`.
pub fn scheduled_lambda(h: f64) -> f64 {
    libm::pow(h, 1.0 / (CONTROL_DIM as f64 + 1.0))
}

/// Error to the classical value along the schedule `λ = h^{1/(N+1)}`.
pub fn schedule_eval(spec: &ProblemSpec, h_list: &[f64], cfg: &SweepConfig, exec: &dyn Executor) -> Result<ScheduleReport> {
    let pairs: Vec<(f64, f64)> = h_list.iter().map(|&h| (h, scheduled_lambda(h))).collect();
    evaluate_pairs(spec, &pairs, cfg, exec)
}

/// [`schedule_eval`] on explicit (h, λ) pairs, for off-schedule comparisons.
pub fn evaluate_pairs(spec: &ProblemSpec, pairs: &[(f64, f64)], cfg: &SweepConfig, exec: &dyn Executor) -> Result<ScheduleReport> {
    for &(h, l) in pairs {
        check_lists(&[h], &[l])?;
    }
    if pairs.is_empty() {
        return Ok(ScheduleReport {
            rows: Vec::new(),
            missing: Vec::new(),
            fit: None,
        });
    }
    let grid = spec.grids(cfg.state_nodes, cfg.control_nodes)?;
    let classical = solve_classical_hjb(spec, &grid, &cfg.hjb)?;
    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for &(h, lambda) in pairs {
        let row = (|| {
            let params = cfg.params(spec, h, lambda, cfg.state_nodes)?;
            let kernel = build_kernel(spec, &params, &grid, exec)?;
            let mdp = Mdp::new(spec, &params, &kernel)?;
            let vh = mdp.solve_vh(exec)?.value;
            let pi_h = mdp.gibbs_policy(&vh, exec)?.policy;
            let v_pi = evaluate_policy_continuous(spec, lambda, &grid, &pi_h, true)?;
            let v_pi_unreg = evaluate_policy_continuous(spec, lambda, &grid, &pi_h, false)?;
            Ok::<_, Error>(ScheduleRow {
                h,
                lambda,
                err_to_classical: sup_norm_diff(&classical.value, &v_pi)?,
                err_to_classical_unreg: sup_norm_diff(&classical.value, &v_pi_unreg)?,
            })
        })();
        match row {
            Ok(r) => rows.push(r),
            Err(e) => missing.push(MissingCell {
                h,
                lambda,
                cause: e.to_string(),
            }),
        }
    }
    let fit = if rows.len() >= 3 {
        let xs: Vec<f64> = rows.iter().map(|r| sqrt(r.h) * ln(r.h).abs()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.err_to_classical).collect();
        fit_loglog(&xs, &ys).ok()
    } else {
        None
    };
    Ok(ScheduleReport { rows, missing, fit })
}
