//! Monte Carlo evaluation of randomized feedback policies, independent of the
//! kernel and PDE code paths.
//!
//! Path `k` draws all of its randomness from a ChaCha8 stream selected by
//! `(seed, k)`, so estimates do not depend on the executor or worker count.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::grid::{GridPair, PolicyField, Point};
use crate::math::{exp, floor, ln, pairwise_sum, sqrt};
use crate::problem::{Diffusion, ProblemSpec, SolveParams, StateDomain};

const PATHS_PER_CHUNK: usize = 64;
/// Cap on the number of paths [`record_paths`] will trace.
pub const MAX_RECORDED_PATHS: usize = 100;

/// How the held action is drawn from the policy at a decision time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ActionSampling {
    /// Control node `j` with probability `w_j π_j`: the law the MDP layer integrates against.
    #[default]
    Atomic,
    /// Continuous draw from the piecewise-linear interpolant of the density.
    PiecewiseLinear,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub paths: usize,
    /// Truncation time; `None` picks the smallest T with `e^{-βT}‖r‖/β ≤ tail_tol`.
    pub horizon_t: Option<f64>,
    pub tail_tol: f64,
    /// Euler–Maruyama substeps per decision interval.
    pub euler_substeps: usize,
    /// Step of the continuous-time rollout.
    pub time_step: f64,
    pub rng_seed: u64,
    pub antithetic: bool,
    pub sampling: ActionSampling,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        RolloutConfig {
            paths: 10_000,
            horizon_t: None,
            tail_tol: 1e-4,
            euler_substeps: 8,
            time_step: 1.0 / 128.0,
            rng_seed: 0,
            antithetic: false,
            sampling: ActionSampling::Atomic,
        }
    }
}

impl RolloutConfig {
    fn validate(&self) -> Result<()> {
        if self.paths == 0 {
            return Err(Error::Parameter("rollout needs at least one path".into()));
        }
        if self.antithetic && !self.paths.is_multiple_of(2) {
            return Err(Error::Parameter(format!(
                "antithetic sampling needs an even path count, got {}",
                self.paths
            )));
        }
        if self.euler_substeps == 0 {
            return Err(Error::Parameter("euler_substeps must be at least 1".into()));
        }
        if !(self.tail_tol > 0.0) {
            return Err(Error::Parameter(format!("tail tolerance must be positive, got {}", self.tail_tol)));
        }
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(Error::Parameter(format!("time step must be positive, got {}", self.time_step)));
        }
        if let Some(t) = self.horizon_t {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Parameter(format!("horizon must be positive, got {t}")));
            }
        }
        Ok(())
    }

    /// `ln(‖r‖/(β tol))/β`, never below `min`.
    pub fn resolve_horizon(&self, reward_sup: f64, beta: f64, min: f64) -> f64 {
        match self.horizon_t {
            Some(t) => t,
            None => (ln(reward_sup / (beta * self.tail_tol)) / beta).max(min),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub paths_used: usize,
    /// Bound on the payoff discarded by truncating at `horizon_t`.
    pub tail_bound: f64,
    pub horizon_t: f64,
}

// Everything a single path needs, shared read-only across workers.
struct PathModel<'a> {
    spec: &'a ProblemSpec,
    pi: &'a PolicyField,
    weights: Vec<f64>,
    nodes: Vec<f64>,
    lambda: f64,
    sampling: ActionSampling,
}

impl PathModel<'_> {
    fn new<'a>(spec: &'a ProblemSpec, pi: &'a PolicyField, lambda: f64, sampling: ActionSampling) -> Result<PathModel<'a>> {
        if let StateDomain::Window { .. } = spec.state_domain {
            return Err(Error::Unsupported(format!("rollouts need a torus domain; `{}` is a window", spec.name)));
        }
        let expect = spec.state_grid(pi.state_grid().nodes_per_axis())?;
        if &expect != pi.state_grid() || pi.control_grid().bounds() != spec.control_set {
            return Err(Error::Dimension("policy grid does not match the problem".into()));
        }
        if let Some(p) = pi.values().iter().find(|&&p| p < 0.0) {
            return Err(Error::Domain(format!("negative policy density {p} gives a non-monotone CDF")));
        }
        if lambda > 0.0 && pi.values().iter().any(|&p| p <= 0.0) {
            return Err(Error::Domain("entropy term needs a strictly positive policy".into()));
        }
        Ok(PathModel {
            spec,
            pi,
            weights: pi.control_grid().weights(),
            nodes: pi.control_grid().nodes(),
            lambda,
            sampling,
        })
    }

    fn m(&self) -> usize {
        self.nodes.len()
    }

    // -λ∫π ln π at the interpolated density in `dens`
    fn entropy_bonus(&self, dens: &[f64]) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let s: f64 = dens
            .iter()
            .zip(&self.weights)
            .map(|(&p, &w)| if p > 0.0 { w * p * ln(p) } else { 0.0 })
            .sum();
        -self.lambda * s
    }

    /// Inverse CDF of the action law at density `dens` for uniform `v`.
    fn sample_action(&self, dens: &[f64], v: f64) -> f64 {
        let m = self.m();
        let total: f64 = dens.iter().zip(&self.weights).map(|(p, w)| p * w).sum();
        match self.sampling {
            ActionSampling::Atomic => {
                let target = v * total;
                let mut acc = 0.0;
                for j in 0..m {
                    acc += dens[j] * self.weights[j];
                    if target < acc {
                        return self.nodes[j];
                    }
                }
                // rounding can leave target == total
                let last = (0..m).rev().find(|&j| dens[j] > 0.0).unwrap_or(m - 1);
                self.nodes[last]
            }
            ActionSampling::PiecewiseLinear => {
                let target = v * total;
                let mut acc = 0.0;
                for j in 0..m - 1 {
                    let (a, b) = (dens[j], dens[j + 1]);
                    let du = self.nodes[j + 1] - self.nodes[j];
                    let cell = 0.5 * (a + b) * du;
                    if target < acc + cell || j == m - 2 {
                        // solve a s + (b - a) s²/2 = (target - acc)/du for s in [0, 1]
                        let c = ((target - acc) / du).clamp(0.0, 0.5 * (a + b));
                        let d = b - a;
                        let s = if d.abs() < 1e-12 * (a + b) {
                            if a + b > 0.0 {
                                c / (0.5 * (a + b))
                            } else {
                                0.5
                            }
                        } else {
                            (-a + sqrt((a * a + 2.0 * d * c).max(0.0))) / d
                        };
                        return self.nodes[j] + s.clamp(0.0, 1.0) * du;
                    }
                    acc += cell;
                }
                self.nodes[m - 1]
            }
        }
    }

    fn reward(&self, x: &Point, u: f64) -> f64 {
        self.spec.reward(x, u)
    }
}

fn uniform(rng: &mut ChaCha8Rng, flip: bool) -> f64 {
    let v: f64 = rng.random();
    if flip {
        1.0 - v
    } else {
        v
    }
}

fn normal(rng: &mut ChaCha8Rng, flip: bool) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    if flip {
        -z
    } else {
        z
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// One Euler–Maruyama step with uncontrolled or aggregated diffusion `cov_diag`.
fn euler_step(x: &mut Point, b: Point, sig: &[[f64; 2]; 2], dt: f64, z: [f64; 2], dim: usize) {
    let sq = sqrt(dt);
    for a in 0..dim {
        let mut noise = 0.0;
        for c in 0..dim {
            noise += sig[a][c] * z[c];
        }
        x[a] += b[a] * dt + noise * sq;
    }
}

fn sigma_at(spec: &ProblemSpec, x: &Point, u: f64) -> [[f64; 2]; 2] {
    spec.sigma(x, u)
}

/// Tracks one path of the discrete-time controlled process, calling `visit`
/// at each decision time with `(i, t, state, action, running payoff)`.
fn discrete_path(
    model: &PathModel,
    h: f64,
    beta: f64,
    steps: usize,
    substeps: usize,
    x0: Point,
    rng: &mut ChaCha8Rng,
    flip: bool,
    dens: &mut [f64],
    mut visit: impl FnMut(usize, f64, &Point, f64, f64),
) -> f64 {
    let spec = model.spec;
    let grid = model.pi.state_grid();
    let dim = grid.dim();
    let dt = h / substeps as f64;
    let mut x = grid.wrap(x0);
    let mut payoff = 0.0;
    for i in 0..steps {
        model.pi.density_at(x, dens);
        let u = model.sample_action(dens, uniform(rng, flip));
        let disc = exp(-beta * h * i as f64);
        payoff += disc * h * (model.reward(&x, u) + model.entropy_bonus(dens));
        visit(i, h * i as f64, &x, u, payoff);
        for _ in 0..substeps {
            let b = spec.drift(&x, u);
            let sig = sigma_at(spec, &x, u);
            let z = [normal(rng, flip), if dim > 1 { normal(rng, flip) } else { 0.0 }];
            euler_step(&mut x, b, &sig, dt, z, dim);
            x = grid.wrap(x);
        }
    }
    payoff
}

fn entropy_sup(model: &PathModel) -> f64 {
    let volume = model.pi.control_grid().volume();
    let mut sup = ln(volume).abs();
    for i in 0..model.pi.state_grid().len() {
        sup = sup.max(model.entropy_bonus(model.pi.row(i)).abs() / model.lambda.max(f64::MIN_POSITIVE));
    }
    sup
}

fn reward_and_entropy_sup(model: &PathModel) -> Result<f64> {
    let grid = GridPair::new(*model.pi.state_grid(), *model.pi.control_grid());
    let r = model.spec.reward_sup(&grid)?;
    let e = if model.lambda > 0.0 { model.lambda * entropy_sup(model) } else { 0.0 };
    Ok(r + e)
}

// Runs `path(k, rng, flip)` for every path and reduces to mean and CLT error.
fn estimate(
    cfg: &RolloutConfig,
    exec: &dyn Executor,
    path: &(dyn Fn(&mut ChaCha8Rng, bool) -> f64 + Sync),
) -> (f64, f64, usize) {
    // antithetic pairs are one sample each: the mean of the two mirrored paths
    let samples = if cfg.antithetic { cfg.paths / 2 } else { cfg.paths };
    let mut values = vec![0.0; samples];
    let seed = cfg.rng_seed;
    let antithetic = cfg.antithetic;
    exec.fill(&mut values, PATHS_PER_CHUNK, &|offset, chunk| {
        for (s, out) in chunk.iter_mut().enumerate() {
            let k = (offset + s) as u64;
            if antithetic {
                let a = path(&mut path_rng(seed, k), false);
                let b = path(&mut path_rng(seed, k), true);
                *out = 0.5 * (a + b);
            } else {
                *out = path(&mut path_rng(seed, k), false);
            }
        }
    });
    let n = samples as f64;
    let mean = pairwise_sum(&values) / n;
    let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = if samples > 1 { pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
    (mean, sqrt(var / n), cfg.paths)
}

/// Estimates `V_h[π](x0)`: actions are drawn from `π(Y_ih, ·)` at decision
/// times and held while the state follows Euler–Maruyama substeps.
pub fn rollout_discrete(
    spec: &ProblemSpec,
    params: &SolveParams,
    pi: &PolicyField,
    x0: Point,
    cfg: &RolloutConfig,
    exec: &dyn Executor,
) -> Result<PathEstimate> {
    cfg.validate()?;
    params.validate()?;
    let lambda = params.temperature_lambda;
    let model = PathModel::new(spec, pi, lambda, cfg.sampling)?;
    let (h, beta, gamma) = (params.step_h(), params.discount_beta(), params.discount_gamma());
    let bound = reward_and_entropy_sup(&model)?;
    let horizon = cfg.resolve_horizon(bound, beta, h);
    let steps = (horizon / h).ceil().max(1.0) as usize;
    let horizon = steps as f64 * h;
    let m = model.m();
    let path = |rng: &mut ChaCha8Rng, flip: bool| {
        let mut dens = vec![0.0; m];
        discrete_path(&model, h, beta, steps, cfg.euler_substeps, x0, rng, flip, &mut dens, |_, _, _, _, _| {})
    };
    let (mean, std_error, paths_used) = estimate(cfg, exec, &path);
    Ok(PathEstimate {
        mean,
        std_error,
        paths_used,
        tail_bound: libm::pow(gamma, steps as f64) * h * bound / (1.0 - gamma),
        horizon_t: horizon,
    })
}

/// One traced point of [`record_paths`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathPoint {
    pub path: usize,
    pub t: f64,
    pub state: Point,
    pub action: f64,
    pub running_payoff: f64,
}

/// Traces the first `count.min(MAX_RECORDED_PATHS)` paths of
/// [`rollout_discrete`] at decision times, with identical random streams.
pub fn record_paths(
    spec: &ProblemSpec,
    params: &SolveParams,
    pi: &PolicyField,
    x0: Point,
    cfg: &RolloutConfig,
    count: usize,
) -> Result<Vec<PathPoint>> {
    cfg.validate()?;
    params.validate()?;
    let model = PathModel::new(spec, pi, params.temperature_lambda, cfg.sampling)?;
    let (h, beta) = (params.step_h(), params.discount_beta());
    let bound = reward_and_entropy_sup(&model)?;
    let steps = (cfg.resolve_horizon(bound, beta, h) / h).ceil().max(1.0) as usize;
    let mut dens = vec![0.0; model.m()];
    let mut out = Vec::new();
    for k in 0..count.min(MAX_RECORDED_PATHS).min(cfg.paths) {
        // antithetic runs pair streams, so path 2k+1 is the mirror of 2k
        let (stream, flip) = if cfg.antithetic { (k / 2, k % 2 == 1) } else { (k, false) };
        let mut rng = path_rng(cfg.rng_seed, stream as u64);
        discrete_path(&model, h, beta, steps, cfg.euler_substeps, x0, &mut rng, flip, &mut dens, |_, t, x, u, p| {
            out.push(PathPoint {
                path: k,
                t,
                state: *x,
                action: u,
                running_payoff: p,
            })
        });
    }
    Ok(out)
}

/// Estimates `V[π](x0)` for the aggregated dynamics `dX = b̃(X, π)dt + σ̃ dB`
/// with exact per-step discount weights.
pub fn rollout_continuous(
    spec: &ProblemSpec,
    lambda: f64,
    pi: &PolicyField,
    x0: Point,
    cfg: &RolloutConfig,
    exec: &dyn Executor,
) -> Result<PathEstimate> {
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("temperature must be nonnegative, got {lambda}")));
    }
    let model = PathModel::new(spec, pi, lambda, cfg.sampling)?;
    let grid = *pi.state_grid();
    let dim = grid.dim();
    if spec.has_controlled_diffusion() && dim > 1 {
        return Err(Error::Unsupported("aggregated controlled diffusion is implemented in one dimension".into()));
    }
    let beta = spec.discount_beta;
    let dt = cfg.time_step;
    let bound = reward_and_entropy_sup(&model)?;
    let steps = (cfg.resolve_horizon(bound, beta, dt) / dt).ceil().max(1.0) as usize;
    let horizon = steps as f64 * dt;
    // ∫_{t_k}^{t_k+dt} e^{-βs} ds = e^{-β t_k} (1 - e^{-β dt})/β
    let step_weight = -crate::math::expm1(-beta * dt) / beta;
    let m = model.m();
    let path = |rng: &mut ChaCha8Rng, flip: bool| {
        let mut dens = vec![0.0; m];
        let mut x = grid.wrap(x0);
        let mut payoff = 0.0;
        for k in 0..steps {
            pi.density_at(x, &mut dens);
            let total: f64 = dens.iter().zip(&model.weights).map(|(p, w)| p * w).sum();
            let mut b = [0.0; 2];
            let mut r = 0.0;
            let mut cov = 0.0;
            for j in 0..m {
                let q = dens[j] * model.weights[j] / total;
                let u = model.nodes[j];
                let bj = spec.drift(&x, u);
                b[0] += q * bj[0];
                b[1] += q * bj[1];
                r += q * spec.reward(&x, u);
                if let Diffusion::Controlled(_) = spec.diffusion {
                    cov += q * spec.covariance(&x, u)[0][0];
                }
            }
            payoff += exp(-beta * dt * k as f64) * step_weight * (r + model.entropy_bonus(&dens));
            let sig = match spec.diffusion {
                Diffusion::Controlled(_) => [[sqrt(cov), 0.0], [0.0, 0.0]],
                Diffusion::Uncontrolled(ref s) => s(&x),
            };
            let z = [normal(rng, flip), if dim > 1 { normal(rng, flip) } else { 0.0 }];
            euler_step(&mut x, b, &sig, dt, z, dim);
            x = grid.wrap(x);
        }
        payoff
    };
    let (mean, std_error, paths_used) = estimate(cfg, exec, &path);
    Ok(PathEstimate {
        mean,
        std_error,
        paths_used,
        tail_bound: exp(-beta * horizon) * bound / beta,
        horizon_t: horizon,
    })
}

/// Closed-loop trajectories of the deterministic instability example.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceRecord {
    pub h: f64,
    pub t_end: f64,
    pub times: Vec<f64>,
    /// Sampled-data path: control frozen at decision times.
    pub y: Vec<f64>,
    /// Continuous feedback path.
    pub x: Vec<f64>,
    /// `Y(kh) == kh` bitwise at every decision time up to `t_end`.
    pub y_exact_at_decisions: bool,
    pub sup_abs_x: f64,
    pub sup_divergence: f64,
    pub divergence_at_end: f64,
}

/// Follows `dY = μ*(Y(ih))dt` and `dX = μ*(X)dt` from 0, where
/// `μ*(x) = sign(cos(2πx/h))` maximizes the Hamiltonian of the attached value.
///
/// `Y` moves right forever. `X` reaches the switching point `h/4`, where
/// the feedback flips, and is reported as the zigzag between `±h/4`.
pub fn trajectory_divergence_demo(spec: &ProblemSpec, t_end: f64, samples_per_h: usize) -> Result<DivergenceRecord> {
    let h = spec
        .param("h")
        .filter(|_| spec.name == "instability")
        .ok_or_else(|| Error::Mode(format!("trajectory demo needs the instability problem, got `{}`", spec.name)))?;
    let deterministic = match &spec.diffusion {
        Diffusion::Uncontrolled(s) => {
            let (lo, hi) = match spec.state_domain {
                StateDomain::Window { lo, hi } => (lo, hi),
                StateDomain::Torus { lower, period, .. } => (lower[0], lower[0] + period[0]),
            };
            (0..=64).all(|k| {
                let x = lo + (hi - lo) * k as f64 / 64.0;
                s(&[x, 0.0]).iter().flatten().all(|&v| v == 0.0)
            })
        }
        Diffusion::Controlled(_) => false,
    };
    if !deterministic {
        return Err(Error::Mode("trajectory demo requires sigma = 0".into()));
    }
    if !(t_end > 0.0 && t_end.is_finite()) || samples_per_h == 0 {
        return Err(Error::Parameter("trajectory demo needs t_end > 0 and samples_per_h >= 1".into()));
    }
    let intervals = (t_end / h).ceil() as usize;
    let mut times = Vec::new();
    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut exact = true;
    for k in 0..=intervals {
        let tk = k as f64 * h;
        for s in 0..samples_per_h {
            let t = if s == 0 { tk } else { tk + h * s as f64 / samples_per_h as f64 };
            if t > t_end {
                break;
            }
            // μ*(Y(kh)) = 1 since Y(kh) = kh sits on a maximum of cos
            let yt = if s == 0 { tk } else { tk + (t - tk) };
            if s == 0 && yt != tk {
                exact = false;
            }
            times.push(t);
            y.push(yt);
            x.push(zigzag(t, h));
        }
    }
    if *times.last().unwrap_or(&0.0) < t_end {
        let k = floor(t_end / h);
        times.push(t_end);
        y.push(k * h + (t_end - k * h));
        x.push(zigzag(t_end, h));
    }
    let sup_abs_x = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let sup_divergence = y.iter().zip(&x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
    let divergence_at_end = (y[y.len() - 1] - x[x.len() - 1]).abs();
    Ok(DivergenceRecord {
        h,
        t_end,
        times,
        y,
        x,
        y_exact_at_decisions: exact,
        sup_abs_x,
        sup_divergence,
        divergence_at_end,
    })
}

// X(t) = t - ih on [ih - h/4, ih + h/4) and ih + h/2 - t on [ih + h/4, ih + 3h/4).
fn zigzag(t: f64, h: f64) -> f64 {
    let i = floor((t + 0.25 * h) / h);
    let center = i * h;
    if t < center + 0.25 * h {
        t - center
    } else {
        center + 0.5 * h - t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::problem::builtin_problem;
    use alloc::string::String;
    use alloc::sync::Arc;

    fn problem(name: &str, over: &[(&str, f64)]) -> ProblemSpec {
        let ps: Vec<(String, f64)> = over.iter().map(|&(k, v)| (k.into(), v)).collect();
        builtin_problem(name, &ps).unwrap()
    }

    fn zero_reward() -> ProblemSpec {
        let mut spec = problem("lq1d", &[]);
        spec.reward = Arc::new(|_: &Point, _u: f64| 0.0);
        spec
    }

    #[test]
    fn zero_reward_uniform_discrete_is_exact() {
        let spec = zero_reward();
        let params = SolveParams::new(&spec, 1.0 / 16.0, 0.5, 32, 9).unwrap();
        let grid = spec.grids(32, 9).unwrap();
        let pi = PolicyField::uniform(grid.state, grid.control);
        let cfg = RolloutConfig {
            paths: 50,
            horizon_t: Some(2.0),
            ..RolloutConfig::default()
        };
        let est = rollout_discrete(&spec, &params, &pi, [0.0, 0.0], &cfg, &Serial).unwrap();
        let gamma = params.discount_gamma();
        let k = (2.0_f64 * 16.0) as i32;
        let expect = 0.5 / 16.0 * ln(2.0) * (1.0 - libm::pow(gamma, k as f64)) / (1.0 - gamma);
        assert!((est.mean - expect).abs() < 1e-12, "{} vs {expect}", est.mean);
        assert!(est.std_error < 1e-14);
    }

    #[test]
    fn zero_reward_uniform_continuous_is_exact() {
        let spec = zero_reward();
        let grid = spec.grids(32, 9).unwrap();
        let pi = PolicyField::uniform(grid.state, grid.control);
        let cfg = RolloutConfig {
            paths: 20,
            horizon_t: Some(3.0),
            time_step: 1.0 / 64.0,
            ..RolloutConfig::default()
        };
        let est = rollout_continuous(&spec, 0.5, &pi, [1.0, 0.0], &cfg, &Serial).unwrap();
        let expect = 0.5 * ln(2.0) * (1.0 - exp(-3.0 * 3.0)) / 3.0;
        assert!((est.mean - expect).abs() < 1e-12);
    }

    #[test]
    fn seeds_replay_bitwise() {
        let spec = problem("advective1d", &[]);
        let params = SolveParams::new(&spec, 1.0 / 8.0, 0.5, 32, 9).unwrap();
        let grid = spec.grids(32, 9).unwrap();
        let pi = PolicyField::uniform(grid.state, grid.control);
        let cfg = RolloutConfig {
            paths: 300,
            rng_seed: 7,
            ..RolloutConfig::default()
        };
        let a = rollout_discrete(&spec, &params, &pi, [0.3, 0.0], &cfg, &Serial).unwrap();
        let b = rollout_discrete(&spec, &params, &pi, [0.3, 0.0], &cfg, &Serial).unwrap();
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        let c = rollout_discrete(&spec, &params, &pi, [0.3, 0.0], &RolloutConfig { rng_seed: 8, ..cfg }, &Serial).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn antithetic_agrees_with_plain() {
        let spec = problem("advective1d", &[]);
        let grid = spec.grids(32, 9).unwrap();
        let pi = PolicyField::uniform(grid.state, grid.control);
        let cfg = RolloutConfig {
            paths: 2000,
            rng_seed: 3,
            time_step: 1.0 / 32.0,
            ..RolloutConfig::default()
        };
        let plain = rollout_continuous(&spec, 0.5, &pi, [0.0, 0.0], &cfg, &Serial).unwrap();
        let anti = rollout_continuous(&spec, 0.5, &pi, [0.0, 0.0], &RolloutConfig { antithetic: true, ..cfg }, &Serial).unwrap();
        let se = sqrt(plain.std_error * plain.std_error + anti.std_error * anti.std_error);
        assert!((plain.mean - anti.mean).abs() <= 3.0 * se);
    }

    #[test]
    fn atomic_sampling_matches_policy_law() {
        let spec = problem("lq1d", &[]);
        let grid = spec.grids(16, 5).unwrap();
        let dens = [1.0, 3.0, 2.0, 0.5, 1.5];
        let pi = PolicyField::x_independent(grid.state, grid.control, &dens).unwrap();
        let model = PathModel::new(&spec, &pi, 0.0, ActionSampling::Atomic).unwrap();
        let mut rng = path_rng(11, 0);
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            let u = model.sample_action(pi.row(0), uniform(&mut rng, false));
            let j = model.nodes.iter().position(|&v| v == u).unwrap();
            counts[j] += 1;
        }
        let w = grid.control.weights();
        let chi2: f64 = (0..5)
            .map(|j| {
                let e = n as f64 * w[j] * pi.row(0)[j];
                (counts[j] as f64 - e) * (counts[j] as f64 - e) / e
            })
            .sum();
        // 4 degrees of freedom, 99.9% quantile
        assert!(chi2 < 18.47, "chi2 = {chi2}");
    }

    #[test]
    fn piecewise_linear_sampling_inverts_the_cdf() {
        let spec = problem("lq1d", &[]);
        let grid = spec.grids(16, 3).unwrap();
        let pi = PolicyField::x_independent(grid.state, grid.control, &[1.0, 1.0, 3.0]).unwrap();
        let model = PathModel::new(&spec, &pi, 0.0, ActionSampling::PiecewiseLinear).unwrap();
        // normalized density is 1/3 on [-1, 0] and (1 + 2u)/3 on [0, 1]
        let row = pi.row(0);
        assert!((model.sample_action(row, 0.0) + 1.0).abs() < 1e-12);
        assert!(model.sample_action(row, 1.0 / 3.0).abs() < 1e-12);
        let cdf = |u: f64| {
            if u <= 0.0 {
                (u + 1.0) * row[0]
            } else {
                row[0] + row[1] * u + (row[2] - row[1]) * u * u / 2.0
            }
        };
        for v in [0.05, 0.2, 0.4, 0.7, 0.95] {
            let u = model.sample_action(row, v);
            assert!((cdf(u) - v).abs() < 1e-12, "v {v} u {u} cdf {}", cdf(u));
        }
    }

    #[test]
    fn instability_demo_pins() {
        let spec = problem("instability", &[("h", 0.1)]);
        let rec = trajectory_divergence_demo(&spec, 10.0, 8).unwrap();
        assert!(rec.y_exact_at_decisions);
        for (k, (&t, &y)) in rec.times.iter().zip(&rec.y).enumerate().step_by(8).take(101) {
            assert_eq!(t, (k / 8) as f64 * 0.1);
            assert_eq!(y, t);
        }
        assert!(rec.sup_abs_x <= 0.025 + 1e-12);
        for h in [0.1, 0.01] {
            let spec = problem("instability", &[("h", h)]);
            let rec = trajectory_divergence_demo(&spec, 1.0, 4).unwrap();
            assert_eq!(*rec.y.last().unwrap(), 1.0);
            assert!(rec.x.last().unwrap().abs() <= h / 4.0 + 1e-12);
            assert!(rec.sup_divergence >= 1.0 - h / 4.0);
        }
        for t in [0.0, 0.001, 0.01, 0.02] {
            assert_eq!(zigzag(t, 0.1), t);
        }
        assert!(trajectory_divergence_demo(&problem("lq1d", &[]), 1.0, 4).is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let spec = problem("lq1d", &[]);
        let params = SolveParams::new(&spec, 0.125, 0.5, 16, 5).unwrap();
        let grid = spec.grids(16, 5).unwrap();
        let pi = PolicyField::uniform(grid.state, grid.control);
        for cfg in [
            RolloutConfig { paths: 0, ..Default::default() },
            RolloutConfig { euler_substeps: 0, ..Default::default() },
            RolloutConfig { paths: 3, antithetic: true, ..Default::default() },
        ] {
            assert!(rollout_discrete(&spec, &params, &pi, [0.0, 0.0], &cfg, &Serial).is_err());
        }
    }
}
