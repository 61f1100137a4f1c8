//! The entropy-regularized discrete-time MDP: soft Bellman operators, value
//! iteration, Gibbs policies and fixed-policy evaluation.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::grid::{sup_norm_diff, PolicyField, ScalarField};
use crate::kernel::{chunk_rows, TransitionKernel};
use crate::math::{exp, ln, log_sum_exp_weighted};
use crate::problem::{ProblemSpec, SolveParams};

/// Precomputed rewards and quadrature weights tied to one kernel.
#[derive(Debug, Clone)]
pub struct Mdp<'a> {
    kernel: &'a TransitionKernel,
    params: SolveParams,
    // reward[i * m + j] = r(x_i, u_j)
    reward: Vec<f64>,
    weights: Vec<f64>,
    reward_sup: f64,
}

/// `Q(x,u) = r(x,u) h + γ (K_u W)(x)`, node-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftQ {
    pub values: Vec<f64>,
    pub controls: usize,
}

impl SoftQ {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.controls..(i + 1) * self.controls]
    }
}

/// Gibbs policy together with `ln Z(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsPolicy {
    pub policy: PolicyField,
    pub log_partition: ScalarField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    pub value: ScalarField,
    pub iterations: usize,
    /// Final increment `‖W_{k+1} - W_k‖_∞`.
    pub last_increment: f64,
    /// `‖T W - W‖_∞` of the returned field.
    pub residual: f64,
}

impl<'a> Mdp<'a> {
    pub fn new(spec: &ProblemSpec, params: &SolveParams, kernel: &'a TransitionKernel) -> Result<Self> {
        params.validate()?;
        if (kernel.step_h() - params.step_h()).abs() > 0.0 {
            return Err(Error::Parameter(format!(
                "kernel built for h = {} but parameters use h = {}",
                kernel.step_h(),
                params.step_h()
            )));
        }
        if (params.discount_beta() - spec.discount_beta).abs() > 0.0 {
            return Err(Error::Parameter("parameters were built for a different discount".into()));
        }
        let grid = kernel.grid();
        let n = grid.state.len();
        let m = grid.control.len();
        let mut reward = Vec::with_capacity(n * m);
        let mut reward_sup: f64 = 0.0;
        for i in 0..n {
            let x = grid.state.node(i);
            for j in 0..m {
                let r = spec.reward(&x, grid.control.node(j));
                if !r.is_finite() {
                    return Err(Error::InvalidProblem {
                        quantity: "reward",
                        location: format!("state node {i}, control node {j}"),
                    });
                }
                reward_sup = reward_sup.max(r.abs());
                reward.push(r);
            }
        }
        Ok(Mdp {
            kernel,
            params: *params,
            reward,
            weights: grid.control.weights(),
            reward_sup,
        })
    }

    pub fn kernel(&self) -> &TransitionKernel {
        self.kernel
    }

    pub fn params(&self) -> &SolveParams {
        &self.params
    }

    /// Grid-sampled ‖r‖_∞.
    pub fn reward_sup(&self) -> f64 {
        self.reward_sup
    }

    fn lambda_h(&self) -> Result<f64> {
        let lambda = self.params.temperature_lambda;
        if !(lambda > 0.0) {
            return Err(Error::Parameter(format!("temperature must be positive, got {lambda}")));
        }
        Ok(lambda * self.params.step_h())
    }

    fn check_field(&self, w: &ScalarField) -> Result<()> {
        if w.grid() != &self.kernel.grid().state {
            return Err(Error::Dimension("value field and kernel use different state grids".into()));
        }
        Ok(())
    }

    fn check_policy(&self, pi: &PolicyField) -> Result<()> {
        let g = self.kernel.grid();
        if pi.state_grid() != &g.state || pi.control_grid() != &g.control {
            return Err(Error::Dimension("policy and kernel use different grids".into()));
        }
        Ok(())
    }

    pub fn soft_q(&self, w: &ScalarField, exec: &dyn Executor) -> Result<SoftQ> {
        self.check_field(w)?;
        let m = self.kernel.num_controls();
        let mut values = vec![0.0; self.reward.len()];
        self.kernel.expectations(w.values(), &mut values, exec);
        let h = self.params.step_h();
        let gamma = self.params.discount_gamma();
        for (q, r) in values.iter_mut().zip(&self.reward) {
            *q = r * h + gamma * *q;
        }
        Ok(SoftQ { values, controls: m })
    }

    fn log_partition(&self, q: &SoftQ, lh: f64) -> Vec<f64> {
        let m = q.controls;
        let mut scaled = vec![0.0; m];
        (0..q.values.len() / m)
            .map(|i| {
                for (s, v) in scaled.iter_mut().zip(q.row(i)) {
                    *s = v / lh;
                }
                log_sum_exp_weighted(&scaled, &self.weights)
            })
            .collect()
    }

    /// `T*W = λh ln ∫ exp(Q/(λh)) du`.
    pub fn soft_bellman(&self, w: &ScalarField, exec: &dyn Executor) -> Result<ScalarField> {
        let lh = self.lambda_h()?;
        let q = self.soft_q(w, exec)?;
        let values = self.log_partition(&q, lh).into_iter().map(|z| lh * z).collect();
        ScalarField::new(self.kernel.grid().state, values)
    }

    /// `π ∝ exp(Q/(λh))`, normalized by trapezoidal quadrature.
    pub fn gibbs_policy(&self, w: &ScalarField, exec: &dyn Executor) -> Result<GibbsPolicy> {
        let lh = self.lambda_h()?;
        let q = self.soft_q(w, exec)?;
        let log_z = self.log_partition(&q, lh);
        let m = q.controls;
        let mut values = vec![0.0; q.values.len()];
        for (i, row) in values.chunks_mut(m).enumerate() {
            for (p, v) in row.iter_mut().zip(q.row(i)) {
                *p = exp(v / lh - log_z[i]);
            }
        }
        let g = self.kernel.grid();
        Ok(GibbsPolicy {
            policy: PolicyField::new(g.state, g.control, values)?,
            log_partition: ScalarField::new(g.state, log_z)?,
        })
    }

    // Per-node `∫ π (r h - λh ln π) du`.
    fn policy_source(&self, pi: &PolicyField) -> Result<Vec<f64>> {
        let lh = self.lambda_h()?;
        let h = self.params.step_h();
        let m = self.weights.len();
        let mut out = Vec::with_capacity(pi.state_grid().len());
        for i in 0..pi.state_grid().len() {
            let mut s = 0.0;
            for (j, (&p, &w)) in pi.row(i).iter().zip(&self.weights).enumerate() {
                if !(p > 0.0) {
                    return Err(Error::Domain(format!(
                        "policy density {p} at state node {i}, control node {j} is not positive"
                    )));
                }
                s += w * p * (self.reward[i * m + j] * h - lh * ln(p));
            }
            out.push(s);
        }
        Ok(out)
    }

    /// `T^π W = ∫ π (r h - λh ln π + γ K_u W) du`.
    pub fn policy_bellman(&self, pi: &PolicyField, w: &ScalarField, exec: &dyn Executor) -> Result<ScalarField> {
        self.check_policy(pi)?;
        self.check_field(w)?;
        let source = self.policy_source(pi)?;
        let m = self.weights.len();
        let mut kw = vec![0.0; self.reward.len()];
        self.kernel.expectations(w.values(), &mut kw, exec);
        let gamma = self.params.discount_gamma();
        let values = source
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let cont: f64 = (0..m).map(|j| self.weights[j] * pi.row(i)[j] * kw[i * m + j]).sum();
                s + gamma * cont
            })
            .collect();
        ScalarField::new(self.kernel.grid().state, values)
    }

    fn stop_threshold(&self) -> f64 {
        let gamma = self.params.discount_gamma();
        self.params.fixed_point_tol * (1.0 - gamma) / gamma
    }

    /// Value iteration `W <- T*W` from zero with the certified stopping rule.
    pub fn solve_vh(&self, exec: &dyn Executor) -> Result<FixedPoint> {
        let grid = self.kernel.grid().state;
        let threshold = self.stop_threshold();
        let mut w = ScalarField::constant(grid, 0.0);
        let mut inc = f64::INFINITY;
        for k in 1..=self.params.max_iterations {
            let next = self.soft_bellman(&w, exec)?;
            inc = sup_norm_diff(&next, &w)?;
            w = next;
            if inc <= threshold {
                let residual = sup_norm_diff(&self.soft_bellman(&w, exec)?, &w)?;
                return Ok(FixedPoint {
                    value: w,
                    iterations: k,
                    last_increment: inc,
                    residual,
                });
            }
        }
        Err(Error::Convergence {
            iterations: self.params.max_iterations,
            residual: inc,
        })
    }

    /// `V_h[π]` as the fixed point of `T^π`, same stopping rule as [`Mdp::solve_vh`].
    pub fn evaluate_policy(&self, pi: &PolicyField, exec: &dyn Executor) -> Result<FixedPoint> {
        self.check_policy(pi)?;
        let source = self.policy_source(pi)?;
        let averaged = self.averaged_kernel(pi, exec);
        let n = source.len();
        let gamma = self.params.discount_gamma();
        let apply = |w: &[f64], out: &mut [f64]| {
            exec.fill(out, chunk_rows(n), &|offset, chunk| {
                for (r, o) in chunk.iter_mut().enumerate() {
                    let i = offset + r;
                    let row = &averaged[i * n..(i + 1) * n];
                    let e = crate::math::dot(row, w);
                    *o = source[i] + gamma * e;
                }
            });
        };
        let threshold = self.stop_threshold();
        let mut w = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut inc = f64::INFINITY;
        for k in 1..=self.params.max_iterations {
            apply(&w, &mut next);
            inc = w.iter().zip(&next).fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
            core::mem::swap(&mut w, &mut next);
            if inc <= threshold {
                apply(&w, &mut next);
                let residual = w.iter().zip(&next).fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
                return Ok(FixedPoint {
                    value: ScalarField::new(self.kernel.grid().state, w)?,
                    iterations: k,
                    last_increment: inc,
                    residual,
                });
            }
        }
        Err(Error::Convergence {
            iterations: self.params.max_iterations,
            residual: inc,
        })
    }

    // P_π[i][k] = Σ_j w_j π_ij K_j[i][k]
    fn averaged_kernel(&self, pi: &PolicyField, exec: &dyn Executor) -> Vec<f64> {
        let n = self.kernel.num_states();
        let mut out = vec![0.0; n * n];
        exec.fill(&mut out, n * chunk_rows(n), &|offset, chunk| {
            let i0 = offset / n;
            for (r, row) in chunk.chunks_mut(n).enumerate() {
                let i = i0 + r;
                for (j, (&w, &p)) in self.weights.iter().zip(pi.row(i)).enumerate() {
                    let c = w * p;
                    for (o, k) in row.iter_mut().zip(self.kernel.row(j, i)) {
                        *o += c * k;
                    }
                }
            }
        });
        out
    }
}

pub fn soft_bellman(
    spec: &ProblemSpec,
    params: &SolveParams,
    kernel: &TransitionKernel,
    w: &ScalarField,
    exec: &dyn Executor,
) -> Result<ScalarField> {
    Mdp::new(spec, params, kernel)?.soft_bellman(w, exec)
}

pub fn solve_vh(spec: &ProblemSpec, params: &SolveParams, kernel: &TransitionKernel, exec: &dyn Executor) -> Result<FixedPoint> {
    Mdp::new(spec, params, kernel)?.solve_vh(exec)
}

pub fn gibbs_policy(
    spec: &ProblemSpec,
    params: &SolveParams,
    kernel: &TransitionKernel,
    w: &ScalarField,
    exec: &dyn Executor,
) -> Result<GibbsPolicy> {
    Mdp::new(spec, params, kernel)?.gibbs_policy(w, exec)
}

pub fn policy_bellman(
    spec: &ProblemSpec,
    params: &SolveParams,
    kernel: &TransitionKernel,
    pi: &PolicyField,
    w: &ScalarField,
    exec: &dyn Executor,
) -> Result<ScalarField> {
    Mdp::new(spec, params, kernel)?.policy_bellman(pi, w, exec)
}

pub fn evaluate_policy_discrete(
    spec: &ProblemSpec,
    params: &SolveParams,
    kernel: &TransitionKernel,
    pi: &PolicyField,
    exec: &dyn Executor,
) -> Result<FixedPoint> {
    Mdp::new(spec, params, kernel)?.evaluate_policy(pi, exec)
}

/// Largest grid difference quotient of `ln π` in x, over all control nodes.
pub fn policy_log_lipschitz(pi: &PolicyField) -> Result<f64> {
    let g = pi.state_grid();
    let m = pi.control_grid().len();
    if let Some(k) = pi.values().iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Domain(format!(
            "policy density {} at state node {}, control node {} is not positive",
            pi.values()[k],
            k / m,
            k % m
        )));
    }
    let mut best: f64 = 0.0;
    for i in 0..g.len() {
        for axis in 0..g.dim() {
            if let Some(k) = g.neighbor(i, axis, true) {
                let dx = g.spacing(axis);
                for (a, b) in pi.row(i).iter().zip(pi.row(k)) {
                    best = best.max((ln(*b) - ln(*a)).abs() / dx);
                }
            }
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Serial;
    use crate::grid::{kl_divergence, lipschitz_quotient, ControlGrid};
    use crate::kernel::build_kernel;
    use crate::math::sin;
    use crate::problem::builtin_problem;
    use alloc::string::String;
    use alloc::sync::Arc;

    struct Setup {
        spec: ProblemSpec,
        params: SolveParams,
        kernel: TransitionKernel,
    }

    fn setup(name: &str, over: &[(&str, f64)], n: usize, m: usize, h: f64, lambda: f64) -> Setup {
        let ps: Vec<(String, f64)> = over.iter().map(|&(k, v)| (k.into(), v)).collect();
        let spec = builtin_problem(name, &ps).unwrap();
        let params = SolveParams::new(&spec, h, lambda, n, m).unwrap();
        let g = spec.grids(n, m).unwrap();
        let kernel = build_kernel(&spec, &params, &g, &Serial).unwrap();
        Setup { spec, params, kernel }
    }

    fn zero_reward(name: &str, n: usize, m: usize, h: f64, lambda: f64) -> Setup {
        let mut s = setup(name, &[], n, m, h, lambda);
        s.spec.reward = Arc::new(|_: &crate::grid::Point, _u: f64| 0.0);
        s
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        let mut x = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn constant_field_zero_reward() {
        let s = zero_reward("lq1d", 32, 9, 0.1, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let c = 1.7;
        let out = mdp.soft_bellman(&ScalarField::constant(s.kernel.grid().state, c), &Serial).unwrap();
        let gamma = s.params.discount_gamma();
        let expect = gamma * c + 0.5 * 0.1 * ln(2.0);
        assert!(out.values().iter().all(|v| (v - expect).abs() < 1e-13));
    }

    #[test]
    fn contraction_and_variational_laws() {
        let s = setup("advective1d", &[], 32, 9, 1.0 / 16.0, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let g = s.kernel.grid();
        let gamma = s.params.discount_gamma();
        for t in 0..10 {
            let w1 = ScalarField::new(g.state, pseudo_random(32, 2 * t)).unwrap();
            let w2 = ScalarField::new(g.state, pseudo_random(32, 2 * t + 1)).unwrap();
            let a = mdp.soft_bellman(&w1, &Serial).unwrap();
            let b = mdp.soft_bellman(&w2, &Serial).unwrap();
            assert!(sup_norm_diff(&a, &b).unwrap() <= gamma * sup_norm_diff(&w1, &w2).unwrap() + 1e-12);

            let gp = mdp.gibbs_policy(&w1, &Serial).unwrap();
            let tg = mdp.policy_bellman(&gp.policy, &w1, &Serial).unwrap();
            assert!(sup_norm_diff(&tg, &a).unwrap() <= 1e-10);

            let raw: Vec<f64> = pseudo_random(32 * 9, 100 + t).iter().map(|v| 1.5 + v).collect();
            let pi = PolicyField::from_unnormalized(g.state, g.control, raw).unwrap();
            let tp = mdp.policy_bellman(&pi, &w1, &Serial).unwrap();
            let kl = kl_divergence(&pi, &gp.policy).unwrap();
            let lh = 0.5 / 16.0;
            for i in 0..32 {
                let ident = lh * (gp.log_partition.values()[i] - kl.values()[i]);
                assert!((tp.values()[i] - ident).abs() <= 1e-9);
                assert!(a.values()[i] >= tp.values()[i] - 1e-12);
            }
        }
    }

    #[test]
    fn small_temperature_approaches_hard_max() {
        let s = setup("lq1d", &[], 32, 9, 0.1, 1e-6);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let w = ScalarField::new(s.kernel.grid().state, pseudo_random(32, 9)).unwrap();
        let t = mdp.soft_bellman(&w, &Serial).unwrap();
        let q = mdp.soft_q(&w, &Serial).unwrap();
        let lh = 1e-6 * 0.1;
        for i in 0..32 {
            let max = q.row(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((t.values()[i] - max).abs() <= 2.0 * lh * ln(9.0));
        }
    }

    #[test]
    fn zero_reward_fixed_point() {
        let s = zero_reward("lq1d", 32, 9, 0.1, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let fp = mdp.solve_vh(&Serial).unwrap();
        let gamma = s.params.discount_gamma();
        let expect = 0.5 * 0.1 * ln(2.0) / (1.0 - gamma);
        assert!(fp.value.values().iter().all(|v| (v - expect).abs() <= s.params.fixed_point_tol));
        assert!(fp.residual <= s.params.fixed_point_tol * (1.0 - gamma));

        let uni = PolicyField::uniform(s.kernel.grid().state, s.kernel.grid().control);
        let ev = mdp.evaluate_policy(&uni, &Serial).unwrap();
        assert!(ev.value.values().iter().all(|v| (v - expect).abs() <= s.params.fixed_point_tol));
    }

    #[test]
    fn value_bounds_and_policy_optimality() {
        let s = setup("lq1d", &[], 64, 9, 0.1, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let fp = mdp.solve_vh(&Serial).unwrap();
        let h = 0.1;
        let bound = h * mdp.reward_sup() / (1.0 - exp(-3.0 * h));
        assert!(fp.value.sup_norm() <= bound + s.params.fixed_point_tol);

        let tol = s.params.fixed_point_tol;
        let gp = mdp.gibbs_policy(&fp.value, &Serial).unwrap();
        let ev = mdp.evaluate_policy(&gp.policy, &Serial).unwrap();
        assert!(sup_norm_diff(&ev.value, &fp.value).unwrap() <= 2.0 * tol);

        let g = s.kernel.grid();
        for t in 0..5 {
            let raw: Vec<f64> = pseudo_random(64 * 9, 40 + t).iter().map(|v| 1.2 + v).collect();
            let pi = PolicyField::from_unnormalized(g.state, g.control, raw).unwrap();
            let v = mdp.evaluate_policy(&pi, &Serial).unwrap();
            for (a, b) in v.value.values().iter().zip(fp.value.values()) {
                assert!(*a <= b + 2.0 * tol);
            }
        }
    }

    #[test]
    fn value_iteration_is_monotone_for_nonnegative_reward() {
        // r = u² ≥ 0
        let s = setup("advective1d", &[("reward_amp", 0.0), ("control_cost", -1.0)], 16, 5, 0.2, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let mut w = ScalarField::constant(s.kernel.grid().state, 0.0);
        for _ in 0..20 {
            let next = mdp.soft_bellman(&w, &Serial).unwrap();
            assert!(next.values().iter().zip(w.values()).all(|(a, b)| a >= b));
            w = next;
        }
    }

    #[test]
    fn policy_operator_is_monotone() {
        let s = setup("advective1d", &[], 16, 5, 0.2, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let g = s.kernel.grid();
        let pi = PolicyField::uniform(g.state, g.control);
        let w1 = ScalarField::new(g.state, pseudo_random(16, 1)).unwrap();
        let w2 = w1.zip_with(&ScalarField::new(g.state, pseudo_random(16, 2)).unwrap(), |a, b| a + b.abs()).unwrap();
        let a = mdp.policy_bellman(&pi, &w1, &Serial).unwrap();
        let b = mdp.policy_bellman(&pi, &w2, &Serial).unwrap();
        assert!(a.values().iter().zip(b.values()).all(|(x, y)| x <= y));
    }

    #[test]
    fn exponential_gibbs_density() {
        // Q(x,u) = κu with λh = 1: take W = 0, r = κu/h
        let kappa = 1.0;
        let mut s = zero_reward("lq1d", 16, 2001, 0.5, 2.0);
        s.spec.reward = Arc::new(move |_: &crate::grid::Point, u: f64| kappa * u / 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let gp = mdp.gibbs_policy(&ScalarField::constant(s.kernel.grid().state, 0.0), &Serial).unwrap();
        let c = s.kernel.grid().control;
        for j in 0..c.len() {
            let u = c.node(j);
            let exact = kappa * exp(kappa * u) / (2.0 * libm::sinh(kappa));
            assert!((gp.policy.row(3)[j] - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_q_gives_uniform() {
        let s = zero_reward("lq1d", 16, 9, 0.1, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let gp = mdp.gibbs_policy(&ScalarField::constant(s.kernel.grid().state, 2.0), &Serial).unwrap();
        assert!(gp.policy.values().iter().all(|p| (p - 0.5).abs() < 1e-12));
    }

    #[test]
    fn log_lipschitz_examples() {
        let g = crate::grid::StateGrid::torus(1, 8, [0.0, 0.0], [1.0, 0.0]).unwrap();
        let c = ControlGrid::new(0.0, 1.0, 5).unwrap();
        let pi = PolicyField::x_independent(g, c, &[1.0, 2.0, 3.0, 2.0, 1.0]).unwrap();
        assert_eq!(policy_log_lipschitz(&pi).unwrap(), 0.0);

        // chain-rule bound for a Gibbs policy of a Lipschitz W
        let s = setup("advective1d", &[], 64, 9, 0.1, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let gs = s.kernel.grid().state;
        let w = ScalarField::sample(gs, |p| sin(2.0 * crate::math::PI * p[0] / 4.0)).unwrap();
        let gp = mdp.gibbs_policy(&w, &Serial).unwrap();
        let q = mdp.soft_q(&w, &Serial).unwrap();
        let mut lip_q: f64 = 0.0;
        for j in 0..9 {
            let col: Vec<f64> = (0..64).map(|i| q.row(i)[j]).collect();
            lip_q = lip_q.max(lipschitz_quotient(&ScalarField::new(gs, col).unwrap()));
        }
        let bound = 2.0 / (0.5 * 0.1) * lip_q;
        assert!(policy_log_lipschitz(&gp.policy).unwrap() <= bound * 1.05);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let s = setup("lq1d", &[], 16, 5, 0.1, 0.5);
        let mdp = Mdp::new(&s.spec, &s.params, &s.kernel).unwrap();
        let other = s.spec.grids(17, 5).unwrap();
        let w = ScalarField::constant(other.state, 0.0);
        assert!(matches!(mdp.soft_bellman(&w, &Serial), Err(Error::Dimension(_))));
    }
}
