//! Jump-rate (Markov chain) discretization of a controlled diffusion.
//!
//! For each control value the SDE generator is replaced by a continuous-time
//! chain on the grid that jumps only to axis neighbours:
//!
//! ```text
//! rate(i -> i+e) = b⁺(x_{i+e/2}) / Δx + Σ_aa(x_i) / (2 Δx²)
//! rate(i -> i-e) = b⁻(x_{i-e/2}) / Δx + Σ_aa(x_i) / (2 Δx²)
//! ```
//!
//! The transpose of this generator is a conservative upwind discretization of
//! the Fokker–Planck operator (columns sum to zero), and the generator itself
//! is a monotone upwind discretization of `b·∇V + ½ tr(Σ ∇²V)`. The kernel and
//! the PDE solvers both use it, so on a fixed grid the MDP converges to the
//! semi-discrete HJB as `h -> 0`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::grid::{Point, StateGrid, MAX_DIM};
use crate::linalg::{CyclicTridiagonal, DenseLu};
use crate::problem::{Mat2, ProblemSpec};

const OFF_DIAGONAL_TOL: f64 = 1e-14;

/// Outgoing jump rates of every node, towards the forward and backward
/// neighbour along each axis. Rates into a missing (window edge) neighbour are
/// zero.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpRates {
    grid: StateGrid,
    fwd: Vec<Point>,
    bwd: Vec<Point>,
}

fn check_diagonal(cov: &Mat2, dim: usize, i: usize) -> Result<()> {
    if dim == 2 && (cov[0][1].abs() > OFF_DIAGONAL_TOL || cov[1][0].abs() > OFF_DIAGONAL_TOL) {
        return Err(Error::Unsupported(format!(
            "off-diagonal covariance {:e} at state node {i}; only diagonal Σ is discretized in 2-D",
            cov[0][1]
        )));
    }
    Ok(())
}

impl JumpRates {
    /// Generator for the constant control `u`. Σ may depend on `u`.
    pub fn new(spec: &ProblemSpec, grid: &StateGrid, u: f64) -> Result<Self> {
        let dim = grid.dim();
        let n = grid.len();
        let mut fwd = vec![[0.0; MAX_DIM]; n];
        let mut bwd = vec![[0.0; MAX_DIM]; n];
        for i in 0..n {
            let x = grid.node(i);
            let cov = spec.covariance(&x, u);
            check_diagonal(&cov, dim, i)?;
            for axis in 0..dim {
                let dx = grid.spacing(axis);
                let diff = 0.5 * cov[axis][axis] / (dx * dx);
                if !(diff >= 0.0) {
                    return Err(Error::InvalidProblem {
                        quantity: "diffusion",
                        location: format!("state node {i}"),
                    });
                }
                if grid.neighbor(i, axis, true).is_some() {
                    let mut face = x;
                    face[axis] += 0.5 * dx;
                    let b = spec.drift(&face, u)[axis];
                    if !b.is_finite() {
                        return Err(Error::InvalidProblem {
                            quantity: "drift",
                            location: format!("face after state node {i}, axis {axis}, u = {u}"),
                        });
                    }
                    fwd[i][axis] = b.max(0.0) / dx + diff;
                }
                if grid.neighbor(i, axis, false).is_some() {
                    let mut face = x;
                    face[axis] -= 0.5 * dx;
                    let b = spec.drift(&face, u)[axis];
                    if !b.is_finite() {
                        return Err(Error::InvalidProblem {
                            quantity: "drift",
                            location: format!("face before state node {i}, axis {axis}, u = {u}"),
                        });
                    }
                    bwd[i][axis] = (-b).max(0.0) / dx + diff;
                }
            }
        }
        Ok(JumpRates { grid: *grid, fwd, bwd })
    }

    /// Node-wise mixture `Σ_j weight(i, j) L_j`.
    pub fn mixture(parts: &[JumpRates], weight: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("mixture of zero generators".into()))?;
        let grid = first.grid;
        if parts.iter().any(|p| p.grid != grid) {
            return Err(Error::Dimension("generators live on different grids".into()));
        }
        let n = grid.len();
        let mut fwd = vec![[0.0; MAX_DIM]; n];
        let mut bwd = vec![[0.0; MAX_DIM]; n];
        for i in 0..n {
            for (j, p) in parts.iter().enumerate() {
                let w = weight(i, j);
                for axis in 0..grid.dim() {
                    fwd[i][axis] += w * p.fwd[i][axis];
                    bwd[i][axis] += w * p.bwd[i][axis];
                }
            }
        }
        Ok(JumpRates { grid, fwd, bwd })
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn forward_rate(&self, i: usize, axis: usize) -> f64 {
        self.fwd[i][axis]
    }

    pub fn backward_rate(&self, i: usize, axis: usize) -> f64 {
        self.bwd[i][axis]
    }

    /// Total jump intensity out of node `i`.
    pub fn exit_rate(&self, i: usize) -> f64 {
        (0..self.grid.dim()).map(|a| self.fwd[i][a] + self.bwd[i][a]).sum()
    }

    /// `(L v)_i = Σ_k rate(i -> k) (v_k - v_i)`.
    pub fn apply_backward(&self, v: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        for (i, o) in out.iter_mut().enumerate() {
            let mut s = 0.0;
            for axis in 0..g.dim() {
                if let Some(k) = g.neighbor(i, axis, true) {
                    s += self.fwd[i][axis] * (v[k] - v[i]);
                }
                if let Some(k) = g.neighbor(i, axis, false) {
                    s += self.bwd[i][axis] * (v[k] - v[i]);
                }
            }
            *o = s;
        }
    }

    /// `(L v)_i` at a single node.
    pub fn apply_backward_at(&self, v: &[f64], i: usize) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for axis in 0..g.dim() {
            if let Some(k) = g.neighbor(i, axis, true) {
                s += self.fwd[i][axis] * (v[k] - v[i]);
            }
            if let Some(k) = g.neighbor(i, axis, false) {
                s += self.bwd[i][axis] * (v[k] - v[i]);
            }
        }
        s
    }

    /// Assembles `diag_shift·I - scale·L` (or its transpose) as a solver.
    pub fn shifted_system(&self, diag_shift: f64, scale: f64, transpose: bool, dirichlet: &[usize]) -> Result<ShiftedSolver> {
        let g = &self.grid;
        let n = g.len();
        let is_fixed = |i: usize| dirichlet.contains(&i);
        if g.dim() == 1 {
            let mut sub = vec![0.0; n];
            let mut sup = vec![0.0; n];
            let mut diag = vec![0.0; n];
            for i in 0..n {
                if is_fixed(i) {
                    diag[i] = 1.0;
                    continue;
                }
                diag[i] = diag_shift + scale * self.exit_rate(i);
                // row i couples to the backward (sub) and forward (sup) neighbours
                if let Some(k) = g.neighbor(i, 0, false) {
                    sub[i] = -scale * if transpose { self.fwd[k][0] } else { self.bwd[i][0] };
                }
                if let Some(k) = g.neighbor(i, 0, true) {
                    sup[i] = -scale * if transpose { self.bwd[k][0] } else { self.fwd[i][0] };
                }
            }
            if transpose && !dirichlet.is_empty() {
                return Err(Error::Unsupported("transposed system with Dirichlet rows".into()));
            }
            Ok(ShiftedSolver::Tridiagonal(CyclicTridiagonal::new(&sub, &diag, &sup)?))
        } else {
            let mut a = vec![0.0; n * n];
            for i in 0..n {
                if is_fixed(i) {
                    a[i * n + i] = 1.0;
                    continue;
                }
                a[i * n + i] += diag_shift + scale * self.exit_rate(i);
                for axis in 0..g.dim() {
                    for (forward, rate) in [(true, self.fwd[i][axis]), (false, self.bwd[i][axis])] {
                        if let Some(k) = g.neighbor(i, axis, forward) {
                            if transpose {
                                a[k * n + i] -= scale * rate;
                            } else {
                                a[i * n + k] -= scale * rate;
                            }
                        }
                    }
                }
            }
            Ok(ShiftedSolver::Dense(DenseLu::factor(n, a)?))
        }
    }
}

/// Factorized `c I - s L` (or its transpose).
#[derive(Debug, Clone)]
pub enum ShiftedSolver {
    Tridiagonal(CyclicTridiagonal),
    Dense(DenseLu),
}

impl ShiftedSolver {
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        match self {
            ShiftedSolver::Tridiagonal(t) => t.solve_in_place(rhs),
            ShiftedSolver::Dense(lu) => {
                let x = lu.solve(rhs);
                rhs.copy_from_slice(&x);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ScalarField;
    use crate::math::{cos, sin, PI};
    use crate::problem::builtin_problem;

    #[test]
    fn generator_kills_constants_and_is_second_order_for_smooth_fields() {
        let spec = builtin_problem("advective1d", &[("drift_amp".into(), 0.0)]).unwrap();
        let err = |n: usize| {
            let g = spec.state_grid(n).unwrap();
            let l = JumpRates::new(&spec, &g, 0.0).unwrap();
            let ones = vec![1.0; n];
            let mut out = vec![0.0; n];
            l.apply_backward(&ones, &mut out);
            assert!(out.iter().all(|v| v.abs() < 1e-12));
            let f = ScalarField::sample(g, |p| sin(2.0 * PI * p[0] / 4.0)).unwrap();
            l.apply_backward(f.values(), &mut out);
            let k = 2.0 * PI / 4.0;
            (0..n)
                .map(|i| (out[i] + k * k * sin(k * g.node(i)[0])).abs())
                .fold(0.0, f64::max)
        };
        let order = crate::math::ln(err(32) / err(64)) / crate::math::ln(2.0);
        assert!(order > 1.9, "{order}");
    }

    #[test]
    fn upwind_drift_is_first_order() {
        let spec = builtin_problem("advective1d", &[("drift_amp".into(), 0.0), ("sigma".into(), 0.0)]).unwrap();
        let err = |n: usize| {
            let g = spec.state_grid(n).unwrap();
            let l = JumpRates::new(&spec, &g, 0.5).unwrap();
            let f = ScalarField::sample(g, |p| sin(2.0 * PI * p[0] / 4.0)).unwrap();
            let mut out = vec![0.0; n];
            l.apply_backward(f.values(), &mut out);
            let k = 2.0 * PI / 4.0;
            (0..n)
                .map(|i| (out[i] - 0.5 * k * cos(k * g.node(i)[0])).abs())
                .fold(0.0, f64::max)
        };
        let order = crate::math::ln(err(64) / err(128)) / crate::math::ln(2.0);
        assert!((order - 1.0).abs() < 0.1, "{order}");
    }

    #[test]
    fn shifted_solve_matches_dense_in_1d_and_transpose() {
        let spec = builtin_problem("advective1d", &[]).unwrap();
        let g = spec.state_grid(9).unwrap();
        let l = JumpRates::new(&spec, &g, 0.3).unwrap();
        let n = g.len();
        let rhs: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64).sin()).collect();
        for transpose in [false, true] {
            let mut x = rhs.clone();
            l.shifted_system(2.0, 0.7, transpose, &[]).unwrap().solve_in_place(&mut x);
            // residual check against explicit matrix action
            for i in 0..n {
                let mut ax = 2.0 * x[i] + 0.7 * l.exit_rate(i) * x[i];
                if !transpose {
                    ax -= 0.7 * (l.fwd[i][0] * x[(i + 1) % n] + l.bwd[i][0] * x[(i + n - 1) % n]);
                } else {
                    ax -= 0.7 * (l.fwd[(i + n - 1) % n][0] * x[(i + n - 1) % n] + l.bwd[(i + 1) % n][0] * x[(i + 1) % n]);
                }
                assert!((ax - rhs[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn off_diagonal_covariance_rejected_in_2d() {
        use alloc::sync::Arc;
        use crate::problem::{Diffusion, StateDomain};
        let mut spec = builtin_problem("lq1d", &[]).unwrap();
        spec.state_domain = StateDomain::Torus {
            dim: 2,
            lower: [0.0, 0.0],
            period: [1.0, 1.0],
        };
        spec.reward = Arc::new(|_: &Point, _u: f64| 0.0);
        spec.diffusion = Diffusion::Uncontrolled(Arc::new(|_: &Point| [[1.0, 0.5], [0.0, 1.0]]));
        let g = spec.state_grid(4).unwrap();
        assert!(matches!(JumpRates::new(&spec, &g, 0.0), Err(Error::Unsupported(_))));
    }
}
