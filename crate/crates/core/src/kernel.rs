//! One-step transition kernels from implicit-Euler Fokker–Planck solves.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::grid::{GridPair, ScalarField};
use crate::linalg::DenseLu;
use crate::operator::{JumpRates, ShiftedSolver};
use crate::problem::{ProblemSpec, SolveParams};

/// Entries in `[-CLAMP_TOL, 0)` are treated as round-off and zeroed.
pub const CLAMP_TOL: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-10;

/// Row-stochastic matrices `K_u`, one per control node, stored densely.
///
/// `K_u[i][k]` is the probability of moving from state node `i` to node `k`
/// over one step under the constant control `u`.
#[derive(Debug, Clone)]
pub struct TransitionKernel {
    step_h: f64,
    grid: GridPair,
    fp_substeps: usize,
    // matrices[j][i * n + k]
    matrices: Vec<Vec<f64>>,
}

/// Builds every `K_u` by advancing point masses through `fp_substeps`
/// implicit-Euler steps of the forward generator.
pub fn build_kernel(spec: &ProblemSpec, params: &SolveParams, grid: &GridPair, exec: &dyn Executor) -> Result<TransitionKernel> {
    spec.require_uncontrolled()?;
    spec.require_torus()?;
    params.validate()?;
    let n = grid.state.len();
    let m = grid.control.len();
    let h = params.step_h();
    let substeps = params.fp_substeps;
    let dt = h / substeps as f64;
    let rates: Vec<JumpRates> = (0..m)
        .map(|j| JumpRates::new(spec, &grid.state, grid.control.node(j)))
        .collect::<Result<_>>()?;

    let mut buf = vec![0.0; m * n * n];
    exec.fill(&mut buf, n * n, &|offset, out| {
        let j = offset / (n * n);
        if propagate(&rates[j], dt, substeps, out).is_err() {
            out.iter_mut().for_each(|v| *v = f64::NAN);
        }
    });

    let mut matrices = Vec::with_capacity(m);
    for (j, mat) in buf.chunks(n * n).enumerate() {
        let mut mat = mat.to_vec();
        for (i, row) in mat.chunks_mut(n).enumerate() {
            sanitize_row(row).map_err(|value| Error::KernelBuild { state: i, control: j, value })?;
        }
        matrices.push(mat);
    }
    Ok(TransitionKernel {
        step_h: h,
        grid: *grid,
        fp_substeps: substeps,
        matrices,
    })
}

// Writes K = (I - dt L)^{-substeps} row by row.
fn propagate(rates: &JumpRates, dt: f64, substeps: usize, out: &mut [f64]) -> Result<()> {
    let n = rates.grid().len();
    if rates.grid().dim() == 1 {
        // row s of K is the forward evolution of the point mass at s
        let solver = rates.shifted_system(1.0, dt, true, &[])?;
        for (s, row) in out.chunks_mut(n).enumerate() {
            row.iter_mut().for_each(|v| *v = 0.0);
            row[s] = 1.0;
            for _ in 0..substeps {
                solver.solve_in_place(row);
            }
        }
        Ok(())
    } else {
        // dense: invert M = I - dt L once, then raise to the power
        let solver = rates.shifted_system(1.0, dt, false, &[])?;
        let ShiftedSolver::Dense(lu) = solver else {
            return Err(Error::Solver("expected dense factorization in 2-D".into()));
        };
        let inv = dense_inverse(&lu, n);
        let pow = dense_power(&inv, n, substeps);
        out.copy_from_slice(&pow);
        Ok(())
    }
}

fn dense_inverse(lu: &DenseLu, n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for c in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[c] = 1.0;
        let col = lu.solve(&e);
        for (r, v) in col.into_iter().enumerate() {
            inv[r * n + c] = v;
        }
    }
    inv
}

fn dense_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let ci = &mut c[i * n..(i + 1) * n];
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            for (cv, bv) in ci.iter_mut().zip(&b[k * n..(k + 1) * n]) {
                *cv += aik * bv;
            }
        }
    }
    c
}

fn dense_power(a: &[f64], n: usize, mut k: usize) -> Vec<f64> {
    let mut result: Option<Vec<f64>> = None;
    let mut base = a.to_vec();
    while k > 0 {
        if k & 1 == 1 {
            result = Some(match result {
                None => base.clone(),
                Some(r) => dense_mul(&r, &base, n),
            });
        }
        k >>= 1;
        if k > 0 {
            base = dense_mul(&base, &base, n);
        }
    }
    result.unwrap_or_else(|| {
        let mut id = vec![0.0; n * n];
        (0..n).for_each(|i| id[i * n + i] = 1.0);
        id
    })
}

// Clamps round-off negatives and renormalizes; returns the offending value on failure.
fn sanitize_row(row: &mut [f64]) -> core::result::Result<(), f64> {
    let mut clamped = false;
    for v in row.iter_mut() {
        if !v.is_finite() {
            return Err(*v);
        }
        if *v < 0.0 {
            if *v < -CLAMP_TOL {
                return Err(*v);
            }
            *v = 0.0;
            clamped = true;
        }
    }
    let s: f64 = crate::math::pairwise_sum(row);
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(s);
    }
    if clamped {
        row.iter_mut().for_each(|v| *v /= s);
    }
    Ok(())
}

impl TransitionKernel {
    pub fn step_h(&self) -> f64 {
        self.step_h
    }

    pub fn grid(&self) -> &GridPair {
        &self.grid
    }

    pub fn fp_substeps(&self) -> usize {
        self.fp_substeps
    }

    pub fn num_controls(&self) -> usize {
        self.matrices.len()
    }

    pub fn num_states(&self) -> usize {
        self.grid.state.len()
    }

    /// Dense `K_u` for control node `j`, row-major.
    pub fn matrix(&self, j: usize) -> &[f64] {
        &self.matrices[j]
    }

    pub fn row(&self, j: usize, i: usize) -> &[f64] {
        let n = self.num_states();
        &self.matrices[j][i * n..(i + 1) * n]
    }

    /// `Σ_k K_u[i][k] w_k`.
    pub fn expect_at(&self, j: usize, i: usize, w: &[f64]) -> f64 {
        crate::math::dot(self.row(j, i), w)
    }

    /// Writes `out[i * m + j] = (K_{u_j} w)_i` for all nodes and controls.
    pub fn expectations(&self, w: &[f64], out: &mut [f64], exec: &dyn Executor) {
        let m = self.num_controls();
        let n = self.num_states();
        debug_assert_eq!(w.len(), n);
        debug_assert_eq!(out.len(), n * m);
        let rows_per_chunk = chunk_rows(n);
        exec.fill(out, rows_per_chunk * m, &|offset, chunk| {
            let i0 = offset / m;
            for (r, node) in chunk.chunks_mut(m).enumerate() {
                for (j, o) in node.iter_mut().enumerate() {
                    *o = self.expect_at(j, i0 + r, w);
                }
            }
        });
    }

    /// Nonzero entries above `threshold` as `(control, from, to, value)`.
    pub fn entries(&self, threshold: f64) -> impl Iterator<Item = (usize, usize, usize, f64)> + '_ {
        let n = self.num_states();
        self.matrices.iter().enumerate().flat_map(move |(j, mat)| {
            mat.iter()
                .enumerate()
                .filter(move |(_, &v)| v > threshold)
                .map(move |(k, &v)| (j, k / n, k % n, v))
        })
    }

    /// Largest row-sum defect and most negative entry, for invariant checks.
    pub fn stochasticity_defect(&self) -> (f64, f64) {
        let n = self.num_states();
        let mut worst_sum: f64 = 0.0;
        let mut min_entry = f64::INFINITY;
        for mat in &self.matrices {
            for row in mat.chunks(n) {
                worst_sum = worst_sum.max((crate::math::pairwise_sum(row) - 1.0).abs());
                min_entry = row.iter().copied().fold(min_entry, f64::min);
            }
        }
        (worst_sum, min_entry)
    }
}

pub(crate) fn chunk_rows(n: usize) -> usize {
    (n / 64).clamp(1, 16)
}

/// `P_h^u f`: conditional expectation after one step under control node `j`.
pub fn expect_next(kernel: &TransitionKernel, j: usize, f: &ScalarField) -> Result<ScalarField> {
    if f.grid() != &kernel.grid.state {
        return Err(Error::Dimension("field and kernel use different state grids".into()));
    }
    if j >= kernel.num_controls() {
        return Err(Error::Dimension(format!(
            "control index {j} out of range ({} control nodes)",
            kernel.num_controls()
        )));
    }
    let values = (0..kernel.num_states()).map(|i| kernel.expect_at(j, i, f.values())).collect();
    ScalarField::new(kernel.grid.state, values)
}
