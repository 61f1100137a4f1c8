//! State and control lattices, fields sampled on them, and the norms,
//! quadratures and difference operators every other module relies on.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{floor, ln};

pub const MAX_DIM: usize = 2;

/// A point of the state space; only the first `dim` components are used.
pub type Point = [f64; MAX_DIM];

/// Floor applied before logarithms in [`EntropyMode::Safe`].
pub const SAFE_FLOOR: f64 = 1e-300;

const NORMALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// Periodic box; node `i` sits at `lower + i * length / n`.
    Torus,
    /// Closed interval including both end points (1-D only).
    Window,
}

/// Uniform lattice on the state domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateGrid {
    kind: DomainKind,
    dim: usize,
    n: usize,
    lower: Point,
    length: Point,
}

impl StateGrid {
    pub fn torus(dim: usize, nodes_per_axis: usize, lower: Point, period: Point) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Dimension(format!("state dimension must be 1 or 2, got {dim}")));
        }
        if nodes_per_axis < 3 {
            return Err(Error::Parameter(format!(
                "torus grids need at least 3 nodes per axis, got {nodes_per_axis}"
            )));
        }
        for (axis, &p) in period.iter().enumerate().take(dim) {
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Parameter(format!("period along axis {axis} must be positive, got {p}")));
            }
        }
        Ok(StateGrid {
            kind: DomainKind::Torus,
            dim,
            n: nodes_per_axis,
            lower,
            length: period,
        })
    }

    pub fn window(nodes: usize, lo: f64, hi: f64) -> Result<Self> {
        if nodes < 3 {
            return Err(Error::Parameter(format!("window grids need at least 3 nodes, got {nodes}")));
        }
        if !(hi > lo) {
            return Err(Error::Parameter(format!("empty window [{lo}, {hi}]")));
        }
        Ok(StateGrid {
            kind: DomainKind::Window,
            dim: 1,
            n: nodes,
            lower: [lo, 0.0],
            length: [hi - lo, 0.0],
        })
    }

    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn is_periodic(&self) -> bool {
        self.kind == DomainKind::Torus
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.n
    }

    /// Total number of nodes.
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lower(&self) -> Point {
        self.lower
    }

    /// Period (torus) or window length along each axis.
    pub fn length(&self) -> Point {
        self.length
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        match self.kind {
            DomainKind::Torus => self.length[axis] / self.n as f64,
            DomainKind::Window => self.length[axis] / (self.n - 1) as f64,
        }
    }

    /// Multi-index of a flat node index (axis 0 varies fastest).
    pub fn coords(&self, idx: usize) -> [usize; MAX_DIM] {
        if self.dim == 1 {
            [idx, 0]
        } else {
            [idx % self.n, idx / self.n]
        }
    }

    pub fn flat(&self, c: [usize; MAX_DIM]) -> usize {
        if self.dim == 1 {
            c[0]
        } else {
            c[0] + self.n * c[1]
        }
    }

    pub fn node(&self, idx: usize) -> Point {
        let c = self.coords(idx);
        let mut p = [0.0; MAX_DIM];
        for (axis, item) in p.iter_mut().enumerate().take(self.dim) {
            *item = self.lower[axis] + c[axis] as f64 * self.spacing(axis);
        }
        p
    }

    /// Neighbor of `idx` one step along `axis`; `None` past a window edge.
    pub fn neighbor(&self, idx: usize, axis: usize, forward: bool) -> Option<usize> {
        let mut c = self.coords(idx);
        let n = self.n;
        match (self.kind, forward) {
            (DomainKind::Torus, true) => c[axis] = (c[axis] + 1) % n,
            (DomainKind::Torus, false) => c[axis] = (c[axis] + n - 1) % n,
            (DomainKind::Window, true) if c[axis] + 1 < n => c[axis] += 1,
            (DomainKind::Window, false) if c[axis] > 0 => c[axis] -= 1,
            _ => return None,
        }
        Some(self.flat(c))
    }

    /// Maps a point onto the fundamental cell of the torus (identity on windows).
    pub fn wrap(&self, p: Point) -> Point {
        let mut q = p;
        if self.is_periodic() {
            for (axis, item) in q.iter_mut().enumerate().take(self.dim) {
                *item = crate::math::wrap_periodic(*item, self.lower[axis], self.length[axis]);
            }
        }
        q
    }

    /// Linear (bilinear in 2-D) interpolation stencil: node indices and weights.
    pub fn interp_stencil(&self, p: Point) -> ([usize; 4], [f64; 4], usize) {
        let p = self.wrap(p);
        let mut lo = [0usize; MAX_DIM];
        let mut hi = [0usize; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            let dx = self.spacing(axis);
            let t = (p[axis] - self.lower[axis]) / dx;
            match self.kind {
                DomainKind::Torus => {
                    let f = floor(t);
                    let i = (f as i64).rem_euclid(self.n as i64) as usize;
                    lo[axis] = i;
                    hi[axis] = (i + 1) % self.n;
                    frac[axis] = (t - f).clamp(0.0, 1.0);
                }
                DomainKind::Window => {
                    let t = t.clamp(0.0, (self.n - 1) as f64);
                    let i = (floor(t) as usize).min(self.n - 2);
                    lo[axis] = i;
                    hi[axis] = i + 1;
                    frac[axis] = t - i as f64;
                }
            }
        }
        if self.dim == 1 {
            ([lo[0], hi[0], 0, 0], [1.0 - frac[0], frac[0], 0.0, 0.0], 2)
        } else {
            let (fx, fy) = (frac[0], frac[1]);
            (
                [
                    self.flat([lo[0], lo[1]]),
                    self.flat([hi[0], lo[1]]),
                    self.flat([lo[0], hi[1]]),
                    self.flat([hi[0], hi[1]]),
                ],
                [(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy],
                4,
            )
        }
    }
}

/// Uniform lattice on a control interval with trapezoidal weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGrid {
    lo: f64,
    hi: f64,
    n: usize,
}

impl ControlGrid {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Parameter(format!("control grid needs at least 2 nodes, got {n}")));
        }
        if !(hi > lo && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Parameter(format!("control interval [{lo}, {hi}] must be bounded and nonempty")));
        }
        Ok(ControlGrid { lo, hi, n })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        if j + 1 == self.n {
            self.hi
        } else {
            self.lo + j as f64 * self.spacing()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn weight(&self, j: usize) -> f64 {
        let du = self.spacing();
        if j == 0 || j + 1 == self.n {
            0.5 * du
        } else {
            du
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.weight(j)).collect()
    }

    /// |U|.
    pub fn volume(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPair {
    pub state: StateGrid,
    pub control: ControlGrid,
}

impl GridPair {
    pub fn new(state: StateGrid, control: ControlGrid) -> Self {
        GridPair { state, control }
    }
}

fn same_grid(a: &StateGrid, b: &StateGrid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::Dimension(format!("fields live on different grids ({a:?} vs {b:?})")))
    }
}

/// One scalar per state node.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    grid: StateGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: StateGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "field has {} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite field value at node {i}")));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn constant(grid: StateGrid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Samples `f` at the nodes. On a torus `f` must be periodic: it is also
    /// evaluated one period away along each axis and rejected on mismatch.
    pub fn sample(grid: StateGrid, f: impl Fn(&Point) -> f64) -> Result<Self> {
        let values: Vec<f64> = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        if grid.is_periodic() {
            for axis in 0..grid.dim() {
                let mut worst: f64 = 0.0;
                for (i, &v) in values.iter().enumerate() {
                    let mut p = grid.node(i);
                    p[axis] += grid.length()[axis];
                    let d = (f(&p) - v).abs() / (1.0 + v.abs());
                    worst = worst.max(d);
                }
                if worst > 1e-9 {
                    return Err(Error::NonPeriodic { axis, discrepancy: worst });
                }
            }
        }
        ScalarField::new(grid, values)
    }

    pub fn grid(&self) -> &StateGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        ScalarField::new(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        ScalarField::new(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    pub fn interpolate(&self, p: Point) -> f64 {
        let (idx, w, k) = self.grid.interp_stencil(p);
        (0..k).map(|s| w[s] * self.values[idx[s]]).sum()
    }

    /// Linear resampling onto another grid over the same domain.
    pub fn resample(&self, target: StateGrid) -> Result<Self> {
        if target == self.grid {
            return Ok(self.clone());
        }
        let values = (0..target.len()).map(|i| self.interpolate(target.node(i))).collect();
        ScalarField::new(target, values)
    }
}

/// Exact `max_i |f_i|`.
pub fn sup_norm(f: &ScalarField) -> f64 {
    f.values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Exact `max_i |f_i - g_i|`.
pub fn sup_norm_diff(f: &ScalarField, g: &ScalarField) -> Result<f64> {
    same_grid(&f.grid, &g.grid)?;
    Ok(f.values
        .iter()
        .zip(&g.values)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs())))
}

/// Per-node gradient; unused components are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub grid: StateGrid,
    pub values: Vec<Point>,
}

impl GradientField {
    /// Max Euclidean norm over nodes.
    pub fn sup_norm(&self) -> f64 {
        self.values
            .iter()
            .map(|g| crate::math::sqrt(g.iter().map(|x| x * x).sum()))
            .fold(0.0, f64::max)
    }
}

/// Second-order central differences with periodic wrap; on windows the end
/// points use second-order one-sided stencils.
pub fn gradient(f: &ScalarField) -> Result<GradientField> {
    let g = f.grid;
    if g.nodes_per_axis() < 3 {
        return Err(Error::Dimension("gradient needs at least 3 nodes per axis".into()));
    }
    let v = &f.values;
    let mut out = vec![[0.0; MAX_DIM]; g.len()];
    for (i, o) in out.iter_mut().enumerate() {
        for axis in 0..g.dim() {
            let h = g.spacing(axis);
            o[axis] = match (g.neighbor(i, axis, false), g.neighbor(i, axis, true)) {
                (Some(m), Some(p)) => (v[p] - v[m]) / (2.0 * h),
                (None, Some(p)) => {
                    let pp = g.neighbor(p, axis, true).expect("window has >= 3 nodes");
                    (-3.0 * v[i] + 4.0 * v[p] - v[pp]) / (2.0 * h)
                }
                (Some(m), None) => {
                    let mm = g.neighbor(m, axis, false).expect("window has >= 3 nodes");
                    (3.0 * v[i] - 4.0 * v[m] + v[mm]) / (2.0 * h)
                }
                (None, None) => unreachable!(),
            };
        }
    }
    Ok(GradientField { grid: g, values: out })
}

/// Largest difference quotient `|f(a) - f(b)| / |a - b|` over grid neighbours.
pub fn lipschitz_quotient(f: &ScalarField) -> f64 {
    let g = f.grid;
    let mut best: f64 = 0.0;
    for i in 0..g.len() {
        for axis in 0..g.dim() {
            if let Some(j) = g.neighbor(i, axis, true) {
                best = best.max((f.values[j] - f.values[i]).abs() / g.spacing(axis));
            }
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EntropyMode {
    /// Nonpositive densities are a domain error.
    #[default]
    Strict,
    /// Densities are floored at [`SAFE_FLOOR`] before the logarithm.
    Safe,
}

/// A probability density over the control grid at every state node.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyField {
    state: StateGrid,
    control: ControlGrid,
    // node-major: values[i * m + j]
    values: Vec<f64>,
}

impl PolicyField {
    /// Checks nonnegativity and quadrature normalization (1e-10).
    pub fn new(state: StateGrid, control: ControlGrid, values: Vec<f64>) -> Result<Self> {
        let p = Self::unchecked(state, control, values)?;
        let w = control.weights();
        for i in 0..state.len() {
            let row = p.row(i);
            if let Some(j) = row.iter().position(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::Domain(format!(
                    "policy density {} at state node {i}, control node {j}",
                    row[j]
                )));
            }
            let mass: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            if (mass - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::Domain(format!("policy at state node {i} integrates to {mass}")));
            }
        }
        Ok(p)
    }

    fn unchecked(state: StateGrid, control: ControlGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != state.len() * control.len() {
            return Err(Error::Dimension(format!(
                "policy has {} values, expected {} x {}",
                values.len(),
                state.len(),
                control.len()
            )));
        }
        Ok(PolicyField { state, control, values })
    }

    /// Normalizes each row by its quadrature mass.
    pub fn from_unnormalized(state: StateGrid, control: ControlGrid, mut values: Vec<f64>) -> Result<Self> {
        let m = control.len();
        if values.len() != state.len() * m {
            return Err(Error::Dimension(format!(
                "policy has {} values, expected {} x {}",
                values.len(),
                state.len(),
                m
            )));
        }
        let w = control.weights();
        for (i, row) in values.chunks_mut(m).enumerate() {
            let mass: f64 = row.iter().zip(&w).map(|(a, b)| a * b).sum();
            if !(mass > 0.0 && mass.is_finite()) {
                return Err(Error::Domain(format!("policy row {i} has mass {mass}")));
            }
            row.iter_mut().for_each(|x| *x /= mass);
        }
        PolicyField::new(state, control, values)
    }

    pub fn uniform(state: StateGrid, control: ControlGrid) -> Self {
        let c = 1.0 / control.volume();
        PolicyField {
            state,
            control,
            values: vec![c; state.len() * control.len()],
        }
    }

    /// Same density at every state node.
    pub fn x_independent(state: StateGrid, control: ControlGrid, density: &[f64]) -> Result<Self> {
        let mut values = Vec::with_capacity(state.len() * control.len());
        for _ in 0..state.len() {
            values.extend_from_slice(density);
        }
        PolicyField::from_unnormalized(state, control, values)
    }

    pub fn state_grid(&self) -> &StateGrid {
        &self.state
    }

    pub fn control_grid(&self) -> &ControlGrid {
        &self.control
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let m = self.control.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Density at an off-grid state, linearly interpolated per control node.
    pub fn density_at(&self, p: Point, out: &mut [f64]) {
        let (idx, w, k) = self.state.interp_stencil(p);
        out.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..k {
            if w[s] == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(self.row(idx[s])) {
                *o += w[s] * v;
            }
        }
    }

    /// Linear transfer onto another state grid, renormalized per node.
    pub fn resample(&self, target: StateGrid) -> Result<Self> {
        if target == self.state {
            return Ok(self.clone());
        }
        let m = self.control.len();
        let mut values = vec![0.0; target.len() * m];
        for (i, row) in values.chunks_mut(m).enumerate() {
            self.density_at(target.node(i), row);
        }
        PolicyField::from_unnormalized(target, self.control, values)
    }
}

/// `x -> ∫_U π(x,u) ln π(x,u) du` by trapezoidal quadrature.
pub fn entropy(pi: &PolicyField, mode: EntropyMode) -> Result<ScalarField> {
    let w = pi.control.weights();
    let mut out = Vec::with_capacity(pi.state.len());
    for i in 0..pi.state.len() {
        let mut s = 0.0;
        for (j, (&p, &wj)) in pi.row(i).iter().zip(&w).enumerate() {
            let p = match mode {
                EntropyMode::Strict if p <= 0.0 => {
                    return Err(Error::Domain(format!(
                        "log of nonpositive density {p} at state node {i}, control node {j}"
                    )))
                }
                EntropyMode::Strict => p,
                EntropyMode::Safe => p.max(SAFE_FLOOR),
            };
            s += wj * p * ln(p);
        }
        out.push(s);
    }
    ScalarField::new(pi.state, out)
}

/// `x -> KL(p(x,·) || q(x,·))` by the same quadrature.
pub fn kl_divergence(p: &PolicyField, q: &PolicyField) -> Result<ScalarField> {
    same_grid(&p.state, &q.state)?;
    if p.control != q.control {
        return Err(Error::Dimension("policies use different control grids".into()));
    }
    let w = p.control.weights();
    let mut out = Vec::with_capacity(p.state.len());
    for i in 0..p.state.len() {
        let mut s = 0.0;
        for ((&a, &b), &wj) in p.row(i).iter().zip(q.row(i)).zip(&w) {
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::Domain(format!("nonpositive density in KL at state node {i}")));
            }
            s += wj * a * (ln(a) - ln(b));
        }
        out.push(s);
    }
    ScalarField::new(p.state, out)
}
