//! Small direct solvers: periodic tridiagonal (Sherman–Morrison over Thomas)
//! for one-dimensional grids and dense LU with partial pivoting for 2-D grids.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Factorized periodic tridiagonal system.
///
/// Row `i` reads `sub[i] x[i-1] + diag[i] x[i] + sup[i] x[i+1] = d[i]` with
/// indices taken modulo `n`. Setting `sub[0] = sup[n-1] = 0` gives an ordinary
/// tridiagonal system.
#[derive(Debug, Clone)]
pub struct CyclicTridiagonal {
    n: usize,
    sub: Vec<f64>,
    // Thomas factors of the (possibly corner-modified) tridiagonal matrix.
    cprime: Vec<f64>,
    denom: Vec<f64>,
    // Sherman–Morrison data; absent for the non-periodic case.
    correction: Option<Correction>,
}

#[derive(Debug, Clone)]
struct Correction {
    z: Vec<f64>,
    v_last: f64,
    scale: f64,
}

impl CyclicTridiagonal {
    pub fn new(sub: &[f64], diag: &[f64], sup: &[f64]) -> Result<Self> {
        let n = diag.len();
        if sub.len() != n || sup.len() != n {
            return Err(Error::Dimension(format!(
                "tridiagonal bands of lengths {}, {}, {}",
                sub.len(),
                n,
                sup.len()
            )));
        }
        if n < 3 {
            return Err(Error::Dimension(format!("periodic tridiagonal needs n >= 3, got {n}")));
        }
        let periodic = sub[0] != 0.0 || sup[n - 1] != 0.0;
        let mut b = diag.to_vec();
        let gamma = -diag[0];
        if periodic {
            b[0] -= gamma;
            b[n - 1] -= sub[0] * sup[n - 1] / gamma;
        }
        let mut cprime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        denom[0] = b[0];
        check_pivot(denom[0], 0)?;
        cprime[0] = sup[0] / denom[0];
        for i in 1..n {
            denom[i] = b[i] - sub[i] * cprime[i - 1];
            check_pivot(denom[i], i)?;
            cprime[i] = if i + 1 < n { sup[i] / denom[i] } else { 0.0 };
        }
        let mut solver = CyclicTridiagonal {
            n,
            sub: sub.to_vec(),
            cprime,
            denom,
            correction: None,
        };
        if periodic {
            let mut u = vec![0.0; n];
            u[0] = gamma;
            u[n - 1] = sup[n - 1];
            solver.thomas(&mut u);
            let v_last = sub[0] / gamma;
            let vz = u[0] + v_last * u[n - 1];
            let scale = 1.0 + vz;
            if scale == 0.0 || !scale.is_finite() {
                return Err(Error::Solver("singular periodic tridiagonal system".into()));
            }
            solver.correction = Some(Correction { z: u, v_last, scale });
        }
        Ok(solver)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn thomas(&self, d: &mut [f64]) {
        let n = self.n;
        d[0] /= self.denom[0];
        for i in 1..n {
            d[i] = (d[i] - self.sub[i] * d[i - 1]) / self.denom[i];
        }
        for i in (0..n - 1).rev() {
            d[i] -= self.cprime[i] * d[i + 1];
        }
    }

    /// Solves in place.
    pub fn solve_in_place(&self, rhs: &mut [f64]) {
        debug_assert_eq!(rhs.len(), self.n);
        self.thomas(rhs);
        if let Some(c) = &self.correction {
            let vy = rhs[0] + c.v_last * rhs[self.n - 1];
            let f = vy / c.scale;
            for (x, z) in rhs.iter_mut().zip(&c.z) {
                *x -= f * z;
            }
        }
    }
}

fn check_pivot(p: f64, i: usize) -> Result<()> {
    if p == 0.0 || !p.is_finite() {
        Err(Error::Solver(format!("zero pivot in tridiagonal elimination at row {i}")))
    } else {
        Ok(())
    }
}

/// Dense LU factorization with partial pivoting (row-major storage).
#[derive(Debug, Clone)]
pub struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
}

impl DenseLu {
    pub fn factor(n: usize, mut a: Vec<f64>) -> Result<Self> {
        if a.len() != n * n {
            return Err(Error::Dimension(format!("matrix has {} entries, expected {}", a.len(), n * n)));
        }
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, -1.0), |acc, x| if x.1 > acc.1 { x } else { acc });
            if pmax == 0.0 || !pmax.is_finite() {
                return Err(Error::Solver(format!("singular matrix at column {k}")));
            }
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = a[k * n + k];
            for i in k + 1..n {
                let f = a[i * n + k] / pivot;
                a[i * n + k] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        a[i * n + j] -= f * a[k * n + j];
                    }
                }
            }
        }
        Ok(DenseLu { n, lu: a, perm })
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| rhs[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s: f64 = row.iter().zip(&x[..i]).map(|(a, b)| a * b).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n + i + 1..(i + 1) * n];
            let s: f64 = row.iter().zip(&x[i + 1..]).map(|(a, b)| a * b).sum();
            x[i] = (x[i] - s) / self.lu[i * n + i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn apply_cyclic(sub: &[f64], diag: &[f64], sup: &[f64], x: &[f64]) -> Vec<f64> {
        let n = x.len();
        (0..n)
            .map(|i| sub[i] * x[(i + n - 1) % n] + diag[i] * x[i] + sup[i] * x[(i + 1) % n])
            .collect()
    }

    #[test]
    fn cyclic_solve_recovers_known_solution() {
        let n = 7;
        let sub: Vec<f64> = (0..n).map(|i| -0.3 - 0.05 * i as f64).collect();
        let sup: Vec<f64> = (0..n).map(|i| -0.2 - 0.01 * i as f64).collect();
        let diag: Vec<f64> = (0..n).map(|i| 1.5 + 0.1 * i as f64).collect();
        let x: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 0.5).collect();
        let mut d = apply_cyclic(&sub, &diag, &sup, &x);
        let s = CyclicTridiagonal::new(&sub, &diag, &sup).unwrap();
        s.solve_in_place(&mut d);
        for (a, b) in d.iter().zip(&x) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn non_periodic_tridiagonal() {
        let n = 5;
        let mut sub = vec![-1.0; n];
        let mut sup = vec![-1.0; n];
        sub[0] = 0.0;
        sup[n - 1] = 0.0;
        let diag = vec![3.0; n];
        let x = vec![1.0, -2.0, 0.5, 4.0, 3.0];
        let mut d = apply_cyclic(&sub, &diag, &sup, &x);
        CyclicTridiagonal::new(&sub, &diag, &sup).unwrap().solve_in_place(&mut d);
        for (a, b) in d.iter().zip(&x) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn dense_lu_with_pivoting() {
        let a = vec![0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 3.0, 0.0, 1.0];
        let x = [1.0, 2.0, 3.0];
        let b: Vec<f64> = (0..3).map(|i| (0..3).map(|j| a[i * 3 + j] * x[j]).sum()).collect();
        let lu = DenseLu::factor(3, a).unwrap();
        let y = lu.solve(&b);
        for (p, q) in y.iter().zip(&x) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn dense_lu_rejects_singular() {
        assert!(matches!(DenseLu::factor(2, vec![1.0, 2.0, 2.0, 4.0]), Err(Error::Solver(_))));
    }
}
