//! Euclidean projection onto `{z : F z <= f}` by a primal active-set method.
//!
//! Used by the horizon solver (projected gradient) and by set-distance
//! computations. Problems here have at most a few dozen variables, so the
//! working-set systems are solved densely from scratch each iteration.

use thiserror::Error;

use crate::linalg::{solve, Matrix};
use crate::scalar::{dot, norm2, Real};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("starting point violates constraint {row} by {violation:e}")]
    InfeasibleStart { row: usize, violation: f64 },
    #[error("active-set iteration limit ({0}) reached")]
    IterationLimit(usize),
}

/// A fixed constraint system `F z <= f` that points can be projected onto.
#[derive(Debug, Clone)]
pub struct Projector<T: Real> {
    rows: Matrix<T>,
    rhs: Vec<T>,
    row_norms: Vec<T>,
}

impl<T: Real> Projector<T> {
    pub fn new(rows: Matrix<T>, rhs: Vec<T>) -> Self {
        assert_eq!(rows.rows(), rhs.len());
        let row_norms = (0..rows.rows()).map(|i| norm2(rows.row(i))).collect();
        Self { rows, rhs, row_norms }
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    pub fn rows(&self) -> &Matrix<T> {
        &self.rows
    }

    pub fn rhs(&self) -> &[T] {
        &self.rhs
    }

    /// Largest scaled constraint violation at `z` (zero when feasible).
    pub fn max_violation(&self, z: &[T]) -> T {
        (0..self.rows.rows())
            .map(|i| (dot(self.rows.row(i), z) - self.rhs[i]) / (T::one() + self.rhs[i].abs()))
            .fold(T::zero(), T::max)
    }

    fn activity_tol(&self, i: usize) -> T {
        T::lit(1e-10).max(T::epsilon() * T::lit(1e3)) * (T::one() + self.rhs[i].abs())
    }

    /// Projects `y` starting from the feasible point `start`.
    pub fn project(&self, y: &[T], start: &[T]) -> Result<Vec<T>, QpError> {
        let d = self.dim();
        let m = self.rows.rows();
        assert_eq!(y.len(), d);
        assert_eq!(start.len(), d);

        let mut z = start.to_vec();
        for i in 0..m {
            let slack = self.rhs[i] - dot(self.rows.row(i), &z);
            if slack < -T::lit(1e3) * self.activity_tol(i) {
                return Err(QpError::InfeasibleStart {
                    row: i,
                    violation: (-slack).to_f64_lossy(),
                });
            }
        }

        let mut working: Vec<usize> = Vec::with_capacity(d);
        for i in 0..m {
            if working.len() == d {
                break;
            }
            let slack = self.rhs[i] - dot(self.rows.row(i), &z);
            if slack.abs() <= self.activity_tol(i) && self.independent_of(&working, i) {
                working.push(i);
            }
        }

        let limit = 20 * (m + d) + 50;
        let mut grad = vec![T::zero(); d];
        for _ in 0..limit {
            for k in 0..d {
                grad[k] = z[k] - y[k];
            }
            let (step, lambda) = self.null_space_step(&working, &grad);
            let step_norm = norm2(&step);
            let scale = T::one() + norm2(&z) + norm2(y);
            if step_norm <= T::lit(1e-13).max(T::epsilon() * T::lit(8.0)) * scale {
                // multipliers of the working constraints are -lambda
                let mut worst = None;
                let mut worst_val = -T::lit(1e-12).max(T::epsilon() * T::lit(16.0)) * scale;
                for (pos, &l) in lambda.iter().enumerate() {
                    let mu = -l;
                    if mu < worst_val {
                        worst_val = mu;
                        worst = Some(pos);
                    }
                }
                match worst {
                    None => return Ok(z),
                    Some(pos) => {
                        working.remove(pos);
                        continue;
                    }
                }
            }

            let mut alpha = T::one();
            let mut blocking = None;
            for i in 0..m {
                if working.contains(&i) {
                    continue;
                }
                let fp = dot(self.rows.row(i), &step);
                if fp <= T::lit(1e-14).max(T::epsilon()) * self.row_norms[i] * step_norm {
                    continue;
                }
                let slack = (self.rhs[i] - dot(self.rows.row(i), &z)).max(T::zero());
                let a = slack / fp;
                if a < alpha {
                    alpha = a;
                    blocking = Some(i);
                }
            }
            for k in 0..d {
                z[k] += alpha * step[k];
            }
            if let Some(i) = blocking {
                if working.len() < d && self.independent_of(&working, i) {
                    working.push(i);
                }
            }
        }
        Err(QpError::IterationLimit(limit))
    }

    /// Step `p` minimising `½‖z + p − y‖²` on the null space of the working rows,
    /// together with the Lagrange solve `λ = (F_W F_Wᵀ)⁻¹ F_W (z − y)`.
    fn null_space_step(&self, working: &[usize], grad: &[T]) -> (Vec<T>, Vec<T>) {
        let d = grad.len();
        if working.is_empty() {
            return (grad.iter().map(|&g| -g).collect(), Vec::new());
        }
        let w = working.len();
        let mut gram = Matrix::zeros(w, w);
        let mut rhs = vec![T::zero(); w];
        for (a, &i) in working.iter().enumerate() {
            rhs[a] = dot(self.rows.row(i), grad);
            for (b, &j) in working.iter().enumerate() {
                gram[(a, b)] = dot(self.rows.row(i), self.rows.row(j));
            }
        }
        let lambda = solve(&gram, &rhs).unwrap_or_else(|| vec![T::zero(); w]);
        let mut step: Vec<T> = grad.iter().map(|&g| -g).collect();
        for (a, &i) in working.iter().enumerate() {
            let row = self.rows.row(i);
            for k in 0..d {
                step[k] += lambda[a] * row[k];
            }
        }
        (step, lambda)
    }

    fn independent_of(&self, working: &[usize], cand: usize) -> bool {
        if self.row_norms[cand] <= T::min_positive_value() {
            return false;
        }
        // Gram-Schmidt residual of the candidate row against the working rows.
        let mut basis: Vec<Vec<T>> = Vec::with_capacity(working.len());
        for &i in working {
            let mut v = self.rows.row(i).to_vec();
            for b in &basis {
                let c = dot(&v, b);
                for (vk, &bk) in v.iter_mut().zip(b) {
                    *vk -= c * bk;
                }
            }
            let n = norm2(&v);
            if n > T::epsilon() * T::lit(1e3) {
                v.iter_mut().for_each(|x| *x /= n);
                basis.push(v);
            }
        }
        let mut r: Vec<T> = self.rows.row(cand).iter().map(|&x| x / self.row_norms[cand]).collect();
        for b in &basis {
            let c = dot(&r, b);
            for (rk, &bk) in r.iter_mut().zip(b) {
                *rk -= c * bk;
            }
        }
        norm2(&r) > T::lit(1e-9).max(T::epsilon() * T::lit(1e4))
    }
}
