//! Projection by solving a generic quadratic program.
//!
//! `min ½‖x - z‖²  s.t.  l ≤ Kx ≤ u` with a dense constraint matrix `K`
//! assembled from the set, solved by operator splitting (ADMM in the
//! OSQP form) with a cached Cholesky factorization. It ignores all
//! structure of the set on purpose: this is the projection cost a
//! general-purpose solver pays, kept for timing comparisons against the
//! closed-form maps.

use nalgebra::{linalg::Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::mirror::ConstraintSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// Closed-form projections.
    #[default]
    Fast,
    /// Dense iterative QP solve.
    GenericQp,
}

#[derive(Clone, Copy, Debug)]
pub struct QpSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub check_every: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        QpSettings {
            rho: 1.0,
            sigma: 1e-6,
            alpha: 1.6,
            eps: 1e-10,
            max_iter: 20_000,
            check_every: 5,
        }
    }
}

pub struct GenericQpProjector {
    k: Matrix,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rho: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    settings: QpSettings,
    rhs: DVector<f64>,
    v: Vec<f64>,
    y: Vec<f64>,
    kx: Vec<f64>,
    work: Vec<f64>,
    last_iterations: usize,
}

impl std::fmt::Debug for GenericQpProjector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GenericQpProjector")
            .field("rows", &self.k.rows())
            .field("cols", &self.k.cols())
            .finish()
    }
}

impl GenericQpProjector {
    pub fn new(set: &ConstraintSet) -> Result<Self> {
        Self::with_settings(set, QpSettings::default())
    }

    pub fn with_settings(set: &ConstraintSet, settings: QpSettings) -> Result<Self> {
        set.validate()?;
        let n = set.dim();
        let inf = f64::INFINITY;
        let (rows, lower, upper): (usize, Vec<f64>, Vec<f64>) = match set {
            ConstraintSet::UnitSimplex { .. } => {
                let mut l = vec![0.0; n];
                let mut u = vec![inf; n];
                l.push(1.0);
                u.push(1.0);
                (n + 1, l, u)
            }
            ConstraintSet::NonnegativeOrthant { .. } => (n, vec![0.0; n], vec![inf; n]),
            ConstraintSet::Box { lower, upper } => (n, lower.clone(), upper.clone()),
            ConstraintSet::Ball { .. } => {
                return Err(Error::Unsupported(
                    "generic QP projection needs a polyhedral set".into(),
                ))
            }
        };
        let mut k = Matrix::zeros(rows, n);
        for i in 0..n {
            k.set(i, i, 1.0);
        }
        if rows > n {
            for j in 0..n {
                k.set(n, j, 1.0);
            }
        }
        let rho: Vec<f64> = lower
            .iter()
            .zip(&upper)
            .map(|(l, u)| if l == u { 1e3 * settings.rho } else { settings.rho })
            .collect();

        // (1 + σ) I + Kᵀ diag(ρ) K, formed densely.
        let mut m = DMatrix::<f64>::identity(n, n) * (1.0 + settings.sigma);
        for r in 0..rows {
            let row = k.row(r);
            for a in 0..n {
                let ka = row[a];
                if ka == 0.0 {
                    continue;
                }
                for b in 0..n {
                    m[(a, b)] += rho[r] * ka * row[b];
                }
            }
        }
        let chol = Cholesky::new(m)
            .ok_or_else(|| Error::InvalidSet("QP system is not positive definite".into()))?;

        Ok(GenericQpProjector {
            rhs: DVector::zeros(n),
            v: vec![0.0; rows],
            y: vec![0.0; rows],
            kx: vec![0.0; rows],
            work: vec![0.0; rows.max(n)],
            k,
            lower,
            upper,
            rho,
            chol,
            settings,
            last_iterations: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.k.cols()
    }

    pub fn last_iterations(&self) -> usize {
        self.last_iterations
    }

    /// Projects `z` into `out`; returns the iteration count.
    pub fn project_into(&mut self, z: &[f64], out: &mut [f64]) -> usize {
        let n = self.dim();
        let rows = self.k.rows();
        let s = self.settings;
        out.copy_from_slice(z);
        self.k.mul_vec_into(out, &mut self.kx);
        for r in 0..rows {
            self.v[r] = self.kx[r].clamp(self.lower[r], self.upper[r]);
            self.y[r] = 0.0;
        }
        let mut iterations = s.max_iter;
        for it in 0..s.max_iter {
            // rhs = σx + z + Kᵀ(ρ v - y)
            for r in 0..rows {
                self.work[r] = self.rho[r] * self.v[r] - self.y[r];
            }
            for j in 0..n {
                self.rhs[j] = s.sigma * out[j] + z[j];
            }
            self.k
                .tr_mul_vec_acc(&self.work[..rows], 1.0, self.rhs.as_mut_slice());
            self.chol.solve_mut(&mut self.rhs);
            self.k.mul_vec_into(self.rhs.as_slice(), &mut self.kx);
            for j in 0..n {
                out[j] = s.alpha * self.rhs[j] + (1.0 - s.alpha) * out[j];
            }
            for r in 0..rows {
                let relaxed = s.alpha * self.kx[r] + (1.0 - s.alpha) * self.v[r];
                let v_new = (relaxed + self.y[r] / self.rho[r]).clamp(self.lower[r], self.upper[r]);
                self.y[r] += self.rho[r] * (relaxed - v_new);
                self.v[r] = v_new;
            }
            if (it + 1) % s.check_every == 0 && self.converged(z, out) {
                iterations = it + 1;
                break;
            }
        }
        // The first n rows of K are the identity; their clamped splitting
        // iterate is exactly bound-feasible, so zeros come out as exact zeros.
        out.copy_from_slice(&self.v[..n]);
        self.last_iterations = iterations;
        iterations
    }

    fn converged(&mut self, z: &[f64], x: &[f64]) -> bool {
        let n = self.dim();
        let rows = self.k.rows();
        self.k.mul_vec_into(x, &mut self.kx);
        let primal = (0..rows)
            .map(|r| (self.kx[r] - self.v[r]).abs())
            .fold(0.0, f64::max);
        if primal > self.settings.eps {
            return false;
        }
        let dual_vec = &mut self.work[..n];
        for j in 0..n {
            dual_vec[j] = x[j] - z[j];
        }
        self.k.tr_mul_vec_acc(&self.y, 1.0, dual_vec);
        let dual = dual_vec.iter().map(|v| v.abs()).fold(0.0, f64::max);
        dual <= self.settings.eps
    }
}
