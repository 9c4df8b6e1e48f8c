//! Linear solver strategies for the reduced SPD stiffness system.
//!
//! A solver is picked by name (`"dense-cholesky"`, `"sparse-cholesky"`,
//! `"pcg"`, or `"auto"`) and produces a [`Factorization`] that can be reused
//! for the forward solve and the adjoint solve at the same conductivity.

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CscMatrix, CsrMatrix};

use crate::error::{Error, Result};

/// Reusable solve operator for one assembled matrix.
pub trait Factorization: Send + Sync {
    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>>;
}

pub trait LinearSolver: Send + Sync + std::fmt::Debug {
    fn name(&self) -> &'static str;
    fn factor(&self, k: CsrMatrix<f64>) -> Result<Box<dyn Factorization>>;
}

/// Names accepted by [`solver_by_name`].
pub const SOLVER_NAMES: &[&str] = &["auto", "dense-cholesky", "sparse-cholesky", "pcg"];

/// Systems up to this size go to the dense solver under `"auto"`.
pub const AUTO_DENSE_LIMIT: usize = 400;

pub fn solver_by_name(name: &str, tolerance: f64) -> Result<Box<dyn LinearSolver>> {
    match name {
        "auto" => Ok(Box::new(AutoSolver)),
        "dense-cholesky" => Ok(Box::new(DenseCholeskySolver)),
        "sparse-cholesky" => Ok(Box::new(SparseCholeskySolver)),
        "pcg" => Ok(Box::new(PcgSolver {
            tolerance,
            max_iter: None,
        })),
        other => Err(Error::config(format!(
            "unknown linear solver '{other}', expected one of {SOLVER_NAMES:?}"
        ))),
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DenseCholeskySolver;

struct DenseFactor(nalgebra::Cholesky<f64, nalgebra::Dyn>);

impl Factorization for DenseFactor {
    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.0.solve(rhs))
    }
}

impl LinearSolver for DenseCholeskySolver {
    fn name(&self) -> &'static str {
        "dense-cholesky"
    }

    fn factor(&self, k: CsrMatrix<f64>) -> Result<Box<dyn Factorization>> {
        let n = k.nrows();
        let mut dense = DMatrix::zeros(n, n);
        for (i, j, v) in k.triplet_iter() {
            dense[(i, j)] = *v;
        }
        let chol = nalgebra::Cholesky::new(dense)
            .ok_or_else(|| Error::Singular("stiffness matrix is not positive definite".into()))?;
        Ok(Box::new(DenseFactor(chol)))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SparseCholeskySolver;

struct SparseFactor(CscCholesky<f64>);

impl Factorization for SparseFactor {
    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.0.solve(rhs);
        Ok(x.column(0).into_owned())
    }
}

impl LinearSolver for SparseCholeskySolver {
    fn name(&self) -> &'static str {
        "sparse-cholesky"
    }

    fn factor(&self, k: CsrMatrix<f64>) -> Result<Box<dyn Factorization>> {
        // symmetric: the CSR arrays are also a valid CSC description
        let (offsets, indices, values) = k.disassemble();
        let n = offsets.len() - 1;
        let csc = CscMatrix::try_from_csc_data(n, n, offsets, indices, values)
            .map_err(|e| Error::Numerical(format!("invalid stiffness pattern: {e}")))?;
        let chol = CscCholesky::factor(&csc)
            .map_err(|_| Error::Singular("stiffness matrix is not positive definite".into()))?;
        Ok(Box::new(SparseFactor(chol)))
    }
}

/// Jacobi-preconditioned conjugate gradients.
#[derive(Debug, Clone, Copy)]
pub struct PcgSolver {
    pub tolerance: f64,
    pub max_iter: Option<usize>,
}

struct PcgOperator {
    k: CsrMatrix<f64>,
    inv_diag: DVector<f64>,
    tolerance: f64,
    max_iter: usize,
}

impl Factorization for PcgOperator {
    fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let n = rhs.len();
        let b_norm = rhs.norm();
        let mut x = DVector::zeros(n);
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = rhs.clone();
        let mut z = r.component_mul(&self.inv_diag);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        // Tighter than the caller's tolerance so the post-solve residual check passes.
        let target = 0.1 * self.tolerance * b_norm;
        for _ in 0..self.max_iter {
            let ap = &self.k * &p;
            let alpha = rz / p.dot(&ap);
            x.axpy(alpha, &p, 1.0);
            r.axpy(-alpha, &ap, 1.0);
            if r.norm() <= target {
                return Ok(x);
            }
            z = r.component_mul(&self.inv_diag);
            let rz_new = r.dot(&z);
            p = &z + (rz_new / rz) * &p;
            rz = rz_new;
        }
        Err(Error::SolverFailure {
            residual: r.norm() / b_norm,
        })
    }
}

impl LinearSolver for PcgSolver {
    fn name(&self) -> &'static str {
        "pcg"
    }

    fn factor(&self, k: CsrMatrix<f64>) -> Result<Box<dyn Factorization>> {
        let n = k.nrows();
        let mut inv_diag = DVector::zeros(n);
        for (i, j, v) in k.triplet_iter() {
            if i == j {
                if *v <= 0.0 {
                    return Err(Error::Singular("non-positive diagonal entry".into()));
                }
                inv_diag[i] = 1.0 / v;
            }
        }
        Ok(Box::new(PcgOperator {
            k,
            inv_diag,
            tolerance: self.tolerance,
            max_iter: self.max_iter.unwrap_or(10 * n + 100),
        }))
    }
}

/// Dense Cholesky for small systems, sparse Cholesky otherwise.
#[derive(Debug, Clone, Copy, Default)]
pub struct AutoSolver;

impl LinearSolver for AutoSolver {
    fn name(&self) -> &'static str {
        "auto"
    }

    fn factor(&self, k: CsrMatrix<f64>) -> Result<Box<dyn Factorization>> {
        if k.nrows() <= AUTO_DENSE_LIMIT {
            DenseCholeskySolver.factor(k)
        } else {
            SparseCholeskySolver.factor(k)
        }
    }
}
