use std::sync::Arc;

use nalgebra::DVector;
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::CsrMatrix;

use super::bc::BoundaryCondition;
use super::grid::StructuredGrid;
use super::solver::{Factorization, LinearSolver};
use crate::error::{Error, Result};

/// Default relative residual tolerance for solves.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Per-element positive conductivity.
#[derive(Debug, Clone, PartialEq)]
pub struct ConductivityField(Vec<f64>);

impl ConductivityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_conductivity(&values)?;
        Ok(Self(values))
    }

    pub fn uniform(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

fn check_conductivity(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
        Some(i) => Err(Error::invalid(format!(
            "conductivity must be positive and finite, element {i} has {}",
            values[i]
        ))),
        None => Ok(()),
    }
}

/// Nodal solution; Dirichlet entries hold the prescribed values exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct FemSolution {
    pub u: DVector<f64>,
    pub grid: StructuredGrid,
}

/// Reduced (Dirichlet-eliminated) linear system.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub stiffness: CsrMatrix<f64>,
    pub load: DVector<f64>,
}

/// Unit-conductivity element stiffness of a `hx × hy` bilinear rectangle
/// (2×2 Gauss), or of a 1D linear element of length `hx`.
pub fn reference_element_stiffness(grid: &StructuredGrid) -> Vec<Vec<f64>> {
    let hx = grid.hx();
    if grid.dim() == 1 {
        return vec![vec![1.0 / hx, -1.0 / hx], vec![-1.0 / hx, 1.0 / hx]];
    }
    let hy = grid.hy();
    let g = 1.0 / 3f64.sqrt();
    let pts = [0.5 * (1.0 - g), 0.5 * (1.0 + g)];
    let mut k = vec![vec![0.0; 4]; 4];
    for &xi in &pts {
        for &eta in &pts {
            // derivatives of N0..N3 in physical coordinates
            let dx = [-(1.0 - eta) / hx, (1.0 - eta) / hx, eta / hx, -eta / hx];
            let dy = [-(1.0 - xi) / hy, -xi / hy, xi / hy, (1.0 - xi) / hy];
            let w = 0.25 * hx * hy;
            for a in 0..4 {
                for b in 0..4 {
                    k[a][b] += w * (dx[a] * dx[b] + dy[a] * dy[b]);
                }
            }
        }
    }
    k
}

/// Finite-element discretization of `-∇·(λ∇u) = 0` on a structured grid with
/// fixed boundary data. Immutable after construction; solves for different
/// conductivities can run concurrently.
#[derive(Debug, Clone)]
pub struct FemProblem {
    grid: StructuredGrid,
    bc: BoundaryCondition,
    solver: Arc<dyn LinearSolver>,
    tolerance: f64,
    free_index: Vec<Option<usize>>,
    n_free: usize,
    u_dirichlet: Vec<f64>,
    neumann: Vec<f64>,
    k_ref: Vec<f64>,
    n_loc: usize,
    pattern: SparsityPattern,
    // per element, n_loc*n_loc positions into the CSR value array (usize::MAX when not free-free)
    scatter: Vec<usize>,
}

impl FemProblem {
    pub fn new(
        grid: StructuredGrid,
        bc: BoundaryCondition,
        solver: Arc<dyn LinearSolver>,
    ) -> Result<Self> {
        bc.validate(&grid)?;
        let n_nodes = grid.n_nodes();
        let mut is_dirichlet = vec![false; n_nodes];
        for &n in &bc.dirichlet_nodes {
            is_dirichlet[n] = true;
        }
        let mut free_index = vec![None; n_nodes];
        let mut n_free = 0;
        for (n, d) in is_dirichlet.iter().enumerate() {
            if !d {
                free_index[n] = Some(n_free);
                n_free += 1;
            }
        }
        if n_free == 0 {
            return Err(Error::invalid("every node is a Dirichlet node"));
        }
        let u_dirichlet = (0..n_nodes)
            .map(|n| {
                if is_dirichlet[n] {
                    bc.u_hat(grid.node_coords(n))
                } else {
                    0.0
                }
            })
            .collect();
        let neumann = bc.neumann_load(&grid);
        let k_ref_rows = reference_element_stiffness(&grid);
        let n_loc = k_ref_rows.len();
        let k_ref: Vec<f64> = k_ref_rows.into_iter().flatten().collect();

        // column sets per free row
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n_free];
        for e in 0..grid.n_elements() {
            let nodes = grid.element_nodes(e);
            for &a in &nodes {
                if let Some(i) = free_index[a] {
                    for &b in &nodes {
                        if let Some(j) = free_index[b] {
                            rows[i].push(j);
                        }
                    }
                }
            }
        }
        let mut offsets = Vec::with_capacity(n_free + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for r in rows.iter_mut() {
            r.sort_unstable();
            r.dedup();
            indices.extend_from_slice(r);
            offsets.push(indices.len());
        }
        let pattern =
            SparsityPattern::try_from_offsets_and_indices(n_free, n_free, offsets, indices)
                .map_err(|e| Error::Numerical(format!("bad sparsity pattern: {e}")))?;

        let mut scatter = Vec::with_capacity(grid.n_elements() * n_loc * n_loc);
        for e in 0..grid.n_elements() {
            let nodes = grid.element_nodes(e);
            for &a in &nodes {
                for &b in &nodes {
                    let pos = match (free_index[a], free_index[b]) {
                        (Some(i), Some(j)) => {
                            let start = pattern.major_offsets()[i];
                            let lane = pattern.lane(i);
                            start + lane.binary_search(&j).expect("pattern contains pair")
                        }
                        _ => usize::MAX,
                    };
                    scatter.push(pos);
                }
            }
        }

        Ok(Self {
            grid,
            bc,
            solver,
            tolerance: DEFAULT_TOLERANCE,
            free_index,
            n_free,
            u_dirichlet,
            neumann,
            k_ref,
            n_loc,
            pattern,
            scatter,
        })
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn grid(&self) -> &StructuredGrid {
        &self.grid
    }

    pub fn bc(&self) -> &BoundaryCondition {
        &self.bc
    }

    pub fn solver_name(&self) -> &'static str {
        self.solver.name()
    }

    pub fn n_free(&self) -> usize {
        self.n_free
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.free_index[node].is_none()
    }

    /// Unit-conductivity element stiffness, row-major `n_loc × n_loc`.
    pub fn element_stiffness(&self) -> &[f64] {
        &self.k_ref
    }

    /// Assembles the Dirichlet-eliminated system for conductivity `lam`.
    pub fn assemble(&self, lam: &[f64]) -> Result<ReducedSystem> {
        if lam.len() != self.grid.n_elements() {
            return Err(Error::invalid(format!(
                "conductivity has {} entries, grid has {} elements",
                lam.len(),
                self.grid.n_elements()
            )));
        }
        check_conductivity(lam)?;
        let nnz = self.pattern.nnz();
        let mut values = vec![0.0; nnz];
        let mut load = DVector::zeros(self.n_free);
        for (n, idx) in self.free_index.iter().enumerate() {
            if let Some(i) = idx {
                load[*i] = self.neumann[n];
            }
        }
        let nl = self.n_loc;
        for (e, &le) in lam.iter().enumerate() {
            let nodes = self.grid.element_nodes(e);
            let sc = &self.scatter[e * nl * nl..(e + 1) * nl * nl];
            for a in 0..nl {
                for b in 0..nl {
                    let kab = le * self.k_ref[a * nl + b];
                    let pos = sc[a * nl + b];
                    if pos != usize::MAX {
                        values[pos] += kab;
                    } else if let Some(i) = self.free_index[nodes[a]] {
                        // free row, Dirichlet column: move to the right-hand side
                        load[i] -= kab * self.u_dirichlet[nodes[b]];
                    }
                }
            }
        }
        let stiffness = CsrMatrix::try_from_pattern_and_values(self.pattern.clone(), values)
            .map_err(|e| Error::Numerical(format!("assembly failed: {e}")))?;
        Ok(ReducedSystem { stiffness, load })
    }

    /// Solves and returns the factorization for reuse in adjoint solves.
    pub fn solve_factored(&self, lam: &[f64]) -> Result<(FemSolution, Box<dyn Factorization>)> {
        let sys = self.assemble(lam)?;
        let factor = self.solver.factor(sys.stiffness.clone())?;
        let x = factor.solve(&sys.load)?;
        let residual = &sys.stiffness * &x - &sys.load;
        let scale = sys.load.amax();
        let rel = if scale > 0.0 {
            residual.amax() / scale
        } else {
            residual.amax()
        };
        if !(rel <= self.tolerance) {
            return Err(Error::SolverFailure { residual: rel });
        }
        Ok((self.expand(&x), factor))
    }

    pub fn solve(&self, lam: &[f64]) -> Result<FemSolution> {
        self.solve_factored(lam).map(|(u, _)| u)
    }

    fn expand(&self, x: &DVector<f64>) -> FemSolution {
        let u = DVector::from_iterator(
            self.grid.n_nodes(),
            self.free_index
                .iter()
                .enumerate()
                .map(|(n, idx)| idx.map_or(self.u_dirichlet[n], |i| x[i])),
        );
        FemSolution {
            u,
            grid: self.grid.clone(),
        }
    }

    /// `dq/dλ_e` for a scalar functional `q(u)` given `dq/du`, by one adjoint solve.
    pub fn adjoint_gradient(
        &self,
        lam: &[f64],
        u: &FemSolution,
        dq_du: &[f64],
    ) -> Result<Vec<f64>> {
        let sys = self.assemble(lam)?;
        let factor = self.solver.factor(sys.stiffness)?;
        self.adjoint_with_factor(factor.as_ref(), u, dq_du)
    }

    /// Adjoint gradient reusing an existing factorization of `K(λ)`.
    pub fn adjoint_with_factor(
        &self,
        factor: &dyn Factorization,
        u: &FemSolution,
        dq_du: &[f64],
    ) -> Result<Vec<f64>> {
        let n_nodes = self.grid.n_nodes();
        if dq_du.len() != n_nodes || u.u.len() != n_nodes {
            return Err(Error::invalid(format!(
                "adjoint inputs must have {n_nodes} nodal entries (got dq/du {}, u {})",
                dq_du.len(),
                u.u.len()
            )));
        }
        let mut g = DVector::zeros(self.n_free);
        for (n, idx) in self.free_index.iter().enumerate() {
            if let Some(i) = idx {
                g[*i] = dq_du[n];
            }
        }
        let mu_free = factor.solve(&g)?;
        let mu: Vec<f64> = self
            .free_index
            .iter()
            .map(|idx| idx.map_or(0.0, |i| mu_free[i]))
            .collect();
        let nl = self.n_loc;
        let grad = (0..self.grid.n_elements())
            .map(|e| {
                let nodes = self.grid.element_nodes(e);
                let mut s = 0.0;
                for a in 0..nl {
                    let ua = u.u[nodes[a]];
                    for b in 0..nl {
                        s += ua * self.k_ref[a * nl + b] * mu[nodes[b]];
                    }
                }
                -s
            })
            .collect();
        Ok(grad)
    }
}
