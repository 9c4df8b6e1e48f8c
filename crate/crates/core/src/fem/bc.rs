use serde::{Deserialize, Serialize};

use super::grid::StructuredGrid;
use crate::error::{Error, Result};

/// Boundary data derived from the bilinear field `û(x) = a0 + a1 x1 + a2 x2 + a3 x1 x2`.
///
/// `û` is imposed at the Dirichlet nodes; everywhere else on the boundary the
/// normal flux `ĥ·n` with `ĥ = -∇û` is prescribed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub a: [f64; 4],
    pub dirichlet_nodes: Vec<usize>,
}

impl BoundaryCondition {
    /// Dirichlet at the origin corner only, Neumann elsewhere.
    pub fn corner(a: [f64; 4]) -> Self {
        Self {
            a,
            dirichlet_nodes: vec![0],
        }
    }

    pub fn u_hat(&self, x: [f64; 2]) -> f64 {
        let [a0, a1, a2, a3] = self.a;
        a0 + a1 * x[0] + a2 * x[1] + a3 * x[0] * x[1]
    }

    pub fn grad_u_hat(&self, x: [f64; 2]) -> [f64; 2] {
        let [_, a1, a2, a3] = self.a;
        [a1 + a3 * x[1], a2 + a3 * x[0]]
    }

    /// Prescribed flux `ĥ = -∇û`.
    pub fn h_hat(&self, x: [f64; 2]) -> [f64; 2] {
        let g = self.grad_u_hat(x);
        [-g[0], -g[1]]
    }

    pub fn validate(&self, grid: &StructuredGrid) -> Result<()> {
        if self.dirichlet_nodes.is_empty() {
            return Err(Error::Singular(
                "no Dirichlet nodes: the pure Neumann system is singular".into(),
            ));
        }
        if let Some(&bad) = self.dirichlet_nodes.iter().find(|&&n| n >= grid.n_nodes()) {
            return Err(Error::invalid(format!(
                "Dirichlet node {bad} outside grid with {} nodes",
                grid.n_nodes()
            )));
        }
        if self.a.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("boundary coefficients must be finite"));
        }
        Ok(())
    }

    /// Neumann load vector `f_i = ∫_Γh N_i (∇û·n) ds` over the whole boundary.
    ///
    /// Contributions to Dirichlet rows are computed too; they are discarded
    /// when those rows are eliminated.
    pub fn neumann_load(&self, grid: &StructuredGrid) -> Vec<f64> {
        let mut f = vec![0.0; grid.n_nodes()];
        if grid.dim() == 1 {
            // outward normals -1 at x=0 and +1 at x=1
            f[0] += -self.grad_u_hat([0.0, 0.0])[0];
            f[grid.nx()] += self.grad_u_hat([1.0, 0.0])[0];
            return f;
        }
        let (nx, ny) = (grid.nx(), grid.ny());
        let g = 1.0 / 3f64.sqrt();
        let gauss = [0.5 * (1.0 - g), 0.5 * (1.0 + g)];
        let mut edge = |n0: usize, n1: usize, normal: [f64; 2]| {
            let p0 = grid.node_coords(n0);
            let p1 = grid.node_coords(n1);
            let len = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
            for &t in &gauss {
                let x = [p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])];
                let gu = self.grad_u_hat(x);
                let flux = gu[0] * normal[0] + gu[1] * normal[1];
                let w = 0.5 * len;
                f[n0] += w * (1.0 - t) * flux;
                f[n1] += w * t * flux;
            }
        };
        for ix in 0..nx {
            edge(
                grid.node_index(ix, 0),
                grid.node_index(ix + 1, 0),
                [0.0, -1.0],
            );
            edge(
                grid.node_index(ix, ny),
                grid.node_index(ix + 1, ny),
                [0.0, 1.0],
            );
        }
        for iy in 0..ny {
            edge(
                grid.node_index(0, iy),
                grid.node_index(0, iy + 1),
                [-1.0, 0.0],
            );
            edge(
                grid.node_index(nx, iy),
                grid.node_index(nx, iy + 1),
                [1.0, 0.0],
            );
        }
        f
    }
}
