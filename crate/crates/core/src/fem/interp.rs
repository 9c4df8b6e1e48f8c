use nalgebra_sparse::{CooMatrix, CsrMatrix};

use super::grid::StructuredGrid;
use crate::error::{Error, Result};

/// Locates `x ∈ [0,1]` on an axis with `n` cells: (cell index, local coordinate in [0,1]).
fn locate(x: f64, n: usize) -> (usize, f64) {
    let s = x * n as f64;
    let mut cell = s.floor() as isize;
    cell = cell.clamp(0, n as isize - 1);
    let t = (s - cell as f64).clamp(0.0, 1.0);
    (cell as usize, t)
}

/// Linear (1D) / bilinear (2D) interpolation from coarse nodes to fine nodes.
///
/// Row `i` holds the weights of fine node `i`; rows sum to one. Weights that
/// vanish exactly are not stored, so a fine node on a coarse node yields a
/// unit row.
pub fn interpolation_matrix(
    coarse: &StructuredGrid,
    fine: &StructuredGrid,
) -> Result<CsrMatrix<f64>> {
    if coarse.dim() != fine.dim() {
        return Err(Error::invalid(format!(
            "grid dimension mismatch: coarse {}D, fine {}D",
            coarse.dim(),
            fine.dim()
        )));
    }
    let mut coo = CooMatrix::new(fine.n_nodes(), coarse.n_nodes());
    for i in 0..fine.n_nodes() {
        let x = fine.node_coords(i);
        let (cx, tx) = locate(x[0], coarse.nx());
        if coarse.dim() == 1 {
            let w = [(cx, 1.0 - tx), (cx + 1, tx)];
            for (j, v) in w {
                if v != 0.0 {
                    coo.push(i, j, v);
                }
            }
        } else {
            let (cy, ty) = locate(x[1], coarse.ny());
            let w = [
                (coarse.node_index(cx, cy), (1.0 - tx) * (1.0 - ty)),
                (coarse.node_index(cx + 1, cy), tx * (1.0 - ty)),
                (coarse.node_index(cx + 1, cy + 1), tx * ty),
                (coarse.node_index(cx, cy + 1), (1.0 - tx) * ty),
            ];
            for (j, v) in w {
                if v != 0.0 {
                    coo.push(i, j, v);
                }
            }
        }
    }
    Ok(CsrMatrix::from(&coo))
}
