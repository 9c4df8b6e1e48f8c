use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform structured grid on the unit interval or unit square.
///
/// Node `(ix, iy)` has index `iy * (nx + 1) + ix`; element `(ix, iy)` has
/// index `iy * nx + ix` and counter-clockwise connectivity starting at its
/// lower-left node. In 1D `ny` is fixed to 1 and only `nx` is meaningful.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredGrid {
    dim: usize,
    nx: usize,
    ny: usize,
}

impl StructuredGrid {
    pub fn new_1d(nx: usize) -> Result<Self> {
        if nx == 0 {
            return Err(Error::invalid("grid needs at least one element"));
        }
        Ok(Self { dim: 1, nx, ny: 1 })
    }

    pub fn new_2d(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("grid needs at least one element per axis"));
        }
        Ok(Self { dim: 2, nx, ny })
    }

    /// Builds from an element count per axis (length 1 or 2).
    pub fn from_nel(nel: &[usize]) -> Result<Self> {
        match nel {
            [nx] => Self::new_1d(*nx),
            [nx, ny] => Self::new_2d(*nx, *ny),
            _ => Err(Error::invalid(format!(
                "grid dimension must be 1 or 2, got {}",
                nel.len()
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nel_per_axis(&self) -> Vec<usize> {
        if self.dim == 1 {
            vec![self.nx]
        } else {
            vec![self.nx, self.ny]
        }
    }

    pub fn n_elements(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        if self.dim == 1 {
            self.nx + 1
        } else {
            (self.nx + 1) * (self.ny + 1)
        }
    }

    pub fn hx(&self) -> f64 {
        1.0 / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        if self.dim == 1 {
            1.0
        } else {
            1.0 / self.ny as f64
        }
    }

    pub fn node_index(&self, ix: usize, iy: usize) -> usize {
        iy * (self.nx + 1) + ix
    }

    pub fn element_index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    /// Coordinates `[x, y]` of node `i`; `y = 0` in 1D.
    pub fn node_coords(&self, i: usize) -> [f64; 2] {
        if self.dim == 1 {
            [i as f64 * self.hx(), 0.0]
        } else {
            let ix = i % (self.nx + 1);
            let iy = i / (self.nx + 1);
            [ix as f64 * self.hx(), iy as f64 * self.hy()]
        }
    }

    pub fn element_center(&self, e: usize) -> [f64; 2] {
        let ix = e % self.nx;
        let iy = e / self.nx;
        if self.dim == 1 {
            [(ix as f64 + 0.5) * self.hx(), 0.0]
        } else {
            [(ix as f64 + 0.5) * self.hx(), (iy as f64 + 0.5) * self.hy()]
        }
    }

    /// Node indices of element `e`: 2 in 1D, 4 (counter-clockwise) in 2D.
    pub fn element_nodes(&self, e: usize) -> Vec<usize> {
        let ix = e % self.nx;
        let iy = e / self.nx;
        if self.dim == 1 {
            vec![ix, ix + 1]
        } else {
            vec![
                self.node_index(ix, iy),
                self.node_index(ix + 1, iy),
                self.node_index(ix + 1, iy + 1),
                self.node_index(ix, iy + 1),
            ]
        }
    }

    pub fn element_volume(&self) -> f64 {
        self.hx() * self.hy()
    }

    /// Maximum number of free-node index offsets spanned by one element.
    pub fn bandwidth(&self) -> usize {
        if self.dim == 1 {
            1
        } else {
            self.nx + 2
        }
    }

    /// True when every coarse element boundary coincides with fine element boundaries.
    pub fn is_refined_by(&self, fine: &StructuredGrid) -> bool {
        self.dim == fine.dim && fine.nx % self.nx == 0 && (self.dim == 1 || fine.ny % self.ny == 0)
    }
}
