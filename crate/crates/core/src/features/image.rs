use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::StructuredGrid;
use crate::media::PhaseSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Hi,
    Lo,
}

impl Phase {
    pub fn other(self) -> Phase {
        match self {
            Phase::Hi => Phase::Lo,
            Phase::Lo => Phase::Hi,
        }
    }

    pub fn value(self, phases: PhaseSpec) -> f64 {
        match self {
            Phase::Hi => phases.lam_hi,
            Phase::Lo => phases.lam_lo,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Hi => "hi",
            Phase::Lo => "lo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
        }
    }
}

/// Row-major pixel image (`iy * nx + ix`); 1D images have `ny = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CellImage {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl CellImage {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 || values.len() != nx * ny {
            return Err(Error::invalid(format!(
                "image of {nx}x{ny} pixels cannot hold {} values",
                values.len()
            )));
        }
        Ok(Self { nx, ny, values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at(&self, ix: usize, iy: usize) -> f64 {
        self.values[iy * self.nx + ix]
    }

    /// Indicator of `phase` per pixel.
    pub fn mask(&self, phase: Phase, phases: PhaseSpec) -> Mask {
        let bits = self
            .values
            .iter()
            .map(|&v| phases.is_hi(v) == (phase == Phase::Hi))
            .collect();
        Mask {
            nx: self.nx,
            ny: self.ny,
            bits,
        }
    }

    /// Volume fraction of `phase`.
    pub fn fraction(&self, phase: Phase, phases: PhaseSpec) -> f64 {
        let m = self.mask(phase, phases);
        m.count() as f64 / m.bits.len() as f64
    }

    /// Image with the two phase values exchanged.
    pub fn phase_swapped(&self, phases: PhaseSpec) -> CellImage {
        let values = self
            .values
            .iter()
            .map(|&v| {
                if phases.is_hi(v) {
                    phases.lam_lo
                } else {
                    phases.lam_hi
                }
            })
            .collect();
        CellImage {
            nx: self.nx,
            ny: self.ny,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub nx: usize,
    pub ny: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, ix: usize, iy: usize) -> bool {
        self.bits[iy * self.nx + ix]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }
}

/// Fine elements belonging to each coarse element.
#[derive(Debug, Clone, PartialEq)]
pub struct MacroCellPartition {
    coarse: StructuredGrid,
    fine: StructuredGrid,
    cell_nx: usize,
    cell_ny: usize,
    members: Vec<Vec<usize>>,
}

impl MacroCellPartition {
    pub fn new(coarse: &StructuredGrid, fine: &StructuredGrid) -> Result<Self> {
        if !coarse.is_refined_by(fine) {
            return Err(Error::config(format!(
                "coarse grid {}x{} does not divide fine grid {}x{}",
                coarse.nx(),
                coarse.ny(),
                fine.nx(),
                fine.ny()
            )));
        }
        let cell_nx = fine.nx() / coarse.nx();
        let cell_ny = fine.ny() / coarse.ny();
        let mut members = Vec::with_capacity(coarse.n_elements());
        for cy in 0..coarse.ny() {
            for cx in 0..coarse.nx() {
                let mut m = Vec::with_capacity(cell_nx * cell_ny);
                for ly in 0..cell_ny {
                    for lx in 0..cell_nx {
                        m.push((cy * cell_ny + ly) * fine.nx() + cx * cell_nx + lx);
                    }
                }
                members.push(m);
            }
        }
        Ok(Self {
            coarse: coarse.clone(),
            fine: fine.clone(),
            cell_nx,
            cell_ny,
            members,
        })
    }

    pub fn coarse(&self) -> &StructuredGrid {
        &self.coarse
    }

    pub fn fine(&self) -> &StructuredGrid {
        &self.fine
    }

    pub fn n_cells(&self) -> usize {
        self.members.len()
    }

    /// Pixels per macro-cell along x and y.
    pub fn cell_shape(&self) -> (usize, usize) {
        (self.cell_nx, self.cell_ny)
    }

    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn cell_image(&self, k: usize, lam_f: &[f64]) -> CellImage {
        CellImage {
            nx: self.cell_nx,
            ny: self.cell_ny,
            values: self.members[k].iter().map(|&i| lam_f[i]).collect(),
        }
    }

    pub fn global_image(&self, lam_f: &[f64]) -> CellImage {
        CellImage {
            nx: self.fine.nx(),
            ny: self.fine.ny(),
            values: lam_f.to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_covers_every_fine_element_once() {
        let c = StructuredGrid::new_2d(4, 4).unwrap();
        let f = StructuredGrid::new_2d(16, 16).unwrap();
        let p = MacroCellPartition::new(&c, &f).unwrap();
        let mut seen = vec![0; f.n_elements()];
        for k in 0..p.n_cells() {
            let ck = c.element_center(k);
            for &i in p.members(k) {
                seen[i] += 1;
                let fi = f.element_center(i);
                assert!((fi[0] - ck[0]).abs() < 0.125 && (fi[1] - ck[1]).abs() < 0.125);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    #[test]
    fn first_1d_cell_is_first_entries() {
        let c = StructuredGrid::new_1d(8).unwrap();
        let f = StructuredGrid::new_1d(128).unwrap();
        let p = MacroCellPartition::new(&c, &f).unwrap();
        assert_eq!(p.members(0), (0..16).collect::<Vec<_>>().as_slice());
        assert_eq!(p.cell_shape(), (16, 1));
    }

    #[test]
    fn non_nested_grids_rejected() {
        let c = StructuredGrid::new_2d(3, 3).unwrap();
        let f = StructuredGrid::new_2d(16, 16).unwrap();
        assert!(matches!(
            MacroCellPartition::new(&c, &f),
            Err(Error::Config(_))
        ));
    }
}
