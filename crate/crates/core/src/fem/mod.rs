//! Structured-grid finite elements for `-∇·(λ∇u) = 0` with element-constant
//! conductivity, prescribed-flux Neumann data and point Dirichlet data.

mod bc;
mod grid;
mod interp;
mod problem;
pub mod solver;

pub use bc::BoundaryCondition;
pub use grid::StructuredGrid;
pub use interp::interpolation_matrix;
pub use problem::{
    reference_element_stiffness, ConductivityField, FemProblem, FemSolution, ReducedSystem,
    DEFAULT_TOLERANCE,
};
pub use solver::{solver_by_name, Factorization, LinearSolver};
