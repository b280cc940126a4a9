//! Conic problem representation, the interior-point backend, and the
//! moment (Shor) relaxation of quadratic programs.

pub mod backend;
pub mod conic;
pub mod dump;
pub mod shor;
pub mod sizes;

pub use backend::{solve, ClarabelBackend, ConicBackend};
pub use conic::{psd_entry, Cone, ConicBuilder, ConicProblem, ConicSolution, SolveStatus, SolverSettings};
pub use dump::{dump_to_string, write_dump};
pub use shor::{shor_relax, MomentMatrixLayout, ShorRelaxation, ShorSolution};
pub use sizes::{model_sizes, ModelKind, ModelSizes};
