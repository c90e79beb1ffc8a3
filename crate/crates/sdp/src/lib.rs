//! Dense semidefinite programming over symmetric PSD blocks and free scalars.
//!
//! Problems are stated as linear equality constraints over the entries of a
//! list of PSD matrix blocks plus a list of free scalar variables, with a
//! linear objective in either sense.  The solver is a primal-dual
//! interior-point method (Nesterov-Todd scaling, Mehrotra
//! predictor-corrector) working on a dense Schur complement.  Free scalars
//! stay in an augmented KKT system; they are never split into cone
//! differences except by the SDPA exporter, which has no other way to say
//! "free".

pub mod problem;
pub mod reference;
pub mod residuals;
pub mod sdpa;
pub mod solver;

pub use problem::{BlockEntry, LinExpr, SdpError, SdpProblem, Sense};
pub use reference::{reference_suite, ReferenceInstance};
pub use residuals::{residuals, CandidatePoint, ResidualReport};
pub use sdpa::{export_sdpa, import_sdpa};
pub use solver::{solve, IterStat, SdpSolution, SolveStatus, SolverConfig};
