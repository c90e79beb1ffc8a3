//! Certified polynomial outer approximations of maximum controlled
//! invariant sets.
//!
//! Given a discrete-time map x+ = f(x, u) or a vector field dx = f(x, u)
//! with polynomial entries and box/ball constraint sets, this crate builds
//! the degree-d sum-of-squares program whose solution (v, w) certifies
//! {x in X : v(x) >= 0} as an outer approximation of the set of states
//! that can be kept inside X forever.  The moment-side relaxation of the
//! same hierarchy is assembled too, so primal and dual optima can be
//! cross-checked.  Brute-force grid and sampling oracles provide
//! independent ground truth for validation.

pub mod contour;
pub mod moment;
pub mod oracle;
pub mod pipeline;
pub mod poly;
pub mod problem;
pub mod sets;
pub mod sos;
pub mod system;

/// Solver settings suited to the programs assembled by this crate.  The
/// optimal faces are degenerate (per-entry tie rows on the moment side,
/// redundant Putinar multipliers on the certificate side), so the Schur
/// system hits the f64 conditioning wall while the worst violation sits
/// near 1e-8 relative; asking for more trades a usable optimum for a
/// numerical failure.  1e-7 is reliably attainable and an order tighter
/// than the 1e-6 the downstream identities are checked at.
pub fn solver_config() -> sdp::SolverConfig {
    sdp::SolverConfig {
        tol_primal: 1e-7,
        tol_dual: 1e-7,
        tol_gap: 1e-7,
        ..sdp::SolverConfig::default()
    }
}
