//! Certificate side of the hierarchy: Gram-matrix parametrization of
//! sums of squares and the assembly of the programs whose solutions
//! (v, w) certify {x in X : v(x) >= 0} as an outer approximation of the
//! maximum controlled invariant set.
//!
//! Each program imposes three polynomial identities.  Transport: v decays
//! along the dynamics on X x U (or X when uncontrolled).  Domination:
//! w - v - 1 is nonnegative on X.  Positivity: w is nonnegative on X.
//! A nonnegativity claim of degree D over a set {g_i >= 0} is witnessed
//! by one free sum of squares plus one multiplier per inequality, and
//! every Gram entry is referenced directly by the coefficient-matching
//! rows, so the programs stay small.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdp::{LinExpr, SdpProblem, SdpSolution, Sense, SolveStatus};
use thiserror::Error;

use crate::moment::scalar_name;
use crate::poly::{monomial_basis, Monomial, Polynomial, PolynomialVector};
use crate::sets::{
    lebesgue_moments_ball, lebesgue_moments_box, AffineScaling, SemialgebraicSet, ShapeHint,
};
use crate::system::{ProblemData, TimeMode};

/// Pointwise identity residual beyond which a certificate is refused,
/// relative to 1 + the largest coefficient of the certified combination.
pub(crate) const IDENTITY_TOL: f64 = 1e-6;
/// Grid margins may dip this far below zero (solver slack) before the
/// certificate is refused.
pub(crate) const MARGIN_TOL: f64 = 1e-5;
/// Validation grid resolution per state and per control axis.
const GRID_STATE_AXIS: usize = 11;
const GRID_CONTROL_AXIS: usize = 5;
/// Sample count for the random identity-residual audit.
const RESIDUAL_POINTS: usize = 200;

#[derive(Debug, Error)]
pub enum SosError {
    #[error("identity degree {got} cannot absorb a constraint of degree {needed}")]
    InsufficientDegree { needed: u32, got: u32 },
    #[error("{set} set has no ball constraint certifying compactness")]
    MissingBall { set: &'static str },
    #[error("system has controls but no control set was given")]
    MissingControlSet,
    #[error("no closed-form volume moments for a generic set")]
    NoClosedFormMoments,
    #[error("solver finished with {status:?}; refusing to extract a certificate")]
    Unconverged { status: SolveStatus },
    #[error("{identity} identity residual {value:.3e} exceeds the certification tolerance")]
    IdentityResidual { identity: &'static str, value: f64 },
    #[error("{identity} margin {value:.3e} is negative beyond solver slack")]
    MarginViolated { identity: &'static str, value: f64 },
    #[error(transparent)]
    Sdp(#[from] sdp::SdpError),
}

/// One sum-of-squares term g * (b' Q b) on the certified side of an
/// identity: the PSD block holding Q, its monomial basis b, and the set
/// factor g (constant 1 for the free term).
#[derive(Debug, Clone)]
pub struct GramBlock {
    pub block: usize,
    pub basis: Vec<Monomial>,
    pub multiplier: Polynomial,
}

/// A coefficient-matching identity: an affine combination of the free
/// certificate coefficients equals a sum of GramBlocks, matched monomial
/// by monomial up to the identity degree.
#[derive(Debug, Clone)]
pub struct SosIdentity {
    pub label: &'static str,
    pub nvars: usize,
    pub degree: u32,
    /// Free-variable index paired with the polynomial it multiplies.
    lhs: Vec<(usize, Polynomial)>,
    /// Constant part moved to the right: lhs - rhs = sum of Gram terms.
    rhs: Polynomial,
    pub blocks: Vec<GramBlock>,
}

impl SosIdentity {
    /// The polynomial the Gram side must reproduce for the given
    /// coefficient values; nonnegative on the set for any PSD assignment.
    pub fn combination(&self, frees: &[f64]) -> Polynomial {
        let mut out = self.rhs.scale(-1.0);
        for (var, p) in &self.lhs {
            out = out.add(&p.scale(frees[*var]));
        }
        out
    }

    /// Certified combination minus the Gram side at one point; zero up to
    /// solver accuracy for a feasible solution.
    pub fn residual(&self, frees: &[f64], blocks: &[DMatrix<f64>], point: &[f64]) -> f64 {
        let mut r = -self.rhs.evaluate(point);
        for (var, p) in &self.lhs {
            r += frees[*var] * p.evaluate(point);
        }
        for gb in &self.blocks {
            let bv: Vec<f64> = gb.basis.iter().map(|m| m.evaluate(point)).collect();
            let q = &blocks[gb.block];
            let mut quad = 0.0;
            for i in 0..bv.len() {
                for j in 0..bv.len() {
                    quad += q[(i, j)] * bv[i] * bv[j];
                }
            }
            r -= gb.multiplier.evaluate(point) * quad;
        }
        r
    }
}

/// Worst (most negative) value of each certified combination over the
/// validation grids.
#[derive(Debug, Clone, Copy)]
pub struct Margins {
    pub transport: f64,
    pub domination: f64,
    pub positivity: f64,
}

/// The assembled certificate program: minimize the Lebesgue mass of w
/// subject to the three identities.
#[derive(Debug, Clone)]
pub struct DualProgram {
    pub problem: SdpProblem,
    pub d_v: u32,
    pub d_w: u32,
    pub time: TimeMode,
    v_basis: Vec<Monomial>,
    w_basis: Vec<Monomial>,
    identities: Vec<SosIdentity>,
    state_set: SemialgebraicSet,
    control_set: Option<SemialgebraicSet>,
}

/// A solved and validated certificate, mapped back to the original
/// coordinates.  Points x in X with v(x) < 0 are certified to leave X
/// under every control; {v >= 0} contains the maximum controlled
/// invariant set.
#[derive(Debug, Clone)]
pub struct MciCertificate {
    pub v: Polynomial,
    pub w: Polynomial,
    /// Lebesgue mass of w over the original state set.
    pub objective: f64,
    pub degrees: (u32, u32),
    pub time: TimeMode,
    pub margins: Margins,
    pub iterations: usize,
    pub scaling: AffineScaling,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    OutsideCertified,
    NotExcluded,
}

impl MciCertificate {
    /// Pure sign test of v; callers are responsible for x being in X.
    pub fn membership(&self, x: &[f64]) -> Membership {
        if self.v.evaluate(x) < 0.0 {
            Membership::OutsideCertified
        } else {
            Membership::NotExcluded
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        let poly_json = |p: &Polynomial| -> serde_json::Value {
            serde_json::Value::Array(
                p.terms()
                    .map(|(m, c)| serde_json::json!({"coeff": c, "exps": m.exps()}))
                    .collect(),
            )
        };
        let discount = match self.time {
            TimeMode::Discrete { alpha } => serde_json::json!({ "alpha": alpha }),
            TimeMode::Continuous { beta } => serde_json::json!({ "beta": beta }),
        };
        serde_json::json!({
            "v": poly_json(&self.v),
            "w": poly_json(&self.w),
            "objective": self.objective,
            "degrees": [self.degrees.0, self.degrees.1],
            "discount": discount,
            "margins": {
                "transport": self.margins.transport,
                "domination": self.margins.domination,
                "positivity": self.margins.positivity,
            },
        })
    }
}

fn even_ceil(d: u32) -> u32 {
    d + (d & 1)
}

/// Adds the Gram blocks witnessing nonnegativity of degree
/// `identity_degree` over `set` (optionally crossed with a second set on
/// trailing variables): one free block of basis degree D/2 plus one block
/// per inequality g of basis degree floor((D - deg g)/2).
pub fn putinar_rhs(
    problem: &mut SdpProblem,
    tag: &str,
    set: &SemialgebraicSet,
    identity_degree: u32,
    extra_vars_set: Option<&SemialgebraicSet>,
) -> Result<Vec<GramBlock>, SosError> {
    assert!(
        identity_degree % 2 == 0,
        "identity degrees are even by construction"
    );
    let n = set.dim();
    let nvars = n + extra_vars_set.map_or(0, |u| u.dim());
    let mut constraints: Vec<(String, Polynomial)> = set
        .inequalities()
        .iter()
        .enumerate()
        .map(|(i, g)| (format!("X{i}"), g.embed(nvars)))
        .collect();
    if let Some(u) = extra_vars_set {
        for (i, g) in u.inequalities().iter().enumerate() {
            constraints.push((format!("U{i}"), g.embed_at(nvars, n)));
        }
    }

    let mut blocks = Vec::with_capacity(constraints.len() + 1);
    let free_basis = monomial_basis(nvars, identity_degree / 2);
    let block = problem.add_block(format!("Q({tag})"), free_basis.len());
    blocks.push(GramBlock {
        block,
        basis: free_basis,
        multiplier: Polynomial::constant(nvars, 1.0),
    });
    for (label, g) in constraints {
        let dg = g.degree();
        if dg > identity_degree {
            return Err(SosError::InsufficientDegree {
                needed: dg,
                got: identity_degree,
            });
        }
        let basis = monomial_basis(nvars, (identity_degree - dg) / 2);
        let block = problem.add_block(format!("Q({tag}, {label})"), basis.len());
        blocks.push(GramBlock {
            block,
            basis,
            multiplier: g,
        });
    }
    Ok(blocks)
}

/// One equality row per monomial up to the identity degree.  A symmetric
/// Gram entry (i, j) with i > j appears once in the expression, so its
/// coefficient carries the factor 2 of the mirrored entry.
fn emit_rows(problem: &mut SdpProblem, id: &SosIdentity) -> Result<(), SosError> {
    let basis = monomial_basis(id.nvars, id.degree);
    let index: HashMap<&Monomial, usize> =
        basis.iter().enumerate().map(|(i, m)| (m, i)).collect();
    let mut rows: Vec<LinExpr> = (0..basis.len()).map(|_| LinExpr::new()).collect();
    for (var, p) in &id.lhs {
        for (m, c) in p.terms() {
            let i = *index.get(m).expect("lhs term within the identity degree");
            rows[i].free(*var, c);
        }
    }
    for gb in &id.blocks {
        for r in 0..gb.basis.len() {
            for c in 0..=r {
                let weight = if r == c { -1.0 } else { -2.0 };
                let pair = gb.basis[r].mul(&gb.basis[c]);
                for (gm, gc) in gb.multiplier.terms() {
                    let mono = gm.mul(&pair);
                    let i = *index
                        .get(&mono)
                        .expect("gram term within the identity degree");
                    rows[i].mat(gb.block, r, c, weight * gc);
                }
            }
        }
    }
    for (expr, m) in rows.into_iter().zip(&basis) {
        problem.add_equality(expr, id.rhs.coeff(m))?;
    }
    Ok(())
}

/// Builds the degree-(d_v, d_w) certificate program for a discrete-time
/// system: v(x) - alpha v(f(x, u)) nonnegative on X x U, w - v - 1 and w
/// nonnegative on X, minimizing the Lebesgue mass of w.
pub fn build_dual_discrete(
    data: &ProblemData,
    d_v: u32,
    d_w: u32,
) -> Result<DualProgram, SosError> {
    assert!(
        data.system.time().is_discrete(),
        "discrete builder needs a discrete-time system"
    );
    build_dual_core(data, d_v, d_w)
}

/// Continuous-time variant: the transport identity certifies
/// beta v(x) - grad v . f(x, u) nonnegative on X x U.
pub fn build_dual_continuous(
    data: &ProblemData,
    d_v: u32,
    d_w: u32,
) -> Result<DualProgram, SosError> {
    assert!(
        !data.system.time().is_discrete(),
        "continuous builder needs a continuous-time system"
    );
    build_dual_core(data, d_v, d_w)
}

fn build_dual_core(data: &ProblemData, d_v: u32, d_w: u32) -> Result<DualProgram, SosError> {
    assert!(
        d_v >= 2 && d_v % 2 == 0 && d_w >= 2 && d_w % 2 == 0,
        "certificate degrees must be even and at least 2"
    );
    let n = data.system.n_states();
    let m = data.system.n_controls();

    if data.state_set.assumption_ball().is_none() {
        return Err(SosError::MissingBall { set: "state" });
    }
    let control_set = if m > 0 {
        let u = data
            .control_set
            .as_ref()
            .ok_or(SosError::MissingControlSet)?;
        if u.assumption_ball().is_none() {
            return Err(SosError::MissingBall { set: "control" });
        }
        Some(u)
    } else {
        None
    };
    let lebesgue = match data.state_set.shape() {
        ShapeHint::Box { bounds } => lebesgue_moments_box(bounds, d_w),
        ShapeHint::Ball { center, radius } => lebesgue_moments_ball(center, *radius, d_w),
        ShapeHint::Generic => return Err(SosError::NoClosedFormMoments),
    };

    let deg_f = data.system.degree();
    let d1 = match data.system.time() {
        TimeMode::Discrete { .. } => even_ceil(d_v.max(d_v * deg_f)),
        TimeMode::Continuous { .. } => even_ceil(d_v.max(d_v + deg_f - 1)),
    };
    let d2 = even_ceil(d_v.max(d_w));

    let v_basis = monomial_basis(n, d_v);
    let w_basis = monomial_basis(n, d_w);
    let mut problem = SdpProblem::new();
    for mono in &v_basis {
        problem.add_free(scalar_name("v", mono));
    }
    for mono in &w_basis {
        problem.add_free(scalar_name("w", mono));
    }
    let w_off = v_basis.len();

    let dynamics = data.system.dynamics();
    let nvu = n + m;
    let mut transport_lhs = Vec::with_capacity(v_basis.len());
    for (k, b) in v_basis.iter().enumerate() {
        let bp = Polynomial::from_terms(n, vec![(b.exps().to_vec(), 1.0)]);
        let p = match data.system.time() {
            TimeMode::Discrete { alpha } => {
                bp.embed(nvu).sub(&bp.compose(dynamics).scale(alpha))
            }
            TimeMode::Continuous { beta } => {
                bp.embed(nvu).scale(beta).sub(&bp.gradient_dot(dynamics))
            }
        };
        transport_lhs.push((k, p));
    }
    let transport = SosIdentity {
        label: "transport",
        nvars: nvu,
        degree: d1,
        lhs: transport_lhs,
        rhs: Polynomial::zero(nvu),
        blocks: putinar_rhs(&mut problem, "transport", &data.state_set, d1, control_set)?,
    };
    emit_rows(&mut problem, &transport)?;

    let mut domination_lhs = Vec::with_capacity(v_basis.len() + w_basis.len());
    for (k, b) in v_basis.iter().enumerate() {
        domination_lhs.push((k, Polynomial::from_terms(n, vec![(b.exps().to_vec(), -1.0)])));
    }
    for (k, b) in w_basis.iter().enumerate() {
        domination_lhs.push((w_off + k, Polynomial::from_terms(n, vec![(b.exps().to_vec(), 1.0)])));
    }
    let domination = SosIdentity {
        label: "domination",
        nvars: n,
        degree: d2,
        lhs: domination_lhs,
        rhs: Polynomial::constant(n, 1.0),
        blocks: putinar_rhs(&mut problem, "domination", &data.state_set, d2, None)?,
    };
    emit_rows(&mut problem, &domination)?;

    let positivity_lhs: Vec<(usize, Polynomial)> = w_basis
        .iter()
        .enumerate()
        .map(|(k, b)| (w_off + k, Polynomial::from_terms(n, vec![(b.exps().to_vec(), 1.0)])))
        .collect();
    let positivity = SosIdentity {
        label: "positivity",
        nvars: n,
        degree: d_w,
        lhs: positivity_lhs,
        rhs: Polynomial::zero(n),
        blocks: putinar_rhs(&mut problem, "positivity", &data.state_set, d_w, None)?,
    };
    emit_rows(&mut problem, &positivity)?;

    let mut objective = LinExpr::new();
    for (k, b) in w_basis.iter().enumerate() {
        objective.free(w_off + k, lebesgue.get(b).expect("moments cover the w basis"));
    }
    problem.set_objective(objective, Sense::Minimize)?;

    Ok(DualProgram {
        problem,
        d_v,
        d_w,
        time: data.system.time(),
        v_basis,
        w_basis,
        identities: vec![transport, domination, positivity],
        state_set: data.state_set.clone(),
        control_set: data.control_set.clone(),
    })
}

impl DualProgram {
    pub fn v_basis(&self) -> &[Monomial] {
        &self.v_basis
    }

    pub fn w_basis(&self) -> &[Monomial] {
        &self.w_basis
    }

    pub fn identities(&self) -> &[SosIdentity] {
        &self.identities
    }

    pub fn v_polynomial(&self, frees: &[f64]) -> Polynomial {
        let n = self.state_set.dim();
        Polynomial::from_terms(
            n,
            self.v_basis
                .iter()
                .zip(frees)
                .map(|(m, &c)| (m.exps().to_vec(), c)),
        )
    }

    pub fn w_polynomial(&self, frees: &[f64]) -> Polynomial {
        let n = self.state_set.dim();
        Polynomial::from_terms(
            n,
            self.w_basis
                .iter()
                .zip(&frees[self.v_basis.len()..])
                .map(|(m, &c)| (m.exps().to_vec(), c)),
        )
    }

    /// Minimum of each certified combination over a grid of set points.
    pub fn margins(&self, frees: &[f64]) -> Margins {
        let state_grid = grid_points(&self.state_set, GRID_STATE_AXIS);
        let transport_grid: Vec<Vec<f64>> = match &self.control_set {
            Some(u) => {
                let control_grid = grid_points(u, GRID_CONTROL_AXIS);
                state_grid
                    .iter()
                    .flat_map(|x| {
                        control_grid.iter().map(move |uu| {
                            let mut p = x.clone();
                            p.extend_from_slice(uu);
                            p
                        })
                    })
                    .collect()
            }
            None => state_grid.clone(),
        };
        let min_over = |id: &SosIdentity, pts: &[Vec<f64>]| -> f64 {
            let comb = id.combination(frees);
            pts.iter()
                .map(|p| comb.evaluate(p))
                .fold(f64::INFINITY, f64::min)
        };
        Margins {
            transport: min_over(&self.identities[0], &transport_grid),
            domination: min_over(&self.identities[1], &state_grid),
            positivity: min_over(&self.identities[2], &state_grid),
        }
    }

    /// Largest |combination - Gram side| over random points in the
    /// assumption balls, for one identity.
    pub fn worst_residual(&self, id: &SosIdentity, sol: &SdpSolution) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x50_5f3c);
        let state_ball = self
            .state_set
            .assumption_ball()
            .expect("validated at build time");
        let control_ball = self
            .control_set
            .as_ref()
            .map(|u| u.assumption_ball().expect("validated at build time"));
        let mut worst = 0.0f64;
        for _ in 0..RESIDUAL_POINTS {
            let mut point = ball_sample(&mut rng, &state_ball);
            if id.nvars > self.state_set.dim() {
                let ub = control_ball.as_ref().expect("joint identity needs U");
                point.extend(ball_sample(&mut rng, ub));
            }
            worst = worst.max(id.residual(&sol.frees, &sol.blocks, &point).abs());
        }
        worst
    }
}

fn ball_sample<R: Rng>(rng: &mut R, ball: &(Vec<f64>, f64)) -> Vec<f64> {
    let (center, radius) = ball;
    loop {
        let cand: Vec<f64> = center
            .iter()
            .map(|c| c + rng.gen_range(-radius..=*radius))
            .collect();
        let d2: f64 = cand
            .iter()
            .zip(center)
            .map(|(x, c)| (x - c) * (x - c))
            .sum();
        if d2 <= radius * radius {
            return cand;
        }
    }
}

fn grid_points(set: &SemialgebraicSet, per_axis: usize) -> Vec<Vec<f64>> {
    let bbox = set.bounding_box().unwrap_or_else(|| {
        let (center, radius) = set
            .assumption_ball()
            .expect("generic sets carry a ball constraint");
        center.iter().map(|c| (c - radius, c + radius)).collect()
    });
    let axes: Vec<Vec<f64>> = bbox
        .iter()
        .map(|&(lo, hi)| {
            (0..per_axis)
                .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                .collect()
        })
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        points = points
            .iter()
            .flat_map(|p| {
                axis.iter().map(move |&x| {
                    let mut q = p.clone();
                    q.push(x);
                    q
                })
            })
            .collect();
    }
    points.retain(|p| set.contains(p));
    points
}

/// Validates a solved program and maps the certificate back to original
/// coordinates: v and w are composed with the inverse change of
/// variables and the objective picks up the volume stretch factor.
pub fn extract_certificate(
    dual: &DualProgram,
    sol: &SdpSolution,
    scaling: &AffineScaling,
) -> Result<MciCertificate, SosError> {
    if !sol.converged() {
        return Err(SosError::Unconverged { status: sol.status });
    }

    for id in dual.identities() {
        let comb = id.combination(&sol.frees);
        let coeff_scale = 1.0
            + comb
                .terms()
                .map(|(_, c)| c.abs())
                .fold(0.0f64, f64::max);
        let worst = dual.worst_residual(id, sol);
        if worst > IDENTITY_TOL * coeff_scale {
            return Err(SosError::IdentityResidual {
                identity: id.label,
                value: worst,
            });
        }
    }

    let margins = dual.margins(&sol.frees);
    for (label, value) in [
        ("transport", margins.transport),
        ("domination", margins.domination),
        ("positivity", margins.positivity),
    ] {
        if value < -MARGIN_TOL {
            return Err(SosError::MarginViolated {
                identity: label,
                value,
            });
        }
    }

    let v_scaled = dual.v_polynomial(&sol.frees);
    let w_scaled = dual.w_polynomial(&sol.frees);
    let (v, w) = if scaling.is_identity() {
        (v_scaled, w_scaled)
    } else {
        let n = scaling.dim();
        let subs = PolynomialVector::new(
            (0..n)
                .map(|i| {
                    let s = scaling.scale()[i];
                    let c = scaling.offset()[i];
                    let mut p = Polynomial::var(n, i).scale(1.0 / s);
                    p.add_term(Monomial::constant(n), -c / s);
                    p
                })
                .collect(),
        );
        (v_scaled.compose(&subs), w_scaled.compose(&subs))
    };

    Ok(MciCertificate {
        v,
        w,
        objective: sol.objective * scaling.jacobian_volume_factor(),
        degrees: (dual.d_v, dual.d_w),
        time: dual.time,
        margins,
        iterations: sol.iterations,
        scaling: scaling.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::PolynomialVector;
    use crate::sets::make_box;
    use crate::system::ControlSystem;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn double_integrator() -> ProblemData {
        let f1 = {
            let mut p = Polynomial::var(3, 0);
            p.add_term(Monomial::var(3, 1), 0.1);
            p
        };
        let f2 = {
            let mut p = Polynomial::var(3, 1);
            p.add_term(Monomial::var(3, 2), 0.05);
            p
        };
        ProblemData {
            system: ControlSystem::new(
                2,
                1,
                PolynomialVector::new(vec![f1, f2]),
                TimeMode::Discrete { alpha: 0.9 },
            )
            .unwrap(),
            state_set: make_box(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap(),
            control_set: Some(make_box(&[(-0.5, 0.5)]).unwrap()),
        }
    }

    /// Uncontrolled scalar map x+ = c1 x (discrete) on [-1, 1].
    fn scalar_map(c1: f64, time: TimeMode) -> ProblemData {
        ProblemData {
            system: ControlSystem::new(
                1,
                0,
                PolynomialVector::new(vec![Polynomial::var(1, 0).scale(c1)]),
                time,
            )
            .unwrap(),
            state_set: make_box(&[(-1.0, 1.0)]).unwrap(),
            control_set: None,
        }
    }

    fn solve(dual: &DualProgram) -> SdpSolution {
        let config = crate::solver_config();
        sdp::solve(&dual.problem, &config).expect("certificate program solves")
    }

    #[test]
    fn free_and_localizer_blocks_follow_the_degree_budget() {
        let mut g = Polynomial::constant(1, 1.0);
        g.add_term(Monomial::new(vec![2]), -1.0);
        let set = SemialgebraicSet::generic(1, vec![g]);
        let mut problem = SdpProblem::new();
        let blocks = putinar_rhs(&mut problem, "t", &set, 2, None).unwrap();
        assert_eq!(blocks.len(), 2, "one free block plus one localizer");
        assert_eq!(blocks[0].basis.len(), 2, "free basis is 1, x");
        assert_eq!(blocks[1].basis.len(), 1, "degree-2 localizer basis is the constant");
        assert_eq!(blocks[0].multiplier.degree(), 0);
        for gb in &blocks {
            let max_basis = gb.basis.iter().map(|m| m.degree()).max().unwrap();
            assert!(
                gb.multiplier.degree() + 2 * max_basis <= 2,
                "block budget exceeds the identity degree"
            );
        }
    }

    #[test]
    fn joint_state_control_blocks_cover_both_sets() {
        let data = double_integrator();
        let mut problem = SdpProblem::new();
        let blocks = putinar_rhs(
            &mut problem,
            "t",
            &data.state_set,
            4,
            data.control_set.as_ref(),
        )
        .unwrap();
        let orders: Vec<usize> = blocks.iter().map(|b| b.basis.len()).collect();
        assert_eq!(
            orders,
            vec![10, 4, 4, 4, 4, 4],
            "free block over 3 variables plus five quadratic localizers"
        );
        for gb in &blocks {
            assert_eq!(gb.multiplier.dim(), 3, "multipliers live in the joint space");
        }
        // The last two multipliers come from the control set and must not
        // react to the state variables.
        for gb in &blocks[4..] {
            let a = gb.multiplier.evaluate(&[0.3, -0.8, 0.2]);
            let b = gb.multiplier.evaluate(&[-0.9, 0.1, 0.2]);
            assert!((a - b).abs() < 1e-12, "control multiplier depends on states");
        }
    }

    #[test]
    fn degree_too_small_for_a_constraint_is_rejected() {
        let mut g = Polynomial::constant(1, 1.0);
        g.add_term(Monomial::new(vec![4]), -1.0);
        let set = SemialgebraicSet::generic(1, vec![g]);
        let mut problem = SdpProblem::new();
        let err = putinar_rhs(&mut problem, "t", &set, 2, None).unwrap_err();
        assert!(
            matches!(err, SosError::InsufficientDegree { needed: 4, got: 2 }),
            "got {err:?}"
        );
    }

    #[test]
    fn gram_rows_reproduce_the_represented_polynomial() {
        // Represent p = 1 - x^2 over {1 - x^2 >= 0} at degree 2.  With no
        // free certificate coefficients the Gram side must equal -rhs = p,
        // which pins down the off-diagonal doubling convention.
        let mut g = Polynomial::constant(1, 1.0);
        g.add_term(Monomial::new(vec![2]), -1.0);
        let set = SemialgebraicSet::generic(1, vec![g.clone()]);
        let mut problem = SdpProblem::new();
        let blocks = putinar_rhs(&mut problem, "t", &set, 2, None).unwrap();
        let id = SosIdentity {
            label: "representation",
            nvars: 1,
            degree: 2,
            lhs: Vec::new(),
            rhs: g.scale(-1.0),
            blocks,
        };
        emit_rows(&mut problem, &id).unwrap();
        assert_eq!(problem.num_rows(), 3, "one row per monomial 1, x, x^2");
        let mut obj = LinExpr::new();
        obj.mat(id.blocks[0].block, 0, 0, 1.0);
        problem.set_objective(obj, Sense::Minimize).unwrap();
        let sol = sdp::solve(&problem, &crate::solver_config()).unwrap();
        assert!(sol.converged(), "representation program solves: {:?}", sol.status);
        for i in 0..50 {
            let x = -1.0 + 2.0 * i as f64 / 49.0;
            let r = id.residual(&[], &sol.blocks, &[x]);
            assert!(
                r.abs() <= 1e-6,
                "Gram side deviates from the target by {r:.3e} at x = {x}"
            );
        }
    }

    #[test]
    fn zero_dynamics_certificate_costs_the_set_volume() {
        // Nothing moves, so the whole interval is invariant and the
        // cheapest dominating w is identically 1.
        let data = scalar_map(0.0, TimeMode::Continuous { beta: 1.0 });
        let dual = build_dual_continuous(&data, 2, 2).unwrap();
        let sol = solve(&dual);
        assert!(
            (sol.objective - 2.0).abs() <= 1e-5,
            "objective {} is not the interval length",
            sol.objective
        );
        let cert = extract_certificate(&dual, &sol, &AffineScaling::identity(1)).unwrap();
        assert_eq!(cert.membership(&[0.5]), Membership::NotExcluded);
        for i in 0..21 {
            let x = -1.0 + 0.1 * i as f64;
            assert!(
                cert.w.evaluate(&[x]) >= 1.0 - 1e-4,
                "w dips below 1 inside the invariant set at {x}"
            );
        }
    }

    #[test]
    fn contracting_map_keeps_the_whole_interval() {
        let data = scalar_map(0.5, TimeMode::Discrete { alpha: 0.9 });
        let dual = build_dual_discrete(&data, 4, 4).unwrap();
        let sol = solve(&dual);
        assert!(
            (sol.objective - 2.0).abs() <= 1e-5,
            "objective {} is not the interval length",
            sol.objective
        );
        let v = dual.v_polynomial(&sol.frees);
        assert!(v.evaluate(&[0.0]) >= -1e-6, "v(0) must be nonnegative");
        let cert = extract_certificate(&dual, &sol, &AffineScaling::identity(1)).unwrap();
        assert!(cert.margins.transport >= -1e-5);
        assert_eq!(cert.degrees, (4, 4));
    }

    #[test]
    fn doubling_map_excludes_points_that_escape() {
        // Only the origin stays in [-1, 1] forever, and the degree-4
        // program already certifies exclusion well away from it.  The
        // optimum is stable across runs; 8/9 to within solver accuracy.
        let data = scalar_map(2.0, TimeMode::Discrete { alpha: 0.9 });
        let dual = build_dual_discrete(&data, 4, 4).unwrap();
        let sol = solve(&dual);
        assert!(
            (sol.objective - 8.0 / 9.0).abs() <= 1e-3,
            "degree-4 objective {} drifted from its stable optimum",
            sol.objective
        );
        let cert = extract_certificate(&dual, &sol, &AffineScaling::identity(1)).unwrap();
        assert_eq!(cert.membership(&[0.0]), Membership::NotExcluded);
        assert_eq!(cert.membership(&[0.9]), Membership::OutsideCertified);
        assert_eq!(cert.membership(&[-0.9]), Membership::OutsideCertified);
        assert!(cert.v.evaluate(&[0.9]) < -1.0, "exclusion should be decisive");
    }

    #[test]
    fn higher_degree_tightens_the_doubling_bound() {
        let data = scalar_map(2.0, TimeMode::Discrete { alpha: 0.9 });
        let lo = solve(&build_dual_discrete(&data, 4, 4).unwrap()).objective;
        let hi = solve(&build_dual_discrete(&data, 8, 8).unwrap()).objective;
        assert!(hi <= lo + 1e-6, "objective rose with degree: {lo} -> {hi}");
        assert!(
            lo - hi >= 0.1,
            "degree 8 should visibly tighten the bound: {lo} -> {hi}"
        );
    }

    #[test]
    fn matched_degrees_close_the_duality_gap() {
        let data = double_integrator();
        let config = crate::solver_config();
        let relax = crate::moment::build_primal_relaxation(&data, 2).unwrap();
        let primal = sdp::solve(&relax.problem, &config).unwrap();
        assert!(primal.converged(), "primal solve: {:?}", primal.status);
        let dual = build_dual_discrete(&data, 4, 4).unwrap();
        let sol = sdp::solve(&dual.problem, &config).unwrap();
        assert!(sol.converged(), "dual solve: {:?}", sol.status);
        let gap = (primal.objective - sol.objective).abs();
        assert!(
            gap <= 1e-5 * (1.0 + sol.objective.abs()),
            "duality gap {gap:.3e} between {} and {}",
            primal.objective,
            sol.objective
        );
    }

    #[test]
    fn certificates_map_back_to_original_coordinates() {
        let data = scalar_map(0.5, TimeMode::Discrete { alpha: 0.9 });
        let dual = build_dual_discrete(&data, 4, 4).unwrap();
        let sol = solve(&dual);
        let scaling = AffineScaling::new(vec![1.6], vec![0.2]);
        let cert = extract_certificate(&dual, &sol, &scaling).unwrap();
        let plain = extract_certificate(&dual, &sol, &AffineScaling::identity(1)).unwrap();
        assert!(
            (cert.objective - 1.6 * plain.objective).abs() <= 1e-12 * (1.0 + plain.objective.abs()),
            "objective must pick up the volume stretch"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let scaled = [rng.gen_range(-1.0..1.0)];
            let original = scaling.to_original(&scaled);
            let a = cert.v.evaluate(&original);
            let b = plain.v.evaluate(&scaled);
            assert!(
                (a - b).abs() <= 1e-9 * (1.0 + b.abs()),
                "v disagrees across coordinates: {a} vs {b}"
            );
            let a = cert.w.evaluate(&original);
            let b = plain.w.evaluate(&scaled);
            assert!(
                (a - b).abs() <= 1e-9 * (1.0 + b.abs()),
                "w disagrees across coordinates: {a} vs {b}"
            );
        }
    }

    #[test]
    fn unconverged_solutions_are_refused() {
        let data = scalar_map(0.0, TimeMode::Continuous { beta: 1.0 });
        let dual = build_dual_continuous(&data, 2, 2).unwrap();
        let config = sdp::SolverConfig {
            max_iterations: 1,
            ..crate::solver_config()
        };
        let sol = sdp::solve(&dual.problem, &config).unwrap();
        assert!(!sol.converged());
        let err = extract_certificate(&dual, &sol, &AffineScaling::identity(1)).unwrap_err();
        assert!(matches!(err, SosError::Unconverged { .. }), "got {err:?}");
    }

    #[test]
    fn sets_without_volume_or_compactness_are_rejected() {
        let half_line = SemialgebraicSet::generic(1, vec![Polynomial::var(1, 0)]);
        let mut data = scalar_map(0.5, TimeMode::Discrete { alpha: 0.9 });
        data.state_set = half_line;
        let err = build_dual_discrete(&data, 2, 2).unwrap_err();
        assert!(matches!(err, SosError::MissingBall { set: "state" }), "got {err:?}");

        let mut ball = Polynomial::constant(1, 1.0);
        ball.add_term(Monomial::new(vec![2]), -1.0);
        let mut data = scalar_map(0.5, TimeMode::Discrete { alpha: 0.9 });
        data.state_set = SemialgebraicSet::generic(1, vec![ball]);
        let err = build_dual_discrete(&data, 2, 2).unwrap_err();
        assert!(matches!(err, SosError::NoClosedFormMoments), "got {err:?}");

        let mut data = double_integrator();
        data.control_set = None;
        let err = build_dual_discrete(&data, 2, 2).unwrap_err();
        assert!(matches!(err, SosError::MissingControlSet), "got {err:?}");
    }

    #[test]
    fn certificate_json_round_trips_the_payload() {
        let data = scalar_map(0.5, TimeMode::Discrete { alpha: 0.9 });
        let dual = build_dual_discrete(&data, 4, 4).unwrap();
        let sol = solve(&dual);
        let cert = extract_certificate(&dual, &sol, &AffineScaling::identity(1)).unwrap();
        let json = cert.to_json();
        assert_eq!(json["degrees"][0], 4);
        assert_eq!(json["discount"]["alpha"], 0.9);
        assert!(json["objective"].as_f64().unwrap() > 0.0);
        assert!(json["v"].as_array().unwrap().len() >= 1);
        assert!(json["margins"]["transport"].as_f64().unwrap() >= -1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn putinar_blocks_respect_the_degree_budget(seed in 0u64..1_000_000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let dim = rng.gen_range(1..=2);
            let bounds: Vec<(f64, f64)> = (0..dim)
                .map(|_| {
                    let lo = rng.gen_range(-2.0..0.0);
                    let hi = rng.gen_range(0.1..2.0);
                    (lo, hi)
                })
                .collect();
            let set = make_box(&bounds).unwrap();
            let degree = 2 * rng.gen_range(1..=4u32);
            let mut problem = SdpProblem::new();
            let blocks = putinar_rhs(&mut problem, "t", &set, degree, None).unwrap();
            prop_assert_eq!(blocks.len(), set.inequalities().len() + 1);
            for gb in &blocks {
                let max_basis = gb.basis.iter().map(|m| m.degree()).max().unwrap();
                prop_assert!(gb.multiplier.degree() + 2 * max_basis <= degree);
            }
        }
    }
}
