//! Primal side of the hierarchy: moment and localizing matrices, and the
//! assembly of the truncated-moment relaxation as a standard-form SDP.
//!
//! Moments of the three measures (the discounted occupation measure, the
//! initial measure, and the slack measure dominating Lebesgue) enter the
//! SDP as free scalars; every PSD block entry is tied to the scalars it
//! represents by an equality row.  The payoff is a uniform standard form:
//! the dual program assembled in the sos module has exactly the same shape.

use std::collections::HashMap;

use nalgebra::DMatrix;
use sdp::{CandidatePoint, LinExpr, SdpProblem, Sense};
use thiserror::Error;

use crate::poly::{monomial_basis, Monomial, Polynomial};
use crate::sets::{lebesgue_moments_ball, lebesgue_moments_box, MomentVector, ShapeHint};
use crate::system::{ProblemData, TimeMode};

#[derive(Debug, Error)]
pub enum MomentError {
    #[error("moment data of degree {got} cannot fill a matrix needing degree {needed}")]
    InsufficientDegree { needed: u32, got: u32 },
    #[error(
        "localizing matrix for {constraint} has negative order: \
         relaxation order {k} is below ceil(deg/2) = {needed}"
    )]
    OrderUnderflow {
        constraint: String,
        k: u32,
        needed: u32,
    },
    #[error("{set} set carries no ball inequality R^2 - |x - c|^2")]
    MissingBall { set: &'static str },
    #[error("system declares controls but no control set was given")]
    MissingControlSet,
    #[error("state set has no closed-form volume moments; use a box or ball")]
    NoClosedFormMoments,
    #[error(transparent)]
    Sdp(#[from] sdp::SdpError),
}

/// M_ij = y[b_i b_j] over the degree-k monomial basis.
pub fn moment_matrix(k: u32, y: &MomentVector) -> Result<DMatrix<f64>, MomentError> {
    if y.max_degree() < 2 * k {
        return Err(MomentError::InsufficientDegree {
            needed: 2 * k,
            got: y.max_degree(),
        });
    }
    let basis = monomial_basis(y.dim(), k);
    let s = basis.len();
    let mut m = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..=i {
            let v = y.get(&basis[i].mul(&basis[j])).expect("degree checked");
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Entry (i, j) = sum_a g_a y[x^a b_i b_j] over the basis of degree
/// k - ceil(deg g / 2).
pub fn localizing_matrix(
    g: &Polynomial,
    k: u32,
    y: &MomentVector,
) -> Result<DMatrix<f64>, MomentError> {
    assert_eq!(g.dim(), y.dim(), "constraint and moments must share variables");
    let half = g.degree().div_ceil(2);
    let order = k.checked_sub(half).ok_or_else(|| MomentError::OrderUnderflow {
        constraint: g.to_string(),
        k,
        needed: half,
    })?;
    if y.max_degree() < 2 * k {
        return Err(MomentError::InsufficientDegree {
            needed: 2 * k,
            got: y.max_degree(),
        });
    }
    let basis = monomial_basis(y.dim(), order);
    let s = basis.len();
    let mut m = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..=i {
            let prod = basis[i].mul(&basis[j]);
            let mut acc = 0.0;
            for (a, ga) in g.terms() {
                acc += ga * y.get(&a.mul(&prod)).expect("degree checked");
            }
            m[(i, j)] = acc;
            m[(j, i)] = acc;
        }
    }
    Ok(m)
}

/// Which measure a PSD block belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Occupation,
    Initial,
    Slack,
}

/// Where each measure's moment scalars live among the SDP free variables.
#[derive(Debug, Clone)]
pub struct PrimalLayout {
    n_states: usize,
    n_controls: usize,
    k: u32,
    y_basis: Vec<Monomial>,
    x_basis: Vec<Monomial>,
    y_index: HashMap<Monomial, usize>,
    x_index: HashMap<Monomial, usize>,
}

impl PrimalLayout {
    fn new(n_states: usize, n_controls: usize, k: u32) -> Self {
        let y_basis = monomial_basis(n_states + n_controls, 2 * k);
        let x_basis = monomial_basis(n_states, 2 * k);
        let y_index = y_basis
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let x_index = x_basis
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            n_states,
            n_controls,
            k,
            y_basis,
            x_basis,
            y_index,
            x_index,
        }
    }

    pub fn order(&self) -> u32 {
        self.k
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    /// Free-variable index of a moment of the occupation measure; the
    /// monomial lives over (states, controls).
    pub fn occupation_scalar(&self, m: &Monomial) -> usize {
        self.y_index[m]
    }

    /// Free-variable index of a moment of the initial measure (state
    /// variables only).
    pub fn initial_scalar(&self, m: &Monomial) -> usize {
        self.y_basis.len() + self.x_index[m]
    }

    /// Free-variable index of a moment of the Lebesgue-slack measure.
    pub fn slack_scalar(&self, m: &Monomial) -> usize {
        self.y_basis.len() + self.x_basis.len() + self.x_index[m]
    }

    pub fn num_scalars(&self) -> usize {
        self.y_basis.len() + 2 * self.x_basis.len()
    }
}

/// The assembled primal relaxation at order k, with enough bookkeeping to
/// reconstruct reference feasible points.
#[derive(Debug)]
pub struct PrimalRelaxation {
    pub problem: SdpProblem,
    pub layout: PrimalLayout,
    pub time: TimeMode,
    pub n_liouville: usize,
    pub n_domination: usize,
    /// Volume moments of the state set up to degree 2k.
    pub lebesgue: MomentVector,
    /// One entry per PSD block, in block order: the measure it constrains
    /// and the localizing constraint, if any.
    blocks: Vec<(Measure, Option<Polynomial>)>,
}

pub(crate) fn scalar_name(prefix: &str, m: &Monomial) -> String {
    let exps: Vec<String> = m.exps().iter().map(|e| e.to_string()).collect();
    format!("{}[{}]", prefix, exps.join(","))
}

/// Builds the order-k relaxation of the discounted-occupation formulation:
/// maximize the initial mass subject to the transport identity, domination
/// of Lebesgue on the state set, and moment/localizing PSD constraints for
/// all three measures.
pub fn build_primal_relaxation(data: &ProblemData, k: u32) -> Result<PrimalRelaxation, MomentError> {
    assert!(k >= 1, "relaxation order must be at least 1");
    let n = data.system.n_states();
    let m = data.system.n_controls();
    let two_k = 2 * k;

    if data.state_set.assumption_ball().is_none() {
        return Err(MomentError::MissingBall { set: "state" });
    }
    let lebesgue = match data.state_set.shape() {
        ShapeHint::Box { bounds } => lebesgue_moments_box(bounds, two_k),
        ShapeHint::Ball { center, radius } => lebesgue_moments_ball(center, *radius, two_k),
        ShapeHint::Generic => return Err(MomentError::NoClosedFormMoments),
    };

    // Support constraints of the occupation measure, lifted to (x, u).
    let mut occupation_constraints: Vec<(String, Polynomial)> = data
        .state_set
        .inequalities()
        .iter()
        .enumerate()
        .map(|(i, g)| (format!("X{i}"), g.embed(n + m)))
        .collect();
    if m > 0 {
        let u_set = data
            .control_set
            .as_ref()
            .ok_or(MomentError::MissingControlSet)?;
        if u_set.assumption_ball().is_none() {
            return Err(MomentError::MissingBall { set: "control" });
        }
        for (i, g) in u_set.inequalities().iter().enumerate() {
            occupation_constraints.push((format!("U{i}"), g.embed_at(n + m, n)));
        }
    }
    let state_constraints: Vec<(String, Polynomial)> = data
        .state_set
        .inequalities()
        .iter()
        .enumerate()
        .map(|(i, g)| (format!("X{i}"), g.clone()))
        .collect();

    let layout = PrimalLayout::new(n, m, k);
    let mut problem = SdpProblem::new();
    for mono in &layout.y_basis {
        problem.add_free(scalar_name("y", mono));
    }
    for mono in &layout.x_basis {
        problem.add_free(scalar_name("y0", mono));
    }
    for mono in &layout.x_basis {
        problem.add_free(scalar_name("yhat", mono));
    }

    // Transport rows.  Discrete: y[v] - alpha y[v o f] - y0[v] = 0 for
    // every state monomial v whose pushforward stays within degree 2k;
    // the degree of a product of powers is exact, so the arithmetic test
    // costs nothing.  Continuous: beta y[v] - y[grad v . f] - y0[v] = 0,
    // where cancellations can lower the degree, so the composition is
    // computed before the degree test.
    let dynamics = data.system.dynamics();
    let mut n_liouville = 0;
    match data.system.time() {
        TimeMode::Discrete { alpha } => {
            let comp_degs: Vec<u32> = (0..n).map(|j| dynamics.component(j).degree()).collect();
            let mut powers: Vec<Vec<Polynomial>> = (0..n)
                .map(|_| vec![Polynomial::constant(n + m, 1.0)])
                .collect();
            for v in &layout.x_basis {
                let pushed_degree: u32 = v
                    .exps()
                    .iter()
                    .zip(&comp_degs)
                    .map(|(&a, &d)| a * d)
                    .sum();
                if pushed_degree > two_k {
                    continue;
                }
                let mut pushed = Polynomial::constant(n + m, 1.0);
                for (j, &a) in v.exps().iter().enumerate() {
                    while powers[j].len() <= a as usize {
                        let next = powers[j].last().unwrap().mul(dynamics.component(j));
                        powers[j].push(next);
                    }
                    pushed = pushed.mul(&powers[j][a as usize]);
                }
                let mut expr = LinExpr::new();
                expr.free(layout.occupation_scalar(&v.embed(n + m)), 1.0);
                for (w, c) in pushed.terms() {
                    expr.free(layout.occupation_scalar(&w), -alpha * c);
                }
                expr.free(layout.initial_scalar(v), -1.0);
                problem.add_equality(expr, 0.0)?;
                n_liouville += 1;
            }
        }
        TimeMode::Continuous { beta } => {
            for v in &layout.x_basis {
                let mut vp = Polynomial::zero(n);
                vp.add_term(v.clone(), 1.0);
                let flow = vp.gradient_dot(dynamics);
                if flow.degree() > two_k {
                    continue;
                }
                let mut expr = LinExpr::new();
                expr.free(layout.occupation_scalar(&v.embed(n + m)), beta);
                for (w, c) in flow.terms() {
                    expr.free(layout.occupation_scalar(&w), -c);
                }
                expr.free(layout.initial_scalar(v), -1.0);
                problem.add_equality(expr, 0.0)?;
                n_liouville += 1;
            }
        }
    }

    // Domination rows: y0[w] + yhat[w] = volume moments, the only nonzero
    // right-hand sides in the problem.
    for w in &layout.x_basis {
        let mut expr = LinExpr::new();
        expr.free(layout.initial_scalar(w), 1.0);
        expr.free(layout.slack_scalar(w), 1.0);
        problem.add_equality(expr, lebesgue.get(w).expect("basis matches degree"))?;
    }
    let n_domination = layout.x_basis.len();

    // PSD blocks and the tie rows pinning their entries to the scalars.
    let mut blocks = Vec::new();
    add_measure_blocks(
        &mut problem,
        &mut blocks,
        Measure::Occupation,
        "y",
        n + m,
        k,
        &occupation_constraints,
        &|mono| layout.occupation_scalar(mono),
    )?;
    add_measure_blocks(
        &mut problem,
        &mut blocks,
        Measure::Initial,
        "y0",
        n,
        k,
        &state_constraints,
        &|mono| layout.initial_scalar(mono),
    )?;
    add_measure_blocks(
        &mut problem,
        &mut blocks,
        Measure::Slack,
        "yhat",
        n,
        k,
        &state_constraints,
        &|mono| layout.slack_scalar(mono),
    )?;

    let mut objective = LinExpr::new();
    objective.free(layout.initial_scalar(&Monomial::constant(n)), 1.0);
    problem.set_objective(objective, Sense::Maximize)?;

    Ok(PrimalRelaxation {
        problem,
        layout,
        time: data.system.time(),
        n_liouville,
        n_domination,
        lebesgue,
        blocks,
    })
}

#[allow(clippy::too_many_arguments)]
fn add_measure_blocks(
    problem: &mut SdpProblem,
    blocks: &mut Vec<(Measure, Option<Polynomial>)>,
    measure: Measure,
    tag: &str,
    dim: usize,
    k: u32,
    constraints: &[(String, Polynomial)],
    scalar: &dyn Fn(&Monomial) -> usize,
) -> Result<(), MomentError> {
    let basis = monomial_basis(dim, k);
    let block = problem.add_block(format!("M({tag})"), basis.len());
    for i in 0..basis.len() {
        for j in 0..=i {
            let mut expr = LinExpr::new();
            expr.mat(block, i, j, 1.0);
            expr.free(scalar(&basis[i].mul(&basis[j])), -1.0);
            problem.add_equality(expr, 0.0)?;
        }
    }
    blocks.push((measure, None));

    for (label, g) in constraints {
        let half = g.degree().div_ceil(2);
        let order = k.checked_sub(half).ok_or_else(|| MomentError::OrderUnderflow {
            constraint: format!("{label}: {g}"),
            k,
            needed: half,
        })?;
        let loc_basis = monomial_basis(dim, order);
        let block = problem.add_block(format!("M({tag}, {label})"), loc_basis.len());
        for i in 0..loc_basis.len() {
            for j in 0..=i {
                let prod = loc_basis[i].mul(&loc_basis[j]);
                let mut expr = LinExpr::new();
                expr.mat(block, i, j, 1.0);
                for (a, ga) in g.terms() {
                    expr.free(scalar(&a.mul(&prod)), -ga);
                }
                problem.add_equality(expr, 0.0)?;
            }
        }
        blocks.push((measure, Some(g.clone())));
    }
    Ok(())
}

impl PrimalRelaxation {
    /// The reference feasible point: occupation and initial measures zero,
    /// slack measure equal to Lebesgue volume on the state set.  Satisfies
    /// every equality row exactly.
    pub fn lebesgue_candidate(&self) -> CandidatePoint {
        let mut point = CandidatePoint::zeros(&self.problem);
        for mono in &self.layout.x_basis {
            point.frees[self.layout.slack_scalar(mono)] =
                self.lebesgue.get(mono).expect("basis matches degree");
        }
        for (idx, (measure, constraint)) in self.blocks.iter().enumerate() {
            if *measure != Measure::Slack {
                continue;
            }
            point.blocks[idx] = match constraint {
                None => moment_matrix(self.layout.k, &self.lebesgue),
                Some(g) => localizing_matrix(g, self.layout.k, &self.lebesgue),
            }
            .expect("lebesgue moments cover degree 2k");
        }
        point
    }
}
