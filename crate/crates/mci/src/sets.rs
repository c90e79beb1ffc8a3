//! Constraint sets, their closed-form Lebesgue moments, and the affine
//! scaling record used to map problems onto the unit box.
//!
//! Every set produced here carries a redundant ball inequality
//! R^2 - |x - c|^2 >= 0 so that Putinar certificates apply.  For boxes the
//! ball radius is 1.01 times the circumradius; the margin keeps the
//! constraint active-free without hurting conditioning.

use std::collections::HashMap;

use thiserror::Error;

use crate::poly::{monomial_basis, Monomial, Polynomial};

#[derive(Debug, Error)]
pub enum SetError {
    #[error("interval {index} is degenerate: lo {lo} must be below hi {hi}")]
    DegenerateInterval { index: usize, lo: f64, hi: f64 },
    #[error("ball radius must be positive, got {0}")]
    NonpositiveRadius(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ShapeHint {
    Box { bounds: Vec<(f64, f64)> },
    Ball { center: Vec<f64>, radius: f64 },
    Generic,
}

/// A set {x : g_i(x) >= 0 for all i} with a shape hint for the operations
/// that need more than the inequality list (moments, gridding, scaling).
#[derive(Debug, Clone)]
pub struct SemialgebraicSet {
    dim: usize,
    inequalities: Vec<Polynomial>,
    shape: ShapeHint,
}

impl SemialgebraicSet {
    pub fn generic(dim: usize, inequalities: Vec<Polynomial>) -> Self {
        assert!(inequalities.iter().all(|g| g.dim() == dim));
        Self {
            dim,
            inequalities,
            shape: ShapeHint::Generic,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn inequalities(&self) -> &[Polynomial] {
        &self.inequalities
    }

    pub fn shape(&self) -> &ShapeHint {
        &self.shape
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        self.inequalities.iter().all(|g| g.evaluate(point) >= 0.0)
    }

    /// The redundant ball inequality's (center, radius), when one of the
    /// inequalities is exactly of the form R^2 - |x - c|^2.  Scans from the
    /// end: constructors append their ball last, and a one-dimensional box
    /// quadratic is itself ball-shaped.
    pub fn assumption_ball(&self) -> Option<(Vec<f64>, f64)> {
        self.inequalities.iter().rev().find_map(ball_form)
    }

    /// Axis-aligned box covering the set, available for box and ball hints.
    pub fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
        match &self.shape {
            ShapeHint::Box { bounds } => Some(bounds.clone()),
            ShapeHint::Ball { center, radius } => Some(
                center
                    .iter()
                    .map(|c| (c - radius, c + radius))
                    .collect(),
            ),
            ShapeHint::Generic => None,
        }
    }
}

/// Recognizes g = R^2 - sum_i (x_i - c_i)^2, returning (c, R).
fn ball_form(g: &Polynomial) -> Option<(Vec<f64>, f64)> {
    let n = g.dim();
    if g.degree() != 2 {
        return None;
    }
    let mut center = vec![0.0; n];
    let mut constant = 0.0;
    for (m, c) in g.terms() {
        let deg = m.degree();
        if deg == 0 {
            constant = c;
        } else if deg == 1 {
            let i = m.exps().iter().position(|&e| e == 1).unwrap();
            center[i] = c / 2.0;
        } else {
            // Quadratic part must be exactly -sum x_i^2.
            let square = m.exps().iter().position(|&e| e == 2);
            match square {
                Some(_) if c == -1.0 && deg == 2 => {}
                _ => return None,
            }
        }
    }
    // All squares must be present with coefficient -1.
    for i in 0..n {
        let mut exps = vec![0; n];
        exps[i] = 2;
        if g.coeff(&Monomial::new(exps)) != -1.0 {
            return None;
        }
    }
    let r2 = constant + center.iter().map(|c| c * c).sum::<f64>();
    if r2 <= 0.0 {
        return None;
    }
    Some((center, r2.sqrt()))
}

fn ball_polynomial(dim: usize, center: &[f64], radius: f64) -> Polynomial {
    let mut g = Polynomial::constant(
        dim,
        radius * radius - center.iter().map(|c| c * c).sum::<f64>(),
    );
    for i in 0..dim {
        if center[i] != 0.0 {
            g.add_term(Monomial::var(dim, i), 2.0 * center[i]);
        }
        let mut exps = vec![0; dim];
        exps[i] = 2;
        g.add_term(Monomial::new(exps), -1.0);
    }
    g
}

/// Box given by per-coordinate intervals.  Inequalities are the
/// per-coordinate quadratics (x_i - lo)(hi - x_i) plus the redundant ball
/// around the center with radius 1.01 times the half-diagonal; the ball is
/// always last in the list.
pub fn make_box(bounds: &[(f64, f64)]) -> Result<SemialgebraicSet, SetError> {
    let dim = bounds.len();
    assert!(dim >= 1, "box needs at least one coordinate");
    let mut inequalities = Vec::with_capacity(dim + 1);
    for (i, &(lo, hi)) in bounds.iter().enumerate() {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(SetError::DegenerateInterval { index: i, lo, hi });
        }
        // (x - lo)(hi - x) = -x^2 + (lo + hi) x - lo hi
        let mut g = Polynomial::constant(dim, -lo * hi);
        g.add_term(Monomial::var(dim, i), lo + hi);
        let mut exps = vec![0; dim];
        exps[i] = 2;
        g.add_term(Monomial::new(exps), -1.0);
        inequalities.push(g);
    }
    let center: Vec<f64> = bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi)).collect();
    let half_diag = bounds
        .iter()
        .map(|&(lo, hi)| 0.25 * (hi - lo) * (hi - lo))
        .sum::<f64>()
        .sqrt();
    let radius = 1.01 * half_diag;
    inequalities.push(ball_polynomial(dim, &center, radius));
    Ok(SemialgebraicSet {
        dim,
        inequalities,
        shape: ShapeHint::Box {
            bounds: bounds.to_vec(),
        },
    })
}

pub fn make_ball(center: &[f64], radius: f64) -> Result<SemialgebraicSet, SetError> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(SetError::NonpositiveRadius(radius));
    }
    let dim = center.len();
    assert!(dim >= 1, "ball needs at least one coordinate");
    Ok(SemialgebraicSet {
        dim,
        inequalities: vec![ball_polynomial(dim, center, radius)],
        shape: ShapeHint::Ball {
            center: center.to_vec(),
            radius,
        },
    })
}

/// Truncated moment sequence indexed by the graded-lex monomial basis.
#[derive(Debug, Clone)]
pub struct MomentVector {
    dim: usize,
    max_degree: u32,
    basis: Vec<Monomial>,
    index: HashMap<Monomial, usize>,
    values: Vec<f64>,
}

impl MomentVector {
    pub fn new(dim: usize, max_degree: u32, values: Vec<f64>) -> Self {
        let basis = monomial_basis(dim, max_degree);
        assert_eq!(
            values.len(),
            basis.len(),
            "moment vector length must match the basis"
        );
        let index = basis
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        Self {
            dim,
            max_degree,
            basis,
            index,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_degree(&self) -> u32 {
        self.max_degree
    }

    pub fn basis(&self) -> &[Monomial] {
        &self.basis
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn index_of(&self, m: &Monomial) -> Option<usize> {
        self.index.get(m).copied()
    }

    pub fn get(&self, m: &Monomial) -> Option<f64> {
        self.index_of(m).map(|i| self.values[i])
    }

    /// Moments of the Dirac measure at a point.
    pub fn dirac(dim: usize, max_degree: u32, point: &[f64]) -> Self {
        assert_eq!(point.len(), dim);
        let basis = monomial_basis(dim, max_degree);
        let values = basis
            .iter()
            .map(|m| {
                m.exps()
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| point[i].powi(e as i32))
                    .product()
            })
            .collect();
        Self::new(dim, max_degree, values)
    }
}

/// Lebesgue moments over a box: separable product of one-dimensional
/// integrals (hi^(a+1) - lo^(a+1)) / (a + 1).
pub fn lebesgue_moments_box(bounds: &[(f64, f64)], max_degree: u32) -> MomentVector {
    let dim = bounds.len();
    let values = monomial_basis(dim, max_degree)
        .iter()
        .map(|m| {
            m.exps()
                .iter()
                .zip(bounds)
                .map(|(&a, &(lo, hi))| {
                    let p = a as i32 + 1;
                    (hi.powi(p) - lo.powi(p)) / p as f64
                })
                .product()
        })
        .collect();
    MomentVector::new(dim, max_degree, values)
}

/// Gamma(k/2) for positive integer k, via the half-integer recurrence.
fn gamma_half(k: u32) -> f64 {
    assert!(k >= 1);
    let mut arg = k;
    let mut acc = 1.0;
    while arg > 2 {
        arg -= 2;
        acc *= arg as f64 / 2.0;
    }
    if arg == 1 {
        acc * std::f64::consts::PI.sqrt()
    } else {
        acc
    }
}

/// Moment of x^a over the centered ball of radius r in n dimensions;
/// zero when any exponent is odd.
fn centered_ball_moment(exps: &[u32], radius: f64) -> f64 {
    if exps.iter().any(|e| e % 2 == 1) {
        return 0.0;
    }
    let n = exps.len() as u32;
    let total: u32 = exps.iter().sum();
    let mut num = radius.powi((n + total) as i32);
    for &a in exps {
        num *= gamma_half(a + 1);
    }
    // Denominator Gamma((n + |a|)/2 + 1).
    num / gamma_half(n + total + 2)
}

/// Lebesgue moments over a ball; the nonzero-center case expands the
/// binomial shift x = y + c and sums centered moments.
pub fn lebesgue_moments_ball(center: &[f64], radius: f64, max_degree: u32) -> MomentVector {
    assert!(radius > 0.0, "ball radius must be positive");
    let dim = center.len();
    let centered = center.iter().all(|&c| c == 0.0);
    let values = monomial_basis(dim, max_degree)
        .iter()
        .map(|m| {
            if centered {
                centered_ball_moment(m.exps(), radius)
            } else {
                // Expand prod_i (y_i + c_i)^(a_i) over the centered ball.
                let mut shift = Polynomial::constant(dim, 1.0);
                for (i, &a) in m.exps().iter().enumerate() {
                    let mut factor = Polynomial::var(dim, i);
                    factor.add_term(Monomial::constant(dim), center[i]);
                    for _ in 0..a {
                        shift = shift.mul(&factor);
                    }
                }
                shift
                    .terms()
                    .map(|(mono, c)| c * centered_ball_moment(mono.exps(), radius))
                    .sum()
            }
        })
        .collect();
    MomentVector::new(dim, max_degree, values)
}

/// Per-coordinate affine change of variables x = scale .* x_tilde + offset.
#[derive(Debug, Clone)]
pub struct AffineScaling {
    scale: Vec<f64>,
    offset: Vec<f64>,
}

impl AffineScaling {
    pub fn new(scale: Vec<f64>, offset: Vec<f64>) -> Self {
        assert_eq!(scale.len(), offset.len());
        assert!(scale.iter().all(|&s| s != 0.0 && s.is_finite()));
        Self { scale, offset }
    }

    pub fn identity(dim: usize) -> Self {
        Self::new(vec![1.0; dim], vec![0.0; dim])
    }

    pub fn is_identity(&self) -> bool {
        self.scale.iter().all(|&s| s == 1.0) && self.offset.iter().all(|&c| c == 0.0)
    }

    pub fn dim(&self) -> usize {
        self.scale.len()
    }

    pub fn scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// Volume stretch factor: product of |scale_i|.
    pub fn jacobian_volume_factor(&self) -> f64 {
        self.scale.iter().map(|s| s.abs()).product()
    }

    /// Maps a scaled-coordinates point to original coordinates.
    pub fn to_original(&self, scaled: &[f64]) -> Vec<f64> {
        scaled
            .iter()
            .zip(&self.scale)
            .zip(&self.offset)
            .map(|((x, s), c)| s * x + c)
            .collect()
    }

    /// Maps an original-coordinates point to scaled coordinates.
    pub fn to_scaled(&self, original: &[f64]) -> Vec<f64> {
        original
            .iter()
            .zip(&self.scale)
            .zip(&self.offset)
            .map(|((x, s), c)| (x - c) / s)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unit_square_box_layout() {
        let s = make_box(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap();
        assert_eq!(s.inequalities().len(), 3, "two quadratics plus the ball");
        let (center, radius) = s.assumption_ball().expect("ball must be present");
        assert_eq!(center, vec![0.0, 0.0]);
        assert!((radius - 1.01 * 2.0f64.sqrt()).abs() < 1e-15);
        // The ball is the last inequality.
        assert!(ball_form(&s.inequalities()[2]).is_some());
        assert!(ball_form(&s.inequalities()[0]).is_none());
    }

    #[test]
    fn interval_box_and_control_set() {
        let s = make_box(&[(-0.5, 0.5)]).unwrap();
        let g = &s.inequalities()[0];
        // (x + 0.5)(0.5 - x) = 0.25 - x^2
        assert_eq!(g.coeff(&Monomial::constant(1)), 0.25);
        assert_eq!(g.coeff(&Monomial::new(vec![2])), -1.0);
        assert_eq!(g.coeff(&Monomial::var(1, 0)), 0.0);
        let (_, radius) = s.assumption_ball().unwrap();
        assert!((radius - 1.01 * 0.5).abs() < 1e-15);

        let cathala = make_box(&[(-1.6, 1.6), (-1.6, 1.6)]).unwrap();
        assert!(cathala.contains(&[1.5, -1.5]));
        assert!(!cathala.contains(&[1.7, 0.0]));
    }

    #[test]
    fn degenerate_interval_is_rejected() {
        match make_box(&[(1.0, 1.0)]) {
            Err(SetError::DegenerateInterval { index: 0, .. }) => {}
            other => panic!("expected degenerate-interval error, got {:?}", other),
        }
    }

    #[test]
    fn balls_have_the_expected_polynomial() {
        let s = make_ball(&[0.0, 0.0], 1.0).unwrap();
        let g = &s.inequalities()[0];
        assert_eq!(g.coeff(&Monomial::constant(2)), 1.0);
        assert_eq!(g.coeff(&Monomial::new(vec![2, 0])), -1.0);
        assert_eq!(g.coeff(&Monomial::new(vec![0, 2])), -1.0);
        assert_eq!(g.num_terms(), 3);

        let line = make_ball(&[0.0], 2.0).unwrap();
        let g = &line.inequalities()[0];
        assert_eq!(g.coeff(&Monomial::constant(1)), 4.0);
        assert_eq!(g.coeff(&Monomial::new(vec![2])), -1.0);

        // Center evaluates to R^2 > 0.
        assert!(g.evaluate(&[0.0]) > 0.0);
        assert!(make_ball(&[0.0], -1.0).is_err());
    }

    #[test]
    fn box_moments_match_separable_integrals() {
        let l = lebesgue_moments_box(&[(-1.0, 1.0), (-1.0, 1.0)], 6);
        let rel = |got: f64, want: f64| (got - want).abs() <= 1e-12 * (1.0 + want.abs());
        assert!(rel(l.get(&Monomial::constant(2)).unwrap(), 4.0));
        assert!(rel(l.get(&Monomial::new(vec![2, 0])).unwrap(), 4.0 / 3.0));
        assert!(rel(l.get(&Monomial::new(vec![2, 4])).unwrap(), 4.0 / 15.0));
        // Odd exponents over a symmetric box vanish exactly.
        assert_eq!(l.get(&Monomial::new(vec![1, 0])).unwrap(), 0.0);
        assert_eq!(l.get(&Monomial::new(vec![3, 2])).unwrap(), 0.0);
    }

    #[test]
    fn ball_moments_match_closed_forms() {
        let l = lebesgue_moments_ball(&[0.0, 0.0], 1.0, 6);
        let pi = std::f64::consts::PI;
        let rel = |got: f64, want: f64| (got - want).abs() <= 1e-12 * (1.0 + want.abs());
        assert!(rel(l.get(&Monomial::constant(2)).unwrap(), pi));
        assert!(rel(l.get(&Monomial::new(vec![2, 0])).unwrap(), pi / 4.0));
        assert!(rel(l.get(&Monomial::new(vec![0, 2])).unwrap(), pi / 4.0));
        assert_eq!(l.get(&Monomial::new(vec![1, 0])).unwrap(), 0.0);
        assert_eq!(l.get(&Monomial::new(vec![3, 2])).unwrap(), 0.0);
        // Scaling in the radius: volume of radius-2 disk is 4 pi.
        let l2 = lebesgue_moments_ball(&[0.0, 0.0], 2.0, 2);
        assert!(rel(l2.get(&Monomial::constant(2)).unwrap(), 4.0 * pi));
    }

    /// Uniform samples over the bounding box, indicator-weighted monomial
    /// averages; returns (estimates, standard errors) aligned with the
    /// moment vector's basis.
    fn monte_carlo_ball_moments(
        l: &MomentVector,
        center: &[f64; 2],
        radius: f64,
        samples: usize,
        seed: u64,
    ) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let box_vol = (2.0 * radius) * (2.0 * radius);
        let mut sums = vec![0.0f64; l.basis().len()];
        let mut squares = vec![0.0f64; l.basis().len()];
        for _ in 0..samples {
            let x = center[0] + rng.gen_range(-radius..radius);
            let y = center[1] + rng.gen_range(-radius..radius);
            let dx = x - center[0];
            let dy = y - center[1];
            if dx * dx + dy * dy > radius * radius {
                continue;
            }
            for (i, m) in l.basis().iter().enumerate() {
                let e = m.exps();
                let v = x.powi(e[0] as i32) * y.powi(e[1] as i32);
                sums[i] += v;
                squares[i] += v * v;
            }
        }
        let n = samples as f64;
        let estimates: Vec<f64> = sums.iter().map(|s| s * box_vol / n).collect();
        let errors = squares
            .iter()
            .zip(&sums)
            .map(|(&sq, &s)| {
                let mean = s / n;
                let var = (sq / n - mean * mean).max(0.0);
                box_vol * (var / n).sqrt()
            })
            .collect();
        (estimates, errors)
    }

    #[test]
    fn unit_ball_moments_survive_monte_carlo_audit() {
        // Independent check of the Gamma-function formula on the unit disk:
        // every entry up to degree 6 agrees to 1e-3.
        let l = lebesgue_moments_ball(&[0.0, 0.0], 1.0, 6);
        let (mc, _) = monte_carlo_ball_moments(&l, &[0.0, 0.0], 1.0, 10_000_000, 2024);
        for (i, m) in l.basis().iter().enumerate() {
            let want = l.values()[i];
            assert!(
                (mc[i] - want).abs() <= 1e-3 * (1.0 + want.abs()),
                "moment of {:?}: closed form {} vs Monte Carlo {}",
                m.exps(),
                want,
                mc[i]
            );
        }
    }

    #[test]
    fn shifted_ball_moments_survive_monte_carlo_audit() {
        // The binomial-shift path, judged against a five-standard-error
        // band from the sampler itself.
        let center = [0.3, -0.2];
        let radius = 1.2;
        let l = lebesgue_moments_ball(&center, radius, 6);
        let (mc, se) = monte_carlo_ball_moments(&l, &center, radius, 10_000_000, 77);
        for (i, m) in l.basis().iter().enumerate() {
            let want = l.values()[i];
            let tol = (5.0 * se[i]).max(1e-9);
            assert!(
                (mc[i] - want).abs() <= tol,
                "moment of {:?}: closed form {} vs Monte Carlo {} (5 se = {})",
                m.exps(),
                want,
                mc[i],
                tol
            );
        }
    }

    #[test]
    fn box_moments_transform_with_the_jacobian() {
        // Moments over [-1.6, 1.6]^2 equal jacobian times moments of the
        // pulled-back monomials over the unit box.
        let s = 1.6f64;
        let scaled = lebesgue_moments_box(&[(-s, s), (-s, s)], 4);
        let unit = lebesgue_moments_box(&[(-1.0, 1.0), (-1.0, 1.0)], 4);
        let scaling = AffineScaling::new(vec![s, s], vec![0.0, 0.0]);
        assert_eq!(scaling.jacobian_volume_factor(), s * s);
        for (i, m) in scaled.basis().iter().enumerate() {
            let total: u32 = m.exps().iter().sum();
            let pullback = unit.values()[i] * s.powi(total as i32);
            let want = scaling.jacobian_volume_factor() * pullback;
            let got = scaled.values()[i];
            assert!(
                (got - want).abs() <= 1e-12 * (1.0 + want.abs()),
                "monomial {:?}",
                m.exps()
            );
        }
    }

    #[test]
    fn dirac_moments_evaluate_monomials() {
        let d = MomentVector::dirac(1, 2, &[0.5]);
        assert_eq!(d.values(), &[1.0, 0.5, 0.25]);
    }

    #[test]
    fn affine_scaling_round_trips() {
        let sc = AffineScaling::new(vec![1.6, 0.5], vec![0.1, -0.2]);
        let p = [0.7, -0.9];
        let back = sc.to_scaled(&sc.to_original(&p));
        assert!((back[0] - p[0]).abs() < 1e-15);
        assert!((back[1] - p[1]).abs() < 1e-15);
        assert!(AffineScaling::identity(3).is_identity());
    }
}
