//! Sparse multivariate polynomials over f64 coefficients.
//!
//! Monomials are ordered graded-lexicographically: lower total degree
//! first, ties broken so that the monomial with more weight on earlier
//! variables comes first (1, x1, x2, x1^2, x1 x2, x2^2, ...).  Every
//! module downstream indexes moment vectors and Gram bases by this order,
//! so it must never change.
//!
//! Coefficients are pruned only when exactly zero; tolerance-based pruning
//! would silently corrupt constraint assembly.  Dimension mismatches are
//! programming errors and panic.

use std::collections::BTreeMap;
use std::fmt;

/// Exponent vector of a single monomial; length is the ambient dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    exps: Vec<u32>,
}

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        Self { exps }
    }

    pub fn constant(dim: usize) -> Self {
        Self { exps: vec![0; dim] }
    }

    /// The monomial x_i.
    pub fn var(dim: usize, i: usize) -> Self {
        assert!(i < dim, "variable {} out of range for dimension {}", i, dim);
        let mut exps = vec![0; dim];
        exps[i] = 1;
        Self { exps }
    }

    pub fn dim(&self) -> usize {
        self.exps.len()
    }

    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }

    pub fn exps(&self) -> &[u32] {
        &self.exps
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        assert_eq!(
            point.len(),
            self.exps.len(),
            "point length {} does not match dimension {}",
            point.len(),
            self.exps.len()
        );
        self.exps
            .iter()
            .zip(point)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        assert_eq!(self.dim(), other.dim(), "monomial dimension mismatch");
        Monomial {
            exps: self
                .exps
                .iter()
                .zip(&other.exps)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    /// Pads with zero exponents up to `dim` trailing variables.
    pub fn embed(&self, dim: usize) -> Monomial {
        assert!(dim >= self.dim(), "cannot embed into a smaller dimension");
        let mut exps = self.exps.clone();
        exps.resize(dim, 0);
        Monomial { exps }
    }

    /// Embeds into a larger space with variable i mapped to offset + i.
    pub fn embed_at(&self, dim: usize, offset: usize) -> Monomial {
        assert!(
            offset + self.dim() <= dim,
            "embedding window exceeds target dimension"
        );
        let mut exps = vec![0; dim];
        exps[offset..offset + self.dim()].copy_from_slice(&self.exps);
        Monomial { exps }
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        debug_assert_eq!(self.dim(), other.dim());
        self.degree()
            .cmp(&other.degree())
            // Within a degree, more weight on earlier variables sorts first.
            .then_with(|| other.exps.cmp(&self.exps))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

/// All monomials of total degree <= max_degree in graded lex order.  The
/// first element is always the constant monomial; the length is
/// C(dimension + max_degree, dimension).
pub fn monomial_basis(dimension: usize, max_degree: u32) -> Vec<Monomial> {
    assert!(dimension >= 1, "basis needs at least one variable");
    let mut out = Vec::new();
    let mut exps = vec![0u32; dimension];
    for d in 0..=max_degree {
        fill_degree(&mut out, &mut exps, 0, d);
    }
    debug_assert!(out.windows(2).all(|w| w[0] < w[1]), "basis must be sorted");
    out
}

fn fill_degree(out: &mut Vec<Monomial>, exps: &mut Vec<u32>, pos: usize, remaining: u32) {
    if pos + 1 == exps.len() {
        exps[pos] = remaining;
        out.push(Monomial::new(exps.clone()));
        return;
    }
    // Descending leading exponent matches the tie-break in Monomial::cmp.
    for e in (0..=remaining).rev() {
        exps[pos] = e;
        fill_degree(out, exps, pos + 1, remaining - e);
    }
    exps[pos] = 0;
}

/// Sparse polynomial: map from monomials to nonzero coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    dim: usize,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(dim: usize) -> Self {
        assert!(dim >= 1);
        Self {
            dim,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(Monomial::constant(dim), c);
        p
    }

    /// The polynomial x_i.
    pub fn var(dim: usize, i: usize) -> Self {
        let mut p = Self::zero(dim);
        p.add_term(Monomial::var(dim, i), 1.0);
        p
    }

    pub fn from_terms<I>(dim: usize, terms: I) -> Self
    where
        I: IntoIterator<Item = (Vec<u32>, f64)>,
    {
        let mut p = Self::zero(dim);
        for (exps, coeff) in terms {
            assert_eq!(exps.len(), dim, "term exponent length must equal dimension");
            p.add_term(Monomial::new(exps), coeff);
        }
        p
    }

    /// Adds `coeff * m` into the polynomial, pruning exact zeros.
    pub fn add_term(&mut self, m: Monomial, coeff: f64) {
        assert_eq!(m.dim(), self.dim, "term dimension mismatch");
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Occupied(mut o) => {
                *o.get_mut() += coeff;
                if *o.get() == 0.0 {
                    o.remove();
                }
            }
            Entry::Vacant(v) => {
                if coeff != 0.0 {
                    v.insert(coeff);
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Max total degree over stored terms; 0 for the zero polynomial.
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|m| m.degree()).max().unwrap_or(0)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn coeff(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch");
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        if s == 0.0 {
            return Polynomial::zero(self.dim);
        }
        Polynomial {
            dim: self.dim,
            terms: self.terms.iter().map(|(m, c)| (m.clone(), c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &Polynomial) -> Polynomial {
        assert_eq!(self.dim, other.dim, "polynomial dimension mismatch");
        let mut out = Polynomial::zero(self.dim);
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), ca * cb);
            }
        }
        out
    }

    pub fn evaluate(&self, point: &[f64]) -> f64 {
        assert_eq!(
            point.len(),
            self.dim,
            "point length {} does not match dimension {}",
            point.len(),
            self.dim
        );
        // Memoize powers per variable up to the largest exponent used.
        let mut max_exp = vec![0u32; self.dim];
        for m in self.terms.keys() {
            for (i, e) in m.exps.iter().enumerate() {
                max_exp[i] = max_exp[i].max(*e);
            }
        }
        let pows: Vec<Vec<f64>> = point
            .iter()
            .zip(&max_exp)
            .map(|(&x, &me)| {
                let mut v = Vec::with_capacity(me as usize + 1);
                v.push(1.0);
                for e in 1..=me {
                    v.push(v[e as usize - 1] * x);
                }
                v
            })
            .collect();
        let mut total = 0.0;
        for (m, c) in &self.terms {
            let mut t = *c;
            for (i, &e) in m.exps.iter().enumerate() {
                t *= pows[i][e as usize];
            }
            total += t;
        }
        total
    }

    /// Partial derivative with respect to variable i.
    pub fn differentiate(&self, i: usize) -> Polynomial {
        assert!(i < self.dim, "variable {} out of range", i);
        let mut out = Polynomial::zero(self.dim);
        for (m, c) in &self.terms {
            let e = m.exps[i];
            if e == 0 {
                continue;
            }
            let mut exps = m.exps.clone();
            exps[i] = e - 1;
            out.add_term(Monomial::new(exps), c * e as f64);
        }
        out
    }

    /// Reinterprets the polynomial in a larger ambient space; the new
    /// trailing variables do not occur in it.
    pub fn embed(&self, dim: usize) -> Polynomial {
        assert!(dim >= self.dim, "cannot embed into a smaller dimension");
        Polynomial {
            dim,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.embed(dim), *c))
                .collect(),
        }
    }

    /// Embeds into a larger space with variable i mapped to offset + i.
    pub fn embed_at(&self, dim: usize, offset: usize) -> Polynomial {
        Polynomial {
            dim,
            terms: self
                .terms
                .iter()
                .map(|(m, c)| (m.embed_at(dim, offset), *c))
                .collect(),
        }
    }

    /// Substitutes f_i for the i-th variable: returns self(f_1, ..., f_n)
    /// expanded in the monomial basis of f's ambient space.
    pub fn compose(&self, f: &PolynomialVector) -> Polynomial {
        assert_eq!(
            f.len(),
            self.dim,
            "composition needs one component per variable"
        );
        let out_dim = f.dim();
        let mut max_exp = vec![0u32; self.dim];
        for m in self.terms.keys() {
            for (i, e) in m.exps.iter().enumerate() {
                max_exp[i] = max_exp[i].max(*e);
            }
        }
        // pows[i][e] = f_i^e, built incrementally.
        let pows: Vec<Vec<Polynomial>> = (0..self.dim)
            .map(|i| {
                let mut v = Vec::with_capacity(max_exp[i] as usize + 1);
                v.push(Polynomial::constant(out_dim, 1.0));
                for e in 1..=max_exp[i] {
                    let next = v[e as usize - 1].mul(f.component(i));
                    v.push(next);
                }
                v
            })
            .collect();
        let mut out = Polynomial::zero(out_dim);
        for (m, c) in &self.terms {
            let mut t = Polynomial::constant(out_dim, *c);
            for (i, &e) in m.exps.iter().enumerate() {
                if e > 0 {
                    t = t.mul(&pows[i][e as usize]);
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// Directional derivative sum_i (dself/dx_i) * f_i, where self depends
    /// on the first `self.dim()` variables of f's ambient space (control
    /// variables enter only through f).
    pub fn gradient_dot(&self, f: &PolynomialVector) -> Polynomial {
        assert_eq!(
            f.len(),
            self.dim,
            "need one vector-field component per variable"
        );
        assert!(f.dim() >= self.dim, "ambient space cannot drop variables");
        let mut out = Polynomial::zero(f.dim());
        for i in 0..self.dim {
            let di = self.differentiate(i).embed(f.dim());
            out = out.add(&di.mul(f.component(i)));
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, fm: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(fm, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if first {
                write!(fm, "{}", c)?;
                first = false;
            } else if *c < 0.0 {
                write!(fm, " - {}", -c)?;
            } else {
                write!(fm, " + {}", c)?;
            }
            for (i, &e) in m.exps.iter().enumerate() {
                match e {
                    0 => {}
                    1 => write!(fm, "*x{}", i + 1)?,
                    _ => write!(fm, "*x{}^{}", i + 1, e)?,
                }
            }
        }
        Ok(())
    }
}

/// Ordered list of polynomials sharing one ambient space; the carrier for
/// vector fields and coordinate substitutions.
#[derive(Debug, Clone, PartialEq)]
pub struct PolynomialVector {
    components: Vec<Polynomial>,
}

impl PolynomialVector {
    pub fn new(components: Vec<Polynomial>) -> Self {
        assert!(!components.is_empty(), "vector needs at least one component");
        let dim = components[0].dim();
        assert!(
            components.iter().all(|p| p.dim() == dim),
            "all components must share one dimension"
        );
        Self { components }
    }

    /// The identity map on `dim` variables.
    pub fn identity(dim: usize) -> Self {
        Self::new((0..dim).map(|i| Polynomial::var(dim, i)).collect())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn component(&self, i: usize) -> &Polynomial {
        &self.components[i]
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    /// Max degree over components; 0 if every component is zero.
    pub fn degree(&self) -> u32 {
        self.components.iter().map(|p| p.degree()).max().unwrap()
    }

    pub fn evaluate(&self, point: &[f64]) -> Vec<f64> {
        self.components.iter().map(|p| p.evaluate(point)).collect()
    }
}
