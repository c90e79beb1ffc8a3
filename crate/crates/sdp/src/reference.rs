//! Frozen reference instances with closed-form optima.
//!
//! Two families, five instances each: minimum-eigenvalue problems
//! (min <C,X> over tr X = 1, X PSD, optimum = lambda_min(C)) and scalar
//! sum-of-squares bounds (max gamma s.t. p - gamma = b(x)' Q b(x), Q PSD,
//! optimum = min p when the gap closes, which it does for every polynomial
//! chosen here).  The suite doubles as a solver self-check: any regression
//! in the interior-point method shows up against these optima.

use crate::problem::{LinExpr, SdpProblem, Sense};

pub struct ReferenceInstance {
    pub name: &'static str,
    pub problem: SdpProblem,
    pub optimum: f64,
}

fn min_eig(name: &'static str, c: Vec<Vec<f64>>, optimum: f64) -> ReferenceInstance {
    let n = c.len();
    let mut p = SdpProblem::new();
    let b = p.add_block("x", n);
    let mut tr = LinExpr::new();
    for i in 0..n {
        tr.mat(b, i, i, 1.0);
    }
    p.add_equality(tr, 1.0).unwrap();
    let mut obj = LinExpr::new();
    for r in 0..n {
        for col in 0..=r {
            let v = c[r][col];
            if v != 0.0 {
                obj.mat(b, r, col, if r == col { v } else { 2.0 * v });
            }
        }
    }
    p.set_objective(obj, Sense::Minimize).unwrap();
    ReferenceInstance {
        name,
        problem: p,
        optimum,
    }
}

/// max gamma s.t. p - gamma is a Gram form over the univariate basis
/// [1, x, .., x^k]; `coeffs[d]` is the coefficient of x^d in p.
fn sos_univariate(name: &'static str, coeffs: Vec<f64>, optimum: f64) -> ReferenceInstance {
    let deg = coeffs.len() - 1;
    assert!(deg % 2 == 0);
    let k = deg / 2;
    let mut p = SdpProblem::new();
    let q = p.add_block("gram", k + 1);
    let gamma = p.add_free("gamma");
    for d in 0..=deg {
        let mut row = LinExpr::new();
        // Entries (i, j) with i + j = d; each unordered off-diagonal pair
        // contributes twice.
        for i in 0..=k.min(d) {
            let j = d - i;
            if j > k || j > i {
                continue;
            }
            row.mat(q, i, j, if i == j { 1.0 } else { 2.0 });
        }
        if d == 0 {
            row.free(gamma, 1.0);
        }
        p.add_equality(row, coeffs[d]).unwrap();
    }
    let mut obj = LinExpr::new();
    obj.free(gamma, 1.0);
    p.set_objective(obj, Sense::Maximize).unwrap();
    ReferenceInstance {
        name,
        problem: p,
        optimum,
    }
}

/// max gamma s.t. p - gamma is a Gram form over [1, x, y] for a quadratic
/// p given as [c1, cx, cy, cxx, cxy, cyy].
fn sos_quadratic_2d(name: &'static str, c: [f64; 6], optimum: f64) -> ReferenceInstance {
    let mut p = SdpProblem::new();
    let q = p.add_block("gram", 3);
    let gamma = p.add_free("gamma");
    let mut row = LinExpr::new();
    row.mat(q, 0, 0, 1.0).free(gamma, 1.0);
    p.add_equality(row, c[0]).unwrap();
    let mut row = LinExpr::new();
    row.mat(q, 1, 0, 2.0);
    p.add_equality(row, c[1]).unwrap();
    let mut row = LinExpr::new();
    row.mat(q, 2, 0, 2.0);
    p.add_equality(row, c[2]).unwrap();
    let mut row = LinExpr::new();
    row.mat(q, 1, 1, 1.0);
    p.add_equality(row, c[3]).unwrap();
    let mut row = LinExpr::new();
    row.mat(q, 2, 1, 2.0);
    p.add_equality(row, c[4]).unwrap();
    let mut row = LinExpr::new();
    row.mat(q, 2, 2, 1.0);
    p.add_equality(row, c[5]).unwrap();
    let mut obj = LinExpr::new();
    obj.free(gamma, 1.0);
    p.set_objective(obj, Sense::Maximize).unwrap();
    ReferenceInstance {
        name,
        problem: p,
        optimum,
    }
}

pub fn reference_suite() -> Vec<ReferenceInstance> {
    vec![
        min_eig(
            "mineig_diag_2",
            vec![vec![1.0, 0.0], vec![0.0, 3.0]],
            1.0,
        ),
        min_eig(
            "mineig_coupled_2",
            vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            1.0,
        ),
        min_eig(
            "mineig_tridiag_3",
            vec![
                vec![2.0, -1.0, 0.0],
                vec![-1.0, 2.0, -1.0],
                vec![0.0, -1.0, 2.0],
            ],
            2.0 - std::f64::consts::SQRT_2,
        ),
        min_eig(
            "mineig_diag_4",
            vec![
                vec![5.0, 0.0, 0.0, 0.0],
                vec![0.0, -3.0, 0.0, 0.0],
                vec![0.0, 0.0, 0.5, 0.0],
                vec![0.0, 0.0, 0.0, 7.0],
            ],
            -3.0,
        ),
        min_eig(
            "mineig_path_5",
            vec![
                vec![0.0, 1.0, 0.0, 0.0, 0.0],
                vec![1.0, 0.0, 1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0, 0.0, 1.0],
                vec![0.0, 0.0, 0.0, 1.0, 0.0],
            ],
            // Path-graph spectrum: 2 cos(k pi / 6), smallest at k = 5.
            -(3.0f64.sqrt()),
        ),
        // min of x^2 is 0
        sos_univariate("sos_square", vec![0.0, 0.0, 1.0], 0.0),
        // min of x^4 - 2x^2 is -1 at x = +-1
        sos_univariate("sos_quartic_well", vec![0.0, 0.0, -2.0, 0.0, 1.0], -1.0),
        // min of x^2 - 2x + 3 is 2 at x = 1
        sos_univariate("sos_shifted_square", vec![3.0, -2.0, 1.0], 2.0),
        // min of x^2 + y^2 is 0
        sos_quadratic_2d("sos_round_bowl", [0.0, 0.0, 0.0, 1.0, 0.0, 1.0], 0.0),
        // min of (x+y)^2 + (x-1)^2 is 0 at (1, -1)
        sos_quadratic_2d("sos_tilted_bowl", [1.0, -2.0, 0.0, 2.0, 2.0, 1.0], 0.0),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_has_ten_instances_with_unique_names() {
        let suite = reference_suite();
        assert_eq!(suite.len(), 10);
        let mut names: Vec<_> = suite.iter().map(|i| i.name).collect();
        names.sort_unstable();
        names.dedup();
        assert_eq!(names.len(), 10);
    }
}
