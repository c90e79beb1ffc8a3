//! KKT residual evaluation for candidate solutions.

use nalgebra::DMatrix;

use crate::problem::{LinExpr, SdpError, SdpProblem, Sense};

/// A primal/dual candidate; `duals` has one multiplier per constraint row
/// and may be all zeros when only primal quality is of interest.
#[derive(Debug, Clone)]
pub struct CandidatePoint {
    pub blocks: Vec<DMatrix<f64>>,
    pub frees: Vec<f64>,
    pub duals: Vec<f64>,
}

impl CandidatePoint {
    pub fn zeros(problem: &SdpProblem) -> Self {
        Self {
            blocks: problem
                .block_orders()
                .iter()
                .map(|&n| DMatrix::zeros(n, n))
                .collect(),
            frees: vec![0.0; problem.num_free()],
            duals: vec![0.0; problem.num_rows()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// max_i |<row_i, point> - rhs_i|
    pub primal_inf: f64,
    /// max over dual feasibility violations: matrix part uses the slack
    /// S_j = C_j - sum_i y_i A_ij and reports how far it is from symmetric
    /// PSD only through `min_slack_eigs`; the scalar part is
    /// max_k |c_k - sum_i y_i d_ik|.
    pub dual_inf: f64,
    /// Primal minus dual objective in the minimization normal form.
    pub gap: f64,
    /// Smallest eigenvalue of each primal block.
    pub min_block_eigs: Vec<f64>,
    /// Smallest eigenvalue of each dual slack block.
    pub min_slack_eigs: Vec<f64>,
}

fn sym_min_eig(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Builds the dense symmetric matrix of a linear functional restricted to one
/// block, so that `<matrix, X> = sum coeff * X[r, c]` under the stored-entry
/// reading of `LinExpr`.
pub(crate) fn functional_matrix(expr: &LinExpr, block: usize, order: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(order, order);
    for e in &expr.mat {
        if e.block != block {
            continue;
        }
        if e.row == e.col {
            m[(e.row, e.col)] += e.coeff;
        } else {
            m[(e.row, e.col)] += 0.5 * e.coeff;
            m[(e.col, e.row)] += 0.5 * e.coeff;
        }
    }
    m
}

pub fn residuals(problem: &SdpProblem, point: &CandidatePoint) -> Result<ResidualReport, SdpError> {
    if point.blocks.len() != problem.num_blocks() {
        return Err(SdpError::ShapeMismatch(format!(
            "{} blocks given, {} expected",
            point.blocks.len(),
            problem.num_blocks()
        )));
    }
    for (j, b) in point.blocks.iter().enumerate() {
        let n = problem.block_order(j);
        if b.nrows() != n || b.ncols() != n {
            return Err(SdpError::ShapeMismatch(format!(
                "block {} is {}x{}, expected {}x{}",
                j,
                b.nrows(),
                b.ncols(),
                n,
                n
            )));
        }
    }
    if point.frees.len() != problem.num_free() {
        return Err(SdpError::ShapeMismatch(format!(
            "{} free values given, {} expected",
            point.frees.len(),
            problem.num_free()
        )));
    }
    if point.duals.len() != problem.num_rows() {
        return Err(SdpError::ShapeMismatch(format!(
            "{} duals given, {} expected",
            point.duals.len(),
            problem.num_rows()
        )));
    }

    let mut primal_inf: f64 = 0.0;
    for i in 0..problem.num_rows() {
        let (row, rhs) = problem.row(i);
        let v = SdpProblem::eval_expr(row, &point.blocks, &point.frees);
        primal_inf = primal_inf.max((v - rhs).abs());
    }

    // Minimization normal form: flip the objective for max problems.
    let obj_sign = match problem.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };

    // Free-variable dual feasibility: sign * c_k - sum_i y_i d_ik = 0.
    let mut free_dual = vec![0.0; problem.num_free()];
    for &(v, c) in &problem.objective().free {
        free_dual[v] += obj_sign * c;
    }
    for i in 0..problem.num_rows() {
        let y = point.duals[i];
        if y != 0.0 {
            for &(v, c) in &problem.row(i).0.free {
                free_dual[v] -= y * c;
            }
        }
    }
    let dual_inf = free_dual.iter().fold(0.0f64, |a, &x| a.max(x.abs()));

    let mut min_block_eigs = Vec::with_capacity(problem.num_blocks());
    let mut min_slack_eigs = Vec::with_capacity(problem.num_blocks());
    for j in 0..problem.num_blocks() {
        let order = problem.block_order(j);
        min_block_eigs.push(sym_min_eig(&point.blocks[j]));
        let mut slack = functional_matrix(problem.objective(), j, order) * obj_sign;
        for i in 0..problem.num_rows() {
            let y = point.duals[i];
            if y != 0.0 {
                slack -= functional_matrix(problem.row(i).0, j, order) * y;
            }
        }
        min_slack_eigs.push(sym_min_eig(&slack));
    }

    let pobj =
        obj_sign * SdpProblem::eval_expr(problem.objective(), &point.blocks, &point.frees);
    let dobj: f64 = (0..problem.num_rows())
        .map(|i| point.duals[i] * problem.row(i).1)
        .sum();

    Ok(ResidualReport {
        primal_inf,
        dual_inf,
        gap: pobj - dobj,
        min_block_eigs,
        min_slack_eigs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{LinExpr, SdpProblem, Sense};

    #[test]
    fn zero_point_primal_residual_is_rhs_norm() {
        let mut p = SdpProblem::new();
        let b = p.add_block("q", 2);
        let mut tr = LinExpr::new();
        tr.mat(b, 0, 0, 1.0).mat(b, 1, 1, 1.0);
        p.add_equality(tr, 3.0).unwrap();
        let mut obj = LinExpr::new();
        obj.mat(b, 0, 0, 1.0);
        p.set_objective(obj, Sense::Minimize).unwrap();

        let rep = residuals(&p, &CandidatePoint::zeros(&p)).unwrap();
        assert_eq!(rep.primal_inf, 3.0);
        assert_eq!(rep.min_block_eigs, vec![0.0]);
    }

    #[test]
    fn off_diagonal_coefficients_read_one_entry() {
        let mut p = SdpProblem::new();
        let b = p.add_block("q", 2);
        let mut row = LinExpr::new();
        row.mat(b, 1, 0, 2.0);
        p.add_equality(row, 4.0).unwrap();
        let mut pt = CandidatePoint::zeros(&p);
        pt.blocks[0][(1, 0)] = 2.0;
        pt.blocks[0][(0, 1)] = 2.0;
        let rep = residuals(&p, &pt).unwrap();
        assert_eq!(rep.primal_inf, 0.0, "2 * X[1,0] should equal 4");
    }
}
