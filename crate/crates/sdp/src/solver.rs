//! Primal-dual interior-point solver.
//!
//! Normal form handled here:
//!
//! ```text
//! min  sum_j <C_j, X_j> + c'z
//! s.t. sum_j <A_ij, X_j> + d_i'z = b_i     (i = 1..m)
//!      X_j PSD,  z free
//! ```
//!
//! Maximization is solved by negating the objective.  Each iteration scales
//! every block to the Nesterov-Todd point (via Cholesky factors of X and S
//! and one small SVD), forms the dense Schur complement
//! M[i,k] = sum_j <A_ij, W_j A_kj W_j>, and eliminates the free variables
//! through the q x q system (D' M^-1 D) dz = D' M^-1 h - r_free rather than
//! splitting them into cone differences.  Search directions follow the
//! Mehrotra predictor-corrector recipe with sigma = (mu_aff/mu)^3.
//!
//! Deterministic: fixed iteration order, no threads, no RNG.  Rows are
//! equilibrated by their max absolute coefficient internally; reported
//! multipliers refer to the rows as given.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::problem::{SdpError, SdpProblem, Sense};
use crate::residuals::{functional_matrix, residuals, CandidatePoint, ResidualReport};

#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub tol_primal: f64,
    pub tol_dual: f64,
    pub tol_gap: f64,
    pub max_iterations: usize,
    /// Solve refuses problems whose summed block order exceeds this.
    pub max_total_psd_dim: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    pub record_trace: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_primal: 1e-8,
            tol_dual: 1e-8,
            tol_gap: 1e-8,
            max_iterations: 200,
            max_total_psd_dim: 800,
            step_fraction: 0.98,
            record_trace: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    MaxIterations,
    NumericalFailure,
    InfeasibleDetected,
}

/// One row of the iteration log, in minimization normal form.
#[derive(Debug, Clone, Copy)]
pub struct IterStat {
    pub mu: f64,
    pub pobj: f64,
    pub dobj: f64,
    pub primal_inf: f64,
    pub dual_inf: f64,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SolveStatus,
    /// Objective value in the problem's own sense.
    pub objective: f64,
    pub dual_objective: f64,
    pub blocks: Vec<DMatrix<f64>>,
    pub frees: Vec<f64>,
    /// Multipliers of the minimization normal form, one per constraint row.
    pub duals: Vec<f64>,
    pub dual_slacks: Vec<DMatrix<f64>>,
    pub iterations: usize,
    pub residuals: ResidualReport,
    pub trace: Vec<IterStat>,
}

impl SdpSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Sparse symmetric functional on one block: (row, col, raw coeff) with
/// row >= col; the raw coefficient multiplies the single stored entry.
type BlockCoeffs = Vec<(u32, u32, f64)>;

struct Prepared {
    m: usize,
    q: usize,
    orders: Vec<usize>,
    /// Per block: constraints touching it, ascending, with their coeffs.
    block_cons: Vec<Vec<(usize, BlockCoeffs)>>,
    /// Per constraint: blocks it touches, ascending, with their coeffs.
    cons_blocks: Vec<Vec<(usize, BlockCoeffs)>>,
    c_mats: Vec<DMatrix<f64>>,
    c_free: DVector<f64>,
    d: DMatrix<f64>,
    b: DVector<f64>,
    row_scale: Vec<f64>,
    bnorm: f64,
    cnorm: f64,
}

fn prepare(problem: &SdpProblem, obj_sign: f64) -> Prepared {
    let m = problem.num_rows();
    let q = problem.num_free();
    let nblocks = problem.num_blocks();
    let orders: Vec<usize> = problem.block_orders().to_vec();

    let mut row_scale = vec![1.0f64; m];
    for i in 0..m {
        let (row, _) = problem.row(i);
        let mut s = 0.0f64;
        for e in &row.mat {
            s = s.max(e.coeff.abs());
        }
        for &(_, c) in &row.free {
            s = s.max(c.abs());
        }
        if s > 0.0 {
            row_scale[i] = s;
        }
    }

    let mut block_cons: Vec<Vec<(usize, BlockCoeffs)>> = vec![Vec::new(); nblocks];
    let mut cons_blocks: Vec<Vec<(usize, BlockCoeffs)>> = vec![Vec::new(); m];
    let mut d = DMatrix::zeros(m, q);
    let mut b = DVector::zeros(m);
    for i in 0..m {
        let (row, rhs) = problem.row(i);
        let inv = 1.0 / row_scale[i];
        b[i] = rhs * inv;
        let mut per_block: Vec<(usize, BlockCoeffs)> = Vec::new();
        for e in &row.mat {
            if per_block.last().map(|p| p.0) != Some(e.block) {
                per_block.push((e.block, Vec::new()));
            }
            per_block
                .last_mut()
                .unwrap()
                .1
                .push((e.row as u32, e.col as u32, e.coeff * inv));
        }
        for (j, coeffs) in &per_block {
            block_cons[*j].push((i, coeffs.clone()));
        }
        cons_blocks[i] = per_block;
        for &(v, c) in &row.free {
            d[(i, v)] = c * inv;
        }
    }

    let c_mats: Vec<DMatrix<f64>> = (0..nblocks)
        .map(|j| functional_matrix(problem.objective(), j, orders[j]) * obj_sign)
        .collect();
    let mut c_free = DVector::zeros(q);
    for &(v, c) in &problem.objective().free {
        c_free[v] = c * obj_sign;
    }

    let bnorm = b.iter().fold(0.0f64, |a, &x| a.max(x.abs()));
    let cnorm = c_mats
        .iter()
        .flat_map(|mmat| mmat.iter())
        .chain(c_free.iter())
        .fold(0.0f64, |a, &x| a.max(x.abs()));

    Prepared {
        m,
        q,
        orders,
        block_cons,
        cons_blocks,
        c_mats,
        c_free,
        d,
        b,
        row_scale,
        bnorm,
        cnorm,
    }
}

/// sum_i y_i A_ij as a dense symmetric matrix.
fn accumulate_dual(prep: &Prepared, j: usize, y: &DVector<f64>) -> DMatrix<f64> {
    let n = prep.orders[j];
    let mut acc = DMatrix::zeros(n, n);
    for (i, coeffs) in &prep.block_cons[j] {
        let yi = y[*i];
        if yi == 0.0 {
            continue;
        }
        for &(r, c, v) in coeffs {
            let (r, c) = (r as usize, c as usize);
            if r == c {
                acc[(r, c)] += yi * v;
            } else {
                acc[(r, c)] += 0.5 * yi * v;
                acc[(c, r)] += 0.5 * yi * v;
            }
        }
    }
    acc
}

/// <A_ij, M> for a dense symmetric M given by a column-major slice.
fn dot_block_slice(coeffs: &BlockCoeffs, buf: &[f64], stride: usize) -> f64 {
    let mut acc = 0.0;
    for &(r, c, v) in coeffs {
        acc += v * buf[c as usize * stride + r as usize];
    }
    acc
}

fn dot_block(coeffs: &BlockCoeffs, mmat: &DMatrix<f64>) -> f64 {
    dot_block_slice(coeffs, mmat.as_slice(), mmat.nrows())
}

struct NtScaling {
    g: DMatrix<f64>,
    w: DMatrix<f64>,
    sv: DVector<f64>,
}

fn nt_scaling(x: &DMatrix<f64>, s: &DMatrix<f64>) -> Option<NtScaling> {
    let lx = cholesky_jitter(x)?;
    let ls = cholesky_jitter(s)?;
    let k = ls.l().transpose() * lx.l();
    let svd = k.try_svd(false, true, f64::EPSILON, 500)?;
    let vt = svd.v_t?;
    let sv = svd.singular_values;
    if sv.iter().any(|&s| !(s > 0.0)) {
        return None;
    }
    // G = L_x V S^{-1/2}; then W = G G' satisfies W S W = X, and both
    // G^-1 X G^-T and G' S G equal diag(sv).
    let mut g = lx.l() * vt.transpose();
    for (c, mut col) in g.column_iter_mut().enumerate() {
        col *= 1.0 / sv[c].sqrt();
    }
    let w = &g * g.transpose();
    Some(NtScaling { g, w, sv })
}

fn cholesky_jitter(mmat: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = Cholesky::new(mmat.clone()) {
        return Some(ch);
    }
    let n = mmat.nrows();
    let scale = 1.0 + (0..n).fold(0.0f64, |a, i| a.max(mmat[(i, i)].abs()));
    let mut delta = 1e-14 * scale;
    for _ in 0..3 {
        let mut jittered = mmat.clone();
        for i in 0..n {
            jittered[(i, i)] += delta;
        }
        if let Some(ch) = Cholesky::new(jittered) {
            return Some(ch);
        }
        delta *= 100.0;
    }
    None
}

/// Cholesky of the Schur complement with escalating diagonal regularization:
/// 1e-12 relative to the largest diagonal entry, scaled by 10 per retry, at
/// most 3 retries.
fn cholesky_regularized(mmat: &DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = Cholesky::new(mmat.clone()) {
        return Some(ch);
    }
    let n = mmat.nrows();
    let scale = 1.0 + (0..n).fold(0.0f64, |a, i| a.max(mmat[(i, i)].abs()));
    let mut delta = 1e-12 * scale;
    for _ in 0..3 {
        let mut reg = mmat.clone();
        for i in 0..n {
            reg[(i, i)] += delta;
        }
        if let Some(ch) = Cholesky::new(reg) {
            return Some(ch);
        }
        delta *= 10.0;
    }
    None
}

/// Max step in (0, 1] keeping diag(sv) + alpha * dm PSD.
fn max_step(sv: &DVector<f64>, dm: &DMatrix<f64>) -> Option<f64> {
    let n = sv.len();
    if n == 0 {
        return Some(1.0);
    }
    let mut q = dm.clone();
    for c in 0..n {
        for r in 0..n {
            q[(r, c)] /= (sv[r] * sv[c]).sqrt();
        }
    }
    let q = (&q + q.transpose()) * 0.5;
    let eig = q.try_symmetric_eigen(f64::EPSILON, 500)?;
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !lmin.is_finite() {
        return None;
    }
    if lmin >= 0.0 {
        Some(1.0)
    } else {
        Some((-1.0 / lmin).min(1.0))
    }
}

struct KktFactors {
    chol_m: Cholesky<f64, nalgebra::Dyn>,
    /// M^-1 D, empty when there are no free variables.
    minv_d: DMatrix<f64>,
    chol_k: Option<Cholesky<f64, nalgebra::Dyn>>,
}

fn sup_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
}

fn solve_augmented(
    q: usize,
    f: &KktFactors,
    schur: &DMatrix<f64>,
    d: &DMatrix<f64>,
    h: &DVector<f64>,
    r_free: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let solve_once = |hh: &DVector<f64>, rf: &DVector<f64>| {
        let w = f.chol_m.solve(hh);
        if q == 0 {
            return Some((w, DVector::zeros(0)));
        }
        let rhs = f.minv_d.transpose() * hh - rf;
        let dz = f.chol_k.as_ref()?.solve(&rhs);
        let dy = w - &f.minv_d * &dz;
        Some((dy, dz))
    };
    let (mut dy, mut dz) = solve_once(h, r_free)?;
    // Iterative refinement against the unfactored system: the Cholesky
    // factors carry regularization and roundoff that otherwise put a floor
    // under the primal residual once the scaling becomes ill-conditioned.
    for _ in 0..2 {
        let res_h = h - schur * &dy - d * &dz;
        let res_f = r_free - d.transpose() * &dy;
        let scale = sup_norm(h).max(sup_norm(r_free)).max(1.0);
        if sup_norm(&res_h).max(sup_norm(&res_f)) <= 1e-14 * scale {
            break;
        }
        let (cy, cz) = solve_once(&res_h, &res_f)?;
        dy += cy;
        dz += cz;
    }
    Some((dy, dz))
}

struct Direction {
    dy: DVector<f64>,
    dz: DVector<f64>,
    dx_hat: Vec<DMatrix<f64>>,
    ds_hat: Vec<DMatrix<f64>>,
    ds: Vec<DMatrix<f64>>,
}

pub fn solve(problem: &SdpProblem, config: &SolverConfig) -> Result<SdpSolution, SdpError> {
    if problem.num_blocks() == 0 {
        return Err(SdpError::NoBlocks);
    }
    let total = problem.total_psd_dim();
    if total > config.max_total_psd_dim {
        return Err(SdpError::TooLarge {
            total,
            cap: config.max_total_psd_dim,
        });
    }

    let obj_sign = match problem.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let prep = prepare(problem, obj_sign);
    let m = prep.m;
    let q = prep.q;
    let nblocks = prep.orders.len();
    let ntotal: f64 = prep.orders.iter().sum::<usize>() as f64;

    let eta = 1.0 + prep.bnorm;
    let mut x: Vec<DMatrix<f64>> = prep
        .orders
        .iter()
        .map(|&n| DMatrix::identity(n, n) * eta)
        .collect();
    let mut s: Vec<DMatrix<f64>> = x.clone();
    let mut y: DVector<f64> = DVector::zeros(m);
    let mut z: DVector<f64> = DVector::zeros(q);

    let mut trace: Vec<IterStat> = Vec::new();
    let mut iterations = 0usize;

    // Near the central-path limit the Schur system can hit the f64
    // conditioning wall before every tolerance is met.  Remember the most
    // accurate iterate seen so a late stall returns that point instead of
    // whatever the last degraded step produced.
    let mut best_merit = f64::INFINITY;
    let mut best_iterate: Option<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>, DVector<f64>, DVector<f64>)> =
        None;
    let mut stalled_for = 0usize;

    let nmax = prep.orders.iter().cloned().max().unwrap_or(0);
    let mut scratch_bt = DMatrix::<f64>::zeros(nmax, nmax);
    let mut scratch_t = DMatrix::<f64>::zeros(nmax, nmax);
    let mut schur = DMatrix::<f64>::zeros(m, m);

    let mut mu0 = f64::NAN;

    let status = loop {
        // Residuals of the current iterate.
        let mut r_p = prep.b.clone();
        for i in 0..m {
            for (j, coeffs) in &prep.cons_blocks[i] {
                r_p[i] -= dot_block(coeffs, &x[*j]);
            }
        }
        if q > 0 {
            r_p -= &prep.d * &z;
        }
        let r_d: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| &prep.c_mats[j] - accumulate_dual(&prep, j, &y) - &s[j])
            .collect();
        let r_f = &prep.c_free - prep.d.transpose() * &y;

        let mut pobj = prep.c_free.dot(&z);
        for j in 0..nblocks {
            pobj += prep.c_mats[j].dot(&x[j]);
        }
        let dobj = prep.b.dot(&y);
        let mut gap_num = 0.0;
        for j in 0..nblocks {
            gap_num += x[j].dot(&s[j]);
        }
        let mu = gap_num / ntotal;
        if iterations == 0 {
            mu0 = mu;
        }

        let rp_inf = r_p.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        let rd_inf = r_d
            .iter()
            .flat_map(|mmat| mmat.iter())
            .chain(r_f.iter())
            .fold(0.0f64, |a, &v| a.max(v.abs()));

        if config.record_trace {
            trace.push(IterStat {
                mu,
                pobj,
                dobj,
                primal_inf: rp_inf,
                dual_inf: rd_inf,
            });
        }

        if !mu.is_finite() || !pobj.is_finite() || !rp_inf.is_finite() || !rd_inf.is_finite() {
            break SolveStatus::NumericalFailure;
        }

        let rp_rel = rp_inf / (1.0 + prep.bnorm);
        let rd_rel = rd_inf / (1.0 + prep.cnorm);
        let gap_rel = (pobj - dobj).abs() / (1.0 + pobj.abs() + dobj.abs());
        if rp_rel <= config.tol_primal && rd_rel <= config.tol_dual && gap_rel <= config.tol_gap {
            break SolveStatus::Optimal;
        }
        if iterations >= config.max_iterations {
            break SolveStatus::MaxIterations;
        }

        // Divergence heuristics: complementarity collapsing while the
        // residuals stay put, or the iterate running away.
        let iterate_norm = x
            .iter()
            .chain(s.iter())
            .flat_map(|mmat| mmat.iter())
            .chain(y.iter())
            .chain(z.iter())
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        if iterate_norm > 1e14 || (mu < 1e-12 * (1.0 + mu0) && rp_rel.max(rd_rel) > 1e-5) {
            break SolveStatus::InfeasibleDetected;
        }

        // Tolerance-normalized worst violation; 1.0 means converged.  Stop
        // once several consecutive iterations fail to improve it: grinding
        // mu further only degrades the primal residual.
        let merit = (rp_rel / config.tol_primal)
            .max(rd_rel / config.tol_dual)
            .max(gap_rel / config.tol_gap);
        if merit < 0.98 * best_merit {
            best_merit = merit;
            best_iterate = Some((x.clone(), s.clone(), y.clone(), z.clone()));
            stalled_for = 0;
        } else {
            stalled_for += 1;
            if stalled_for >= 8 {
                break SolveStatus::NumericalFailure;
            }
        }

        // Nesterov-Todd scalings.
        let mut scalings: Vec<NtScaling> = Vec::with_capacity(nblocks);
        let mut scaling_failed = false;
        for j in 0..nblocks {
            match nt_scaling(&x[j], &s[j]) {
                Some(sc) => scalings.push(sc),
                None => {
                    scaling_failed = true;
                    break;
                }
            }
        }
        if scaling_failed {
            break SolveStatus::NumericalFailure;
        }

        // Dense Schur complement, lower triangle, column by column.
        schur.fill(0.0);
        let bt_stride = nmax;
        for k in 0..m {
            for (j, coeffs_k) in &prep.cons_blocks[k] {
                let n = prep.orders[*j];
                let w = &scalings[*j].w;
                let wbuf = w.as_slice();
                // T = W A_k W through Bt = (A_k W)', then T = W Bt'.
                let mut touched: Vec<usize> = Vec::with_capacity(2 * coeffs_k.len());
                {
                    let bt = scratch_bt.as_mut_slice();
                    for &(r, c, v) in coeffs_k {
                        let (r, c) = (r as usize, c as usize);
                        if r == c {
                            let wc = &wbuf[c * n..c * n + n];
                            let bc = &mut bt[r * bt_stride..r * bt_stride + n];
                            for t in 0..n {
                                bc[t] += v * wc[t];
                            }
                            touched.push(r);
                        } else {
                            let half = 0.5 * v;
                            {
                                let wc = &wbuf[c * n..c * n + n];
                                let bc = &mut bt[r * bt_stride..r * bt_stride + n];
                                for t in 0..n {
                                    bc[t] += half * wc[t];
                                }
                            }
                            {
                                let wr = &wbuf[r * n..r * n + n];
                                let bc2 = &mut bt[c * bt_stride..c * bt_stride + n];
                                for t in 0..n {
                                    bc2[t] += half * wr[t];
                                }
                            }
                            touched.push(r);
                            touched.push(c);
                        }
                    }
                }
                touched.sort_unstable();
                touched.dedup();
                {
                    let tbuf = scratch_t.as_mut_slice();
                    for b in 0..n {
                        tbuf[b * bt_stride..b * bt_stride + n].fill(0.0);
                    }
                    let bt = scratch_bt.as_slice();
                    for &r in &touched {
                        let wr = &wbuf[r * n..r * n + n];
                        for b in 0..n {
                            let factor = bt[r * bt_stride + b];
                            if factor != 0.0 {
                                let tcol = &mut tbuf[b * bt_stride..b * bt_stride + n];
                                for t in 0..n {
                                    tcol[t] += factor * wr[t];
                                }
                            }
                        }
                    }
                }
                for &r in &touched {
                    scratch_bt.column_mut(r).fill(0.0);
                }
                // Lower triangle of column k.
                let cons = &prep.block_cons[*j];
                let start = cons.partition_point(|(i, _)| *i < k);
                let tbuf = scratch_t.as_slice();
                for (i, coeffs_i) in &cons[start..] {
                    schur[(*i, k)] += dot_block_slice(coeffs_i, tbuf, bt_stride);
                }
            }
        }
        for k in 0..m {
            for i in (k + 1)..m {
                schur[(k, i)] = schur[(i, k)];
            }
        }

        let chol_m = match cholesky_regularized(&schur) {
            Some(ch) => ch,
            None => {
                break SolveStatus::NumericalFailure;
            }
        };
        let minv_d = if q > 0 {
            chol_m.solve(&prep.d)
        } else {
            DMatrix::zeros(m, 0)
        };
        let chol_k = if q > 0 {
            let kk = prep.d.transpose() * &minv_d;
            match cholesky_regularized(&kk) {
                Some(ch) => Some(ch),
                None => {
                    break SolveStatus::NumericalFailure;
                }
            }
        } else {
            None
        };
        let factors = KktFactors {
            chol_m,
            minv_d,
            chol_k,
        };

        // Scaled dual residuals R^_d = G' R_d G per block.
        let rd_hat: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| {
                let g = &scalings[j].g;
                g.transpose() * &r_d[j] * g
            })
            .collect();

        let direction = |rc_hat: &[DMatrix<f64>]| -> Option<Direction> {
            let mut h = r_p.clone();
            for j in 0..nblocks {
                let g = &scalings[j].g;
                let p = g * (&rc_hat[j] - &rd_hat[j]) * g.transpose();
                for (i, coeffs) in &prep.block_cons[j] {
                    h[*i] -= dot_block(coeffs, &p);
                }
            }
            let (mut dy, mut dz) = solve_augmented(q, &factors, &schur, &prep.d, &h, &r_f)?;
            let mut ds_hat = Vec::with_capacity(nblocks);
            let mut dx_hat = Vec::with_capacity(nblocks);
            let mut ds = Vec::with_capacity(nblocks);
            for j in 0..nblocks {
                let ds_j = &r_d[j] - accumulate_dual(&prep, j, &dy);
                let g = &scalings[j].g;
                let dsh = g.transpose() * &ds_j * g;
                let dxh = &rc_hat[j] - &dsh;
                ds.push(ds_j);
                ds_hat.push(dsh);
                dx_hat.push(dxh);
            }
            // The Schur matrix is assembled from squared NT scalings, so its
            // entries carry roundoff of order kappa(W) * eps that no solve
            // against the assembled matrix can see.  Re-evaluate the primal
            // equation from the reconstructed unscaled step and correct; the
            // dual and complementarity equations hold by construction, so
            // the correction solve gets zero residuals there.  Corrections
            // come from the same regularized factorization, so near the
            // central-path limit they can hurt instead of help; measure after
            // every application and keep the best direction seen.
            let mut best_err = f64::INFINITY;
            let mut best = None;
            for pass in 0..3 {
                let mut e1 = r_p.clone();
                for j in 0..nblocks {
                    let g = &scalings[j].g;
                    let dx = g * &dx_hat[j] * g.transpose();
                    for (i, coeffs) in &prep.block_cons[j] {
                        e1[*i] -= dot_block(coeffs, &dx);
                    }
                }
                if q > 0 {
                    e1 -= &prep.d * &dz;
                }
                let e2 = &r_f - prep.d.transpose() * &dy;
                let err = sup_norm(&e1).max(sup_norm(&e2));
                if err < best_err {
                    best_err = err;
                    best = Some((
                        dy.clone(),
                        dz.clone(),
                        dx_hat.clone(),
                        ds_hat.clone(),
                        ds.clone(),
                    ));
                } else {
                    break;
                }
                if err <= 1e-12 * (1.0 + prep.bnorm) || pass == 2 {
                    break;
                }
                let (cy, cz) = solve_augmented(q, &factors, &schur, &prep.d, &e1, &e2)?;
                for j in 0..nblocks {
                    let cds = -accumulate_dual(&prep, j, &cy);
                    let g = &scalings[j].g;
                    let cdsh = g.transpose() * &cds * g;
                    dx_hat[j] -= &cdsh;
                    ds_hat[j] += &cdsh;
                    ds[j] += &cds;
                }
                dy += cy;
                dz += cz;
            }
            let (dy, dz, dx_hat, ds_hat, ds) = best?;
            Some(Direction {
                dy,
                dz,
                dx_hat,
                ds_hat,
                ds,
            })
        };

        // Predictor: target complementarity zero.
        let rc_aff: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| {
                let n = prep.orders[j];
                let mut mneg = DMatrix::zeros(n, n);
                for i in 0..n {
                    mneg[(i, i)] = -scalings[j].sv[i];
                }
                mneg
            })
            .collect();
        let aff = match direction(&rc_aff) {
            Some(d) => d,
            None => {
                break SolveStatus::NumericalFailure;
            }
        };

        let mut alpha_p_aff = 1.0f64;
        let mut alpha_d_aff = 1.0f64;
        let mut step_failed = false;
        for j in 0..nblocks {
            match (
                max_step(&scalings[j].sv, &aff.dx_hat[j]),
                max_step(&scalings[j].sv, &aff.ds_hat[j]),
            ) {
                (Some(ap), Some(ad)) => {
                    alpha_p_aff = alpha_p_aff.min(ap);
                    alpha_d_aff = alpha_d_aff.min(ad);
                }
                _ => {
                    step_failed = true;
                    break;
                }
            }
        }
        if step_failed {
            break SolveStatus::NumericalFailure;
        }

        // mu after the affine step, evaluated in scaled space where both
        // X and S read diag(sv).
        let mut mu_aff_num = 0.0;
        for j in 0..nblocks {
            let n = prep.orders[j];
            let sv = &scalings[j].sv;
            for c in 0..n {
                for r in 0..n {
                    let xh = if r == c { sv[r] } else { 0.0 }
                        + alpha_p_aff * aff.dx_hat[j][(r, c)];
                    let sh = if r == c { sv[r] } else { 0.0 }
                        + alpha_d_aff * aff.ds_hat[j][(r, c)];
                    mu_aff_num += xh * sh;
                }
            }
        }
        let mu_aff = (mu_aff_num / ntotal).max(0.0);
        // Balance guard: when infeasibility still dominates the gap, keep mu
        // up (more centering) so the Schur system stays well conditioned
        // while the equality residuals, which Newton contracts exactly,
        // catch up.  Letting mu race ahead of feasibility stalls the method
        // in a thrashing regime near the optimal face.
        let infeas_rel = rp_rel.max(rd_rel);
        let balance_floor = (infeas_rel / gap_rel.max(1e-300)).min(0.5);
        // Do not let the gap overshoot its own tolerance by orders of
        // magnitude either: every decade mu falls below what the gap test
        // needs squares the Schur conditioning for no benefit.
        let target_floor = (config.tol_gap / gap_rel.max(1e-300)).min(0.5);
        let sigma_floor = balance_floor.max(target_floor);
        let sigma = ((mu_aff / mu).powi(3)).clamp(0.0, 1.0).max(sigma_floor);

        // Corrector with Mehrotra second-order term.
        let rc_corr: Vec<DMatrix<f64>> = (0..nblocks)
            .map(|j| {
                let n = prep.orders[j];
                let sv = &scalings[j].sv;
                let cross = &aff.dx_hat[j] * &aff.ds_hat[j];
                let mut rc = DMatrix::zeros(n, n);
                for c in 0..n {
                    for r in 0..n {
                        let symc = 0.5 * (cross[(r, c)] + cross[(c, r)]);
                        let target = if r == c { sigma * mu } else { 0.0 };
                        rc[(r, c)] = 2.0 * (target - symc) / (sv[r] + sv[c])
                            - if r == c { sv[r] } else { 0.0 };
                    }
                }
                rc
            })
            .collect();
        let dir = match direction(&rc_corr) {
            Some(d) => d,
            None => {
                break SolveStatus::NumericalFailure;
            }
        };

        let mut alpha_p = 1.0f64;
        let mut alpha_d = 1.0f64;
        for j in 0..nblocks {
            match (
                max_step(&scalings[j].sv, &dir.dx_hat[j]),
                max_step(&scalings[j].sv, &dir.ds_hat[j]),
            ) {
                (Some(ap), Some(ad)) => {
                    alpha_p = alpha_p.min(ap);
                    alpha_d = alpha_d.min(ad);
                }
                _ => {
                    step_failed = true;
                    break;
                }
            }
        }
        if step_failed {
            break SolveStatus::NumericalFailure;
        }
        alpha_p = (config.step_fraction * alpha_p).min(1.0);
        alpha_d = (config.step_fraction * alpha_d).min(1.0);
        if alpha_p < 1e-10 && alpha_d < 1e-10 {
            break SolveStatus::NumericalFailure;
        }

        for j in 0..nblocks {
            let g = &scalings[j].g;
            let dx = g * &dir.dx_hat[j] * g.transpose();
            x[j] += &dx * alpha_p;
            x[j] = (&x[j] + x[j].transpose()) * 0.5;
            s[j] += &dir.ds[j] * alpha_d;
            s[j] = (&s[j] + s[j].transpose()) * 0.5;
        }
        z += &dir.dz * alpha_p;
        y += &dir.dy * alpha_d;
        iterations += 1;
    };

    if status != SolveStatus::Optimal {
        if let Some((bx, bs, by, bz)) = best_iterate {
            x = bx;
            s = bs;
            y = by;
            z = bz;
        }
    }

    // Report against the problem as given: original row scaling, original
    // objective sense.
    let duals_orig: Vec<f64> = (0..m).map(|i| y[i] / prep.row_scale[i]).collect();
    let point = CandidatePoint {
        blocks: x.clone(),
        frees: z.iter().cloned().collect(),
        duals: duals_orig.clone(),
    };
    let report = residuals(problem, &point)?;

    let mut pobj_int = prep.c_free.dot(&z);
    for j in 0..nblocks {
        pobj_int += prep.c_mats[j].dot(&x[j]);
    }
    let dobj_int = prep.b.dot(&y);

    Ok(SdpSolution {
        status,
        objective: obj_sign * pobj_int,
        dual_objective: obj_sign * dobj_int,
        blocks: x,
        frees: z.iter().cloned().collect(),
        duals: duals_orig,
        dual_slacks: s,
        iterations,
        residuals: report,
        trace,
    })
}
