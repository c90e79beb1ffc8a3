//! Solver checks against instances with closed-form optima, plus the
//! structural guarantees: determinism, row-permutation invariance, and
//! weak duality along the iterate path.

use nalgebra::DMatrix;
use sdp::{
    reference_suite, residuals, solve, CandidatePoint, LinExpr, SdpError, SdpProblem, Sense,
    SolveStatus, SolverConfig,
};

const OBJ_TOL: f64 = 1e-6;
const KKT_TOL: f64 = 1e-7;

fn default_solve(p: &SdpProblem) -> sdp::SdpSolution {
    solve(p, &SolverConfig::default()).expect("well-formed instance must not be rejected")
}

#[test]
fn reference_instances_reach_analytic_optima() {
    for inst in reference_suite() {
        let sol = default_solve(&inst.problem);
        assert!(
            sol.converged(),
            "{} ended with status {:?} after {} iterations",
            inst.name,
            sol.status,
            sol.iterations
        );
        assert!(
            (sol.objective - inst.optimum).abs() <= OBJ_TOL,
            "{}: objective {} vs analytic {}",
            inst.name,
            sol.objective,
            inst.optimum
        );
        let rep = &sol.residuals;
        assert!(
            rep.primal_inf <= KKT_TOL,
            "{}: primal residual {}",
            inst.name,
            rep.primal_inf
        );
        assert!(
            rep.dual_inf <= KKT_TOL,
            "{}: dual residual {}",
            inst.name,
            rep.dual_inf
        );
        for (b, eig) in rep.min_block_eigs.iter().enumerate() {
            assert!(
                *eig >= -1e-8,
                "{}: block {} has eigenvalue {}",
                inst.name,
                b,
                eig
            );
        }
        for (b, eig) in rep.min_slack_eigs.iter().enumerate() {
            assert!(
                *eig >= -KKT_TOL,
                "{}: dual slack {} has eigenvalue {}",
                inst.name,
                b,
                eig
            );
        }
        assert!(
            rep.gap.abs() <= 1e-6 * (1.0 + inst.optimum.abs()),
            "{}: duality gap {}",
            inst.name,
            rep.gap
        );
    }
}

#[test]
fn diag_example_recovers_eigenvector_solution() {
    let mut p = SdpProblem::new();
    let b = p.add_block("x", 2);
    let mut tr = LinExpr::new();
    tr.mat(b, 0, 0, 1.0).mat(b, 1, 1, 1.0);
    p.add_equality(tr, 1.0).unwrap();
    let mut obj = LinExpr::new();
    obj.mat(b, 0, 0, 1.0).mat(b, 1, 1, 2.0);
    p.set_objective(obj, Sense::Minimize).unwrap();

    let sol = default_solve(&p);
    assert!((sol.objective - 1.0).abs() <= OBJ_TOL, "objective {}", sol.objective);
    let x = &sol.blocks[0];
    assert!((x[(0, 0)] - 1.0).abs() <= 1e-5, "mass should sit on the small eigenvalue");
    assert!(x[(1, 1)].abs() <= 1e-5, "large-eigenvalue entry should vanish");

    // Hand-built exact optimum: X = diag(1, 0), multiplier y = 1 gives
    // slack S = diag(0, 1).
    let exact = CandidatePoint {
        blocks: vec![DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]))],
        frees: vec![],
        duals: vec![1.0],
    };
    let rep = residuals(&p, &exact).unwrap();
    assert!(rep.primal_inf < 1e-14 && rep.dual_inf < 1e-14 && rep.gap.abs() < 1e-14);

    // Perturbing one primal entry by 1e-3 moves the equality residual by
    // exactly that much.
    let mut off = exact;
    off.blocks[0][(0, 0)] += 1e-3;
    let rep = residuals(&p, &off).unwrap();
    assert!((rep.primal_inf - 1e-3).abs() < 1e-12, "residual {}", rep.primal_inf);
}

#[test]
fn repeated_solves_are_bit_identical() {
    for inst in reference_suite() {
        let a = default_solve(&inst.problem);
        let b = default_solve(&inst.problem);
        assert_eq!(
            a.objective.to_bits(),
            b.objective.to_bits(),
            "{}: objective drifted between runs",
            inst.name
        );
        assert_eq!(a.iterations, b.iterations, "{}: iteration count drifted", inst.name);
        for (ma, mb) in a.blocks.iter().zip(&b.blocks) {
            for (va, vb) in ma.iter().zip(mb.iter()) {
                assert_eq!(va.to_bits(), vb.to_bits(), "{}: block entry drifted", inst.name);
            }
        }
        for (va, vb) in a.frees.iter().zip(&b.frees) {
            assert_eq!(va.to_bits(), vb.to_bits(), "{}: free value drifted", inst.name);
        }
        for (va, vb) in a.duals.iter().zip(&b.duals) {
            assert_eq!(va.to_bits(), vb.to_bits(), "{}: dual value drifted", inst.name);
        }
    }
}

fn with_rows_permuted(p: &SdpProblem, order: &[usize]) -> SdpProblem {
    assert_eq!(order.len(), p.num_rows());
    let mut q = SdpProblem::new();
    for b in 0..p.num_blocks() {
        q.add_block(p.block_name(b), p.block_order(b));
    }
    for v in 0..p.num_free() {
        q.add_free(p.free_name(v));
    }
    for &i in order {
        let (expr, rhs) = p.row(i);
        q.add_equality(expr.clone(), rhs).unwrap();
    }
    q.set_objective(p.objective().clone(), p.sense()).unwrap();
    q
}

#[test]
fn row_order_does_not_move_the_objective() {
    for inst in reference_suite() {
        let m = inst.problem.num_rows();
        let reversed: Vec<usize> = (0..m).rev().collect();
        let rotated: Vec<usize> = (0..m).map(|i| (i + m / 2) % m).collect();
        let base = default_solve(&inst.problem).objective;
        for order in [reversed, rotated] {
            let permuted = with_rows_permuted(&inst.problem, &order);
            let obj = default_solve(&permuted).objective;
            assert!(
                (obj - base).abs() <= 1e-7,
                "{}: objective moved from {} to {} under row permutation",
                inst.name,
                base,
                obj
            );
        }
    }
}

#[test]
fn weak_duality_holds_along_the_path() {
    for inst in reference_suite() {
        let sol = default_solve(&inst.problem);
        assert!(!sol.trace.is_empty(), "{}: trace was not recorded", inst.name);
        for (k, it) in sol.trace.iter().enumerate() {
            assert!(
                it.pobj >= it.dobj - 1e-9,
                "{}: iterate {} has primal {} below dual {}",
                inst.name,
                k,
                it.pobj,
                it.dobj
            );
        }
    }
}

#[test]
fn iteration_budget_is_respected() {
    let inst = &reference_suite()[1];
    let cfg = SolverConfig {
        max_iterations: 2,
        ..SolverConfig::default()
    };
    let sol = solve(&inst.problem, &cfg).unwrap();
    assert_eq!(sol.status, SolveStatus::MaxIterations);
    assert!(!sol.converged());
    assert!(sol.iterations <= 2);
}

#[test]
fn problems_without_psd_blocks_are_rejected() {
    let mut p = SdpProblem::new();
    let g = p.add_free("g");
    let mut row = LinExpr::new();
    row.free(g, 1.0);
    p.add_equality(row, 3.0).unwrap();
    let mut obj = LinExpr::new();
    obj.free(g, 1.0);
    p.set_objective(obj, Sense::Minimize).unwrap();
    match solve(&p, &SolverConfig::default()) {
        Err(SdpError::NoBlocks) => {}
        other => panic!("expected NoBlocks, got {:?}", other.map(|s| s.status)),
    }
}
