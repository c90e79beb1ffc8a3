//! Round-trip properties of the SDPA sparse-format reader and writer.

use proptest::prelude::*;
use sdp::{export_sdpa, import_sdpa, LinExpr, SdpProblem, Sense};

#[derive(Debug, Clone)]
struct RawProblem {
    orders: Vec<usize>,
    nfree: usize,
    rows: Vec<(Vec<(usize, usize, usize, f64)>, Vec<(usize, f64)>, f64)>,
    objective: (Vec<(usize, usize, usize, f64)>, Vec<(usize, f64)>),
    maximize: bool,
}

fn coeff() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1.0e6..1.0e6f64,
        Just(0.1),
        Just(-1.0 / 3.0),
        Just(1.0e-17),
        Just(12345.678901234567),
    ]
}

fn entries() -> impl Strategy<Value = Vec<(usize, usize, usize, f64)>> {
    proptest::collection::vec((0usize..8, 0usize..8, 0usize..8, coeff()), 0..5)
}

fn frees() -> impl Strategy<Value = Vec<(usize, f64)>> {
    proptest::collection::vec((0usize..8, coeff()), 0..3)
}

fn raw_problem() -> impl Strategy<Value = RawProblem> {
    (
        proptest::collection::vec(1usize..=3, 1..=3),
        0usize..=2,
        proptest::collection::vec((entries(), frees(), -10.0..10.0f64), 1..=6),
        (entries(), frees()),
        any::<bool>(),
    )
        .prop_map(|(orders, nfree, rows, objective, maximize)| RawProblem {
            orders,
            nfree,
            rows,
            objective,
            maximize,
        })
}

fn build(raw: &RawProblem) -> SdpProblem {
    let mut p = SdpProblem::new();
    let blocks: Vec<usize> = raw
        .orders
        .iter()
        .enumerate()
        .map(|(i, &ord)| p.add_block(format!("b{i}"), ord))
        .collect();
    let free_ids: Vec<usize> = (0..raw.nfree).map(|i| p.add_free(format!("f{i}"))).collect();
    let expr_of = |mats: &[(usize, usize, usize, f64)], fr: &[(usize, f64)]| {
        let mut e = LinExpr::new();
        for &(b, r, c, v) in mats {
            let b = blocks[b % blocks.len()];
            let ord = raw.orders[b];
            e.mat(b, r % ord, c % ord, v);
        }
        if !free_ids.is_empty() {
            for &(k, v) in fr {
                e.free(free_ids[k % free_ids.len()], v);
            }
        }
        e
    };
    for (mats, fr, rhs) in &raw.rows {
        let e = expr_of(mats, fr);
        p.add_equality(e, *rhs).unwrap();
    }
    let obj = expr_of(&raw.objective.0, &raw.objective.1);
    let sense = if raw.maximize { Sense::Maximize } else { Sense::Minimize };
    p.set_objective(obj, sense).unwrap();
    p
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn export_import_export_is_stable(raw in raw_problem()) {
        let p = build(&raw);
        let first = export_sdpa(&p);
        let back = import_sdpa(&first).expect("our own export must parse");
        let second = export_sdpa(&back);
        prop_assert_eq!(first, second, "second export drifted from the first");
    }

    #[test]
    fn import_preserves_row_count_and_rhs(raw in raw_problem()) {
        let p = build(&raw);
        let back = import_sdpa(&export_sdpa(&p)).unwrap();
        prop_assert_eq!(back.num_rows(), p.num_rows());
        for i in 0..p.num_rows() {
            let (_, want) = p.row(i);
            let (_, got) = back.row(i);
            prop_assert_eq!(want.to_bits(), got.to_bits(), "rhs changed through the format");
        }
    }
}

#[test]
fn foreign_punctuation_and_comments_are_tolerated() {
    let text = r#"* hand-written file with every separator the format allows
" second comment style
2 =mdim
1 =nblocks
{2}
3.0, -1.0
1 1 1 1 0.5
(2) 1 1 2 0.25
"#;
    let p = import_sdpa(text).unwrap();
    assert_eq!(p.num_rows(), 2);
    assert_eq!(p.num_blocks(), 1);
    assert_eq!(p.block_order(0), 2);
    let (r0, b0) = p.row(0);
    assert_eq!(b0, 3.0);
    assert_eq!(r0.mat.len(), 1);
    assert_eq!(r0.mat[0].coeff, 0.5);
    let (r1, _) = p.row(1);
    // Off-diagonal file value 0.25 stands for both symmetric entries, so the
    // single stored coefficient doubles.
    assert_eq!(r1.mat[0].coeff, 0.5);
    assert_eq!((r1.mat[0].row, r1.mat[0].col), (1, 0));
}

#[test]
fn free_scalars_become_paired_unit_blocks() {
    let mut p = SdpProblem::new();
    let b = p.add_block("x", 2);
    let g = p.add_free("gamma");
    let mut row = LinExpr::new();
    row.mat(b, 0, 0, 1.0).free(g, 2.0);
    p.add_equality(row, 1.0).unwrap();
    let mut obj = LinExpr::new();
    obj.free(g, 1.0);
    p.set_objective(obj, Sense::Maximize).unwrap();

    let back = import_sdpa(&export_sdpa(&p)).unwrap();
    // One PSD block plus a (+, -) pair of 1x1 blocks for the single scalar.
    assert_eq!(back.num_blocks(), 3);
    assert_eq!(back.block_order(1), 1);
    assert_eq!(back.block_order(2), 1);
    assert_eq!(back.num_free(), 0);
    let (r0, _) = back.row(0);
    let plus: Vec<_> = r0.mat.iter().filter(|e| e.block == 1).collect();
    let minus: Vec<_> = r0.mat.iter().filter(|e| e.block == 2).collect();
    assert_eq!(plus[0].coeff, 2.0);
    assert_eq!(minus[0].coeff, -2.0);
}
