//! Problem container and the linear-expression building blocks.
//!
//! A `LinExpr` is a sparse linear functional over the decision variables.  A
//! matrix term with coefficient `v` on entry `(row, col)` contributes
//! `v * X[row, col]`, reading the one stored entry of the symmetric block;
//! it is not doubled for off-diagonal references.  Rows are canonicalized so
//! that `row >= col`, duplicate targets are merged, and exact zeros dropped.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("block index {block} out of range ({nblocks} blocks)")]
    BadBlock { block: usize, nblocks: usize },
    #[error("entry ({row},{col}) out of range for block {block} of order {order}")]
    BadEntry {
        block: usize,
        order: usize,
        row: usize,
        col: usize,
    },
    #[error("free variable index {var} out of range ({nvars} declared)")]
    BadFreeVar { var: usize, nvars: usize },
    #[error("non-finite coefficient in {place}")]
    NonFinite { place: String },
    #[error("problem has no PSD blocks")]
    NoBlocks,
    #[error("total PSD dimension {total} exceeds cap {cap}")]
    TooLarge { total: usize, cap: usize },
    #[error("SDPA parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("candidate shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Reference to one stored (lower-triangle) entry of a PSD block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockEntry {
    pub block: usize,
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinExpr {
    pub mat: Vec<BlockEntry>,
    pub free: Vec<(usize, f64)>,
}

impl LinExpr {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `coeff * X[block][row, col]`; the entry may be given in either
    /// triangle.
    pub fn mat(&mut self, block: usize, row: usize, col: usize, coeff: f64) -> &mut Self {
        let (r, c) = if row >= col { (row, col) } else { (col, row) };
        self.mat.push(BlockEntry {
            block,
            row: r,
            col: c,
            coeff,
        });
        self
    }

    pub fn free(&mut self, var: usize, coeff: f64) -> &mut Self {
        self.free.push((var, coeff));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.mat.is_empty() && self.free.is_empty()
    }

    fn canonicalize(&mut self) {
        self.mat
            .sort_by_key(|e| (e.block, e.row, e.col));
        let mut merged: Vec<BlockEntry> = Vec::with_capacity(self.mat.len());
        for e in self.mat.drain(..) {
            match merged.last_mut() {
                Some(last) if (last.block, last.row, last.col) == (e.block, e.row, e.col) => {
                    last.coeff += e.coeff;
                }
                _ => merged.push(e),
            }
        }
        merged.retain(|e| e.coeff != 0.0);
        self.mat = merged;

        self.free.sort_by_key(|&(v, _)| v);
        let mut fm: Vec<(usize, f64)> = Vec::with_capacity(self.free.len());
        for (v, c) in self.free.drain(..) {
            match fm.last_mut() {
                Some(last) if last.0 == v => last.1 += c,
                _ => fm.push((v, c)),
            }
        }
        fm.retain(|&(_, c)| c != 0.0);
        self.free = fm;
    }
}

#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub(crate) block_names: Vec<String>,
    pub(crate) block_orders: Vec<usize>,
    pub(crate) free_names: Vec<String>,
    pub(crate) rows: Vec<LinExpr>,
    pub(crate) rhs: Vec<f64>,
    pub(crate) objective: LinExpr,
    pub(crate) sense: Sense,
}

impl SdpProblem {
    pub fn new() -> Self {
        Self {
            block_names: Vec::new(),
            block_orders: Vec::new(),
            free_names: Vec::new(),
            rows: Vec::new(),
            rhs: Vec::new(),
            objective: LinExpr::new(),
            sense: Sense::Minimize,
        }
    }

    pub fn add_block(&mut self, name: impl Into<String>, order: usize) -> usize {
        self.block_names.push(name.into());
        self.block_orders.push(order);
        self.block_orders.len() - 1
    }

    pub fn add_free(&mut self, name: impl Into<String>) -> usize {
        self.free_names.push(name.into());
        self.free_names.len() - 1
    }

    pub fn add_equality(&mut self, mut expr: LinExpr, rhs: f64) -> Result<usize, SdpError> {
        expr.canonicalize();
        self.check_expr(&expr, "constraint")?;
        if !rhs.is_finite() {
            return Err(SdpError::NonFinite {
                place: "constraint rhs".into(),
            });
        }
        self.rows.push(expr);
        self.rhs.push(rhs);
        Ok(self.rows.len() - 1)
    }

    pub fn set_objective(&mut self, mut expr: LinExpr, sense: Sense) -> Result<(), SdpError> {
        expr.canonicalize();
        self.check_expr(&expr, "objective")?;
        self.objective = expr;
        self.sense = sense;
        Ok(())
    }

    fn check_expr(&self, expr: &LinExpr, place: &str) -> Result<(), SdpError> {
        for e in &expr.mat {
            let nblocks = self.block_orders.len();
            if e.block >= nblocks {
                return Err(SdpError::BadBlock {
                    block: e.block,
                    nblocks,
                });
            }
            let order = self.block_orders[e.block];
            if e.row >= order || e.col >= order {
                return Err(SdpError::BadEntry {
                    block: e.block,
                    order,
                    row: e.row,
                    col: e.col,
                });
            }
            if !e.coeff.is_finite() {
                return Err(SdpError::NonFinite {
                    place: place.into(),
                });
            }
        }
        for &(v, c) in &expr.free {
            if v >= self.free_names.len() {
                return Err(SdpError::BadFreeVar {
                    var: v,
                    nvars: self.free_names.len(),
                });
            }
            if !c.is_finite() {
                return Err(SdpError::NonFinite {
                    place: place.into(),
                });
            }
        }
        Ok(())
    }

    pub fn num_blocks(&self) -> usize {
        self.block_orders.len()
    }

    pub fn block_order(&self, block: usize) -> usize {
        self.block_orders[block]
    }

    pub fn block_orders(&self) -> &[usize] {
        &self.block_orders
    }

    pub fn block_name(&self, block: usize) -> &str {
        &self.block_names[block]
    }

    pub fn num_free(&self) -> usize {
        self.free_names.len()
    }

    pub fn free_name(&self, var: usize) -> &str {
        &self.free_names[var]
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> (&LinExpr, f64) {
        (&self.rows[i], self.rhs[i])
    }

    pub fn objective(&self) -> &LinExpr {
        &self.objective
    }

    pub fn sense(&self) -> Sense {
        self.sense
    }

    pub fn total_psd_dim(&self) -> usize {
        self.block_orders.iter().sum()
    }

    /// Value of a linear expression at a candidate point.
    pub fn eval_expr(expr: &LinExpr, blocks: &[nalgebra::DMatrix<f64>], frees: &[f64]) -> f64 {
        let mut acc = 0.0;
        for e in &expr.mat {
            acc += e.coeff * blocks[e.block][(e.row, e.col)];
        }
        for &(v, c) in &expr.free {
            acc += c * frees[v];
        }
        acc
    }
}

impl Default for SdpProblem {
    fn default() -> Self {
        Self::new()
    }
}
