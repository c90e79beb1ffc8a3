//! SDPA sparse format (.dat-s) export and import.
//!
//! The file encodes the pair
//!
//! ```text
//! (P) min c'x  s.t.  X = sum_i x_i F_i - F0,  X PSD
//! (D) max <F0, Y>  s.t.  <F_i, Y> = c_i,  Y PSD
//! ```
//!
//! Our problems live on the (D) side: Y collects the PSD blocks, c is our
//! rhs vector b, F_i is the matrix part of constraint row i, and F0 = -C so
//! that the SDPA objective is the negation of our minimum.  Maximization
//! problems are baked into minimization normal form on export.
//!
//! Free-variable encoding (export only): each free scalar z_k becomes two
//! 1x1 blocks appended after the PSD blocks, z_k = u_k - v_k with u_k, v_k
//! nonnegative; a coefficient d on z_k lands as +d on the first block and
//! -d on the second.  Import keeps those 1x1 blocks as order-1 PSD blocks
//! and introduces no free variables, so export . import . export is a
//! byte-exact fixpoint.  Diagonal blocks in foreign files (negative block
//! size) are expanded into that many order-1 PSD blocks.
//!
//! All numeric literals are printed with 17 significant digits, which
//! round-trips f64 exactly.

use crate::problem::{LinExpr, SdpError, SdpProblem, Sense};

fn fmt(v: f64) -> String {
    format!("{:.16e}", v)
}

/// One output entry; `value` is the symmetric-matrix entry at (i, j), i <= j.
#[derive(PartialEq, PartialOrd)]
struct Entry {
    mat: usize,
    block: usize,
    i: usize,
    j: usize,
    value: f64,
}

pub fn export_sdpa(problem: &SdpProblem) -> String {
    let obj_sign = match problem.sense() {
        Sense::Minimize => 1.0,
        Sense::Maximize => -1.0,
    };
    let npsd = problem.num_blocks();
    let q = problem.num_free();
    let m = problem.num_rows();

    let mut entries: Vec<Entry> = Vec::new();
    let push_expr = |entries: &mut Vec<Entry>, mat: usize, expr: &LinExpr, sign: f64| {
        for e in &expr.mat {
            // Stored coefficient applies to one entry; the symmetric matrix
            // carries half of it on each side off the diagonal.
            let value = if e.row == e.col {
                sign * e.coeff
            } else {
                sign * 0.5 * e.coeff
            };
            if value != 0.0 {
                entries.push(Entry {
                    mat,
                    block: e.block + 1,
                    i: e.col + 1,
                    j: e.row + 1,
                    value,
                });
            }
        }
        for &(v, c) in &expr.free {
            let val = sign * c;
            if val != 0.0 {
                entries.push(Entry {
                    mat,
                    block: npsd + 2 * v + 1,
                    i: 1,
                    j: 1,
                    value: val,
                });
                entries.push(Entry {
                    mat,
                    block: npsd + 2 * v + 2,
                    i: 1,
                    j: 1,
                    value: -val,
                });
            }
        }
    };

    // F0 = -C in minimization normal form.
    push_expr(&mut entries, 0, problem.objective(), -obj_sign);
    for i in 0..m {
        let (row, _) = problem.row(i);
        push_expr(&mut entries, i + 1, row, 1.0);
    }
    entries.sort_by(|a, b| {
        (a.mat, a.block, a.i, a.j)
            .cmp(&(b.mat, b.block, b.i, b.j))
            .then(a.value.partial_cmp(&b.value).unwrap())
    });

    let mut out = String::new();
    out.push_str("\"min <C,X>+c'z over equality rows; this file is its SDPA dual form\n");
    out.push_str("\"free scalar k -> blocks npsd+2k+1 (plus part) and npsd+2k+2 (minus part)\n");
    out.push_str(&format!("{}\n", m));
    out.push_str(&format!("{}\n", npsd + 2 * q));
    let mut sizes: Vec<String> = problem
        .block_orders()
        .iter()
        .map(|n| n.to_string())
        .collect();
    sizes.extend(std::iter::repeat("1".to_string()).take(2 * q));
    out.push_str(&sizes.join(" "));
    out.push('\n');
    let rhs: Vec<String> = (0..m).map(|i| fmt(problem.row(i).1)).collect();
    out.push_str(&rhs.join(" "));
    out.push('\n');
    for e in &entries {
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            e.mat,
            e.block,
            e.i,
            e.j,
            fmt(e.value)
        ));
    }
    out
}

struct Tokens {
    toks: Vec<(usize, String)>,
    pos: usize,
}

impl Tokens {
    fn new(text: &str) -> Self {
        let mut toks = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim_start();
            if trimmed.starts_with('"') || trimmed.starts_with('*') {
                continue;
            }
            let cleaned: String = line
                .chars()
                .map(|c| match c {
                    ',' | '(' | ')' | '{' | '}' => ' ',
                    _ => c,
                })
                .collect();
            for t in cleaned.split_whitespace() {
                toks.push((lineno + 1, t.to_string()));
            }
        }
        Self { toks, pos: 0 }
    }

    fn next(&mut self, what: &str) -> Result<(usize, &str), SdpError> {
        match self.toks.get(self.pos) {
            Some((line, t)) => {
                self.pos += 1;
                Ok((*line, t.as_str()))
            }
            None => Err(SdpError::Parse {
                line: self.toks.last().map(|(l, _)| *l).unwrap_or(0),
                msg: format!("unexpected end of file, expected {}", what),
            }),
        }
    }

    fn next_usize(&mut self, what: &str) -> Result<usize, SdpError> {
        let (line, t) = self.next(what)?;
        t.parse().map_err(|_| SdpError::Parse {
            line,
            msg: format!("expected {} (unsigned integer), found {:?}", what, t),
        })
    }

    fn next_isize(&mut self, what: &str) -> Result<isize, SdpError> {
        let (line, t) = self.next(what)?;
        t.parse().map_err(|_| SdpError::Parse {
            line,
            msg: format!("expected {} (integer), found {:?}", what, t),
        })
    }

    fn next_f64(&mut self, what: &str) -> Result<(usize, f64), SdpError> {
        let (line, t) = self.next(what)?;
        let v: f64 = t.parse().map_err(|_| SdpError::Parse {
            line,
            msg: format!("expected {} (real), found {:?}", what, t),
        })?;
        Ok((line, v))
    }

    /// Discards annotation tokens such as "= mDIM" that some writers put
    /// after the header numbers.  Only non-numeric tokens on the same line
    /// as the last consumed token are dropped.
    fn skip_line_annotations(&mut self) {
        if self.pos == 0 {
            return;
        }
        let line = self.toks[self.pos - 1].0;
        while let Some((l, t)) = self.toks.get(self.pos) {
            if *l != line || t.parse::<f64>().is_ok() {
                break;
            }
            self.pos += 1;
        }
    }

    fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }
}

pub fn import_sdpa(text: &str) -> Result<SdpProblem, SdpError> {
    let mut toks = Tokens::new(text);
    let m = toks.next_usize("constraint count")?;
    toks.skip_line_annotations();
    let nblocks = toks.next_usize("block count")?;
    toks.skip_line_annotations();

    // Negative sizes denote diagonal blocks; expand them to 1x1 blocks.
    // `starts[k]` is the first internal block index of declared block k.
    let mut starts: Vec<usize> = Vec::with_capacity(nblocks);
    let mut declared_sizes: Vec<isize> = Vec::with_capacity(nblocks);
    let mut problem = SdpProblem::new();
    for k in 0..nblocks {
        let sz = toks.next_isize("block size")?;
        starts.push(problem.num_blocks());
        declared_sizes.push(sz);
        if sz > 0 {
            problem.add_block(format!("block{}", k + 1), sz as usize);
        } else if sz < 0 {
            for d in 0..(-sz as usize) {
                problem.add_block(format!("block{}_diag{}", k + 1, d + 1), 1);
            }
        } else {
            return Err(SdpError::Parse {
                line: 0,
                msg: format!("block {} has size 0", k + 1),
            });
        }
    }
    toks.skip_line_annotations();

    let mut rhs = Vec::with_capacity(m);
    for _ in 0..m {
        rhs.push(toks.next_f64("rhs value")?.1);
    }
    toks.skip_line_annotations();

    let mut rows: Vec<LinExpr> = vec![LinExpr::new(); m];
    let mut objective = LinExpr::new();
    let mut seen: std::collections::BTreeSet<(usize, usize, usize, usize)> =
        std::collections::BTreeSet::new();
    while !toks.at_end() {
        let (line, _) = (toks.toks[toks.pos].0, ());
        let mat = toks.next_usize("matrix index")?;
        let blk = toks.next_usize("block index")?;
        let i = toks.next_usize("row index")?;
        let j = toks.next_usize("column index")?;
        let (_, value) = toks.next_f64("entry value")?;
        if mat > m {
            return Err(SdpError::Parse {
                line,
                msg: format!("matrix index {} out of range 0..={}", mat, m),
            });
        }
        if blk == 0 || blk > nblocks {
            return Err(SdpError::Parse {
                line,
                msg: format!("block index {} out of range 1..={}", blk, nblocks),
            });
        }
        let declared = declared_sizes[blk - 1];
        let (internal_block, bi, bj) = if declared > 0 {
            let n = declared as usize;
            if i == 0 || j == 0 || i > n || j > n {
                return Err(SdpError::Parse {
                    line,
                    msg: format!("entry ({},{}) out of range for block of order {}", i, j, n),
                });
            }
            (starts[blk - 1], i - 1, j - 1)
        } else {
            let n = (-declared) as usize;
            if i != j || i == 0 || i > n {
                return Err(SdpError::Parse {
                    line,
                    msg: format!(
                        "diagonal block of size {} admits only entries (d,d), got ({},{})",
                        n, i, j
                    ),
                });
            }
            (starts[blk - 1] + i - 1, 0, 0)
        };
        if !seen.insert((mat, internal_block, bi.min(bj), bi.max(bj))) {
            return Err(SdpError::Parse {
                line,
                msg: format!(
                    "duplicate entry for matrix {} block {} position ({},{})",
                    mat, blk, i, j
                ),
            });
        }
        // Off-diagonal symmetric value v means a functional weight 2v on the
        // stored entry.
        let coeff = if bi == bj { value } else { 2.0 * value };
        let target = if mat == 0 {
            &mut objective
        } else {
            &mut rows[mat - 1]
        };
        target.mat(internal_block, bi.max(bj), bi.min(bj), coeff);
    }

    // F0 = -C.
    for e in &mut objective.mat {
        e.coeff = -e.coeff;
    }
    problem.set_objective(objective, Sense::Minimize)?;
    for (row, r) in rows.into_iter().zip(rhs) {
        problem.add_equality(row, r)?;
    }
    Ok(problem)
}
