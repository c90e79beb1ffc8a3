//! Plot-ready certificate output: dense node-grid evaluation as CSV and
//! marching-squares level sets as polylines.  No plotting happens here;
//! figures are rendered externally from these files.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::poly::Polynomial;
use crate::sos::MciCertificate;

/// CSV of v, w, and the membership flag {v >= 0} over the inclusive node
/// grid spanned by `bounds` with `resolutions[i]` nodes per axis.  Rows are
/// row-major with the last axis fastest; reals carry 17 significant digits
/// so re-parsing reproduces every value bit-exactly.
pub fn evaluate_grid(
    cert: &MciCertificate,
    bounds: &[(f64, f64)],
    resolutions: &[usize],
) -> String {
    let n = bounds.len();
    assert_eq!(resolutions.len(), n, "one node count per axis");
    assert_eq!(cert.v.dim(), n, "certificate dimension mismatch");
    assert!(
        resolutions.iter().all(|&r| r >= 2),
        "need both endpoints on every axis"
    );
    let mut csv = String::new();
    for i in 1..=n {
        write!(csv, "x{i},").unwrap();
    }
    csv.push_str("v,w,member\n");
    let total: usize = resolutions.iter().product();
    let mut point = vec![0.0; n];
    for row in 0..total {
        let mut idx = row;
        for i in (0..n).rev() {
            let r = resolutions[i];
            let j = idx % r;
            idx /= r;
            let (lo, hi) = bounds[i];
            point[i] = lo + (hi - lo) * j as f64 / (r - 1) as f64;
        }
        let v = cert.v.evaluate(&point);
        let w = cert.w.evaluate(&point);
        for &c in &point {
            write!(csv, "{c:.17e},").unwrap();
        }
        writeln!(csv, "{v:.17e},{w:.17e},{}", u8::from(v >= 0.0)).unwrap();
    }
    csv
}

/// A planar contour component; closed components repeat their first vertex
/// at the end.
pub type Polyline = Vec<(f64, f64)>;

/// Level-set polylines of a bivariate polynomial over the node grid, by
/// marching squares with linear edge interpolation.  Saddle cells are
/// split by the sign of the cell-center average.  Crossing points on an
/// edge shared by two cells are computed identically in both, so chains
/// meet bit-exactly and closed contours come back as closed polylines.
pub fn marching_squares(
    p: &Polynomial,
    bounds: &[(f64, f64)],
    resolutions: &[usize],
    level: f64,
) -> Vec<Polyline> {
    assert_eq!(p.dim(), 2, "marching squares is planar");
    assert_eq!(bounds.len(), 2);
    assert_eq!(resolutions.len(), 2);
    let (nx, ny) = (resolutions[0], resolutions[1]);
    assert!(nx >= 2 && ny >= 2, "need both endpoints on every axis");
    let node = |(lo, hi): (f64, f64), r: usize, j: usize| lo + (hi - lo) * j as f64 / (r - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|i| node(bounds[0], nx, i)).collect();
    let ys: Vec<f64> = (0..ny).map(|j| node(bounds[1], ny, j)).collect();
    let mut vals = vec![0.0; nx * ny];
    for i in 0..nx {
        for j in 0..ny {
            vals[i * ny + j] = p.evaluate(&[xs[i], ys[j]]) - level;
        }
    }

    // Crossing point on the edge from node (i0, j0) to node (i1, j1),
    // always interpolated in the +x or +y direction so that the two cells
    // sharing the edge produce the same bits.
    let cross = |i0: usize, j0: usize, i1: usize, j1: usize| -> (f64, f64) {
        let va = vals[i0 * ny + j0];
        let vb = vals[i1 * ny + j1];
        let t = va / (va - vb);
        (
            xs[i0] + t * (xs[i1] - xs[i0]),
            ys[j0] + t * (ys[j1] - ys[j0]),
        )
    };

    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            let inside = |v: f64| v >= 0.0;
            let a = inside(vals[i * ny + j]);
            let b = inside(vals[(i + 1) * ny + j]);
            let c = inside(vals[(i + 1) * ny + j + 1]);
            let d = inside(vals[i * ny + j + 1]);
            let case = usize::from(a) | usize::from(b) << 1 | usize::from(c) << 2 | usize::from(d) << 3;
            if case == 0 || case == 15 {
                continue;
            }
            let bottom = || cross(i, j, i + 1, j);
            let top = || cross(i, j + 1, i + 1, j + 1);
            let left = || cross(i, j, i, j + 1);
            let right = || cross(i + 1, j, i + 1, j + 1);
            match case {
                1 | 14 => segments.push((left(), bottom())),
                2 | 13 => segments.push((bottom(), right())),
                3 | 12 => segments.push((left(), right())),
                4 | 11 => segments.push((right(), top())),
                6 | 9 => segments.push((bottom(), top())),
                7 | 8 => segments.push((left(), top())),
                5 | 10 => {
                    let center = (vals[i * ny + j]
                        + vals[(i + 1) * ny + j]
                        + vals[(i + 1) * ny + j + 1]
                        + vals[i * ny + j + 1])
                        / 4.0;
                    // A saddle's inside corners join through the middle
                    // exactly when the center is inside; the two cases
                    // then pair the four crossed edges oppositely.
                    if inside(center) == (case == 5) {
                        segments.push((left(), top()));
                        segments.push((bottom(), right()));
                    } else {
                        segments.push((left(), bottom()));
                        segments.push((right(), top()));
                    }
                }
                _ => unreachable!("cases 0 and 15 are skipped"),
            }
        }
    }
    chain_segments(segments)
}

/// CSV rows `polyline,x1,x2`, one row per vertex, with components numbered
/// in emission order.
pub fn polylines_csv(polylines: &[Polyline]) -> String {
    let mut csv = String::from("polyline,x1,x2\n");
    for (id, line) in polylines.iter().enumerate() {
        for &(x, y) in line {
            writeln!(csv, "{id},{x:.17e},{y:.17e}").unwrap();
        }
    }
    csv
}

type PointKey = (u64, u64);

fn point_key(p: (f64, f64)) -> PointKey {
    (p.0.to_bits(), p.1.to_bits())
}

/// Joins segments that share endpoints bit-exactly into polylines.  Open
/// chains are walked from their loose ends first, then the remaining
/// closed loops; both start points and traversal are ordered, so the
/// output is deterministic for a given segment list.
fn chain_segments(segments: Vec<((f64, f64), (f64, f64))>) -> Vec<Polyline> {
    let mut incident: BTreeMap<PointKey, Vec<usize>> = BTreeMap::new();
    for (idx, &(p, q)) in segments.iter().enumerate() {
        incident.entry(point_key(p)).or_default().push(idx);
        incident.entry(point_key(q)).or_default().push(idx);
    }
    let mut used = vec![false; segments.len()];
    let mut polylines = Vec::new();

    let walk = |start: PointKey, used: &mut Vec<bool>| -> Polyline {
        let mut line = Vec::new();
        let mut at = start;
        loop {
            let Some(&seg) = incident[&at].iter().find(|&&s| !used[s]) else {
                break;
            };
            used[seg] = true;
            let (p, q) = segments[seg];
            let (here, next) = if point_key(p) == at { (p, q) } else { (q, p) };
            if line.is_empty() {
                line.push(here);
            }
            line.push(next);
            at = point_key(next);
        }
        line
    };

    // Two passes: odd remaining degree marks the end of an open chain.
    for pass in 0..2 {
        let keys: Vec<PointKey> = incident.keys().copied().collect();
        for key in keys {
            loop {
                let remaining = incident[&key].iter().filter(|&&s| !used[s]).count();
                let want = if pass == 0 {
                    remaining % 2 == 1
                } else {
                    remaining > 0
                };
                if !want {
                    break;
                }
                let line = walk(key, &mut used);
                if line.len() >= 2 {
                    polylines.push(line);
                }
            }
        }
    }
    polylines
}
