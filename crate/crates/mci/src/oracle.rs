//! Brute-force ground truth, independent of the convex machinery: grid
//! contraction for discrete maps, escape-time classification for
//! uncontrolled iterations, an RK4 one-step reduction for vector fields,
//! and volume / containment scoring used to audit certificates.
//!
//! Everything here is an approximation computed from cell centers and
//! containing-cell lookups.  It is never certified truth; the scoring
//! entry points take explicit tolerances for exactly that reason.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::poly::PolynomialVector;
use crate::sets::SemialgebraicSet;
use crate::sos::MciCertificate;
use crate::system::ProblemData;

/// Minimum cells per axis; anything coarser says nothing useful.
const MIN_RESOLUTION: usize = 8;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{set} set has no bounding box to grid over")]
    NoBoundingBox { set: &'static str },
    #[error("axis {axis} resolution {got} is below the minimum of {MIN_RESOLUTION}")]
    ResolutionTooCoarse { axis: usize, got: usize },
    #[error("mask holds {got} cells but the sidecar declares {want}")]
    MaskLength { got: usize, want: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Sidecar(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridMeta {
    /// Contraction sweeps that changed the mask before the fixpoint.
    pub iterations: usize,
    /// Escape-time horizon, 0 for fixpoint-based grids.
    pub horizon: usize,
    /// Size of the control grid, 0 when the map is uncontrolled.
    pub control_points: usize,
}

/// A gridded membership approximation over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct GridApprox {
    resolutions: Vec<usize>,
    bounds: Vec<(f64, f64)>,
    mask: Vec<bool>,
    pub meta: GridMeta,
}

#[derive(Serialize, Deserialize)]
struct MaskSidecar {
    resolutions: Vec<usize>,
    bounds: Vec<(f64, f64)>,
    meta: GridMeta,
}

impl GridApprox {
    pub fn dim(&self) -> usize {
        self.resolutions.len()
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.resolutions
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn num_cells(&self) -> usize {
        self.mask.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn member_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn member_fraction(&self) -> f64 {
        self.member_count() as f64 / self.mask.len() as f64
    }

    pub fn cell_center(&self, mut idx: usize) -> Vec<f64> {
        let mut center = vec![0.0; self.dim()];
        for i in (0..self.dim()).rev() {
            let res = self.resolutions[i];
            let j = idx % res;
            idx /= res;
            let (lo, hi) = self.bounds[i];
            center[i] = lo + (j as f64 + 0.5) * (hi - lo) / res as f64;
        }
        center
    }

    /// Row-major index of the cell containing the point, None outside the
    /// box.  Points exactly on the upper face belong to the last cell.
    pub fn index_of(&self, point: &[f64]) -> Option<usize> {
        assert_eq!(point.len(), self.dim(), "point dimension mismatch");
        let mut idx = 0usize;
        for i in 0..self.dim() {
            let (lo, hi) = self.bounds[i];
            let x = point[i];
            if x < lo || x > hi {
                return None;
            }
            let res = self.resolutions[i];
            let j = (((x - lo) / (hi - lo) * res as f64) as usize).min(res - 1);
            idx = idx * res + j;
        }
        Some(idx)
    }

    /// Membership of the cell containing the point; false outside the box.
    pub fn contains_point(&self, point: &[f64]) -> bool {
        self.index_of(point).is_some_and(|i| self.mask[i])
    }

    /// Member-count volume: cells are weighted by their box volume, so a
    /// premasked ball reports the ball's volume, not its bounding box's.
    pub fn volume_estimate(&self) -> f64 {
        let cell: f64 = self
            .bounds
            .iter()
            .zip(&self.resolutions)
            .map(|(&(lo, hi), &res)| (hi - lo) / res as f64)
            .product();
        self.member_count() as f64 * cell
    }

    /// One row per cell: center coordinates then 0/1 membership.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let header: Vec<String> = (1..=self.dim()).map(|i| format!("x{i}")).collect();
        writeln!(out, "{},member", header.join(","))?;
        for (idx, &m) in self.mask.iter().enumerate() {
            let center = self.cell_center(idx);
            let coords: Vec<String> = center.iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(out, "{},{}", coords.join(","), u8::from(m))?;
        }
        Ok(())
    }

    /// Writes `<base>.mask` (bit-packed, row-major, LSB first) and
    /// `<base>.json` describing its shape.
    pub fn save_mask(&self, base: &Path) -> Result<(), OracleError> {
        let mut bytes = vec![0u8; self.mask.len().div_ceil(8)];
        for (i, &m) in self.mask.iter().enumerate() {
            if m {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        fs::write(with_ext(base, "mask"), &bytes)?;
        let sidecar = MaskSidecar {
            resolutions: self.resolutions.clone(),
            bounds: self.bounds.clone(),
            meta: self.meta,
        };
        fs::write(with_ext(base, "json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load_mask(base: &Path) -> Result<Self, OracleError> {
        let sidecar: MaskSidecar =
            serde_json::from_slice(&fs::read(with_ext(base, "json"))?)?;
        let bytes = fs::read(with_ext(base, "mask"))?;
        let want: usize = sidecar.resolutions.iter().product();
        if bytes.len() != want.div_ceil(8) {
            return Err(OracleError::MaskLength {
                got: bytes.len() * 8,
                want,
            });
        }
        let mask: Vec<bool> = (0..want).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(GridApprox {
            resolutions: sidecar.resolutions,
            bounds: sidecar.bounds,
            mask,
            meta: sidecar.meta,
        })
    }
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut p = base.to_path_buf();
    p.set_extension(ext);
    p
}

/// How well a certificate covers the gridded truth: the fraction of
/// member cells whose centers satisfy v >= -tol, and the worst v seen.
#[derive(Debug, Clone, Copy)]
pub struct ContainmentReport {
    pub fraction: f64,
    pub worst: f64,
}

pub fn containment_score(cert: &MciCertificate, grid: &GridApprox, tol: f64) -> ContainmentReport {
    assert_eq!(cert.v.dim(), grid.dim(), "certificate dimension mismatch");
    let (covered, members, worst) = grid
        .mask
        .par_iter()
        .enumerate()
        .filter(|(_, &m)| m)
        .map(|(idx, _)| {
            let value = cert.v.evaluate(&grid.cell_center(idx));
            (usize::from(value >= -tol), 1usize, value)
        })
        .reduce(
            || (0, 0, f64::INFINITY),
            |a, b| (a.0 + b.0, a.1 + b.1, a.2.min(b.2)),
        );
    ContainmentReport {
        fraction: if members == 0 {
            1.0
        } else {
            covered as f64 / members as f64
        },
        worst,
    }
}

/// True iff the whole orbit of `x0` under `map` stays in `set` for
/// `horizon` steps, the point itself included.
pub fn orbit_stays(
    map: &PolynomialVector,
    x0: &[f64],
    set: &SemialgebraicSet,
    horizon: usize,
) -> bool {
    assert!(horizon >= 1, "escape test needs at least one step");
    if !set.contains(x0) {
        return false;
    }
    let mut x = x0.to_vec();
    for _ in 0..horizon {
        x = map.evaluate(&x);
        if !set.contains(&x) {
            return false;
        }
    }
    true
}

/// Grid classification by escape time: a cell is a member iff its center
/// survives `horizon` iterations of the (uncontrolled) map inside the set.
pub fn sample_escape(
    map: &PolynomialVector,
    set: &SemialgebraicSet,
    resolutions: &[usize],
    horizon: usize,
) -> Result<GridApprox, OracleError> {
    assert_eq!(map.dim(), set.dim(), "map must be uncontrolled");
    assert_eq!(map.len(), set.dim(), "map must preserve the state space");
    let skeleton = grid_skeleton(set, resolutions)?;
    let mask: Vec<bool> = (0..skeleton.mask.len())
        .into_par_iter()
        .map(|idx| orbit_stays(map, &skeleton.cell_center(idx), set, horizon))
        .collect();
    Ok(GridApprox {
        mask,
        meta: GridMeta {
            iterations: 0,
            horizon,
            control_points: 0,
        },
        ..skeleton
    })
}

/// Fixpoint of the grid contraction for a discrete-time system: starting
/// from the in-set cells, repeatedly drop every cell from which no
/// control-grid point maps the center into a surviving cell.
pub fn grid_mci_discrete(
    data: &ProblemData,
    resolutions: &[usize],
    control_resolution: usize,
) -> Result<GridApprox, OracleError> {
    assert!(
        data.system.time().is_discrete(),
        "discrete oracle needs a discrete-time system"
    );
    let f = data.system.dynamics().clone();
    let step = move |xu: &[f64]| f.evaluate(xu);
    grid_contraction(data, resolutions, control_resolution, step)
}

/// Continuous-time variant: contracts the RK4 one-step map with the
/// control held constant over each step of length `dt`.
pub fn grid_mci_continuous(
    data: &ProblemData,
    resolutions: &[usize],
    control_resolution: usize,
    dt: f64,
) -> Result<GridApprox, OracleError> {
    assert!(
        !data.system.time().is_discrete(),
        "continuous oracle needs a continuous-time system"
    );
    assert!(dt > 0.0, "step size must be positive");
    let f = data.system.dynamics().clone();
    let n = data.system.n_states();
    let step = move |xu: &[f64]| rk4_step(&f, n, xu, dt);
    grid_contraction(data, resolutions, control_resolution, step)
}

/// Largest fraction of the narrowest box extent an adaptive integration
/// substep may travel; keeps stiff fields resolved near the boundary
/// without grinding through slow regions at the same rate.
const SIM_REACH_FRACTION: f64 = 0.01;

/// Escape-time classification for an uncontrolled vector field: a cell is
/// a member iff the trajectory from its center stays in `set` for
/// `total_time` units.  Integration is RK4 with the step length capped by
/// `max_step` and by the local speed, and every substep endpoint is
/// checked, so fast excursions cannot tunnel through the complement.
pub fn simulate_escape(
    f: &PolynomialVector,
    set: &SemialgebraicSet,
    resolutions: &[usize],
    total_time: f64,
    max_step: f64,
) -> Result<GridApprox, OracleError> {
    assert_eq!(f.dim(), set.dim(), "field must be uncontrolled");
    assert_eq!(f.len(), set.dim(), "field must preserve the state space");
    assert!(
        total_time > 0.0 && max_step > 0.0,
        "time horizon and step cap must be positive"
    );
    let skeleton = grid_skeleton(set, resolutions)?;
    let reach = SIM_REACH_FRACTION
        * skeleton
            .bounds
            .iter()
            .map(|&(lo, hi)| hi - lo)
            .fold(f64::INFINITY, f64::min);
    let n = set.dim();
    let mask: Vec<bool> = (0..skeleton.mask.len())
        .into_par_iter()
        .map(|idx| {
            let mut x = skeleton.cell_center(idx);
            if !set.contains(&x) {
                return false;
            }
            let mut t = 0.0;
            while t < total_time {
                let speed = f.evaluate(&x).iter().map(|v| v * v).sum::<f64>().sqrt();
                let h = max_step.min(reach / (speed + 1e-12)).min(total_time - t);
                x = rk4_step(f, n, &x, h);
                t += h;
                if !set.contains(&x) {
                    return false;
                }
            }
            true
        })
        .collect();
    Ok(GridApprox {
        mask,
        meta: GridMeta {
            iterations: 0,
            horizon: (total_time / max_step).round() as usize,
            control_points: 0,
        },
        ..skeleton
    })
}

fn grid_contraction<F>(
    data: &ProblemData,
    resolutions: &[usize],
    control_resolution: usize,
    step: F,
) -> Result<GridApprox, OracleError>
where
    F: Fn(&[f64]) -> Vec<f64> + Sync,
{
    let n = data.system.n_states();
    let m = data.system.n_controls();
    let skeleton = grid_skeleton(&data.state_set, resolutions)?;
    let controls = if m == 0 {
        vec![Vec::new()]
    } else {
        let u = data
            .control_set
            .as_ref()
            .expect("control set validated upstream");
        let bounds = u
            .bounding_box()
            .or_else(|| ball_box(u))
            .ok_or(OracleError::NoBoundingBox { set: "control" })?;
        control_grid(&bounds, control_resolution)
    };

    let mut mask = skeleton.mask.clone();
    let mut iterations = 0usize;
    loop {
        // Synchronous sweep against the previous mask, so the result is a
        // subset of it and independent of the parallel schedule.
        let next: Vec<bool> = mask
            .par_iter()
            .enumerate()
            .map(|(idx, &alive)| {
                if !alive {
                    return false;
                }
                let center = skeleton.cell_center(idx);
                controls.iter().any(|u| {
                    let mut xu = Vec::with_capacity(n + u.len());
                    xu.extend_from_slice(&center);
                    xu.extend_from_slice(u);
                    skeleton
                        .index_of(&step(&xu)[..n])
                        .is_some_and(|j| mask[j])
                })
            })
            .collect();
        if next == mask {
            break;
        }
        mask = next;
        iterations += 1;
        assert!(
            iterations <= skeleton.mask.len(),
            "contraction must terminate within one sweep per cell"
        );
    }

    Ok(GridApprox {
        mask,
        meta: GridMeta {
            iterations,
            horizon: 0,
            control_points: controls.len(),
        },
        ..skeleton
    })
}

/// Bounds, resolutions, and the in-set premask, before any dynamics.
fn grid_skeleton(
    set: &SemialgebraicSet,
    resolutions: &[usize],
) -> Result<GridApprox, OracleError> {
    assert_eq!(resolutions.len(), set.dim(), "one resolution per axis");
    let bounds = set
        .bounding_box()
        .or_else(|| ball_box(set))
        .ok_or(OracleError::NoBoundingBox { set: "state" })?;
    for (axis, &res) in resolutions.iter().enumerate() {
        if res < MIN_RESOLUTION {
            return Err(OracleError::ResolutionTooCoarse { axis, got: res });
        }
    }
    let skeleton = GridApprox {
        resolutions: resolutions.to_vec(),
        bounds,
        mask: Vec::new(),
        meta: GridMeta {
            iterations: 0,
            horizon: 0,
            control_points: 0,
        },
    };
    let cells: usize = resolutions.iter().product();
    let mask: Vec<bool> = (0..cells)
        .into_par_iter()
        .map(|idx| set.contains(&skeleton.cell_center(idx)))
        .collect();
    Ok(GridApprox { mask, ..skeleton })
}

fn ball_box(set: &SemialgebraicSet) -> Option<Vec<(f64, f64)>> {
    let (center, radius) = set.assumption_ball()?;
    Some(center.iter().map(|c| (c - radius, c + radius)).collect())
}

fn control_grid(bounds: &[(f64, f64)], per_axis: usize) -> Vec<Vec<f64>> {
    assert!(per_axis >= 1, "control grid needs at least one point");
    let axes: Vec<Vec<f64>> = bounds
        .iter()
        .map(|&(lo, hi)| {
            if per_axis == 1 {
                vec![0.5 * (lo + hi)]
            } else {
                (0..per_axis)
                    .map(|i| lo + (hi - lo) * i as f64 / (per_axis - 1) as f64)
                    .collect()
            }
        })
        .collect();
    let mut points = vec![Vec::new()];
    for axis in &axes {
        points = points
            .iter()
            .flat_map(|p| {
                axis.iter().map(move |&u| {
                    let mut q = p.clone();
                    q.push(u);
                    q
                })
            })
            .collect();
    }
    points
}

/// Classic fourth-order step for x' = f(x, u) with u frozen; `xu` packs
/// the state in the first `n` slots and the control after it.
fn rk4_step(f: &PolynomialVector, n: usize, xu: &[f64], dt: f64) -> Vec<f64> {
    let eval_at = |x: &[f64]| -> Vec<f64> {
        let mut packed = x.to_vec();
        packed.extend_from_slice(&xu[n..]);
        f.evaluate(&packed)
    };
    let x0 = &xu[..n];
    let k1 = eval_at(x0);
    let shifted = |k: &[f64], h: f64| -> Vec<f64> {
        x0.iter().zip(k).map(|(x, ki)| x + h * ki).collect()
    };
    let k2 = eval_at(&shifted(&k1, 0.5 * dt));
    let k3 = eval_at(&shifted(&k2, 0.5 * dt));
    let k4 = eval_at(&shifted(&k3, dt));
    (0..n)
        .map(|i| x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}
