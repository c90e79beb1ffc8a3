//! End-to-end runs: oracle gridding, per-degree certificate solves,
//! artifact files on disk, the machine-readable run report, and
//! re-verification of saved certificates against their problem.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contour::{evaluate_grid, marching_squares, polylines_csv};
use crate::oracle::{self, containment_score, GridApprox, OracleError};
use crate::poly::Polynomial;
use crate::problem::{OracleKind, ProblemFile};
use crate::sets::{
    lebesgue_moments_ball, lebesgue_moments_box, AffineScaling, SemialgebraicSet, ShapeHint,
};
use crate::solver_config;
use crate::sos::{self, build_dual_continuous, build_dual_discrete, extract_certificate};
use crate::system::{scale_to_unit_box, ProblemData, TimeMode};
use sdp::SolveStatus;

/// Objective increases between consecutive solved degrees beyond this
/// slack are flagged in the report; the hierarchy should tighten.
pub const MONOTONE_SLACK: f64 = 1e-5;
/// An oracle cell counts as covered when the certificate gives
/// v(center) >= -CONTAINMENT_TOL.
pub const CONTAINMENT_TOL: f64 = 1e-6;
/// Summed PSD block order accepted for a single solve; the largest
/// shipped program (the controlled Henon map at degree 6) stays under it.
pub const PSD_DIM_BUDGET: usize = 2000;
/// Recomputed objectives must match the stored one to this relative tol.
pub const OBJECTIVE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
}

/// Command-line switches that modify a run.
#[derive(Debug, Clone)]
pub struct RunFlags {
    /// Overrides the problem file's degree list when present.
    pub degrees: Option<Vec<(u32, u32)>>,
    /// Write the assembled programs in SDPA sparse format instead of
    /// solving them; skips the oracle entirely.
    pub export_sdpa: bool,
    /// Compute and store the oracle grid, then stop.
    pub oracle_only: bool,
    /// Degree instances solved concurrently.
    pub jobs: usize,
    /// Overrides the problem file's output directory when present.
    pub out: Option<PathBuf>,
}

impl Default for RunFlags {
    fn default() -> Self {
        Self {
            degrees: None,
            export_sdpa: false,
            oracle_only: false,
            jobs: 1,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct MarginSummary {
    pub transport: f64,
    pub domination: f64,
    pub positivity: f64,
}

/// Outcome of one degree instance; solver trouble stays in its row.
#[derive(Debug, Clone, Serialize)]
pub struct DegreeRow {
    pub d_v: u32,
    pub d_w: u32,
    pub status: String,
    pub objective: Option<f64>,
    pub iterations: Option<usize>,
    pub wall_seconds: f64,
    /// Worst sampled |combination - Gram side| over all three identities.
    pub identity_residual: Option<f64>,
    pub margins: Option<MarginSummary>,
    /// Fraction of oracle member cells with v(center) >= -tol.
    pub containment: Option<f64>,
    pub containment_worst: Option<f64>,
    pub error: Option<String>,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub kind: String,
    pub resolutions: Vec<usize>,
    pub member_cells: usize,
    pub volume: f64,
    pub iterations: usize,
    pub horizon: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub package: String,
    pub os: String,
    pub arch: String,
    pub timestamp_unix: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub name: String,
    pub time: String,
    pub discount: f64,
    pub oracle: Option<OracleSummary>,
    pub rows: Vec<DegreeRow>,
    /// Anomalies worth surfacing without failing the run.
    pub flags: Vec<String>,
    pub environment: Environment,
}

/// Ground-truth grid for the problem's oracle configuration.
pub fn compute_oracle(problem: &ProblemFile) -> Result<GridApprox, OracleError> {
    let cfg = &problem.oracle;
    let data = &problem.data;
    match (cfg.kind, data.system.time()) {
        (OracleKind::Contraction, TimeMode::Discrete { .. }) => {
            oracle::grid_mci_discrete(data, &cfg.resolutions, cfg.control_resolution)
        }
        (OracleKind::Contraction, TimeMode::Continuous { .. }) => {
            oracle::grid_mci_continuous(data, &cfg.resolutions, cfg.control_resolution, cfg.dt)
        }
        (OracleKind::Escape, TimeMode::Discrete { .. }) => oracle::sample_escape(
            data.system.dynamics(),
            &data.state_set,
            &cfg.resolutions,
            cfg.horizon,
        ),
        (OracleKind::Escape, TimeMode::Continuous { .. }) => oracle::simulate_escape(
            data.system.dynamics(),
            &data.state_set,
            &cfg.resolutions,
            cfg.horizon as f64 * cfg.dt,
            cfg.dt,
        ),
    }
}

/// Runs the full pipeline for one problem: oracle, degree instances
/// (bounded by `flags.jobs` at a time, reported in list order), artifact
/// files, and `<name>.report.json` in the output directory.
pub fn run(problem: &ProblemFile, flags: &RunFlags) -> Result<RunReport, PipelineError> {
    let degrees = flags
        .degrees
        .clone()
        .unwrap_or_else(|| problem.degrees.clone());
    let out_dir = flags
        .out
        .clone()
        .or_else(|| problem.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&problem.name));
    fs::create_dir_all(&out_dir).map_err(|source| PipelineError::Io {
        path: out_dir.clone(),
        source,
    })?;

    let oracle_pair = if flags.export_sdpa {
        None
    } else {
        let started = Instant::now();
        let grid = compute_oracle(problem)?;
        let wall = started.elapsed().as_secs_f64();
        let base = out_dir.join(format!("{}_oracle", problem.name));
        let mut csv = Vec::new();
        grid.write_csv(&mut csv).expect("writes to memory");
        fs::write(with_ext(&base, "csv"), csv).map_err(|source| PipelineError::Io {
            path: with_ext(&base, "csv"),
            source,
        })?;
        grid.save_mask(&base)?;
        let summary = OracleSummary {
            kind: match problem.oracle.kind {
                OracleKind::Contraction => "contraction".into(),
                OracleKind::Escape => "escape".into(),
            },
            resolutions: grid.resolutions().to_vec(),
            member_cells: grid.member_count(),
            volume: grid.volume_estimate(),
            iterations: grid.meta.iterations,
            horizon: grid.meta.horizon,
            wall_seconds: wall,
        };
        Some((grid, summary))
    };

    let mut rows = Vec::with_capacity(degrees.len());
    if !flags.oracle_only {
        let (scaled, scaling) = scale_to_unit_box(&problem.data);
        let scaled_ref = &scaled;
        let scaling_ref = &scaling;
        let out_ref = out_dir.as_path();
        let oracle_ref = oracle_pair.as_ref().map(|(grid, _)| grid);
        for chunk in degrees.chunks(flags.jobs.max(1)) {
            let chunk_rows: Vec<DegreeRow> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunk
                    .iter()
                    .map(|&deg| {
                        scope.spawn(move || {
                            run_degree(
                                problem,
                                scaled_ref,
                                scaling_ref,
                                deg,
                                oracle_ref,
                                out_ref,
                                flags.export_sdpa,
                            )
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .zip(chunk)
                    .map(|(handle, &deg)| {
                        handle.join().unwrap_or_else(|_| {
                            let mut row = blank_row(deg);
                            row.status = "panicked".into();
                            row.error = Some("degree worker panicked".into());
                            row
                        })
                    })
                    .collect()
            });
            rows.extend(chunk_rows);
        }
    }

    let (time, discount) = match problem.data.system.time() {
        TimeMode::Discrete { alpha } => ("discrete", alpha),
        TimeMode::Continuous { beta } => ("continuous", beta),
    };
    let report = RunReport {
        name: problem.name.clone(),
        time: time.into(),
        discount,
        oracle: oracle_pair.map(|(_, summary)| summary),
        flags: monotonicity_flags(&rows),
        rows,
        environment: Environment {
            package: concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION")).into(),
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            timestamp_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
    };
    let report_path = out_dir.join(format!("{}.report.json", problem.name));
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    fs::write(&report_path, text).map_err(|source| PipelineError::Io {
        path: report_path,
        source,
    })?;
    Ok(report)
}

fn blank_row((d_v, d_w): (u32, u32)) -> DegreeRow {
    DegreeRow {
        d_v,
        d_w,
        status: String::new(),
        objective: None,
        iterations: None,
        wall_seconds: 0.0,
        identity_residual: None,
        margins: None,
        containment: None,
        containment_worst: None,
        error: None,
        artifacts: Vec::new(),
    }
}

fn status_str(status: SolveStatus) -> &'static str {
    match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::MaxIterations => "max_iterations",
        SolveStatus::NumericalFailure => "numerical_failure",
        SolveStatus::InfeasibleDetected => "infeasible_detected",
    }
}

fn run_degree(
    problem: &ProblemFile,
    scaled: &ProblemData,
    scaling: &AffineScaling,
    (d_v, d_w): (u32, u32),
    oracle_grid: Option<&GridApprox>,
    out_dir: &Path,
    export_only: bool,
) -> DegreeRow {
    let started = Instant::now();
    let base = format!("{}_dv{d_v}_dw{d_w}", problem.name);
    let mut row = blank_row((d_v, d_w));
    let finish = |mut row: DegreeRow, started: Instant| -> DegreeRow {
        row.wall_seconds = started.elapsed().as_secs_f64();
        row
    };

    let built = match scaled.system.time() {
        TimeMode::Discrete { .. } => build_dual_discrete(scaled, d_v, d_w),
        TimeMode::Continuous { .. } => build_dual_continuous(scaled, d_v, d_w),
    };
    let dual = match built {
        Ok(dual) => dual,
        Err(e) => {
            row.status = "build_failed".into();
            row.error = Some(e.to_string());
            return finish(row, started);
        }
    };

    // Artifact writes never abort the degree; the row keeps the message.
    let mut save = |row: &mut DegreeRow, name: String, text: &str| {
        let path = out_dir.join(&name);
        match fs::write(&path, text) {
            Ok(()) => row.artifacts.push(name),
            Err(e) => row.error = Some(format!("{}: {e}", path.display())),
        }
    };

    if export_only {
        let text = sdp::export_sdpa(&dual.problem);
        save(&mut row, format!("{base}.dat-s"), &text);
        row.status = if row.error.is_none() {
            "exported".into()
        } else {
            "io_failed".into()
        };
        return finish(row, started);
    }

    let mut config = solver_config();
    config.max_total_psd_dim = PSD_DIM_BUDGET;
    let sol = match sdp::solve(&dual.problem, &config) {
        Ok(sol) => sol,
        Err(e) => {
            row.status = "solver_failed".into();
            row.error = Some(e.to_string());
            return finish(row, started);
        }
    };
    row.status = status_str(sol.status).into();
    row.iterations = Some(sol.iterations);

    let cert = match extract_certificate(&dual, &sol, scaling) {
        Ok(cert) => cert,
        Err(e) => {
            if sol.converged() {
                row.status = "certificate_rejected".into();
            }
            row.error = Some(e.to_string());
            return finish(row, started);
        }
    };
    row.objective = Some(cert.objective);
    row.identity_residual = Some(
        dual.identities()
            .iter()
            .map(|id| dual.worst_residual(id, &sol))
            .fold(0.0, f64::max),
    );
    row.margins = Some(MarginSummary {
        transport: cert.margins.transport,
        domination: cert.margins.domination,
        positivity: cert.margins.positivity,
    });
    if let Some(grid) = oracle_grid {
        let score = containment_score(&cert, grid, CONTAINMENT_TOL);
        row.containment = Some(score.fraction);
        row.containment_worst = Some(score.worst);
    }

    let mut cert_text = serde_json::to_string_pretty(&cert.to_json()).expect("json serializes");
    cert_text.push('\n');
    save(&mut row, format!("{base}.cert.json"), &cert_text);
    if let Some(bounds) = problem.data.state_set.bounding_box() {
        let nodes = problem.oracle.resolutions.clone();
        save(
            &mut row,
            format!("{base}_grid.csv"),
            &evaluate_grid(&cert, &bounds, &nodes),
        );
        if bounds.len() == 2 {
            let v_lines = marching_squares(&cert.v, &bounds, &nodes, 0.0);
            save(&mut row, format!("{base}_contour_v.csv"), &polylines_csv(&v_lines));
            let w_lines = marching_squares(&cert.w, &bounds, &nodes, 1.0);
            save(&mut row, format!("{base}_contour_w.csv"), &polylines_csv(&w_lines));
        }
    }
    finish(row, started)
}

/// One message per adjacent solved pair whose objective rose by more than
/// the slack; the hierarchy is monotone in exact arithmetic, so a rise
/// points at solver trouble without invalidating either certificate.
fn monotonicity_flags(rows: &[DegreeRow]) -> Vec<String> {
    let solved: Vec<(&DegreeRow, f64)> = rows
        .iter()
        .filter_map(|row| row.objective.map(|obj| (row, obj)))
        .collect();
    solved
        .windows(2)
        .filter(|pair| pair[1].1 > pair[0].1 + MONOTONE_SLACK)
        .map(|pair| {
            format!(
                "objective rose from {:.12} at degrees ({}, {}) to {:.12} at ({}, {})",
                pair[0].1, pair[0].0.d_v, pair[0].0.d_w, pair[1].1, pair[1].0.d_v, pair[1].0.d_w,
            )
        })
        .collect()
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut path = base.to_path_buf();
    path.set_extension(ext);
    path
}

/// One verification step of `check`; `passed` carries the verdict and
/// `detail` the numbers behind it.
#[derive(Debug, Clone, Serialize)]
pub struct CheckLine {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CertFile {
    v: Vec<CertTerm>,
    w: Vec<CertTerm>,
    objective: f64,
    degrees: (u32, u32),
    discount: Discount,
    margins: CertMargins,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CertTerm {
    coeff: f64,
    exps: Vec<u32>,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum Discount {
    Alpha(f64),
    Beta(f64),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CertMargins {
    transport: f64,
    domination: f64,
    positivity: f64,
}

fn check_axis_nodes(dim: usize) -> usize {
    match dim {
        0 | 1 => 201,
        2 => 61,
        3 => 21,
        _ => 9,
    }
}

fn check_control_nodes(dim: usize) -> usize {
    match dim {
        0 | 1 => 21,
        2 => 9,
        _ => 5,
    }
}

/// Inclusive node grid over the set's bounding box, filtered to the set.
fn set_grid(set: &SemialgebraicSet, per_axis: usize) -> Vec<Vec<f64>> {
    let Some(bbox) = set.bounding_box() else {
        return Vec::new();
    };
    let mut points = vec![Vec::new()];
    for &(lo, hi) in &bbox {
        points = points
            .iter()
            .flat_map(|p| {
                (0..per_axis).map(move |i| {
                    let mut q = p.clone();
                    q.push(lo + (hi - lo) * i as f64 / (per_axis - 1) as f64);
                    q
                })
            })
            .collect();
    }
    points.retain(|p| set.contains(p));
    points
}

/// Re-verifies a saved certificate against its problem from scratch:
/// shape, discount, the three inequalities on fresh grids, and the
/// objective against recomputed volume moments.  Nothing from the solve
/// is trusted beyond the polynomials themselves.
pub fn check_certificate(
    cert_path: &Path,
    problem: &ProblemFile,
) -> Result<Vec<CheckLine>, PipelineError> {
    let text = fs::read_to_string(cert_path).map_err(|source| PipelineError::Io {
        path: cert_path.to_path_buf(),
        source,
    })?;
    let cert: CertFile =
        serde_json::from_str(&text).map_err(|e| PipelineError::Malformed {
            path: cert_path.to_path_buf(),
            message: e.to_string(),
        })?;

    let n = problem.data.system.n_states();
    let mut lines = Vec::new();
    if cert
        .v
        .iter()
        .chain(&cert.w)
        .any(|term| term.exps.len() != n)
    {
        lines.push(CheckLine {
            name: "dimensions",
            passed: false,
            detail: format!("certificate terms must have {n} exponents"),
        });
        return Ok(lines);
    }
    lines.push(CheckLine {
        name: "dimensions",
        passed: true,
        detail: format!("v and w are polynomials in {n} variables"),
    });

    let v = Polynomial::from_terms(n, cert.v.iter().map(|t| (t.exps.clone(), t.coeff)));
    let w = Polynomial::from_terms(n, cert.w.iter().map(|t| (t.exps.clone(), t.coeff)));
    let (d_v, d_w) = cert.degrees;
    lines.push(CheckLine {
        name: "degrees",
        passed: v.degree() <= d_v && w.degree() <= d_w,
        detail: format!(
            "deg v = {} (claimed {d_v}), deg w = {} (claimed {d_w})",
            v.degree(),
            w.degree()
        ),
    });

    let time = problem.data.system.time();
    let (discount_ok, discount_detail) = match (&cert.discount, time) {
        (Discount::Alpha(a), TimeMode::Discrete { alpha }) => {
            (*a == alpha, format!("alpha = {a} (problem has {alpha})"))
        }
        (Discount::Beta(b), TimeMode::Continuous { beta }) => {
            (*b == beta, format!("beta = {b} (problem has {beta})"))
        }
        (Discount::Alpha(a), TimeMode::Continuous { .. }) => {
            (false, format!("certificate is discrete (alpha = {a}) but the problem is continuous"))
        }
        (Discount::Beta(b), TimeMode::Discrete { .. }) => {
            (false, format!("certificate is continuous (beta = {b}) but the problem is discrete"))
        }
    };
    lines.push(CheckLine {
        name: "discount",
        passed: discount_ok,
        detail: discount_detail,
    });

    let state_grid = set_grid(&problem.data.state_set, check_axis_nodes(n));
    let control_grid = problem
        .data
        .control_set
        .as_ref()
        .map(|u| set_grid(u, check_control_nodes(u.dim())));
    let joint: Vec<Vec<f64>> = match &control_grid {
        Some(controls) => state_grid
            .iter()
            .flat_map(|x| {
                controls.iter().map(move |u| {
                    let mut xu = x.clone();
                    xu.extend_from_slice(u);
                    xu
                })
            })
            .collect(),
        None => state_grid.clone(),
    };

    let transport_min = match time {
        TimeMode::Discrete { alpha } => joint
            .iter()
            .map(|xu| {
                let fx = problem.data.system.dynamics().evaluate(xu);
                v.evaluate(&xu[..n]) - alpha * v.evaluate(&fx)
            })
            .fold(f64::INFINITY, f64::min),
        TimeMode::Continuous { beta } => {
            let flow = v.gradient_dot(problem.data.system.dynamics());
            joint
                .iter()
                .map(|xu| beta * v.evaluate(&xu[..n]) - flow.evaluate(xu))
                .fold(f64::INFINITY, f64::min)
        }
    };
    lines.push(CheckLine {
        name: "transport",
        passed: transport_min >= -sos::MARGIN_TOL,
        detail: format!("min over {} points = {transport_min:.3e}", joint.len()),
    });

    let domination_min = state_grid
        .iter()
        .map(|x| w.evaluate(x) - v.evaluate(x) - 1.0)
        .fold(f64::INFINITY, f64::min);
    lines.push(CheckLine {
        name: "domination",
        passed: domination_min >= -sos::MARGIN_TOL,
        detail: format!(
            "min of w - v - 1 over {} points = {domination_min:.3e}",
            state_grid.len()
        ),
    });

    let positivity_min = state_grid
        .iter()
        .map(|x| w.evaluate(x))
        .fold(f64::INFINITY, f64::min);
    lines.push(CheckLine {
        name: "positivity",
        passed: positivity_min >= -sos::MARGIN_TOL,
        detail: format!(
            "min of w over {} points = {positivity_min:.3e}",
            state_grid.len()
        ),
    });

    let moments = match problem.data.state_set.shape() {
        ShapeHint::Box { bounds } => Some(lebesgue_moments_box(bounds, w.degree())),
        ShapeHint::Ball { center, radius } => {
            Some(lebesgue_moments_ball(center, *radius, w.degree()))
        }
        ShapeHint::Generic => None,
    };
    match moments {
        Some(moments) => {
            let recomputed: f64 = w
                .terms()
                .map(|(m, c)| c * moments.get(m).expect("moments cover deg w"))
                .sum();
            let err = (recomputed - cert.objective).abs();
            let tol = OBJECTIVE_TOL * (1.0 + cert.objective.abs());
            lines.push(CheckLine {
                name: "objective",
                passed: err <= tol,
                detail: format!(
                    "stored {} vs recomputed volume integral {recomputed} (|diff| = {err:.3e})",
                    cert.objective
                ),
            });
        }
        None => lines.push(CheckLine {
            name: "objective",
            passed: true,
            detail: "skipped: the state set has no closed-form volume moments".into(),
        }),
    }

    let worst_margin = cert
        .margins
        .transport
        .min(cert.margins.domination)
        .min(cert.margins.positivity);
    lines.push(CheckLine {
        name: "margins",
        passed: worst_margin >= -sos::MARGIN_TOL,
        detail: format!("worst stored margin = {worst_margin:.3e}"),
    });
    Ok(lines)
}
