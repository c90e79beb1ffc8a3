//! Problem files: JSON descriptions of a polynomial control system, its
//! constraint sets, the certificate degree sweep, and oracle settings.
//! Parsing applies defaults and validates everything the downstream
//! builders assume, so a loaded problem either runs or fails here with a
//! field-level message.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::poly::{Monomial, Polynomial, PolynomialVector};
use crate::sets::{make_ball, make_box, SemialgebraicSet};
use crate::system::{ControlSystem, ProblemData, TimeMode};

pub const SCHEMA_VERSION: u32 = 1;

const DEFAULT_ALPHA: f64 = 0.9;
const DEFAULT_BETA: f64 = 1.0;
const DEFAULT_RESOLUTION: usize = 200;
const DEFAULT_HORIZON: usize = 100;
const DEFAULT_DT: f64 = 0.01;
const DEFAULT_CONTROL_RESOLUTION: usize = 9;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path} is not a valid problem file: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ProblemError {
    ProblemError::Invalid {
        field: field.into(),
        message: message.into(),
    }
}

/// Which ground-truth construction `mci oracle` and the run pipeline use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    /// Fixpoint of the backward grid contraction.
    Contraction,
    /// Per-cell trajectory classification over a finite horizon.
    Escape,
}

#[derive(Debug, Clone)]
pub struct OracleConfig {
    pub kind: OracleKind,
    /// Cells per state axis.
    pub resolutions: Vec<usize>,
    /// Steps for escape classification (ignored by contraction grids).
    pub horizon: usize,
    /// Integration step for continuous-time oracles.
    pub dt: f64,
    /// Control grid points per control axis.
    pub control_resolution: usize,
}

/// A parsed, validated problem: everything `mci run` needs.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub name: String,
    pub data: ProblemData,
    pub state_names: Vec<String>,
    pub control_names: Vec<String>,
    pub degrees: Vec<(u32, u32)>,
    pub oracle: OracleConfig,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProblem {
    schema_version: u32,
    name: String,
    time: RawTime,
    #[serde(default)]
    discount: Option<f64>,
    states: Vec<String>,
    #[serde(default)]
    controls: Vec<String>,
    dynamics: Vec<RawPolynomial>,
    state_set: RawSet,
    #[serde(default)]
    control_set: Option<RawSet>,
    degrees: Vec<(u32, u32)>,
    #[serde(default)]
    oracle: RawOracle,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawTime {
    Discrete,
    Continuous,
}

#[derive(Debug, Deserialize)]
#[serde(transparent)]
struct RawPolynomial(Vec<RawTerm>);

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTerm {
    coeff: f64,
    #[serde(default)]
    vars: BTreeMap<String, u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "lowercase")]
enum RawSet {
    Box(Vec<(f64, f64)>),
    Ball { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOracle {
    kind: Option<RawOracleKind>,
    resolutions: Option<Vec<usize>>,
    horizon: Option<usize>,
    dt: Option<f64>,
    control_resolution: Option<usize>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawOracleKind {
    Contraction,
    Escape,
}

pub fn parse_problem(path: &Path) -> Result<ProblemFile, ProblemError> {
    let text = fs::read_to_string(path).map_err(|source| ProblemError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: RawProblem = serde_json::from_str(&text).map_err(|source| ProblemError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    validate(raw)
}

fn validate(raw: RawProblem) -> Result<ProblemFile, ProblemError> {
    if raw.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            "schema_version",
            format!("this build reads version {SCHEMA_VERSION}, got {}", raw.schema_version),
        ));
    }
    if raw.name.is_empty() || !raw.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
        return Err(invalid(
            "name",
            "must be a nonempty string of letters, digits, '_' or '-' (it names output files)",
        ));
    }

    let n = raw.states.len();
    let m = raw.controls.len();
    if n == 0 {
        return Err(invalid("states", "at least one state variable is required"));
    }
    let mut var_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, name) in raw.states.iter().chain(raw.controls.iter()).enumerate() {
        if name.is_empty() {
            return Err(invalid("states/controls", "variable names must be nonempty"));
        }
        if var_index.insert(name.as_str(), i).is_some() {
            return Err(invalid(
                "states/controls",
                format!("variable {name:?} is declared twice"),
            ));
        }
    }

    let time = match raw.time {
        RawTime::Discrete => {
            let alpha = raw.discount.unwrap_or(DEFAULT_ALPHA);
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(invalid(
                    "discount",
                    format!("discrete-time discount must lie in (0, 1), got {alpha}"),
                ));
            }
            TimeMode::Discrete { alpha }
        }
        RawTime::Continuous => {
            let beta = raw.discount.unwrap_or(DEFAULT_BETA);
            if !(beta > 0.0 && beta.is_finite()) {
                return Err(invalid(
                    "discount",
                    format!("continuous-time discount must be positive and finite, got {beta}"),
                ));
            }
            TimeMode::Continuous { beta }
        }
    };

    if raw.dynamics.len() != n {
        return Err(invalid(
            "dynamics",
            format!("{} components for {} state variable(s)", raw.dynamics.len(), n),
        ));
    }
    let dim = n + m;
    let mut components = Vec::with_capacity(n);
    for (ci, component) in raw.dynamics.iter().enumerate() {
        let mut p = Polynomial::zero(dim);
        for (ti, term) in component.0.iter().enumerate() {
            let field = format!("dynamics[{ci}][{ti}]");
            if !term.coeff.is_finite() {
                return Err(invalid(field, format!("coefficient {} is not finite", term.coeff)));
            }
            let mut exps = vec![0u32; dim];
            for (var, &e) in &term.vars {
                match var_index.get(var.as_str()) {
                    Some(&vi) => exps[vi] = e,
                    None => {
                        return Err(invalid(field, format!("variable {var:?} is not declared")));
                    }
                }
            }
            p.add_term(Monomial::new(exps), term.coeff);
        }
        components.push(p);
    }
    let system = ControlSystem::new(n, m, PolynomialVector::new(components), time)
        .map_err(|e| invalid("dynamics", e.to_string()))?;

    let state_set = build_set("state_set", &raw.state_set, n)?;
    let control_set = match (m, &raw.control_set) {
        (0, None) => None,
        (0, Some(_)) => {
            return Err(invalid("control_set", "given, but no control variables are declared"));
        }
        (_, None) => {
            return Err(invalid(
                "control_set",
                format!("required for {m} control variable(s)"),
            ));
        }
        (_, Some(set)) => Some(build_set("control_set", set, m)?),
    };

    if raw.degrees.is_empty() {
        return Err(invalid("degrees", "at least one (d_v, d_w) pair is required"));
    }
    for &(d_v, d_w) in &raw.degrees {
        if d_v < 2 || d_v % 2 != 0 || d_w < 2 || d_w % 2 != 0 {
            return Err(invalid(
                "degrees",
                format!("certificate degrees must be even and at least 2, got ({d_v}, {d_w})"),
            ));
        }
    }

    let kind = match raw.oracle.kind {
        None | Some(RawOracleKind::Contraction) => OracleKind::Contraction,
        Some(RawOracleKind::Escape) => OracleKind::Escape,
    };
    if kind == OracleKind::Escape && m > 0 {
        return Err(invalid(
            "oracle.kind",
            "escape classification simulates a fixed trajectory per cell, so it needs an uncontrolled system",
        ));
    }
    let resolutions = raw
        .oracle
        .resolutions
        .unwrap_or_else(|| vec![DEFAULT_RESOLUTION; n]);
    if resolutions.len() != n {
        return Err(invalid(
            "oracle.resolutions",
            format!("{} axes for {} state variable(s)", resolutions.len(), n),
        ));
    }
    let horizon = raw.oracle.horizon.unwrap_or(DEFAULT_HORIZON);
    if horizon == 0 {
        return Err(invalid("oracle.horizon", "must be at least 1"));
    }
    let dt = raw.oracle.dt.unwrap_or(DEFAULT_DT);
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("oracle.dt", format!("must be positive and finite, got {dt}")));
    }
    let control_resolution = raw.oracle.control_resolution.unwrap_or(DEFAULT_CONTROL_RESOLUTION);
    if control_resolution == 0 {
        return Err(invalid("oracle.control_resolution", "must be at least 1"));
    }

    Ok(ProblemFile {
        name: raw.name,
        data: ProblemData {
            system,
            state_set,
            control_set,
        },
        state_names: raw.states,
        control_names: raw.controls,
        degrees: raw.degrees,
        oracle: OracleConfig {
            kind,
            resolutions,
            horizon,
            dt,
            control_resolution,
        },
        output_dir: raw.output_dir,
    })
}

fn build_set(field: &str, raw: &RawSet, dim: usize) -> Result<SemialgebraicSet, ProblemError> {
    match raw {
        RawSet::Box(bounds) => {
            if bounds.len() != dim {
                return Err(invalid(
                    field,
                    format!("box has {} axes for {dim} variable(s)", bounds.len()),
                ));
            }
            make_box(bounds).map_err(|e| invalid(field, e.to_string()))
        }
        RawSet::Ball { center, radius } => {
            if center.len() != dim {
                return Err(invalid(
                    field,
                    format!("ball center has {} coordinates for {dim} variable(s)", center.len()),
                ));
            }
            make_ball(center, *radius).map_err(|e| invalid(field, e.to_string()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn parse_str(text: &str) -> Result<ProblemFile, ProblemError> {
        let mut file = tempfile::NamedTempFile::new().unwrap();
        file.write_all(text.as_bytes()).unwrap();
        parse_problem(file.path())
    }

    fn minimal() -> serde_json::Value {
        serde_json::json!({
            "schema_version": 1,
            "name": "toy",
            "time": "discrete",
            "states": ["x1", "x2"],
            "controls": ["u"],
            "dynamics": [
                [ {"coeff": 1.0, "vars": {"x1": 1}}, {"coeff": 0.1, "vars": {"x2": 1}} ],
                [ {"coeff": 1.0, "vars": {"x2": 1}}, {"coeff": 0.05, "vars": {"u": 1}} ]
            ],
            "state_set": {"box": [[-1.0, 1.0], [-1.0, 1.0]]},
            "control_set": {"box": [[-0.5, 0.5]]},
            "degrees": [[4, 4], [6, 6]]
        })
    }

    #[test]
    fn minimal_problem_parses_with_defaults() {
        let p = parse_str(&minimal().to_string()).unwrap();
        assert_eq!(p.name, "toy");
        assert_eq!(p.data.system.n_states(), 2);
        assert_eq!(p.data.system.n_controls(), 1);
        assert_eq!(p.data.system.time(), TimeMode::Discrete { alpha: 0.9 });
        assert_eq!(p.degrees, vec![(4, 4), (6, 6)]);
        assert_eq!(p.oracle.kind, OracleKind::Contraction);
        assert_eq!(p.oracle.resolutions, vec![200, 200]);
        assert_eq!(p.oracle.horizon, 100);
        assert_eq!(p.oracle.dt, 0.01);
        assert_eq!(p.oracle.control_resolution, 9);
        assert!(p.output_dir.is_none());

        // The dynamics really are x1 + 0.1 x2 over (x1, x2, u).
        let f1 = p.data.system.dynamics().component(0);
        assert_eq!(f1.coeff(&Monomial::var(3, 0)), 1.0);
        assert_eq!(f1.coeff(&Monomial::var(3, 1)), 0.1);
    }

    #[test]
    fn continuous_default_discount_is_one() {
        let mut v = minimal();
        v["time"] = "continuous".into();
        let p = parse_str(&v.to_string()).unwrap();
        assert_eq!(p.data.system.time(), TimeMode::Continuous { beta: 1.0 });
    }

    #[test]
    fn out_of_range_discount_names_the_bound() {
        let mut v = minimal();
        v["discount"] = 1.5.into();
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("discount"), "error should name the field: {err}");
        assert!(err.contains("(0, 1)"), "error should state the bound: {err}");
    }

    #[test]
    fn undeclared_variable_is_reported_with_its_term() {
        let mut v = minimal();
        v["dynamics"][1][1]["vars"] = serde_json::json!({"z": 1});
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(
            err.contains("dynamics[1][1]") && err.contains("\"z\""),
            "expected a term-level path naming z, got: {err}"
        );
    }

    #[test]
    fn duplicate_variable_names_are_rejected() {
        let mut v = minimal();
        v["controls"] = serde_json::json!(["x1"]);
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("declared twice"), "{err}");
    }

    #[test]
    fn missing_control_set_is_rejected() {
        let mut v = minimal();
        v.as_object_mut().unwrap().remove("control_set");
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("control_set"), "{err}");
    }

    #[test]
    fn box_axis_count_must_match_variables() {
        let mut v = minimal();
        v["state_set"] = serde_json::json!({"box": [[-1.0, 1.0]]});
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("state_set") && err.contains("1 axes"), "{err}");
    }

    #[test]
    fn odd_degrees_are_rejected() {
        let mut v = minimal();
        v["degrees"] = serde_json::json!([[4, 3]]);
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("even"), "{err}");
    }

    #[test]
    fn unknown_fields_are_schema_errors() {
        let mut v = minimal();
        v["extra_knob"] = 1.into();
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("extra_knob"), "{err}");
    }

    #[test]
    fn escape_oracle_requires_an_uncontrolled_system() {
        let mut v = minimal();
        v["oracle"] = serde_json::json!({"kind": "escape"});
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("uncontrolled"), "{err}");
    }

    #[test]
    fn ball_state_set_parses() {
        let v = serde_json::json!({
            "schema_version": 1,
            "name": "ball",
            "time": "discrete",
            "states": ["x1", "x2"],
            "dynamics": [
                [ {"coeff": 1.0, "vars": {"x1": 2}}, {"coeff": -1.0, "vars": {"x2": 2}} ],
                [ {"coeff": 2.0, "vars": {"x1": 1, "x2": 1}} ]
            ],
            "state_set": {"ball": {"center": [0.0, 0.0], "radius": 1.0}},
            "degrees": [[8, 8]],
            "oracle": {"kind": "escape", "horizon": 50}
        });
        let p = parse_str(&v.to_string()).unwrap();
        assert_eq!(p.oracle.kind, OracleKind::Escape);
        assert_eq!(p.oracle.horizon, 50);
        assert!(p.data.state_set.contains(&[0.5, 0.5]));
        assert!(!p.data.state_set.contains(&[0.9, 0.9]));
    }

    #[test]
    fn wrong_schema_version_is_rejected() {
        let mut v = minimal();
        v["schema_version"] = 2.into();
        let err = parse_str(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("schema_version"), "{err}");
    }
}
