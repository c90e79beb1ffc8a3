//! Controlled polynomial dynamics in discrete or continuous time, and the
//! change of variables that maps box-shaped problem data onto [-1, 1]^n.

use thiserror::Error;

use crate::poly::{Monomial, Polynomial, PolynomialVector};
use crate::sets::{make_box, AffineScaling, SemialgebraicSet, ShapeHint};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("dynamics has {got} components but the system declares {want} states")]
    WrongComponentCount { got: usize, want: usize },
    #[error("dynamics is written in {got} variables but states + controls = {want}")]
    WrongVariableCount { got: usize, want: usize },
    #[error("discount factor must lie in (0, 1), got {0}")]
    BadDiscount(f64),
    #[error("decay rate must be positive, got {0}")]
    BadDecayRate(f64),
}

/// Discrete maps discount by alpha per step; continuous flows discount at
/// rate beta.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeMode {
    Discrete { alpha: f64 },
    Continuous { beta: f64 },
}

impl TimeMode {
    pub fn is_discrete(&self) -> bool {
        matches!(self, TimeMode::Discrete { .. })
    }
}

/// x+ = f(x, u) or dx/dt = f(x, u); the dynamics components are written
/// over the concatenated variables (x_1..x_n, u_1..u_m).
#[derive(Debug, Clone)]
pub struct ControlSystem {
    n_states: usize,
    n_controls: usize,
    dynamics: PolynomialVector,
    time: TimeMode,
}

impl ControlSystem {
    pub fn new(
        n_states: usize,
        n_controls: usize,
        dynamics: PolynomialVector,
        time: TimeMode,
    ) -> Result<Self, SystemError> {
        if dynamics.len() != n_states {
            return Err(SystemError::WrongComponentCount {
                got: dynamics.len(),
                want: n_states,
            });
        }
        if dynamics.dim() != n_states + n_controls {
            return Err(SystemError::WrongVariableCount {
                got: dynamics.dim(),
                want: n_states + n_controls,
            });
        }
        match time {
            TimeMode::Discrete { alpha } if !(alpha > 0.0 && alpha < 1.0) => {
                return Err(SystemError::BadDiscount(alpha));
            }
            TimeMode::Continuous { beta } if !(beta > 0.0 && beta.is_finite()) => {
                return Err(SystemError::BadDecayRate(beta));
            }
            _ => {}
        }
        Ok(Self {
            n_states,
            n_controls,
            dynamics,
            time,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_controls(&self) -> usize {
        self.n_controls
    }

    pub fn dynamics(&self) -> &PolynomialVector {
        &self.dynamics
    }

    pub fn time(&self) -> TimeMode {
        self.time
    }

    pub fn degree(&self) -> u32 {
        self.dynamics.degree()
    }

    /// Evaluates the dynamics at a state/control pair.
    pub fn step(&self, state: &[f64], control: &[f64]) -> Vec<f64> {
        assert_eq!(state.len(), self.n_states);
        assert_eq!(control.len(), self.n_controls);
        let mut point = Vec::with_capacity(self.n_states + self.n_controls);
        point.extend_from_slice(state);
        point.extend_from_slice(control);
        self.dynamics.evaluate(&point)
    }
}

/// A system together with its state and control constraint sets, scaled or
/// not; what the relaxation builders consume.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub system: ControlSystem,
    pub state_set: SemialgebraicSet,
    pub control_set: Option<SemialgebraicSet>,
}

/// Substitutes x_i = scale_i x~_i + offset_i (and likewise for controls)
/// into the dynamics and maps box constraint sets onto [-1, 1]^dim.
/// Discrete maps also subtract the state offset afterwards so that the
/// scaled system is again a self-map of the unit box; continuous dynamics
/// are only divided by the state scale.  Non-box state sets pass through
/// with the identity scaling.  The returned scaling covers states only;
/// its jacobian_volume_factor converts unit-box volumes back to originals.
pub fn scale_to_unit_box(data: &ProblemData) -> (ProblemData, AffineScaling) {
    let n = data.system.n_states;
    let m = data.system.n_controls;
    let state_bounds = match data.state_set.shape() {
        ShapeHint::Box { bounds } => bounds.clone(),
        _ => return (data.clone(), AffineScaling::identity(n)),
    };
    let control_bounds = data.control_set.as_ref().and_then(|u| match u.shape() {
        ShapeHint::Box { bounds } => Some(bounds.clone()),
        _ => None,
    });

    let mut scale = Vec::with_capacity(n + m);
    let mut offset = Vec::with_capacity(n + m);
    for &(lo, hi) in &state_bounds {
        scale.push(0.5 * (hi - lo));
        offset.push(0.5 * (lo + hi));
    }
    match &control_bounds {
        Some(bounds) => {
            for &(lo, hi) in bounds {
                scale.push(0.5 * (hi - lo));
                offset.push(0.5 * (lo + hi));
            }
        }
        None => {
            scale.extend(std::iter::repeat(1.0).take(m));
            offset.extend(std::iter::repeat(0.0).take(m));
        }
    }

    // The substitution map as a polynomial vector over the scaled variables.
    let substitution = PolynomialVector::new(
        (0..n + m)
            .map(|i| {
                let mut p = Polynomial::constant(n + m, offset[i]);
                p.add_term(Monomial::var(n + m, i), scale[i]);
                p
            })
            .collect(),
    );

    let scaled_components = (0..n)
        .map(|j| {
            let mut fj = data.system.dynamics.component(j).compose(&substitution);
            if data.system.time.is_discrete() {
                fj.add_term(Monomial::constant(n + m), -offset[j]);
            }
            fj.scale(1.0 / scale[j])
        })
        .collect();

    let scaled_state_set = make_box(&vec![(-1.0, 1.0); n]).expect("unit box is not degenerate");
    let scaled_control_set = match (&data.control_set, &control_bounds) {
        (Some(_), Some(_)) => {
            Some(make_box(&vec![(-1.0, 1.0); m]).expect("unit box is not degenerate"))
        }
        (other, _) => other.clone(),
    };

    let scaled = ProblemData {
        system: ControlSystem {
            n_states: n,
            n_controls: m,
            dynamics: PolynomialVector::new(scaled_components),
            time: data.system.time,
        },
        state_set: scaled_state_set,
        control_set: scaled_control_set,
    };
    let state_scaling = AffineScaling::new(scale[..n].to_vec(), offset[..n].to_vec());
    (scaled, state_scaling)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sets::make_ball;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quadratic_map() -> ControlSystem {
        // x1+ = x1 + x2, x2+ = -0.5952 + x2 + x1^2
        let f1 = {
            let mut p = Polynomial::var(2, 0);
            p.add_term(Monomial::var(2, 1), 1.0);
            p
        };
        let f2 = {
            let mut p = Polynomial::constant(2, -0.5952);
            p.add_term(Monomial::var(2, 1), 1.0);
            p.add_term(Monomial::new(vec![2, 0]), 1.0);
            p
        };
        ControlSystem::new(
            2,
            0,
            PolynomialVector::new(vec![f1, f2]),
            TimeMode::Discrete { alpha: 0.9 },
        )
        .unwrap()
    }

    #[test]
    fn construction_validates_shapes_and_rates() {
        let f = PolynomialVector::new(vec![Polynomial::var(2, 0)]);
        assert!(matches!(
            ControlSystem::new(2, 0, f.clone(), TimeMode::Discrete { alpha: 0.9 }),
            Err(SystemError::WrongComponentCount { got: 1, want: 2 })
        ));
        assert!(matches!(
            ControlSystem::new(1, 0, f.clone(), TimeMode::Discrete { alpha: 0.9 }),
            Err(SystemError::WrongVariableCount { got: 2, want: 1 })
        ));
        let g = PolynomialVector::new(vec![Polynomial::var(1, 0)]);
        assert!(matches!(
            ControlSystem::new(1, 0, g.clone(), TimeMode::Discrete { alpha: 1.0 }),
            Err(SystemError::BadDiscount(_))
        ));
        assert!(matches!(
            ControlSystem::new(1, 0, g.clone(), TimeMode::Continuous { beta: 0.0 }),
            Err(SystemError::BadDecayRate(_))
        ));
        assert!(ControlSystem::new(1, 0, g, TimeMode::Continuous { beta: 1.0 }).is_ok());
    }

    #[test]
    fn quadratic_map_scales_onto_the_unit_box() {
        let data = ProblemData {
            system: quadratic_map(),
            state_set: make_box(&[(-1.6, 1.6), (-1.6, 1.6)]).unwrap(),
            control_set: None,
        };
        let (scaled, sc) = scale_to_unit_box(&data);
        assert_eq!(sc.scale(), &[1.6, 1.6]);
        assert_eq!(sc.offset(), &[0.0, 0.0]);
        assert!((sc.jacobian_volume_factor() - 2.56).abs() < 1e-15);

        // f~1 = x~1 + x~2; f~2 = -0.372 + x~2 + 1.6 x~1^2
        let f1 = scaled.system.dynamics().component(0);
        assert!((f1.coeff(&Monomial::var(2, 0)) - 1.0).abs() < 1e-15);
        assert!((f1.coeff(&Monomial::var(2, 1)) - 1.0).abs() < 1e-15);
        let f2 = scaled.system.dynamics().component(1);
        assert!((f2.coeff(&Monomial::constant(2)) - (-0.372)).abs() < 1e-15);
        assert!((f2.coeff(&Monomial::var(2, 1)) - 1.0).abs() < 1e-15);
        assert!((f2.coeff(&Monomial::new(vec![2, 0])) - 1.6).abs() < 1e-15);

        let bb = scaled.state_set.bounding_box().unwrap();
        assert_eq!(bb, vec![(-1.0, 1.0), (-1.0, 1.0)]);
    }

    #[test]
    fn unit_box_data_is_left_alone() {
        let data = ProblemData {
            system: quadratic_map(),
            state_set: make_box(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap(),
            control_set: None,
        };
        let (scaled, sc) = scale_to_unit_box(&data);
        assert!(sc.is_identity());
        assert_eq!(sc.jacobian_volume_factor(), 1.0);
        for j in 0..2 {
            let orig = data.system.dynamics().component(j);
            let got = scaled.system.dynamics().component(j);
            assert_eq!(orig, got, "identity scaling must not disturb component {j}");
        }
    }

    #[test]
    fn control_bounds_are_scaled_into_the_dynamics() {
        // x1+ = x1 + 0.1 x2, x2+ = x2 + 0.05 u with u in [-0.5, 0.5]:
        // after scaling u = 0.5 u~ the control term becomes 0.025 u~.
        let f1 = {
            let mut p = Polynomial::var(3, 0);
            p.add_term(Monomial::var(3, 1), 0.1);
            p
        };
        let f2 = {
            let mut p = Polynomial::var(3, 1);
            p.add_term(Monomial::var(3, 2), 0.05);
            p
        };
        let data = ProblemData {
            system: ControlSystem::new(
                2,
                1,
                PolynomialVector::new(vec![f1, f2]),
                TimeMode::Discrete { alpha: 0.9 },
            )
            .unwrap(),
            state_set: make_box(&[(-1.0, 1.0), (-1.0, 1.0)]).unwrap(),
            control_set: Some(make_box(&[(-0.5, 0.5)]).unwrap()),
        };
        let (scaled, sc) = scale_to_unit_box(&data);
        assert!(sc.is_identity(), "state box was already the unit box");
        let f2s = scaled.system.dynamics().component(1);
        assert!((f2s.coeff(&Monomial::var(3, 2)) - 0.025).abs() < 1e-15);
        let ub = scaled.control_set.as_ref().unwrap().bounding_box().unwrap();
        assert_eq!(ub, vec![(-1.0, 1.0)]);
    }

    #[test]
    fn continuous_scaling_keeps_the_offset_in_the_field() {
        // dx/dt = 1 on X = [0, 2]: scale 1, offset 1.  A discrete map would
        // subtract the offset; the vector field must not.
        let one = Polynomial::constant(1, 1.0);
        let make = |time| {
            ProblemData {
                system: ControlSystem::new(1, 0, PolynomialVector::new(vec![one.clone()]), time)
                    .unwrap(),
                state_set: make_box(&[(0.0, 2.0)]).unwrap(),
                control_set: None,
            }
        };
        let (cont, _) = scale_to_unit_box(&make(TimeMode::Continuous { beta: 1.0 }));
        assert_eq!(
            cont.system.dynamics().component(0).coeff(&Monomial::constant(1)),
            1.0
        );
        let (disc, _) = scale_to_unit_box(&make(TimeMode::Discrete { alpha: 0.9 }));
        assert!(disc.system.dynamics().component(0).is_zero());
    }

    #[test]
    fn ball_state_sets_pass_through_unscaled() {
        let f = PolynomialVector::new(vec![Polynomial::var(2, 0), Polynomial::var(2, 1)]);
        let data = ProblemData {
            system: ControlSystem::new(2, 0, f, TimeMode::Discrete { alpha: 0.9 }).unwrap(),
            state_set: make_ball(&[0.0, 0.0], 1.0).unwrap(),
            control_set: None,
        };
        let (scaled, sc) = scale_to_unit_box(&data);
        assert!(sc.is_identity());
        assert_eq!(scaled.state_set.inequalities().len(), 1);
    }

    #[test]
    fn scaled_dynamics_agree_with_pointwise_conjugation() {
        // f~(x~, u~) must equal S^-1 (f(S x~ + c, S_u u~ + c_u) - c) at
        // random points, for a dense random system on an uneven box.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let n = 2;
        let m = 1;
        let dims = n + m;
        let basis = crate::poly::monomial_basis(dims, 3);
        let components: Vec<Polynomial> = (0..n)
            .map(|_| {
                let mut p = Polynomial::zero(dims);
                for mono in &basis {
                    p.add_term(mono.clone(), rng.gen_range(-1.0..1.0));
                }
                p
            })
            .collect();
        let state_bounds = [(-0.4, 1.2), (0.3, 2.1)];
        let control_bounds = [(-3.0, -1.0)];
        let data = ProblemData {
            system: ControlSystem::new(
                n,
                m,
                PolynomialVector::new(components),
                TimeMode::Discrete { alpha: 0.9 },
            )
            .unwrap(),
            state_set: make_box(&state_bounds).unwrap(),
            control_set: Some(make_box(&control_bounds).unwrap()),
        };
        let (scaled, sc) = scale_to_unit_box(&data);
        let u_mid = -2.0;
        let u_half = 1.0;
        for _ in 0..100 {
            let xt: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let ut = rng.gen_range(-1.0..1.0);
            let scaled_val = {
                let mut pt = xt.clone();
                pt.push(ut);
                scaled.system.dynamics().evaluate(&pt)
            };
            let x = sc.to_original(&xt);
            let mut pt = x.clone();
            pt.push(u_mid + u_half * ut);
            let fx = data.system.dynamics().evaluate(&pt);
            let conjugated = sc.to_scaled(&fx);
            for j in 0..n {
                assert!(
                    (scaled_val[j] - conjugated[j]).abs() < 1e-10,
                    "component {j}: {} vs {}",
                    scaled_val[j],
                    conjugated[j]
                );
            }
        }
    }
}
