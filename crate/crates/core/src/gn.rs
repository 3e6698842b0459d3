//! Weighted Gauss-Newton baseline for the maximum-likelihood problem.
//!
//! The iteration is deliberately plain: no damping, no line search and a
//! small iteration cap, so that it behaves like the usual iterative
//! localizer and can fall into local minima from a poor start.

use nalgebra::{DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measurement::{eval_h, jacobian_h, rng_from_seed, TwoWayMeasurements, WeightMatrix};
use crate::model::StateVector;

/// Normal matrices with a larger condition number are treated as singular.
pub const MAX_CONDITION: f64 = 1e12;

/// Size of the one-off nudge applied when an iterate lands on an anchor, m.
const COINCIDENT_NUDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnSettings {
    pub max_iter: usize,
    /// Stop when the update norm falls below this (mixed state units).
    pub tol: f64,
}

impl Default for GnSettings {
    fn default() -> Self {
        Self { max_iter: 10, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GnFailure {
    SingularNormalMatrix { cond: f64 },
    CoincidentGeometry { anchor: usize },
}

#[derive(Debug, Clone)]
pub struct GnReport {
    pub estimate: StateVector,
    pub iterations: usize,
    pub converged: bool,
    pub final_cost: f64,
    /// Norm of the last update.
    pub step_norm: f64,
    /// Cost at the initial point followed by the cost after every update.
    pub cost_history: Vec<f64>,
    pub failure: Option<GnFailure>,
}

/// `(γ − h(θ))ᵀ W (γ − h(θ))`.
pub fn wls_cost(
    theta: &StateVector,
    measurements: &TwoWayMeasurements,
    weights: &WeightMatrix,
    anchors: &[DVector<f64>],
) -> Result<f64> {
    let r = measurements.stacked() - eval_h(theta, anchors, &measurements.delays)?;
    if weights.len() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} residuals but {} weights",
            r.len(),
            weights.len()
        )));
    }
    Ok(weights.quadratic_form(&r))
}

/// Axis-aligned cube for the random start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: [f64; 3],
    pub edge: f64,
}

/// Uniform position in the cube (first `dim` axes); clock and velocity
/// start at zero.
pub fn random_init(cube: &Cube, dim: usize, rng: &mut impl Rng) -> StateVector {
    let mut data = DVector::zeros(2 * dim + 2);
    for k in 0..dim {
        let u: f64 = rng.gen();
        data[k] = cube.center[k] + (u - 0.5) * cube.edge;
    }
    StateVector::new(dim, data).expect("layout is consistent by construction")
}

/// [`random_init`] from a seed.
pub fn random_init_seeded(cube: &Cube, dim: usize, seed: u64) -> StateVector {
    random_init(cube, dim, &mut rng_from_seed(seed))
}

fn nudge(theta: &StateVector) -> StateVector {
    let mut data = theta.as_vector().clone();
    data[0] += COINCIDENT_NUDGE;
    StateVector::new(theta.dim(), data).expect("same layout")
}

pub fn gauss_newton(
    measurements: &TwoWayMeasurements,
    weights: &WeightMatrix,
    anchors: &[DVector<f64>],
    init: &StateVector,
    settings: &GnSettings,
) -> Result<GnReport> {
    measurements.validate()?;
    let n = init.dim();
    if 2 * measurements.len() < 2 * n + 2 {
        return Err(Error::InvalidScenario(format!(
            "{} measurements for {} unknowns",
            2 * measurements.len(),
            2 * n + 2
        )));
    }
    if !init.is_finite() {
        return Err(Error::InvalidScenario("initial state is not finite".into()));
    }
    let gamma = measurements.stacked();
    let delays = &measurements.delays;

    let mut theta = init.clone();
    let mut nudged = false;
    let mut history = Vec::new();
    let mut step_norm = f64::NAN;
    let mut iterations = 0;

    let report = |theta: StateVector, it, converged, step_norm, history: Vec<f64>, failure| GnReport {
        final_cost: history.last().copied().unwrap_or(f64::NAN),
        estimate: theta,
        iterations: it,
        converged,
        step_norm,
        cost_history: history,
        failure,
    };

    loop {
        let eval = eval_h(&theta, anchors, delays).and_then(|h| Ok((h, jacobian_h(&theta, anchors, delays)?)));
        let (h, jac) = match eval {
            Ok(v) => v,
            Err(Error::CoincidentGeometry { anchor, .. }) => {
                if nudged {
                    let f = Some(GnFailure::CoincidentGeometry { anchor });
                    return Ok(report(theta, iterations, false, step_norm, history, f));
                }
                nudged = true;
                theta = nudge(&theta);
                continue;
            }
            Err(e) => return Err(e),
        };
        let r = &gamma - h;
        if history.len() == iterations {
            history.push(weights.quadratic_form(&r));
        } else {
            // re-evaluated after a nudge
            *history.last_mut().unwrap() = weights.quadratic_form(&r);
        }
        if iterations > 0 && step_norm < settings.tol {
            return Ok(report(theta, iterations, true, step_norm, history, None));
        }
        if iterations == settings.max_iter {
            return Ok(report(theta, iterations, false, step_norm, history, None));
        }

        let jw = jac.transpose() * weights.to_matrix();
        let normal = &jw * &jac;
        let rhs = &jw * &r;
        let eig = SymmetricEigen::new(normal.clone());
        let (lo, hi) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
        let cond = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if cond > MAX_CONDITION {
            let f = Some(GnFailure::SingularNormalMatrix { cond });
            return Ok(report(theta, iterations, false, step_norm, history, f));
        }
        let delta = match normal.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => {
                let f = Some(GnFailure::SingularNormalMatrix { cond });
                return Ok(report(theta, iterations, false, step_norm, history, f));
            }
        };
        step_norm = delta.norm();
        theta = StateVector::new(n, theta.as_vector() + delta)?;
        iterations += 1;
        if !theta.is_finite() {
            let f = Some(GnFailure::SingularNormalMatrix { cond: f64::INFINITY });
            return Ok(report(theta, iterations, false, step_norm, history, f));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{sample_scenario, CampaignConfig};
    use crate::measurement::{request_toa_clean, response_toa_clean, simulate};
    use crate::model::Scenario;
    use approx::assert_relative_eq;

    fn table_one(sigma: f64, seed: u64) -> Scenario {
        sample_scenario(&CampaignConfig::default(), sigma, None, seed)
    }

    #[test]
    fn cost_is_zero_at_noiseless_truth() {
        let sc = table_one(0.0, 1);
        let meas = simulate(&sc, 1).unwrap();
        let w = meas.weights_with_floor(1.0).unwrap();
        let c = wls_cost(&StateVector::from_state(&sc.ud), &meas, &w, &sc.anchor_positions()).unwrap();
        assert!(c < 1e-18, "{c}");
    }

    #[test]
    fn cost_of_one_shifted_measurement() {
        let sc = table_one(0.0, 2);
        let mut meas = simulate(&sc, 2).unwrap();
        meas.tau[3] += 0.5;
        let w = WeightMatrix::from_diagonal(DVector::from_element(16, 4.0));
        let c = wls_cost(&StateVector::from_state(&sc.ud), &meas, &w, &sc.anchor_positions()).unwrap();
        assert_relative_eq!(c, 4.0 * 0.25, max_relative = 1e-9);
    }

    #[test]
    fn cost_matches_explicit_loop() {
        let sc = table_one(1.5, 3);
        let meas = simulate(&sc, 3).unwrap();
        let w = meas.weights().unwrap();
        let anchors = sc.anchor_positions();
        let guess = UdStateGuess::offset(&sc, 12.0);
        let theta = StateVector::from_state(&guess);
        let m = anchors.len();
        let mut expect = 0.0;
        for i in 0..m {
            let r_req = meas.rho[i] - request_toa_clean(&anchors[i], &guess).unwrap();
            let r_resp = meas.tau[i] - response_toa_clean(&anchors[i], &guess, meas.delays[i]).unwrap();
            expect += r_req * r_req / (meas.sigma_an[i] * meas.sigma_an[i]);
            expect += r_resp * r_resp / (meas.sigma_ud * meas.sigma_ud);
        }
        assert_relative_eq!(wls_cost(&theta, &meas, &w, &anchors).unwrap(), expect, max_relative = 1e-10);
    }

    struct UdStateGuess;

    impl UdStateGuess {
        fn offset(sc: &Scenario, d: f64) -> crate::model::UdState {
            let mut s = sc.ud.clone();
            s.position.add_scalar_mut(d);
            s.clock_offset += 3.0;
            s
        }
    }

    #[test]
    fn truth_is_a_fixed_point_without_noise() {
        for seed in 0..10 {
            let sc = table_one(0.0, seed);
            let meas = simulate(&sc, seed).unwrap();
            let w = meas.weights_with_floor(1e-12).unwrap();
            let truth = StateVector::from_state(&sc.ud);
            let r = gauss_newton(&meas, &w, &sc.anchor_positions(), &truth, &GnSettings::default()).unwrap();
            assert!(r.converged);
            assert!(r.iterations <= 2, "{} iterations", r.iterations);
            assert!((r.estimate.position() - &sc.ud.position).norm() < 1e-9);
        }
    }

    #[test]
    fn converges_from_truth_with_noise() {
        let sc = table_one(0.1, 4);
        let meas = simulate(&sc, 4).unwrap();
        let w = meas.weights().unwrap();
        let truth = StateVector::from_state(&sc.ud);
        let r = gauss_newton(&meas, &w, &sc.anchor_positions(), &truth, &GnSettings::default()).unwrap();
        assert!(r.converged);
        assert!(r.final_cost <= r.cost_history[0]);
        assert!((r.estimate.position() - &sc.ud.position).norm() < 1.0);
    }

    #[test]
    fn translating_the_geometry_translates_the_estimate() {
        let sc = table_one(0.5, 5);
        let meas = simulate(&sc, 5).unwrap();
        let w = meas.weights().unwrap();
        let anchors = sc.anchor_positions();
        let init = random_init_seeded(&Cube { center: [0.0; 3], edge: 700.0 }, 3, 5);
        let a = gauss_newton(&meas, &w, &anchors, &init, &GnSettings::default()).unwrap();

        let d = DVector::from_vec(vec![1234.0, -567.0, 89.0]);
        let moved: Vec<_> = anchors.iter().map(|q| q + &d).collect();
        let mut init2 = init.as_vector().clone();
        for k in 0..3 {
            init2[k] += d[k];
        }
        let init2 = StateVector::new(3, init2).unwrap();
        let b = gauss_newton(&meas, &w, &moved, &init2, &GnSettings::default()).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert!((b.estimate.position() - a.estimate.position() - &d).norm() < 1e-6);
    }

    #[test]
    fn collinear_anchors_are_reported_not_raised() {
        let mut sc = table_one(0.1, 6);
        for (i, a) in sc.anchors.iter_mut().enumerate() {
            a.position = DVector::from_vec(vec![100.0 * i as f64, 0.0, 0.0]);
        }
        sc.ud.position = DVector::from_vec(vec![50.0, 200.0, 30.0]);
        let meas = simulate(&sc, 6).unwrap();
        let w = meas.weights().unwrap();
        let init = StateVector::from_state(&sc.ud);
        let r = gauss_newton(&meas, &w, &sc.anchor_positions(), &init, &GnSettings::default()).unwrap();
        assert!(!r.converged);
        assert!(matches!(r.failure, Some(GnFailure::SingularNormalMatrix { .. })));
    }

    #[test]
    fn start_on_an_anchor_is_nudged_once() {
        let sc = table_one(0.0, 7);
        let meas = simulate(&sc, 7).unwrap();
        let w = meas.weights_with_floor(1e-12).unwrap();
        let anchors = sc.anchor_positions();
        let mut start = StateVector::from_state(&sc.ud).into_vector();
        for k in 0..3 {
            start[k] = anchors[0][k];
        }
        let start = StateVector::new(3, start).unwrap();
        let r = gauss_newton(&meas, &w, &anchors, &start, &GnSettings::default()).unwrap();
        // the nudged start is evaluated instead of failing on the anchor
        assert!(!matches!(r.failure, Some(GnFailure::CoincidentGeometry { .. })));
        assert!(r.cost_history[0].is_finite());
    }

    #[test]
    fn random_init_degenerate_and_deterministic() {
        let cube = Cube { center: [1.0, 2.0, 3.0], edge: 0.0 };
        let s = random_init_seeded(&cube, 3, 9);
        assert_eq!(s.position().as_slice(), &[1.0, 2.0, 3.0]);
        assert_eq!(s.velocity().norm(), 0.0);
        assert_eq!(s.clock_offset(), 0.0);

        let cube = Cube { center: [0.0; 3], edge: 700.0 };
        assert_eq!(random_init_seeded(&cube, 3, 4), random_init_seeded(&cube, 3, 4));
        assert_ne!(random_init_seeded(&cube, 3, 4), random_init_seeded(&cube, 3, 5));
        assert_eq!(random_init_seeded(&cube, 2, 4).dim(), 2);
    }

    #[test]
    fn random_init_is_uniform_in_the_cube() {
        let cube = Cube { center: [10.0, -20.0, 5.0], edge: 100.0 };
        let mut rng = rng_from_seed(1);
        let n = 20_000;
        let mut sum = DVector::zeros(3);
        for _ in 0..n {
            let p = random_init(&cube, 3, &mut rng).position();
            for k in 0..3 {
                assert!((p[k] - cube.center[k]).abs() <= 50.0);
            }
            sum += p;
        }
        let mean = sum / n as f64;
        // standard error of a uniform mean is edge/√(12n)
        let se = 100.0 / (12.0 * n as f64).sqrt();
        for k in 0..3 {
            assert!((mean[k] - cube.center[k]).abs() < 5.0 * se);
        }
    }
}
