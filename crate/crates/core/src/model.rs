//! Domain types shared by every estimator: anchors, the device state, the
//! reply schedule and complete simulation scenarios.
//!
//! All timing quantities are carried in range units. A clock offset `b`
//! seconds is stored as `B = c·b` meters and a drift `ω` as `Ω = c·ω` m/s, so
//! that every measurement and every lifted variable of the relaxation is a
//! length.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default bound on the device speed used to catch unit mistakes, m/s.
pub const DEFAULT_MAX_SPEED: f64 = 1000.0;

pub fn propagate_position(p: &DVector<f64>, v: &DVector<f64>, dt: f64) -> DVector<f64> {
    p + v * dt
}

pub fn propagate_clock(offset: f64, drift: f64, dt: f64) -> f64 {
    offset + drift * dt
}

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(Error::DimensionMismatch(format!(
            "spatial dimension must be 2 or 3, got {n}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub id: usize,
    pub position: DVector<f64>,
}

impl Anchor {
    pub fn new(id: usize, position: impl Into<DVector<f64>>) -> Self {
        Self {
            id,
            position: position.into(),
        }
    }

    pub fn from_slice(id: usize, xs: &[f64]) -> Self {
        Self::new(id, DVector::from_column_slice(xs))
    }

    pub fn validate(&self) -> Result<()> {
        check_dim(self.position.len())?;
        if self.position.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidScenario(format!(
                "anchor {} has a non-finite coordinate",
                self.id
            )))
        }
    }
}

/// Device kinematic and clock state at the request transmission epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    /// Clock offset `B`, meters.
    pub clock_offset: f64,
    /// Clock drift `Ω`, meters per second.
    pub clock_drift: f64,
}

impl UdState {
    pub fn stationary(position: DVector<f64>) -> Self {
        let n = position.len();
        Self {
            position,
            velocity: DVector::zeros(n),
            clock_offset: 0.0,
            clock_drift: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.position.len()
    }

    pub fn validate(&self, max_speed: f64) -> Result<()> {
        check_dim(self.position.len())?;
        if self.velocity.len() != self.position.len() {
            return Err(Error::DimensionMismatch(format!(
                "velocity has {} components, position has {}",
                self.velocity.len(),
                self.position.len()
            )));
        }
        let finite = self.position.iter().chain(self.velocity.iter()).all(|x| x.is_finite())
            && self.clock_offset.is_finite()
            && self.clock_drift.is_finite();
        if !finite {
            return Err(Error::InvalidScenario("device state is not finite".into()));
        }
        let speed = self.velocity.norm();
        if speed > max_speed {
            return Err(Error::InvalidScenario(format!(
                "device speed {speed:.3} m/s exceeds the {max_speed} m/s limit"
            )));
        }
        Ok(())
    }

    /// Position after `dt` seconds of constant-velocity motion.
    pub fn position_at(&self, dt: f64) -> DVector<f64> {
        propagate_position(&self.position, &self.velocity, dt)
    }

    /// Clock offset after `dt` seconds of constant drift.
    pub fn offset_at(&self, dt: f64) -> f64 {
        propagate_clock(self.clock_offset, self.clock_drift, dt)
    }
}

/// The flattened unknown vector `[p, B, Ω, v]`, length `2N + 2`.
///
/// This order differs from the `[p, b, ω, v]` grouping only in units; the
/// slots are fixed and shared with [`crate::measurement::jacobian_h`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    dim: usize,
    data: DVector<f64>,
}

impl StateVector {
    pub fn new(dim: usize, data: DVector<f64>) -> Result<Self> {
        check_dim(dim)?;
        if data.len() != 2 * dim + 2 {
            return Err(Error::DimensionMismatch(format!(
                "state vector of length {} for dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    pub fn from_state(state: &UdState) -> Self {
        let n = state.dim();
        let mut data = DVector::zeros(2 * n + 2);
        data.rows_mut(0, n).copy_from(&state.position);
        data[n] = state.clock_offset;
        data[n + 1] = state.clock_drift;
        data.rows_mut(n + 2, n).copy_from(&state.velocity);
        Self { dim: n, data }
    }

    pub fn to_state(&self) -> UdState {
        UdState {
            position: self.position(),
            velocity: self.velocity(),
            clock_offset: self.clock_offset(),
            clock_drift: self.clock_drift(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.data
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.data
    }

    pub fn position(&self) -> DVector<f64> {
        self.data.rows(0, self.dim).into_owned()
    }

    pub fn velocity(&self) -> DVector<f64> {
        self.data.rows(self.dim + 2, self.dim).into_owned()
    }

    pub fn clock_offset(&self) -> f64 {
        self.data[self.dim]
    }

    pub fn clock_drift(&self) -> f64 {
        self.data[self.dim + 1]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub(crate) fn offset_index(dim: usize) -> usize {
        dim
    }

    pub(crate) fn drift_index(dim: usize) -> usize {
        dim + 1
    }

    pub(crate) fn velocity_index(dim: usize) -> usize {
        dim + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// Request transmission epoch, seconds.
    pub t_tx: f64,
    /// Reply reception delay of each anchor relative to `t_tx`, seconds.
    pub delays: Vec<f64>,
}

impl Schedule {
    /// Anchor `i` (1-based) replies `spacing·i` seconds after the request.
    pub fn uniform(m: usize, spacing: f64) -> Self {
        Self {
            t_tx: 0.0,
            delays: (1..=m).map(|i| spacing * i as f64).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = self.delays.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
            return Err(Error::InvalidScenario(format!(
                "reply delays must be positive, got {d}"
            )));
        }
        let first = self.delays.first().copied().unwrap_or(0.0);
        if !self.delays.iter().any(|&d| d != first) {
            return Err(Error::InvalidScenario(
                "at least two distinct reply delays are needed to observe clock drift".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub anchors: Vec<Anchor>,
    pub ud: UdState,
    pub schedule: Schedule,
    /// Noise standard deviation of each anchor-side request measurement, m.
    pub sigma_an: Vec<f64>,
    /// Noise standard deviation of the device-side response measurements, m.
    pub sigma_ud: f64,
    #[serde(default = "default_c")]
    pub c: f64,
}

fn default_c() -> f64 {
    SPEED_OF_LIGHT
}

impl Scenario {
    pub fn num_anchors(&self) -> usize {
        self.anchors.len()
    }

    pub fn dim(&self) -> usize {
        self.ud.dim()
    }

    pub fn anchor_positions(&self) -> Vec<DVector<f64>> {
        self.anchors.iter().map(|a| a.position.clone()).collect()
    }

    /// Checks structural invariants. Zero noise levels are accepted so that
    /// noiseless simulations can be described; estimators that need weights
    /// reject them separately.
    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        let m = self.anchors.len();
        self.ud.validate(DEFAULT_MAX_SPEED)?;
        for a in &self.anchors {
            a.validate()?;
            if a.position.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "anchor {} is {}-D but the device is {n}-D",
                    a.id,
                    a.position.len()
                )));
            }
        }
        self.schedule.validate()?;
        if self.schedule.delays.len() != m || self.sigma_an.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "{m} anchors but {} delays and {} anchor noise levels",
                self.schedule.delays.len(),
                self.sigma_an.len()
            )));
        }
        if 2 * m < 2 * n + 2 {
            return Err(Error::InvalidScenario(format!(
                "{m} anchors give {} measurements for {} unknowns",
                2 * m,
                2 * n + 2
            )));
        }
        if let Some(s) = self
            .sigma_an
            .iter()
            .chain(std::iter::once(&self.sigma_ud))
            .find(|s| !(s.is_finite() && **s >= 0.0))
        {
            return Err(Error::NonPositiveSigma(*s));
        }
        if !(self.c.is_finite() && self.c > 0.0) {
            return Err(Error::InvalidScenario(format!(
                "propagation speed must be positive, got {}",
                self.c
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use proptest::prelude::*;

    #[test]
    fn position_propagation_examples() {
        let r = propagate_position(&dvector![0.0, 0.0, 0.0], &dvector![1.0, 2.0, 3.0], 2.0);
        assert_eq!(r, dvector![2.0, 4.0, 6.0]);
        let r = propagate_position(&dvector![5.0, 5.0, 5.0], &dvector![0.0, 0.0, 0.0], 10.0);
        assert_eq!(r, dvector![5.0, 5.0, 5.0]);
        let r = propagate_position(&dvector![1.0, 0.0, 0.0], &dvector![-1.0, 0.0, 0.0], 1.0);
        assert_eq!(r, dvector![0.0, 0.0, 0.0]);
    }

    #[test]
    fn clock_propagation_examples() {
        assert!((propagate_clock(0.0, 3.0, 0.01) - 0.03).abs() < 1e-15);
        assert_eq!(propagate_clock(6000.0, 0.0, 1.0), 6000.0);
        assert!(propagate_clock(1.0, -100.0, 0.01).abs() < 1e-15);
    }

    #[test]
    fn state_vector_layout() {
        let s = UdState {
            position: dvector![1.0, 2.0, 3.0],
            velocity: dvector![4.0, 5.0, 6.0],
            clock_offset: 7.0,
            clock_drift: 8.0,
        };
        let v = StateVector::from_state(&s);
        assert_eq!(v.as_vector(), &dvector![1.0, 2.0, 3.0, 7.0, 8.0, 4.0, 5.0, 6.0]);
        assert_eq!(v.to_state(), s);
        assert!(StateVector::new(3, DVector::zeros(7)).is_err());
        assert!(StateVector::new(4, DVector::zeros(10)).is_err());
    }

    #[test]
    fn schedule_needs_two_distinct_delays() {
        let s = Schedule { t_tx: 0.0, delays: vec![0.01, 0.01] };
        assert!(s.validate().is_err());
        let s = Schedule { t_tx: 0.0, delays: vec![0.01, -0.01] };
        assert!(s.validate().is_err());
        assert!(Schedule::uniform(8, 0.01).validate().is_ok());
    }

    #[test]
    fn speed_limit_catches_unit_mistakes() {
        let mut s = UdState::stationary(dvector![0.0, 0.0, 0.0]);
        s.velocity = dvector![2000.0, 0.0, 0.0];
        assert!(s.validate(DEFAULT_MAX_SPEED).is_err());
    }

    fn vec3() -> impl Strategy<Value = DVector<f64>> {
        prop::array::uniform3(-1e3..1e3f64).prop_map(|a| DVector::from_column_slice(&a))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn position_composition_law(p in vec3(), v in vec3(), a in -10.0..10.0f64, b in -10.0..10.0f64) {
            let two_step = propagate_position(&propagate_position(&p, &v, a), &v, b);
            let one_step = propagate_position(&p, &v, a + b);
            let scale = 1.0 + p.norm() + v.norm() * (a.abs() + b.abs());
            prop_assert!((two_step - one_step).norm() <= 1e-12 * scale);
        }

        #[test]
        fn clock_is_affine(offset in -1e4..1e4f64, drift in -3e3..3e3f64, a in -1.0..1.0f64, b in -1.0..1.0f64) {
            let lhs = propagate_clock(offset, drift, a) + propagate_clock(offset, drift, b) - offset;
            let rhs = propagate_clock(offset, drift, a + b);
            prop_assert!((lhs - rhs).abs() <= 1e-11 * (1.0 + offset.abs() + drift.abs()));
        }
    }
}
