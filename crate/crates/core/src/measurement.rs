//! The two-way TOA forward model: clean request/response measurements, the
//! stacked model `h(θ)`, its Jacobian, noise injection and the weight matrix.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Scenario, StateVector, UdState};

/// Ranges shorter than this are treated as coincident geometry, meters.
pub const COINCIDENT_RANGE: f64 = 1e-9;

/// Deterministic generator used for every simulated quantity. ChaCha8 output
/// is specified independently of platform, and normal variates come from
/// `rand_distr`'s ziggurat sampler, so a seed reproduces bit-identical data
/// on every machine.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stacked measurements `γ = [ρ; τ]` in range units with their noise levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoWayMeasurements {
    /// Request TOA at each anchor, meters.
    pub rho: Vec<f64>,
    /// Response TOA of each anchor's reply at the device, meters.
    pub tau: Vec<f64>,
    /// Reply delays, seconds.
    pub delays: Vec<f64>,
    pub sigma_an: Vec<f64>,
    pub sigma_ud: f64,
}

impl TwoWayMeasurements {
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// `γ = [ρ; τ]`, request block first.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(
            2 * self.len(),
            self.rho.iter().chain(self.tau.iter()).copied(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.rho.len();
        if m == 0 || self.tau.len() != m || self.delays.len() != m || self.sigma_an.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "measurement blocks have lengths rho={} tau={} delays={} sigma_an={}",
                m,
                self.tau.len(),
                self.delays.len(),
                self.sigma_an.len()
            )));
        }
        if !self.rho.iter().chain(self.tau.iter()).all(|x| x.is_finite()) {
            return Err(Error::InvalidScenario("non-finite measurement".into()));
        }
        Ok(())
    }

    /// Weights from the recorded noise levels, `W = diag(1/σᵢ², 1/σ²)`.
    pub fn weights(&self) -> Result<WeightMatrix> {
        build_weights(&self.sigma_an, self.sigma_ud)
    }

    /// Weights with every noise level clamped below at `floor`. Used for
    /// noiseless data, where only the relative weighting matters.
    pub fn weights_with_floor(&self, floor: f64) -> Result<WeightMatrix> {
        let an: Vec<f64> = self.sigma_an.iter().map(|s| s.max(floor)).collect();
        build_weights(&an, self.sigma_ud.max(floor))
    }
}

/// Diagonal weight matrix of the stacked measurements, 1/m².
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    diag: DVector<f64>,
}

impl WeightMatrix {
    /// Wraps an already-computed diagonal; entries must be positive.
    pub fn from_diagonal(diag: DVector<f64>) -> Self {
        debug_assert!(diag.iter().all(|w| *w > 0.0));
        Self { diag }
    }

    pub fn diagonal(&self) -> &DVector<f64> {
        &self.diag
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Number of anchors `M`; the matrix is `2M × 2M`.
    pub fn num_anchors(&self) -> usize {
        self.diag.len() / 2
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.diag)
    }

    pub fn quadratic_form(&self, r: &DVector<f64>) -> f64 {
        r.iter().zip(self.diag.iter()).map(|(ri, wi)| wi * ri * ri).sum()
    }
}

pub fn build_weights(sigma_an: &[f64], sigma_ud: f64) -> Result<WeightMatrix> {
    if let Some(&s) = sigma_an
        .iter()
        .chain(std::iter::once(&sigma_ud))
        .find(|s| !(s.is_finite() && **s > 0.0))
    {
        return Err(Error::NonPositiveSigma(s));
    }
    let m = sigma_an.len();
    let diag = DVector::from_iterator(
        2 * m,
        sigma_an
            .iter()
            .map(|s| 1.0 / (s * s))
            .chain(std::iter::repeat_n(1.0 / (sigma_ud * sigma_ud), m)),
    );
    Ok(WeightMatrix { diag })
}

fn range_to(anchor: usize, q: &DVector<f64>, p: &DVector<f64>) -> Result<(f64, DVector<f64>)> {
    if q.len() != p.len() {
        return Err(Error::DimensionMismatch(format!(
            "anchor is {}-D, device is {}-D",
            q.len(),
            p.len()
        )));
    }
    let d = q - p;
    let r = d.norm();
    if r < COINCIDENT_RANGE {
        return Err(Error::CoincidentGeometry { anchor, range: r });
    }
    Ok((r, d))
}

/// Noiseless request TOA at an anchor, `‖q − p‖ − B`.
pub fn request_toa_clean(q: &DVector<f64>, state: &UdState) -> Result<f64> {
    let (r, _) = range_to(0, q, &state.position)?;
    Ok(r - state.clock_offset)
}

/// Noiseless response TOA at the device, `‖q − p − v·δt‖ + B + Ω·δt`.
pub fn response_toa_clean(q: &DVector<f64>, state: &UdState, delay: f64) -> Result<f64> {
    let (r, _) = range_to(0, q, &state.position_at(delay))?;
    Ok(r + state.offset_at(delay))
}

fn check_layout(theta: &StateVector, anchors: &[DVector<f64>], delays: &[f64]) -> Result<()> {
    if anchors.is_empty() || anchors.len() != delays.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} anchors with {} delays",
            anchors.len(),
            delays.len()
        )));
    }
    if !theta.is_finite() {
        return Err(Error::InvalidScenario("state vector is not finite".into()));
    }
    Ok(())
}

/// Stacked forward model `h(θ)`: request rows first, then response rows.
pub fn eval_h(theta: &StateVector, anchors: &[DVector<f64>], delays: &[f64]) -> Result<DVector<f64>> {
    check_layout(theta, anchors, delays)?;
    let m = anchors.len();
    let state = theta.to_state();
    let mut h = DVector::zeros(2 * m);
    for (i, (q, &dt)) in anchors.iter().zip(delays).enumerate() {
        let (r_req, _) = range_to(i, q, &state.position)?;
        let (r_resp, _) = range_to(i, q, &state.position_at(dt))?;
        h[i] = r_req - state.clock_offset;
        h[m + i] = r_resp + state.offset_at(dt);
    }
    Ok(h)
}

/// Analytic Jacobian of [`eval_h`], `2M × (2N + 2)`, columns in
/// [`StateVector`] order `[p, B, Ω, v]`.
pub fn jacobian_h(theta: &StateVector, anchors: &[DVector<f64>], delays: &[f64]) -> Result<DMatrix<f64>> {
    check_layout(theta, anchors, delays)?;
    let n = theta.dim();
    let m = anchors.len();
    let state = theta.to_state();
    let b_col = StateVector::offset_index(n);
    let w_col = StateVector::drift_index(n);
    let v_col = StateVector::velocity_index(n);
    let mut jac = DMatrix::zeros(2 * m, 2 * n + 2);
    for (i, (q, &dt)) in anchors.iter().zip(delays).enumerate() {
        let (r, d) = range_to(i, q, &state.position)?;
        let u = d / r;
        let (r_t, d_t) = range_to(i, q, &state.position_at(dt))?;
        let u_t = d_t / r_t;
        for k in 0..n {
            jac[(i, k)] = -u[k];
            jac[(m + i, k)] = -u_t[k];
            jac[(m + i, v_col + k)] = -u_t[k] * dt;
        }
        jac[(i, b_col)] = -1.0;
        jac[(m + i, b_col)] = 1.0;
        jac[(m + i, w_col)] = dt;
    }
    Ok(jac)
}

/// Noiseless stacked measurements at the scenario's true state.
pub fn clean_measurements(scenario: &Scenario) -> Result<DVector<f64>> {
    let theta = StateVector::from_state(&scenario.ud);
    eval_h(&theta, &scenario.anchor_positions(), &scenario.schedule.delays)
}

/// Draws one set of noisy two-way measurements. Noise on the request block
/// uses each anchor's σᵢ; the response block draws an independent sample per
/// reply with the common device σ. Draw order: all request entries, then all
/// response entries.
pub fn simulate(scenario: &Scenario, rng_seed: u64) -> Result<TwoWayMeasurements> {
    simulate_with(scenario, &mut rng_from_seed(rng_seed))
}

/// [`simulate`] drawing from a caller-supplied generator.
pub fn simulate_with(scenario: &Scenario, rng: &mut impl Rng) -> Result<TwoWayMeasurements> {
    scenario.validate()?;
    let clean = clean_measurements(scenario)?;
    let m = scenario.num_anchors();
    let mut noise = |sigma: f64| -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        sigma * z
    };
    let rho = (0..m).map(|i| clean[i] + noise(scenario.sigma_an[i])).collect();
    let tau = (0..m).map(|i| clean[m + i] + noise(scenario.sigma_ud)).collect();
    Ok(TwoWayMeasurements {
        rho,
        tau,
        delays: scenario.schedule.delays.clone(),
        sigma_an: scenario.sigma_an.clone(),
        sigma_ud: scenario.sigma_ud,
    })
}
