use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Anchor, Scenario, Schedule, UdState, SPEED_OF_LIGHT};

use super::config::CampaignConfig;

/// Independent random streams derived from one per-run seed. Scenario,
/// measurement noise and the Gauss-Newton start never share draws, so
/// enabling or disabling a method cannot shift another's data.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Scenario = 1,
    Noise = 2,
    Init = 3,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// Vertices of an axis-aligned cube (square for `dim = 2`) of the given
/// edge length centered at the origin, in binary counting order.
///
/// With reply delays proportional to the anchor index, `Σ 2^k q_ik` is
/// affine in the index, so the relaxation cannot see the velocity component
/// along `(1, 2, 4)`: its velocity readout is unreliable while its position
/// is unaffected. A Gray-code order identifies the velocity but gave worse
/// positions, so this order is kept.
pub fn cube_anchors(edge: f64, dim: usize) -> Vec<DVector<f64>> {
    let h = edge / 2.0;
    (0..1usize << dim)
        .map(|bits| DVector::from_fn(dim, |k, _| if bits >> k & 1 == 1 { h } else { -h }))
        .collect()
}

/// Unit vector from yaw and elevation; the elevation is ignored in 2-D.
fn direction(dim: usize, yaw: f64, elevation: f64) -> DVector<f64> {
    if dim == 2 {
        DVector::from_vec(vec![yaw.cos(), yaw.sin()])
    } else {
        DVector::from_vec(vec![
            elevation.cos() * yaw.cos(),
            elevation.cos() * yaw.sin(),
            elevation.sin(),
        ])
    }
}

/// Draws one scenario. `speed` fixes the velocity magnitude (direction still
/// random); otherwise it is drawn from the prior. Draw order: position axes,
/// clock offset, clock drift, speed, yaw, elevation.
pub fn sample_scenario(config: &CampaignConfig, sigma: f64, speed: Option<f64>, seed: u64) -> Scenario {
    let g = &config.geometry;
    let pr = &config.priors;
    let mut rng = stream_rng(seed, Stream::Scenario);
    let position = DVector::from_fn(g.dim, |_, _| (rng.gen::<f64>() - 0.5) * g.ud_edge);
    let clock_offset = rng.gen::<f64>() * pr.max_offset_s * SPEED_OF_LIGHT;
    let clock_drift = (2.0 * rng.gen::<f64>() - 1.0) * pr.max_drift_ppm * 1e-6 * SPEED_OF_LIGHT;
    let drawn_speed = rng.gen::<f64>() * pr.max_speed;
    let yaw = rng.gen::<f64>() * 2.0 * PI;
    let elevation = (2.0 * rng.gen::<f64>() - 1.0) * FRAC_PI_2;
    let velocity = direction(g.dim, yaw, elevation) * speed.unwrap_or(drawn_speed);

    let anchors: Vec<Anchor> = cube_anchors(g.anchor_edge, g.dim)
        .into_iter()
        .enumerate()
        .map(|(i, q)| Anchor::new(i, q))
        .collect();
    let m = anchors.len();
    Scenario {
        anchors,
        ud: UdState { position, velocity, clock_offset, clock_drift },
        schedule: Schedule::uniform(m, g.delay_spacing),
        sigma_an: vec![sigma; m],
        sigma_ud: sigma,
        c: SPEED_OF_LIGHT,
    }
}
