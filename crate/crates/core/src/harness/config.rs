use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gn::GnSettings;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SdpM,
    GaussNewton,
    SdpStationary,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SdpM, Method::GaussNewton, Method::SdpStationary];

    pub fn name(self) -> &'static str {
        match self {
            Method::SdpM => "sdp_m",
            Method::GaussNewton => "gauss_newton",
            Method::SdpStationary => "sdp_stationary",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Parse(format!("unknown method `{s}` (expected sdp_m, gauss_newton or sdp_stationary)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub dim: usize,
    /// Edge of the cube whose vertices hold the anchors, m.
    pub anchor_edge: f64,
    /// Edge of the cube the device is drawn from, m. Same center.
    pub ud_edge: f64,
    /// Anchor `i` replies `i · delay_spacing` seconds after the request.
    pub delay_spacing: f64,
}

impl Default for Geometry {
    fn default() -> Self {
        Self { dim: 3, anchor_edge: 600.0, ud_edge: 700.0, delay_spacing: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Priors {
    /// Clock offset is uniform on `[0, max_offset_s]` seconds.
    pub max_offset_s: f64,
    /// Clock drift is uniform on `±max_drift_ppm`.
    pub max_drift_ppm: f64,
    /// Speed is uniform on `[0, max_speed]` m/s with a uniform random yaw
    /// and elevation.
    pub max_speed: f64,
}

impl Default for Priors {
    fn default() -> Self {
        Self { max_offset_s: 20e-6, max_drift_ppm: 10.0, max_speed: 60.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: usize,
    pub tol_gap: f64,
    pub tol_feas: f64,
    /// Extra iterations spent improving on the first converged iterate.
    pub polish_iters: usize,
    /// Weight of the `ε(y + f)` term of the relaxation.
    pub regularization: f64,
    /// Constrain response ranges to be nonnegative as well as request ranges.
    pub nonneg_response_ranges: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol_gap: 1e-8,
            tol_feas: 1e-8,
            polish_iters: 30,
            regularization: 1e-7,
            nonneg_response_ranges: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignConfig {
    pub seed: u64,
    pub runs: usize,
    /// Noise standard deviation of every measurement, one cell each, m.
    pub noise: Vec<f64>,
    pub methods: Vec<Method>,
    /// Speed grid of the speed sweep, m/s.
    pub speeds: Vec<f64>,
    /// Noise level used by the speed sweep, m.
    pub sweep_noise: f64,
    pub geometry: Geometry,
    pub priors: Priors,
    pub gauss_newton: GnSettings,
    pub solver: SolverConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            runs: 500,
            noise: vec![0.10, 0.46, 2.15, 10.00],
            methods: vec![Method::SdpM, Method::GaussNewton],
            speeds: vec![0.0, 15.0, 30.0, 45.0, 60.0],
            sweep_noise: 0.1,
            geometry: Geometry::default(),
            priors: Priors::default(),
            gauss_newton: GnSettings::default(),
            solver: SolverConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidScenario(msg));
        if self.runs == 0 {
            return bad("runs must be at least 1".into());
        }
        if self.noise.is_empty() || self.noise.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return bad(format!("noise levels must be positive, got {:?}", self.noise));
        }
        if !(self.sweep_noise.is_finite() && self.sweep_noise > 0.0) {
            return bad(format!("sweep noise must be positive, got {}", self.sweep_noise));
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let g = &self.geometry;
        if !(g.dim == 2 || g.dim == 3) {
            return bad(format!("dimension must be 2 or 3, got {}", g.dim));
        }
        for (name, v) in [
            ("anchor_edge", g.anchor_edge),
            ("ud_edge", g.ud_edge),
            ("delay_spacing", g.delay_spacing),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let p = &self.priors;
        for (name, v) in [
            ("max_offset_s", p.max_offset_s),
            ("max_drift_ppm", p.max_drift_ppm),
            ("max_speed", p.max_speed),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and nonnegative, got {v}"));
            }
        }
        if self.speeds.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad(format!("speeds must be finite and nonnegative, got {:?}", self.speeds));
        }
        if self.gauss_newton.max_iter == 0 || self.gauss_newton.tol.is_nan() || self.gauss_newton.tol <= 0.0 {
            return bad("Gauss-Newton needs max_iter ≥ 1 and a positive tolerance".into());
        }
        if !(self.solver.regularization.is_finite() && self.solver.regularization >= 0.0) {
            return bad(format!("regularization must be finite and nonnegative, got {}", self.solver.regularization));
        }
        self.ipm_settings(false).validate()
    }

    pub fn ipm_settings(&self, verbose: bool) -> crate::conic::IpmSettings {
        crate::conic::IpmSettings {
            max_iter: self.solver.max_iter,
            tol_gap: self.solver.tol_gap,
            tol_feas: self.solver.tol_feas,
            polish_iters: self.solver.polish_iters,
            verbose,
            ..Default::default()
        }
    }

    pub fn sdp_options(&self, verbose: bool) -> crate::sdp::SdpOptions {
        crate::sdp::SdpOptions {
            nonneg_response_ranges: self.solver.nonneg_response_ranges,
            regularization: self.solver.regularization,
            solver: self.ipm_settings(verbose),
            ..Default::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = CampaignConfig::default();
        assert_eq!(CampaignConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_file_keeps_defaults() {
        let c = CampaignConfig::from_toml("runs = 7\nmethods = [\"gauss_newton\"]\n[geometry]\nanchor_edge = 100.0\n").unwrap();
        assert_eq!(c.runs, 7);
        assert_eq!(c.methods, vec![Method::GaussNewton]);
        assert_eq!(c.geometry.anchor_edge, 100.0);
        assert_eq!(c.geometry.ud_edge, 700.0);
        assert_eq!(c.noise, CampaignConfig::default().noise);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(CampaignConfig::from_toml("runs = 0").is_err());
        assert!(CampaignConfig::from_toml("noise = [0.1, 0.0]").is_err());
        assert!(CampaignConfig::from_toml("noise = []").is_err());
        assert!(CampaignConfig::from_toml("bogus = 1").is_err());
        assert!(CampaignConfig::from_toml("methods = [\"simplex\"]").is_err());
    }

    #[test]
    fn method_names_parse_back() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
