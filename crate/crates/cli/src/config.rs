//! Run configuration: defaults, TOML file, then command-line overrides.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use uneven_planner::optimizer::PlannerConfig;
use uneven_planner::terrain_map::FitParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// XY node spacing, meters.
    pub resolution: f64,
    pub theta_bins: usize,
    /// `[x_min, y_min, x_max, y_max]`; the cloud's XY extent when absent.
    pub bounds: Option<[f64; 4]>,
    pub n_iter: usize,
    /// Ellipsoid semi-axes `[e_x, e_y, e_z]`, meters.
    pub semi_axes: [f64; 3],
}

impl Default for MapConfig {
    fn default() -> Self {
        let fit = FitParams::default();
        Self {
            resolution: 0.1,
            theta_bins: 36,
            bounds: None,
            n_iter: fit.n_iter,
            semi_axes: fit.semi_axes,
        }
    }
}

impl MapConfig {
    pub fn fit_params(&self) -> FitParams {
        FitParams {
            n_iter: self.n_iter,
            semi_axes: self.semi_axes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrontendConfig {
    /// Target xy piece length of the initial guess, meters.
    pub piece_length: f64,
    /// Cruise speed of the initial guess; half of `v_max` when absent.
    pub v_init: Option<f64>,
    pub max_expansions: usize,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            piece_length: 1.0,
            v_init: None,
            max_expansions: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportConfig {
    /// Rate of the sampled trajectory CSV, Hz.
    pub sample_rate_hz: f64,
    /// Rate of the chord sums behind length and mean curvature, Hz.
    pub metrics_rate_hz: f64,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 100.0,
            metrics_rate_hz: 1000.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub map: MapConfig,
    pub planner: PlannerConfig,
    pub frontend: FrontendConfig,
    pub export: ExportConfig,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.map;
        if !(m.resolution > 0.0 && m.resolution.is_finite()) {
            bail!("map.resolution must be positive, got {}", m.resolution);
        }
        if m.theta_bins == 0 || m.n_iter == 0 {
            bail!("map.theta_bins and map.n_iter must be at least 1");
        }
        if !m.semi_axes.iter().all(|e| *e > 0.0 && e.is_finite()) {
            bail!("map.semi_axes must be positive, got {:?}", m.semi_axes);
        }
        if let Some([x0, y0, x1, y1]) = m.bounds {
            if !(x0 < x1 && y0 < y1) {
                bail!("map.bounds must be [x_min, y_min, x_max, y_max] with min < max");
            }
        }
        let f = &self.frontend;
        if !(f.piece_length > 0.0 && f.piece_length.is_finite()) {
            bail!("frontend.piece_length must be positive, got {}", f.piece_length);
        }
        if f.v_init.is_some_and(|v| !(v > 0.0 && v.is_finite())) {
            bail!("frontend.v_init must be positive");
        }
        if f.max_expansions == 0 {
            bail!("frontend.max_expansions must be at least 1");
        }
        let e = &self.export;
        if !(e.sample_rate_hz > 0.0 && e.metrics_rate_hz > 0.0) {
            bail!("export rates must be positive");
        }
        self.planner.validate()?;
        Ok(())
    }
}
