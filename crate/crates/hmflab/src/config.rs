//! Versioned JSON run configuration. Unknown keys are rejected, every
//! parameter is echoed verbatim into the run manifest, and the seed fully
//! determines all stochastic choices.

use crate::candidates::DictionaryConfig;
use crate::error::{Error, Result};
use crate::strata::StrataParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CONFIG_VERSION: u32 = 1;

/// Which trajectory the run studies: an exact model field or a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldConfig {
    Constant {
        value: Vec<f64>,
    },
    StaticCone {
        axes: Vec<usize>,
    },
    QuasistaticCone {
        axes: Vec<usize>,
        t_trunc: f64,
    },
    Shrinking {
        ell: usize,
        rho_max: f64,
    },
    Simulated {
        n_cells: usize,
        t_end: f64,
        record_every: usize,
        /// CFL safety factor in (0, 1/2].
        sigma: f64,
        /// Amplitude of the seeded tangential noise on the initial data.
        noise_amp: f64,
        /// Fourier wave vector of the smooth base map.
        wave: Vec<f64>,
    },
}

impl FieldConfig {
    pub fn kind_name(&self) -> &'static str {
        match self {
            FieldConfig::Constant { .. } => "constant",
            FieldConfig::StaticCone { .. } => "static_cone",
            FieldConfig::QuasistaticCone { .. } => "quasistatic_cone",
            FieldConfig::Shrinking { .. } => "shrinking",
            FieldConfig::Simulated { .. } => "simulated",
        }
    }
}

/// Sample cloud: a seeded uniform draw from a space-time box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudConfig {
    pub n_points: usize,
    pub box_half: f64,
    pub t_min: f64,
    pub t_max: f64,
}

/// Quadrature density for annulus energies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadConfig {
    pub n_space: usize,
    pub n_time: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Domain dimension.
    pub m: usize,
    /// Target sphere dimension; maps take values in R^{n+1}.
    pub n: usize,
    pub field: FieldConfig,
    pub scales: StrataParams,
    /// Symmetry levels whose strata are labeled.
    pub j_list: Vec<usize>,
    /// Inner scale of the strata ladder.
    pub r: f64,
    /// Outer scale of the strata ladder.
    pub big_r: f64,
    pub dictionary: DictionaryConfig,
    pub cloud: CloudConfig,
    /// Tubular-neighborhood radii for the Minkowski fit.
    pub radii: Vec<f64>,
    pub quad: QuadConfig,
    pub seed: u64,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        if self.m < 1 || self.m > 4 {
            return Err(Error::Config(format!("m = {} out of range 1..=4", self.m)));
        }
        if self.n < 1 {
            return Err(Error::Config("target sphere dimension n must be >= 1".into()));
        }
        self.scales.validate()?;
        if !(self.r > 0.0 && self.big_r > self.r) {
            return Err(Error::Config(format!(
                "strata ladder needs 0 < r < R, got r = {}, R = {}",
                self.r, self.big_r
            )));
        }
        if self.cloud.n_points == 0 || self.cloud.t_max <= self.cloud.t_min {
            return Err(Error::Config("cloud needs points and t_min < t_max".into()));
        }
        if self.radii.len() < 4 {
            return Err(Error::Config("need at least 4 tubular radii".into()));
        }
        if self.quad.n_space < 4 || self.quad.n_time < 1 {
            return Err(Error::Config("quadrature density too low".into()));
        }
        match &self.field {
            FieldConfig::Constant { value } => {
                if value.len() != self.n + 1 {
                    return Err(Error::Config("constant value has wrong dimension".into()));
                }
            }
            FieldConfig::StaticCone { axes } | FieldConfig::QuasistaticCone { axes, .. } => {
                if axes.len() != 3 || axes.iter().any(|&a| a >= self.m) {
                    return Err(Error::Config("cone axes must be 3 distinct indices < m".into()));
                }
            }
            FieldConfig::Shrinking { ell, rho_max } => {
                if *ell < 3 || *ell > self.m || *ell + 1 > self.n + 1 {
                    return Err(Error::Config(format!(
                        "shrinking equivariance ell = {ell} needs 3 <= ell <= m and ell <= n"
                    )));
                }
                if *rho_max < 6.0 {
                    return Err(Error::Config("shrinking rho_max must be >= 6".into()));
                }
            }
            FieldConfig::Simulated { n_cells, t_end, record_every, sigma, wave, .. } => {
                if *n_cells < 8 || *t_end <= 0.0 || *record_every == 0 {
                    return Err(Error::Config("simulation sizing invalid".into()));
                }
                if !(*sigma > 0.0 && *sigma <= 0.5) {
                    return Err(Error::Config("CFL safety factor must be in (0, 1/2]".into()));
                }
                if wave.len() != self.m {
                    return Err(Error::Config("wave vector must have length m".into()));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        RunConfig::from_json(&text)
    }

    /// Baseline config used by tests and as a documentation template.
    pub fn example() -> RunConfig {
        RunConfig {
            version: CONFIG_VERSION,
            m: 3,
            n: 2,
            field: FieldConfig::StaticCone { axes: vec![0, 1, 2] },
            scales: StrataParams { gamma: 0.25, q: 1, delta: 5.0, beta: 5, eta: 0.01 },
            j_list: vec![2],
            r: 0.25f64.powi(5),
            big_r: 0.5,
            dictionary: DictionaryConfig::default(),
            cloud: CloudConfig { n_points: 24, box_half: 0.5, t_min: -0.5, t_max: 0.5 },
            radii: (3..=6).map(|k| 0.5f64.powi(k)).collect(),
            quad: QuadConfig { n_space: 12, n_time: 3 },
            seed: 7,
        }
    }
}
