//! Run configuration, read from JSON or TOML with defaults for anything omitted.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::blend::{BlendConfig, OcclusionMode};
use crate::correspondence::DensityConfig;
use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::eval::MsSsimConfig;
use crate::registration::{MeshConfig, RansacConfig};
use crate::solver::SolverConfig;

/// Extent of the output canvas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CanvasPolicy {
    /// Bounding box of every warped input.
    #[default]
    Union,
    /// The reference image frame only.
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StitchConfig {
    pub seed: u64,
    pub canvas: CanvasPolicy,
    pub occlusion_mode: OcclusionMode,
    /// Refine registrations with a mesh, from a flow file when given and
    /// from the registration inliers otherwise.
    pub use_mesh: bool,
    /// Sampling step over flow grids.
    pub flow_stride: usize,
    pub energy: EnergyParams,
    pub ransac: RansacConfig,
    pub density: DensityConfig,
    pub mesh: MeshConfig,
    pub solver: SolverConfig,
    pub blend: BlendConfig,
    pub ms_ssim: MsSsimConfig,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            canvas: CanvasPolicy::default(),
            occlusion_mode: OcclusionMode::default(),
            use_mesh: true,
            flow_stride: 4,
            energy: EnergyParams::default(),
            ransac: RansacConfig::default(),
            density: DensityConfig::default(),
            mesh: MeshConfig::default(),
            solver: SolverConfig::default(),
            blend: BlendConfig::default(),
            ms_ssim: MsSsimConfig::default(),
        }
    }
}

impl StitchConfig {
    pub fn validate(&self) -> Result<()> {
        self.energy.validate()?;
        self.ransac.validate()?;
        self.density.validate()?;
        self.ms_ssim.validate()?;
        if !(self.blend.tolerance > 0.0) {
            return Err(Error::Config("blend tolerance must be positive".into()));
        }
        Ok(())
    }

    /// Parses JSON when the text starts with `{`, TOML otherwise.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: StitchConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }
}
