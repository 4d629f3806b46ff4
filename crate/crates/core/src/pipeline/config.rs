use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::deform::{BijectiveConfig, DgsDeformConfig};
use crate::density::DensityConfig;
use crate::losses::LossWeights;
use crate::render::RasterConfig;
use crate::surface::{SamplingConfig, SdfConfig};
use crate::{Error, Result};

/// Iteration at which each phase begins, for a run of `total` iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schedule {
    pub total: usize,
    /// Splat deformation network joins.
    pub deform_start: usize,
    /// Splat depth guides ray sampling and supervises the SDF.
    pub guidance_start: usize,
    /// Density control starts using the SDF distance.
    pub geometry_start: usize,
    /// Guided interval scale drops from `s_early` to `s_late`.
    pub s_switch: usize,
    /// Normal supervision of both branches.
    pub normal_start: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            total: 40_000,
            deform_start: 3_000,
            guidance_start: 10_000,
            geometry_start: 15_000,
            s_switch: 20_000,
            normal_start: 10_000,
        }
    }
}

impl Schedule {
    /// Every boundary multiplied by `factor`, rounded to the nearest iteration.
    pub fn scaled(&self, factor: f64) -> Self {
        let s = |v: usize| (v as f64 * factor).round() as usize;
        Self {
            total: s(self.total).max(1),
            deform_start: s(self.deform_start),
            guidance_start: s(self.guidance_start),
            geometry_start: s(self.geometry_start),
            s_switch: s(self.s_switch),
            normal_start: s(self.normal_start),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = self.deform_start <= self.total
            && self.guidance_start <= self.geometry_start
            && self.geometry_start <= self.total
            && self.guidance_start <= self.s_switch
            && self.s_switch <= self.total
            && self.normal_start <= self.total;
        if ordered {
            Ok(())
        } else {
            Err(Error::Config(format!("schedule boundaries out of order: {self:?}")))
        }
    }
}

/// Which splat depth map supervises the SDF.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DepthSupervision {
    None,
    /// α-blended depth where accumulated alpha exceeds 0.5.
    Alpha,
    /// Filtered depth on its validity mask.
    Filtered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    /// Position rate at the end of training; decays exponentially.
    pub position_final: f64,
    pub rotation: f64,
    pub scaling: f64,
    pub opacity: f64,
    pub sh: f64,
    pub deform: f64,
    pub sdf_grid: f64,
    pub sdf_net: f64,
    pub surface_deform: f64,
    pub inv_s: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 1.6e-4,
            position_final: 1.6e-6,
            rotation: 1e-3,
            scaling: 5e-3,
            opacity: 0.05,
            sh: 2.5e-3,
            deform: 8e-4,
            sdf_grid: 1e-2,
            sdf_net: 5e-4,
            surface_deform: 5e-4,
            inv_s: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub init_gaussians: usize,
    pub init_opacity: f64,
    /// Initial isotropic scale; `None` means 0.005 × box diagonal.
    pub init_scale: Option<f64>,
    pub sh_degree: usize,
    pub near: f64,
    pub dgs_deform: DgsDeformConfig,
    /// Off trains a static surface.
    pub dynamic_surface: bool,
    pub surface_deform: BijectiveConfig,
    pub sdf: SdfConfig,
    pub sphere_fit_steps: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            init_gaussians: 5_000,
            init_opacity: 0.1,
            init_scale: None,
            sh_degree: 1,
            near: 0.01,
            dgs_deform: DgsDeformConfig::default(),
            dynamic_surface: true,
            surface_deform: BijectiveConfig::default(),
            sdf: SdfConfig::default(),
            sphere_fit_steps: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    /// Schedule at full length; the run uses `schedule.scaled(scale)`.
    pub schedule: Schedule,
    pub scale: f64,
    pub downscale: usize,
    pub rays_per_batch: usize,
    /// Filtered-depth points per step for the SDF term.
    pub sdf_points: usize,
    /// Eikonal points per step, half near the surface and half uniform.
    pub eikonal_points: usize,
    pub s_early: f64,
    pub s_late: f64,
    /// Train the surface branch at all; off gives plain deformable splatting.
    pub dns: bool,
    /// Splat depth proposals for ray sampling; off samples every ray uniformly.
    pub guided_sampling: bool,
    pub depth_supervision: DepthSupervision,
    pub normal_supervision: bool,
    /// Composite transparent training images over a fresh random color each step.
    pub random_background: bool,
    pub weights: LossWeights,
    pub lr: LearningRates,
    pub density: DensityConfig,
    pub raster: RasterConfig,
    pub sampling: SamplingConfig,
    pub model: ModelConfig,
    /// Iterations between checkpoints; 0 saves only at the end.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            schedule: Schedule::default(),
            scale: 1.0,
            downscale: 1,
            rays_per_batch: 1024,
            sdf_points: 256,
            eikonal_points: 256,
            s_early: 3.0,
            s_late: 1.0,
            dns: true,
            guided_sampling: true,
            random_background: true,
            depth_supervision: DepthSupervision::Filtered,
            normal_supervision: true,
            weights: LossWeights::default(),
            lr: LearningRates::default(),
            density: DensityConfig::default(),
            raster: RasterConfig::default(),
            sampling: SamplingConfig::default(),
            model: ModelConfig::default(),
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    /// Small networks and batches that train the analytic scenes on a laptop CPU.
    pub fn desk() -> Self {
        let mut c = Self {
            scale: 0.05,
            downscale: 1,
            rays_per_batch: 96,
            sdf_points: 128,
            eikonal_points: 64,
            ..Self::default()
        };
        c.lr.position = 8e-4;
        c.lr.position_final = 4e-5;
        c.lr.deform = 2e-3;
        c.lr.sdf_grid = 1e-3;
        c.lr.sdf_net = 2e-3;
        c.lr.surface_deform = 1e-3;
        c.lr.inv_s = 5e-3;
        c.sampling = SamplingConfig {
            guided_samples: 16,
            uniform_samples: 32,
            min_half_width: 0.05,
        };
        c.weights.lambda_eik = 0.5;
        c.density.interval = 100;
        c.density.window = 100;
        c.density.max_gaussians = 10_000;
        c.model.init_gaussians = 2_000;
        c.model.sh_degree = 0;
        c.model.sphere_fit_steps = 150;
        c.model.dgs_deform = DgsDeformConfig {
            depth: 3,
            width: 64,
            position_freqs: 6,
            time_freqs: 4,
        };
        c.model.surface_deform = BijectiveConfig {
            blocks: 3,
            hidden_width: 32,
            hidden_layers: 1,
            position_freqs: 4,
            time_freqs: 3,
            scale_bound: 1.0,
        };
        c.model.sdf.hidden_width = 32;
        c.model.sdf.layers = 3;
        c.model.sdf.feature_dim = 8;
        c.model.sdf.color_width = 32;
        c.model.sdf.color_hidden_layers = 1;
        c.model.sdf.grid.levels = 6;
        c.model.sdf.grid.log2_table_size = 13;
        c.model.sdf.grid.max_resolution = 96;
        c
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Phase boundaries of this run.
    pub fn run_schedule(&self) -> Schedule {
        self.schedule.scaled(self.scale)
    }

    /// Density control with its iteration bounds scaled like the schedule.
    pub fn run_density(&self) -> DensityConfig {
        let s = |v: usize| (v as f64 * self.scale).round() as usize;
        DensityConfig {
            start: s(self.density.start),
            until: self.density.until.map(s),
            ..self.density.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::Config(format!("scale must be positive, got {}", self.scale)));
        }
        if self.downscale == 0 || self.rays_per_batch == 0 {
            return Err(Error::Config("downscale and rays_per_batch must be at least 1".into()));
        }
        if self.model.init_gaussians == 0 || !(self.model.init_opacity > 0.0 && self.model.init_opacity < 1.0) {
            return Err(Error::Config("need at least one Gaussian and an initial opacity in (0, 1)".into()));
        }
        if self.model.sh_degree > 1 {
            return Err(Error::Config("SH degree above 1 is not supported".into()));
        }
        if self.sampling.guided_samples == 0 || self.sampling.uniform_samples == 0 {
            return Err(Error::Config("sample counts must be at least 1".into()));
        }
        self.weights.validate()?;
        self.schedule.validate()?;
        self.run_schedule().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_scale_boundaries() {
        let s = Schedule::default().scaled(0.05);
        assert_eq!((s.total, s.guidance_start, s.geometry_start, s.s_switch), (2000, 500, 750, 1000));
        assert_eq!(s.deform_start, 150);
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let c = TrainConfig::desk();
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
        let p = TrainConfig::from_toml("scale = 0.1\ndepth_supervision = \"alpha\"\n[weights]\nlambda_i = 0.5\n").unwrap();
        assert_eq!(p.depth_supervision, DepthSupervision::Alpha);
        assert_eq!(p.weights.lambda_gn, 0.1);
        assert_eq!(p.run_schedule().total, 4000);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(TrainConfig::from_toml("scale = 0.0").is_err());
        assert!(TrainConfig::from_toml("[weights]\nlambda_i = 1.5").is_err());
        assert!(TrainConfig::from_toml("[schedule]\ngeometry_start = 50000").is_err());
        assert!(TrainConfig::from_toml("bogus = [").is_err());
    }
}
