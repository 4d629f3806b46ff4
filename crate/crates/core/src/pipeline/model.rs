use std::path::Path;

use rand::Rng;
use serde_json::json;

use super::config::TrainConfig;
use crate::aabb::Aabb;
use crate::autodiff::checkpoint::{load_arrays, save_arrays, NamedArray};
use crate::autodiff::{ParamStore, Tape};
use crate::deform::{BijectiveDeformation, DgsDeformNet};
use crate::gaussian::{project_batch, Camera, GaussianScene, GaussianVars};
use crate::mesh::{extract_surface, TriangleMesh};
use crate::render::{render_batch, RenderOutput};
use crate::surface::{DynamicSurface, SdfField};
use crate::{Error, Result};

const GAUSSIANS: &str = "gaussians";

/// Both branches and their parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: TrainConfig,
    pub bounds: Aabb,
    pub store: ParamStore,
    pub gaussians: GaussianScene,
    pub deform: DgsDeformNet,
    pub surface: DynamicSurface,
}

/// Radius of the initial SDF sphere: the configured one, or 0.3 × diagonal
/// capped so the sphere stays inside the box.
pub fn init_radius(cfg: &TrainConfig, bounds: &Aabb) -> f64 {
    cfg.model
        .sdf
        .init_radius
        .unwrap_or_else(|| (0.3 * bounds.diagonal()).min(0.75 * bounds.half_size()))
}

impl Model {
    /// Fresh model: Gaussians uniform in the box, identity deformations and an
    /// SDF fitted to a sphere at the box center.
    pub fn new(config: &TrainConfig, bounds: Aabb, rng: &mut impl Rng) -> Result<Self> {
        let mut m = Self::skeleton(config, bounds, config.model.init_gaussians, rng)?;
        let radius = init_radius(config, &bounds);
        if config.model.sphere_fit_steps > 0 {
            m.surface
                .field
                .fit_sphere(&mut m.store, bounds.center(), radius, config.model.sphere_fit_steps, rng);
        }
        Ok(m)
    }

    fn skeleton(config: &TrainConfig, bounds: Aabb, n: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mc = &config.model;
        let mut store = ParamStore::new();
        let scale = mc.init_scale.unwrap_or(0.005 * bounds.diagonal());
        let gaussians = GaussianScene::random_in_box(
            &mut store,
            GAUSSIANS,
            n,
            bounds.min,
            bounds.max,
            scale,
            mc.init_opacity,
            mc.sh_degree,
            rng,
        );
        let deform = DgsDeformNet::new(&mut store, "dgs_deform", &mc.dgs_deform, rng);
        let mut sdf_cfg = mc.sdf.clone();
        sdf_cfg.init_radius = Some(init_radius(config, &bounds));
        let field = SdfField::new(&mut store, "sdf", &sdf_cfg, bounds, rng);
        let hmap = mc
            .dynamic_surface
            .then(|| BijectiveDeformation::new(&mut store, "surface_deform", &mc.surface_deform, rng));
        Ok(Self {
            config: config.clone(),
            bounds,
            store,
            gaussians,
            deform,
            surface: DynamicSurface { field, deform: hmap },
        })
    }

    /// Whether the splat deformation is applied after `iteration` completed steps.
    pub fn deform_active(&self, iteration: usize) -> bool {
        iteration >= self.config.run_schedule().deform_start
    }

    /// Observation-space Gaussians at time `t`, on the tape.
    pub fn gaussian_vars<'t>(&self, tape: &'t Tape, t: f64, deform: bool) -> GaussianVars<'t> {
        let mut g = self.gaussians.vars(tape, &self.store);
        if deform {
            let off = self.deform.forward(tape, &self.store, g.position, t);
            g.position = g.position + off.position;
            g.rotation = g.rotation + off.rotation;
            g.log_scales = g.log_scales + off.log_scales;
        }
        g
    }

    /// Splat centers at time `t`.
    pub fn deformed_centers(&self, t: f64, deform: bool) -> Vec<[f64; 3]> {
        let tape = Tape::new();
        let p = self.gaussian_vars(&tape, t, deform).position.value();
        p.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }

    /// Splat render without gradients.
    pub fn render(&self, cam: &Camera, t: f64, deform: bool) -> RenderOutput {
        let tape = Tape::new();
        let g = self.gaussian_vars(&tape, t, deform);
        let batch = project_batch(&g, cam, self.gaussians.sh_degree, self.config.model.near);
        let output = render_batch(&batch, cam.width, cam.height, &self.config.raster).output;
        drop(batch);
        drop(tape);
        std::sync::Arc::try_unwrap(output).unwrap_or_else(|a| (*a).clone())
    }

    /// Zero level set of the surface at time `t` on an `n`³ grid over the box.
    pub fn mesh(&self, t: f64, n: usize) -> Result<TriangleMesh> {
        extract_surface(&self.surface, &self.store, t, &self.bounds, n)
    }

    /// Writes every parameter plus the config, box and iteration (atomic).
    pub fn save(&self, path: &Path, iteration: usize) -> Result<()> {
        let arrays: Vec<NamedArray> = self
            .store
            .iter()
            .map(|(_, p)| NamedArray {
                name: p.name.clone(),
                shape: p.shape.clone(),
                values: p.values.clone(),
            })
            .collect();
        let meta = json!({
            "config": self.config,
            "bounds": self.bounds,
            "iteration": iteration,
        });
        save_arrays(path, &arrays, meta)
    }

    /// Rebuilds the model from the stored config and restores every parameter.
    /// Returns the iteration the checkpoint was taken at.
    pub fn load(path: &Path) -> Result<(Self, usize)> {
        let (arrays, meta) = load_arrays(path)?;
        let bad = |m: String| Error::Checkpoint {
            path: path.to_path_buf(),
            message: m,
        };
        let config: TrainConfig = serde_json::from_value(meta["config"].clone()).map_err(|e| bad(format!("config: {e}")))?;
        let bounds: Aabb = serde_json::from_value(meta["bounds"].clone()).map_err(|e| bad(format!("bounds: {e}")))?;
        let iteration = meta["iteration"].as_u64().ok_or_else(|| bad("missing iteration".into()))? as usize;
        let n = arrays
            .iter()
            .find(|a| a.name == format!("{GAUSSIANS}.position"))
            .map(|a| a.shape[0])
            .ok_or_else(|| bad("no Gaussian positions".into()))?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);
        let mut m = Self::skeleton(&config, bounds, n, &mut rng)?;
        if arrays.len() != m.store.len() {
            return Err(bad(format!("{} arrays, model has {} parameters", arrays.len(), m.store.len())));
        }
        for a in arrays {
            let id = m.store.id(&a.name).ok_or_else(|| bad(format!("unknown parameter {}", a.name)))?;
            if m.store.get(id).values.len() != a.values.len() {
                return Err(bad(format!("parameter {} has {} values, expected {}", a.name, a.values.len(), m.store.get(id).values.len())));
            }
            m.store.replace(id, &a.shape, a.values);
        }
        m.gaussians = GaussianScene::attach(&m.store, GAUSSIANS, config.model.sh_degree).ok_or_else(|| bad("Gaussian parameters missing".into()))?;
        Ok((m, iteration))
    }
}
