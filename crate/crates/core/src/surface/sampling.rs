use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::autodiff::ParamStore;

use super::dynamic::DynamicSurface;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    pub guided_samples: usize,
    pub uniform_samples: usize,
    /// Smallest half-width of a guided interval, scene units.
    pub min_half_width: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            guided_samples: 32,
            uniform_samples: 64,
            min_half_width: 0.01,
        }
    }
}

/// Rays with a fixed number of samples each; depths are distances along unit directions.
#[derive(Debug, Clone, PartialEq)]
pub struct RaySampleBatch {
    pub origins: Vec<[f64; 3]>,
    pub dirs: Vec<[f64; 3]>,
    /// `[rays * samples]`, strictly increasing within each ray.
    pub depths: Vec<f64>,
    pub samples: usize,
}

impl RaySampleBatch {
    pub fn empty(samples: usize) -> Self {
        Self {
            origins: Vec::new(),
            dirs: Vec::new(),
            depths: Vec::new(),
            samples,
        }
    }

    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn push(&mut self, origin: [f64; 3], dir: [f64; 3], depths: &[f64]) {
        assert_eq!(depths.len(), self.samples);
        self.origins.push(origin);
        self.dirs.push(dir);
        self.depths.extend_from_slice(depths);
    }

    /// Observation-space sample positions, ray-major.
    pub fn points(&self) -> Vec<[f64; 3]> {
        let mut out = Vec::with_capacity(self.depths.len());
        for (r, (o, d)) in self.origins.iter().zip(&self.dirs).enumerate() {
            for &z in &self.depths[r * self.samples..(r + 1) * self.samples] {
                out.push(std::array::from_fn(|k| o[k] + z * d[k]));
            }
        }
        out
    }
}

/// Search interval around a depth proposal, widened by the field's distance estimate.
pub fn guided_interval(depth: f64, sdf: f64, scale: f64, min_half_width: f64) -> (f64, f64) {
    let half = (scale * sdf.abs()).max(min_half_width);
    (depth - half, depth + half)
}

/// `n` stratified depths in `[lo, hi]`: one per equal bin, jittered when an rng is given,
/// bin centers otherwise.
pub fn stratified<R: Rng>(lo: f64, hi: f64, n: usize, rng: Option<&mut R>) -> Vec<f64> {
    assert!(n >= 1 && hi > lo, "bad sampling interval [{lo}, {hi}] x {n}");
    let step = (hi - lo) / n as f64;
    match rng {
        Some(rng) => (0..n).map(|i| lo + (i as f64 + rng.gen_range(0.0..1.0)) * step).collect(),
        None => (0..n).map(|i| lo + (i as f64 + 0.5) * step).collect(),
    }
}

/// One guided or fallback ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayRequest {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    /// Distance along `dir` proposed by the splat renderer, when trustworthy.
    pub proposal: Option<f64>,
}

/// Guided samples for rays with a proposal, uniform box samples for the rest.
/// Returns the two batches with the index of each ray in `requests`; rays that
/// miss the box and have no proposal are dropped.
#[allow(clippy::too_many_arguments)]
pub fn sample_rays<R: Rng>(
    surface: &DynamicSurface,
    store: &ParamStore,
    requests: &[RayRequest],
    t: f64,
    scale: f64,
    bounds: &Aabb,
    cfg: &SamplingConfig,
    mut rng: Option<&mut R>,
) -> ((RaySampleBatch, Vec<usize>), (RaySampleBatch, Vec<usize>)) {
    let guided_idx: Vec<usize> = (0..requests.len()).filter(|&i| requests[i].proposal.is_some()).collect();
    let centers: Vec<[f64; 3]> = guided_idx
        .iter()
        .map(|&i| {
            let r = &requests[i];
            let d = r.proposal.expect("filtered");
            std::array::from_fn(|k| r.origin[k] + d * r.dir[k])
        })
        .collect();
    let sdf = surface.sdf_values(store, &centers, t);
    let mut guided = RaySampleBatch::empty(cfg.guided_samples);
    for (j, &i) in guided_idx.iter().enumerate() {
        let r = &requests[i];
        let (lo, hi) = guided_interval(r.proposal.expect("filtered"), sdf[j], scale, cfg.min_half_width);
        let lo = lo.max(0.0);
        let depths = stratified(lo, hi.max(lo + cfg.min_half_width), cfg.guided_samples, rng.as_deref_mut());
        guided.push(r.origin, r.dir, &depths);
    }
    let mut uniform = RaySampleBatch::empty(cfg.uniform_samples);
    let mut uniform_idx = Vec::new();
    for (i, r) in requests.iter().enumerate() {
        if r.proposal.is_some() {
            continue;
        }
        if let Some((lo, hi)) = bounds.intersect_ray(r.origin, r.dir) {
            uniform.push(r.origin, r.dir, &stratified(lo, hi, cfg.uniform_samples, rng.as_deref_mut()));
            uniform_idx.push(i);
        }
    }
    ((guided, guided_idx), (uniform, uniform_idx))
}
