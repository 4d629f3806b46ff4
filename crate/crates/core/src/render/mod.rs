//! Differentiable Gaussian rasterization: color, alpha, normal and depth maps.

mod depth;
mod op;
mod raster;

pub use depth::{filter_depth, median_depth_rule, DepthBundle, DepthCombine};
pub use op::{render_batch, RenderVars};
pub use raster::{rasterize_backward, render_brute, render_tiled, Contributor, RenderOutput, SplatGrads, Splats};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RasterConfig {
    pub background: [f64; 3],
    /// Transmittance threshold for the median depth.
    pub tau_d: f64,
    /// Agreement gate between α-blended and median depth.
    pub tau_f: f64,
    pub depth_filter_combine: DepthCombine,
    pub tile_size: usize,
    /// Compositing stops before transmittance would drop below this.
    pub min_transmittance: f64,
    pub max_alpha: f64,
    /// Mahalanobis² cutoff for a Gaussian's footprint.
    pub cutoff_sq: f64,
}

impl Default for RasterConfig {
    fn default() -> Self {
        Self {
            background: [0.0; 3],
            tau_d: 0.6,
            tau_f: 0.05,
            depth_filter_combine: DepthCombine::Midpoint,
            tile_size: 16,
            min_transmittance: 1e-4,
            max_alpha: 0.99,
            cutoff_sq: 9.0,
        }
    }
}
