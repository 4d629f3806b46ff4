//! Canonical signed distance field, its time-varying composite with the
//! invertible deformation, depth-guided ray sampling and volume rendering.

mod dynamic;
mod field;
mod sampling;
mod volume;

pub use dynamic::{DynamicSurface, SurfaceSamples};
pub use field::{SdfConfig, SdfField, SdfOutput};
pub use sampling::{guided_interval, sample_rays, stratified, RayRequest, RaySampleBatch, SamplingConfig};
pub use volume::{exclusive_cumprod, normalize_rows, render_rays, sdf_to_alpha, volume_render, RayRender, VolumeOutput, EMPTY_RAY};
