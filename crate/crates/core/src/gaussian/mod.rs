//! Gaussian primitives, cameras and projection to screen space.

mod batch;
mod camera;
mod primitive;
mod scene;

pub use batch::{project_batch, rotation_columns, GaussianVars, ProjectedBatch};
pub use camera::{Camera, Ray};
pub use primitive::{
    build_covariance, eval_sh, face_viewer, gaussian_normal, min_scale_axis, normalize_quat,
    project_gaussian, projection_jacobian, quat_to_matrix, sh_coeffs, GaussianPrimitive,
    ProjectedGaussian, COV2D_FLOOR, SH_C0, SH_C1,
};
pub use scene::{GaussianScene, GaussianStats, RowSource};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Uniformly distributed unit quaternion `(w, x, y, z)`.
pub fn random_unit_quat(rng: &mut impl Rng) -> [f64; 4] {
    let q: [f64; 4] = std::array::from_fn(|_| StandardNormal.sample(rng));
    normalize_quat(q)
}

/// Uniformly distributed direction on the unit sphere.
pub fn random_unit_dir(rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return v.map(|c| c / n);
        }
    }
}
