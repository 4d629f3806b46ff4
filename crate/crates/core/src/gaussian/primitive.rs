use nalgebra::{Matrix2x3, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::Camera;

pub const SH_C0: f64 = 0.282_094_791_773_878_14;
pub const SH_C1: f64 = 0.488_602_511_902_919_9;

/// Isotropic variance added to the projected covariance diagonal, in px².
pub const COV2D_FLOOR: f64 = 0.3;

/// Projected centers beyond this multiple of the half field of view have the
/// projection Jacobian evaluated at the clamped direction.
pub const FRUSTUM_JACOBIAN_LIMIT: f64 = 1.3;

/// Number of SH coefficients per color channel.
pub fn sh_coeffs(degree: usize) -> usize {
    (degree + 1) * (degree + 1)
}

/// One canonical-space Gaussian. Quaternions are stored `(w, x, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianPrimitive {
    pub position: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scales: [f64; 3],
    pub opacity_logit: f64,
    /// `sh[k * 3 + channel]` for basis function `k`.
    pub sh: Vec<f64>,
}

impl GaussianPrimitive {
    pub fn scales(&self) -> [f64; 3] {
        self.log_scales.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        crate::autodiff::sigmoid_value(self.opacity_logit)
    }

    pub fn sh_degree(&self) -> usize {
        match self.sh.len() / 3 {
            1 => 0,
            4 => 1,
            n => panic!("unsupported SH coefficient count {n}"),
        }
    }
}

/// Screen-space footprint of one Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedGaussian {
    pub mean: [f64; 2],
    /// Symmetric 2x2 covariance `(xx, xy, yy)` including the floor.
    pub cov: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Unit normal in camera space, facing the camera.
    pub normal: [f64; 3],
}

pub fn normalize_quat(q: [f64; 4]) -> [f64; 4] {
    let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    q.map(|v| v / n)
}

pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = normalize_quat(q);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// `Σ = R diag(s)² Rᵀ`.
pub fn build_covariance(q: [f64; 4], s: [f64; 3]) -> Matrix3<f64> {
    let r = quat_to_matrix(q);
    let d = Matrix3::from_diagonal(&Vector3::new(s[0] * s[0], s[1] * s[1], s[2] * s[2]));
    r * d * r.transpose()
}

/// Index of the smallest scale; ties go to the lowest index.
pub fn min_scale_axis(s: [f64; 3]) -> usize {
    let mut k = 0;
    for i in 1..3 {
        if s[i] < s[k] {
            k = i;
        }
    }
    k
}

/// Unit normal of a flattened Gaussian: the rotated axis with the smallest scale,
/// i.e. the eigenvector of Σ with the smallest eigenvalue.
pub fn gaussian_normal(q: [f64; 4], s: [f64; 3]) -> Vector3<f64> {
    quat_to_matrix(q).column(min_scale_axis(s)).into_owned()
}

/// Flips `n` so that it faces against `view_dir` (`n · view_dir ≤ 0`).
pub fn face_viewer(n: Vector3<f64>, view_dir: &Vector3<f64>) -> Vector3<f64> {
    if n.dot(view_dir) > 0.0 {
        -n
    } else {
        n
    }
}

/// Degree-0/1 real SH color with the 0.5 offset, clamped to `[0, 1]`.
pub fn eval_sh(sh: &[f64], degree: usize, dir: &Vector3<f64>) -> [f64; 3] {
    assert!(degree <= 1, "SH degree above 1 is not supported");
    assert!(sh.len() >= sh_coeffs(degree) * 3);
    let mut c = [0.0; 3];
    for ch in 0..3 {
        let mut v = SH_C0 * sh[ch];
        if degree >= 1 {
            v += -SH_C1 * dir.y * sh[3 + ch] + SH_C1 * dir.z * sh[6 + ch] - SH_C1 * dir.x * sh[9 + ch];
        }
        c[ch] = (v + 0.5).clamp(0.0, 1.0);
    }
    c
}

/// Perspective Jacobian of `(fx x/z + cx, fy y/z + cy)` at camera-space `p`,
/// with the direction clamped to the widened frustum.
pub fn projection_jacobian(cam: &Camera, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let lim_x = FRUSTUM_JACOBIAN_LIMIT * 0.5 * cam.width as f64 / cam.fx;
    let lim_y = FRUSTUM_JACOBIAN_LIMIT * 0.5 * cam.height as f64 / cam.fy;
    let z = p.z;
    let x = (p.x / z).clamp(-lim_x, lim_x) * z;
    let y = (p.y / z).clamp(-lim_y, lim_y) * z;
    Matrix2x3::new(cam.fx / z, 0.0, -cam.fx * x / (z * z), 0.0, cam.fy / z, -cam.fy * y / (z * z))
}

/// Projects one Gaussian. Returns `None` when its center is not beyond `near`.
pub fn project_gaussian(g: &GaussianPrimitive, cam: &Camera, near: f64) -> Option<ProjectedGaussian> {
    let x = Vector3::from(g.position);
    let pc = cam.world_to_cam(&x);
    if pc.z <= near {
        return None;
    }
    let s = g.scales();
    let sigma = build_covariance(g.rotation, s);
    let m = projection_jacobian(cam, &pc) * cam.rotation;
    let c2 = m * sigma * m.transpose();
    let view = (x - cam.center()).normalize();
    let n = face_viewer(gaussian_normal(g.rotation, s), &view);
    let n_cam = cam.rotation * n;
    Some(ProjectedGaussian {
        mean: [cam.fx * pc.x / pc.z + cam.cx, cam.fy * pc.y / pc.z + cam.cy],
        cov: [c2[(0, 0)] + COV2D_FLOOR, c2[(0, 1)], c2[(1, 1)] + COV2D_FLOOR],
        depth: pc.z,
        color: eval_sh(&g.sh, g.sh_degree(), &view),
        opacity: g.opacity(),
        normal: [n_cam.x, n_cam.y, n_cam.z],
    })
}
