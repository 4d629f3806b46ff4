use nalgebra::Vector3;

use super::camera::Camera;
use super::primitive::{min_scale_axis, COV2D_FLOOR, FRUSTUM_JACOBIAN_LIMIT, SH_C0, SH_C1};
use crate::autodiff::{concat_cols, Var};

/// Screen-space quantities for a batch of Gaussians, recorded on the tape.
pub struct ProjectedBatch<'t> {
    /// `[n, 2]` pixel coordinates.
    pub mean2d: Var<'t>,
    /// `[n, 3]` covariance `(xx, xy, yy)` with the floor added.
    pub cov2d: Var<'t>,
    /// `[n]` in `(0, 1)`.
    pub opacity: Var<'t>,
    /// `[n, 3]` in `[0, 1]`.
    pub color: Var<'t>,
    /// `[n, 3]` unit camera-space normals facing the camera.
    pub normal: Var<'t>,
    /// Camera-space depth of each center.
    pub depth: Vec<f64>,
    /// Center lies beyond the near plane.
    pub visible: Vec<bool>,
}

/// Inputs of [`project_batch`]: observation-space Gaussian parameters on the tape.
#[derive(Clone, Copy)]
pub struct GaussianVars<'t> {
    /// `[n, 3]`
    pub position: Var<'t>,
    /// `[n, 4]` unnormalized `(w, x, y, z)`.
    pub rotation: Var<'t>,
    /// `[n, 3]`
    pub log_scales: Var<'t>,
    /// `[n]`
    pub opacity_logit: Var<'t>,
    /// `[n, 3 * (degree + 1)²]`
    pub sh: Var<'t>,
}

/// Rotation matrix entries `r[i][j]` as `[n]` columns.
pub fn rotation_columns<'t>(q: Var<'t>) -> [[Var<'t>; 3]; 3] {
    let norm = q.square().sum_cols().sqrt().broadcast_cols(4);
    let q = q / norm;
    let (w, x, y, z) = (q.col(0), q.col(1), q.col(2), q.col(3));
    let one_minus_2 = |a: Var<'t>, b: Var<'t>| (a.square() + b.square()).scale(-2.0).add_scalar(1.0);
    let two = |a: Var<'t>| a.scale(2.0);
    [
        [one_minus_2(y, z), two(x * y - w * z), two(x * z + w * y)],
        [two(x * y + w * z), one_minus_2(x, z), two(y * z - w * x)],
        [two(x * z - w * y), two(y * z + w * x), one_minus_2(x, y)],
    ]
}

pub fn project_batch<'t>(g: &GaussianVars<'t>, cam: &Camera, sh_degree: usize, near: f64) -> ProjectedBatch<'t> {
    assert!(sh_degree <= 1, "SH degree above 1 is not supported");
    let tape = g.position.tape();
    let n = g.position.rows();
    let wm = cam.rotation;

    let r = rotation_columns(g.rotation);
    let scales = g.log_scales.exp();
    let s2: Vec<Var> = (0..3).map(|k| scales.col(k).square()).collect();
    let sigma = |i: usize, j: usize| {
        let mut acc = r[i][0] * r[j][0] * s2[0];
        for k in 1..3 {
            acc = acc + r[i][k] * r[j][k] * s2[k];
        }
        acc
    };
    let sig = [
        [sigma(0, 0), sigma(0, 1), sigma(0, 2)],
        [sigma(0, 1), sigma(1, 1), sigma(1, 2)],
        [sigma(0, 2), sigma(1, 2), sigma(2, 2)],
    ];

    let wt: Vec<f64> = (0..9).map(|k| wm[(k % 3, k / 3)]).collect();
    let pc = g.position.matmul(tape.constant(&[3, 3], wt))
        + tape
            .constant(&[3], cam.translation.iter().copied().collect())
            .broadcast_rows(n);
    let (px, py, pz) = (pc.col(0), pc.col(1), pc.col(2));
    let depth = pz.value();
    let visible = depth.iter().map(|&z| z > near).collect();

    let z = pz.maximum(tape.constant_scalar(near));
    let lim_x = FRUSTUM_JACOBIAN_LIMIT * 0.5 * cam.width as f64 / cam.fx;
    let lim_y = FRUSTUM_JACOBIAN_LIMIT * 0.5 * cam.height as f64 / cam.fy;
    let tx = (px / z).clamp(-lim_x, lim_x) * z;
    let ty = (py / z).clamp(-lim_y, lim_y) * z;
    let inv_z = z.recip();
    let inv_z2 = inv_z.square();
    let j00 = inv_z.scale(cam.fx);
    let j02 = (tx * inv_z2).scale(-cam.fx);
    let j11 = inv_z.scale(cam.fy);
    let j12 = (ty * inv_z2).scale(-cam.fy);
    let m: [[Var; 3]; 2] = [
        std::array::from_fn(|b| j00.scale(wm[(0, b)]) + j02.scale(wm[(2, b)])),
        std::array::from_fn(|b| j11.scale(wm[(1, b)]) + j12.scale(wm[(2, b)])),
    ];
    let t: [[Var; 3]; 2] = std::array::from_fn(|a| {
        std::array::from_fn(|b| m[a][0] * sig[0][b] + m[a][1] * sig[1][b] + m[a][2] * sig[2][b])
    });
    let quad = |a: usize, c: usize| t[a][0] * m[c][0] + t[a][1] * m[c][1] + t[a][2] * m[c][2];
    let cov2d = concat_cols(&[quad(0, 0).add_scalar(COV2D_FLOOR), quad(0, 1), quad(1, 1).add_scalar(COV2D_FLOOR)]);

    let u = (px / pz).scale(cam.fx).add_scalar(cam.cx);
    let v = (py / pz).scale(cam.fy).add_scalar(cam.cy);
    let mean2d = concat_cols(&[u, v]);

    let center = cam.center();
    let rel = g.position
        - tape
            .constant(&[3], center.iter().copied().collect())
            .broadcast_rows(n);
    let dir = rel / rel.square().sum_cols().sqrt().broadcast_cols(3);
    let (dx, dy, dz) = (dir.col(0), dir.col(1), dir.col(2));
    let channels: Vec<Var> = (0..3)
        .map(|ch| {
            let mut c = g.sh.col(ch).scale(SH_C0);
            if sh_degree >= 1 {
                c = c - (dy * g.sh.col(3 + ch)).scale(SH_C1) + (dz * g.sh.col(6 + ch)).scale(SH_C1)
                    - (dx * g.sh.col(9 + ch)).scale(SH_C1);
            }
            c.add_scalar(0.5).clamp(0.0, 1.0)
        })
        .collect();
    let color = concat_cols(&channels);

    // Normal: rotated min-scale axis, flipped toward the viewer, in camera space.
    let sv = scales.value();
    let rv: Vec<Vec<f64>> = r.iter().flatten().map(|c| c.value()).collect();
    let dv = dir.value();
    let mut masks = vec![vec![0.0; n]; 3];
    for i in 0..n {
        let k = min_scale_axis([sv[3 * i], sv[3 * i + 1], sv[3 * i + 2]]);
        let nw = Vector3::new(rv[k][i], rv[3 + k][i], rv[6 + k][i]);
        let view = Vector3::new(dv[3 * i], dv[3 * i + 1], dv[3 * i + 2]);
        masks[k][i] = if nw.dot(&view) > 0.0 { -1.0 } else { 1.0 };
    }
    let masks: Vec<Var> = masks.into_iter().map(|m| tape.constant(&[n], m)).collect();
    let nw: Vec<Var> = (0..3)
        .map(|j| r[j][0] * masks[0] + r[j][1] * masks[1] + r[j][2] * masks[2])
        .collect();
    let ncam: Vec<Var> = (0..3)
        .map(|a| nw[0].scale(wm[(a, 0)]) + nw[1].scale(wm[(a, 1)]) + nw[2].scale(wm[(a, 2)]))
        .collect();
    let normal = concat_cols(&ncam);

    ProjectedBatch {
        mean2d,
        cov2d,
        opacity: g.opacity_logit.sigmoid(),
        color,
        normal,
        depth,
        visible,
    }
}
