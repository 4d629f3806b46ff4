use nalgebra::{Matrix3, Vector3};

/// Pinhole camera with a world-to-camera rigid transform.
///
/// Camera space follows the vision convention: +x right, +y down, +z forward.
/// Pixel `(i, j)` covers `[i, i+1) x [j, j+1)`; its center is `(i + 0.5, j + 0.5)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// A ray with unit direction. `z_per_unit` converts a distance along the ray
/// into camera-space depth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub origin: Vector3<f64>,
    pub dir: Vector3<f64>,
    pub z_per_unit: f64,
}

impl Ray {
    pub fn at(&self, t: f64) -> Vector3<f64> {
        self.origin + self.dir * t
    }
}

impl Camera {
    /// Camera at `eye` looking at `target` with horizontal field of view `fov_x`.
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>, fov_x: f64, width: usize, height: usize) -> Self {
        let fwd = (target - eye).normalize();
        let right = fwd.cross(&up).normalize();
        let down = fwd.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()]);
        let translation = -(rotation * eye);
        Self::with_fov(rotation, translation, fov_x, width, height)
    }

    /// From a 4x4 row-major camera-to-world matrix in the OpenGL convention
    /// (+y up, camera looking down -z).
    pub fn from_c2w_gl(c2w: &[[f64; 4]; 4], fov_x: f64, width: usize, height: usize) -> Self {
        let r_gl = Matrix3::from_fn(|i, j| c2w[i][j]);
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        let r_c2w = r_gl * flip;
        let center = Vector3::new(c2w[0][3], c2w[1][3], c2w[2][3]);
        let rotation = r_c2w.transpose();
        let translation = -(rotation * center);
        Self::with_fov(rotation, translation, fov_x, width, height)
    }

    /// The inverse of [`from_c2w_gl`](Self::from_c2w_gl).
    pub fn to_c2w_gl(&self) -> [[f64; 4]; 4] {
        let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
        let r = self.rotation.transpose() * flip;
        let c = self.center();
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[(i, j)];
            }
            m[i][3] = c[i];
        }
        m[3][3] = 1.0;
        m
    }

    fn with_fov(rotation: Matrix3<f64>, translation: Vector3<f64>, fov_x: f64, width: usize, height: usize) -> Self {
        let f = 0.5 * width as f64 / (0.5 * fov_x).tan();
        Self {
            fx: f,
            fy: f,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            width,
            height,
            rotation,
            translation,
        }
    }

    pub fn fov_x(&self) -> f64 {
        2.0 * (0.5 * self.width as f64 / self.fx).atan()
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn world_to_cam(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Projects a world point to continuous pixel coordinates, or `None` if it
    /// is not in front of the camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<[f64; 2]> {
        let c = self.world_to_cam(p);
        (c.z > 0.0).then(|| [self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy])
    }

    /// Ray through continuous pixel coordinates `(u, v)`.
    pub fn ray(&self, u: f64, v: f64) -> Ray {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        let n = d.norm();
        Ray {
            origin: self.center(),
            dir: self.rotation.transpose() * (d / n),
            z_per_unit: 1.0 / n,
        }
    }

    /// Ray through the center of pixel `(i, j)`.
    pub fn pixel_ray(&self, i: usize, j: usize) -> Ray {
        self.ray(i as f64 + 0.5, j as f64 + 0.5)
    }

    /// Same pose at a lower resolution.
    pub fn downscaled(&self, factor: usize) -> Self {
        assert!(factor >= 1);
        let s = 1.0 / factor as f64;
        Self {
            fx: self.fx * s,
            fy: self.fy * s,
            cx: self.cx * s,
            cy: self.cy * s,
            width: (self.width / factor).max(1),
            height: (self.height / factor).max(1),
            ..self.clone()
        }
    }
}
