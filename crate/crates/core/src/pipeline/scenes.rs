use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::gaussian::Camera;
use crate::{Error, Result};

/// Analytic time-varying scenes with exact ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    TranslatingSphere,
    BouncingEllipsoid,
    TorusToSphereMorph,
    TwoSphereOrbit,
}

pub const SCENE_NAMES: [&str; 4] = ["translating-sphere", "bouncing-ellipsoid", "torus-to-sphere-morph", "two-sphere-orbit"];

impl SceneKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "translating-sphere" => Ok(Self::TranslatingSphere),
            "bouncing-ellipsoid" => Ok(Self::BouncingEllipsoid),
            "torus-to-sphere-morph" => Ok(Self::TorusToSphereMorph),
            "two-sphere-orbit" => Ok(Self::TwoSphereOrbit),
            _ => Err(Error::UnknownScene {
                name: name.to_string(),
                valid: SCENE_NAMES.join(", "),
            }),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::TranslatingSphere => SCENE_NAMES[0],
            Self::BouncingEllipsoid => SCENE_NAMES[1],
            Self::TorusToSphereMorph => SCENE_NAMES[2],
            Self::TwoSphereOrbit => SCENE_NAMES[3],
        }
    }
}

pub const SPHERE_RADIUS: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub kind: SceneKind,
    /// With motion off every timestep shows the `t = 0.5` state.
    pub motion: bool,
}

fn len(p: [f64; 3]) -> f64 {
    (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
}

fn sphere(p: [f64; 3], c: [f64; 3], r: f64) -> f64 {
    len([p[0] - c[0], p[1] - c[1], p[2] - c[2]]) - r
}

impl AnalyticScene {
    pub fn new(kind: SceneKind, motion: bool) -> Self {
        Self { kind, motion }
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::cube([0.0; 3], 1.0)
    }

    fn time(&self, t: f64) -> f64 {
        if self.motion {
            t
        } else {
            0.5
        }
    }

    /// Center of the translating sphere.
    pub fn sphere_center(&self, t: f64) -> [f64; 3] {
        [-0.3 + 0.6 * self.time(t), 0.0, 0.0]
    }

    pub fn sdf(&self, p: [f64; 3], t: f64) -> f64 {
        let t = self.time(t);
        match self.kind {
            SceneKind::TranslatingSphere => sphere(p, [-0.3 + 0.6 * t, 0.0, 0.0], SPHERE_RADIUS),
            SceneKind::BouncingEllipsoid => {
                let c = [0.0, -0.25 + 0.5 * (PI * t).sin(), 0.0];
                let r = [0.45, 0.3, 0.35];
                let q: [f64; 3] = std::array::from_fn(|k| p[k] - c[k]);
                let k0 = len(std::array::from_fn(|k| q[k] / r[k]));
                let k1 = len(std::array::from_fn(|k| q[k] / (r[k] * r[k])));
                if k1 < 1e-12 {
                    -r.iter().fold(f64::INFINITY, |m, &v| m.min(v))
                } else {
                    k0 * (k0 - 1.0) / k1
                }
            }
            SceneKind::TorusToSphereMorph => {
                let xz = (p[0] * p[0] + p[2] * p[2]).sqrt() - 0.45;
                let torus = (xz * xz + p[1] * p[1]).sqrt() - 0.18;
                (1.0 - t) * torus + t * sphere(p, [0.0; 3], 0.45)
            }
            SceneKind::TwoSphereOrbit => {
                let a = PI * t;
                let c = [0.4 * a.cos(), 0.0, 0.4 * a.sin()];
                sphere(p, c, 0.25).min(sphere(p, [-c[0], 0.0, -c[2]], 0.25))
            }
        }
    }

    pub fn gradient(&self, p: [f64; 3], t: f64) -> [f64; 3] {
        let h = 1e-6;
        std::array::from_fn(|k| {
            let (mut a, mut b) = (p, p);
            a[k] += h;
            b[k] -= h;
            (self.sdf(a, t) - self.sdf(b, t)) / (2.0 * h)
        })
    }

    pub fn albedo(&self) -> [f64; 3] {
        match self.kind {
            SceneKind::TranslatingSphere => [0.85, 0.55, 0.3],
            SceneKind::BouncingEllipsoid => [0.3, 0.7, 0.85],
            SceneKind::TorusToSphereMorph => [0.8, 0.35, 0.6],
            SceneKind::TwoSphereOrbit => [0.5, 0.8, 0.4],
        }
    }

    /// First surface hit along a unit ray, as distance along the ray.
    pub fn trace(&self, origin: [f64; 3], dir: [f64; 3], t: f64) -> Option<f64> {
        let (mut d, end) = self.bounds().intersect_ray(origin, dir)?;
        for _ in 0..512 {
            let p = std::array::from_fn(|k| origin[k] + d * dir[k]);
            let s = self.sdf(p, t);
            if s.abs() < 1e-9 {
                return Some(d);
            }
            if s < 0.0 {
                // Overshot (non-exact distance bound): bisect back onto the surface.
                let (mut lo, mut hi) = (d - 0.1, d);
                for _ in 0..60 {
                    let m = 0.5 * (lo + hi);
                    let q = std::array::from_fn(|k| origin[k] + m * dir[k]);
                    if self.sdf(q, t) > 0.0 {
                        lo = m;
                    } else {
                        hi = m;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            d += 0.9 * s;
            if d > end {
                return None;
            }
        }
        None
    }
}

pub const LIGHT_DIR: [f64; 3] = [0.408_248_290_463_863, 0.816_496_580_927_726, 0.408_248_290_463_863];
pub const AMBIENT: f64 = 0.3;

/// Ground-truth color (Lambertian) and camera-space normal images; background
/// pixels are black with a zero normal.
pub fn render_analytic(scene: &AnalyticScene, cam: &Camera, t: f64) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (cam.width, cam.height);
    let rows = crate::par::map_range(h, |j| {
        let mut rgb = vec![0.0; 3 * w];
        let mut nrm = vec![0.0; 3 * w];
        for i in 0..w {
            let ray = cam.pixel_ray(i, j);
            let o: [f64; 3] = ray.origin.into();
            let d: [f64; 3] = ray.dir.into();
            if let Some(z) = scene.trace(o, d, t) {
                let p = std::array::from_fn(|k| o[k] + z * d[k]);
                let g = scene.gradient(p, t);
                let n = Vector3::from(g).normalize();
                let shade = AMBIENT + (1.0 - AMBIENT) * n.dot(&Vector3::from(LIGHT_DIR)).max(0.0);
                let a = scene.albedo();
                let nc = cam.rotation * n;
                for k in 0..3 {
                    rgb[3 * i + k] = a[k] * shade;
                    nrm[3 * i + k] = nc[k];
                }
            }
        }
        (rgb, nrm)
    });
    let mut rgb = Vec::with_capacity(3 * w * h);
    let mut nrm = Vec::with_capacity(3 * w * h);
    for (r, n) in rows {
        rgb.extend(r);
        nrm.extend(n);
    }
    (rgb, nrm)
}

/// Monocular camera path: one pose per frame on a circle around the origin.
/// The circle is tilted by `ORBIT_TILT` about x so both poles get seen.
pub fn orbit_camera(frame: usize, frames: usize, width: usize, height: usize) -> Camera {
    let a = 2.0 * PI * frame as f64 / frames as f64;
    let eye = 3.0 * Vector3::new(a.sin(), a.cos() * ORBIT_TILT.sin(), a.cos() * ORBIT_TILT.cos());
    Camera::look_at(eye, Vector3::zeros(), Vector3::new(0.0, 1.0, 0.0), ORBIT_FOV_X, width, height)
}

pub const ORBIT_FOV_X: f64 = 0.65;
pub const ORBIT_TILT: f64 = 0.6;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_unknown_lists_valid() {
        for n in SCENE_NAMES {
            assert_eq!(SceneKind::parse(n).unwrap().name(), n);
        }
        let e = SceneKind::parse("cube").unwrap_err().to_string();
        assert!(SCENE_NAMES.iter().all(|n| e.contains(n)), "{e}");
    }

    #[test]
    fn trace_hits_sphere_at_analytic_depth() {
        let s = AnalyticScene::new(SceneKind::TranslatingSphere, true);
        let d = s.trace([-0.3, 0.0, 3.0], [0.0, 0.0, -1.0], 0.0).unwrap();
        assert!((d - 2.5).abs() < 1e-8);
        assert!(s.trace([0.0, 0.9, 3.0], [0.0, 0.0, -1.0], 0.0).is_none());
        let e = AnalyticScene::new(SceneKind::BouncingEllipsoid, true);
        let d = e.trace([0.0, -0.25, 3.0], [0.0, 0.0, -1.0], 0.0).unwrap();
        assert!((d - (3.0 - 0.35)).abs() < 1e-6, "{d}");
    }

    #[test]
    fn morph_ends_as_sphere_and_static_freezes_time() {
        let m = AnalyticScene::new(SceneKind::TorusToSphereMorph, true);
        assert!((m.sdf([0.0, 0.0, 0.0], 1.0) + 0.45).abs() < 1e-12);
        assert!(m.sdf([0.0, 0.0, 0.0], 0.0) > 0.0, "torus hole");
        let s = AnalyticScene::new(SceneKind::TranslatingSphere, false);
        assert_eq!(s.sdf([0.1, 0.2, 0.3], 0.0), s.sdf([0.1, 0.2, 0.3], 1.0));
        assert_eq!(s.sphere_center(0.9), [0.0; 3]);
    }

    #[test]
    fn normals_face_the_camera() {
        let s = AnalyticScene::new(SceneKind::TwoSphereOrbit, true);
        let cam = orbit_camera(3, 16, 32, 32);
        let (rgb, n) = render_analytic(&s, &cam, 0.3);
        let fg: Vec<usize> = (0..32 * 32).filter(|&p| n[3 * p..3 * p + 3].iter().any(|&v| v != 0.0)).collect();
        assert!(!fg.is_empty());
        assert!(fg.iter().all(|&p| n[3 * p + 2] < 1e-6 && rgb[3 * p..3 * p + 3].iter().any(|&c| c > 0.0)));
    }
}
