use serde::{Deserialize, Serialize};

/// Axis-aligned box in scene units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        assert!((0..3).all(|k| max[k] > min[k]), "empty box {min:?}..{max:?}");
        Self { min, max }
    }

    pub fn cube(center: [f64; 3], half: f64) -> Self {
        Self::new(center.map(|c| c - half), center.map(|c| c + half))
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|k| 0.5 * (self.min[k] + self.max[k]))
    }

    pub fn extent(&self) -> [f64; 3] {
        std::array::from_fn(|k| self.max[k] - self.min[k])
    }

    pub fn diagonal(&self) -> f64 {
        self.extent().iter().map(|e| e * e).sum::<f64>().sqrt()
    }

    /// Largest half-extent; the isotropic normalization radius.
    pub fn half_size(&self) -> f64 {
        self.extent().iter().fold(0.0f64, |m, &e| m.max(e)) * 0.5
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }

    /// Maps the box onto the unit cube.
    pub fn to_unit(&self, p: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|k| (p[k] - self.min[k]) / (self.max[k] - self.min[k]))
    }

    /// Entry and exit ray parameters (slab test), clipped to `t >= 0`.
    pub fn intersect_ray(&self, origin: [f64; 3], dir: [f64; 3]) -> Option<(f64, f64)> {
        let mut t0 = 0.0f64;
        let mut t1 = f64::INFINITY;
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                if origin[k] < self.min[k] || origin[k] > self.max[k] {
                    return None;
                }
                continue;
            }
            let inv = 1.0 / dir[k];
            let (a, b) = ((self.min[k] - origin[k]) * inv, (self.max[k] - origin[k]) * inv);
            t0 = t0.max(a.min(b));
            t1 = t1.min(a.max(b));
        }
        (t1 > t0).then_some((t0, t1))
    }

    pub fn from_points(points: &[[f64; 3]]) -> Option<Self> {
        let first = points.first()?;
        let (mut lo, mut hi) = (*first, *first);
        for p in points {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        (0..3).all(|k| hi[k] > lo[k]).then(|| Self::new(lo, hi))
    }
}
