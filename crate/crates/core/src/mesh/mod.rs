//! Triangle meshes from signed distance fields.

mod io;
mod marching;

pub use io::{read_mesh_manifest, read_obj, read_ply, write_mesh_manifest, write_obj, write_ply, ManifestEntry};
pub use marching::{extract_mesh, triangle_table};

use std::collections::{HashMap, HashSet};

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aabb::Aabb;
use crate::surface::DynamicSurface;
use crate::autodiff::ParamStore;
use crate::{Error, Result};

const MIN_AREA: f64 = 1e-12;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub faces: Vec<[u32; 3]>,
    pub normals: Option<Vec<[f64; 3]>>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.faces.is_empty()
    }

    fn corners(&self, f: &[u32; 3]) -> [[f64; 3]; 3] {
        f.map(|i| self.vertices[i as usize])
    }

    /// Unnormalized face normal (twice the area vector).
    pub fn face_normal(&self, f: &[u32; 3]) -> [f64; 3] {
        let [a, b, c] = self.corners(f);
        cross(sub(b, a), sub(c, a))
    }

    pub fn face_area(&self, f: &[u32; 3]) -> f64 {
        0.5 * norm(self.face_normal(f))
    }

    pub fn area(&self) -> f64 {
        self.faces.iter().map(|f| self.face_area(f)).sum()
    }

    /// Welds coincident vertices, drops degenerate triangles and unreferenced
    /// vertices. Per-vertex normals are discarded.
    pub fn clean(&mut self) {
        let mut remap = Vec::with_capacity(self.vertices.len());
        let mut by_pos: HashMap<[u64; 3], u32> = HashMap::new();
        let mut kept = Vec::new();
        for v in &self.vertices {
            let key = v.map(|c| (c + 0.0).to_bits());
            let id = *by_pos.entry(key).or_insert_with(|| {
                kept.push(*v);
                (kept.len() - 1) as u32
            });
            remap.push(id);
        }
        self.vertices = kept;
        let faces: Vec<[u32; 3]> = self
            .faces
            .iter()
            .map(|f| f.map(|i| remap[i as usize]))
            .filter(|f| f[0] != f[1] && f[1] != f[2] && f[0] != f[2])
            .collect();
        self.faces = faces.into_iter().filter(|f| self.face_area(f) > MIN_AREA).collect();
        let mut used = vec![u32::MAX; self.vertices.len()];
        let mut verts = Vec::new();
        for f in &mut self.faces {
            for i in f.iter_mut() {
                if used[*i as usize] == u32::MAX {
                    used[*i as usize] = verts.len() as u32;
                    verts.push(self.vertices[*i as usize]);
                }
                *i = used[*i as usize];
            }
        }
        self.vertices = verts;
        self.normals = None;
    }

    /// Number of distinct undirected edges.
    pub fn edge_count(&self) -> usize {
        let mut e = HashSet::new();
        for f in &self.faces {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                e.insert((a.min(b), a.max(b)));
            }
        }
        e.len()
    }

    /// `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_count() as i64 + self.faces.len() as i64
    }

    /// Every edge is shared by exactly two triangles with opposite directions.
    pub fn is_closed_oriented(&self) -> bool {
        let mut directed: HashMap<(u32, u32), usize> = HashMap::new();
        for f in &self.faces {
            for k in 0..3 {
                *directed.entry((f[k], f[(k + 1) % 3])).or_default() += 1;
            }
        }
        directed.iter().all(|(&(a, b), &n)| n == 1 && directed.get(&(b, a)) == Some(&1))
    }

    /// Unit normals from an external gradient evaluator.
    pub fn set_normals_from<G>(&mut self, gradient: G)
    where
        G: Fn(&[[f64; 3]]) -> Vec<[f64; 3]>,
    {
        let g = gradient(&self.vertices);
        self.normals = Some(g.into_iter().map(|n| n.map(|c| c / norm(n).max(1e-12))).collect());
    }

    /// Area-weighted vertex normals from the triangle winding.
    pub fn set_face_normals(&mut self) {
        let mut acc = vec![[0.0; 3]; self.vertices.len()];
        for f in &self.faces {
            let n = self.face_normal(f);
            for &i in f {
                for d in 0..3 {
                    acc[i as usize][d] += n[d];
                }
            }
        }
        self.normals = Some(acc.into_iter().map(|n| n.map(|c| c / norm(n).max(1e-12))).collect());
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| [v[0] + t[0], v[1] + t[1], v[2] + t[2]]).collect(),
            ..self.clone()
        }
    }

    pub fn bounds(&self) -> Option<Aabb> {
        Aabb::from_points(&self.vertices)
    }
}

/// Area-uniform surface samples: triangles chosen proportionally to area, then
/// uniform barycentric coordinates. Deterministic for a fixed seed.
pub fn sample_surface_points(mesh: &TriangleMesh, n: usize, seed: u64) -> Result<Vec<[f64; 3]>> {
    if mesh.is_empty() {
        return Err(Error::EmptyMesh);
    }
    let areas: Vec<f64> = mesh.faces.iter().map(|f| mesh.face_area(f)).collect();
    let pick = WeightedIndex::new(&areas).map_err(|_| Error::EmptyMesh)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let [a, b, c] = mesh.corners(&mesh.faces[pick.sample(&mut rng)]);
            let (r1, r2): (f64, f64) = (rng.gen(), rng.gen());
            let s = r1.sqrt();
            let (u, v, w) = (1.0 - s, s * (1.0 - r2), s * r2);
            std::array::from_fn(|d| u * a[d] + v * b[d] + w * c[d])
        })
        .collect())
}

/// Zero level set of the dynamic surface at time `t`, with gradient normals.
pub fn extract_surface(surface: &DynamicSurface, store: &ParamStore, t: f64, bounds: &Aabb, n: usize) -> Result<TriangleMesh> {
    let mut mesh = extract_mesh(|pts| surface.sdf_values(store, pts, t), bounds, n)?;
    if !mesh.is_empty() {
        mesh.set_normals_from(|pts| surface.gradient_values(store, pts, t));
    }
    Ok(mesh)
}
