use std::collections::HashMap;
use std::sync::OnceLock;

use crate::aabb::Aabb;
use crate::{Error, Result};

use super::TriangleMesh;

/// Cube corner `c` sits at offset `(c & 1, (c >> 1) & 1, (c >> 2) & 1)`.
fn corner(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 cube edges as `(low corner, axis)`, low corners having bit `axis` clear.
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                out[n] = (c, axis);
                n += 1;
            }
        }
    }
    out
}

fn edge_index(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (hi ^ lo).trailing_zeros() as usize;
    edges().iter().position(|&e| e == (lo, axis)).expect("corners share an edge")
}

/// Triangles (as cube-edge triples) for each of the 256 inside/outside patterns,
/// where bit `c` marks corner `c` as inside (negative). Triangles wind so their
/// normal points toward positive values.
///
/// The table is derived rather than transcribed: on every face, each crossing
/// where the perimeter passes from a positive to a negative corner is joined to
/// the next crossing back to positive, walking counter-clockwise as seen from
/// outside. Ambiguous faces therefore always separate their negative corners,
/// which both cells sharing the face agree on. The face segments chain into
/// closed loops that are fan-triangulated.
pub fn triangle_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(build_case))
}

fn build_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case & (1 << c) != 0;
    let mut next = [usize::MAX; 12];
    for axis in 0..3 {
        let (u, v) = ((axis + 1) % 3, (axis + 2) % 3);
        for side in 0..2 {
            let at = |a: usize, b: usize| (side << axis) | (a << u) | (b << v);
            let mut cycle = [at(0, 0), at(1, 0), at(1, 1), at(0, 1)];
            if side == 0 {
                cycle.reverse();
            }
            let crossings: Vec<(usize, bool)> = (0..4)
                .filter(|&i| inside(cycle[i]) != inside(cycle[(i + 1) % 4]))
                .map(|i| (edge_index(cycle[i], cycle[(i + 1) % 4]), inside(cycle[(i + 1) % 4])))
                .collect();
            for (k, &(e, enters)) in crossings.iter().enumerate() {
                if enters {
                    let exit = (1..crossings.len())
                        .map(|d| crossings[(k + d) % crossings.len()])
                        .find(|&(_, en)| !en)
                        .expect("crossings alternate");
                    next[e] = exit.0;
                }
            }
        }
    }
    let mut tris = Vec::new();
    let mut seen = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut e = next[start];
        while e != start {
            seen[e] = true;
            lp.push(e);
            e = next[e];
        }
        for i in 1..lp.len() - 1 {
            tris.push([lp[0] as u8, lp[i] as u8, lp[i + 1] as u8]);
        }
    }
    tris
}

/// Marching cubes over an `n³`-cell grid spanning `bounds`. `sdf` evaluates a
/// batch of points; it is called once per grid slice. Values below zero are
/// inside. A grid with no sign change yields an empty mesh.
pub fn extract_mesh<F>(sdf: F, bounds: &Aabb, n: usize) -> Result<TriangleMesh>
where
    F: Fn(&[[f64; 3]]) -> Vec<f64>,
{
    if n < 8 {
        return Err(Error::Config(format!("mesh resolution must be at least 8, got {n}")));
    }
    let p = n + 1;
    let ext = bounds.extent();
    let pos = |i: usize, j: usize, k: usize| -> [f64; 3] {
        [
            bounds.min[0] + ext[0] * i as f64 / n as f64,
            bounds.min[1] + ext[1] * j as f64 / n as f64,
            bounds.min[2] + ext[2] * k as f64 / n as f64,
        ]
    };
    let slice = |i: usize| -> Vec<f64> {
        let pts: Vec<[f64; 3]> = (0..p).flat_map(|j| (0..p).map(move |k| (j, k))).map(|(j, k)| pos(i, j, k)).collect();
        let v = sdf(&pts);
        assert_eq!(v.len(), pts.len(), "sdf returned the wrong number of values");
        v
    };
    let table = triangle_table();
    let cube_edges = edges();
    let mut mesh = TriangleMesh::default();
    let mut vertex_of: HashMap<(usize, usize, usize, usize), u32> = HashMap::new();
    let mut lo = slice(0);
    for i in 0..n {
        let hi = slice(i + 1);
        let value = |c: [usize; 3], j: usize, k: usize| -> f64 {
            let s = if c[0] == 0 { &lo } else { &hi };
            s[(j + c[1]) * p + k + c[2]]
        };
        for j in 0..n {
            for k in 0..n {
                let mut case = 0;
                for c in 0..8 {
                    if value(corner(c), j, k) < 0.0 {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                for tri in &table[case] {
                    let ids = tri.map(|e| {
                        let (c0, axis) = cube_edges[e as usize];
                        let o = corner(c0);
                        let key = (i + o[0], j + o[1], k + o[2], axis);
                        *vertex_of.entry(key).or_insert_with(|| {
                            let mut o1 = o;
                            o1[axis] = 1;
                            let (v0, v1) = (value(o, j, k), value(o1, j, k));
                            let t = v0 / (v0 - v1);
                            let a = pos(key.0, key.1, key.2);
                            let b = pos(i + o1[0], j + o1[1], k + o1[2]);
                            mesh.vertices.push(std::array::from_fn(|d| a[d] + t * (b[d] - a[d])));
                            (mesh.vertices.len() - 1) as u32
                        })
                    });
                    mesh.faces.push(ids);
                }
            }
        }
        lo = hi;
    }
    mesh.clean();
    Ok(mesh)
}
