use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, ParamId, ParamStore, Tape, Var};
use crate::par;

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HashGridConfig {
    pub levels: usize,
    pub features: usize,
    pub log2_table_size: u32,
    pub base_resolution: usize,
    pub max_resolution: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self {
            levels: 8,
            features: 2,
            log2_table_size: 15,
            base_resolution: 16,
            max_resolution: 256,
        }
    }
}

/// Geometry of the grid, shared with the backward op.
#[derive(Debug)]
struct Layout {
    resolutions: Vec<usize>,
    table_size: usize,
    features: usize,
}

/// Multiresolution hash grid over the unit cube with trilinear lookups.
/// Feature tables are a single `[levels * table_size, features]` parameter.
#[derive(Debug, Clone)]
pub struct HashGrid {
    pub table: ParamId,
    layout: Arc<Layout>,
    clamped: Arc<AtomicU64>,
}

struct Corner {
    index: usize,
    weight: f64,
    dweight: [f64; 3],
}

impl Layout {
    fn out_dim(&self) -> usize {
        self.resolutions.len() * self.features
    }

    fn slot(&self, res: usize, c: [usize; 3]) -> usize {
        let side = res + 1;
        if side * side * side <= self.table_size {
            c[0] + side * (c[1] + side * c[2])
        } else {
            let h = (c[0] as u64).wrapping_mul(PRIMES[0])
                ^ (c[1] as u64).wrapping_mul(PRIMES[1])
                ^ (c[2] as u64).wrapping_mul(PRIMES[2]);
            (h % self.table_size as u64) as usize
        }
    }

    /// The eight corners of the cell containing `x` (already in `[0,1]³`) at `level`.
    fn corners(&self, level: usize, x: [f64; 3]) -> [Corner; 8] {
        let res = self.resolutions[level];
        let mut cell = [0usize; 3];
        let mut frac = [0.0; 3];
        for d in 0..3 {
            let p = x[d] * res as f64;
            let c = (p.floor() as usize).min(res - 1);
            cell[d] = c;
            frac[d] = p - c as f64;
        }
        let base = level * self.table_size;
        std::array::from_fn(|k| {
            let bits = [k & 1, (k >> 1) & 1, (k >> 2) & 1];
            let w1 = |d: usize| if bits[d] == 1 { frac[d] } else { 1.0 - frac[d] };
            let dw1 = |d: usize| if bits[d] == 1 { res as f64 } else { -(res as f64) };
            let c = [cell[0] + bits[0], cell[1] + bits[1], cell[2] + bits[2]];
            Corner {
                index: base + self.slot(res, c),
                weight: w1(0) * w1(1) * w1(2),
                dweight: [dw1(0) * w1(1) * w1(2), w1(0) * dw1(1) * w1(2), w1(0) * w1(1) * dw1(2)],
            }
        })
    }

    fn encode_point(&self, table: &[f64], x: [f64; 3], out: &mut [f64]) {
        let f = self.features;
        for level in 0..self.resolutions.len() {
            let o = &mut out[level * f..(level + 1) * f];
            o.fill(0.0);
            for c in self.corners(level, x) {
                for j in 0..f {
                    o[j] += c.weight * table[c.index * f + j];
                }
            }
        }
    }
}

fn clamp_unit(x: &[f64]) -> ([f64; 3], [bool; 3]) {
    let mut p = [0.0; 3];
    let mut inside = [true; 3];
    for d in 0..3 {
        p[d] = x[d].clamp(0.0, 1.0);
        inside[d] = (0.0..=1.0).contains(&x[d]);
    }
    (p, inside)
}

impl HashGrid {
    pub fn new(store: &mut ParamStore, name: &str, cfg: &HashGridConfig, rng: &mut impl Rng) -> Self {
        assert!(cfg.levels >= 1 && cfg.features >= 1 && cfg.base_resolution >= 1);
        let growth = if cfg.levels > 1 {
            ((cfg.max_resolution as f64).ln() - (cfg.base_resolution as f64).ln()) / (cfg.levels - 1) as f64
        } else {
            0.0
        };
        let resolutions = (0..cfg.levels)
            .map(|l| ((cfg.base_resolution as f64) * (growth * l as f64).exp()).round() as usize)
            .collect();
        let table_size = 1usize << cfg.log2_table_size;
        let n = cfg.levels * table_size * cfg.features;
        let values = (0..n).map(|_| rng.gen_range(-1e-4..1e-4)).collect();
        let table = store.add(name, &[cfg.levels * table_size, cfg.features], values);
        Self {
            table,
            layout: Arc::new(Layout {
                resolutions,
                table_size,
                features: cfg.features,
            }),
            clamped: Arc::new(AtomicU64::new(0)),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layout.out_dim()
    }

    pub fn resolutions(&self) -> &[usize] {
        &self.layout.resolutions
    }

    pub fn table_size(&self) -> usize {
        self.layout.table_size
    }

    /// Number of lookup points that had to be clamped into the unit cube so far.
    pub fn clamped_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    /// Encodes one point against an explicit table.
    pub fn encode_values(&self, table: &[f64], x: [f64; 3]) -> Vec<f64> {
        let (p, inside) = clamp_unit(&x);
        if inside.contains(&false) {
            self.clamped.fetch_add(1, Ordering::Relaxed);
        }
        let mut out = vec![0.0; self.out_dim()];
        self.layout.encode_point(table, p, &mut out);
        out
    }

    /// Encodes a `[n, 3]` batch of unit-cube points, giving `[n, levels * features]`.
    /// Differentiable with respect to both the points and the table.
    pub fn encode<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let table = tape.param(store, self.table);
        self.encode_with(table, x)
    }

    /// Like [`encode`](Self::encode) with the table already on the tape.
    pub fn encode_with<'t>(&self, table: Var<'t>, x: Var<'t>) -> Var<'t> {
        assert_eq!(x.cols(), 3, "hash grid expects [n,3] input");
        let n = x.rows();
        let dim = self.out_dim();
        let xs = x.value();
        let clamped = xs
            .chunks_exact(3)
            .filter(|p| clamp_unit(p).1.contains(&false))
            .count();
        self.clamped.fetch_add(clamped as u64, Ordering::Relaxed);
        let mut out = vec![0.0; n * dim];
        {
            let tv_ref = table.tape().value(table);
            let tv: &[f64] = &tv_ref;
            let layout = &self.layout;
            par::for_each_chunk_mut(&mut out, dim.max(1), |i, row| {
                let (p, _) = clamp_unit(&xs[3 * i..3 * i + 3]);
                layout.encode_point(tv, p, row);
            });
        }
        x.tape().custom(
            &[x, table],
            &[n, dim],
            out,
            Box::new(HashOp {
                layout: self.layout.clone(),
            }),
        )
    }
}

struct HashOp {
    layout: Arc<Layout>,
}

impl CustomOp for HashOp {
    fn name(&self) -> &'static str {
        "hash_grid"
    }

    fn backward(&self, g: &[f64], inputs: &[&[f64]], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (xs, table) = (inputs[0], inputs[1]);
        let l = &*self.layout;
        let f = l.features;
        let dim = l.out_dim();
        let n = xs.len() / 3;

        let dx: Vec<f64> = par::map_range(n, |i| {
            let (p, inside) = clamp_unit(&xs[3 * i..3 * i + 3]);
            let gi = &g[i * dim..(i + 1) * dim];
            let mut d = [0.0; 3];
            for level in 0..l.resolutions.len() {
                for c in l.corners(level, p) {
                    let dot: f64 = (0..f).map(|j| gi[level * f + j] * table[c.index * f + j]).sum();
                    for k in 0..3 {
                        d[k] += dot * c.dweight[k];
                    }
                }
            }
            for k in 0..3 {
                if !inside[k] {
                    d[k] = 0.0;
                }
            }
            d
        })
        .into_iter()
        .flatten()
        .collect();

        // Each level owns a disjoint block of the table, so levels scatter in
        // parallel while points within a level are visited in order.
        let mut dt = vec![0.0; table.len()];
        par::for_each_chunk_mut(&mut dt, l.table_size * f, |level, block| {
            let base = level * l.table_size;
            for i in 0..n {
                let (p, _) = clamp_unit(&xs[3 * i..3 * i + 3]);
                let gi = &g[i * dim + level * f..i * dim + (level + 1) * f];
                for c in l.corners(level, p) {
                    let off = (c.index - base) * f;
                    for j in 0..f {
                        block[off + j] += c.weight * gi[j];
                    }
                }
            }
        });
        vec![Some(dx), Some(dt)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_diff_check_multi;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid(cfg: &HashGridConfig) -> (ParamStore, HashGrid) {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = HashGrid::new(&mut store, "grid", cfg, &mut rng);
        // Larger features make interpolation errors visible.
        for v in store.get_mut(g.table).values.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        (store, g)
    }

    fn small() -> HashGridConfig {
        HashGridConfig {
            levels: 3,
            features: 2,
            log2_table_size: 10,
            base_resolution: 4,
            max_resolution: 16,
        }
    }

    /// Independent trilinear interpolation straight from the definition.
    fn oracle(g: &HashGrid, table: &[f64], x: [f64; 3]) -> Vec<f64> {
        let t = g.table_size();
        let mut out = Vec::new();
        for (level, &res) in g.resolutions().iter().enumerate() {
            let p: Vec<f64> = x.iter().map(|v| v * res as f64).collect();
            let i0: Vec<usize> = p.iter().map(|v| (v.floor() as usize).min(res - 1)).collect();
            let fr: Vec<f64> = (0..3).map(|d| p[d] - i0[d] as f64).collect();
            let mut acc = vec![0.0; 2];
            for dz in 0..2 {
                for dy in 0..2 {
                    for dx in 0..2 {
                        let c = [i0[0] + dx, i0[1] + dy, i0[2] + dz];
                        let side = res + 1;
                        let slot = if side.pow(3) <= t {
                            c[0] + side * c[1] + side * side * c[2]
                        } else {
                            (((c[0] as u64) ^ (c[1] as u64 * 2_654_435_761) ^ (c[2] as u64 * 805_459_861))
                                % t as u64) as usize
                        };
                        let w = [dx, dy, dz]
                            .iter()
                            .enumerate()
                            .map(|(d, &b)| if b == 1 { fr[d] } else { 1.0 - fr[d] })
                            .product::<f64>();
                        for j in 0..2 {
                            acc[j] += w * table[(level * t + slot) * 2 + j];
                        }
                    }
                }
            }
            out.extend(acc);
        }
        out
    }

    #[test]
    fn resolutions_grow_geometrically() {
        let (_, g) = grid(&HashGridConfig::default());
        assert_eq!(g.resolutions().first(), Some(&16));
        assert_eq!(g.resolutions().last(), Some(&256));
        assert!(g.resolutions().windows(2).all(|w| w[1] > w[0]));
        assert_eq!(g.out_dim(), 16);
    }

    #[test]
    fn vertex_lookup_returns_stored_feature() {
        let (store, g) = grid(&HashGridConfig {
            levels: 2,
            features: 2,
            log2_table_size: 10,
            base_resolution: 4,
            max_resolution: 4,
        });
        let table = store.values(g.table);
        let x = [0.25, 0.5, 0.75];
        let out = g.encode_values(table, x);
        let slot = 1 + 5 * (2 + 5 * 3);
        assert_eq!(out[0..2], table[slot * 2..slot * 2 + 2]);
    }

    #[test]
    fn cell_center_is_corner_mean() {
        let (store, g) = grid(&small());
        let table = store.values(g.table);
        let res = g.resolutions()[0] as f64;
        let x = [1.5 / res, 2.5 / res, 0.5 / res];
        let out = g.encode_values(table, x);
        let l = &g.layout;
        let mean: f64 = l.corners(0, x).iter().map(|c| table[c.index * 2]).sum::<f64>() / 8.0;
        assert!((out[0] - mean).abs() < 1e-14);
    }

    #[test]
    fn matches_brute_force_interpolation() {
        for cfg in [small(), HashGridConfig::default()] {
            let (store, g) = grid(&cfg);
            let table = store.values(g.table);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            for _ in 0..200 {
                let x = [rng.gen(), rng.gen(), rng.gen()];
                let a = g.encode_values(table, x);
                let b = oracle(&g, table, x);
                for (u, v) in a.iter().zip(&b) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn continuous_across_cell_boundary() {
        let (store, g) = grid(&small());
        let table = store.values(g.table);
        let b = 2.0 / g.resolutions()[0] as f64;
        let lo = g.encode_values(table, [b - 1e-9, 0.3, 0.6]);
        let hi = g.encode_values(table, [b + 1e-9, 0.3, 0.6]);
        for (u, v) in lo.iter().zip(&hi) {
            assert!((u - v).abs() < 1e-6);
        }
    }

    #[test]
    fn clamping_is_counted() {
        let (store, g) = grid(&small());
        let before = g.clamped_count();
        let a = g.encode_values(store.values(g.table), [1.2, 0.5, -0.1]);
        let b = g.encode_values(store.values(g.table), [1.0, 0.5, 0.0]);
        assert_eq!(a, b);
        assert_eq!(g.clamped_count(), before + 1);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (store, g) = grid(&HashGridConfig {
            levels: 2,
            features: 2,
            log2_table_size: 6,
            base_resolution: 2,
            max_resolution: 5,
        });
        let table = store.values(g.table).to_vec();
        let rows = table.len() / 2;
        let pts = vec![0.31, 0.62, 0.17, 0.83, 0.44, 0.55];
        let err = finite_diff_check_multi(
            |v| {
                let x = v[0].reshape(&[2, 3]);
                let t = v[1].reshape(&[rows, 2]);
                let y = g.encode_with(t, x);
                let w: Vec<f64> = (0..y.len()).map(|i| 1.0 + (i as f64).cos()).collect();
                (y * v[0].tape().constant(&[2, g.out_dim()], w)).square().sum()
            },
            &[pts, table],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
