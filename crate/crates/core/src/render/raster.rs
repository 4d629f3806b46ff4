use std::collections::HashMap;

use super::depth::{filter_depth, DepthBundle};
use super::RasterConfig;
use crate::gaussian::ProjectedGaussian;
use crate::par;

/// Screen-space Gaussians as flat arrays (`n` rows each).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Splats {
    pub mean2d: Vec<f64>,
    pub cov2d: Vec<f64>,
    pub depth: Vec<f64>,
    pub visible: Vec<bool>,
    pub opacity: Vec<f64>,
    pub color: Vec<f64>,
    pub normal: Vec<f64>,
}

impl Splats {
    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }

    pub fn from_projected(gs: &[Option<ProjectedGaussian>]) -> Self {
        let mut s = Self::default();
        for g in gs {
            match g {
                Some(g) => {
                    s.mean2d.extend(g.mean);
                    s.cov2d.extend(g.cov);
                    s.depth.push(g.depth);
                    s.visible.push(true);
                    s.opacity.push(g.opacity);
                    s.color.extend(g.color);
                    s.normal.extend(g.normal);
                }
                None => {
                    s.mean2d.extend([0.0; 2]);
                    s.cov2d.extend([1.0, 0.0, 1.0]);
                    s.depth.push(0.0);
                    s.visible.push(false);
                    s.opacity.push(0.0);
                    s.color.extend([0.0; 3]);
                    s.normal.extend([0.0; 3]);
                }
            }
        }
        s
    }
}

/// One composited Gaussian at a pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contributor {
    pub id: u32,
    pub alpha: f64,
    /// Transmittance in front of this contributor.
    pub transmittance: f64,
    /// `alpha` hit the `max_alpha` clamp.
    pub clamped: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RenderOutput {
    pub width: usize,
    pub height: usize,
    /// `h x w x 3`
    pub color: Vec<f64>,
    /// Accumulated alpha `Σ α_i T_i`.
    pub alpha: Vec<f64>,
    /// `h x w x 3` blended normals `Σ n_i α_i T_i` (not renormalized).
    pub normal: Vec<f64>,
    pub depth: DepthBundle,
    /// Transmittance after the last contributor.
    pub final_transmittance: Vec<f64>,
    /// Depth-sorted contributors per pixel, kept for the backward pass.
    pub contributors: Vec<Vec<Contributor>>,
    /// Visible Gaussians dropped for a non-invertible covariance.
    pub degenerate: usize,
}

#[derive(Debug, Clone, Copy)]
struct Prep {
    conic: [f64; 3],
    mean: [f64; 2],
    rx: f64,
    ry: f64,
}

/// Conics for every usable Gaussian and the global front-to-back order.
fn prepare(s: &Splats) -> (Vec<Option<Prep>>, Vec<u32>, usize) {
    let n = s.len();
    let mut degenerate = 0;
    let preps: Vec<Option<Prep>> = (0..n)
        .map(|i| {
            if !s.visible[i] {
                return None;
            }
            let [a, b, c] = [s.cov2d[3 * i], s.cov2d[3 * i + 1], s.cov2d[3 * i + 2]];
            let det = a * c - b * b;
            if !(det > 0.0 && a > 0.0 && det.is_finite()) {
                degenerate += 1;
                return None;
            }
            Some(Prep {
                conic: [c / det, -b / det, a / det],
                mean: [s.mean2d[2 * i], s.mean2d[2 * i + 1]],
                rx: a.sqrt(),
                ry: c.sqrt(),
            })
        })
        .collect();
    let mut order: Vec<u32> = (0..n as u32).filter(|&i| preps[i as usize].is_some()).collect();
    order.sort_by(|&a, &b| s.depth[a as usize].total_cmp(&s.depth[b as usize]).then(a.cmp(&b)));
    (preps, order, degenerate)
}

#[derive(Debug, Clone, Default)]
struct Pixel {
    color: [f64; 3],
    normal: [f64; 3],
    alpha: f64,
    depth_sum: f64,
    median: f64,
    final_t: f64,
    contributors: Vec<Contributor>,
}

/// Front-to-back walk over `ids` (already depth-sorted) at pixel `(x, y)`.
fn shade(x: usize, y: usize, ids: &[u32], preps: &[Option<Prep>], s: &Splats, cfg: &RasterConfig) -> Pixel {
    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
    let mut p = Pixel::default();
    let mut t = 1.0;
    for &id in ids {
        let i = id as usize;
        let g = preps[i].as_ref().expect("prepared");
        let (dx, dy) = (px - g.mean[0], py - g.mean[1]);
        let q = g.conic[0] * dx * dx + 2.0 * g.conic[1] * dx * dy + g.conic[2] * dy * dy;
        if !(q <= cfg.cutoff_sq) {
            continue;
        }
        let raw = s.opacity[i] * (-0.5 * q).exp();
        let clamped = raw > cfg.max_alpha;
        let alpha = raw.min(cfg.max_alpha);
        let next_t = t * (1.0 - alpha);
        if next_t < cfg.min_transmittance {
            break;
        }
        let w = alpha * t;
        for c in 0..3 {
            p.color[c] += w * s.color[3 * i + c];
            p.normal[c] += w * s.normal[3 * i + c];
        }
        p.alpha += w;
        p.depth_sum += w * s.depth[i];
        p.contributors.push(Contributor {
            id,
            alpha,
            transmittance: t,
            clamped,
        });
        t = next_t;
        if p.median == 0.0 && t < cfg.tau_d {
            p.median = s.depth[i];
        }
    }
    for c in 0..3 {
        p.color[c] += t * cfg.background[c];
    }
    p.final_t = t;
    p
}

fn assemble(width: usize, height: usize, pixels: Vec<Pixel>, degenerate: usize, cfg: &RasterConfig) -> RenderOutput {
    let n = width * height;
    let mut out = RenderOutput {
        width,
        height,
        color: Vec::with_capacity(3 * n),
        alpha: Vec::with_capacity(n),
        normal: Vec::with_capacity(3 * n),
        final_transmittance: Vec::with_capacity(n),
        contributors: Vec::with_capacity(n),
        degenerate,
        ..Default::default()
    };
    let d = &mut out.depth;
    for p in pixels {
        out.color.extend(p.color);
        out.normal.extend(p.normal);
        out.alpha.push(p.alpha);
        out.final_transmittance.push(p.final_t);
        let alpha_valid = p.alpha > 0.0;
        let da = if alpha_valid { p.depth_sum / p.alpha } else { 0.0 };
        let (df, ok) = filter_depth(da, alpha_valid, p.median, cfg.tau_f, cfg.depth_filter_combine);
        d.alpha_depth.push(da);
        d.median.push(p.median);
        d.filtered.push(df);
        d.valid.push(ok);
        out.contributors.push(p.contributors);
    }
    out
}

/// Reference renderer: every pixel walks the full sorted Gaussian list.
pub fn render_brute(s: &Splats, width: usize, height: usize, cfg: &RasterConfig) -> RenderOutput {
    let (preps, order, degenerate) = prepare(s);
    let pixels = par::map_range(width * height, |k| shade(k % width, k / width, &order, &preps, s, cfg));
    assemble(width, height, pixels, degenerate, cfg)
}

/// Tile-binned renderer. Each tile walks only the Gaussians whose 3σ box (plus a
/// one-pixel margin) overlaps it, in the same global order as [`render_brute`].
pub fn render_tiled(s: &Splats, width: usize, height: usize, cfg: &RasterConfig) -> RenderOutput {
    let (preps, order, degenerate) = prepare(s);
    let ts = cfg.tile_size.max(1);
    let (tw, th) = (width.div_ceil(ts), height.div_ceil(ts));
    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tw * th];
    let r = cfg.cutoff_sq.sqrt();
    for &id in &order {
        let g = preps[id as usize].as_ref().expect("prepared");
        let (x0, x1) = (g.mean[0] - r * g.rx - 1.0, g.mean[0] + r * g.rx + 1.0);
        let (y0, y1) = (g.mean[1] - r * g.ry - 1.0, g.mean[1] + r * g.ry + 1.0);
        if x1 < 0.0 || y1 < 0.0 || x0 >= width as f64 || y0 >= height as f64 {
            continue;
        }
        let tx0 = (x0.max(0.0) as usize / ts).min(tw - 1);
        let tx1 = (x1.min(width as f64 - 1.0) as usize / ts).min(tw - 1);
        let ty0 = (y0.max(0.0) as usize / ts).min(th - 1);
        let ty1 = (y1.min(height as f64 - 1.0) as usize / ts).min(th - 1);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tw + tx].push(id);
            }
        }
    }
    let tiles: Vec<Vec<Pixel>> = par::map_range(tw * th, |t| {
        let (tx, ty) = (t % tw, t / tw);
        let mut v = Vec::with_capacity(ts * ts);
        for y in ty * ts..((ty + 1) * ts).min(height) {
            for x in tx * ts..((tx + 1) * ts).min(width) {
                v.push(shade(x, y, &bins[t], &preps, s, cfg));
            }
        }
        v
    });
    let mut pixels: Vec<Pixel> = vec![Pixel::default(); width * height];
    for (t, tile) in tiles.into_iter().enumerate() {
        let (tx, ty) = (t % tw, t / tw);
        let mut it = tile.into_iter();
        for y in ty * ts..((ty + 1) * ts).min(height) {
            for x in tx * ts..((tx + 1) * ts).min(width) {
                pixels[y * width + x] = it.next().expect("tile pixel");
            }
        }
    }
    assemble(width, height, pixels, degenerate, cfg)
}

/// Gradients of the loss with respect to each splat's screen-space inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct SplatGrads {
    pub mean2d: Vec<f64>,
    pub cov2d: Vec<f64>,
    pub opacity: Vec<f64>,
    pub color: Vec<f64>,
    pub normal: Vec<f64>,
}

const GRAD_WIDTH: usize = 12;

/// Adjoint of the blending recurrence. `grad_color`/`grad_normal` are `h x w x 3`,
/// `grad_alpha` is `h x w`. Contributions are summed per tile in pixel order and
/// tiles are merged in order, so the result does not depend on thread count.
pub fn rasterize_backward(
    out: &RenderOutput,
    s: &Splats,
    cfg: &RasterConfig,
    grad_color: &[f64],
    grad_alpha: &[f64],
    grad_normal: &[f64],
) -> SplatGrads {
    let (w, h) = (out.width, out.height);
    assert_eq!(out.contributors.len(), w * h, "render output lacks contributor lists");
    let ts = cfg.tile_size.max(1);
    let (tw, th) = (w.div_ceil(ts), h.div_ceil(ts));
    let pixel_grads = |x: usize, y: usize, acc: &mut Vec<(u32, [f64; GRAD_WIDTH])>, slot: &mut HashMap<u32, usize>| {
        let p = y * w + x;
        let contribs = &out.contributors[p];
        if contribs.is_empty() {
            return;
        }
        let g: [f64; 7] = [
            grad_color[3 * p],
            grad_color[3 * p + 1],
            grad_color[3 * p + 2],
            grad_alpha[p],
            grad_normal[3 * p],
            grad_normal[3 * p + 1],
            grad_normal[3 * p + 2],
        ];
        if g.iter().all(|&v| v == 0.0) {
            return;
        }
        let tf = out.final_transmittance[p];
        let mut behind = [
            tf * cfg.background[0],
            tf * cfg.background[1],
            tf * cfg.background[2],
            0.0,
            0.0,
            0.0,
            0.0,
        ];
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        for c in contribs.iter().rev() {
            let i = c.id as usize;
            let feat = [
                s.color[3 * i],
                s.color[3 * i + 1],
                s.color[3 * i + 2],
                1.0,
                s.normal[3 * i],
                s.normal[3 * i + 1],
                s.normal[3 * i + 2],
            ];
            let wgt = c.alpha * c.transmittance;
            let mut d_alpha = 0.0;
            for k in 0..7 {
                d_alpha += g[k] * (feat[k] * c.transmittance - behind[k] / (1.0 - c.alpha));
                behind[k] += feat[k] * wgt;
            }
            let mut r = [0.0; GRAD_WIDTH];
            for k in 0..3 {
                r[6 + k] = g[k] * wgt;
                r[9 + k] = g[4 + k] * wgt;
            }
            if !c.clamped {
                let [a, b, cc] = [s.cov2d[3 * i], s.cov2d[3 * i + 1], s.cov2d[3 * i + 2]];
                let det = a * cc - b * b;
                let conic = [cc / det, -b / det, a / det];
                let (dx, dy) = (px - s.mean2d[2 * i], py - s.mean2d[2 * i + 1]);
                let u = [conic[0] * dx + conic[1] * dy, conic[1] * dx + conic[2] * dy];
                let q = conic[0] * dx * dx + 2.0 * conic[1] * dx * dy + conic[2] * dy * dy;
                let gauss = (-0.5 * q).exp();
                r[5] = d_alpha * gauss;
                let dq = -0.5 * c.alpha * d_alpha;
                r[0] = -2.0 * dq * u[0];
                r[1] = -2.0 * dq * u[1];
                r[2] = -dq * u[0] * u[0];
                r[3] = -2.0 * dq * u[0] * u[1];
                r[4] = -dq * u[1] * u[1];
            }
            let k = *slot.entry(c.id).or_insert_with(|| {
                acc.push((c.id, [0.0; GRAD_WIDTH]));
                acc.len() - 1
            });
            for j in 0..GRAD_WIDTH {
                acc[k].1[j] += r[j];
            }
        }
    };
    let tiles: Vec<Vec<(u32, [f64; GRAD_WIDTH])>> = par::map_range(tw * th, |t| {
        let (tx, ty) = (t % tw, t / tw);
        let mut acc = Vec::new();
        let mut slot = HashMap::new();
        for y in ty * ts..((ty + 1) * ts).min(h) {
            for x in tx * ts..((tx + 1) * ts).min(w) {
                pixel_grads(x, y, &mut acc, &mut slot);
            }
        }
        acc
    });
    let n = s.len();
    let mut gr = SplatGrads {
        mean2d: vec![0.0; 2 * n],
        cov2d: vec![0.0; 3 * n],
        opacity: vec![0.0; n],
        color: vec![0.0; 3 * n],
        normal: vec![0.0; 3 * n],
    };
    for tile in tiles {
        for (id, r) in tile {
            let i = id as usize;
            gr.mean2d[2 * i] += r[0];
            gr.mean2d[2 * i + 1] += r[1];
            for k in 0..3 {
                gr.cov2d[3 * i + k] += r[2 + k];
                gr.color[3 * i + k] += r[6 + k];
                gr.normal[3 * i + k] += r[9 + k];
            }
            gr.opacity[i] += r[5];
        }
    }
    gr
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    use crate::autodiff::{finite_diff_check_multi, CustomOp, Var};
    use crate::gaussian::{project_batch, random_unit_quat, Camera, GaussianVars};
    use crate::render::{render_batch, DepthCombine};
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A splat centered on pixel `(x, y)` with isotropic variance `var`.
    fn splat(s: &mut Splats, x: f64, y: f64, var: f64, depth: f64, opacity: f64, color: [f64; 3]) {
        s.mean2d.extend([x, y]);
        s.cov2d.extend([var, 0.0, var]);
        s.depth.push(depth);
        s.visible.push(true);
        s.opacity.push(opacity);
        s.color.extend(color);
        s.normal.extend([0.0, 0.0, -1.0]);
    }

    fn random_splats(rng: &mut ChaCha8Rng, n: usize, size: f64) -> Splats {
        let mut s = Splats::default();
        for _ in 0..n {
            let var = rng.gen_range(0.5..40.0);
            let b: f64 = rng.gen_range(-0.5..0.5) * var;
            s.mean2d.extend([rng.gen_range(-5.0..size + 5.0), rng.gen_range(-5.0..size + 5.0)]);
            s.cov2d.extend([var, b, rng.gen_range(0.5..40.0) + b.abs()]);
            s.depth.push(rng.gen_range(0.5..5.0));
            s.visible.push(rng.gen_bool(0.95));
            s.opacity.push(rng.gen_range(0.05..0.99));
            s.color.extend([rng.gen::<f64>(), rng.gen(), rng.gen()]);
            let n: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), -1.0];
            let l = (n[0] * n[0] + n[1] * n[1] + 1.0).sqrt();
            s.normal.extend(n.map(|v| v / l));
        }
        s
    }

    #[test]
    fn empty_scene_is_background() {
        let cfg = RasterConfig {
            background: [0.2, 0.3, 0.4],
            ..Default::default()
        };
        let out = render_tiled(&Splats::default(), 8, 8, &cfg);
        for p in 0..64 {
            assert_eq!(&out.color[3 * p..3 * p + 3], &[0.2, 0.3, 0.4]);
            assert_eq!(out.alpha[p], 0.0);
            assert!(!out.depth.valid[p]);
            assert_eq!(out.depth.alpha_depth[p], 0.0);
        }
    }

    #[test]
    fn single_half_opaque_white() {
        let mut s = Splats::default();
        splat(&mut s, 4.5, 4.5, 1.0, 2.0, 0.5, [1.0; 3]);
        let out = render_brute(&s, 9, 9, &RasterConfig::default());
        let p = 4 * 9 + 4;
        assert_eq!(out.color[3 * p], 0.5);
        assert_eq!(out.alpha[p], 0.5);
        assert_eq!(out.depth.median[p], 2.0);
    }

    #[test]
    fn two_contributors_alpha_depth() {
        let mut s = Splats::default();
        splat(&mut s, 0.5, 0.5, 1.0, 3.0, 0.5, [0.0; 3]);
        splat(&mut s, 0.5, 0.5, 1.0, 1.0, 0.5, [1.0; 3]);
        let cfg = RasterConfig {
            tau_f: 0.5,
            ..Default::default()
        };
        let out = render_brute(&s, 1, 1, &cfg);
        assert!((out.depth.alpha_depth[0] - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(out.depth.median[0], 1.0);
        assert_eq!(out.contributors[0].iter().map(|c| c.id).collect::<Vec<_>>(), vec![1, 0]);
        assert!(!out.depth.valid[0], "|5/3 - 1| exceeds tau_f");
        assert_eq!(out.color[0], 0.5);
    }

    #[test]
    fn tiled_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = RasterConfig {
            tile_size: 8,
            ..Default::default()
        };
        for _ in 0..5 {
            let s = random_splats(&mut rng, 50, 48.0);
            let a = render_brute(&s, 48, 40, &cfg);
            let b = render_tiled(&s, 48, 40, &cfg);
            assert_eq!(a, b);
        }
    }

    #[test]
    fn permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let s = random_splats(&mut rng, 30, 32.0);
        let mut perm: Vec<usize> = (0..30).collect();
        perm.reverse();
        let mut p = Splats::default();
        for &i in &perm {
            p.mean2d.extend_from_slice(&s.mean2d[2 * i..2 * i + 2]);
            p.cov2d.extend_from_slice(&s.cov2d[3 * i..3 * i + 3]);
            p.depth.push(s.depth[i]);
            p.visible.push(s.visible[i]);
            p.opacity.push(s.opacity[i]);
            p.color.extend_from_slice(&s.color[3 * i..3 * i + 3]);
            p.normal.extend_from_slice(&s.normal[3 * i..3 * i + 3]);
        }
        let cfg = RasterConfig::default();
        let (a, b) = (render_tiled(&s, 32, 32, &cfg), render_tiled(&p, 32, 32, &cfg));
        assert_eq!(a.color, b.color);
        assert_eq!(a.depth, b.depth);
    }

    #[test]
    fn depth_products_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for combine in [DepthCombine::Midpoint, DepthCombine::PaperLiteral] {
            let cfg = RasterConfig {
                tau_f: 0.3,
                depth_filter_combine: combine,
                ..Default::default()
            };
            let s = random_splats(&mut rng, 40, 32.0);
            let out = render_tiled(&s, 32, 32, &cfg);
            for p in 0..32 * 32 {
                let depths: Vec<f64> = out.contributors[p].iter().map(|c| s.depth[c.id as usize]).collect();
                let dm = out.depth.median[p];
                assert!(dm == 0.0 || depths.contains(&dm));
                if out.alpha[p] > 0.0 {
                    let da = out.depth.alpha_depth[p];
                    let lo = depths.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = depths.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    assert!(da >= lo - 1e-12 && da <= hi + 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let s = random_splats(&mut rng, 20, 16.0);
        let cfg = RasterConfig::default();
        let out = render_tiled(&s, 16, 16, &cfg);
        let z3 = vec![0.0; 3 * 256];
        let g = rasterize_backward(&out, &s, &cfg, &z3, &[0.0; 256], &z3);
        assert!(g.mean2d.iter().chain(&g.cov2d).chain(&g.opacity).chain(&g.color).all(|&v| v == 0.0));
    }

    /// Weighted sum of a brute-force render, with the analytic backward attached.
    fn splat_loss<'t>(v: &[Var<'t>], s: &Splats, w: usize, h: usize, cfg: &RasterConfig, weights: &[f64]) -> Var<'t> {
        let splats = Splats {
            mean2d: v[0].value(),
            cov2d: v[1].value(),
            opacity: v[2].value(),
            color: v[3].value(),
            normal: v[4].value(),
            ..s.clone()
        };
        let out = Arc::new(render_brute(&splats, w, h, cfg));
        let tape = v[0].tape();
        let mut packed = Vec::new();
        for p in 0..w * h {
            packed.extend_from_slice(&out.color[3 * p..3 * p + 3]);
            packed.push(out.alpha[p]);
            packed.extend_from_slice(&out.normal[3 * p..3 * p + 3]);
        }
        struct Op(Arc<RenderOutput>, Splats, RasterConfig);
        impl CustomOp for Op {
            fn name(&self) -> &'static str {
                "test_raster"
            }
            fn backward(&self, g: &[f64], _: &[&[f64]], _: &[f64]) -> Vec<Option<Vec<f64>>> {
                let gc: Vec<f64> = g.chunks(7).flat_map(|r| r[..3].to_vec()).collect();
                let ga: Vec<f64> = g.chunks(7).map(|r| r[3]).collect();
                let gn: Vec<f64> = g.chunks(7).flat_map(|r| r[4..].to_vec()).collect();
                let r = rasterize_backward(&self.0, &self.1, &self.2, &gc, &ga, &gn);
                vec![Some(r.mean2d), Some(r.cov2d), Some(r.opacity), Some(r.color), Some(r.normal)]
            }
        }
        let img = tape.custom(&v[..5], &[w * h, 7], packed, Box::new(Op(out, splats, cfg.clone())));
        (img * tape.constant(&[w * h, 7], weights.to_vec())).sum()
    }

    #[test]
    fn single_gaussian_opacity_gradient() {
        let mut s = Splats::default();
        splat(&mut s, 3.2, 2.9, 2.0, 2.0, 0.6, [0.8, 0.3, 0.1]);
        let cfg = RasterConfig::default();
        let weights: Vec<f64> = (0..6 * 6 * 7).map(|i| ((i * 7919) % 13) as f64 / 13.0 - 0.3).collect();
        let inputs = vec![s.mean2d.clone(), s.cov2d.clone(), s.opacity.clone(), s.color.clone(), s.normal.clone()];
        let err = finite_diff_check_multi(|v| splat_loss(v, &s, 6, 6, &cfg, &weights), &inputs, 1e-6).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn occlusion_gradient_includes_rear_term() {
        let mut s = Splats::default();
        splat(&mut s, 2.5, 2.5, 3.0, 1.0, 0.5, [0.0; 3]);
        splat(&mut s, 2.5, 2.5, 3.0, 2.0, 0.5, [1.0; 3]);
        let cfg = RasterConfig::default();
        let out = render_brute(&s, 5, 5, &cfg);
        let mut gc = vec![0.0; 75];
        gc[3 * 12] = 1.0;
        let g = rasterize_backward(&out, &s, &cfg, &gc, &[0.0; 25], &[0.0; 75]);
        assert!(g.opacity[0] < 0.0, "front opacity occludes the white rear splat");
        assert!(g.opacity[1] > 0.0);
        let weights: Vec<f64> = (0..25 * 7).map(|i| if i == 12 * 7 { 1.0 } else { 0.0 }).collect();
        let inputs = vec![s.mean2d.clone(), s.cov2d.clone(), s.opacity.clone(), s.color.clone(), s.normal.clone()];
        let err = finite_diff_check_multi(|v| splat_loss(v, &s, 5, 5, &cfg, &weights), &inputs, 1e-6).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn random_scenes_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let cfg = RasterConfig::default();
        for _ in 0..5 {
            let mut s = random_splats(&mut rng, 4, 10.0);
            s.visible.iter_mut().for_each(|v| *v = true);
            s.opacity.iter_mut().for_each(|o| *o = o.min(0.8));
            let weights: Vec<f64> = (0..10 * 10 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let inputs = vec![s.mean2d.clone(), s.cov2d.clone(), s.opacity.clone(), s.color.clone(), s.normal.clone()];
            let err = finite_diff_check_multi(|v| splat_loss(v, &s, 10, 10, &cfg, &weights), &inputs, 1e-7).unwrap();
            assert!(err < 1e-3, "{err}");
        }
    }

    #[test]
    fn tape_render_gradients_through_projection() {
        let cam = Camera::look_at(Vector3::new(0.0, -2.5, 0.3), Vector3::zeros(), Vector3::z(), 0.9, 12, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        let n = 3;
        let pos: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let rot: Vec<f64> = (0..n).flat_map(|_| random_unit_quat(&mut rng)).collect();
        let ls: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-2.2..-1.6)).collect();
        let op: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..0.5)).collect();
        let sh: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let weights: Vec<f64> = (0..144 * 7).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let cfg = RasterConfig::default();
        let err = finite_diff_check_multi(
            |v| {
                let g = GaussianVars {
                    position: v[0].reshape(&[n, 3]),
                    rotation: v[1].reshape(&[n, 4]),
                    log_scales: v[2].reshape(&[n, 3]),
                    opacity_logit: v[3],
                    sh: v[4].reshape(&[n, 3]),
                };
                let b = project_batch(&g, &cam, 0, 0.01);
                let r = render_batch(&b, 12, 12, &cfg);
                let tape = v[0].tape();
                let img = crate::autodiff::concat_cols(&[r.color, r.alpha, r.normal]);
                (img * tape.constant(&[144, 7], weights.clone())).sum()
            },
            &[pos, rot, ls, op, sh],
            1e-7,
        )
        .unwrap();
        assert!(err < 1e-3, "{err}");
    }
}
