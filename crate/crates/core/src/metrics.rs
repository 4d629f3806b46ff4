//! Image and geometry evaluation metrics.

use std::path::Path;

use kiddo::{KdTree, SquaredEuclidean};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::{blur_values, gaussian_kernel, SSIM_C1, SSIM_C2, SSIM_SIGMA, SSIM_WINDOW};
use crate::par;

pub const PSNR_CAP: f64 = 99.0;

/// PSNR in dB for images in `[0, 1]`, capped for identical inputs.
pub fn psnr(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mse = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    if mse <= 0.0 {
        return PSNR_CAP;
    }
    (-10.0 * mse.log10()).min(PSNR_CAP)
}

/// Mean SSIM of two `[h * w, c]` images.
pub fn ssim(a: &[f64], b: &[f64], h: usize, w: usize, c: usize) -> f64 {
    assert_eq!(a.len(), h * w * c);
    assert_eq!(b.len(), a.len());
    let k = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let bl = |v: &[f64]| blur_values(v, h, w, c, &k);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let (mx, my) = (bl(a), bl(b));
    let (bxx, byy, bxy) = (bl(&prod(a, a)), bl(&prod(b, b)), bl(&prod(a, b)));
    let mut s = 0.0;
    for i in 0..a.len() {
        let (ux, uy) = (mx[i], my[i]);
        let sxx = bxx[i] - ux * ux;
        let syy = byy[i] - uy * uy;
        let sxy = bxy[i] - ux * uy;
        s += ((2.0 * ux * uy + SSIM_C1) * (2.0 * sxy + SSIM_C2)) / ((ux * ux + uy * uy + SSIM_C1) * (sxx + syy + SSIM_C2));
    }
    s / a.len() as f64
}

fn mean_nn_distance(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    let tree: KdTree<f64, 3> = (&to.to_vec()).into();
    let d = par::map_slice(from, |p| tree.nearest_one::<SquaredEuclidean>(p).distance.sqrt());
    d.iter().sum::<f64>() / from.len() as f64
}

/// Chamfer distance: mean Euclidean nearest-neighbour distance from `a` to `b`
/// plus the same from `b` to `a`.
pub fn chamfer(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "chamfer: empty point set");
    mean_nn_distance(a, b) + mean_nn_distance(b, a)
}

pub const CD_CONVENTION: &str = "mean L2 nearest-neighbour distance, both directions summed";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmdConfig {
    /// Entropic blur as a fraction of the reference diagonal.
    pub epsilon: f64,
    pub max_points: usize,
    pub max_iters: usize,
    /// Convergence threshold on potentials, relative to the diagonal.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.01,
            max_points: 1024,
            max_iters: 500,
            tolerance: 1e-7,
            seed: 0,
        }
    }
}

fn subsample(p: &[[f64; 3]], n: usize, seed: u64) -> Vec<[f64; 3]> {
    if p.len() <= n {
        return p.to_vec();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, p.len(), n).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| p[i]).collect()
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// `out_i = -eps log( (1/m) sum_j exp((pot_j - C_ij) / eps) )`, stabilized.
fn softmin(cost: &[f64], m: usize, pot: &[f64], eps: f64) -> Vec<f64> {
    let n = cost.len() / m;
    let lm = (m as f64).ln();
    par::map_range(n, |i| {
        let row = &cost[i * m..(i + 1) * m];
        let mx = row.iter().zip(pot).map(|(c, g)| (g - c) / eps).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().zip(pot).map(|(c, g)| ((g - c) / eps - mx).exp()).sum();
        -eps * (mx + s.ln() - lm)
    })
}

fn cost_matrix(x: &[[f64; 3]], y: &[[f64; 3]]) -> Vec<f64> {
    par::map_range(x.len(), |i| y.iter().map(|q| dist(&x[i], q)).collect::<Vec<_>>())
        .into_iter()
        .flatten()
        .collect()
}

/// Entropic transport value `<a, f> + <b, g>` with uniform weights, computed by
/// log-domain Sinkhorn with blur annealing from `scale` down to `eps`.
fn entropic_ot(x: &[[f64; 3]], y: &[[f64; 3]], eps: f64, scale: f64, cfg: &EmdConfig) -> f64 {
    let (n, m) = (x.len(), y.len());
    let c = cost_matrix(x, y);
    let ct = if std::ptr::eq(x, y) {
        None
    } else {
        Some(cost_matrix(y, x))
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut e = scale.max(eps);
    for _ in 0..cfg.max_iters {
        let f_new = softmin(&c, m, &g, e);
        let delta;
        match &ct {
            Some(ct) => {
                let g_new = softmin(ct, n, &f_new, e);
                delta = f_new.iter().zip(&f).chain(g_new.iter().zip(&g)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                f = f_new;
                g = g_new;
            }
            None => {
                // Symmetric problem: averaged fixed-point iteration on a single potential.
                let avg: Vec<f64> = f.iter().zip(&f_new).map(|(a, b)| 0.5 * (a + b)).collect();
                delta = avg.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                f = avg;
                g = f.clone();
            }
        }
        if e > eps {
            e = (e * 0.5).max(eps);
        } else if delta < cfg.tolerance * scale {
            break;
        }
    }
    f.iter().sum::<f64>() / n as f64 + g.iter().sum::<f64>() / m as f64
}

/// Earth mover's distance approximated by the debiased Sinkhorn divergence
/// `OT(a,b) - OT(a,a)/2 - OT(b,b)/2` under the Euclidean ground cost, on at
/// most `max_points` points per cloud. `diag` sets the blur scale.
pub fn emd(a: &[[f64; 3]], b: &[[f64; 3]], diag: f64, cfg: &EmdConfig) -> f64 {
    assert!(!a.is_empty() && !b.is_empty(), "emd: empty point set");
    let x = subsample(a, cfg.max_points, cfg.seed);
    let y = subsample(b, cfg.max_points, cfg.seed.wrapping_add(1));
    let eps = cfg.epsilon * diag;
    let xy = entropic_ot(&x, &y, eps, diag, cfg);
    let xx = entropic_ot(&x, &x, eps, diag, cfg);
    let yy = entropic_ot(&y, &y, eps, diag, cfg);
    (xy - 0.5 * (xx + yy)).max(0.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameMetric {
    pub frame: usize,
    pub time: f64,
    /// Absent when the ground-truth image is missing.
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshMetric {
    pub time: f64,
    /// Absent without a ground-truth mesh or when extraction came back empty.
    pub cd: Option<f64>,
    pub emd: Option<f64>,
    pub vertices: usize,
    pub faces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub scene: String,
    pub frames: Vec<FrameMetric>,
    pub meshes: Vec<MeshMetric>,
    pub mean_psnr: Option<f64>,
    pub mean_ssim: Option<f64>,
    pub mean_cd: Option<f64>,
    pub mean_emd: Option<f64>,
    pub cd_convention: String,
    pub emd_epsilon: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl MetricReport {
    pub fn new(scene: &str, frames: Vec<FrameMetric>, meshes: Vec<MeshMetric>, emd_epsilon: f64) -> Self {
        Self {
            scene: scene.to_string(),
            mean_psnr: mean(frames.iter().filter_map(|f| f.psnr)),
            mean_ssim: mean(frames.iter().filter_map(|f| f.ssim)),
            mean_cd: mean(meshes.iter().filter_map(|m| m.cd)),
            mean_emd: mean(meshes.iter().filter_map(|m| m.emd)),
            frames,
            meshes,
            cd_convention: CD_CONVENTION.to_string(),
            emd_epsilon,
        }
    }

    /// One row per frame and per mesh, then a summary row.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut s = String::from("kind,index,time,psnr,ssim,cd,emd\n");
        for f in &self.frames {
            s += &format!("frame,{},{},{},{},,\n", f.frame, f.time, opt(f.psnr), opt(f.ssim));
        }
        for (i, m) in self.meshes.iter().enumerate() {
            s += &format!("mesh,{i},{},,,{},{}\n", m.time, opt(m.cd), opt(m.emd));
        }
        s += &format!(
            "mean,,,{},{},{},{}\n",
            opt(self.mean_psnr),
            opt(self.mean_ssim),
            opt(self.mean_cd),
            opt(self.mean_emd)
        );
        s
    }

    pub fn write(&self, dir: &Path) -> crate::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("metrics.json"), serde_json::to_string_pretty(self)?)?;
        std::fs::write(dir.join("metrics.csv"), self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<[f64; 3]> {
        (0..n).map(|_| std::array::from_fn(|_| rng.gen_range(-0.5..0.5))).collect()
    }

    #[test]
    fn psnr_examples() {
        let a = vec![0.5; 300];
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a), PSNR_CAP);
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a: Vec<f64> = (0..20 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..a.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        assert_eq!(ssim(&a, &a, 20, 16, 3), 1.0);
        let s = ssim(&a, &b, 20, 16, 3);
        assert!(s < 0.5 && (s - ssim(&b, &a, 20, 16, 3)).abs() < 1e-14);
    }

    #[test]
    fn ssim_metric_matches_tape_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..9 * 13 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = a.iter().map(|v| (v + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0)).collect();
        let tape = crate::autodiff::Tape::new();
        let t = crate::losses::ssim(tape.constant(&[117, 3], a.clone()), tape.constant(&[117, 3], b.clone()), 9, 13).item();
        assert!((t - ssim(&a, &b, 9, 13, 3)).abs() < 1e-12);
    }

    #[test]
    fn chamfer_is_symmetric_and_zero_on_self() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = cloud(&mut rng, 300);
        let b = cloud(&mut rng, 200);
        assert_eq!(chamfer(&a, &a), 0.0);
        assert!((chamfer(&a, &b) - chamfer(&b, &a)).abs() < 1e-12);
        let shifted: Vec<[f64; 3]> = a.iter().map(|p| [p[0] + 0.01, p[1], p[2]]).collect();
        assert!(chamfer(&a, &shifted) <= 0.02 + 1e-12);
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = cloud(&mut rng, 80);
        let b = cloud(&mut rng, 50);
        let nn = |p: &[f64; 3], s: &[[f64; 3]]| s.iter().map(|q| dist(p, q)).fold(f64::INFINITY, f64::min);
        let brute = a.iter().map(|p| nn(p, &b)).sum::<f64>() / 80.0 + b.iter().map(|p| nn(p, &a)).sum::<f64>() / 50.0;
        assert!((chamfer(&a, &b) - brute).abs() < 1e-12);
    }

    #[test]
    fn emd_of_permutation_is_tiny() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = cloud(&mut rng, 400);
        let mut b = a.clone();
        b.shuffle(&mut rng);
        let diag = 3f64.sqrt();
        let v = emd(&a, &b, diag, &EmdConfig::default());
        assert!(v < 1e-3 * diag, "{v}");
    }

    #[test]
    fn emd_of_translation_is_the_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = cloud(&mut rng, 300);
        let b: Vec<[f64; 3]> = a.iter().map(|p| [p[0] + 0.3, p[1], p[2]]).collect();
        let sharp = EmdConfig {
            epsilon: 0.002,
            ..Default::default()
        };
        let v = emd(&a, &b, 3f64.sqrt(), &sharp);
        assert!((v - 0.3).abs() < 0.006, "{v}");
        // The default blur smooths the divergence below the exact value.
        let blurred = emd(&a, &b, 3f64.sqrt(), &EmdConfig::default());
        assert!(blurred < v && blurred > 0.25, "{blurred}");
    }

    #[test]
    fn report_round_trips_and_writes_csv() {
        let r = MetricReport::new(
            "s",
            vec![FrameMetric {
                frame: 0,
                time: 0.5,
                psnr: Some(30.0),
                ssim: Some(0.9),
            }],
            vec![],
            0.01,
        );
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<MetricReport>(&j).unwrap(), r);
        assert!(r.to_csv().lines().count() == 3 && r.mean_cd.is_none());
    }
}
