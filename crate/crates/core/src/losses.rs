//! Training losses for the splatting and surface branches.

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Tape, Var};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda_i: f64,
    pub lambda_gn: f64,
    pub lambda_sdf: f64,
    pub lambda_nn: f64,
    pub lambda_eik: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_i: 0.8,
            lambda_gn: 0.1,
            lambda_sdf: 1.0,
            lambda_nn: 0.05,
            lambda_eik: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.lambda_i, self.lambda_gn, self.lambda_sdf, self.lambda_nn, self.lambda_eik];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) && self.lambda_i <= 1.0 {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("loss weights must be >= 0 with lambda_i <= 1: {self:?}")))
        }
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable zero-padded blur of an `[h * w, c]` image (pixel-major).
pub fn blur_values(x: &[f64], h: usize, w: usize, c: usize, kernel: &[f64]) -> Vec<f64> {
    let r = kernel.len() as isize / 2;
    let row = w * c;
    let mut tmp = vec![0.0; x.len()];
    par::for_each_chunk_mut(&mut tmp, row, |y, out| {
        let src = &x[y * row..(y + 1) * row];
        for px in 0..w {
            for (t, &kv) in kernel.iter().enumerate() {
                let sx = px as isize + t as isize - r;
                if sx < 0 || sx >= w as isize {
                    continue;
                }
                for ch in 0..c {
                    out[px * c + ch] += kv * src[sx as usize * c + ch];
                }
            }
        }
    });
    let mut out = vec![0.0; x.len()];
    par::for_each_chunk_mut(&mut out, row, |y, o| {
        for (t, &kv) in kernel.iter().enumerate() {
            let sy = y as isize + t as isize - r;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let src = &tmp[sy as usize * row..(sy as usize + 1) * row];
            for (a, b) in o.iter_mut().zip(src) {
                *a += kv * b;
            }
        }
    });
    out
}

struct BlurOp {
    h: usize,
    w: usize,
    c: usize,
    kernel: Rc<Vec<f64>>,
}

impl CustomOp for BlurOp {
    fn name(&self) -> &'static str {
        "gaussian_blur"
    }

    fn backward(&self, g: &[f64], _: &[&[f64]], _: &[f64]) -> Vec<Option<Vec<f64>>> {
        // Symmetric taps with zero padding: the blur is self-adjoint.
        vec![Some(blur_values(g, self.h, self.w, self.c, &self.kernel))]
    }
}

fn blur<'t>(x: Var<'t>, h: usize, w: usize, kernel: &Rc<Vec<f64>>) -> Var<'t> {
    let c = x.cols();
    let v = blur_values(&x.value(), h, w, c, kernel);
    x.tape().custom(
        &[x],
        &x.shape(),
        v,
        Box::new(BlurOp {
            h,
            w,
            c,
            kernel: kernel.clone(),
        }),
    )
}

/// Mean SSIM of two `[h * w, c]` images with an 11×11 Gaussian window (σ = 1.5).
pub fn ssim<'t>(x: Var<'t>, y: Var<'t>, h: usize, w: usize) -> Var<'t> {
    assert_eq!(x.shape(), y.shape(), "ssim: image shapes differ");
    assert_eq!(x.rows(), h * w);
    let k = Rc::new(gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA));
    let mx = blur(x, h, w, &k);
    let my = blur(y, h, w, &k);
    let sxx = blur(x.square(), h, w, &k) - mx.square();
    let syy = blur(y.square(), h, w, &k) - my.square();
    let sxy = blur(x * y, h, w, &k) - mx * my;
    let num = (mx * my).scale(2.0).add_scalar(SSIM_C1) * sxy.scale(2.0).add_scalar(SSIM_C2);
    let den = (mx.square() + my.square()).add_scalar(SSIM_C1) * (sxx + syy).add_scalar(SSIM_C2);
    (num / den).mean()
}

pub fn l1<'t>(x: Var<'t>, y: Var<'t>) -> Var<'t> {
    (x - y).abs().mean()
}

/// Rows whose mask is set, or `None` when the mask is empty.
fn masked_rows(mask: &[bool]) -> Option<Rc<Vec<usize>>> {
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    (!idx.is_empty()).then(|| Rc::new(idx))
}

/// Per-row L1 distance plus angular term `|1 - n·m|`, averaged over masked rows
/// of `[n, 3]` normal arrays. `None` when no row is selected.
pub fn normal_loss<'t>(pred: Var<'t>, target: &[f64], mask: &[bool]) -> Option<Var<'t>> {
    let tape = pred.tape();
    assert_eq!(pred.rows(), mask.len());
    assert_eq!(target.len(), mask.len() * 3);
    let idx = masked_rows(mask)?;
    let t: Vec<f64> = idx.iter().flat_map(|&i| target[3 * i..3 * i + 3].iter().copied()).collect();
    let p = pred.gather_rows(idx.clone());
    let t = tape.constant(&[idx.len(), 3], t);
    let l1 = (p - t).abs().sum_cols();
    let ang = (p * t).sum_cols().one_minus().abs();
    Some((l1 + ang).mean())
}

/// Pixels whose accumulated alpha exceeds 0.5 and whose target normal is non-zero.
pub fn normal_mask(alpha: &[f64], target: &[f64]) -> Vec<bool> {
    alpha
        .iter()
        .zip(target.chunks_exact(3))
        .map(|(&a, n)| a > 0.5 && n.iter().map(|v| v * v).sum::<f64>() > 0.25)
        .collect()
}

/// Splatting-branch terms.
#[derive(Clone, Copy)]
pub struct DgLoss<'t> {
    pub total: Var<'t>,
    pub l1: Var<'t>,
    pub ssim: Var<'t>,
    pub normal: Option<Var<'t>>,
}

/// `λ_I·L1 + (1−λ_I)·(1−SSIM) + λ_gn·L_n` on `[h*w, 3]` images. The normal term
/// is skipped when no target normals are given or no pixel qualifies.
pub fn image_loss_dg<'t>(
    rendered: Var<'t>,
    target: &[f64],
    h: usize,
    w: usize,
    normals: Option<(Var<'t>, &[f64], &[bool])>,
    weights: &LossWeights,
) -> DgLoss<'t> {
    let tape = rendered.tape();
    assert_eq!(target.len(), rendered.len(), "image_loss_dg: size mismatch");
    let t = tape.constant(&rendered.shape(), target.to_vec());
    let l1v = l1(rendered, t);
    let s = ssim(rendered, t, h, w);
    let mut total = l1v.scale(weights.lambda_i) + s.one_minus().scale(1.0 - weights.lambda_i);
    let normal = normals.and_then(|(n, tn, mask)| normal_loss(n, tn, mask));
    if let Some(n) = normal {
        if weights.lambda_gn > 0.0 {
            total = total + n.scale(weights.lambda_gn);
        }
    }
    DgLoss {
        total,
        l1: l1v,
        ssim: s,
        normal,
    }
}

/// Surface-branch terms; absent terms had no qualifying samples.
#[derive(Clone, Copy)]
pub struct DnLoss<'t> {
    pub total: Var<'t>,
    pub color: Var<'t>,
    pub sdf: Option<Var<'t>>,
    pub normal: Option<Var<'t>>,
    pub eikonal: Option<Var<'t>>,
}

/// Mean `(|g| - 1)²` over `[n, 3]` gradients.
pub fn eikonal<'t>(gradient: Var<'t>) -> Var<'t> {
    gradient.square().sum_cols().sqrt().add_scalar(-1.0).square().mean()
}

/// `L1 + λ_sdf·mean|F| + λ_nn·L_n + λ_eik·L_eik`.
pub fn surface_losses_dn<'t>(
    color: Var<'t>,
    target_color: &[f64],
    sdf_on_surface: Option<Var<'t>>,
    normals: Option<(Var<'t>, &[f64], &[bool])>,
    eik_gradient: Option<Var<'t>>,
    weights: &LossWeights,
) -> DnLoss<'t> {
    let tape: &Tape = color.tape();
    let c = l1(color, tape.constant(&color.shape(), target_color.to_vec()));
    let sdf = sdf_on_surface.map(|s| s.abs().mean());
    if sdf_on_surface.is_none() {
        log::debug!("no filtered depth points; SDF term skipped");
    }
    let normal = normals.and_then(|(n, t, m)| normal_loss(n, t, m));
    let eik = eik_gradient.map(eikonal);
    let mut total = c;
    for (term, w) in [(sdf, weights.lambda_sdf), (normal, weights.lambda_nn), (eik, weights.lambda_eik)] {
        if let Some(v) = term {
            if w > 0.0 {
                total = total + v.scale(w);
            }
        }
    }
    DnLoss {
        total,
        color: c,
        sdf,
        normal,
        eikonal: eik,
    }
}

/// Joint objective on a shared tape.
pub fn total_loss<'t>(dg: Var<'t>, dn: Var<'t>) -> Var<'t> {
    dg + dn
}
