use crate::autodiff::{concat_cols, CustomOp, ParamStore, Tape, Var};

use super::dynamic::{DynamicSurface, SurfaceSamples};
use super::sampling::RaySampleBatch;

const PHI_FLOOR: f64 = 1e-5;
const WEIGHT_FLOOR: f64 = 1e-8;
/// Weight sum below which a ray counts as empty.
pub const EMPTY_RAY: f64 = 1e-6;

/// Discrete logistic conversion of per-sample signed distances `[rays, n]` to
/// opacities. The last sample pairs with a linear extrapolation one step ahead.
pub fn sdf_to_alpha<'t>(sdf: Var<'t>, inv_s: Var<'t>) -> Var<'t> {
    let n = sdf.cols();
    assert!(n >= 2, "need at least two samples per ray");
    let ext = sdf.col(n - 1).scale(2.0) - sdf.col(n - 2);
    let next = concat_cols(&[sdf.slice_cols(1, n - 1), ext]);
    let phi = (sdf * inv_s).sigmoid();
    let phi_next = (next * inv_s).sigmoid();
    let floor = sdf.tape().constant_scalar(PHI_FLOOR);
    ((phi - phi_next) / phi.maximum(floor)).clamp(0.0, 1.0)
}

struct ExclusiveCumprod {
    cols: usize,
}

impl CustomOp for ExclusiveCumprod {
    fn name(&self) -> &'static str {
        "exclusive_cumprod"
    }

    fn backward(&self, g: &[f64], inputs: &[&[f64]], output: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = inputs[0];
        let n = self.cols;
        let mut gx = vec![0.0; x.len()];
        for r in 0..x.len() / n {
            let o = r * n;
            let mut s = 0.0;
            for k in (0..n).rev() {
                gx[o + k] = output[o + k] * s;
                s = g[o + k] + x[o + k] * s;
            }
        }
        vec![Some(gx)]
    }
}

/// Row-wise exclusive cumulative product: `out[i] = prod_{j<i} x[j]`. The
/// backward sweep never divides, so zero factors are fine.
pub fn exclusive_cumprod<'t>(x: Var<'t>) -> Var<'t> {
    let n = x.cols();
    let v = x.value();
    let mut out = vec![0.0; v.len()];
    for (src, dst) in v.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        let mut acc = 1.0;
        for (d, s) in dst.iter_mut().zip(src) {
            *d = acc;
            acc *= s;
        }
    }
    x.tape().custom(&[x], &x.shape(), out, Box::new(ExclusiveCumprod { cols: n }))
}

/// Composited quantities per ray.
#[derive(Clone, Copy)]
pub struct VolumeOutput<'t> {
    /// `[rays, 3]`, background filled in by the leftover transmittance.
    pub color: Var<'t>,
    /// Unit blended gradient direction `[rays, 3]`.
    pub normal: Var<'t>,
    /// Weight-normalized expected depth `[rays]`.
    pub depth: Var<'t>,
    /// `[rays]`
    pub weight_sum: Var<'t>,
    /// `[rays, n]`
    pub weights: Var<'t>,
}

fn blend<'t>(w: Var<'t>, per_sample: Var<'t>) -> Var<'t> {
    let (r, n) = (w.rows(), w.cols());
    concat_cols(&[0, 1, 2].map(|c| (w * per_sample.col(c).reshape(&[r, n])).sum_cols()))
}

/// Unit rows of `[n, 3]` with a tiny floor so zero vectors stay finite.
pub fn normalize_rows<'t>(v: Var<'t>) -> Var<'t> {
    let norm = (v.square().sum_cols().add_scalar(1e-12)).sqrt();
    v / norm.broadcast_cols(3)
}

/// Front-to-back compositing of `[rays, n]` opacities with per-sample colors and
/// gradients `[rays * n, 3]` at the given sample depths.
pub fn volume_render<'t>(alpha: Var<'t>, color: Var<'t>, gradient: Var<'t>, depths: &[f64], background: [f64; 3]) -> VolumeOutput<'t> {
    let tape = alpha.tape();
    let (r, n) = (alpha.rows(), alpha.cols());
    assert_eq!(depths.len(), r * n);
    let w = alpha * exclusive_cumprod(alpha.one_minus());
    let weight_sum = w.sum_cols();
    let bg = tape.constant(&[3], background.to_vec()).broadcast_rows(r);
    let color = blend(w, color) + bg * weight_sum.one_minus().broadcast_cols(3);
    let normal = normalize_rows(blend(w, gradient));
    let d = tape.constant(&[r, n], depths.to_vec());
    let depth = (w * d).sum_cols() / weight_sum.maximum(tape.constant_scalar(WEIGHT_FLOOR));
    VolumeOutput {
        color,
        normal,
        depth,
        weight_sum,
        weights: w,
    }
}

/// Everything the surface losses need from one sampled batch.
#[derive(Clone, Copy)]
pub struct RayRender<'t> {
    pub volume: VolumeOutput<'t>,
    pub samples: SurfaceSamples<'t>,
}

/// Evaluates the field along every sample of `batch` and composites.
pub fn render_rays<'t>(
    surface: &DynamicSurface,
    tape: &'t Tape,
    store: &ParamStore,
    batch: &RaySampleBatch,
    t: f64,
    background: [f64; 3],
) -> RayRender<'t> {
    let (r, n) = (batch.len(), batch.samples);
    let samples = surface.eval_with_gradient(tape, store, &batch.points(), t);
    let alpha = sdf_to_alpha(samples.sdf.reshape(&[r, n]), surface.field.inv_s(tape, store));
    let rgb = surface
        .field
        .radiance(tape, store, samples.normalized, samples.feature, normalize_rows(samples.gradient));
    RayRender {
        volume: volume_render(alpha, rgb, samples.gradient, &batch.depths, background),
        samples,
    }
}
