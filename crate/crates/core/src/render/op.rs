use std::sync::Arc;

use super::raster::{rasterize_backward, render_tiled, RenderOutput, Splats};
use super::RasterConfig;
use crate::autodiff::{CustomOp, Var};
use crate::gaussian::ProjectedBatch;

/// Differentiable images from one render, plus the full forward record.
pub struct RenderVars<'t> {
    /// `[h*w, 3]`
    pub color: Var<'t>,
    /// `[h*w]`
    pub alpha: Var<'t>,
    /// `[h*w, 3]`
    pub normal: Var<'t>,
    pub output: Arc<RenderOutput>,
    pub splats: Arc<Splats>,
}

struct RasterOp {
    output: Arc<RenderOutput>,
    splats: Arc<Splats>,
    cfg: RasterConfig,
}

impl CustomOp for RasterOp {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn backward(&self, g: &[f64], _inputs: &[&[f64]], _out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let n = g.len() / 7;
        let mut gc = Vec::with_capacity(3 * n);
        let mut ga = Vec::with_capacity(n);
        let mut gn = Vec::with_capacity(3 * n);
        for row in g.chunks_exact(7) {
            gc.extend_from_slice(&row[..3]);
            ga.push(row[3]);
            gn.extend_from_slice(&row[4..]);
        }
        let r = rasterize_backward(&self.output, &self.splats, &self.cfg, &gc, &ga, &gn);
        vec![Some(r.mean2d), Some(r.cov2d), Some(r.opacity), Some(r.color), Some(r.normal)]
    }
}

/// Rasterizes a projected batch with the tiled renderer and records the result on the tape.
pub fn render_batch<'t>(batch: &ProjectedBatch<'t>, width: usize, height: usize, cfg: &RasterConfig) -> RenderVars<'t> {
    let splats = Arc::new(Splats {
        mean2d: batch.mean2d.value(),
        cov2d: batch.cov2d.value(),
        depth: batch.depth.clone(),
        visible: batch.visible.clone(),
        opacity: batch.opacity.value(),
        color: batch.color.value(),
        normal: batch.normal.value(),
    });
    let output = Arc::new(render_tiled(&splats, width, height, cfg));
    let mut packed = Vec::with_capacity(7 * width * height);
    for p in 0..width * height {
        packed.extend_from_slice(&output.color[3 * p..3 * p + 3]);
        packed.push(output.alpha[p]);
        packed.extend_from_slice(&output.normal[3 * p..3 * p + 3]);
    }
    let tape = batch.mean2d.tape();
    let all = tape.custom(
        &[batch.mean2d, batch.cov2d, batch.opacity, batch.color, batch.normal],
        &[width * height, 7],
        packed,
        Box::new(RasterOp {
            output: output.clone(),
            splats: splats.clone(),
            cfg: cfg.clone(),
        }),
    );
    RenderVars {
        color: all.slice_cols(0, 3),
        alpha: all.col(3),
        normal: all.slice_cols(4, 3),
        output,
        splats,
    }
}
