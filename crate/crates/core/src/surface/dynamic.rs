use std::rc::Rc;

use crate::autodiff::{concat_cols, ParamId, ParamStore, Tape, Var};
use crate::deform::BijectiveDeformation;
use crate::par;

use super::field::{SdfField, SdfOutput};

/// Rows per tape when evaluating large point sets without gradients.
const CHUNK: usize = 4096;

/// Composite field `F(H(x, t))` with spatial gradients.
#[derive(Clone, Copy)]
pub struct SurfaceSamples<'t> {
    /// `[n]`
    pub sdf: Var<'t>,
    /// Observation-space gradient `[n, 3]` by central differences.
    pub gradient: Var<'t>,
    /// `[n, feature_dim]`
    pub feature: Var<'t>,
    /// Normalized canonical points `[n, 3]`.
    pub normalized: Var<'t>,
}

/// Time-varying signed distance: canonical field plus the invertible map
/// from observation space. Without a deformation the field is static.
#[derive(Debug, Clone)]
pub struct DynamicSurface {
    pub field: SdfField,
    pub deform: Option<BijectiveDeformation>,
}

impl DynamicSurface {
    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.field.params();
        if let Some(d) = &self.deform {
            p.extend(d.params());
        }
        p
    }

    /// Observation to canonical space.
    pub fn to_canonical<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, t: f64) -> Var<'t> {
        match &self.deform {
            Some(d) => d.map(tape, store, x, t),
            None => x,
        }
    }

    /// Signed distance at observation-space points `[n, 3]` and time `t`.
    pub fn sdf_eval<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, t: f64) -> SdfOutput<'t> {
        let xc = self.to_canonical(tape, store, x, t);
        self.field.forward(tape, store, xc)
    }

    /// Field values and spatial gradients at fixed observation points. The
    /// gradient is a central difference built on the tape, so it stays
    /// differentiable in the parameters.
    pub fn eval_with_gradient<'t>(&self, tape: &'t Tape, store: &ParamStore, pts: &[[f64; 3]], t: f64) -> SurfaceSamples<'t> {
        let n = pts.len();
        let h = self.field.fd_step();
        let mut stacked = Vec::with_capacity(n * 21);
        for p in pts {
            stacked.extend_from_slice(p);
            for k in 0..3 {
                for sign in [1.0, -1.0] {
                    let mut q = *p;
                    q[k] += sign * h;
                    stacked.extend_from_slice(&q);
                }
            }
        }
        let out = self.sdf_eval(tape, store, tape.constant(&[7 * n, 3], stacked), t);
        let sdf7 = out.sdf.reshape(&[n, 7]);
        let gradient = concat_cols(&[0, 1, 2].map(|k| (sdf7.col(1 + 2 * k) - sdf7.col(2 + 2 * k)).scale(0.5 / h)));
        let centers = Rc::new((0..n).map(|i| 7 * i).collect::<Vec<_>>());
        SurfaceSamples {
            sdf: sdf7.col(0),
            gradient,
            feature: out.feature.gather_rows(centers.clone()),
            normalized: out.normalized.gather_rows(centers),
        }
    }

    /// Signed distances without gradient tracking, chunked across threads.
    pub fn sdf_values(&self, store: &ParamStore, pts: &[[f64; 3]], t: f64) -> Vec<f64> {
        let chunks: Vec<&[[f64; 3]]> = pts.chunks(CHUNK).collect();
        par::map_slice(&chunks, |c| {
            let tape = Tape::new();
            let x = tape.constant(&[c.len(), 3], c.iter().flatten().copied().collect());
            self.sdf_eval(&tape, store, x, t).sdf.value()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    /// Spatial gradients without gradient tracking.
    pub fn gradient_values(&self, store: &ParamStore, pts: &[[f64; 3]], t: f64) -> Vec<[f64; 3]> {
        let chunks: Vec<&[[f64; 3]]> = pts.chunks(CHUNK / 8).collect();
        par::map_slice(&chunks, |c| {
            let tape = Tape::new();
            let g = self.eval_with_gradient(&tape, store, c, t).gradient.value();
            g.chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }
}
