use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aabb::Aabb;
use crate::autodiff::{concat_cols, AdamConfig, AdamState, ParamId, ParamStore, Tape, Var};
use crate::encoders::{Activation, HashGrid, HashGridConfig, Mlp, MlpInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdfConfig {
    pub grid: HashGridConfig,
    pub hidden_width: usize,
    /// Linear layers in the geometry network.
    pub layers: usize,
    pub feature_dim: usize,
    pub color_width: usize,
    pub color_hidden_layers: usize,
    /// Radius of the initial sphere in scene units; `None` means 0.3 × box diagonal.
    pub init_radius: Option<f64>,
    pub inv_s_init: f64,
    /// Central-difference step for spatial gradients, as a fraction of the box diagonal.
    pub fd_step: f64,
}

impl Default for SdfConfig {
    fn default() -> Self {
        Self {
            grid: HashGridConfig::default(),
            hidden_width: 64,
            layers: 4,
            feature_dim: 8,
            color_width: 64,
            color_hidden_layers: 2,
            init_radius: None,
            inv_s_init: 20.0,
            fd_step: 2e-5,
        }
    }
}

/// Values of the geometry network at a batch of canonical points.
#[derive(Clone, Copy)]
pub struct SdfOutput<'t> {
    /// `[n]`, scene units.
    pub sdf: Var<'t>,
    /// `[n, feature_dim]`.
    pub feature: Var<'t>,
    /// Canonical points normalized to the box, `[n, 3]`.
    pub normalized: Var<'t>,
}

/// Canonical signed distance field: hash grid + MLP, a companion color network
/// and the learnable logistic sharpness.
#[derive(Debug, Clone)]
pub struct SdfField {
    pub grid: HashGrid,
    pub net: Mlp,
    pub color: Mlp,
    pub log_inv_s: ParamId,
    bounds: Aabb,
    feature_dim: usize,
    fd_step: f64,
}

impl SdfField {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &SdfConfig, bounds: Aabb, rng: &mut impl Rng) -> Self {
        let grid = HashGrid::new(store, &format!("{prefix}.grid"), &cfg.grid, rng);
        let radius = cfg.init_radius.unwrap_or(0.3 * bounds.diagonal());
        let mut widths = vec![3 + grid.out_dim()];
        widths.extend(std::iter::repeat(cfg.hidden_width).take(cfg.layers.saturating_sub(1)));
        widths.push(1 + cfg.feature_dim);
        let net = Mlp::new(
            store,
            &format!("{prefix}.geometry"),
            &widths,
            Activation::Softplus { beta: 100.0 },
            Activation::Identity,
            MlpInit::Geometric {
                radius: radius / bounds.half_size(),
            },
            rng,
        );
        let mut cw = vec![3 + cfg.feature_dim + 3];
        cw.extend(std::iter::repeat(cfg.color_width).take(cfg.color_hidden_layers));
        cw.push(3);
        let color = Mlp::new(
            store,
            &format!("{prefix}.color"),
            &cw,
            Activation::Relu,
            Activation::Sigmoid,
            MlpInit::Kaiming,
            rng,
        );
        let log_inv_s = store.add(format!("{prefix}.log_inv_s"), &[1], vec![cfg.inv_s_init.ln()]);
        Self {
            grid,
            net,
            color,
            log_inv_s,
            bounds,
            feature_dim: cfg.feature_dim,
            fd_step: cfg.fd_step * bounds.diagonal(),
        }
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Finite-difference step in scene units.
    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = vec![self.grid.table];
        p.extend(self.net.params());
        p.extend(self.color.params());
        p.push(self.log_inv_s);
        p
    }

    pub fn geometry_params(&self) -> Vec<ParamId> {
        let mut p = vec![self.grid.table];
        p.extend(self.net.params());
        p
    }

    pub fn inv_s<'t>(&self, tape: &'t Tape, store: &ParamStore) -> Var<'t> {
        tape.param(store, self.log_inv_s).exp()
    }

    /// Geometry network at canonical points `[n, 3]`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> SdfOutput<'t> {
        let n = x.rows();
        let c = self.bounds.center();
        let half = self.bounds.half_size();
        let ext = self.bounds.extent();
        let p = (x - tape.constant(&[3], c.to_vec()).broadcast_rows(n)).scale(1.0 / half);
        let unit = (x - tape.constant(&[3], self.bounds.min.to_vec()).broadcast_rows(n))
            * tape.constant(&[3], ext.map(|e| 1.0 / e).to_vec()).broadcast_rows(n);
        let enc = self.grid.encode(tape, store, unit);
        let out = self.net.forward(tape, store, concat_cols(&[p, enc]));
        SdfOutput {
            sdf: out.col(0).scale(half),
            feature: out.slice_cols(1, self.feature_dim),
            normalized: p,
        }
    }

    /// Radiance from normalized canonical point, geometry feature and unit normal.
    pub fn radiance<'t>(&self, tape: &'t Tape, store: &ParamStore, normalized: Var<'t>, feature: Var<'t>, normal: Var<'t>) -> Var<'t> {
        self.color.forward(tape, store, concat_cols(&[normalized, feature, normal]))
    }

    /// Short regression onto the analytic sphere `|x - c| - r`, to settle the
    /// hash features and the softplus curvature left over by the geometric init.
    pub fn fit_sphere(&self, store: &mut ParamStore, center: [f64; 3], radius: f64, steps: usize, rng: &mut impl Rng) -> f64 {
        let mut adam = AdamState::new(AdamConfig {
            lr: 1e-3,
            ..Default::default()
        });
        let params = self.geometry_params();
        let mut last = 0.0;
        for _ in 0..steps {
            let mut pts = Vec::with_capacity(512 * 3);
            let mut target = Vec::with_capacity(512);
            for i in 0..512 {
                let d = crate::gaussian::random_unit_dir(rng);
                let r = match i % 3 {
                    0 => radius * (1.0 + rng.gen_range(-0.1..0.1)),
                    1 => radius * rng.gen_range(0.0..1.0),
                    _ => f64::NAN,
                };
                let p: [f64; 3] = if r.is_nan() {
                    std::array::from_fn(|k| rng.gen_range(self.bounds.min[k]..self.bounds.max[k]))
                } else {
                    std::array::from_fn(|k| center[k] + r * d[k])
                };
                let dist = (0..3).map(|k| (p[k] - center[k]).powi(2)).sum::<f64>().sqrt();
                pts.extend_from_slice(&p);
                target.push(dist - radius);
            }
            let tape = Tape::new();
            let x = tape.constant(&[512, 3], pts);
            let sdf = self.forward(&tape, store, x).sdf;
            let loss = (sdf - tape.constant(&[512], target)).abs().mean();
            last = loss.item();
            let mut g = tape.backward(loss).expect("scalar loss").into_params();
            g.retain(&params);
            adam.step(store, &g).expect("matching shapes");
        }
        last
    }
}
