use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, ParamId, ParamStore, Tape, Var};
use crate::encoders::{Activation, FrequencyEncoding, Mlp, MlpInit};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgsDeformConfig {
    pub depth: usize,
    pub width: usize,
    pub position_freqs: usize,
    pub time_freqs: usize,
}

impl Default for DgsDeformConfig {
    fn default() -> Self {
        Self {
            depth: 8,
            width: 256,
            position_freqs: 10,
            time_freqs: 6,
        }
    }
}

/// Offsets `(δx, δr, δs)` for every Gaussian at one time.
pub struct DeformOffsets<'t> {
    /// `[n, 3]`
    pub position: Var<'t>,
    /// `[n, 4]`
    pub rotation: Var<'t>,
    /// `[n, 3]`
    pub log_scales: Var<'t>,
}

/// `F_θ(γ(x), γ(t)) -> (δx, δr, δs)` with zero-initialized output heads.
#[derive(Debug, Clone)]
pub struct DgsDeformNet {
    pub trunk: Mlp,
    pub head: Mlp,
    pos_enc: FrequencyEncoding,
    time_enc: FrequencyEncoding,
}

impl DgsDeformNet {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &DgsDeformConfig, rng: &mut impl Rng) -> Self {
        assert!(cfg.depth >= 1);
        let pos_enc = FrequencyEncoding::new(cfg.position_freqs, true);
        let time_enc = FrequencyEncoding::new(cfg.time_freqs, true);
        let mut widths = vec![pos_enc.out_dim(3) + time_enc.out_dim(1)];
        widths.extend(std::iter::repeat(cfg.width).take(cfg.depth));
        let trunk = Mlp::new(store, &format!("{prefix}.trunk"), &widths, Activation::Relu, Activation::Relu, MlpInit::Kaiming, rng);
        let head = Mlp::new(
            store,
            &format!("{prefix}.head"),
            &[cfg.width, 10],
            Activation::Identity,
            Activation::Identity,
            MlpInit::ZeroOutput,
            rng,
        );
        Self {
            trunk,
            head,
            pos_enc,
            time_enc,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.trunk.params();
        p.extend(self.head.params());
        p
    }

    /// Offsets for canonical positions `x: [n, 3]` at time `t`. The encoding
    /// does not propagate gradients into `x`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, t: f64) -> DeformOffsets<'t> {
        let n = x.rows();
        let px = self.pos_enc.encode(x.detach());
        let te = self.time_enc.encode_values(&[t]);
        let tx = tape.constant(&[te.len()], te).broadcast_rows(n);
        let h = self.trunk.forward(tape, store, concat_cols(&[px, tx]));
        let out = self.head.forward(tape, store, h);
        DeformOffsets {
            position: out.slice_cols(0, 3),
            rotation: out.slice_cols(3, 4),
            log_scales: out.slice_cols(7, 3),
        }
    }
}
