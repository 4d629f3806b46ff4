use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{concat_cols, ParamId, ParamStore, Tape, Var};
use crate::encoders::{Activation, FrequencyEncoding, Mlp, MlpInit};
use crate::par;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BijectiveConfig {
    pub blocks: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub position_freqs: usize,
    pub time_freqs: usize,
    /// Log-scale bound: each scale lies in `[e^-c, e^c]`.
    pub scale_bound: f64,
}

impl Default for BijectiveConfig {
    fn default() -> Self {
        Self {
            blocks: 4,
            hidden_width: 64,
            hidden_layers: 2,
            position_freqs: 6,
            time_freqs: 4,
            scale_bound: 1.0,
        }
    }
}

/// Coupling block: coordinate `keep` passes through; the other two get
/// `y = x·s + b` with `(s, b)` predicted from `(γ(x_keep), γ(t))`.
#[derive(Debug, Clone)]
struct Block {
    keep: usize,
    moved: [usize; 2],
    net: Mlp,
}

/// Invertible time-conditioned map from observation space to canonical space.
#[derive(Debug, Clone)]
pub struct BijectiveDeformation {
    blocks: Vec<Block>,
    pos_enc: FrequencyEncoding,
    time_enc: FrequencyEncoding,
    scale_bound: f64,
}

/// Rows per tape when evaluating large point sets.
const CHUNK: usize = 4096;

impl BijectiveDeformation {
    pub fn new(store: &mut ParamStore, prefix: &str, cfg: &BijectiveConfig, rng: &mut impl Rng) -> Self {
        let pos_enc = FrequencyEncoding::new(cfg.position_freqs, true);
        let time_enc = FrequencyEncoding::new(cfg.time_freqs, true);
        let mut widths = vec![pos_enc.out_dim(1) + time_enc.out_dim(1)];
        widths.extend(std::iter::repeat(cfg.hidden_width).take(cfg.hidden_layers));
        widths.push(4);
        let blocks = (0..cfg.blocks)
            .map(|k| {
                let keep = k % 3;
                Block {
                    keep,
                    moved: [(keep + 1) % 3, (keep + 2) % 3],
                    net: Mlp::new(
                        store,
                        &format!("{prefix}.block{k}"),
                        &widths,
                        Activation::Softplus { beta: 100.0 },
                        Activation::Identity,
                        MlpInit::ZeroOutput,
                        rng,
                    ),
                }
            })
            .collect();
        Self {
            blocks,
            pos_enc,
            time_enc,
            scale_bound: cfg.scale_bound,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.blocks.iter().flat_map(|b| b.net.params()).collect()
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Scale `[n, 2]` and shift `[n, 2]` of one block.
    fn affine<'t>(&self, b: &Block, tape: &'t Tape, store: &ParamStore, x: Var<'t>, t: f64) -> (Var<'t>, Var<'t>) {
        let n = x.rows();
        let keep = x.slice_cols(b.keep, 1);
        let te = self.time_enc.encode_values(&[t]);
        let inp = concat_cols(&[self.pos_enc.encode(keep), tape.constant(&[te.len()], te).broadcast_rows(n)]);
        let out = b.net.forward(tape, store, inp);
        let scale = out.slice_cols(0, 2).tanh().scale(self.scale_bound).exp();
        (scale, out.slice_cols(2, 2))
    }

    fn assemble<'t>(b: &Block, x: Var<'t>, moved: Var<'t>) -> Var<'t> {
        let mut cols = [x.slice_cols(b.keep, 1), moved.slice_cols(0, 1), moved.slice_cols(1, 1)];
        let mut order = [(b.keep, 0), (b.moved[0], 1), (b.moved[1], 2)];
        order.sort();
        cols = order.map(|(_, i)| cols[i]);
        concat_cols(&cols)
    }

    fn moved<'t>(b: &Block, x: Var<'t>) -> Var<'t> {
        concat_cols(&[x.slice_cols(b.moved[0], 1), x.slice_cols(b.moved[1], 1)])
    }

    /// Observation `[n, 3]` to canonical `[n, 3]` at time `t`.
    pub fn map<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, t: f64) -> Var<'t> {
        let mut h = x;
        for b in &self.blocks {
            let (s, shift) = self.affine(b, tape, store, h, t);
            let y = Self::moved(b, h) * s + shift;
            h = Self::assemble(b, h, y);
        }
        h
    }

    /// Canonical `[n, 3]` back to observation space at time `t`.
    pub fn inverse<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, t: f64) -> Var<'t> {
        let mut h = x;
        for b in self.blocks.iter().rev() {
            let (s, shift) = self.affine(b, tape, store, h, t);
            let y = (Self::moved(b, h) - shift) / s;
            h = Self::assemble(b, h, y);
        }
        h
    }

    fn eval_points(&self, store: &ParamStore, pts: &[[f64; 3]], t: f64, forward: bool) -> Vec<[f64; 3]> {
        let chunks: Vec<&[[f64; 3]]> = pts.chunks(CHUNK).collect();
        par::map_slice(&chunks, |c| {
            let tape = Tape::new();
            let x = tape.constant(&[c.len(), 3], c.iter().flatten().copied().collect());
            let y = if forward {
                self.map(&tape, store, x, t)
            } else {
                self.inverse(&tape, store, x, t)
            };
            y.value().chunks_exact(3).map(|r| [r[0], r[1], r[2]]).collect::<Vec<_>>()
        })
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn map_points(&self, store: &ParamStore, pts: &[[f64; 3]], t: f64) -> Vec<[f64; 3]> {
        self.eval_points(store, pts, t, true)
    }

    pub fn inverse_points(&self, store: &ParamStore, pts: &[[f64; 3]], t: f64) -> Vec<[f64; 3]> {
        self.eval_points(store, pts, t, false)
    }
}
