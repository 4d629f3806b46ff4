use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Relu,
    Softplus { beta: f64 },
    Sigmoid,
}

impl Activation {
    fn apply<'t>(self, x: Var<'t>) -> Var<'t> {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.relu(),
            Activation::Softplus { beta } => x.softplus(beta),
            Activation::Sigmoid => x.sigmoid(),
        }
    }
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MlpInit {
    /// He-normal weights, zero biases.
    Kaiming,
    /// He-normal hidden layers; the last layer is all zeros so the output starts at 0.
    ZeroOutput,
    /// Sphere initialization for SDF networks: the output approximates `|x| - radius`
    /// where `x` is the first three input columns. Columns `3..` start with zero weight.
    Geometric { radius: f64 },
}

/// Affine layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        x.matmul(w) + b.broadcast_rows(x.rows())
    }
}

/// Fully connected network; `hidden` after every layer but the last, `output` after the last.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    /// `widths` lists every layer boundary, e.g. `[in, 64, 64, out]` for three layers.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        hidden: Activation,
        output: Activation,
        init: MlpInit,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        let nl = widths.len() - 1;
        let mut layers = Vec::with_capacity(nl);
        for l in 0..nl {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let last = l + 1 == nl;
            let mut w = vec![0.0; fan_in * fan_out];
            let mut b = vec![0.0; fan_out];
            match init {
                MlpInit::ZeroOutput if last => {}
                MlpInit::Kaiming | MlpInit::ZeroOutput => {
                    let n = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                    w.iter_mut().for_each(|v| *v = n.sample(rng));
                }
                MlpInit::Geometric { radius } => {
                    if last {
                        let mean = std::f64::consts::PI.sqrt() / (fan_in as f64).sqrt();
                        let n = Normal::new(mean, 1e-4).expect("finite std");
                        w.iter_mut().for_each(|v| *v = n.sample(rng));
                        b.iter_mut().for_each(|v| *v = -radius);
                    } else {
                        let n = Normal::new(0.0, 2f64.sqrt() / (fan_out as f64).sqrt()).expect("finite std");
                        for i in 0..fan_in {
                            if l == 0 && i >= 3 {
                                continue;
                            }
                            for o in 0..fan_out {
                                w[i * fan_out + o] = n.sample(rng);
                            }
                        }
                    }
                }
            }
            layers.push(Linear {
                weight: store.add(format!("{prefix}.{l}.weight"), &[fan_in, fan_out], w),
                bias: store.add(format!("{prefix}.{l}.bias"), &[fan_out], b),
                in_dim: fan_in,
                out_dim: fan_out,
            });
        }
        Self {
            layers,
            hidden,
            output,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    /// `[n, in] -> [n, out]` on the tape.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>) -> Var<'t> {
        assert_eq!(x.cols(), self.in_dim(), "mlp input width");
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(tape, store, h);
            h = if i + 1 == self.layers.len() {
                self.output.apply(h)
            } else {
                self.hidden.apply(h)
            };
        }
        h
    }
}
