use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, Var};

/// `γ(x)`: per input coordinate, `[x?, sin(2^0 πx), cos(2^0 πx), ..., sin(2^{L-1} πx), cos(2^{L-1} πx)]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyEncoding {
    pub num_freqs: usize,
    pub include_identity: bool,
}

impl FrequencyEncoding {
    pub fn new(num_freqs: usize, include_identity: bool) -> Self {
        Self {
            num_freqs,
            include_identity,
        }
    }

    pub fn per_coord(&self) -> usize {
        2 * self.num_freqs + usize::from(self.include_identity)
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        in_dim * self.per_coord()
    }

    /// Encodes a single point.
    pub fn encode_values(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim(x.len()));
        for &xi in x {
            self.push_coord(xi, &mut out);
        }
        out
    }

    fn push_coord(&self, x: f64, out: &mut Vec<f64>) {
        if self.include_identity {
            out.push(x);
        }
        let mut w = PI;
        for _ in 0..self.num_freqs {
            let (s, c) = (w * x).sin_cos();
            out.push(s);
            out.push(c);
            w *= 2.0;
        }
    }

    /// Encodes a `[n, d]` batch on the tape, giving `[n, d * per_coord]`.
    pub fn encode<'t>(&self, x: Var<'t>) -> Var<'t> {
        let (n, d) = (x.rows(), x.cols());
        let xs = x.value();
        let mut out = Vec::with_capacity(n * self.out_dim(d));
        for &xi in &xs {
            self.push_coord(xi, &mut out);
        }
        x.tape().custom(
            &[x],
            &[n, self.out_dim(d)],
            out,
            Box::new(FreqOp { enc: *self }),
        )
    }
}

struct FreqOp {
    enc: FrequencyEncoding,
}

impl CustomOp for FreqOp {
    fn name(&self) -> &'static str {
        "frequency_encoding"
    }

    fn backward(&self, g: &[f64], inputs: &[&[f64]], out: &[f64]) -> Vec<Option<Vec<f64>>> {
        let pc = self.enc.per_coord();
        let off = usize::from(self.enc.include_identity);
        let dx = inputs[0]
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let g = &g[i * pc..(i + 1) * pc];
                let y = &out[i * pc..(i + 1) * pc];
                let mut acc = if off == 1 { g[0] } else { 0.0 };
                let mut w = PI;
                for k in 0..self.enc.num_freqs {
                    let (s, c) = (y[off + 2 * k], y[off + 2 * k + 1]);
                    acc += w * (g[off + 2 * k] * c - g[off + 2 * k + 1] * s);
                    w *= 2.0;
                }
                acc
            })
            .collect();
        vec![Some(dx)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_diff_check, Tape};
    use std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn zero_input() {
        let e = FrequencyEncoding::new(2, false);
        assert_eq!(e.encode_values(&[0.0]), vec![0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn quarter_period() {
        let v = FrequencyEncoding::new(1, false).encode_values(&[0.5]);
        assert!((v[0] - 1.0).abs() < 1e-15 && v[1].abs() < 1e-15);
    }

    #[test]
    fn two_frequencies_at_quarter() {
        let v = FrequencyEncoding::new(2, false).encode_values(&[0.25]);
        let want = [FRAC_1_SQRT_2, FRAC_1_SQRT_2, 1.0, 0.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn identity_prepended_and_dims() {
        let e = FrequencyEncoding::new(3, true);
        let v = e.encode_values(&[0.3, -0.2]);
        assert_eq!(v.len(), e.out_dim(2));
        assert_eq!(v[0], 0.3);
        assert_eq!(v[7], -0.2);
    }

    #[test]
    fn tape_matches_values_and_gradient() {
        let e = FrequencyEncoding::new(4, true);
        let tape = Tape::new();
        let x = tape.var(&[2, 2], vec![0.1, 0.7, -0.4, 0.33]);
        let y = e.encode(x);
        assert_eq!(y.value()[..e.per_coord()], e.encode_values(&[0.1])[..]);
        let err = finite_diff_check(
            |x| {
                let w: Vec<f64> = (0..2 * e.out_dim(2)).map(|i| (i as f64 * 0.37).sin()).collect();
                let w = x.tape().constant(&[2, e.out_dim(2)], w);
                (e.encode(x.reshape(&[2, 2])) * w).sum()
            },
            &[0.1, 0.7, -0.4, 0.33],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
