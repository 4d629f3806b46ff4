use serde::{Deserialize, Serialize};

/// How the filtered depth combines the two estimates once they agree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepthCombine {
    /// `(d^α + d^m) / 2`
    Midpoint,
    /// `(d^α - d^m) / 2`, as literally printed in the method description.
    PaperLiteral,
}

/// Per-pixel depth products of one render.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DepthBundle {
    /// Transmittance-weighted mean depth; 0 where nothing was composited.
    pub alpha_depth: Vec<f64>,
    /// Depth of the contributor that first drops transmittance below `tau_d`; 0 if none.
    pub median: Vec<f64>,
    /// Filtered depth; 0 where the gate rejects the pixel.
    pub filtered: Vec<f64>,
    /// The filter gate passed.
    pub valid: Vec<bool>,
}

/// Median depth for depth-sorted `(depth, alpha)` contributors: the depth of the
/// first contributor after which `Π_{j≤i}(1 - α_j) < tau_d`, or 0.
pub fn median_depth_rule(contributors: &[(f64, f64)], tau_d: f64) -> f64 {
    let mut t = 1.0;
    for &(d, a) in contributors {
        t *= 1.0 - a;
        if t < tau_d {
            return d;
        }
    }
    0.0
}

/// Filtered depth. Pixels with no α-depth (`alpha_valid == false`) or no median
/// (`d_m == 0`) are rejected first. Returns `(d^f, gate_passed)`.
pub fn filter_depth(d_alpha: f64, alpha_valid: bool, d_m: f64, tau_f: f64, combine: DepthCombine) -> (f64, bool) {
    if !alpha_valid || d_m == 0.0 || (d_alpha - d_m).abs() >= tau_f {
        return (0.0, false);
    }
    let d = match combine {
        DepthCombine::Midpoint => 0.5 * (d_alpha + d_m),
        DepthCombine::PaperLiteral => 0.5 * (d_alpha - d_m),
    };
    (d, true)
}
