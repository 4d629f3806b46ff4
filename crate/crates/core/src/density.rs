//! Surface-aware growth and pruning of Gaussians.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamState, ParamStore};
use crate::error::{Error, Result};
use crate::gaussian::{quat_to_matrix, GaussianScene, RowSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensityConfig {
    /// Growth weight of the surface proximity term.
    pub w_g: f64,
    /// Prune weight of the surface distance penalty.
    pub w_p: f64,
    /// Bandwidth of `phi`; `None` means 0.01 × box diagonal.
    pub sigma_phi: Option<f64>,
    pub tau_g: f64,
    /// Prune threshold on the opacity sum; `None` means 0.05 × `window`.
    pub tau_p: Option<f64>,
    /// Iterations of opacity accumulation before a control step.
    pub window: usize,
    /// Largest scale up to which a growth candidate is cloned rather than split;
    /// `None` means 0.01 × box diagonal.
    pub split_scale: Option<f64>,
    pub split_factor: f64,
    pub interval: usize,
    pub start: usize,
    /// Last iteration at which control steps run; `None` runs them to the end.
    pub until: Option<usize>,
    pub max_gaussians: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self {
            w_g: 0.0002,
            w_p: 0.3,
            sigma_phi: None,
            tau_g: 0.0002,
            tau_p: None,
            window: 100,
            split_scale: None,
            split_factor: 1.6,
            interval: 100,
            start: 500,
            until: None,
            max_gaussians: 200_000,
        }
    }
}

/// Thresholds with scene-dependent defaults filled in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedDensity {
    pub w_g: f64,
    pub w_p: f64,
    pub sigma_phi: f64,
    pub tau_g: f64,
    pub tau_p: f64,
    pub split_scale: f64,
    pub split_factor: f64,
    pub max_gaussians: usize,
}

impl DensityConfig {
    pub fn resolve(&self, diagonal: f64) -> Result<ResolvedDensity> {
        let r = ResolvedDensity {
            w_g: self.w_g,
            w_p: self.w_p,
            sigma_phi: self.sigma_phi.unwrap_or(0.01 * diagonal),
            tau_g: self.tau_g,
            tau_p: self.tau_p.unwrap_or(0.05 * self.window as f64),
            split_scale: self.split_scale.unwrap_or(0.01 * diagonal),
            split_factor: self.split_factor,
            max_gaussians: self.max_gaussians,
        };
        if !(r.sigma_phi > 0.0) || self.window == 0 || self.interval == 0 {
            return Err(Error::Config("density control needs sigma_phi > 0, window >= 1, interval >= 1".into()));
        }
        if ![r.w_g, r.w_p, r.tau_g, r.tau_p, r.split_scale, r.split_factor].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("density control thresholds must be finite".into()));
        }
        Ok(r)
    }

    /// Whether iteration `it` (1-based count of completed steps) is a control step.
    pub fn is_control_step(&self, it: usize) -> bool {
        it >= self.start && it % self.interval == 0 && self.until.map_or(true, |u| it <= u)
    }
}

/// Surface proximity `exp(-d² / 2σ²)`.
pub fn phi(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

pub fn growth_score(grad_avg: f64, d_g: Option<f64>, cfg: &ResolvedDensity) -> f64 {
    match d_g {
        Some(d) => grad_avg + cfg.w_g * phi(d, cfg.sigma_phi),
        None => grad_avg,
    }
}

pub fn prune_score(opacity_sum: f64, d_g: Option<f64>, cfg: &ResolvedDensity) -> f64 {
    match d_g {
        Some(d) => opacity_sum - cfg.w_p * (1.0 - phi(d, cfg.sigma_phi)),
        None => opacity_sum,
    }
}

/// Outcome of one control step, logged as a JSON line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DensityReport {
    pub iteration: usize,
    pub before: usize,
    pub after: usize,
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
    /// Growth candidates dropped by the size cap.
    pub capped: usize,
    pub geometry: bool,
    pub growth_min: f64,
    pub growth_max: f64,
    pub prune_min: f64,
    pub prune_max: f64,
}

/// Scores every Gaussian and edits the scene: prune where `ε_p < τ_p`, otherwise
/// clone small and split large Gaussians where `ε_g > τ_g`. Pruning wins over
/// growth. Kept rows stay in order, clones follow, then split children.
/// Statistics are reset.
pub fn apply_density_control(
    scene: &mut GaussianScene,
    store: &mut ParamStore,
    adam: &mut AdamState,
    sdf_at_centers: Option<&[f64]>,
    cfg: &ResolvedDensity,
    rng: &mut impl Rng,
) -> Result<DensityReport> {
    let n = scene.len(store);
    assert_eq!(scene.stats.len(), n, "statistics out of sync with the scene");
    if let Some(d) = sdf_at_centers {
        assert_eq!(d.len(), n);
    }
    let d_at = |i: usize| sdf_at_centers.map(|d| d[i]);
    let grow_s: Vec<f64> = (0..n).map(|i| growth_score(scene.stats.grad_avg(i), d_at(i), cfg)).collect();
    let prune_s: Vec<f64> = (0..n).map(|i| prune_score(scene.stats.opacity_accum[i], d_at(i), cfg)).collect();
    let prune: Vec<bool> = prune_s.iter().map(|&s| s < cfg.tau_p).collect();
    let mut grow: Vec<usize> = (0..n).filter(|&i| !prune[i] && grow_s[i] > cfg.tau_g).collect();

    let kept = prune.iter().filter(|p| !**p).count();
    let pruned = n - kept;
    if kept == 0 && grow.is_empty() {
        return Err(Error::EmptyScene { pruned, total: n });
    }
    let prims = scene.primitives(store);
    let is_large = |i: usize| prims[i].scales().iter().fold(0.0f64, |m, &s| m.max(s)) > cfg.split_scale;
    // A split replaces one row by two, a clone adds one.
    let budget = cfg.max_gaussians.saturating_sub(kept);
    let mut capped = 0;
    if grow.len() > budget {
        grow.sort_by(|&a, &b| grow_s[b].total_cmp(&grow_s[a]).then(a.cmp(&b)));
        capped = grow.len() - budget;
        grow.truncate(budget);
        grow.sort_unstable();
    }
    let split: Vec<usize> = grow.iter().copied().filter(|&i| is_large(i)).collect();
    let clone: Vec<usize> = grow.iter().copied().filter(|&i| !is_large(i)).collect();

    let mut rows: Vec<RowSource> = (0..n)
        .filter(|&i| !prune[i] && split.binary_search(&i).is_err())
        .map(RowSource::Keep)
        .collect();
    for &i in &clone {
        let mut g = prims[i].clone();
        let dir = scene.stats.grad_dir[i];
        let norm = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        if norm > 0.0 {
            let step = 0.5 * g.scales().iter().fold(0.0f64, |m, &s| m.max(s));
            for k in 0..3 {
                g.position[k] -= step * dir[k] / norm;
            }
        }
        rows.push(RowSource::Fresh(g));
    }
    let shrink = cfg.split_factor.ln();
    for &i in &split {
        let parent = &prims[i];
        let r = quat_to_matrix(parent.rotation);
        let s = parent.scales();
        for _ in 0..2 {
            let z: [f64; 3] = std::array::from_fn(|k| {
                let z: f64 = StandardNormal.sample(rng);
                s[k] * z
            });
            let offset = r * nalgebra::Vector3::from(z);
            let mut child = parent.clone();
            for k in 0..3 {
                child.position[k] += offset[k];
                child.log_scales[k] -= shrink;
            }
            rows.push(RowSource::Fresh(child));
        }
    }
    let after = rows.len();
    scene.rebuild(store, adam, &rows);
    let span = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let (growth_min, growth_max) = span(&grow_s);
    let (prune_min, prune_max) = span(&prune_s);
    Ok(DensityReport {
        iteration: 0,
        before: n,
        after,
        cloned: clone.len(),
        split: split.len(),
        pruned,
        capped,
        geometry: sdf_at_centers.is_some(),
        growth_min,
        growth_max,
        prune_min,
        prune_max,
    })
}
