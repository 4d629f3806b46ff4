use std::path::Path;

use rand::Rng;

use super::batch::GaussianVars;
use super::primitive::{normalize_quat, sh_coeffs, GaussianPrimitive, SH_C0};
use crate::autodiff::{AdamState, ParamId, ParamStore, Tape};
use crate::error::Result;

/// Per-Gaussian statistics gathered between density-control steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GaussianStats {
    /// Sum of screen-space position-gradient norms (NDC units).
    pub grad_accum: Vec<f64>,
    /// Number of renders in which the Gaussian was visible.
    pub grad_count: Vec<u32>,
    /// Sum of world-space position gradients, used to nudge clones.
    pub grad_dir: Vec<[f64; 3]>,
    /// Sum of activated opacity over the current window.
    pub opacity_accum: Vec<f64>,
}

impl GaussianStats {
    pub fn new(n: usize) -> Self {
        Self {
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
            grad_dir: vec![[0.0; 3]; n],
            opacity_accum: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.grad_accum.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grad_accum.is_empty()
    }

    /// Mean screen-space gradient norm, 0 for never-visible Gaussians.
    pub fn grad_avg(&self, i: usize) -> f64 {
        match self.grad_count[i] {
            0 => 0.0,
            c => self.grad_accum[i] / c as f64,
        }
    }

    pub fn reset(&mut self) {
        *self = Self::new(self.len());
    }
}

/// Where a row of a rebuilt scene comes from.
#[derive(Debug, Clone)]
pub enum RowSource {
    /// Copy row `i` of the current scene, optimizer state included.
    Keep(usize),
    /// A new Gaussian with fresh optimizer state.
    Fresh(GaussianPrimitive),
}

/// The canonical Gaussian set, stored as row-major parameter arrays.
#[derive(Debug, Clone)]
pub struct GaussianScene {
    pub position: ParamId,
    pub rotation: ParamId,
    pub log_scales: ParamId,
    pub opacity_logit: ParamId,
    pub sh: ParamId,
    pub sh_degree: usize,
    pub stats: GaussianStats,
}

impl GaussianScene {
    pub fn from_primitives(store: &mut ParamStore, prefix: &str, gs: &[GaussianPrimitive], sh_degree: usize) -> Self {
        let n = gs.len();
        let k = sh_coeffs(sh_degree) * 3;
        assert!(gs.iter().all(|g| g.sh.len() == k), "SH coefficient count must match degree");
        Self {
            position: store.add(format!("{prefix}.position"), &[n, 3], gs.iter().flat_map(|g| g.position).collect()),
            rotation: store.add(format!("{prefix}.rotation"), &[n, 4], gs.iter().flat_map(|g| g.rotation).collect()),
            log_scales: store.add(format!("{prefix}.log_scales"), &[n, 3], gs.iter().flat_map(|g| g.log_scales).collect()),
            opacity_logit: store.add(format!("{prefix}.opacity_logit"), &[n], gs.iter().map(|g| g.opacity_logit).collect()),
            sh: store.add(format!("{prefix}.sh"), &[n, k], gs.iter().flat_map(|g| g.sh.iter().copied()).collect()),
            sh_degree,
            stats: GaussianStats::new(n),
        }
    }

    /// Re-attaches to parameters already present in `store` (e.g. after loading a checkpoint).
    pub fn attach(store: &ParamStore, prefix: &str, sh_degree: usize) -> Option<Self> {
        let position = store.id(&format!("{prefix}.position"))?;
        let n = store.values(position).len() / 3;
        Some(Self {
            position,
            rotation: store.id(&format!("{prefix}.rotation"))?,
            log_scales: store.id(&format!("{prefix}.log_scales"))?,
            opacity_logit: store.id(&format!("{prefix}.opacity_logit"))?,
            sh: store.id(&format!("{prefix}.sh"))?,
            sh_degree,
            stats: GaussianStats::new(n),
        })
    }

    /// `n` Gaussians uniform in the box with identity rotation, isotropic `scale`,
    /// the given opacity and a random gray-ish base color.
    #[allow(clippy::too_many_arguments)]
    pub fn random_in_box(
        store: &mut ParamStore,
        prefix: &str,
        n: usize,
        lo: [f64; 3],
        hi: [f64; 3],
        scale: f64,
        opacity: f64,
        sh_degree: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let k = sh_coeffs(sh_degree) * 3;
        let logit = (opacity / (1.0 - opacity)).ln();
        let gs: Vec<_> = (0..n)
            .map(|_| {
                let mut sh = vec![0.0; k];
                for c in sh.iter_mut().take(3) {
                    *c = (rng.gen_range(0.3..0.7) - 0.5) / SH_C0;
                }
                GaussianPrimitive {
                    position: std::array::from_fn(|d| rng.gen_range(lo[d]..hi[d])),
                    rotation: [1.0, 0.0, 0.0, 0.0],
                    log_scales: [scale.ln(); 3],
                    opacity_logit: logit,
                    sh,
                }
            })
            .collect();
        Self::from_primitives(store, prefix, &gs, sh_degree)
    }

    pub fn len(&self, store: &ParamStore) -> usize {
        store.values(self.position).len() / 3
    }

    pub fn params(&self) -> [ParamId; 5] {
        [self.position, self.rotation, self.log_scales, self.opacity_logit, self.sh]
    }

    pub fn vars<'t>(&self, tape: &'t Tape, store: &ParamStore) -> GaussianVars<'t> {
        GaussianVars {
            position: tape.param(store, self.position),
            rotation: tape.param(store, self.rotation),
            log_scales: tape.param(store, self.log_scales),
            opacity_logit: tape.param(store, self.opacity_logit),
            sh: tape.param(store, self.sh),
        }
    }

    pub fn primitive(&self, store: &ParamStore, i: usize) -> GaussianPrimitive {
        let k = sh_coeffs(self.sh_degree) * 3;
        let p = store.values(self.position);
        let r = store.values(self.rotation);
        let s = store.values(self.log_scales);
        GaussianPrimitive {
            position: [p[3 * i], p[3 * i + 1], p[3 * i + 2]],
            rotation: [r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]],
            log_scales: [s[3 * i], s[3 * i + 1], s[3 * i + 2]],
            opacity_logit: store.values(self.opacity_logit)[i],
            sh: store.values(self.sh)[k * i..k * (i + 1)].to_vec(),
        }
    }

    pub fn primitives(&self, store: &ParamStore) -> Vec<GaussianPrimitive> {
        (0..self.len(store)).map(|i| self.primitive(store, i)).collect()
    }

    /// Restores unit quaternions after an optimizer step.
    pub fn normalize_rotations(&self, store: &mut ParamStore) {
        for q in store.get_mut(self.rotation).values.chunks_exact_mut(4) {
            let n = normalize_quat([q[0], q[1], q[2], q[3]]);
            q.copy_from_slice(&n);
        }
    }

    /// Replaces the whole set. Adam moments follow kept rows; fresh rows start at zero.
    /// Statistics are reset.
    pub fn rebuild(&mut self, store: &mut ParamStore, adam: &mut AdamState, rows: &[RowSource]) {
        let prims: Vec<GaussianPrimitive> = rows
            .iter()
            .map(|r| match r {
                RowSource::Keep(i) => self.primitive(store, *i),
                RowSource::Fresh(g) => g.clone(),
            })
            .collect();
        let mapping: Vec<Option<usize>> = rows
            .iter()
            .map(|r| match r {
                RowSource::Keep(i) => Some(*i),
                RowSource::Fresh(_) => None,
            })
            .collect();
        let n = prims.len();
        let k = sh_coeffs(self.sh_degree) * 3;
        store.replace(self.position, &[n, 3], prims.iter().flat_map(|g| g.position).collect());
        store.replace(self.rotation, &[n, 4], prims.iter().flat_map(|g| g.rotation).collect());
        store.replace(self.log_scales, &[n, 3], prims.iter().flat_map(|g| g.log_scales).collect());
        store.replace(self.opacity_logit, &[n], prims.iter().map(|g| g.opacity_logit).collect());
        store.replace(self.sh, &[n, k], prims.iter().flat_map(|g| g.sh.iter().copied()).collect());
        for (id, w) in [(self.position, 3), (self.rotation, 4), (self.log_scales, 3), (self.opacity_logit, 1), (self.sh, k)] {
            adam.remap_rows(id, w, &mapping);
        }
        self.stats = GaussianStats::new(n);
    }

    /// Writes the centers as an ASCII PLY point cloud.
    pub fn export_ply(&self, store: &ParamStore, path: &Path) -> Result<()> {
        let pts: Vec<[f64; 3]> = store
            .values(self.position)
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        crate::io::write_ply_points(path, &pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{AdamConfig, ParamGrads};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rebuild_keeps_rows_and_moments() {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut scene = GaussianScene::random_in_box(&mut store, "g", 4, [-1.0; 3], [1.0; 3], 0.05, 0.1, 1, &mut rng);
        let mut adam = AdamState::new(AdamConfig::default());
        let mut grads = ParamGrads::default();
        grads.insert(scene.position, (0..12).map(|i| i as f64).collect());
        adam.step(&mut store, &grads).unwrap();
        let g2 = scene.primitive(&store, 2);
        let fresh = GaussianPrimitive {
            position: [9.0; 3],
            ..g2.clone()
        };
        scene.rebuild(&mut store, &mut adam, &[RowSource::Keep(2), RowSource::Fresh(fresh)]);
        assert_eq!(scene.len(&store), 2);
        assert_eq!(scene.primitive(&store, 0), g2);
        assert_eq!(scene.primitive(&store, 1).position, [9.0; 3]);
        assert_eq!(scene.stats.len(), 2);
        let mut g = ParamGrads::default();
        g.insert(scene.position, vec![0.0; 6]);
        let before = store.values(scene.position).to_vec();
        adam.step(&mut store, &g).unwrap();
        let after = store.values(scene.position);
        assert_ne!(before[0], after[0], "kept row carries momentum");
        assert_eq!(before[3], after[3], "fresh row has zero momentum");
    }

    #[test]
    fn rotations_renormalize() {
        let mut store = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scene = GaussianScene::random_in_box(&mut store, "g", 3, [0.0; 3], [1.0; 3], 0.05, 0.1, 0, &mut rng);
        store.get_mut(scene.rotation).values[0] = 3.0;
        scene.normalize_rotations(&mut store);
        let q = &store.values(scene.rotation)[..4];
        assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
