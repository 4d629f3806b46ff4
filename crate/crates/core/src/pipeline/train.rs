use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::config::{DepthSupervision, Schedule, TrainConfig};
use super::dataset::{Dataset, FrameImages, Split};
use super::model::Model;
use crate::autodiff::{concat_rows, AdamConfig, AdamState, Tape, Var};
use crate::density::{apply_density_control, DensityConfig, DensityReport, ResolvedDensity};
use crate::gaussian::{project_batch, Camera};
use crate::losses::{image_loss_dg, normal_mask, surface_losses_dn, total_loss};
use crate::render::render_batch;
use crate::surface::{guided_interval, render_rays, sample_rays, RayRequest};
use crate::{Error, Result};

/// One row of the loss log. Absent terms had nothing to supervise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub frame: usize,
    pub time: f64,
    pub total: f64,
    pub dg: f64,
    pub l1: f64,
    pub ssim: f64,
    pub dg_normal: Option<f64>,
    pub dn: Option<f64>,
    pub dn_color: Option<f64>,
    pub sdf: Option<f64>,
    pub dn_normal: Option<f64>,
    pub eikonal: Option<f64>,
    pub gaussians: usize,
    /// Pixels on the filtered-depth mask in use this step.
    pub filtered: usize,
    pub guided_rays: usize,
    pub uniform_rays: usize,
    pub ms: f64,
}

pub const LOSS_HEADER: &str =
    "iteration,frame,time,total,dg,l1,ssim,dg_normal,dn,dn_color,sdf,dn_normal,eikonal,gaussians,filtered,guided_rays,uniform_rays,ms";

impl LossRecord {
    pub fn csv_row(&self) -> String {
        let o = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
            self.iteration,
            self.frame,
            self.time,
            self.total,
            self.dg,
            self.l1,
            self.ssim,
            o(self.dg_normal),
            o(self.dn),
            o(self.dn_color),
            o(self.sdf),
            o(self.dn_normal),
            o(self.eikonal),
            self.gaussians,
            self.filtered,
            self.guided_rays,
            self.uniform_rays,
            self.ms
        )
    }
}

/// Depth interval searched along one guided ray, in distance along `dir`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedInterval {
    pub origin: [f64; 3],
    pub dir: [f64; 3],
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone)]
pub struct StepInfo {
    pub record: LossRecord,
    pub guided: Vec<GuidedInterval>,
    pub density: Option<DensityReport>,
}

/// Joint optimization of both branches on one dataset.
pub struct Trainer {
    pub model: Model,
    pub adam: AdamState,
    pub dataset: Dataset,
    pub iteration: usize,
    schedule: Schedule,
    density: DensityConfig,
    resolved: ResolvedDensity,
    frames: Vec<usize>,
    images: Vec<FrameImages>,
    cameras: Vec<Camera>,
    rng: ChaCha8Rng,
    out: Option<PathBuf>,
    loss_log: Option<BufWriter<File>>,
    density_log: Option<BufWriter<File>>,
}

impl Trainer {
    /// Fresh model on the training split. With `out`, the loss log, density
    /// reports and checkpoints are written there.
    pub fn new(dataset: Dataset, config: &TrainConfig, out: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let model = Model::new(config, dataset.bounds, &mut rng)?;
        Self::resume(dataset, model, 0, rng, out)
    }

    /// Continues training a loaded model.
    pub fn from_model(dataset: Dataset, model: Model, iteration: usize, out: Option<&Path>) -> Result<Self> {
        let rng = ChaCha8Rng::seed_from_u64(model.config.seed ^ (iteration as u64).wrapping_mul(0x9E37_79B9));
        Self::resume(dataset, model, iteration, rng, out)
    }

    fn resume(dataset: Dataset, model: Model, iteration: usize, rng: ChaCha8Rng, out: Option<&Path>) -> Result<Self> {
        let cfg = &model.config;
        let frames: Vec<usize> = (0..dataset.frames.len()).filter(|&i| dataset.frames[i].split == Split::Train).collect();
        if frames.is_empty() {
            return Err(Error::Config("dataset has no training frames".into()));
        }
        let mut images = Vec::with_capacity(frames.len());
        let mut cameras = Vec::with_capacity(frames.len());
        for &i in &frames {
            let f = &dataset.frames[i];
            images.push(dataset.load_images(f, cfg.downscale)?);
            cameras.push(f.camera.downscaled(cfg.downscale));
        }
        let density = cfg.run_density();
        let resolved = density.resolve(model.bounds.diagonal())?;
        let (loss_log, density_log) = match out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
                let mut l = BufWriter::new(File::create(dir.join("loss.csv"))?);
                writeln!(l, "{LOSS_HEADER}")?;
                (Some(l), Some(BufWriter::new(File::create(dir.join("density.jsonl"))?)))
            }
            None => (None, None),
        };
        let mut t = Self {
            schedule: cfg.run_schedule(),
            adam: AdamState::new(AdamConfig::default()),
            density,
            resolved,
            frames,
            images,
            cameras,
            rng,
            out: out.map(Path::to_path_buf),
            loss_log,
            density_log,
            model,
            dataset,
            iteration,
        };
        t.configure_learning_rates();
        Ok(t)
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    fn configure_learning_rates(&mut self) {
        let lr = self.model.config.lr.clone();
        let pos = self.position_lr_at(self.iteration);
        let m = &self.model;
        let g = &m.gaussians;
        let mut set = |ids: &[crate::autodiff::ParamId], v: f64| {
            for &id in ids {
                self.adam.set_lr(&m.store, id, v);
            }
        };
        set(&[g.position], pos);
        set(&[g.rotation], lr.rotation);
        set(&[g.log_scales], lr.scaling);
        set(&[g.opacity_logit], lr.opacity);
        set(&[g.sh], lr.sh);
        set(&m.deform.params(), lr.deform);
        set(&[m.surface.field.grid.table], lr.sdf_grid);
        set(&m.surface.field.net.params(), lr.sdf_net);
        set(&m.surface.field.color.params(), lr.sdf_net);
        set(&[m.surface.field.log_inv_s], lr.inv_s);
        if let Some(h) = &m.surface.deform {
            set(&h.params(), lr.surface_deform);
        }
    }

    /// Exponential decay from the initial to the final position rate.
    pub fn position_lr_at(&self, it: usize) -> f64 {
        let lr = &self.model.config.lr;
        let p = (it as f64 / self.schedule.total as f64).clamp(0.0, 1.0);
        (lr.position.ln() * (1.0 - p) + lr.position_final.ln() * p).exp()
    }

    /// Trains to the end of the schedule, then writes the final checkpoint.
    pub fn run(&mut self) -> Result<Vec<LossRecord>> {
        self.run_with(|_| {})
    }

    pub fn run_with(&mut self, mut observe: impl FnMut(&StepInfo)) -> Result<Vec<LossRecord>> {
        let mut records = Vec::with_capacity(self.schedule.total.saturating_sub(self.iteration));
        while self.iteration < self.schedule.total {
            let info = self.step()?;
            observe(&info);
            records.push(info.record);
        }
        self.flush()?;
        if let Some(dir) = &self.out {
            self.model.save(&dir.join("model.ckpt"), self.iteration)?;
        }
        Ok(records)
    }

    pub fn flush(&mut self) -> Result<()> {
        for w in [&mut self.loss_log, &mut self.density_log].into_iter().flatten() {
            w.flush()?;
        }
        Ok(())
    }

    /// One joint iteration on a random training frame.
    pub fn step(&mut self) -> Result<StepInfo> {
        let start = Instant::now();
        let it = self.iteration;
        let sched = self.schedule;
        let mut cfg = self.model.config.clone();
        let slot = self.rng.gen_range(0..self.frames.len());
        let frame = self.frames[slot];
        let time = self.dataset.frames[frame].time;
        let cam = self.cameras[slot].clone();
        let (w, h) = (cam.width, cam.height);
        let deform = self.model.deform_active(it);
        let guidance = it >= sched.guidance_start;
        let normals_on = cfg.normal_supervision && it >= sched.normal_start;

        let tape = Tape::new();
        let model = &self.model;
        let img = &self.images[slot];
        if cfg.random_background && img.alpha.is_some() {
            cfg.raster.background = std::array::from_fn(|_| self.rng.gen_range(0.0..1.0));
        }
        let target_rgb = img.composite(cfg.raster.background);
        let gv = model.gaussian_vars(&tape, time, deform);
        let batch = project_batch(&gv, &cam, model.gaussians.sh_degree, cfg.model.near);
        let rv = render_batch(&batch, w, h, &cfg.raster);
        let out = rv.output.clone();

        let dg_mask = match (&img.normal, normals_on) {
            (Some(n), true) => Some(normal_mask(&out.alpha, n)),
            _ => None,
        };
        let dg_normals = img
            .normal
            .as_deref()
            .zip(dg_mask.as_deref())
            .map(|(n, m)| (rv.normal, n, m));
        let dg = image_loss_dg(rv.color, &target_rgb, h, w, dg_normals, &cfg.weights);

        let mut guided = Vec::new();
        let mut filtered = 0;
        let (mut guided_rays, mut uniform_rays) = (0, 0);
        let mut dn = None;
        if cfg.dns {
            let depth = &out.depth;
            let pix = sample(&mut self.rng, w * h, cfg.rays_per_batch.min(w * h)).into_vec();
            let rays: Vec<_> = pix.iter().map(|&p| cam.pixel_ray(p % w, p / w)).collect();
            let requests: Vec<RayRequest> = pix
                .iter()
                .zip(&rays)
                .map(|(&p, r)| RayRequest {
                    origin: r.origin.into(),
                    dir: r.dir.into(),
                    proposal: (cfg.guided_sampling && guidance && out.alpha[p] > 0.5 && depth.alpha_depth[p] > 0.0)
                        .then(|| depth.alpha_depth[p] / r.z_per_unit),
                })
                .collect();
            let s = if it < sched.s_switch { cfg.s_early } else { cfg.s_late };
            let ((gb, gi), (ub, ui)) = sample_rays(
                &model.surface,
                &model.store,
                &requests,
                time,
                s,
                &model.bounds,
                &cfg.sampling,
                Some(&mut self.rng),
            );
            guided_rays = gb.len();
            uniform_rays = ub.len();
            guided = guided_intervals(model, &requests, &gi, time, s, cfg.sampling.min_half_width);

            let mut colors = Vec::new();
            let mut normals = Vec::new();
            let mut weight_sum = Vec::new();
            let mut grads = Vec::new();
            let mut order = Vec::new();
            for (b, idx) in [(&gb, &gi), (&ub, &ui)] {
                if b.is_empty() {
                    continue;
                }
                let rr = render_rays(&model.surface, &tape, &model.store, b, time, cfg.raster.background);
                colors.push(rr.volume.color);
                normals.push(rr.volume.normal);
                grads.push(rr.samples.gradient);
                weight_sum.extend(rr.volume.weight_sum.value());
                order.extend(idx.iter().map(|&k| pix[k]));
            }

            let sdf_pts = if guidance && cfg.depth_supervision != DepthSupervision::None {
                let cand: Vec<(usize, f64)> = (0..w * h)
                    .filter_map(|p| match cfg.depth_supervision {
                        DepthSupervision::Filtered => (depth.valid[p] && depth.filtered[p] > 0.0).then(|| (p, depth.filtered[p])),
                        DepthSupervision::Alpha => (out.alpha[p] > 0.5 && depth.alpha_depth[p] > 0.0).then(|| (p, depth.alpha_depth[p])),
                        DepthSupervision::None => None,
                    })
                    .collect();
                if cfg.depth_supervision == DepthSupervision::Filtered {
                    filtered = cand.len();
                }
                let k = cfg.sdf_points.min(cand.len());
                sample(&mut self.rng, cand.len(), k)
                    .into_iter()
                    .map(|c| {
                        let (p, z) = cand[c];
                        let r = cam.pixel_ray(p % w, p / w);
                        (r.origin + r.dir * (z / r.z_per_unit)).into()
                    })
                    .collect::<Vec<[f64; 3]>>()
            } else {
                Vec::new()
            };
            let sdf_var = (!sdf_pts.is_empty()).then(|| {
                let x = tape.constant(&[sdf_pts.len(), 3], sdf_pts.iter().flatten().copied().collect());
                model.surface.sdf_eval(&tape, &model.store, x, time).sdf
            });

            let eik_pts = eikonal_points(&mut self.rng, model, &sdf_pts, &guided, cfg.eikonal_points);
            if !eik_pts.is_empty() {
                grads.push(model.surface.eval_with_gradient(&tape, &model.store, &eik_pts, time).gradient);
            }
            let eik_var = (!grads.is_empty()).then(|| concat_rows(&grads));

            if !colors.is_empty() {
                let color = concat_rows(&colors);
                let target: Vec<f64> = order.iter().flat_map(|&p| target_rgb[3 * p..3 * p + 3].iter().copied()).collect();
                let dn_normals = match (&img.normal, normals_on) {
                    (Some(n), true) => {
                        let world = concat_rows(&normals);
                        let rt: Vec<f64> = (0..9).map(|k| cam.rotation[(k % 3, k / 3)]).collect();
                        let camn = world.matmul(tape.constant(&[3, 3], rt));
                        let tn: Vec<f64> = order.iter().flat_map(|&p| n[3 * p..3 * p + 3].iter().copied()).collect();
                        let mask: Vec<bool> = weight_sum
                            .iter()
                            .zip(tn.chunks_exact(3))
                            .map(|(&ws, t)| ws > 0.5 && t.iter().map(|v| v * v).sum::<f64>() > 0.25)
                            .collect();
                        Some((camn, tn, mask))
                    }
                    _ => None,
                };
                dn = Some(surface_losses_dn(
                    color,
                    &target,
                    sdf_var,
                    dn_normals.as_ref().map(|(v, t, m)| (*v, t.as_slice(), m.as_slice())),
                    eik_var,
                    &cfg.weights,
                ));
            }
        }

        let total: Var = match &dn {
            Some(d) => total_loss(dg.total, d.total),
            None => dg.total,
        };
        let opt = |v: Option<Var>| v.map(|x| x.item());
        let mut record = LossRecord {
            iteration: it + 1,
            frame,
            time,
            total: total.item(),
            dg: dg.total.item(),
            l1: dg.l1.item(),
            ssim: dg.ssim.item(),
            dg_normal: opt(dg.normal),
            dn: opt(dn.map(|d| d.total)),
            dn_color: opt(dn.map(|d| d.color)),
            sdf: opt(dn.and_then(|d| d.sdf)),
            dn_normal: opt(dn.and_then(|d| d.normal)),
            eikonal: opt(dn.and_then(|d| d.eikonal)),
            gaussians: model.gaussians.len(&model.store),
            filtered,
            guided_rays,
            uniform_rays,
            ms: 0.0,
        };
        if !record.total.is_finite() {
            return Err(self.fail(&record, "loss"));
        }
        let grads = tape.backward(total)?;
        if !grads.params().is_finite() {
            return Err(self.fail(&record, "gradient"));
        }

        let n = record.gaussians;
        let g2d = grads.wrt(batch.mean2d).values;
        let gpos = grads.params().get(self.model.gaussians.position).map(<[f64]>::to_vec);
        let opacity = batch.opacity.value();
        let accumulate_opacity = self.in_opacity_window(it + 1);
        let stats = &mut self.model.gaussians.stats;
        for i in 0..n {
            let (gx, gy) = (g2d[2 * i] * 0.5 * w as f64, g2d[2 * i + 1] * 0.5 * h as f64);
            let norm = (gx * gx + gy * gy).sqrt();
            if batch.visible[i] && norm > 0.0 {
                stats.grad_accum[i] += norm;
                stats.grad_count[i] += 1;
            }
            if let Some(gp) = &gpos {
                for k in 0..3 {
                    stats.grad_dir[i][k] += gp[3 * i + k];
                }
            }
            if accumulate_opacity {
                stats.opacity_accum[i] += opacity[i];
            }
        }
        drop(batch);

        let pos_lr = self.position_lr_at(it);
        self.adam.set_lr(&self.model.store, self.model.gaussians.position, pos_lr);
        self.adam.step(&mut self.model.store, grads.params())?;
        self.model.gaussians.normalize_rotations(&mut self.model.store);
        self.iteration += 1;

        let mut report = None;
        if self.density.is_control_step(self.iteration) {
            let geometry = cfg.dns && self.iteration >= sched.geometry_start;
            let d = geometry.then(|| {
                let centers = self.model.deformed_centers(time, deform);
                self.model
                    .surface
                    .sdf_values(&self.model.store, &centers, time)
                    .into_iter()
                    .map(f64::abs)
                    .collect::<Vec<_>>()
            });
            let m = &mut self.model;
            let mut r = apply_density_control(&mut m.gaussians, &mut m.store, &mut self.adam, d.as_deref(), &self.resolved, &mut self.rng)?;
            r.iteration = self.iteration;
            if let Some(l) = &mut self.density_log {
                writeln!(l, "{}", serde_json::to_string(&r)?)?;
            }
            log::debug!("density control at {}: {} -> {}", r.iteration, r.before, r.after);
            report = Some(r);
        }
        if let Some(dir) = &self.out {
            let every = cfg.checkpoint_every;
            if every > 0 && self.iteration % every == 0 {
                self.model.save(&dir.join("model.ckpt"), self.iteration)?;
            }
        }
        record.ms = start.elapsed().as_secs_f64() * 1e3;
        if let Some(l) = &mut self.loss_log {
            writeln!(l, "{}", record.csv_row())?;
        }
        Ok(StepInfo {
            record,
            guided,
            density: report,
        })
    }

    /// Opacity is summed over the `window` iterations that end at a control step.
    fn in_opacity_window(&self, it: usize) -> bool {
        let interval = self.density.interval;
        let next = it.div_ceil(interval) * interval;
        next - it < self.density.window
    }

    /// Saves the last good parameters and a diagnostic dump, and builds the error.
    fn fail(&mut self, record: &LossRecord, what: &str) -> Error {
        let detail = format!("non-finite {what} on frame {} (t = {})", record.frame, record.time);
        let _ = self.flush();
        if let Some(dir) = &self.out {
            let saved = self.model.save(&dir.join("last_good.ckpt"), self.iteration);
            let bad: Vec<&str> = self
                .model
                .store
                .iter()
                .filter(|(_, p)| p.values.iter().any(|v| !v.is_finite()))
                .map(|(_, p)| p.name.as_str())
                .collect();
            let dump = serde_json::json!({
                "iteration": record.iteration,
                "detail": detail,
                "terms": record,
                "non_finite_parameters": bad,
                "checkpoint_saved": saved.is_ok(),
            });
            let _ = std::fs::write(dir.join("diagnostic.json"), serde_json::to_string_pretty(&dump).unwrap_or_default());
        }
        Error::NonFiniteLoss {
            iteration: record.iteration,
            detail,
        }
    }
}

/// Recomputes the interval `sample_rays` searched for each guided ray.
fn guided_intervals(model: &Model, requests: &[RayRequest], guided: &[usize], t: f64, s: f64, min_half: f64) -> Vec<GuidedInterval> {
    let centers: Vec<[f64; 3]> = guided
        .iter()
        .map(|&i| {
            let r = &requests[i];
            let d = r.proposal.expect("guided ray has a proposal");
            std::array::from_fn(|k| r.origin[k] + d * r.dir[k])
        })
        .collect();
    let sdf = model.surface.sdf_values(&model.store, &centers, t);
    guided
        .iter()
        .zip(sdf)
        .map(|(&i, f)| {
            let r = &requests[i];
            let (lo, hi) = guided_interval(r.proposal.expect("guided"), f, s, min_half);
            let lo = lo.max(0.0);
            GuidedInterval {
                origin: r.origin,
                dir: r.dir,
                lo,
                hi: hi.max(lo + min_half),
            }
        })
        .collect()
}

/// Eikonal points beyond the ray samples: half perturbed near-surface points
/// (depth points, else guided proposals), half uniform in the box. All uniform
/// when nothing near the surface is known.
fn eikonal_points(rng: &mut ChaCha8Rng, model: &Model, sdf_pts: &[[f64; 3]], guided: &[GuidedInterval], n: usize) -> Vec<[f64; 3]> {
    let b = &model.bounds;
    let near: Vec<[f64; 3]> = if !sdf_pts.is_empty() {
        sdf_pts.to_vec()
    } else {
        guided
            .iter()
            .map(|g| {
                let d = 0.5 * (g.lo + g.hi);
                std::array::from_fn(|k| g.origin[k] + d * g.dir[k])
            })
            .collect()
    };
    let n_near = if near.is_empty() { 0 } else { n / 2 };
    let noise = Normal::new(0.0, 0.01 * b.diagonal()).expect("positive std");
    let mut pts = Vec::with_capacity(n);
    for _ in 0..n_near {
        let c = near[rng.gen_range(0..near.len())];
        pts.push(std::array::from_fn(|k| (c[k] + noise.sample(rng)).clamp(b.min[k], b.max[k])));
    }
    while pts.len() < n {
        pts.push(std::array::from_fn(|k| rng.gen_range(b.min[k]..b.max[k])));
    }
    pts
}
