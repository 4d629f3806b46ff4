use std::path::Path;

use super::dataset::{Dataset, Split};
use super::model::Model;
use crate::io::{write_depth, write_normal_png, write_rgb_png};
use crate::mesh::{sample_surface_points, write_mesh_manifest, write_ply, ManifestEntry, TriangleMesh};
use crate::metrics::{chamfer, emd, psnr, ssim, EmdConfig, FrameMetric, MeshMetric, MetricReport};
use crate::Result;

/// Surface samples per mesh for CD and EMD.
pub const METRIC_POINTS: usize = 10_000;

/// Renders every frame of `split` (all frames for `None`) at training
/// resolution and scores it against the dataset image. With `out`, writes
/// `render_NNN.png`, `normal_NNN.png` and `depth_NNN.bin` there.
pub fn render_eval(model: &Model, iteration: usize, dataset: &Dataset, split: Option<Split>, out: Option<&Path>) -> Result<Vec<FrameMetric>> {
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let deform = model.deform_active(iteration);
    let factor = model.config.downscale;
    let mut rows = Vec::new();
    for f in dataset.split(split) {
        let cam = f.camera.downscaled(factor);
        let r = model.render(&cam, f.time, deform);
        let (w, h) = (cam.width, cam.height);
        let (p, s) = if f.image.exists() {
            let gt = dataset.load_images(f, factor)?.composite(model.config.raster.background);
            (Some(psnr(&r.color, &gt)), Some(ssim(&r.color, &gt, h, w, 3)))
        } else {
            log::warn!("frame {}: ground-truth image {} missing, metrics absent", f.index, f.image.display());
            (None, None)
        };
        if let Some(dir) = out {
            write_rgb_png(&dir.join(format!("render_{:03}.png", f.index)), w, h, &r.color)?;
            write_normal_png(&dir.join(format!("normal_{:03}.png", f.index)), w, h, &r.normal)?;
            write_depth(&dir.join(format!("depth_{:03}.bin", f.index)), w, h, &r.depth.filtered)?;
        }
        rows.push(FrameMetric {
            frame: f.index,
            time: f.time,
            psnr: p,
            ssim: s,
        });
    }
    Ok(rows)
}

/// CD and EMD between two meshes from area-uniform samples; `None` if either is empty.
pub fn mesh_distances(pred: &TriangleMesh, gt: &TriangleMesh, n: usize, diag: f64) -> Option<(f64, f64)> {
    let a = sample_surface_points(pred, n, 1).ok()?;
    let b = sample_surface_points(gt, n, 2).ok()?;
    Some((chamfer(&a, &b), emd(&a, &b, diag, &EmdConfig::default())))
}

/// Ground-truth mesh of the dataset frame at time `t`, if one exists.
pub fn gt_mesh_at(dataset: &Dataset, t: f64) -> Result<Option<TriangleMesh>> {
    match dataset.frames.iter().find(|f| (f.time - t).abs() < 1e-9) {
        Some(f) => dataset.gt_mesh(f.index),
        None => Ok(None),
    }
}

/// Extracts the surface at each time and writes `mesh_NNNN.ply` plus
/// `manifest.json` to `out`. Empty extractions are recorded and skipped.
/// CD and EMD are filled in where `dataset` has a ground-truth mesh.
pub fn export_mesh_sequence(model: &Model, timesteps: &[f64], resolution: usize, out: &Path, dataset: Option<&Dataset>) -> Result<Vec<MeshMetric>> {
    if let Some(t) = timesteps.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(crate::Error::Config(format!("timestep {t} outside [0, 1]")));
    }
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::new();
    let mut rows = Vec::new();
    for (k, &t) in timesteps.iter().enumerate() {
        let mesh = model.mesh(t, resolution)?;
        if mesh.is_empty() {
            log::warn!("empty surface at t = {t}");
        } else {
            let file = format!("mesh_{k:04}.ply");
            write_ply(&mesh, &out.join(&file))?;
            entries.push(ManifestEntry { file, time: t });
        }
        let gt = match dataset {
            Some(ds) => gt_mesh_at(ds, t)?,
            None => None,
        };
        let dist = gt.and_then(|g| mesh_distances(&mesh, &g, METRIC_POINTS, model.bounds.diagonal()));
        rows.push(MeshMetric {
            time: t,
            cd: dist.map(|d| d.0),
            emd: dist.map(|d| d.1),
            vertices: mesh.vertices.len(),
            faces: mesh.faces.len(),
        });
    }
    write_mesh_manifest(out, &entries)?;
    Ok(rows)
}

/// `count` evenly spaced frame times that have ground-truth meshes, or evenly
/// spaced times over `[0, 1]` when none do.
pub fn evaluation_times(dataset: &Dataset, count: usize) -> Vec<f64> {
    let with_gt: Vec<f64> = dataset
        .frames
        .iter()
        .filter(|f| dataset.gt_mesh_path(f.index).exists())
        .map(|f| f.time)
        .collect();
    if count == 0 {
        return Vec::new();
    }
    if with_gt.is_empty() {
        return (0..count).map(|i| if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 }).collect();
    }
    let n = with_gt.len();
    let mut picked: Vec<f64> = (0..count.min(n))
        .map(|i| with_gt[if count == 1 { n / 2 } else { (i * (n - 1)) / (count.min(n) - 1).max(1) }])
        .collect();
    picked.dedup();
    picked
}

/// Full report: image metrics on `split` plus meshes at `timesteps`.
pub fn evaluate(
    model: &Model,
    iteration: usize,
    dataset: &Dataset,
    split: Option<Split>,
    timesteps: &[f64],
    resolution: usize,
    out: &Path,
) -> Result<MetricReport> {
    let frames = render_eval(model, iteration, dataset, split, Some(&out.join("renders")))?;
    let meshes = export_mesh_sequence(model, timesteps, resolution, &out.join("meshes"), Some(dataset))?;
    let scene = dataset.scene.clone().unwrap_or_else(|| dataset.root.display().to_string());
    let report = MetricReport::new(&scene, frames, meshes, EmdConfig::default().epsilon);
    report.write(out)?;
    Ok(report)
}
