use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::aabb::Aabb;
use crate::gaussian::Camera;
use crate::io::read_png;
use crate::mesh::TriangleMesh;
use crate::{Error, Result};

pub const MANIFEST: &str = "transforms.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub index: usize,
    pub image: PathBuf,
    pub normal: Option<PathBuf>,
    pub time: f64,
    pub camera: Camera,
    pub split: Split,
}

/// A monocular dynamic capture in the D-NeRF layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub root: PathBuf,
    pub frames: Vec<FrameRecord>,
    pub bounds: Aabb,
    pub width: usize,
    pub height: usize,
    pub fov_x: f64,
    /// Name of the analytic scene for generated data.
    pub scene: Option<String>,
    pub motion: Option<bool>,
}

/// Pixels of one frame at training resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameImages {
    pub width: usize,
    pub height: usize,
    /// `[h*w, 3]`, premultiplied by `alpha` when present.
    pub rgb: Vec<f64>,
    /// `[h*w]` coverage, present when the image file carries transparency.
    pub alpha: Option<Vec<f64>>,
    /// `[h*w, 3]` camera-space unit normals, zero where unknown.
    pub normal: Option<Vec<f64>>,
}

impl FrameImages {
    /// Color over a uniform `background`.
    pub fn composite(&self, background: [f64; 3]) -> Vec<f64> {
        match &self.alpha {
            None => self.rgb.clone(),
            Some(a) => self.rgb.chunks_exact(3).zip(a).flat_map(|(c, &a)| std::array::from_fn::<f64, 3, _>(|k| c[k] + background[k] * (1.0 - a))).collect(),
        }
    }
}

fn field_err(file: &Path, field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Dataset {
        file: file.to_path_buf(),
        field: field.into(),
        message: message.into(),
    }
}

fn resolve_image(root: &Path, rel: &str) -> PathBuf {
    let p = root.join(rel);
    if p.extension().is_none() {
        p.with_extension("png")
    } else {
        p
    }
}

/// Parses `transforms.json` and checks the frame invariants: every image
/// exists, times lie in `[0, 1]` and strictly increase.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let path = root.join(MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| field_err(&path, "manifest", e.to_string()))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| field_err(&path, "manifest", e.to_string()))?;
    let fov_x = v
        .get("camera_angle_x")
        .and_then(Value::as_f64)
        .ok_or_else(|| field_err(&path, "camera_angle_x", "missing or not a number"))?;
    let frames_v = v
        .get("frames")
        .and_then(Value::as_array)
        .ok_or_else(|| field_err(&path, "frames", "missing or not an array"))?;
    if frames_v.is_empty() {
        return Err(field_err(&path, "frames", "no frames"));
    }
    let bounds = match v.get("bounds") {
        Some(b) => serde_json::from_value::<Aabb>(b.clone()).map_err(|e| field_err(&path, "bounds", e.to_string()))?,
        None => Aabb::cube([0.0; 3], 1.5),
    };
    let mut size = match (v.get("w").and_then(Value::as_u64), v.get("h").and_then(Value::as_u64)) {
        (Some(w), Some(h)) => Some((w as usize, h as usize)),
        _ => None,
    };
    let mut frames = Vec::with_capacity(frames_v.len());
    for (i, f) in frames_v.iter().enumerate() {
        let field = |name: &str| format!("frames[{i}].{name}");
        let rel = f
            .get("file_path")
            .and_then(Value::as_str)
            .ok_or_else(|| field_err(&path, field("file_path"), "missing"))?;
        let image = resolve_image(root, rel);
        if !image.exists() {
            return Err(field_err(&path, field("file_path"), format!("{} does not exist", image.display())));
        }
        let time = f
            .get("time")
            .and_then(Value::as_f64)
            .ok_or_else(|| field_err(&path, field("time"), "missing or not a number"))?;
        if !(0.0..=1.0).contains(&time) {
            return Err(field_err(&path, field("time"), format!("{time} outside [0, 1]")));
        }
        if let Some(prev) = frames.last().map(|r: &FrameRecord| r.time) {
            if time <= prev {
                return Err(field_err(&path, field("time"), format!("{time} does not increase after {prev}")));
            }
        }
        let m = f
            .get("transform_matrix")
            .and_then(|m| serde_json::from_value::<[[f64; 4]; 4]>(m.clone()).ok())
            .ok_or_else(|| field_err(&path, field("transform_matrix"), "missing or not 4x4"))?;
        let normal = match f.get("normal_path").and_then(Value::as_str) {
            Some(rel) => {
                let p = resolve_image(root, rel);
                if !p.exists() {
                    return Err(field_err(&path, field("normal_path"), format!("{} does not exist", p.display())));
                }
                Some(p)
            }
            None => None,
        };
        let split = match f.get("split") {
            Some(s) => serde_json::from_value(s.clone()).map_err(|e| field_err(&path, field("split"), e.to_string()))?,
            None => Split::Train,
        };
        let (w, h) = match size {
            Some(s) => s,
            None => {
                let img = read_png(&image)?;
                size = Some((img.width, img.height));
                (img.width, img.height)
            }
        };
        frames.push(FrameRecord {
            index: i,
            image,
            normal,
            time,
            camera: Camera::from_c2w_gl(&m, fov_x, w, h),
            split,
        });
    }
    let (width, height) = size.expect("at least one frame");
    Ok(Dataset {
        root: root.to_path_buf(),
        frames,
        bounds,
        width,
        height,
        fov_x,
        scene: v.get("scene").and_then(Value::as_str).map(str::to_string),
        motion: v.get("motion").and_then(Value::as_bool),
    })
}

#[derive(Serialize)]
struct FrameOut<'a> {
    file_path: &'a str,
    normal_path: Option<&'a str>,
    time: f64,
    transform_matrix: [[f64; 4]; 4],
    #[serde(skip_serializing_if = "is_train")]
    split: Split,
}

fn is_train(s: &Split) -> bool {
    *s == Split::Train
}

fn rel(root: &Path, p: &Path) -> String {
    p.strip_prefix(root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

impl Dataset {
    pub fn write_manifest(&self) -> Result<()> {
        let files: Vec<(String, Option<String>)> = self
            .frames
            .iter()
            .map(|f| (rel(&self.root, &f.image), f.normal.as_ref().map(|n| rel(&self.root, n))))
            .collect();
        let frames: Vec<FrameOut> = self
            .frames
            .iter()
            .zip(&files)
            .map(|(f, (img, nrm))| FrameOut {
                file_path: img,
                normal_path: nrm.as_deref(),
                time: f.time,
                transform_matrix: f.camera.to_c2w_gl(),
                split: f.split,
            })
            .collect();
        let mut doc = serde_json::json!({
            "camera_angle_x": self.fov_x,
            "w": self.width,
            "h": self.height,
            "bounds": self.bounds,
            "frames": frames,
        });
        if let Some(s) = &self.scene {
            doc["scene"] = s.clone().into();
        }
        if let Some(m) = self.motion {
            doc["motion"] = m.into();
        }
        std::fs::write(self.root.join(MANIFEST), serde_json::to_string_pretty(&doc)?)?;
        Ok(())
    }

    pub fn split(&self, split: Option<Split>) -> Vec<&FrameRecord> {
        self.frames.iter().filter(|f| split.map_or(true, |s| f.split == s)).collect()
    }

    pub fn gt_mesh_path(&self, frame: usize) -> PathBuf {
        self.root.join("gt_meshes").join(format!("{frame:03}.obj"))
    }

    pub fn gt_mesh(&self, frame: usize) -> Result<Option<TriangleMesh>> {
        let p = self.gt_mesh_path(frame);
        if p.exists() {
            crate::mesh::read_obj(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Color and normals of a frame, box-downscaled by `factor`.
    pub fn load_images(&self, frame: &FrameRecord, factor: usize) -> Result<FrameImages> {
        let img = read_png(&frame.image)?;
        if (img.width, img.height) != (self.width, self.height) {
            return Err(field_err(
                &frame.image,
                "size",
                format!("{}x{} differs from {}x{}", img.width, img.height, self.width, self.height),
            ));
        }
        let (w, h) = ((self.width / factor).max(1), (self.height / factor).max(1));
        let transparent = img.alpha.iter().any(|&a| a < 1.0);
        let premultiplied: Vec<f64> = if transparent {
            img.rgb.chunks_exact(3).zip(&img.alpha).flat_map(|(c, &a)| [c[0] * a, c[1] * a, c[2] * a]).collect()
        } else {
            img.rgb
        };
        let rgb = downscale(&premultiplied, self.width, self.height, factor);
        let alpha = transparent.then(|| {
            let spread: Vec<f64> = img.alpha.iter().flat_map(|&a| [a; 3]).collect();
            downscale(&spread, self.width, self.height, factor).into_iter().step_by(3).collect()
        });
        let normal = match &frame.normal {
            Some(p) => {
                let n = read_png(p)?;
                let decoded: Vec<f64> = n
                    .rgb
                    .chunks_exact(3)
                    .flat_map(|c| if c.iter().all(|&v| v == 0.0) { [0.0; 3] } else { [2.0 * c[0] - 1.0, 2.0 * c[1] - 1.0, 2.0 * c[2] - 1.0] })
                    .collect();
                let mut d = downscale(&decoded, self.width, self.height, factor);
                for v in d.chunks_exact_mut(3) {
                    let l = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if l > 0.5 {
                        v.iter_mut().for_each(|c| *c /= l);
                    } else {
                        v.fill(0.0);
                    }
                }
                Some(d)
            }
            None => None,
        };
        Ok(FrameImages {
            width: w,
            height: h,
            rgb,
            alpha,
            normal,
        })
    }
}

/// Box filter over `factor × factor` blocks of a `[h*w, 3]` image.
pub fn downscale(img: &[f64], w: usize, h: usize, factor: usize) -> Vec<f64> {
    if factor == 1 {
        return img.to_vec();
    }
    let (ow, oh) = ((w / factor).max(1), (h / factor).max(1));
    let mut out = vec![0.0; ow * oh * 3];
    let norm = 1.0 / (factor * factor) as f64;
    for y in 0..oh {
        for x in 0..ow {
            for dy in 0..factor {
                for dx in 0..factor {
                    let src = ((y * factor + dy).min(h - 1) * w + (x * factor + dx).min(w - 1)) * 3;
                    for k in 0..3 {
                        out[(y * ow + x) * 3 + k] += img[src + k] * norm;
                    }
                }
            }
        }
    }
    out
}
