//! Datasets, analytic scenes and the end-to-end training pipeline.

mod config;
mod dataset;
mod eval;
mod model;
mod scenes;
mod synthetic;
mod train;

pub use dataset::{downscale, load_dataset, Dataset, FrameImages, FrameRecord, Split, MANIFEST};
pub use scenes::{orbit_camera, render_analytic, AnalyticScene, SceneKind, AMBIENT, LIGHT_DIR, ORBIT_FOV_X, SCENE_NAMES, SPHERE_RADIUS};
pub use synthetic::{analytic_scene, generate_synthetic, SyntheticSpec};
pub use config::{DepthSupervision, LearningRates, ModelConfig, Schedule, TrainConfig};
pub use model::{init_radius, Model};
pub use train::{GuidedInterval, LossRecord, StepInfo, Trainer, LOSS_HEADER};
pub use eval::{evaluate, evaluation_times, export_mesh_sequence, gt_mesh_at, mesh_distances, render_eval, METRIC_POINTS};
