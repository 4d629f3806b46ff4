//! Dynamic scene reconstruction with deformable Gaussian splats and a
//! time-varying neural signed distance field.

pub mod aabb;
pub mod autodiff;
pub mod deform;
pub mod density;
pub mod encoders;
pub mod error;
pub mod gaussian;
pub mod io;
pub mod losses;
pub mod mesh;
pub mod metrics;
pub mod render;
pub mod surface;
pub mod par;
pub mod pipeline;

pub use error::{Error, Result};
