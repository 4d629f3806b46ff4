//! Deformation fields: the Gaussian offset network and the invertible
//! observation-to-canonical map used by the surface.

mod bijective;
mod dgs;

pub use bijective::{BijectiveConfig, BijectiveDeformation};
pub use dgs::{DeformOffsets, DgsDeformConfig, DgsDeformNet};
