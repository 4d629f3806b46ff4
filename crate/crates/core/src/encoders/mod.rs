//! Input encodings and the MLP building block.

mod frequency;
mod hashgrid;
mod mlp;

pub use frequency::FrequencyEncoding;
pub use hashgrid::{HashGrid, HashGridConfig};
pub use mlp::{Activation, Linear, Mlp, MlpInit};
