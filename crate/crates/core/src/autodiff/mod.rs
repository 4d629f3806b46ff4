//! Reverse-mode automatic differentiation, the Adam optimizer, gradient
//! checking and parameter checkpoints.

mod adam;
mod check;
pub mod checkpoint;
mod params;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use check::{finite_diff_check, finite_diff_check_multi, param_fd_check};
pub use params::{Param, ParamGrads, ParamId, ParamStore};
pub use tape::{concat_cols, concat_rows, CustomOp, Gradients, NodeGrad, Tape, Var};

pub use tape::{sigmoid as sigmoid_value, softplus as softplus_value};
