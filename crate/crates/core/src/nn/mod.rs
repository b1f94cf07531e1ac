//! Minimal numerical kernel: tensors, the layer types used by the
//! autoencoder with exact reverse passes, Adam, and gradient checking.

pub mod adam;
pub mod gradcheck;
pub mod layers;
pub mod ops;
pub mod reduce;
pub mod tensor;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Objective};
pub use layers::{LayerSpec, ParamEntry, ParamStore, Sequential};
pub use ops::{conv1d_forward, dense_forward, dropout, maxpool1d, relu, upsample1d_crop, Mode};
pub use tensor::Tensor;
