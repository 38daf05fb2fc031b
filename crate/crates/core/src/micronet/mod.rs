//! A small U-Net with hand-written reverse-mode gradients.

mod checkpoint;
mod model;
pub mod ops;
mod tensor;

pub use checkpoint::{
    expand_input_channels, load_checkpoint, replace_head, save_checkpoint, Checkpoint, NamedArray,
    ARCH_TAG,
};
pub use model::{build, layer_inventory, parameter_inventory, Head, LayerDef, Model, UNetSpec};
pub use tensor::{Real, Tensor4};
