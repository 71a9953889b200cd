//! Layers, residual blocks and stems expressed over the tensor primitives.

pub mod blocks;
pub mod layers;

pub use blocks::{
    build_block, build_downsample_shortcut, build_stem, midplanes, Block, BlockSpec, ConvMode, ConvUnit, Shortcut,
    Stem, StemKind, StemSpec, STEM_OUT_CHANNELS,
};
pub use layers::{BatchNorm3d, Conv3d, Linear};
