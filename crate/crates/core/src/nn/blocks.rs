//! Residual blocks, stems and shortcuts for the four convolution modes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{BatchNorm3d, Conv3d};
use crate::error::{Error, Result};
use crate::tensor::ops::Conv3dParams;
use crate::tensor::{Element, ParamStore, Var};

/// How a block's 3×3×3 convolutions are realized. Axis order is
/// (slice, height, width); "in-plane" means the last two.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvMode {
    /// Kernel (3,3,3).
    Full3D,
    /// Kernel (1,3,3), one 2D filter shared across slices.
    InPlane2D,
    /// Kernel (3,1,1) along the slice axis.
    SliceWise1D,
    /// (1,3,3) → BN → ReLU → (3,1,1) with a hidden width from [`midplanes`].
    Factored2Plus1D,
}

impl ConvMode {
    /// Stride a downsampling convolution (and its shortcut) uses.
    pub fn downsample_stride(self) -> [usize; 3] {
        match self {
            ConvMode::Full3D | ConvMode::Factored2Plus1D => [2, 2, 2],
            ConvMode::InPlane2D => [1, 2, 2],
            ConvMode::SliceWise1D => [2, 1, 1],
        }
    }
}

/// Hidden width of a factored convolution, chosen so that the factored
/// pair costs no more weights than the full 3×3×3 convolution it replaces.
pub fn midplanes(in_channels: usize, out_channels: usize) -> usize {
    (in_channels * out_channels * 27) / (in_channels * 9 + 3 * out_channels)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub mode: ConvMode,
    pub in_channels: usize,
    pub out_channels: usize,
    pub downsample: bool,
}

impl BlockSpec {
    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Parameter(format!(
                "block channels must be positive, got {} -> {}",
                self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    fn needs_projection(&self) -> bool {
        self.downsample || self.in_channels != self.out_channels
    }
}

/// One "convolution" slot of a block.
#[derive(Debug, Clone)]
pub enum ConvUnit {
    Single(Conv3d),
    Factored {
        spatial: Conv3d,
        bn: BatchNorm3d,
        temporal: Conv3d,
    },
}

impl ConvUnit {
    #[allow(clippy::too_many_arguments)]
    fn build<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        mode: ConvMode,
        in_c: usize,
        out_c: usize,
        hidden: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let s = stride;
        Ok(match mode {
            ConvMode::Full3D => ConvUnit::Single(Conv3d::new(
                store,
                prefix,
                Conv3dParams::same(in_c, out_c, [3, 3, 3], [s, s, s])?,
                rng,
            )?),
            ConvMode::InPlane2D => ConvUnit::Single(Conv3d::new(
                store,
                prefix,
                Conv3dParams::same(in_c, out_c, [1, 3, 3], [1, s, s])?,
                rng,
            )?),
            ConvMode::SliceWise1D => ConvUnit::Single(Conv3d::new(
                store,
                prefix,
                Conv3dParams::same(in_c, out_c, [3, 1, 1], [s, 1, 1])?,
                rng,
            )?),
            ConvMode::Factored2Plus1D => {
                let spatial = Conv3d::new(
                    store,
                    &format!("{prefix}.spatial"),
                    Conv3dParams::same(in_c, hidden, [1, 3, 3], [1, s, s])?,
                    rng,
                )?;
                let bn = BatchNorm3d::new(store, &format!("{prefix}.bn"), hidden)?;
                let temporal = Conv3d::new(
                    store,
                    &format!("{prefix}.temporal"),
                    Conv3dParams::same(hidden, out_c, [3, 1, 1], [s, 1, 1])?,
                    rng,
                )?;
                ConvUnit::Factored { spatial, bn, temporal }
            }
        })
    }

    fn forward<'t, T: Element>(&self, store: &mut ParamStore<T>, x: Var<'t, T>, training: bool) -> Result<Var<'t, T>> {
        match self {
            ConvUnit::Single(conv) => conv.forward(store, x),
            ConvUnit::Factored { spatial, bn, temporal } => {
                let h = spatial.forward(store, x)?;
                let h = bn.forward(store, h, training)?.relu();
                temporal.forward(store, h)
            }
        }
    }

    fn num_params(&self) -> usize {
        match self {
            ConvUnit::Single(c) => c.num_params(),
            ConvUnit::Factored { spatial, bn, temporal } => {
                spatial.num_params() + bn.num_params() + temporal.num_params()
            }
        }
    }

    fn strides(&self) -> Vec<[usize; 3]> {
        match self {
            ConvUnit::Single(c) => vec![c.geometry.stride],
            ConvUnit::Factored { spatial, temporal, .. } => {
                vec![spatial.geometry.stride, temporal.geometry.stride]
            }
        }
    }
}

/// 1×1×1 projection plus batch-norm on the residual path.
#[derive(Debug, Clone)]
pub struct Shortcut {
    pub conv: Conv3d,
    pub bn: BatchNorm3d,
}

impl Shortcut {
    pub fn forward<'t, T: Element>(&self, store: &mut ParamStore<T>, x: Var<'t, T>, training: bool) -> Result<Var<'t, T>> {
        let y = self.conv.forward(store, x)?;
        self.bn.forward(store, y, training)
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params() + self.bn.num_params()
    }
}

/// Registers `{prefix}.conv.weight` and `{prefix}.bn.*`.
pub fn build_downsample_shortcut<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    in_channels: usize,
    out_channels: usize,
    stride: [usize; 3],
    rng: &mut R,
) -> Result<Shortcut> {
    if stride.iter().any(|s| !(1..=2).contains(s)) {
        return Err(Error::Parameter(format!("shortcut stride {stride:?} must be 1 or 2 per axis")));
    }
    let geometry = Conv3dParams::new(in_channels, out_channels, [1, 1, 1], stride, [0, 0, 0])?;
    Ok(Shortcut {
        conv: Conv3d::new(store, &format!("{prefix}.conv"), geometry, rng)?,
        bn: BatchNorm3d::new(store, &format!("{prefix}.bn"), out_channels)?,
    })
}

/// Basic residual block: `relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x))`.
#[derive(Debug, Clone)]
pub struct Block {
    pub spec: BlockSpec,
    pub conv1: ConvUnit,
    pub bn1: BatchNorm3d,
    pub conv2: ConvUnit,
    pub bn2: BatchNorm3d,
    pub shortcut: Option<Shortcut>,
}

/// Builds a block under `prefix` (e.g. `stage2.block1`).
pub fn build_block<T: Element, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: BlockSpec,
    rng: &mut R,
) -> Result<Block> {
    spec.validate()?;
    let stride = if spec.downsample { 2 } else { 1 };
    // both factored convolutions share the hidden width of the first
    let hidden = midplanes(spec.in_channels, spec.out_channels);
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let conv1 = ConvUnit::build(store, &format!("{prefix}.conv1"), spec.mode, cin, cout, hidden, stride, rng)?;
    let bn1 = BatchNorm3d::new(store, &format!("{prefix}.bn1"), cout)?;
    let conv2 = ConvUnit::build(store, &format!("{prefix}.conv2"), spec.mode, cout, cout, hidden, 1, rng)?;
    let bn2 = BatchNorm3d::new(store, &format!("{prefix}.bn2"), cout)?;
    let shortcut = if spec.needs_projection() {
        let s = if spec.downsample { spec.mode.downsample_stride() } else { [1, 1, 1] };
        Some(build_downsample_shortcut(store, &format!("{prefix}.downsample"), cin, cout, s, rng)?)
    } else {
        None
    };
    Ok(Block {
        spec,
        conv1,
        bn1,
        conv2,
        bn2,
        shortcut,
    })
}

impl Block {
    pub fn forward<'t, T: Element>(&self, store: &mut ParamStore<T>, x: Var<'t, T>, training: bool) -> Result<Var<'t, T>> {
        let h = self.conv1.forward(store, x, training)?;
        let h = self.bn1.forward(store, h, training)?.relu();
        let h = self.conv2.forward(store, h, training)?;
        let h = self.bn2.forward(store, h, training)?;
        let residual = match &self.shortcut {
            Some(s) => s.forward(store, x, training)?,
            None => x,
        };
        Ok(h.add(residual)?.relu())
    }

    pub fn num_params(&self) -> usize {
        self.conv1.num_params()
            + self.bn1.num_params()
            + self.conv2.num_params()
            + self.bn2.num_params()
            + self.shortcut.as_ref().map_or(0, Shortcut::num_params)
    }

    /// Strides of the main-path convolutions in execution order.
    pub fn strides(&self) -> Vec<[usize; 3]> {
        let mut s = self.conv1.strides();
        s.extend(self.conv2.strides());
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StemKind {
    /// (3,7,7) conv, stride (1,2,2), 64 channels.
    Stem3D,
    /// (1,7,7) conv to 45 channels, then (3,1,1) conv to 64.
    Stem2Plus1D,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StemSpec {
    pub kind: StemKind,
    pub in_channels: usize,
}

/// Channels every stem hands to the first stage.
pub const STEM_OUT_CHANNELS: usize = 64;
const STEM_HIDDEN_CHANNELS: usize = 45;

/// A chain of conv → BN → ReLU layers.
#[derive(Debug, Clone)]
pub struct Stem {
    pub spec: StemSpec,
    pub layers: Vec<(Conv3d, BatchNorm3d)>,
}

/// Builds the stem under `stem.*`.
pub fn build_stem<T: Element, R: Rng + ?Sized>(store: &mut ParamStore<T>, spec: StemSpec, rng: &mut R) -> Result<Stem> {
    if spec.in_channels == 0 {
        return Err(Error::Parameter("stem needs at least one input channel".into()));
    }
    let layers = match spec.kind {
        StemKind::Stem3D => {
            let g = Conv3dParams::new(spec.in_channels, STEM_OUT_CHANNELS, [3, 7, 7], [1, 2, 2], [1, 3, 3])?;
            vec![(
                Conv3d::new(store, "stem.conv", g, rng)?,
                BatchNorm3d::new(store, "stem.bn", STEM_OUT_CHANNELS)?,
            )]
        }
        StemKind::Stem2Plus1D => {
            let g1 = Conv3dParams::new(spec.in_channels, STEM_HIDDEN_CHANNELS, [1, 7, 7], [1, 2, 2], [0, 3, 3])?;
            let g2 = Conv3dParams::new(STEM_HIDDEN_CHANNELS, STEM_OUT_CHANNELS, [3, 1, 1], [1, 1, 1], [1, 0, 0])?;
            vec![
                (
                    Conv3d::new(store, "stem.conv1", g1, rng)?,
                    BatchNorm3d::new(store, "stem.bn1", STEM_HIDDEN_CHANNELS)?,
                ),
                (
                    Conv3d::new(store, "stem.conv2", g2, rng)?,
                    BatchNorm3d::new(store, "stem.bn2", STEM_OUT_CHANNELS)?,
                ),
            ]
        }
    };
    Ok(Stem { spec, layers })
}

impl Stem {
    pub fn forward<'t, T: Element>(&self, store: &mut ParamStore<T>, x: Var<'t, T>, training: bool) -> Result<Var<'t, T>> {
        self.layers.iter().try_fold(x, |h, (conv, bn)| {
            let h = conv.forward(store, h)?;
            Ok(bn.forward(store, h, training)?.relu())
        })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|(c, b)| c.num_params() + b.num_params()).sum()
    }

    pub fn strides(&self) -> Vec<[usize; 3]> {
        self.layers.iter().map(|(c, _)| c.geometry.stride).collect()
    }
}
