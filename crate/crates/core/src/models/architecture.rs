use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    build_block, build_stem, BatchNorm3d, Block, BlockSpec, ConvMode, ConvUnit, Linear, Stem, StemKind, StemSpec, STEM_OUT_CHANNELS,
};
use crate::tensor::ops::{adaptive_avg_pool_unit, dropout};
use crate::tensor::{Element, ParamStore, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchitectureKind {
    /// 3D stem and four full-3D stages.
    #[serde(rename = "resnet3d")]
    ResNet3D,
    /// Factored stem and four factored (2+1)D stages.
    #[serde(rename = "resnet2plus1d")]
    ResNet2Plus1D,
    /// 3D stem, one full-3D stage, then three in-plane stages.
    #[serde(rename = "mixedconv")]
    ResNetMixedConv,
}

impl ArchitectureKind {
    pub const ALL: [ArchitectureKind; 3] = [
        ArchitectureKind::ResNet3D,
        ArchitectureKind::ResNet2Plus1D,
        ArchitectureKind::ResNetMixedConv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ArchitectureKind::ResNet3D => "resnet3d",
            ArchitectureKind::ResNet2Plus1D => "resnet2plus1d",
            ArchitectureKind::ResNetMixedConv => "mixedconv",
        }
    }

    pub fn stem_kind(self) -> StemKind {
        match self {
            ArchitectureKind::ResNet2Plus1D => StemKind::Stem2Plus1D,
            _ => StemKind::Stem3D,
        }
    }

    /// Convolution mode of stage `index` (0-based).
    pub fn stage_mode(self, index: usize) -> ConvMode {
        match (self, index) {
            (ArchitectureKind::ResNet3D, _) => ConvMode::Full3D,
            (ArchitectureKind::ResNet2Plus1D, _) => ConvMode::Factored2Plus1D,
            (ArchitectureKind::ResNetMixedConv, 0) => ConvMode::Full3D,
            (ArchitectureKind::ResNetMixedConv, _) => ConvMode::InPlane2D,
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "resnet3d" | "r3d" => Ok(ArchitectureKind::ResNet3D),
            "resnet2plus1d" | "r2plus1d" | "resnet(2+1)d" => Ok(ArchitectureKind::ResNet2Plus1D),
            "mixedconv" | "mc3" | "resnetmixedconv" => Ok(ArchitectureKind::ResNetMixedConv),
            _ => Err(Error::Parameter(format!(
                "unknown architecture `{s}`; valid names: resnet3d, resnet2plus1d, mixedconv"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub in_channels: usize,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 3,
            in_channels: 1,
            dropout_p: 0.3,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Parameter(format!("num_classes {} < 2", self.num_classes)));
        }
        if self.in_channels == 0 {
            return Err(Error::Parameter("in_channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Parameter(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }
}

/// Output widths of the four stages.
pub const STAGE_WIDTHS: [usize; 4] = [64, 128, 256, 512];
pub const BLOCKS_PER_STAGE: usize = 2;

/// One of the three residual classifiers, owning its named parameters.
#[derive(Debug, Clone)]
pub struct Model<T: Element> {
    pub kind: ArchitectureKind,
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub stem: Stem,
    pub stages: Vec<Vec<Block>>,
    pub fc: Linear,
}

/// Builds and initializes a model from `seed`.
pub fn build_model<T: Element>(kind: ArchitectureKind, config: ModelConfig, seed: u64) -> Result<Model<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    build_model_with_rng(kind, config, &mut rng)
}

pub fn build_model_with_rng<T: Element, R: Rng + ?Sized>(
    kind: ArchitectureKind,
    config: ModelConfig,
    rng: &mut R,
) -> Result<Model<T>> {
    config.validate()?;
    let mut store = ParamStore::new();
    let stem = build_stem(
        &mut store,
        StemSpec {
            kind: kind.stem_kind(),
            in_channels: config.in_channels,
        },
        rng,
    )?;
    let mut stages = Vec::with_capacity(STAGE_WIDTHS.len());
    let mut in_c = STEM_OUT_CHANNELS;
    for (s, &width) in STAGE_WIDTHS.iter().enumerate() {
        let mut blocks = Vec::with_capacity(BLOCKS_PER_STAGE);
        for b in 0..BLOCKS_PER_STAGE {
            let spec = BlockSpec {
                mode: kind.stage_mode(s),
                in_channels: in_c,
                out_channels: width,
                downsample: s > 0 && b == 0,
            };
            let prefix = format!("stage{}.block{}", s + 1, b + 1);
            blocks.push(build_block(&mut store, &prefix, spec, rng)?);
            in_c = width;
        }
        stages.push(blocks);
    }
    let fc = Linear::new(&mut store, "fc", in_c, config.num_classes, rng)?;
    Ok(Model {
        kind,
        config,
        store,
        stem,
        stages,
        fc,
    })
}

impl<T: Element> Model<T> {
    /// Sum of element counts over trainable parameters.
    pub fn count_parameters(&self) -> usize {
        self.store.count_trainable()
    }

    /// Trainable parameter counts grouped by top-level module
    /// (`stem`, `stage1`..`stage4`, `fc`), in build order.
    pub fn parameter_breakdown(&self) -> Vec<(String, usize)> {
        let mut out: Vec<(String, usize)> = Vec::new();
        for (_, p) in self.store.trainable() {
            let module = p.name.split('.').next().unwrap_or_default();
            match out.last_mut() {
                Some((m, n)) if m == module => *n += p.value.numel(),
                _ => out.push((module.to_string(), p.value.numel())),
            }
        }
        out
    }

    /// Rejects inputs whose strided axes would stop halving before the last
    /// downsampling layer, i.e. some stride-2 layer would see an extent < 2.
    pub fn check_input_geometry(&self, shape: &[usize]) -> Result<()> {
        let [_, c, d, h, w] = match shape {
            &[n, c, d, h, w] => [n, c, d, h, w],
            other => {
                return Err(Error::Shape(format!(
                    "model input must be [N, C, D, H, W], got {other:?}"
                )))
            }
        };
        if c != self.config.in_channels {
            return Err(Error::Shape(format!(
                "model expects {} input channels, got {c}",
                self.config.in_channels
            )));
        }
        let mut strides = self.stem.strides();
        for block in self.stages.iter().flatten() {
            strides.extend(block.strides());
        }
        let mut ext = [d, h, w];
        for stride in strides {
            for axis in 0..3 {
                if stride[axis] > 1 {
                    if ext[axis] < 2 {
                        return Err(Error::InvalidGeometry(format!(
                            "input extents {:?} too small for {}: axis {axis} is exhausted before the last downsampling",
                            [d, h, w],
                            self.kind
                        )));
                    }
                    ext[axis] = ext[axis].div_ceil(stride[axis]);
                }
            }
        }
        Ok(())
    }

    /// Logits `[N, num_classes]` for input `[N, C, D, H, W]`.
    pub fn forward<'t, R: Rng + ?Sized>(&mut self, x: Var<'t, T>, training: bool, rng: &mut R) -> Result<Var<'t, T>> {
        self.check_input_geometry(&x.shape())?;
        let n = x.shape()[0];
        let mut h = self.stem.forward(&mut self.store, x, training)?;
        for block in self.stages.iter().flatten() {
            h = block.forward(&mut self.store, h, training)?;
        }
        let pooled = adaptive_avg_pool_unit(h)?;
        let features = pooled.reshape(&[n, self.fc.in_features])?;
        let features = dropout(features, self.config.dropout_p, training, rng)?;
        self.fc.forward(&self.store, features)
    }

    /// Eval-mode forward on a plain tensor, without gradient bookkeeping.
    pub fn predict_logits(&mut self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = crate::tensor::Tape::new();
        let x = tape.constant(input.clone());
        let mut unused = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(x, false, &mut unused)?.value())
    }

    /// Every batch-norm layer, in execution order.
    pub fn batchnorms_mut(&mut self) -> Vec<&mut BatchNorm3d> {
        let mut out: Vec<&mut BatchNorm3d> = self.stem.layers.iter_mut().map(|(_, bn)| bn).collect();
        for block in self.stages.iter_mut().flatten() {
            if let ConvUnit::Factored { bn, .. } = &mut block.conv1 {
                out.push(bn);
            }
            out.push(&mut block.bn1);
            if let ConvUnit::Factored { bn, .. } = &mut block.conv2 {
                out.push(bn);
            }
            out.push(&mut block.bn2);
            if let Some(s) = &mut block.shortcut {
                out.push(&mut s.bn);
            }
        }
        out
    }

    /// Resets running statistics to mean 0, variance 1.
    pub fn reset_batchnorm_stats(&mut self) {
        let ids: Vec<_> = self.batchnorms_mut().iter().map(|bn| (bn.running_mean, bn.running_var)).collect();
        for (m, v) in ids {
            self.store.get_mut(m).value.data_mut().iter_mut().for_each(|x| *x = T::zero());
            self.store.get_mut(v).value.data_mut().iter_mut().for_each(|x| *x = T::one());
        }
    }

    pub fn set_batchnorm_momentum(&mut self, momentum: f64) {
        for bn in self.batchnorms_mut() {
            bn.config.momentum = momentum;
        }
    }

    /// Converts every stored tensor to another precision.
    pub fn cast<U: Element>(&self) -> Model<U> {
        let mut store = ParamStore::new();
        for (_, p) in self.store.iter() {
            store
                .add(p.name.clone(), p.value.cast(), p.trainable)
                .expect("names already unique");
        }
        Model {
            kind: self.kind,
            config: self.config,
            store,
            stem: self.stem.clone(),
            stages: self.stages.clone(),
            fc: self.fc.clone(),
        }
    }
}
