use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::error::Result;
use crate::tensor::ops::{self, BatchNormConfig, Conv3dParams};
use crate::tensor::{Element, ParamId, ParamStore, Tensor, Var};

/// Bias-free convolution; always followed by batch-norm in these networks.
#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: ParamId,
    pub geometry: Conv3dParams,
}

impl Conv3d {
    /// Registers `{prefix}.weight`, drawn from N(0, 2 / fan_out).
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        geometry: Conv3dParams,
        rng: &mut R,
    ) -> Result<Self> {
        let shape = geometry.weight_shape();
        let fan_out = geometry.out_channels * geometry.kernel.iter().product::<usize>();
        let normal = Normal::new(0.0, (2.0 / fan_out as f64).sqrt()).expect("finite std");
        let data = (0..geometry.weight_numel())
            .map(|_| T::from_f64(normal.sample(rng)))
            .collect();
        let weight = store.add(format!("{prefix}.weight"), Tensor::new(&shape, data)?, true)?;
        Ok(Conv3d { weight, geometry })
    }

    pub fn forward<'t, T: Element>(&self, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let w = store.var(x.tape(), self.weight);
        ops::conv3d(x, w, None, &self.geometry)
    }

    pub fn num_params(&self) -> usize {
        self.geometry.weight_numel()
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub config: BatchNormConfig,
}

impl BatchNorm3d {
    pub fn new<T: Element>(store: &mut ParamStore<T>, prefix: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm3d {
            weight: store.add(format!("{prefix}.weight"), Tensor::ones(&[channels]), true)?,
            bias: store.add(format!("{prefix}.bias"), Tensor::zeros(&[channels]), true)?,
            running_mean: store.add(format!("{prefix}.running_mean"), Tensor::zeros(&[channels]), false)?,
            running_var: store.add(format!("{prefix}.running_var"), Tensor::ones(&[channels]), false)?,
            channels,
            config: BatchNormConfig::default(),
        })
    }

    pub fn forward<'t, T: Element>(
        &self,
        store: &mut ParamStore<T>,
        x: Var<'t, T>,
        training: bool,
    ) -> Result<Var<'t, T>> {
        let tape = x.tape();
        let gamma = store.var(tape, self.weight);
        let beta = store.var(tape, self.bias);
        let mut mean = store.get(self.running_mean).value.clone();
        let mut var = store.get(self.running_var).value.clone();
        let y = ops::batchnorm3d(x, gamma, beta, &mut mean, &mut var, self.config, training)?;
        if training {
            store.get_mut(self.running_mean).value = mean;
            store.get_mut(self.running_var).value = var;
        }
        Ok(y)
    }

    /// Trainable affine terms only.
    pub fn num_params(&self) -> usize {
        2 * self.channels
    }
}

/// Fully connected layer with bias, initialized uniformly in ±1/√fan_in.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<T: Element, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let bound = 1.0 / (in_features as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::from_f64(dist.sample(rng))).collect() };
        let w = Tensor::new(&[out_features, in_features], draw(out_features * in_features))?;
        let b = Tensor::new(&[out_features], draw(out_features))?;
        Ok(Linear {
            weight: store.add(format!("{prefix}.weight"), w, true)?,
            bias: store.add(format!("{prefix}.bias"), b, true)?,
            in_features,
            out_features,
        })
    }

    pub fn forward<'t, T: Element>(&self, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let tape = x.tape();
        ops::linear(x, store.var(tape, self.weight), store.var(tape, self.bias))
    }

    pub fn num_params(&self) -> usize {
        self.out_features * (self.in_features + 1)
    }
}
