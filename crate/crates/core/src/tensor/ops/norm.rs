use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor, Var};

/// Batch-norm hyperparameters. Running statistics follow
/// `new = (1 - momentum) * old + momentum * batch`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchNormConfig {
    pub momentum: f64,
    pub eps: f64,
}

impl Default for BatchNormConfig {
    fn default() -> Self {
        BatchNormConfig {
            momentum: 0.1,
            eps: 1e-5,
        }
    }
}

/// Per-channel normalization of `[N, C, D, H, W]`.
///
/// Training mode uses the biased batch variance to normalize and feeds the
/// unbiased one into `running_var`. Eval mode normalizes with the running
/// statistics and leaves them untouched.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm3d<'t, T: Element>(
    input: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    cfg: BatchNormConfig,
    training: bool,
) -> Result<Var<'t, T>> {
    let x = input.value();
    let [n, c, d, h, w] = x.dims5("batchnorm3d input")?;
    for (what, shape) in [
        ("gamma", gamma.shape()),
        ("beta", beta.shape()),
        ("running_mean", running_mean.shape().to_vec()),
        ("running_var", running_var.shape().to_vec()),
    ] {
        if shape != [c] {
            return Err(Error::Shape(format!(
                "batchnorm3d {what} shape {shape:?}, input has {c} channels"
            )));
        }
    }
    let spatial = d * h * w;
    let count = n * spatial;
    if training && count < 2 {
        return Err(Error::DegenerateStatistics(format!(
            "batch-norm training needs at least 2 values per channel, got {count}"
        )));
    }
    let eps = T::from_f64(cfg.eps);
    let xd = x.data();

    let (mean, var) = if training {
        let inv_count = T::one() / T::from_f64(count as f64);
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let rows = (0..n).map(|s| &xd[(s * c + ch) * spatial..(s * c + ch + 1) * spatial]);
            let m = rows.clone().flatten().copied().sum::<T>() * inv_count;
            let v = rows.flatten().map(|&v| (v - m) * (v - m)).sum::<T>() * inv_count;
            mean[ch] = m;
            var[ch] = v;
        }
        let mom = T::from_f64(cfg.momentum);
        let unbias = T::from_f64(count as f64 / (count as f64 - 1.0));
        let rm = running_mean.data_mut();
        for ch in 0..c {
            rm[ch] = (T::one() - mom) * rm[ch] + mom * mean[ch];
        }
        let rv = running_var.data_mut();
        for ch in 0..c {
            rv[ch] = (T::one() - mom) * rv[ch] + mom * var[ch] * unbias;
        }
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();

    let (g, b) = (gamma.value(), beta.value());
    let mut out = vec![T::zero(); xd.len()];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * spatial;
            let (m, is) = (mean[ch], inv_std[ch]);
            let (gc, bc) = (g.data()[ch], b.data()[ch]);
            for (o, &v) in out[off..off + spatial].iter_mut().zip(&xd[off..off + spatial]) {
                *o = gc * (v - m) * is + bc;
            }
        }
    }
    let value = Tensor::new(x.shape(), out)?;

    Ok(input.tape().record(
        "batchnorm3d",
        &[input, gamma, beta],
        value,
        Box::new(move |args| {
            let xd = args.inputs[0].data();
            let gd = args.inputs[1].data();
            let gy = args.grad_output;
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            // per-channel sums of dy and dy*xhat
            for s in 0..n {
                for ch in 0..c {
                    let off = (s * c + ch) * spatial;
                    let (m, is) = (mean[ch], inv_std[ch]);
                    for (&dy, &v) in gy[off..off + spatial].iter().zip(&xd[off..off + spatial]) {
                        dbeta[ch] += dy;
                        dgamma[ch] += dy * (v - m) * is;
                    }
                }
            }
            let dx = args.needs_grad[0].then(|| {
                let mut dx = vec![T::zero(); xd.len()];
                let inv_count = T::one() / T::from_f64(count as f64);
                for s in 0..n {
                    for ch in 0..c {
                        let off = (s * c + ch) * spatial;
                        let (m, is, gc) = (mean[ch], inv_std[ch], gd[ch]);
                        let rows = dx[off..off + spatial]
                            .iter_mut()
                            .zip(&gy[off..off + spatial])
                            .zip(&xd[off..off + spatial]);
                        if training {
                            let (sum_dy, sum_dy_xhat) = (dbeta[ch], dgamma[ch]);
                            for ((o, &dy), &v) in rows {
                                let xhat = (v - m) * is;
                                *o = gc * is * (dy - inv_count * sum_dy - xhat * inv_count * sum_dy_xhat);
                            }
                        } else {
                            for ((o, &dy), _) in rows {
                                *o = gc * is * dy;
                            }
                        }
                    }
                }
                dx
            });
            vec![
                dx,
                args.needs_grad[1].then_some(dgamma),
                args.needs_grad[2].then_some(dbeta),
            ]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    fn affine<'t>(tape: &'t Tape<f64>, c: usize) -> (Var<'t, f64>, Var<'t, f64>) {
        (tape.input(Tensor::ones(&[c])), tape.input(Tensor::zeros(&[c])))
    }

    #[test]
    fn training_output_is_standardized() {
        let tape = Tape::new();
        let x = tape.input(Tensor::from_fn(&[2, 3, 4, 4, 4], |i| ((i * 37) % 101) as f64 * 0.3 - 7.0));
        let (g, b) = affine(&tape, 3);
        let (mut rm, mut rv) = (Tensor::zeros(&[3]), Tensor::ones(&[3]));
        let y = batchnorm3d(x, g, b, &mut rm, &mut rv, BatchNormConfig::default(), true)
            .unwrap()
            .value();
        let y = y.data();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..2)
                .flat_map(|s| y[(s * 3 + ch) * 64..(s * 3 + ch + 1) * 64].iter().copied())
                .collect();
            let m = vals.iter().sum::<f64>() / 128.0;
            let v = vals.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 128.0;
            assert!(m.abs() < 1e-5);
            assert!((v - 1.0).abs() < 1e-4, "variance {v}");
        }
    }

    #[test]
    fn eval_with_unit_stats_is_identity() {
        let tape = Tape::new();
        let x = tape.input(Tensor::from_fn(&[1, 2, 2, 2, 2], |i| i as f64 - 3.0));
        let (g, b) = affine(&tape, 2);
        let (mut rm, mut rv) = (Tensor::zeros(&[2]), Tensor::ones(&[2]));
        let cfg = BatchNormConfig { momentum: 0.1, eps: 0.0 };
        let y = batchnorm3d(x, g, b, &mut rm, &mut rv, cfg, false).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn single_value_per_channel_is_degenerate() {
        let tape = Tape::new();
        let x = tape.input(Tensor::zeros(&[1, 2, 1, 1, 1]));
        let (g, b) = affine(&tape, 2);
        let (mut rm, mut rv) = (Tensor::zeros(&[2]), Tensor::ones(&[2]));
        let r = batchnorm3d(x, g, b, &mut rm, &mut rv, BatchNormConfig::default(), true);
        assert!(matches!(r, Err(Error::DegenerateStatistics(_))));
    }

    #[test]
    fn running_stats_use_momentum_and_unbiased_variance() {
        let tape = Tape::new();
        // one channel, values 1..=4: mean 2.5, unbiased var 5/3
        let x = tape.input(Tensor::new(&[1, 1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let (g, b) = affine(&tape, 1);
        let (mut rm, mut rv) = (Tensor::zeros(&[1]), Tensor::ones(&[1]));
        batchnorm3d(x, g, b, &mut rm, &mut rv, BatchNormConfig::default(), true).unwrap();
        assert!((rm.data()[0] - 0.25).abs() < 1e-12);
        assert!((rv.data()[0] - (0.9 + 0.1 * 5.0 / 3.0)).abs() < 1e-12);
    }
}
