//! Pooling, fully connected, dropout, and the classification head ops.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::element::{gemm, Layout};
use crate::tensor::{Element, Tensor, Var};

/// Mean over all spatial positions: `[N, C, D, H, W] -> [N, C, 1, 1, 1]`.
pub fn adaptive_avg_pool_unit<T: Element>(input: Var<'_, T>) -> Result<Var<'_, T>> {
    let x = input.value();
    let [n, c, d, h, w] = x.dims5("adaptive_avg_pool input")?;
    let spatial = d * h * w;
    if spatial == 0 {
        return Err(Error::InvalidGeometry(format!(
            "cannot pool over empty spatial extent {:?}",
            [d, h, w]
        )));
    }
    let inv = T::one() / T::from_f64(spatial as f64);
    let data = x
        .data()
        .chunks(spatial)
        .map(|row| row.iter().copied().sum::<T>() * inv)
        .collect();
    let value = Tensor::new(&[n, c, 1, 1, 1], data)?;
    Ok(input.tape().record(
        "adaptive_avg_pool",
        &[input],
        value,
        Box::new(move |args| {
            let mut gx = Vec::with_capacity(args.inputs[0].numel());
            for &g in args.grad_output {
                gx.extend(std::iter::repeat_n(g * inv, spatial));
            }
            vec![Some(gx)]
        }),
    ))
}

/// `input · weightᵀ + bias` for `[N, F]`, `[K, F]`, `[K]`.
pub fn linear<'t, T: Element>(input: Var<'t, T>, weight: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let (x, w, b) = (input.value(), weight.value(), bias.value());
    let (n, f) = match x.shape() {
        &[n, f] => (n, f),
        s => return Err(Error::Shape(format!("linear input must be [N, F], got {s:?}"))),
    };
    let k = match w.shape() {
        &[k, wf] if wf == f => k,
        s => {
            return Err(Error::Shape(format!(
                "linear weight {s:?} does not match {f} input features"
            )))
        }
    };
    if b.shape() != [k] {
        return Err(Error::Shape(format!(
            "linear bias {:?}, expected [{k}]",
            b.shape()
        )));
    }
    let mut out: Vec<T> = (0..n).flat_map(|_| b.data().iter().copied()).collect();
    gemm(
        T::one(),
        x.data(),
        Layout::row_major(n, f),
        w.data(),
        Layout::transposed(k, f),
        T::one(),
        &mut out,
        Layout::row_major(n, k),
    );
    let value = Tensor::new(&[n, k], out)?;
    Ok(input.tape().record(
        "linear",
        &[input, weight, bias],
        value,
        Box::new(move |args| {
            let (x, w, gy) = (args.inputs[0].data(), args.inputs[1].data(), args.grad_output);
            let gx = args.needs_grad[0].then(|| {
                let mut gx = vec![T::zero(); n * f];
                gemm(
                    T::one(),
                    gy,
                    Layout::row_major(n, k),
                    w,
                    Layout::row_major(k, f),
                    T::zero(),
                    &mut gx,
                    Layout::row_major(n, f),
                );
                gx
            });
            let gw = args.needs_grad[1].then(|| {
                let mut gw = vec![T::zero(); k * f];
                gemm(
                    T::one(),
                    gy,
                    Layout::transposed(n, k),
                    x,
                    Layout::row_major(n, f),
                    T::zero(),
                    &mut gw,
                    Layout::row_major(k, f),
                );
                gw
            });
            let gb = args.needs_grad[2].then(|| {
                let mut gb = vec![T::zero(); k];
                for row in gy.chunks(k) {
                    gb.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
                }
                gb
            });
            vec![gx, gw, gb]
        }),
    ))
}

/// Inverted dropout: in training, zeroes each element with probability `p`
/// and scales survivors by `1 / (1 - p)`. Identity otherwise.
pub fn dropout<'t, T: Element, R: Rng + ?Sized>(
    input: Var<'t, T>,
    p: f64,
    training: bool,
    rng: &mut R,
) -> Result<Var<'t, T>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Parameter(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(input);
    }
    let x = input.value();
    let keep_scale = T::from_f64(1.0 / (1.0 - p));
    let mask: Vec<T> = (0..x.numel())
        .map(|_| if rng.gen::<f64>() < p { T::zero() } else { keep_scale })
        .collect();
    let data = x.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
    let value = Tensor::new(x.shape(), data)?;
    Ok(input.tape().record(
        "dropout",
        &[input],
        value,
        Box::new(move |args| {
            vec![Some(
                args.grad_output.iter().zip(&mask).map(|(&g, &m)| g * m).collect(),
            )]
        }),
    ))
}

/// Max-shifted log-softmax along the last axis of `[N, C]`.
pub fn log_softmax<T: Element>(input: Var<'_, T>) -> Result<Var<'_, T>> {
    let x = input.value();
    let c = match x.shape() {
        &[_, c] if c >= 1 => c,
        s => return Err(Error::Shape(format!("log_softmax expects [N, C>=1], got {s:?}"))),
    };
    if x.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("log_softmax input contains non-finite values".into()));
    }
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(c) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    let value = Tensor::new(x.shape(), out)?;
    Ok(input.tape().record(
        "log_softmax",
        &[input],
        value,
        Box::new(move |args| {
            let y = args.output.data();
            let mut gx = Vec::with_capacity(y.len());
            for (yr, gr) in y.chunks(c).zip(args.grad_output.chunks(c)) {
                let gsum: T = gr.iter().copied().sum();
                gx.extend(yr.iter().zip(gr).map(|(&yv, &g)| g - yv.exp() * gsum));
            }
            vec![Some(gx)]
        }),
    ))
}

/// Mean over the batch of `-weights[y_i] * log_probs[i, y_i]`.
pub fn weighted_nll<'t, T: Element>(log_probs: Var<'t, T>, targets: &[usize], weights: &[T]) -> Result<Var<'t, T>> {
    let lp = log_probs.value();
    let (n, c) = match lp.shape() {
        &[n, c] => (n, c),
        s => return Err(Error::Shape(format!("nll expects [N, C], got {s:?}"))),
    };
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for batch of {n}", targets.len())));
    }
    if weights.len() != c {
        return Err(Error::Shape(format!("{} class weights for {c} classes", weights.len())));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= c) {
        return Err(Error::Contract(format!("target class {t} outside [0, {c})")));
    }
    let inv_n = T::one() / T::from_f64(n as f64);
    let loss: T = targets
        .iter()
        .enumerate()
        .map(|(i, &t)| -weights[t] * lp.data()[i * c + t])
        .sum::<T>()
        * inv_n;
    let targets = targets.to_vec();
    let weights = weights.to_vec();
    Ok(log_probs.tape().record(
        "weighted_nll",
        &[log_probs],
        Tensor::scalar(loss),
        Box::new(move |args| {
            let g = args.grad_output[0];
            let mut gx = vec![T::zero(); n * c];
            for (i, &t) in targets.iter().enumerate() {
                gx[i * c + t] = -weights[t] * g * inv_n;
            }
            vec![Some(gx)]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pool_of_constant_is_constant() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::full(&[2, 3, 2, 3, 4], 1.5));
        let y = adaptive_avg_pool_unit(x).unwrap().value();
        assert_eq!(y.shape(), &[2, 3, 1, 1, 1]);
        assert!(y.data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn pool_shape_contract() {
        let tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[1, 512, 2, 4, 4]));
        assert_eq!(adaptive_avg_pool_unit(x).unwrap().shape(), vec![1, 512, 1, 1, 1]);
    }

    #[test]
    fn linear_identity_and_shape() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::from_fn(&[2, 3], |i| i as f64));
        let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }));
        let y = linear(x, eye, tape.constant(Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y.value(), x.value());

        let x = tape.input(Tensor::zeros(&[1, 512]));
        let y = linear(x, tape.input(Tensor::zeros(&[3, 512])), tape.input(Tensor::zeros(&[3]))).unwrap();
        assert_eq!(y.shape(), vec![1, 3]);
        let bad = linear(x, tape.input(Tensor::zeros(&[3, 500])), tape.input(Tensor::zeros(&[3])));
        assert!(matches!(bad, Err(Error::Shape(_))));
    }

    #[test]
    fn dropout_identity_cases_and_bad_p() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tape = Tape::<f32>::new();
        let x = tape.input(Tensor::from_fn(&[100], |i| i as f32));
        assert_eq!(dropout(x, 0.3, false, &mut rng).unwrap().value(), x.value());
        assert_eq!(dropout(x, 0.0, true, &mut rng).unwrap().value(), x.value());
        assert!(matches!(dropout(x, 1.0, true, &mut rng), Err(Error::Parameter(_))));
        assert!(matches!(dropout(x, -0.1, false, &mut rng), Err(Error::Parameter(_))));
    }

    #[test]
    fn log_softmax_uniform_and_stable() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::new(&[2, 3], vec![0.0, 0.0, 0.0, 1000.0, 0.0, 0.0]).unwrap());
        let y = log_softmax(x).unwrap().value();
        for &v in &y.data()[..3] {
            assert!((v + 3f64.ln()).abs() < 1e-12);
        }
        assert!(y.data()[3].abs() < 1e-12);
        assert!(y.data()[4].is_finite() && (y.data()[4] + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_rejects_nan() {
        let tape = Tape::<f32>::new();
        let x = tape.input(Tensor::new(&[1, 2], vec![f32::NAN, 0.0]).unwrap());
        assert!(matches!(log_softmax(x), Err(Error::Numeric(_))));
    }

    #[test]
    fn nll_rejects_out_of_range_target() {
        let tape = Tape::<f64>::new();
        let x = tape.input(Tensor::zeros(&[1, 3]));
        assert!(matches!(weighted_nll(x, &[3], &[1.0; 3]), Err(Error::Contract(_))));
    }
}
