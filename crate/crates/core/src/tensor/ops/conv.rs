//! 3-D convolution (cross-correlation, zero padding).
//!
//! The fast path lowers each sample to a `[Cin*kd*kh*kw, D'*H'*W']` patch
//! matrix and multiplies by the `[Cout, Cin*kd*kh*kw]` weight matrix.
//! [`conv3d_reference`] is the direct-loop definition it must agree with.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::element::{gemm, Layout};
use crate::tensor::{Element, Tensor, Var};

/// Geometry of a 3-D convolution. Axis order is (depth/slice, height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv3dParams {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

/// `floor((n + 2p - k) / s) + 1`, or an error when no window fits.
pub fn output_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::InvalidGeometry(format!(
            "kernel {kernel} / stride {stride} must be positive"
        )));
    }
    let padded = n + 2 * padding;
    if padded < kernel {
        return Err(Error::InvalidGeometry(format!(
            "extent {n} with padding {padding} is smaller than kernel {kernel}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

impl Conv3dParams {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Parameter("conv channel counts must be positive".into()));
        }
        if kernel.contains(&0) || stride.contains(&0) {
            return Err(Error::Parameter(format!(
                "conv kernel {kernel:?} and stride {stride:?} must be positive"
            )));
        }
        Ok(Conv3dParams {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        })
    }

    /// Kernel `k` on every axis, padding `(k - 1) / 2`, so stride 1 keeps extents.
    pub fn same(in_channels: usize, out_channels: usize, kernel: [usize; 3], stride: [usize; 3]) -> Result<Self> {
        let padding = kernel.map(|k| (k - 1) / 2);
        Self::new(in_channels, out_channels, kernel, stride, padding)
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [kd, kh, kw] = self.kernel;
        [self.out_channels, self.in_channels, kd, kh, kw]
    }

    pub fn weight_numel(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn output_dims(&self, spatial: [usize; 3]) -> Result<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            out[a] = output_extent(spatial[a], self.kernel[a], self.stride[a], self.padding[a])?;
        }
        Ok(out)
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == [1, 1, 1] && self.stride == [1, 1, 1] && self.padding == [0, 0, 0]
    }
}

fn check_shapes(input: [usize; 5], weight: &[usize], bias: Option<&[usize]>, p: &Conv3dParams) -> Result<[usize; 3]> {
    if weight != p.weight_shape() {
        return Err(Error::Shape(format!(
            "conv3d weight shape {weight:?}, expected {:?}",
            p.weight_shape()
        )));
    }
    if input[1] != p.in_channels {
        return Err(Error::Shape(format!(
            "conv3d input has {} channels, weight expects {}",
            input[1], p.in_channels
        )));
    }
    if let Some(b) = bias {
        if b != [p.out_channels] {
            return Err(Error::Shape(format!(
                "conv3d bias shape {b:?}, expected [{}]",
                p.out_channels
            )));
        }
    }
    p.output_dims([input[2], input[3], input[4]])
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k`.
#[inline]
fn valid_range(out: usize, n: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
    // o*s + k - p in [0, n)
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if n + p > k { ((n + p - k - 1) / s + 1).min(out) } else { 0 };
    (lo.min(hi), hi)
}

struct Geometry {
    in_dims: [usize; 3],
    out_dims: [usize; 3],
    p: Conv3dParams,
}

impl Geometry {
    fn in_len(&self) -> usize {
        self.in_dims.iter().product()
    }

    fn out_len(&self) -> usize {
        self.out_dims.iter().product()
    }

    /// Fills `cols` (`[patch_len, out_len]`) from one sample's `[Cin, D, H, W]`.
    fn im2col<T: Element>(&self, x: &[T], cols: &mut [T]) {
        let [d, h, w] = self.in_dims;
        let [od, oh, ow] = self.out_dims;
        let [kd, kh, kw] = self.p.kernel;
        let [sd, sh, sw] = self.p.stride;
        let [pd, ph, pw] = self.p.padding;
        let plane = od * oh * ow;
        let mut row = 0;
        for c in 0..self.p.in_channels {
            let xc = &x[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..kd {
                let (z0, z1) = valid_range(od, d, kz, sd, pd);
                for ky in 0..kh {
                    let (y0, y1) = valid_range(oh, h, ky, sh, ph);
                    for kx in 0..kw {
                        let (x0, x1) = valid_range(ow, w, kx, sw, pw);
                        let dst = &mut cols[row * plane..(row + 1) * plane];
                        dst.fill(T::zero());
                        for oz in z0..z1 {
                            let iz = oz * sd + kz - pd;
                            for oy in y0..y1 {
                                let iy = oy * sh + ky - ph;
                                let src = &xc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                                let out = &mut dst[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                if sw == 1 {
                                    let ix0 = x0 + kx - pw;
                                    out[x0..x1].copy_from_slice(&src[ix0..ix0 + (x1 - x0)]);
                                } else {
                                    for ox in x0..x1 {
                                        out[ox] = src[ox * sw + kx - pw];
                                    }
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into one sample's input-gradient buffer.
    fn col2im<T: Element>(&self, cols: &[T], dx: &mut [T]) {
        let [d, h, w] = self.in_dims;
        let [od, oh, ow] = self.out_dims;
        let [kd, kh, kw] = self.p.kernel;
        let [sd, sh, sw] = self.p.stride;
        let [pd, ph, pw] = self.p.padding;
        let plane = od * oh * ow;
        let mut row = 0;
        for c in 0..self.p.in_channels {
            let dxc = &mut dx[c * d * h * w..(c + 1) * d * h * w];
            for kz in 0..kd {
                let (z0, z1) = valid_range(od, d, kz, sd, pd);
                for ky in 0..kh {
                    let (y0, y1) = valid_range(oh, h, ky, sh, ph);
                    for kx in 0..kw {
                        let (x0, x1) = valid_range(ow, w, kx, sw, pw);
                        let src = &cols[row * plane..(row + 1) * plane];
                        for oz in z0..z1 {
                            let iz = oz * sd + kz - pd;
                            for oy in y0..y1 {
                                let iy = oy * sh + ky - ph;
                                let dst = &mut dxc[(iz * h + iy) * w..(iz * h + iy + 1) * w];
                                let g = &src[(oz * oh + oy) * ow..(oz * oh + oy + 1) * ow];
                                for ox in x0..x1 {
                                    dst[ox * sw + kx - pw] += g[ox];
                                }
                            }
                        }
                        row += 1;
                    }
                }
            }
        }
    }
}

fn forward_kernel<T: Element>(x: &[T], n: usize, geo: &Geometry, w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let cout = geo.p.out_channels;
    let k = geo.p.patch_len();
    let (in_len, out_len) = (geo.in_len(), geo.out_len());
    let in_stride = geo.p.in_channels * in_len;
    let mut out = vec![T::zero(); n * cout * out_len];
    let pointwise = geo.p.is_pointwise();
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * out_len] };
    for s in 0..n {
        let xs = &x[s * in_stride..(s + 1) * in_stride];
        let patches: &[T] = if pointwise {
            xs
        } else {
            geo.im2col(xs, &mut cols);
            &cols
        };
        let ys = &mut out[s * cout * out_len..(s + 1) * cout * out_len];
        gemm(
            T::one(),
            w,
            Layout::row_major(cout, k),
            patches,
            Layout::row_major(k, out_len),
            T::zero(),
            ys,
            Layout::row_major(cout, out_len),
        );
        if let Some(b) = bias {
            for (c, row) in ys.chunks_mut(out_len).enumerate() {
                row.iter_mut().for_each(|v| *v += b[c]);
            }
        }
    }
    out
}

struct ConvGrads<T> {
    input: Option<Vec<T>>,
    weight: Option<Vec<T>>,
    bias: Option<Vec<T>>,
}

fn backward_kernel<T: Element>(
    x: &[T],
    n: usize,
    geo: &Geometry,
    w: &[T],
    gy: &[T],
    needs: [bool; 3],
) -> ConvGrads<T> {
    let cout = geo.p.out_channels;
    let k = geo.p.patch_len();
    let (in_len, out_len) = (geo.in_len(), geo.out_len());
    let in_stride = geo.p.in_channels * in_len;
    let pointwise = geo.p.is_pointwise();
    let mut gx = needs[0].then(|| vec![T::zero(); n * in_stride]);
    let mut gw = needs[1].then(|| vec![T::zero(); cout * k]);
    let gb = needs[2].then(|| {
        let mut gb = vec![T::zero(); cout];
        for s in 0..n {
            for (c, acc) in gb.iter_mut().enumerate() {
                let off = (s * cout + c) * out_len;
                *acc += gy[off..off + out_len].iter().copied().sum::<T>();
            }
        }
        gb
    });
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * out_len] };
    for s in 0..n {
        let gys = &gy[s * cout * out_len..(s + 1) * cout * out_len];
        if let Some(gw) = gw.as_mut() {
            let xs = &x[s * in_stride..(s + 1) * in_stride];
            let patches: &[T] = if pointwise {
                xs
            } else {
                geo.im2col(xs, &mut cols);
                &cols
            };
            gemm(
                T::one(),
                gys,
                Layout::row_major(cout, out_len),
                patches,
                Layout::transposed(k, out_len),
                T::one(),
                gw,
                Layout::row_major(cout, k),
            );
        }
        if let Some(gx) = gx.as_mut() {
            let gxs = &mut gx[s * in_stride..(s + 1) * in_stride];
            if pointwise {
                gemm(
                    T::one(),
                    w,
                    Layout::transposed(cout, k),
                    gys,
                    Layout::row_major(cout, out_len),
                    T::zero(),
                    gxs,
                    Layout::row_major(k, out_len),
                );
            } else {
                gemm(
                    T::one(),
                    w,
                    Layout::transposed(cout, k),
                    gys,
                    Layout::row_major(cout, out_len),
                    T::zero(),
                    &mut cols,
                    Layout::row_major(k, out_len),
                );
                geo.col2im(&cols, gxs);
            }
        }
    }
    ConvGrads {
        input: gx,
        weight: gw,
        bias: gb,
    }
}

/// Differentiable 3-D convolution of `[N, Cin, D, H, W]` by `[Cout, Cin, kd, kh, kw]`.
pub fn conv3d<'t, T: Element>(
    input: Var<'t, T>,
    weight: Var<'t, T>,
    bias: Option<Var<'t, T>>,
    p: &Conv3dParams,
) -> Result<Var<'t, T>> {
    let x = input.value();
    let dims = x.dims5("conv3d input")?;
    let w = weight.value();
    let b = bias.map(|b| b.value());
    let out_dims = check_shapes(dims, w.shape(), b.as_ref().map(|b| b.shape()), p)?;
    let geo = Geometry {
        in_dims: [dims[2], dims[3], dims[4]],
        out_dims,
        p: *p,
    };
    let n = dims[0];
    let data = forward_kernel(x.data(), n, &geo, w.data(), b.as_ref().map(|b| b.data()));
    let [od, oh, ow] = out_dims;
    let value = Tensor::new(&[n, p.out_channels, od, oh, ow], data)?;

    let mut inputs = vec![input, weight];
    inputs.extend(bias);
    Ok(input.tape().record(
        "conv3d",
        &inputs,
        value,
        Box::new(move |args| {
            let has_bias = args.inputs.len() == 3;
            let needs = [
                args.needs_grad[0],
                args.needs_grad[1],
                has_bias && args.needs_grad[2],
            ];
            let g = backward_kernel(
                args.inputs[0].data(),
                n,
                &geo,
                args.inputs[1].data(),
                args.grad_output,
                needs,
            );
            let mut out = vec![g.input, g.weight];
            if has_bias {
                out.push(g.bias);
            }
            out
        }),
    ))
}

/// Direct six-loop convolution on plain tensors. Slow; the definition the
/// lowered path is tested against.
pub fn conv3d_reference<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    p: &Conv3dParams,
) -> Result<Tensor<T>> {
    let dims = input.dims5("conv3d input")?;
    let [n, cin, d, h, w] = dims;
    let [od, oh, ow] = check_shapes(dims, weight.shape(), bias.map(|b| b.shape()), p)?;
    let [kd, kh, kw] = p.kernel;
    let (x, wt) = (input.data(), weight.data());
    let mut out = Vec::with_capacity(n * p.out_channels * od * oh * ow);
    for s in 0..n {
        for co in 0..p.out_channels {
            for oz in 0..od {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias.map_or(T::zero(), |b| b.data()[co]);
                        for ci in 0..cin {
                            for a in 0..kd {
                                let iz = (oz * p.stride[0] + a) as isize - p.padding[0] as isize;
                                if iz < 0 || iz >= d as isize {
                                    continue;
                                }
                                for bb in 0..kh {
                                    let iy = (oy * p.stride[1] + bb) as isize - p.padding[1] as isize;
                                    if iy < 0 || iy >= h as isize {
                                        continue;
                                    }
                                    for c in 0..kw {
                                        let ix = (ox * p.stride[2] + c) as isize - p.padding[2] as isize;
                                        if ix < 0 || ix >= w as isize {
                                            continue;
                                        }
                                        let xi = (((s * cin + ci) * d + iz as usize) * h + iy as usize) * w
                                            + ix as usize;
                                        let wi = (((co * cin + ci) * kd + a) * kh + bb) * kw + c;
                                        acc += x[xi] * wt[wi];
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    Tensor::new(&[n, p.out_channels, od, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn extent_formula_and_errors() {
        assert_eq!(output_extent(32, 7, 2, 3).unwrap(), 16);
        assert_eq!(output_extent(16, 3, 1, 1).unwrap(), 16);
        assert_eq!(output_extent(1, 3, 2, 1).unwrap(), 1);
        assert!(matches!(output_extent(2, 5, 1, 1), Err(Error::InvalidGeometry(_))));
    }

    #[test]
    fn stem_geometry_output_shape() {
        let p = Conv3dParams::new(1, 64, [3, 7, 7], [1, 2, 2], [1, 3, 3]).unwrap();
        assert_eq!(p.output_dims([16, 32, 32]).unwrap(), [16, 16, 16]);
    }

    #[test]
    fn pointwise_identity_weight_is_identity() {
        let c = 3;
        let p = Conv3dParams::new(c, c, [1, 1, 1], [1, 1, 1], [0, 0, 0]).unwrap();
        let w = Tensor::<f64>::from_fn(&p.weight_shape(), |i| if i % (c + 1) == 0 { 1.0 } else { 0.0 });
        let tape = Tape::new();
        let x = tape.input(Tensor::from_fn(&[2, c, 2, 3, 4], |i| (i as f64).sin()));
        let y = conv3d(x, tape.constant(w), None, &p).unwrap();
        assert_eq!(y.value(), x.value());
    }

    #[test]
    fn mismatched_channels_are_rejected() {
        let p = Conv3dParams::new(2, 4, [3, 3, 3], [1, 1, 1], [1, 1, 1]).unwrap();
        let tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[1, 3, 4, 4, 4]));
        let w = tape.input(Tensor::zeros(&p.weight_shape()));
        assert!(matches!(conv3d(x, w, None, &p), Err(Error::Shape(_))));
    }

    #[test]
    fn too_small_input_is_invalid_geometry() {
        let p = Conv3dParams::new(1, 1, [3, 3, 3], [1, 1, 1], [0, 0, 0]).unwrap();
        let tape = Tape::<f32>::new();
        let x = tape.input(Tensor::zeros(&[1, 1, 2, 4, 4]));
        let w = tape.input(Tensor::zeros(&p.weight_shape()));
        assert!(matches!(conv3d(x, w, None, &p), Err(Error::InvalidGeometry(_))));
    }
}
