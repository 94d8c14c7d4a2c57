//! Forward and backward kernels on plain tensors.
//!
//! These are the building blocks the autodiff graph dispatches to; they can
//! also be called directly to run a layer sequence without recording a tape.
//! Every loop runs in a fixed order, so results are bit-reproducible.
//!
//! Convolutions use the cross-correlation convention (no kernel flip).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Padding, Shape, Tensor};

fn dim_err<T>(op: &'static str, lhs: Shape, rhs: Shape) -> Result<T> {
    Err(Error::Dimension { op, lhs, rhs })
}

/// Range of output indices `o` with `0 <= o * stride + offset < in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, offset: isize, stride: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
    let room = in_len as isize - offset;
    let hi = if room > 0 { (room + s - 1) / s } else { 0 };
    let hi = hi.min(out_len as isize);
    if hi <= lo {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

fn conv_output_shape(
    op: &'static str,
    input: Shape,
    kernel: Shape,
    out_channels: usize,
    stride: usize,
    padding: Padding,
) -> Result<Shape> {
    let k = kernel.h;
    if kernel.h != kernel.w || k == 0 {
        return dim_err(op, input, kernel);
    }
    if stride == 0 {
        return Err(Error::Contract(alloc::format!("{op}: stride must be positive")));
    }
    if padding == Padding::Same && k % 2 == 0 {
        return Err(Error::Contract(alloc::format!(
            "{op}: same padding needs an odd kernel, got {k}"
        )));
    }
    let ho = padding.output_len(input.h, k, stride);
    let wo = padding.output_len(input.w, k, stride);
    match (ho, wo) {
        (Some(ho), Some(wo)) => Ok(Shape::new(input.n, out_channels, ho, wo)),
        _ => dim_err(op, input, kernel),
    }
}

/// 2-D convolution. `kernel` has shape `(out_channels, in_channels, k, k)`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let is = input.shape();
    let ks = kernel.shape();
    if ks.c != is.c {
        return dim_err("conv2d", is, ks);
    }
    let os = conv_output_shape("conv2d", is, ks, ks.n, stride, padding)?;
    let k = ks.h;
    let pad = padding.amount(k) as isize;
    let x = input.data();
    let w = kernel.data();
    let mut out = vec![T::zero(); os.numel()];
    for n in 0..is.n {
        for o in 0..ks.n {
            let out_plane = &mut out[os.index(n, o, 0, 0)..][..os.plane()];
            for c in 0..is.c {
                let in_plane = &x[is.index(n, c, 0, 0)..][..is.plane()];
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(os.h, is.h, dy, stride);
                    for kx in 0..k {
                        let wv = w[ks.index(o, c, ky, kx)];
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(os.w, is.w, dx, stride);
                        for oy in y0..y1 {
                            let iy = (oy * stride) as isize + dy;
                            let row = &in_plane[iy as usize * is.w..][..is.w];
                            let orow = &mut out_plane[oy * os.w..][..os.w];
                            for ox in x0..x1 {
                                let ix = ((ox * stride) as isize + dx) as usize;
                                orow[ox] += wv * row[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Gradients of [`conv2d`] with respect to its input and kernel.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let is = input.shape();
    let ks = kernel.shape();
    let os = conv_output_shape("conv2d_backward", is, ks, ks.n, stride, padding)?;
    if grad_out.shape() != os {
        return dim_err("conv2d_backward", os, grad_out.shape());
    }
    let k = ks.h;
    let pad = padding.amount(k) as isize;
    let x = input.data();
    let w = kernel.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); is.numel()];
    let mut gw = vec![T::zero(); ks.numel()];
    for n in 0..is.n {
        for o in 0..ks.n {
            let g_plane = &g[os.index(n, o, 0, 0)..][..os.plane()];
            for c in 0..is.c {
                let in_off = is.index(n, c, 0, 0);
                for ky in 0..k {
                    let dy = ky as isize - pad;
                    let (y0, y1) = valid_range(os.h, is.h, dy, stride);
                    for kx in 0..k {
                        let widx = ks.index(o, c, ky, kx);
                        let wv = w[widx];
                        let dx = kx as isize - pad;
                        let (x0, x1) = valid_range(os.w, is.w, dx, stride);
                        let mut acc = T::zero();
                        for oy in y0..y1 {
                            let iy = ((oy * stride) as isize + dy) as usize;
                            let row_off = in_off + iy * is.w;
                            let grow = &g_plane[oy * os.w..][..os.w];
                            for ox in x0..x1 {
                                let ix = ((ox * stride) as isize + dx) as usize;
                                let gv = grow[ox];
                                acc += gv * x[row_off + ix];
                                gx[row_off + ix] += gv * wv;
                            }
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
    }
    Ok((Tensor::from_vec(is, gx)?, Tensor::from_vec(ks, gw)?))
}

fn check_sources(op: &'static str, input: Shape, filters: Shape, sources: &[usize]) -> Result<()> {
    if sources.len() != filters.n || sources.iter().any(|&s| s >= input.c) {
        return dim_err(op, input, filters);
    }
    if filters.c != 1 {
        return dim_err(op, input, filters);
    }
    Ok(())
}

/// Depthwise convolution: one `k x k` filter per channel, filters shaped
/// `(channels, 1, k, k)`. Output channel `i` depends only on input channel `i`.
pub fn depthwise_conv2d<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    if filters.shape().n != input.shape().c {
        return dim_err("depthwise_conv2d", input.shape(), filters.shape());
    }
    let sources: Vec<usize> = (0..input.shape().c).collect();
    depthwise_conv2d_mapped(input, filters, &sources, stride, padding)
}

/// Depthwise convolution where output channel `j` filters input channel
/// `sources[j]`. Several outputs may read the same input channel.
pub fn depthwise_conv2d_mapped<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    sources: &[usize],
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let is = input.shape();
    let fs = filters.shape();
    check_sources("depthwise_conv2d", is, fs, sources)?;
    let os = conv_output_shape("depthwise_conv2d", is, fs, fs.n, stride, padding)?;
    let k = fs.h;
    let pad = padding.amount(k) as isize;
    let x = input.data();
    let w = filters.data();
    let mut out = vec![T::zero(); os.numel()];
    for n in 0..is.n {
        for (j, &src) in sources.iter().enumerate() {
            let in_plane = &x[is.index(n, src, 0, 0)..][..is.plane()];
            let out_plane = &mut out[os.index(n, j, 0, 0)..][..os.plane()];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(os.h, is.h, dy, stride);
                for kx in 0..k {
                    let wv = w[fs.index(j, 0, ky, kx)];
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(os.w, is.w, dx, stride);
                    for oy in y0..y1 {
                        let iy = ((oy * stride) as isize + dy) as usize;
                        let row = &in_plane[iy * is.w..][..is.w];
                        let orow = &mut out_plane[oy * os.w..][..os.w];
                        for ox in x0..x1 {
                            let ix = ((ox * stride) as isize + dx) as usize;
                            orow[ox] += wv * row[ix];
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(os, out)
}

/// Gradients of [`depthwise_conv2d_mapped`] for input and filters.
pub fn depthwise_conv2d_backward<T: Real>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    sources: &[usize],
    grad_out: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let is = input.shape();
    let fs = filters.shape();
    check_sources("depthwise_conv2d_backward", is, fs, sources)?;
    let os = conv_output_shape("depthwise_conv2d_backward", is, fs, fs.n, stride, padding)?;
    if grad_out.shape() != os {
        return dim_err("depthwise_conv2d_backward", os, grad_out.shape());
    }
    let k = fs.h;
    let pad = padding.amount(k) as isize;
    let x = input.data();
    let w = filters.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); is.numel()];
    let mut gw = vec![T::zero(); fs.numel()];
    for n in 0..is.n {
        for (j, &src) in sources.iter().enumerate() {
            let in_off = is.index(n, src, 0, 0);
            let g_plane = &g[os.index(n, j, 0, 0)..][..os.plane()];
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = valid_range(os.h, is.h, dy, stride);
                for kx in 0..k {
                    let widx = fs.index(j, 0, ky, kx);
                    let wv = w[widx];
                    let dx = kx as isize - pad;
                    let (x0, x1) = valid_range(os.w, is.w, dx, stride);
                    let mut acc = T::zero();
                    for oy in y0..y1 {
                        let iy = ((oy * stride) as isize + dy) as usize;
                        let row_off = in_off + iy * is.w;
                        let grow = &g_plane[oy * os.w..][..os.w];
                        for ox in x0..x1 {
                            let ix = ((ox * stride) as isize + dx) as usize;
                            let gv = grow[ox];
                            acc += gv * x[row_off + ix];
                            gx[row_off + ix] += gv * wv;
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    Ok((Tensor::from_vec(is, gx)?, Tensor::from_vec(fs, gw)?))
}

/// Elementwise `max(0, x)`.
pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes the gradient where the input was strictly positive; the
/// subgradient at exactly zero is taken as 0.
pub fn relu_backward<T: Real>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(input.shape(), data).expect("relu_backward: same shape")
}

/// Saved statistics of a layer-norm forward pass.
#[derive(Debug, Clone)]
pub struct LayerNormCache<T> {
    /// Normalized input before gain and bias.
    pub normalized: Tensor<T>,
    /// `1 / sqrt(var + eps)` per sample.
    pub inv_std: Vec<T>,
}

/// Layer normalization over all `(c, h, w)` elements of each sample, then a
/// per-channel affine map. `gain` and `bias` are `(1, c, 1, 1)`.
pub fn layer_norm<T: Real>(
    input: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    epsilon: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let s = input.shape();
    if gain.shape().numel() != s.c || bias.shape().numel() != s.c {
        return dim_err("layer_norm", s, gain.shape());
    }
    if !(epsilon > T::zero()) {
        return Err(Error::Contract("layer_norm: epsilon must be positive".into()));
    }
    let m = s.sample_len();
    let inv_m = T::one() / T::from_usize(m);
    let plane = s.plane();
    let x = input.data();
    let (gn, bs) = (gain.data(), bias.data());
    let mut normalized = vec![T::zero(); s.numel()];
    let mut out = vec![T::zero(); s.numel()];
    let mut inv_std = Vec::with_capacity(s.n);
    for n in 0..s.n {
        let xs = &x[n * m..][..m];
        let mean = xs.iter().copied().sum::<T>() * inv_m;
        let var = xs.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_m;
        let istd = T::one() / (var + epsilon).sqrt();
        inv_std.push(istd);
        for (i, &v) in xs.iter().enumerate() {
            let c = i / plane;
            let xh = (v - mean) * istd;
            normalized[n * m + i] = xh;
            out[n * m + i] = xh * gn[c] + bs[c];
        }
    }
    Ok((
        Tensor::from_vec(s, out)?,
        LayerNormCache {
            normalized: Tensor::from_vec(s, normalized)?,
            inv_std,
        },
    ))
}

/// Gradients of [`layer_norm`]: `(input, gain, bias)`.
pub fn layer_norm_backward<T: Real>(
    cache: &LayerNormCache<T>,
    gain: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = grad_out.shape();
    let m = s.sample_len();
    let plane = s.plane();
    let mf = T::from_usize(m);
    let xh = cache.normalized.data();
    let g = grad_out.data();
    let gn = gain.data();
    let mut gx = vec![T::zero(); s.numel()];
    let mut ggain = vec![T::zero(); s.c];
    let mut gbias = vec![T::zero(); s.c];
    let mut gxh = vec![T::zero(); m];
    for n in 0..s.n {
        let base = n * m;
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for i in 0..m {
            let c = i / plane;
            let gv = g[base + i];
            ggain[c] += gv * xh[base + i];
            gbias[c] += gv;
            let d = gv * gn[c];
            gxh[i] = d;
            sum_g += d;
            sum_gx += d * xh[base + i];
        }
        let scale = cache.inv_std[n] / mf;
        for i in 0..m {
            gx[base + i] = scale * (mf * gxh[i] - sum_g - xh[base + i] * sum_gx);
        }
    }
    (
        Tensor::from_vec(s, gx).expect("shape"),
        Tensor::channel_vector(ggain).reshape(gain.shape()).expect("shape"),
        Tensor::channel_vector(gbias).reshape(gain.shape()).expect("shape"),
    )
}

/// Numerically stable softmax of a flat vector (max-subtraction).
pub fn softmax_flat<T: Real>(input: &[T]) -> Vec<T> {
    let max = input.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = input.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Softmax over all `h * w` positions of each sample and channel.
pub fn spatial_softmax<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    let s = input.shape();
    let mut out = Vec::with_capacity(s.numel());
    for plane in input.data().chunks(s.plane()) {
        out.extend(softmax_flat(plane));
    }
    Tensor::from_vec(s, out).expect("shape")
}

pub fn spatial_softmax_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let s = output.shape();
    let mut gx = Vec::with_capacity(s.numel());
    for (y, g) in output.data().chunks(s.plane()).zip(grad_out.data().chunks(s.plane())) {
        let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
        gx.extend(y.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::from_vec(s, gx).expect("shape")
}

/// `context[n, c] = sum_p weights[n, 0, p] * input[n, c, p]`, shaped
/// `(n, c, 1, 1)`. `weights` is `(n, 1, h, w)`.
pub fn weighted_pool<T: Real>(input: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    let ws = weights.shape();
    if ws != Shape::new(s.n, 1, s.h, s.w) {
        return dim_err("weighted_pool", s, ws);
    }
    let p = s.plane();
    let x = input.data();
    let w = weights.data();
    let mut out = vec![T::zero(); s.n * s.c];
    for n in 0..s.n {
        let wn = &w[n * p..][..p];
        for c in 0..s.c {
            let xs = &x[s.index(n, c, 0, 0)..][..p];
            out[n * s.c + c] = xs.iter().zip(wn).map(|(&a, &b)| a * b).sum();
        }
    }
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), out)
}

pub fn weighted_pool_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let s = input.shape();
    let p = s.plane();
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); s.numel()];
    let mut gw = vec![T::zero(); s.n * p];
    for n in 0..s.n {
        for c in 0..s.c {
            let gv = g[n * s.c + c];
            let base = s.index(n, c, 0, 0);
            for i in 0..p {
                gx[base + i] = gv * w[n * p + i];
                gw[n * p + i] += gv * x[base + i];
            }
        }
    }
    (
        Tensor::from_vec(s, gx).expect("shape"),
        Tensor::from_vec(weights.shape(), gw).expect("shape"),
    )
}

/// Adds a `(n, c, 1, 1)` vector to every spatial position of `input`.
pub fn broadcast_add<T: Real>(input: &Tensor<T>, vector: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if vector.shape() != Shape::new(s.n, s.c, 1, 1) {
        return dim_err("broadcast_add", s, vector.shape());
    }
    let p = s.plane();
    let v = vector.data();
    let mut out = input.data().to_vec();
    for (i, plane) in out.chunks_mut(p).enumerate() {
        let b = v[i];
        plane.iter_mut().for_each(|x| *x += b);
    }
    Tensor::from_vec(s, out)
}

/// Sums each `h * w` plane: the vector-side gradient of [`broadcast_add`].
pub fn sum_planes<T: Real>(grad: &Tensor<T>) -> Tensor<T> {
    let s = grad.shape();
    let data = grad.data().chunks(s.plane()).map(|p| p.iter().copied().sum()).collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data).expect("shape")
}

/// Adds a `(1, c, 1, 1)` per-channel bias to every sample and position.
pub fn add_channel_bias<T: Real>(input: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if bias.shape().numel() != s.c {
        return dim_err("add_channel_bias", s, bias.shape());
    }
    let b = bias.data();
    let mut out = input.data().to_vec();
    for (i, plane) in out.chunks_mut(s.plane()).enumerate() {
        let bv = b[i % s.c];
        plane.iter_mut().for_each(|x| *x += bv);
    }
    Tensor::from_vec(s, out)
}

pub fn add_channel_bias_backward<T: Real>(grad_out: &Tensor<T>, bias_shape: Shape) -> Tensor<T> {
    let s = grad_out.shape();
    let mut gb = vec![T::zero(); s.c];
    for (i, plane) in grad_out.data().chunks(s.plane()).enumerate() {
        gb[i % s.c] += plane.iter().copied().sum();
    }
    Tensor::from_vec(bias_shape, gb).expect("shape")
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return dim_err("add", a.shape(), b.shape());
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| x + y).collect();
    Tensor::from_vec(a.shape(), data)
}

/// Concatenates two tensors along the channel axis.
pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if (sa.n, sa.h, sa.w) != (sb.n, sb.h, sb.w) {
        return dim_err("concat_channels", sa, sb);
    }
    let os = Shape::new(sa.n, sa.c + sb.c, sa.h, sa.w);
    let mut out = Vec::with_capacity(os.numel());
    for n in 0..sa.n {
        out.extend_from_slice(&a.data()[n * sa.sample_len()..][..sa.sample_len()]);
        out.extend_from_slice(&b.data()[n * sb.sample_len()..][..sb.sample_len()]);
    }
    Tensor::from_vec(os, out)
}

/// Splits a channel-concatenated gradient back into its two parts.
pub fn split_channels<T: Real>(grad: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let s = grad.shape();
    let sa = Shape::new(s.n, first, s.h, s.w);
    let sb = Shape::new(s.n, s.c - first, s.h, s.w);
    let mut a = Vec::with_capacity(sa.numel());
    let mut b = Vec::with_capacity(sb.numel());
    for sample in grad.data().chunks(s.sample_len()) {
        let (x, y) = sample.split_at(sa.sample_len());
        a.extend_from_slice(x);
        b.extend_from_slice(y);
    }
    (
        Tensor::from_vec(sa, a).expect("shape"),
        Tensor::from_vec(sb, b).expect("shape"),
    )
}

/// Mean over the `h * w` positions; output `(n, c, 1, 1)`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let s = input.shape();
    if s.h == 0 || s.w == 0 {
        return Err(Error::Contract("global_avg_pool: empty spatial extent".into()));
    }
    let inv = T::one() / T::from_usize(s.plane());
    let data = input
        .data()
        .chunks(s.plane())
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(Shape::new(s.n, s.c, 1, 1), data)
}

pub fn global_avg_pool_backward<T: Real>(input_shape: Shape, grad_out: &Tensor<T>) -> Tensor<T> {
    let inv = T::one() / T::from_usize(input_shape.plane());
    let mut gx = Vec::with_capacity(input_shape.numel());
    for &g in grad_out.data() {
        gx.extend(core::iter::repeat(g * inv).take(input_shape.plane()));
    }
    Tensor::from_vec(input_shape, gx).expect("shape")
}

/// Affine map `input * weights + bias` on `(n, d)` rows. `weights` is a
/// `(d, out)` matrix and `bias` has `out` elements.
pub fn fully_connected<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = input.shape();
    let ws = weights.shape();
    let d = s.sample_len();
    if ws.n != d || ws.h != 1 || ws.w != 1 {
        return dim_err("fully_connected", s, ws);
    }
    let out_dim = ws.c;
    if bias.shape().numel() != out_dim {
        return dim_err("fully_connected", ws, bias.shape());
    }
    let x = input.data();
    let w = weights.data();
    let mut out = Vec::with_capacity(s.n * out_dim);
    for n in 0..s.n {
        let mut row = bias.data().to_vec();
        for (i, &xv) in x[n * d..][..d].iter().enumerate() {
            let wrow = &w[i * out_dim..][..out_dim];
            for (r, &wv) in row.iter_mut().zip(wrow) {
                *r += xv * wv;
            }
        }
        out.extend(row);
    }
    Tensor::from_vec(Shape::matrix(s.n, out_dim), out)
}

/// Gradients of [`fully_connected`]: `(input, weights, bias)`.
pub fn fully_connected_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias_shape: Shape,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let s = input.shape();
    let d = s.sample_len();
    let out_dim = weights.shape().c;
    let x = input.data();
    let w = weights.data();
    let g = grad_out.data();
    let mut gx = vec![T::zero(); s.numel()];
    let mut gw = vec![T::zero(); weights.shape().numel()];
    let mut gb = vec![T::zero(); out_dim];
    for n in 0..s.n {
        let grow = &g[n * out_dim..][..out_dim];
        for (b, &gv) in gb.iter_mut().zip(grow) {
            *b += gv;
        }
        for i in 0..d {
            let wrow = &w[i * out_dim..][..out_dim];
            gx[n * d + i] = wrow.iter().zip(grow).map(|(&a, &b)| a * b).sum();
            let xv = x[n * d + i];
            for (gwv, &gv) in gw[i * out_dim..][..out_dim].iter_mut().zip(grow) {
                *gwv += xv * gv;
            }
        }
    }
    (
        Tensor::from_vec(s, gx).expect("shape"),
        Tensor::from_vec(weights.shape(), gw).expect("shape"),
        Tensor::from_vec(bias_shape, gb).expect("shape"),
    )
}

/// Transpose of a `(rows, cols, 1, 1)` matrix.
pub fn transpose<T: Real>(matrix: &Tensor<T>) -> Result<Tensor<T>> {
    let s = matrix.shape();
    if s.h != 1 || s.w != 1 {
        return dim_err("transpose", s, Shape::matrix(s.n, s.c));
    }
    let m = matrix.data();
    let mut out = Vec::with_capacity(s.numel());
    for j in 0..s.c {
        for i in 0..s.n {
            out.push(m[i * s.c + j]);
        }
    }
    Tensor::from_vec(Shape::matrix(s.c, s.n), out)
}
