//! Forward and backward kernels for the network operations.
//!
//! These are plain functions over [`Tensor`] values; the autodiff graph in
//! [`super::graph`] records which kernel produced each node and replays the
//! matching backward kernel in reverse order.
//!
//! Conventions fixed here:
//! * Convolution is cross-correlation (no kernel flip).
//! * `maxpool2d` breaks ties toward the first element of the window in
//!   row-major order.
//! * `pid_downsample` emits the four sub-maps in row-major offset order
//!   `(0,0), (0,1), (1,0), (1,1)`, each keeping the input channel layout, so
//!   output channel `q * c_in + c` holds offset `q` of input channel `c`.
//! * `softmax_channels` subtracts the per-pixel max before exponentiation.
//! * `cross_entropy` reads the foreground probability from channel 1 and
//!   clamps it to `[1e-7, 1 - 1e-7]` before taking logs.
//! * `cross_entropy_logits` fuses softmax and cross-entropy through a
//!   max-shifted log-sum-exp; training uses it because its gradient stays
//!   finite and restoring at any logit gap, where the probability-space
//!   composition underflows and pins saturated pixels at zero gradient.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of the foreground class in two-channel network output.
pub const FOREGROUND_CHANNEL: usize = 1;

/// Probability clamp applied before logarithms in the cross-entropy loss.
pub const PROB_CLAMP: f64 = 1e-7;

fn conv_out_extent(input: usize, kernel: usize, stride: usize, padding: usize) -> Result<usize> {
    let padded = input + 2 * padding;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel {} does not fit input extent {} with padding {}",
            kernel, input, padding
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Copies one image (all channels) into a zero-padded planar buffer.
///
/// `buf` is laid out `[c][h + 2p][w + 2p]` and fully rewritten.
fn pad_image<T: Scalar>(
    buf: &mut [T],
    data: &[T],
    channels: usize,
    h: usize,
    w: usize,
    padding: usize,
) {
    let ph = h + 2 * padding;
    let pw = w + 2 * padding;
    buf.fill(T::zero());
    for c in 0..channels {
        for y in 0..h {
            let src = &data[(c * h + y) * w..][..w];
            let dst = &mut buf[c * ph * pw + (y + padding) * pw + padding..][..w];
            dst.copy_from_slice(src);
        }
    }
}

/// 2-D cross-correlation with bias.
///
/// `input` is `[n, c_in, h, w]`, `weight` is `[c_out, c_in, kh, kw]`, `bias`
/// is `[c_out]`. Output spatial extents follow the usual floor formula; the
/// network only uses `k = 3` with `(stride, padding) = (1, 1)`, which
/// preserves extents, and tests exercise `(2, 1)` as the adjoint partner of
/// the transposed convolution.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, wc_in, kh, kw) = weight.dims4()?;
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv2d weight expects {} input channels, input has {}",
            wc_in, c_in
        )));
    }
    if bias.shape != [c_out] {
        return Err(Error::Shape(format!(
            "conv2d bias shape {:?} does not match {} output channels",
            bias.shape, c_out
        )));
    }
    if stride == 0 {
        return Err(Error::Shape("conv2d stride must be positive".into()));
    }
    let oh = conv_out_extent(h, kh, stride, padding)?;
    let ow = conv_out_extent(w, kw, stride, padding)?;

    let ph = h + 2 * padding;
    let pw = w + 2 * padding;
    let mut padded = vec![T::zero(); c_in * ph * pw];
    let mut out = Tensor::zeros(&[n, c_out, oh, ow]);

    for ni in 0..n {
        pad_image(&mut padded, &input.data[ni * c_in * h * w..][..c_in * h * w], c_in, h, w, padding);
        for co in 0..c_out {
            let out_base = ((ni * c_out + co) * oh) * ow;
            out.data[out_base..out_base + oh * ow].fill(bias.data[co]);
            for ci in 0..c_in {
                let plane = &padded[ci * ph * pw..][..ph * pw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight.data[((co * c_in + ci) * kh + ky) * kw + kx];
                        for oy in 0..oh {
                            let irow = &plane[(oy * stride + ky) * pw..][..pw];
                            let orow = &mut out.data[out_base + oy * ow..][..ow];
                            if stride == 1 {
                                for (o, &v) in orow.iter_mut().zip(&irow[kx..kx + ow]) {
                                    *o += wv * v;
                                }
                            } else {
                                for (ox, o) in orow.iter_mut().enumerate() {
                                    *o += wv * irow[ox * stride + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, weight, and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c_in, h, w) = input.dims4()?;
    let (c_out, _, kh, kw) = weight.dims4()?;
    let (_, _, oh, ow) = grad_out.dims4()?;

    let ph = h + 2 * padding;
    let pw = w + 2 * padding;
    let mut padded = vec![T::zero(); c_in * ph * pw];
    let mut grad_padded = vec![T::zero(); c_in * ph * pw];

    let mut grad_input = Tensor::zeros(&input.shape);
    let mut grad_weight = Tensor::zeros(&weight.shape);
    let mut grad_bias = Tensor::zeros(&[c_out]);

    for ni in 0..n {
        pad_image(&mut padded, &input.data[ni * c_in * h * w..][..c_in * h * w], c_in, h, w, padding);
        grad_padded.fill(T::zero());
        for co in 0..c_out {
            let go_base = ((ni * c_out + co) * oh) * ow;
            let go_plane = &grad_out.data[go_base..go_base + oh * ow];

            let mut bias_sum = T::zero();
            for &g in go_plane {
                bias_sum += g;
            }
            grad_bias.data[co] += bias_sum;

            for ci in 0..c_in {
                let plane = &padded[ci * ph * pw..][..ph * pw];
                let gplane = &mut grad_padded[ci * ph * pw..][..ph * pw];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((co * c_in + ci) * kh + ky) * kw + kx;
                        let wv = weight.data[widx];
                        let mut wsum = T::zero();
                        for oy in 0..oh {
                            let grow = &go_plane[oy * ow..][..ow];
                            let iy = oy * stride + ky;
                            if stride == 1 {
                                let irow = &plane[iy * pw + kx..][..ow];
                                for (&g, &v) in grow.iter().zip(irow) {
                                    wsum += g * v;
                                }
                                let gin_row = &mut gplane[iy * pw + kx..][..ow];
                                for (gi, &g) in gin_row.iter_mut().zip(grow) {
                                    *gi += wv * g;
                                }
                            } else {
                                for (ox, &g) in grow.iter().enumerate() {
                                    let ix = ox * stride + kx;
                                    wsum += g * plane[iy * pw + ix];
                                    gplane[iy * pw + ix] += wv * g;
                                }
                            }
                        }
                        grad_weight.data[widx] += wsum;
                    }
                }
            }
        }
        // Crop the padded gradient back to the input extents.
        for ci in 0..c_in {
            for y in 0..h {
                let src = &grad_padded[ci * ph * pw + (y + padding) * pw + padding..][..w];
                let dst = &mut grad_input.data[((ni * c_in + ci) * h + y) * w..][..w];
                dst.copy_from_slice(src);
            }
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

/// Transposed convolution geometry used by the decoder: kernel 3, stride 2,
/// padding 1, output padding 1, so each level exactly doubles `h` and `w`.
pub const UPSAMPLE_KERNEL: usize = 3;
pub const UPSAMPLE_STRIDE: usize = 2;
pub const UPSAMPLE_PADDING: usize = 1;
pub const UPSAMPLE_OUTPUT_PADDING: usize = 1;

/// Transposed 2-D convolution (the adjoint of [`conv2d_forward`] with the
/// same stride and padding, plus one row/column of output padding).
///
/// `input` is `[n, c_in, h, w]`, `weight` is `[c_in, c_out, 3, 3]`, `bias`
/// is `[c_out]`; the output is `[n, c_out, 2h, 2w]`.
pub fn conv_transpose2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c_in, h, w) = input.dims4()?;
    let (wc_in, c_out, kh, kw) = weight.dims4()?;
    if wc_in != c_in {
        return Err(Error::Shape(format!(
            "conv_transpose2d weight expects {} input channels, input has {}",
            wc_in, c_in
        )));
    }
    if bias.shape != [c_out] {
        return Err(Error::Shape(format!(
            "conv_transpose2d bias shape {:?} does not match {} output channels",
            bias.shape, c_out
        )));
    }
    if kh != UPSAMPLE_KERNEL || kw != UPSAMPLE_KERNEL {
        return Err(Error::Shape(format!(
            "conv_transpose2d uses a fixed {k}x{k} kernel, got {kh}x{kw}",
            k = UPSAMPLE_KERNEL
        )));
    }
    let (s, p) = (UPSAMPLE_STRIDE, UPSAMPLE_PADDING);
    let oh = (h - 1) * s + kh + UPSAMPLE_OUTPUT_PADDING - 2 * p;
    let ow = (w - 1) * s + kw + UPSAMPLE_OUTPUT_PADDING - 2 * p;

    let mut out = Tensor::zeros(&[n, c_out, oh, ow]);
    for ni in 0..n {
        for co in 0..c_out {
            let out_base = ((ni * c_out + co) * oh) * ow;
            out.data[out_base..out_base + oh * ow].fill(bias.data[co]);
        }
        for ci in 0..c_in {
            let in_base = ((ni * c_in + ci) * h) * w;
            for co in 0..c_out {
                let out_base = ((ni * c_out + co) * oh) * ow;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let wv = weight.data[((ci * c_out + co) * kh + ky) * kw + kx];
                        for iy in 0..h {
                            let oy = match (iy * s + ky).checked_sub(p) {
                                Some(v) if v < oh => v,
                                _ => continue,
                            };
                            let irow = &input.data[in_base + iy * w..][..w];
                            for (ix, &v) in irow.iter().enumerate() {
                                let ox = match (ix * s + kx).checked_sub(p) {
                                    Some(v) if v < ow => v,
                                    _ => continue,
                                };
                                out.data[out_base + oy * ow + ox] += wv * v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv_transpose2d_forward`].
pub fn conv_transpose2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c_in, h, w) = input.dims4()?;
    let (_, c_out, kh, kw) = weight.dims4()?;
    let (_, _, oh, ow) = grad_out.dims4()?;
    let (s, p) = (UPSAMPLE_STRIDE, UPSAMPLE_PADDING);

    let mut grad_input = Tensor::zeros(&input.shape);
    let mut grad_weight = Tensor::zeros(&weight.shape);
    let mut grad_bias = Tensor::zeros(&[c_out]);

    for ni in 0..n {
        for co in 0..c_out {
            let go_base = ((ni * c_out + co) * oh) * ow;
            let mut bias_sum = T::zero();
            for &g in &grad_out.data[go_base..go_base + oh * ow] {
                bias_sum += g;
            }
            grad_bias.data[co] += bias_sum;
        }
        for ci in 0..c_in {
            let in_base = ((ni * c_in + ci) * h) * w;
            for co in 0..c_out {
                let go_base = ((ni * c_out + co) * oh) * ow;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let widx = ((ci * c_out + co) * kh + ky) * kw + kx;
                        let wv = weight.data[widx];
                        let mut wsum = T::zero();
                        for iy in 0..h {
                            let oy = match (iy * s + ky).checked_sub(p) {
                                Some(v) if v < oh => v,
                                _ => continue,
                            };
                            for ix in 0..w {
                                let ox = match (ix * s + kx).checked_sub(p) {
                                    Some(v) if v < ow => v,
                                    _ => continue,
                                };
                                let g = grad_out.data[go_base + oy * ow + ox];
                                wsum += g * input.data[in_base + iy * w + ix];
                                grad_input.data[in_base + iy * w + ix] += wv * g;
                            }
                        }
                        grad_weight.data[widx] += wsum;
                    }
                }
            }
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

/// 2×2 max pooling with stride 2.
///
/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element. Ties go to the first element of the window in
/// row-major order, and the backward pass routes the gradient only there.
pub fn maxpool2d_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "maxpool2d requires even spatial extents, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, c, oh, ow]);
    let mut argmax = vec![0usize; out.numel()];
    for ni in 0..n {
        for ci in 0..c {
            let in_base = ((ni * c + ci) * h) * w;
            let out_base = ((ni * c + ci) * oh) * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let i00 = in_base + (2 * oy) * w + 2 * ox;
                    let mut best_idx = i00;
                    let mut best = input.data[i00];
                    for &idx in &[i00 + 1, i00 + w, i00 + w + 1] {
                        if input.data[idx] > best {
                            best = input.data[idx];
                            best_idx = idx;
                        }
                    }
                    out.data[out_base + oy * ow + ox] = best;
                    argmax[out_base + oy * ow + ox] = best_idx;
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Scatters the pooled gradient back to the recorded argmax positions.
pub fn maxpool2d_backward<T: Scalar>(
    argmax: &[usize],
    grad_out: &Tensor<T>,
    input_numel: usize,
) -> Tensor<T> {
    let mut grad_input = vec![T::zero(); input_numel];
    for (i, &g) in grad_out.data.iter().enumerate() {
        grad_input[argmax[i]] += g;
    }
    Tensor { shape: vec![], data: grad_input, grad: None, requires_grad: false }
}

/// Pixel-interval down-sampling: splits each channel into its four interval
/// sub-maps. `[n, c, h, w]` becomes `[n, 4c, h/2, w/2]` with output channel
/// `q * c + ci` holding offset `q` (row-major order `(0,0), (0,1), (1,0),
/// (1,1)`) of input channel `ci`.
pub fn pid_downsample_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Shape(format!(
            "pid_downsample requires even spatial extents, got {}x{}",
            h, w
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Tensor::zeros(&[n, 4 * c, oh, ow]);
    for ni in 0..n {
        for (q, &(dy, dx)) in PID_OFFSETS.iter().enumerate() {
            for ci in 0..c {
                let in_base = ((ni * c + ci) * h) * w;
                let out_base = ((ni * 4 * c + q * c + ci) * oh) * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        out.data[out_base + oy * ow + ox] =
                            input.data[in_base + (2 * oy + dy) * w + 2 * ox + dx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Interval offsets in emission order.
pub const PID_OFFSETS: [(usize, usize); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

/// Gradient of [`pid_downsample_forward`]: the inverse pixel permutation.
pub fn pid_downsample_backward<T: Scalar>(grad_out: &Tensor<T>, input_shape: &[usize]) -> Tensor<T> {
    let mut grad_input = Tensor::zeros(input_shape);
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let (oh, ow) = (h / 2, w / 2);
    for ni in 0..n {
        for (q, &(dy, dx)) in PID_OFFSETS.iter().enumerate() {
            for ci in 0..c {
                let in_base = ((ni * c + ci) * h) * w;
                let out_base = ((ni * 4 * c + q * c + ci) * oh) * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        grad_input.data[in_base + (2 * oy + dy) * w + 2 * ox + dx] =
                            grad_out.data[out_base + oy * ow + ox];
                    }
                }
            }
        }
    }
    grad_input
}

/// Inverse of [`pid_downsample_forward`]: reassembles `[n, 4c, h, w]` into
/// `[n, c, 2h, 2w]` bit-exactly (the operation only moves values).
pub fn pid_reassemble<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c4, h, w) = input.dims4()?;
    if c4 % 4 != 0 {
        return Err(Error::Shape(format!(
            "pid_reassemble requires a channel count divisible by 4, got {}",
            c4
        )));
    }
    let c = c4 / 4;
    let mut out = Tensor::zeros(&[n, c, 2 * h, 2 * w]);
    for ni in 0..n {
        for (q, &(dy, dx)) in PID_OFFSETS.iter().enumerate() {
            for ci in 0..c {
                let in_base = ((ni * c4 + q * c + ci) * h) * w;
                let out_base = ((ni * c + ci) * 2 * h) * 2 * w;
                for y in 0..h {
                    for x in 0..w {
                        out.data[out_base + (2 * y + dy) * 2 * w + 2 * x + dx] =
                            input.data[in_base + y * w + x];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Elementwise `max(x, 0)`.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut out = input.clone();
    out.grad = None;
    out.requires_grad = false;
    for v in &mut out.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    out
}

/// ReLU gradient; the subgradient at exactly zero is zero.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let mut grad = Tensor::zeros(&input.shape);
    for i in 0..input.data.len() {
        if input.data[i] > T::zero() {
            grad.data[i] = grad_out.data[i];
        }
    }
    grad
}

/// Concatenates tensors along the channel axis. All inputs must agree in
/// batch and spatial extents.
pub fn concat_channels_forward<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if inputs.is_empty() {
        return Err(Error::Shape("concat_channels needs at least one input".into()));
    }
    let (n, _, h, w) = inputs[0].dims4()?;
    let mut c_total = 0;
    for t in inputs {
        let (tn, tc, th, tw) = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat_channels input shape {:?} does not match [{}, _, {}, {}]",
                t.shape, n, h, w
            )));
        }
        c_total += tc;
    }
    let mut out = Tensor::zeros(&[n, c_total, h, w]);
    let plane = h * w;
    for ni in 0..n {
        let mut c_off = 0;
        for t in inputs {
            let tc = t.shape[1];
            let src = &t.data[ni * tc * plane..][..tc * plane];
            let dst = &mut out.data[(ni * c_total + c_off) * plane..][..tc * plane];
            dst.copy_from_slice(src);
            c_off += tc;
        }
    }
    Ok(out)
}

/// Splits the concatenated gradient back into per-input gradients.
pub fn concat_channels_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shapes: &[Vec<usize>],
) -> Vec<Tensor<T>> {
    let (n, c_total, h, w) = grad_out.dims4().expect("concat grad is 4-D");
    let plane = h * w;
    let mut grads: Vec<Tensor<T>> = input_shapes.iter().map(|s| Tensor::zeros(s)).collect();
    for ni in 0..n {
        let mut c_off = 0;
        for g in grads.iter_mut() {
            let tc = g.shape[1];
            let src = &grad_out.data[(ni * c_total + c_off) * plane..][..tc * plane];
            let dst = &mut g.data[ni * tc * plane..][..tc * plane];
            dst.copy_from_slice(src);
            c_off += tc;
        }
    }
    grads
}

/// Per-pixel softmax over the channel axis with max subtraction.
pub fn softmax_channels_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if c == 0 {
        return Err(Error::Shape("softmax_channels requires at least one channel".into()));
    }
    let plane = h * w;
    let mut out = Tensor::zeros(&input.shape);
    for ni in 0..n {
        let base = ni * c * plane;
        for p in 0..plane {
            let mut m = input.data[base + p];
            for ci in 1..c {
                let v = input.data[base + ci * plane + p];
                if v > m {
                    m = v;
                }
            }
            let mut denom = T::zero();
            for ci in 0..c {
                let e = (input.data[base + ci * plane + p] - m).exp();
                out.data[base + ci * plane + p] = e;
                denom += e;
            }
            for ci in 0..c {
                out.data[base + ci * plane + p] /= denom;
            }
        }
    }
    Ok(out)
}

/// Softmax gradient from the saved output: `dz_i = s_i (g_i - sum_j g_j s_j)`.
pub fn softmax_channels_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    let (n, c, h, w) = output.dims4().expect("softmax output is 4-D");
    let plane = h * w;
    let mut grad = Tensor::zeros(&output.shape);
    for ni in 0..n {
        let base = ni * c * plane;
        for p in 0..plane {
            let mut dot = T::zero();
            for ci in 0..c {
                let idx = base + ci * plane + p;
                dot += grad_out.data[idx] * output.data[idx];
            }
            for ci in 0..c {
                let idx = base + ci * plane + p;
                grad.data[idx] = output.data[idx] * (grad_out.data[idx] - dot);
            }
        }
    }
    grad
}

/// Binary cross-entropy over the foreground probability channel, averaged
/// over all pixels of the batch.
///
/// `probs` is `[n, 2, h, w]` (softmax output), `target` is a flat `[n, h, w]`
/// buffer of 0/1 labels. The foreground probability is clamped to
/// `[1e-7, 1 - 1e-7]` before the logarithms.
pub fn cross_entropy_forward<T: Scalar>(probs: &Tensor<T>, target: &[u8]) -> Result<T> {
    let (n, c, h, w) = probs.dims4()?;
    if c != 2 {
        return Err(Error::Shape(format!("cross_entropy expects 2 channels, got {}", c)));
    }
    if target.len() != n * h * w {
        return Err(Error::Shape(format!(
            "cross_entropy target has {} labels, expected {}",
            target.len(),
            n * h * w
        )));
    }
    if let Some(bad) = target.iter().find(|&&v| v > 1) {
        return Err(Error::Validation(format!(
            "cross_entropy target must be binary, found value {}",
            bad
        )));
    }
    let lo = T::from_f64(PROB_CLAMP);
    let hi = T::one() - lo;
    let plane = h * w;
    let mut total = T::zero();
    for ni in 0..n {
        let fg_base = (ni * 2 + FOREGROUND_CHANNEL) * plane;
        for p in 0..plane {
            let mut y_hat = probs.data[fg_base + p];
            if y_hat < lo {
                y_hat = lo;
            } else if y_hat > hi {
                y_hat = hi;
            }
            let term = if target[ni * plane + p] == 1 {
                y_hat.ln()
            } else {
                (T::one() - y_hat).ln()
            };
            total -= term;
        }
    }
    Ok(total / T::from_f64((n * plane) as f64))
}

/// Gradient of [`cross_entropy_forward`] with respect to `probs`.
///
/// Only the foreground channel receives gradient (the loss never reads the
/// background channel), and pixels pinned by the clamp receive zero.
pub fn cross_entropy_backward<T: Scalar>(
    probs: &Tensor<T>,
    target: &[u8],
    grad_out: T,
) -> Tensor<T> {
    let (n, _, h, w) = probs.dims4().expect("cross_entropy probs are 4-D");
    let lo = T::from_f64(PROB_CLAMP);
    let hi = T::one() - lo;
    let plane = h * w;
    let scale = grad_out / T::from_f64((n * plane) as f64);
    let mut grad = Tensor::zeros(&probs.shape);
    for ni in 0..n {
        let fg_base = (ni * 2 + FOREGROUND_CHANNEL) * plane;
        for p in 0..plane {
            let y_hat = probs.data[fg_base + p];
            if y_hat <= lo || y_hat >= hi {
                continue;
            }
            let d = if target[ni * plane + p] == 1 {
                -(T::one() / y_hat)
            } else {
                T::one() / (T::one() - y_hat)
            };
            grad.data[fg_base + p] = d * scale;
        }
    }
    grad
}

/// Binary cross-entropy evaluated directly on the logits, averaged over all
/// pixels of the batch.
///
/// `logits` is `[n, 2, h, w]` (pre-softmax), `target` is a flat `[n, h, w]`
/// buffer of 0/1 labels. Per pixel the loss is `logsumexp(z) - z[target]`
/// with the max shifted out, which equals softmax followed by
/// [`cross_entropy_forward`] exactly but needs no clamp: the loss grows
/// linearly in the logit gap instead of saturating, so confidently wrong
/// pixels keep a full-strength gradient where the probability-space
/// composition underflows to exact 0/1 and goes silent.
pub fn cross_entropy_logits_forward<T: Scalar>(logits: &Tensor<T>, target: &[u8]) -> Result<T> {
    let (n, c, h, w) = logits.dims4()?;
    if c != 2 {
        return Err(Error::Shape(format!("cross_entropy expects 2 channels, got {}", c)));
    }
    if target.len() != n * h * w {
        return Err(Error::Shape(format!(
            "cross_entropy target has {} labels, expected {}",
            target.len(),
            n * h * w
        )));
    }
    if let Some(bad) = target.iter().find(|&&v| v > 1) {
        return Err(Error::Validation(format!(
            "cross_entropy target must be binary, found value {}",
            bad
        )));
    }
    let plane = h * w;
    let mut total = T::zero();
    for ni in 0..n {
        let fg_base = (ni * 2 + FOREGROUND_CHANNEL) * plane;
        let bg_base = (ni * 2 + 1 - FOREGROUND_CHANNEL) * plane;
        for p in 0..plane {
            let fg = logits.data[fg_base + p];
            let bg = logits.data[bg_base + p];
            let m = if fg > bg { fg } else { bg };
            let lse = m + ((fg - m).exp() + (bg - m).exp()).ln();
            let zt = if target[ni * plane + p] == 1 { fg } else { bg };
            total += lse - zt;
        }
    }
    Ok(total / T::from_f64((n * plane) as f64))
}

/// Gradient of [`cross_entropy_logits_forward`]: per pixel
/// `(softmax(z) - onehot(target)) / (n h w)`, computed with the same max
/// shift. At extreme gaps this tends to a unit pull on the mislabeled
/// channel rather than vanishing.
pub fn cross_entropy_logits_backward<T: Scalar>(
    logits: &Tensor<T>,
    target: &[u8],
    grad_out: T,
) -> Tensor<T> {
    let (n, _, h, w) = logits.dims4().expect("cross_entropy logits are 4-D");
    let plane = h * w;
    let scale = grad_out / T::from_f64((n * plane) as f64);
    let mut grad = Tensor::zeros(&logits.shape);
    for ni in 0..n {
        let fg_base = (ni * 2 + FOREGROUND_CHANNEL) * plane;
        let bg_base = (ni * 2 + 1 - FOREGROUND_CHANNEL) * plane;
        for p in 0..plane {
            let fg = logits.data[fg_base + p];
            let bg = logits.data[bg_base + p];
            let m = if fg > bg { fg } else { bg };
            let e_fg = (fg - m).exp();
            let e_bg = (bg - m).exp();
            let denom = e_fg + e_bg;
            let (mut g_fg, mut g_bg) = (e_fg / denom, e_bg / denom);
            if target[ni * plane + p] == 1 {
                g_fg -= T::one();
            } else {
                g_bg -= T::one();
            }
            grad.data[fg_base + p] = g_fg * scale;
            grad.data[bg_base + p] = g_bg * scale;
        }
    }
    grad
}
