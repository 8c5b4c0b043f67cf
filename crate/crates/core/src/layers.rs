//! Pure forward/backward kernels for every layer the detector uses.
//!
//! These are plain functions over [`Tensor`] values; the gradient tape wires
//! them into an autodiff graph, and inference calls the forwards directly.
//! All loops accumulate in the tensor's own element type.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2-D convolution over `[N, C, H, W]` with weight `[OC, IC, KH, KW]`.
///
/// Output spatial dims must come out integral: `(H + 2p - KH) % stride == 0`
/// (likewise for width), otherwise this is an error rather than a silent
/// floor.
pub fn conv2d_forward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let geom = ConvGeometry::resolve(input, weight, bias, stride, padding)?;
    let [n_batch, in_ch, ..] = input.dims4()?;
    let ConvGeometry { out_ch, kh, kw, out_h, out_w, hp, wp } = geom;

    let xd = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = Tensor::zeros(vec![n_batch, out_ch, out_h, out_w]);
    let od = out.data_mut();
    let mut xpad = vec![F::zero(); in_ch * hp * wp];

    for n in 0..n_batch {
        fill_padded(xd, &mut xpad, n, in_ch, geom, padding);
        for oc in 0..out_ch {
            let b = bd[oc];
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = b;
                    for ic in 0..in_ch {
                        let xbase = ic * hp * wp + oh * stride * wp + ow * stride;
                        let wbase = (oc * in_ch + ic) * kh * kw;
                        for r in 0..kh {
                            let xrow = xbase + r * wp;
                            let wrow = wbase + r * kw;
                            for c in 0..kw {
                                acc += xpad[xrow + c] * wd[wrow + c];
                            }
                        }
                    }
                    od[((n * out_ch + oc) * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
    }
    out.debug_check_finite("conv2d_forward");
    Ok(out)
}

/// Gradients of conv2d w.r.t. input, weight, and bias.
pub fn conv2d_backward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let bias_probe = Tensor::zeros(vec![weight.shape()[0]]);
    let geom = ConvGeometry::resolve(input, weight, &bias_probe, stride, padding)?;
    let [n_batch, in_ch, h, w] = input.dims4()?;
    let ConvGeometry { out_ch, kh, kw, out_h, out_w, hp, wp } = geom;
    if grad_out.shape() != [n_batch, out_ch, out_h, out_w] {
        return Err(Error::ShapeMismatch(format!(
            "conv2d grad_out {:?} vs expected {:?}",
            grad_out.shape(),
            [n_batch, out_ch, out_h, out_w]
        )));
    }

    let xd = input.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut grad_input = Tensor::zeros(input.shape().to_vec());
    let mut grad_weight = Tensor::zeros(weight.shape().to_vec());
    let mut grad_bias = Tensor::zeros(vec![out_ch]);
    let gwd = grad_weight.data_mut();
    let gbd = grad_bias.data_mut();
    let mut xpad = vec![F::zero(); in_ch * hp * wp];
    let mut gpad = vec![F::zero(); in_ch * hp * wp];

    for n in 0..n_batch {
        fill_padded(xd, &mut xpad, n, in_ch, geom, padding);
        for v in gpad.iter_mut() {
            *v = F::zero();
        }
        for oc in 0..out_ch {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let g = gd[((n * out_ch + oc) * out_h + oh) * out_w + ow];
                    gbd[oc] += g;
                    for ic in 0..in_ch {
                        let xbase = ic * hp * wp + oh * stride * wp + ow * stride;
                        let wbase = (oc * in_ch + ic) * kh * kw;
                        for r in 0..kh {
                            let xrow = xbase + r * wp;
                            let wrow = wbase + r * kw;
                            for c in 0..kw {
                                gwd[wrow + c] += g * xpad[xrow + c];
                                gpad[xrow + c] += g * wd[wrow + c];
                            }
                        }
                    }
                }
            }
        }
        // Crop the padded gradient back to the input window.
        let gid = grad_input.data_mut();
        for ic in 0..in_ch {
            for y in 0..h {
                let src = ic * hp * wp + (y + padding) * wp + padding;
                let dst = ((n * in_ch + ic) * h + y) * w;
                for x in 0..w {
                    gid[dst + x] += gpad[src + x];
                }
            }
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

#[derive(Clone, Copy)]
struct ConvGeometry {
    out_ch: usize,
    kh: usize,
    kw: usize,
    out_h: usize,
    out_w: usize,
    hp: usize,
    wp: usize,
}

impl ConvGeometry {
    fn resolve<F: Scalar>(
        input: &Tensor<F>,
        weight: &Tensor<F>,
        bias: &Tensor<F>,
        stride: usize,
        padding: usize,
    ) -> Result<ConvGeometry> {
        let [_, in_ch, h, w] = input.dims4()?;
        let [out_ch, w_in_ch, kh, kw] = weight.dims4()?;
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        if w_in_ch != in_ch {
            return Err(Error::ShapeMismatch(format!(
                "conv2d input has {in_ch} channels but weight expects {w_in_ch}"
            )));
        }
        if bias.shape() != [out_ch] {
            return Err(Error::ShapeMismatch(format!(
                "conv2d bias {:?} vs [{out_ch}]",
                bias.shape()
            )));
        }
        let hp = h + 2 * padding;
        let wp = w + 2 * padding;
        if hp < kh || wp < kw {
            return Err(Error::ShapeMismatch(format!(
                "conv2d kernel {kh}x{kw} does not fit padded input {hp}x{wp}"
            )));
        }
        if (hp - kh) % stride != 0 || (wp - kw) % stride != 0 {
            return Err(Error::ShapeMismatch(format!(
                "conv2d output size is not integral for input {h}x{w}, kernel {kh}x{kw}, \
                 stride {stride}, padding {padding}"
            )));
        }
        Ok(ConvGeometry {
            out_ch,
            kh,
            kw,
            out_h: (hp - kh) / stride + 1,
            out_w: (wp - kw) / stride + 1,
            hp,
            wp,
        })
    }
}

fn fill_padded<F: Scalar>(
    input: &[F],
    xpad: &mut [F],
    n: usize,
    in_ch: usize,
    geom: ConvGeometry,
    padding: usize,
) {
    let ConvGeometry { hp, wp, .. } = geom;
    let h = hp - 2 * padding;
    let w = wp - 2 * padding;
    for v in xpad.iter_mut() {
        *v = F::zero();
    }
    for ic in 0..in_ch {
        for y in 0..h {
            let src = ((n * in_ch + ic) * h + y) * w;
            let dst = ic * hp * wp + (y + padding) * wp + padding;
            xpad[dst..dst + w].copy_from_slice(&input[src..src + w]);
        }
    }
}

/// Saved context from a training-mode batchnorm forward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<F: Scalar> {
    pub normalized: Tensor<F>,
    pub inv_std: Vec<F>,
    pub mean: Vec<F>,
    /// Biased (divide-by-m) per-channel variance of the batch.
    pub variance: Vec<F>,
    pub group_size: usize,
}

/// Training-mode batch normalization over `[N, C, H, W]`.
///
/// Normalizes each channel by the batch statistics; the cache carries what
/// the backward pass and the running-stat update need. Requires at least two
/// values per channel so the variance is defined.
pub fn batchnorm2d_train<F: Scalar>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    eps: F,
) -> Result<(Tensor<F>, BatchNormCache<F>)> {
    let [n, c, h, w] = input.dims4()?;
    check_bn_params(c, gamma, beta)?;
    let m = n * h * w;
    if m < 2 {
        return Err(Error::InvalidArgument(
            "batchnorm training mode needs at least 2 values per channel".into(),
        ));
    }
    let m_f = F::from_f64(m as f64);
    let xd = input.data();
    let mut mean = vec![F::zero(); c];
    let mut variance = vec![F::zero(); c];
    let mut inv_std = vec![F::zero(); c];

    for ch in 0..c {
        let mut sum = F::zero();
        for_each_channel_value(xd, n, c, h, w, ch, |x| sum += x);
        let mu = sum / m_f;
        let mut sq = F::zero();
        for_each_channel_value(xd, n, c, h, w, ch, |x| {
            let d = x - mu;
            sq += d * d;
        });
        mean[ch] = mu;
        variance[ch] = sq / m_f;
        inv_std[ch] = F::one() / (variance[ch] + eps).sqrt();
    }

    let mut normalized = Tensor::zeros(input.shape().to_vec());
    let mut out = Tensor::zeros(input.shape().to_vec());
    {
        let nd = normalized.data_mut();
        let od = out.data_mut();
        let gd = gamma.data();
        let bd = beta.data();
        for idx in 0..xd.len() {
            let ch = (idx / (h * w)) % c;
            let xhat = (xd[idx] - mean[ch]) * inv_std[ch];
            nd[idx] = xhat;
            od[idx] = gd[ch] * xhat + bd[ch];
        }
    }
    out.debug_check_finite("batchnorm2d_train");
    Ok((out, BatchNormCache { normalized, inv_std, mean, variance, group_size: m }))
}

/// Inference-mode batch normalization using running statistics.
pub fn batchnorm2d_infer<F: Scalar>(
    input: &Tensor<F>,
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running_mean: &Tensor<F>,
    running_var: &Tensor<F>,
    eps: F,
) -> Result<Tensor<F>> {
    let [_, c, h, w] = input.dims4()?;
    check_bn_params(c, gamma, beta)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm running stats {:?}/{:?} vs [{c}]",
            running_mean.shape(),
            running_var.shape()
        )));
    }
    let (scale, shift) = bn_inference_affine(gamma, beta, running_mean, running_var, eps)?;
    let xd = input.data();
    let mut out = Tensor::zeros(input.shape().to_vec());
    let od = out.data_mut();
    for idx in 0..xd.len() {
        let ch = (idx / (h * w)) % c;
        od[idx] = xd[idx] * scale[ch] + shift[ch];
    }
    out.debug_check_finite("batchnorm2d_infer");
    Ok(out)
}

/// Per-channel `(scale, shift)` equivalent of inference-mode batchnorm.
pub fn bn_inference_affine<F: Scalar>(
    gamma: &Tensor<F>,
    beta: &Tensor<F>,
    running_mean: &Tensor<F>,
    running_var: &Tensor<F>,
    eps: F,
) -> Result<(Vec<F>, Vec<F>)> {
    let c = gamma.numel();
    let mut scale = vec![F::zero(); c];
    let mut shift = vec![F::zero(); c];
    for ch in 0..c {
        let rv = running_var.data()[ch];
        if rv < F::zero() {
            return Err(Error::InvalidArgument(format!(
                "running_var[{ch}] is negative ({rv})"
            )));
        }
        scale[ch] = gamma.data()[ch] / (rv + eps).sqrt();
        shift[ch] = beta.data()[ch] - running_mean.data()[ch] * scale[ch];
    }
    Ok((scale, shift))
}

/// Gradients of training-mode batchnorm w.r.t. input, gamma, and beta.
pub fn batchnorm2d_backward<F: Scalar>(
    cache: &BatchNormCache<F>,
    gamma: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let [_, c, h, w] = cache.normalized.dims4()?;
    if grad_out.shape() != cache.normalized.shape() {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm grad_out {:?} vs {:?}",
            grad_out.shape(),
            cache.normalized.shape()
        )));
    }
    let m_f = F::from_f64(cache.group_size as f64);
    let gd = grad_out.data();
    let nd = cache.normalized.data();

    let mut sum_g = vec![F::zero(); c];
    let mut sum_gx = vec![F::zero(); c];
    for idx in 0..gd.len() {
        let ch = (idx / (h * w)) % c;
        sum_g[ch] += gd[idx];
        sum_gx[ch] += gd[idx] * nd[idx];
    }

    let mut grad_input = Tensor::zeros(cache.normalized.shape().to_vec());
    {
        let gid = grad_input.data_mut();
        for idx in 0..gd.len() {
            let ch = (idx / (h * w)) % c;
            let coeff = gamma.data()[ch] * cache.inv_std[ch];
            gid[idx] = coeff * (gd[idx] - sum_g[ch] / m_f - nd[idx] * sum_gx[ch] / m_f);
        }
    }
    let grad_gamma = Tensor::new(vec![c], sum_gx)?;
    let grad_beta = Tensor::new(vec![c], sum_g)?;
    Ok((grad_input, grad_gamma, grad_beta))
}

/// Folds batch statistics into the running mean/variance buffers.
///
/// The running variance uses the unbiased estimate, `var * m / (m - 1)`.
pub fn batchnorm2d_update_running<F: Scalar>(
    mean: &[F],
    variance: &[F],
    group_size: usize,
    running_mean: &mut Tensor<F>,
    running_var: &mut Tensor<F>,
    momentum: F,
) {
    let m = group_size as f64;
    let correction = F::from_f64(m / (m - 1.0));
    let keep = F::one() - momentum;
    for (rm, &mu) in running_mean.data_mut().iter_mut().zip(mean) {
        *rm = keep * *rm + momentum * mu;
    }
    for (rv, &var) in running_var.data_mut().iter_mut().zip(variance) {
        *rv = keep * *rv + momentum * var * correction;
    }
}

fn check_bn_params<F: Scalar>(c: usize, gamma: &Tensor<F>, beta: &Tensor<F>) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::ShapeMismatch(format!(
            "batchnorm params gamma {:?} / beta {:?} vs input channels {c}",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

fn for_each_channel_value<F: Scalar>(
    data: &[F],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    ch: usize,
    mut f: impl FnMut(F),
) {
    let plane = h * w;
    for b in 0..n {
        let base = (b * c + ch) * plane;
        for &x in &data[base..base + plane] {
            f(x);
        }
    }
}

/// Max pooling over `[N, C, H, W]`. Returns the pooled tensor and the flat
/// input index of each window's maximum (first occurrence in scan order, so
/// tie handling is deterministic).
pub fn maxpool2d_forward<F: Scalar>(
    input: &Tensor<F>,
    size: usize,
    stride: usize,
) -> Result<(Tensor<F>, Vec<usize>)> {
    let [n, c, h, w] = input.dims4()?;
    if size == 0 || stride == 0 {
        return Err(Error::InvalidArgument("maxpool size and stride must be >= 1".into()));
    }
    if h < size || w < size || (h - size) % stride != 0 || (w - size) % stride != 0 {
        return Err(Error::ShapeMismatch(format!(
            "maxpool {size}x{size}/{stride} does not tile input {h}x{w}"
        )));
    }
    let out_h = (h - size) / stride + 1;
    let out_w = (w - size) / stride + 1;
    let xd = input.data();
    let mut out = Tensor::zeros(vec![n, c, out_h, out_w]);
    let mut argmax = vec![0usize; out.numel()];
    {
        let od = out.data_mut();
        for b in 0..n {
            for ch in 0..c {
                let plane = ((b * c) + ch) * h * w;
                for oh in 0..out_h {
                    for ow in 0..out_w {
                        let mut best_idx = plane + oh * stride * w + ow * stride;
                        let mut best = xd[best_idx];
                        for r in 0..size {
                            let row = plane + (oh * stride + r) * w + ow * stride;
                            for col in 0..size {
                                let idx = row + col;
                                if xd[idx] > best {
                                    best = xd[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        let oidx = ((b * c + ch) * out_h + oh) * out_w + ow;
                        od[oidx] = best;
                        argmax[oidx] = best_idx;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

/// Routes pooled gradients back to each window's argmax cell.
pub fn maxpool2d_backward<F: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    if grad_out.numel() != argmax.len() {
        return Err(Error::ShapeMismatch(format!(
            "maxpool grad_out has {} elements, argmax has {}",
            grad_out.numel(),
            argmax.len()
        )));
    }
    let mut grad_input = Tensor::zeros(input_shape.to_vec());
    let gid = grad_input.data_mut();
    for (&src, &g) in argmax.iter().zip(grad_out.data()) {
        gid[src] += g;
    }
    Ok(grad_input)
}

/// Fully connected layer: `out = input . weight^T + bias` with input
/// `[N, IN]`, weight `[OUT, IN]`, bias `[OUT]`.
pub fn linear_forward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
) -> Result<Tensor<F>> {
    let [n, in_dim] = input.dims2()?;
    let [out_dim, w_in] = weight.dims2()?;
    if w_in != in_dim {
        return Err(Error::ShapeMismatch(format!(
            "linear input width {in_dim} vs weight columns {w_in}"
        )));
    }
    if bias.shape() != [out_dim] {
        return Err(Error::ShapeMismatch(format!(
            "linear bias {:?} vs [{out_dim}]",
            bias.shape()
        )));
    }
    let xd = input.data();
    let wd = weight.data();
    let bd = bias.data();
    let mut out = Tensor::zeros(vec![n, out_dim]);
    let od = out.data_mut();
    for row in 0..n {
        let xrow = &xd[row * in_dim..(row + 1) * in_dim];
        for o in 0..out_dim {
            let wrow = &wd[o * in_dim..(o + 1) * in_dim];
            let mut acc = bd[o];
            for i in 0..in_dim {
                acc += xrow[i] * wrow[i];
            }
            od[row * out_dim + o] = acc;
        }
    }
    out.debug_check_finite("linear_forward");
    Ok(out)
}

/// Gradients of the linear layer w.r.t. input, weight, and bias.
pub fn linear_backward<F: Scalar>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<(Tensor<F>, Tensor<F>, Tensor<F>)> {
    let [n, in_dim] = input.dims2()?;
    let [out_dim, _] = weight.dims2()?;
    if grad_out.shape() != [n, out_dim] {
        return Err(Error::ShapeMismatch(format!(
            "linear grad_out {:?} vs [{n}, {out_dim}]",
            grad_out.shape()
        )));
    }
    let xd = input.data();
    let wd = weight.data();
    let gd = grad_out.data();
    let mut grad_input = Tensor::zeros(vec![n, in_dim]);
    let mut grad_weight = Tensor::zeros(vec![out_dim, in_dim]);
    let mut grad_bias = Tensor::zeros(vec![out_dim]);
    {
        let gid = grad_input.data_mut();
        let gwd = grad_weight.data_mut();
        let gbd = grad_bias.data_mut();
        for row in 0..n {
            for o in 0..out_dim {
                let g = gd[row * out_dim + o];
                gbd[o] += g;
                let wrow = &wd[o * in_dim..(o + 1) * in_dim];
                let xrow = &xd[row * in_dim..(row + 1) * in_dim];
                let girow = &mut gid[row * in_dim..(row + 1) * in_dim];
                for i in 0..in_dim {
                    girow[i] += g * wrow[i];
                }
                let gwrow = &mut gwd[o * in_dim..(o + 1) * in_dim];
                for i in 0..in_dim {
                    gwrow[i] += g * xrow[i];
                }
            }
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

/// Elementwise `max(0, x)`.
pub fn relu_forward<F: Scalar>(input: &Tensor<F>) -> Tensor<F> {
    input.map(|x| if x > F::zero() { x } else { F::zero() })
}

/// ReLU gradient: 1 for x > 0, 0 for x <= 0 (the kink at 0 takes 0).
pub fn relu_backward<F: Scalar>(input: &Tensor<F>, grad_out: &Tensor<F>) -> Result<Tensor<F>> {
    input.zip(grad_out, |x, g| if x > F::zero() { g } else { F::zero() })
}

/// Row-wise softmax over `[N, K]`, computed with max subtraction so any
/// finite logits stay in range.
pub fn softmax<F: Scalar>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    let [n, k] = logits.dims2()?;
    if k == 0 {
        return Err(Error::InvalidArgument("softmax needs at least one class".into()));
    }
    let xd = logits.data();
    let mut out = Tensor::zeros(vec![n, k]);
    let od = out.data_mut();
    for row in 0..n {
        let slice = &xd[row * k..(row + 1) * k];
        let mx = slice.iter().fold(slice[0], |m, &x| m.max(x));
        let mut denom = F::zero();
        for (i, &x) in slice.iter().enumerate() {
            let e = (x - mx).exp();
            od[row * k + i] = e;
            denom += e;
        }
        for i in 0..k {
            od[row * k + i] /= denom;
        }
    }
    out.debug_check_finite("softmax");
    Ok(out)
}

/// Softmax Jacobian-vector product: `dx_i = s_i * (g_i - sum_j g_j s_j)`.
pub fn softmax_backward<F: Scalar>(
    softmax_out: &Tensor<F>,
    grad_out: &Tensor<F>,
) -> Result<Tensor<F>> {
    let [n, k] = softmax_out.dims2()?;
    if grad_out.shape() != softmax_out.shape() {
        return Err(Error::ShapeMismatch(format!(
            "softmax grad_out {:?} vs {:?}",
            grad_out.shape(),
            softmax_out.shape()
        )));
    }
    let sd = softmax_out.data();
    let gd = grad_out.data();
    let mut grad_input = Tensor::zeros(vec![n, k]);
    let gid = grad_input.data_mut();
    for row in 0..n {
        let base = row * k;
        let mut dot = F::zero();
        for i in 0..k {
            dot += gd[base + i] * sd[base + i];
        }
        for i in 0..k {
            gid[base + i] = sd[base + i] * (gd[base + i] - dot);
        }
    }
    Ok(grad_input)
}

/// Mean negative log-likelihood of the labels under row-wise softmax.
///
/// Returns the scalar loss and the softmax probabilities (which the backward
/// pass reuses: the logit gradient is `(softmax - onehot) / N`).
pub fn cross_entropy_forward<F: Scalar>(
    logits: &Tensor<F>,
    labels: &[usize],
) -> Result<(Tensor<F>, Tensor<F>)> {
    let [n, k] = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for batch of {n}",
            labels.len()
        )));
    }
    for &y in labels {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
    }
    let probs = softmax(logits)?;
    let xd = logits.data();
    let mut total = F::zero();
    for (row, &y) in labels.iter().enumerate() {
        let slice = &xd[row * k..(row + 1) * k];
        let mx = slice.iter().fold(slice[0], |m, &x| m.max(x));
        let mut denom = F::zero();
        for &x in slice {
            denom += (x - mx).exp();
        }
        // -log softmax[y] in a numerically stable form.
        total += denom.ln() - (slice[y] - mx);
    }
    let loss = Tensor::scalar(total / F::from_f64(n as f64));
    loss.debug_check_finite("cross_entropy");
    Ok((loss, probs))
}

/// Logit gradient of the mean cross-entropy: `upstream * (softmax - onehot) / N`.
pub fn cross_entropy_backward<F: Scalar>(
    probs: &Tensor<F>,
    labels: &[usize],
    upstream: F,
) -> Result<Tensor<F>> {
    let [n, k] = probs.dims2()?;
    let scale = upstream / F::from_f64(n as f64);
    let mut grad = Tensor::zeros(vec![n, k]);
    let gd = grad.data_mut();
    let pd = probs.data();
    for (row, &y) in labels.iter().enumerate() {
        for i in 0..k {
            let onehot = if i == y { F::one() } else { F::zero() };
            gd[row * k + i] = scale * (pd[row * k + i] - onehot);
        }
    }
    Ok(grad)
}
