//! The glitch detector network: ten 3x3 conv + batchnorm + ReLU stages with
//! five interleaved max-pools, then four fully connected layers down to the
//! two class logits. Softmax is applied by the loss and by `predict`, never
//! inside the stack.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageRGB;
use crate::layers;
use crate::rng::{derive_seed, DetRng};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const CONV_KERNEL: usize = 3;
pub const CONV_STRIDE: usize = 1;
pub const CONV_PADDING: usize = 1;
pub const POOL_SIZE: usize = 2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Exact scale factor for desk-sized variants of the architecture.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rational {
    pub num: u32,
    pub den: u32,
}

impl Rational {
    pub const ONE: Rational = Rational { num: 1, den: 1 };

    pub fn apply(&self, value: usize) -> usize {
        ((value * self.num as usize) / self.den as usize).max(1)
    }
}

fn default_input_width() -> u32 {
    512
}
fn default_input_height() -> u32 {
    256
}
fn default_num_classes() -> usize {
    2
}
fn default_conv_channels() -> Vec<usize> {
    vec![16, 16, 16, 16, 32, 32, 64, 64, 128, 128]
}
fn default_pool_after() -> Vec<usize> {
    vec![2, 4, 6, 8, 10]
}
fn default_fc_dims() -> Vec<usize> {
    vec![1024, 256, 64, 2]
}
fn default_channel_scale() -> Rational {
    Rational::ONE
}

/// Architecture description. All fields have defaults, so a JSON config may
/// override any subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_input_width")]
    pub input_width: u32,
    #[serde(default = "default_input_height")]
    pub input_height: u32,
    #[serde(default = "default_num_classes")]
    pub num_classes: usize,
    #[serde(default = "default_conv_channels")]
    pub conv_channels: Vec<usize>,
    /// 1-based conv indices followed by a 2x2/2 max-pool.
    #[serde(default = "default_pool_after")]
    pub pool_after: Vec<usize>,
    #[serde(default = "default_fc_dims")]
    pub fc_dims: Vec<usize>,
    /// Applied to `conv_channels` only; FC widths are kept as configured.
    #[serde(default = "default_channel_scale")]
    pub channel_scale: Rational,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_width: default_input_width(),
            input_height: default_input_height(),
            num_classes: default_num_classes(),
            conv_channels: default_conv_channels(),
            pool_after: default_pool_after(),
            fc_dims: default_fc_dims(),
            channel_scale: default_channel_scale(),
        }
    }
}

impl ModelConfig {
    /// Reduced variant for fast CPU experiments: smaller input, conv widths
    /// scaled down, FC widths untouched, topology identical.
    pub fn desk_scale(input_width: u32, input_height: u32, scale: Rational) -> Self {
        let mut cfg = ModelConfig::default();
        cfg.input_width = input_width;
        cfg.input_height = input_height;
        cfg.channel_scale = scale;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != 10 {
            return Err(Error::InvalidArgument(format!(
                "expected 10 conv layers, got {}",
                self.conv_channels.len()
            )));
        }
        if self.fc_dims.len() != 4 {
            return Err(Error::InvalidArgument(format!(
                "expected 4 fully connected layers, got {}",
                self.fc_dims.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if *self.fc_dims.last().unwrap() != self.num_classes {
            return Err(Error::InvalidArgument(format!(
                "last FC width {} must equal num_classes {}",
                self.fc_dims.last().unwrap(),
                self.num_classes
            )));
        }
        if self.channel_scale.num == 0 || self.channel_scale.den == 0 {
            return Err(Error::InvalidArgument("channel_scale must be positive".into()));
        }
        let pools = self.pool_after.len();
        let mut prev = 0;
        for &p in &self.pool_after {
            if p <= prev || p > self.conv_channels.len() {
                return Err(Error::InvalidArgument(format!(
                    "pool_after must be strictly increasing conv indices in 1..=10, got {:?}",
                    self.pool_after
                )));
            }
            prev = p;
        }
        let factor = 1u32 << pools;
        if self.input_width == 0
            || self.input_height == 0
            || self.input_width % factor != 0
            || self.input_height % factor != 0
        {
            return Err(Error::InvalidArgument(format!(
                "input {}x{} must be divisible by 2^{pools}",
                self.input_width, self.input_height
            )));
        }
        Ok(())
    }

    pub fn scaled_channels(&self) -> Vec<usize> {
        self.conv_channels.iter().map(|&c| self.channel_scale.apply(c)).collect()
    }

    /// Spatial dims after all pools.
    pub fn final_spatial(&self) -> (usize, usize) {
        let factor = 1usize << self.pool_after.len();
        (self.input_height as usize / factor, self.input_width as usize / factor)
    }

    pub fn flatten_size(&self) -> usize {
        let (h, w) = self.final_spatial();
        let channels = *self.scaled_channels().last().unwrap();
        channels * h * w
    }

    /// Every tensor the architecture owns, in canonical order, with its
    /// shape. Trainable parameters and batchnorm running buffers alike.
    pub fn expected_tensors(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let channels = self.scaled_channels();
        let mut in_ch = 3usize;
        for (i, &out_ch) in channels.iter().enumerate() {
            let n = i + 1;
            out.push((format!("conv{n}.weight"), vec![out_ch, in_ch, CONV_KERNEL, CONV_KERNEL]));
            out.push((format!("conv{n}.bias"), vec![out_ch]));
            out.push((format!("bn{n}.gamma"), vec![out_ch]));
            out.push((format!("bn{n}.beta"), vec![out_ch]));
            out.push((format!("bn{n}.running_mean"), vec![out_ch]));
            out.push((format!("bn{n}.running_var"), vec![out_ch]));
            in_ch = out_ch;
        }
        let mut in_dim = self.flatten_size();
        for (j, &out_dim) in self.fc_dims.iter().enumerate() {
            let n = j + 1;
            out.push((format!("fc{n}.weight"), vec![out_dim, in_dim]));
            out.push((format!("fc{n}.bias"), vec![out_dim]));
            in_dim = out_dim;
        }
        out
    }

    /// Trainable parameter count (weights, biases, batchnorm gamma/beta;
    /// running statistics are buffers, not parameters).
    pub fn num_parameters(&self) -> usize {
        self.expected_tensors()
            .iter()
            .filter(|(name, _)| !name.contains("running_"))
            .map(|(_, shape)| shape.iter().product::<usize>())
            .sum()
    }
}

#[derive(Clone, Debug)]
pub struct ConvBlock<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
    pub gamma: Tensor<F>,
    pub beta: Tensor<F>,
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
}

#[derive(Clone, Debug)]
pub struct FcLayer<F: Scalar> {
    pub weight: Tensor<F>,
    pub bias: Tensor<F>,
}

/// A built network with its parameters.
#[derive(Clone, Debug)]
pub struct Model<F: Scalar = f32> {
    config: ModelConfig,
    pub blocks: Vec<ConvBlock<F>>,
    pub fcs: Vec<FcLayer<F>>,
}

/// Handles produced by a training-mode forward pass on a tape.
pub struct TrainGraph {
    pub logits: Var,
    /// Leaves for the trainable parameters, in [`Model::trainable_shapes`]
    /// order.
    pub params: Vec<Var>,
}

impl<F: Scalar> Model<F> {
    /// Initializes the network: Kaiming-normal conv and hidden FC weights,
    /// zero biases, gamma 1 / beta 0. The classifier layer starts at an
    /// eighth of its Kaiming scale, which keeps the untrained loss at ln 2
    /// to within a few hundredths while avoiding the dead saddle an exactly
    /// zero head creates.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Model<F>> {
        config.validate()?;
        let mut rng = DetRng::new(derive_seed(seed, 0x1217));
        let channels = config.scaled_channels();
        let mut blocks = Vec::with_capacity(channels.len());
        let mut in_ch = 3usize;
        for &out_ch in &channels {
            let fan_in = (in_ch * CONV_KERNEL * CONV_KERNEL) as f64;
            let std = (2.0 / fan_in).sqrt();
            blocks.push(ConvBlock {
                weight: Tensor::randn(
                    vec![out_ch, in_ch, CONV_KERNEL, CONV_KERNEL],
                    std,
                    &mut rng,
                ),
                bias: Tensor::zeros(vec![out_ch]),
                gamma: Tensor::full(vec![out_ch], F::one()),
                beta: Tensor::zeros(vec![out_ch]),
                running_mean: Tensor::zeros(vec![out_ch]),
                running_var: Tensor::full(vec![out_ch], F::one()),
            });
            in_ch = out_ch;
        }
        let mut fcs = Vec::with_capacity(config.fc_dims.len());
        let mut in_dim = config.flatten_size();
        let last = config.fc_dims.len() - 1;
        for (j, &out_dim) in config.fc_dims.iter().enumerate() {
            let mut std = (2.0 / in_dim as f64).sqrt();
            if j == last {
                std /= 8.0;
            }
            fcs.push(FcLayer {
                weight: Tensor::randn(vec![out_dim, in_dim], std, &mut rng),
                bias: Tensor::zeros(vec![out_dim]),
            });
            in_dim = out_dim;
        }
        Ok(Model { config, blocks, fcs })
    }

    /// Reassembles a model from named tensors (checkpoint loading). Every
    /// expected tensor must be present exactly once with the right shape.
    pub fn from_named_tensors(
        config: ModelConfig,
        mut tensors: std::collections::HashMap<String, Tensor<F>>,
    ) -> Result<Model<F>> {
        config.validate()?;
        let expected: std::collections::HashMap<String, Vec<usize>> =
            config.expected_tensors().into_iter().collect();
        let mut take = |name: String| -> Result<Tensor<F>> {
            let shape = &expected[&name];
            let t = tensors
                .remove(&name)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ModelMismatch(format!(
                    "tensor {name} has shape {:?}, config expects {:?}",
                    t.shape(),
                    shape
                )));
            }
            Ok(t)
        };
        let channels = config.scaled_channels();
        let mut blocks = Vec::with_capacity(channels.len());
        for i in 0..channels.len() {
            let n = i + 1;
            blocks.push(ConvBlock {
                weight: take(format!("conv{n}.weight"))?,
                bias: take(format!("conv{n}.bias"))?,
                gamma: take(format!("bn{n}.gamma"))?,
                beta: take(format!("bn{n}.beta"))?,
                running_mean: take(format!("bn{n}.running_mean"))?,
                running_var: take(format!("bn{n}.running_var"))?,
            });
        }
        let mut fcs = Vec::with_capacity(config.fc_dims.len());
        for j in 0..config.fc_dims.len() {
            let n = j + 1;
            fcs.push(FcLayer {
                weight: take(format!("fc{n}.weight"))?,
                bias: take(format!("fc{n}.bias"))?,
            });
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(Error::CorruptCheckpoint(format!("unexpected tensor {extra}")));
        }
        Ok(Model { config, blocks, fcs })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// All tensors in canonical order, for serialization.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, b) in self.blocks.iter().enumerate() {
            let n = i + 1;
            out.push((format!("conv{n}.weight"), &b.weight));
            out.push((format!("conv{n}.bias"), &b.bias));
            out.push((format!("bn{n}.gamma"), &b.gamma));
            out.push((format!("bn{n}.beta"), &b.beta));
            out.push((format!("bn{n}.running_mean"), &b.running_mean));
            out.push((format!("bn{n}.running_var"), &b.running_var));
        }
        for (j, fc) in self.fcs.iter().enumerate() {
            let n = j + 1;
            out.push((format!("fc{n}.weight"), &fc.weight));
            out.push((format!("fc{n}.bias"), &fc.bias));
        }
        out
    }

    pub fn trainable_shapes(&self) -> Vec<Vec<usize>> {
        self.trainable().iter().map(|t| t.shape().to_vec()).collect()
    }

    /// Trainable tensors in canonical order (excludes running stats).
    pub fn trainable(&self) -> Vec<&Tensor<F>> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(&b.weight);
            out.push(&b.bias);
            out.push(&b.gamma);
            out.push(&b.beta);
        }
        for fc in &self.fcs {
            out.push(&fc.weight);
            out.push(&fc.bias);
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut Tensor<F>> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(&mut b.weight);
            out.push(&mut b.bias);
            out.push(&mut b.gamma);
            out.push(&mut b.beta);
        }
        for fc in &mut self.fcs {
            out.push(&mut fc.weight);
            out.push(&mut fc.bias);
        }
        out
    }

    fn pools_after(&self) -> impl Fn(usize) -> bool + '_ {
        move |conv_index_1based| self.config.pool_after.contains(&conv_index_1based)
    }

    /// Inference forward pass (batchnorm running statistics). Pure.
    pub fn forward_infer(&self, input: &Tensor<F>) -> Result<Tensor<F>> {
        self.check_input(input)?;
        let eps = F::from_f64(BN_EPS);
        let pool_here = self.pools_after();
        let mut x = input.clone();
        for (i, b) in self.blocks.iter().enumerate() {
            x = layers::conv2d_forward(&x, &b.weight, &b.bias, CONV_STRIDE, CONV_PADDING)?;
            x = layers::batchnorm2d_infer(
                &x,
                &b.gamma,
                &b.beta,
                &b.running_mean,
                &b.running_var,
                eps,
            )?;
            x = layers::relu_forward(&x);
            if pool_here(i + 1) {
                let (pooled, _) = layers::maxpool2d_forward(&x, POOL_SIZE, POOL_SIZE)?;
                x = pooled;
            }
        }
        let [n, c, h, w] = x.dims4()?;
        x = x.reshaped(vec![n, c * h * w])?;
        let last = self.fcs.len() - 1;
        for (j, fc) in self.fcs.iter().enumerate() {
            x = layers::linear_forward(&x, &fc.weight, &fc.bias)?;
            if j < last {
                x = layers::relu_forward(&x);
            }
        }
        Ok(x)
    }

    /// Training forward pass on a tape: batch statistics in every batchnorm,
    /// running buffers updated in place, every trainable parameter a leaf.
    pub fn forward_train(&mut self, tape: &mut Tape<F>, input: Tensor<F>) -> Result<TrainGraph> {
        self.check_input(&input)?;
        let eps = F::from_f64(BN_EPS);
        let momentum = F::from_f64(BN_MOMENTUM);
        let mut params = Vec::new();
        let mut x = tape.leaf(input)?;
        let pool_after = self.config.pool_after.clone();
        let n_blocks = self.blocks.len();
        for i in 0..n_blocks {
            let (w, bias, gamma, beta) = {
                let b = &self.blocks[i];
                (
                    tape.leaf(b.weight.clone().with_requires_grad(true))?,
                    tape.leaf(b.bias.clone().with_requires_grad(true))?,
                    tape.leaf(b.gamma.clone().with_requires_grad(true))?,
                    tape.leaf(b.beta.clone().with_requires_grad(true))?,
                )
            };
            params.extend([w, bias, gamma, beta]);
            x = tape.conv2d(x, w, bias, CONV_STRIDE, CONV_PADDING)?;
            let (bn_out, stats) = tape.batchnorm_train(x, gamma, beta, eps)?;
            let block = &mut self.blocks[i];
            layers::batchnorm2d_update_running(
                &stats.mean,
                &stats.variance,
                stats.group_size,
                &mut block.running_mean,
                &mut block.running_var,
                momentum,
            );
            x = tape.relu(bn_out)?;
            if pool_after.contains(&(i + 1)) {
                x = tape.maxpool2d(x, POOL_SIZE, POOL_SIZE)?;
            }
        }
        x = tape.flatten(x)?;
        let last = self.fcs.len() - 1;
        for (j, fc) in self.fcs.iter().enumerate() {
            let w = tape.leaf(fc.weight.clone().with_requires_grad(true))?;
            let b = tape.leaf(fc.bias.clone().with_requires_grad(true))?;
            params.extend([w, b]);
            x = tape.linear(x, w, b)?;
            if j < last {
                x = tape.relu(x)?;
            }
        }
        Ok(TrainGraph { logits: x, params })
    }

    /// Inference-mode forward on a tape, for gradients w.r.t. the input
    /// (saliency). Parameters are folded constants; only the input leaf
    /// participates in the gradient.
    pub fn forward_input_grad(&self, tape: &mut Tape<F>, input: Tensor<F>) -> Result<(Var, Var)> {
        self.check_input(&input)?;
        let eps = F::from_f64(BN_EPS);
        let input_var = tape.leaf(input.with_requires_grad(true))?;
        let pool_here: Vec<usize> = self.config.pool_after.clone();
        let mut x = input_var;
        for (i, b) in self.blocks.iter().enumerate() {
            let w = tape.leaf(b.weight.clone())?;
            let bias = tape.leaf(b.bias.clone())?;
            x = tape.conv2d(x, w, bias, CONV_STRIDE, CONV_PADDING)?;
            let (scale, shift) = layers::bn_inference_affine(
                &b.gamma,
                &b.beta,
                &b.running_mean,
                &b.running_var,
                eps,
            )?;
            x = tape.batchnorm_affine(x, scale, shift)?;
            x = tape.relu(x)?;
            if pool_here.contains(&(i + 1)) {
                x = tape.maxpool2d(x, POOL_SIZE, POOL_SIZE)?;
            }
        }
        x = tape.flatten(x)?;
        let last = self.fcs.len() - 1;
        for (j, fc) in self.fcs.iter().enumerate() {
            let w = tape.leaf(fc.weight.clone())?;
            let b = tape.leaf(fc.bias.clone())?;
            x = tape.linear(x, w, b)?;
            if j < last {
                x = tape.relu(x)?;
            }
        }
        Ok((x, input_var))
    }

    /// Classifies one screenshot. Returns the label and the softmax
    /// probabilities; exact ties resolve to normal.
    pub fn predict(&self, image: &ImageRGB) -> Result<(crate::manifest::Label, Vec<F>)> {
        let input = preprocess::<F>(&self.config, image)?;
        let logits = self.forward_infer(&input)?;
        let probs = layers::softmax(&logits)?;
        let row = probs.data();
        let mut best = 0usize;
        for k in 1..row.len() {
            if row[k] > row[best] {
                best = k;
            }
        }
        Ok((crate::manifest::Label::from_class_index(best), row.to_vec()))
    }

    fn check_input(&self, input: &Tensor<F>) -> Result<()> {
        let [_, c, h, w] = input.dims4()?;
        let want_h = self.config.input_height as usize;
        let want_w = self.config.input_width as usize;
        if c != 3 || h != want_h || w != want_w {
            return Err(Error::ShapeMismatch(format!(
                "model expects [N, 3, {want_h}, {want_w}], got {:?}",
                input.shape()
            )));
        }
        Ok(())
    }
}

/// Screenshot to network input: vertical images rotate 90 degrees clockwise
/// to horizontal, then a bilinear stretch-resize to the configured size, and
/// channels scale to `[0, 1]`. Output is `[1, 3, H, W]`.
pub fn preprocess<F: Scalar>(config: &ModelConfig, image: &ImageRGB) -> Result<Tensor<F>> {
    let oriented;
    let img = if image.height() > image.width() {
        oriented = image.rotate90_cw();
        &oriented
    } else {
        image
    };
    let resized = img.resize_bilinear(config.input_width, config.input_height)?;
    let (w, h) = (resized.width() as usize, resized.height() as usize);
    let mut data = vec![F::zero(); 3 * h * w];
    let inv = F::from_f64(1.0 / 255.0);
    for y in 0..h {
        for x in 0..w {
            let px = resized.get(x as u32, y as u32);
            for ch in 0..3 {
                data[ch * h * w + y * w + x] = F::from_f64(px[ch] as f64) * inv;
            }
        }
    }
    Tensor::new(vec![1, 3, h, w], data)
}

/// Stacks `[1, 3, H, W]` inputs into one `[N, 3, H, W]` batch.
pub fn stack_batch<F: Scalar>(inputs: &[Tensor<F>]) -> Result<Tensor<F>> {
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let [_, c, h, w] = inputs[0].dims4()?;
    let mut data = Vec::with_capacity(inputs.len() * c * h * w);
    for t in inputs {
        if t.shape() != inputs[0].shape() {
            return Err(Error::ShapeMismatch("ragged batch".into()));
        }
        data.extend_from_slice(t.data());
    }
    Tensor::new(vec![inputs.len(), c, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk_config() -> ModelConfig {
        ModelConfig::desk_scale(64, 32, Rational { num: 1, den: 4 })
    }

    #[test]
    fn default_flatten_size_is_16384() {
        let cfg = ModelConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.flatten_size(), 128 * 16 * 8);
        assert_eq!(cfg.flatten_size(), 16384);
    }

    #[test]
    fn quarter_scale_flatten_size_is_64() {
        let cfg = desk_config();
        cfg.validate().unwrap();
        assert_eq!(cfg.scaled_channels(), vec![4, 4, 4, 4, 8, 8, 16, 16, 32, 32]);
        assert_eq!(cfg.flatten_size(), 32 * 2 * 1);
    }

    /// Independent shape walk over the architecture definition.
    fn oracle_param_count(cfg: &ModelConfig) -> usize {
        let ch = cfg.scaled_channels();
        let mut total = 0usize;
        let mut prev = 3usize;
        for &c in &ch {
            total += c * prev * 3 * 3; // conv weight
            total += c; // conv bias
            total += 2 * c; // gamma + beta
            prev = c;
        }
        let mut dim = *ch.last().unwrap()
            * (cfg.input_height as usize / 32)
            * (cfg.input_width as usize / 32);
        for &f in &cfg.fc_dims {
            total += f * dim + f;
            dim = f;
        }
        total
    }

    #[test]
    fn parameter_count_matches_shape_walk() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.num_parameters(), oracle_param_count(&cfg));
        let desk = desk_config();
        assert_eq!(desk.num_parameters(), oracle_param_count(&desk));
    }

    #[test]
    fn validate_rejects_indivisible_input() {
        let mut cfg = ModelConfig::default();
        cfg.input_width = 500;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn validate_rejects_k_mismatch() {
        let mut cfg = ModelConfig::default();
        cfg.num_classes = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn forward_shape_is_batch_by_classes() {
        let cfg = desk_config();
        let model = Model::<f32>::build(cfg, 7).unwrap();
        for n in [1usize, 3] {
            let input = Tensor::zeros(vec![n, 3, 32, 64]);
            let logits = model.forward_infer(&input).unwrap();
            assert_eq!(logits.shape(), [n, 2]);
        }
    }

    #[test]
    fn fresh_model_emits_near_uniform_probabilities() {
        let cfg = desk_config();
        let model = Model::<f32>::build(cfg, 3).unwrap();
        let img = ImageRGB::filled(64, 32, [120, 40, 200]).unwrap();
        let (_, probs) = model.predict(&img).unwrap();
        assert!((probs[0] - 0.5).abs() < 0.2, "p_normal {}", probs[0]);
        assert!((probs[0] + probs[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn exact_logit_ties_resolve_to_normal() {
        // Zero out the classifier so the logits tie exactly.
        let cfg = desk_config();
        let mut model = Model::<f32>::build(cfg, 3).unwrap();
        let last = model.fcs.len() - 1;
        model.fcs[last].weight = Tensor::zeros(model.fcs[last].weight.shape().to_vec());
        model.fcs[last].bias = Tensor::zeros(model.fcs[last].bias.shape().to_vec());
        let img = ImageRGB::filled(64, 32, [120, 40, 200]).unwrap();
        let (label, probs) = model.predict(&img).unwrap();
        assert_eq!(label, crate::manifest::Label::Normal);
        assert!((probs[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn build_is_seed_deterministic() {
        let a = Model::<f32>::build(desk_config(), 5).unwrap();
        let b = Model::<f32>::build(desk_config(), 5).unwrap();
        for ((_, ta), (_, tb)) in a.named_tensors().iter().zip(b.named_tensors()) {
            assert_eq!(ta.data(), tb.data());
        }
        let c = Model::<f32>::build(desk_config(), 6).unwrap();
        assert_ne!(
            a.named_tensors()[0].1.data(),
            c.named_tensors()[0].1.data()
        );
    }

    #[test]
    fn preprocess_rotates_vertical_images() {
        let cfg = desk_config();
        // 32x64 (vertical) becomes horizontal before resizing.
        let mut img = ImageRGB::new(32, 64).unwrap();
        img.set(0, 0, [255, 0, 0]);
        let t = preprocess::<f32>(&cfg, &img).unwrap();
        assert_eq!(t.shape(), [1, 3, 32, 64]);
    }

    #[test]
    fn preprocess_identity_size_scales_by_255() {
        let cfg = desk_config();
        let mut img = ImageRGB::new(64, 32).unwrap();
        img.set(5, 4, [51, 102, 255]);
        let t = preprocess::<f32>(&cfg, &img).unwrap();
        let hw = 32 * 64;
        assert!((t.data()[4 * 64 + 5] - 51.0 / 255.0).abs() < 1e-7);
        assert!((t.data()[hw + 4 * 64 + 5] - 102.0 / 255.0).abs() < 1e-7);
        assert!((t.data()[2 * hw + 4 * 64 + 5] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn preprocess_all_white_is_all_ones() {
        let cfg = desk_config();
        let img = ImageRGB::filled(64, 32, [255, 255, 255]).unwrap();
        let t = preprocess::<f32>(&cfg, &img).unwrap();
        assert!(t.data().iter().all(|&v| (v - 1.0).abs() < 1e-7));
    }
}
