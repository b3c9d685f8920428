//! The ResNet model: construction, forward/backward execution, parameter access.

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::ops::{self, BnCache};
use crate::rng;
use crate::tensor::{Parameter, Scalar, Tensor};

use super::{BatchNorm2d, Conv2d, Linear, ModelSpec, Shortcut};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Two 3x3 convolutions with batch norm plus a parameter-free shortcut.
#[derive(Debug, Clone)]
pub struct BasicBlock<T: Scalar> {
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
    pub shortcut: Shortcut,
}

/// Per-block activations cached by a training forward pass.
pub struct BlockTrace<T: Scalar> {
    bn1_cache: BnCache<T>,
    bn1_out: Tensor<T>,
    bn2_cache: BnCache<T>,
    sum_pre_relu: Tensor<T>,
}

/// Everything the backward pass needs from one training forward pass.
pub struct ForwardTrace<T: Scalar> {
    input: Tensor<T>,
    stem_bn_cache: BnCache<T>,
    stem_pre_relu: Tensor<T>,
    /// `block_inputs[0]` is the stem output; `block_inputs[i+1]` is block `i`'s output.
    block_inputs: Vec<Tensor<T>>,
    block_traces: Vec<BlockTrace<T>>,
    pooled: Tensor<T>,
    final_spatial: (usize, usize),
}

/// A CIFAR ResNet instance with named parameters.
#[derive(Debug, Clone)]
pub struct ResNet<T: Scalar = f32> {
    pub spec: ModelSpec,
    pub init_seed: u64,
    pub stem_conv: Conv2d<T>,
    pub stem_bn: BatchNorm2d<T>,
    pub blocks: Vec<BasicBlock<T>>,
    pub fc: Linear<T>,
}

fn he_tensor<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut rng::SeededRng) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("std is finite and positive");
    let data = (0..shape.iter().product::<usize>())
        .map(|_| T::from_f64(dist.sample(rng)))
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches generated data")
}

fn conv_layer<T: Scalar>(
    path: String,
    out_c: usize,
    in_c: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    rng: &mut rng::SeededRng,
) -> Conv2d<T> {
    let weight = he_tensor(&[out_c, in_c, kernel, kernel], in_c * kernel * kernel, rng);
    Conv2d { path, weight: Parameter::new(weight), stride, padding }
}

impl<T: Scalar> ResNet<T> {
    /// Deterministically build and He-initialize a dense ResNet.
    pub fn build(spec: ModelSpec, init_seed: u64) -> Self {
        let mut rng = rng::seeded(init_seed);
        let n = spec.blocks_per_stage();

        let stem_conv = conv_layer(
            "stem.conv".to_string(),
            ModelSpec::STAGE_CHANNELS[0],
            ModelSpec::INPUT_CHANNELS,
            3,
            1,
            1,
            &mut rng,
        );
        let stem_bn = BatchNorm2d::new("stem.bn", ModelSpec::STAGE_CHANNELS[0], BN_EPS, BN_MOMENTUM);

        let mut blocks = Vec::with_capacity(3 * n);
        for stage in 0..3 {
            let out_c = ModelSpec::STAGE_CHANNELS[stage];
            for b in 0..n {
                let first = b == 0 && stage > 0;
                let in_c = if first { ModelSpec::STAGE_CHANNELS[stage - 1] } else { out_c };
                let stride = if first { 2 } else { 1 };
                let prefix = format!("stage{}.block{}", stage + 1, b + 1);
                let conv1 = conv_layer(format!("{prefix}.conv1"), out_c, in_c, 3, stride, 1, &mut rng);
                let bn1 = BatchNorm2d::new(format!("{prefix}.bn1"), out_c, BN_EPS, BN_MOMENTUM);
                let conv2 = conv_layer(format!("{prefix}.conv2"), out_c, out_c, 3, 1, 1, &mut rng);
                let bn2 = BatchNorm2d::new(format!("{prefix}.bn2"), out_c, BN_EPS, BN_MOMENTUM);
                let shortcut =
                    if first { Shortcut::downsample(in_c, out_c) } else { Shortcut::Identity };
                blocks.push(BasicBlock { conv1, bn1, conv2, bn2, shortcut });
            }
        }

        let feat = ModelSpec::STAGE_CHANNELS[2];
        let fc_weight = he_tensor(&[ModelSpec::NUM_CLASSES, feat], feat, &mut rng);
        let fc = Linear {
            path: "fc".to_string(),
            weight: Parameter::new(fc_weight),
            bias: Parameter::new(Tensor::zeros(&[ModelSpec::NUM_CLASSES])),
        };

        ResNet { spec, init_seed, stem_conv, stem_bn, blocks, fc }
    }

    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(input)?;
        let x = self.stem_conv.forward(input)?;
        let x = ops::batchnorm2d_forward_eval(
            &x,
            &self.stem_bn.gamma.value,
            &self.stem_bn.beta.value,
            &self.stem_bn.running_mean,
            &self.stem_bn.running_var,
            self.stem_bn.eps,
        )?;
        let mut x = ops::relu_forward(&x);
        for block in &self.blocks {
            let c1 = block.conv1.forward(&x)?;
            let b1 = ops::batchnorm2d_forward_eval(
                &c1,
                &block.bn1.gamma.value,
                &block.bn1.beta.value,
                &block.bn1.running_mean,
                &block.bn1.running_var,
                block.bn1.eps,
            )?;
            let r1 = ops::relu_forward(&b1);
            let c2 = block.conv2.forward(&r1)?;
            let mut sum = ops::batchnorm2d_forward_eval(
                &c2,
                &block.bn2.gamma.value,
                &block.bn2.beta.value,
                &block.bn2.running_mean,
                &block.bn2.running_var,
                block.bn2.eps,
            )?;
            block.shortcut.apply(&x, &mut sum)?;
            x = ops::relu_forward(&sum);
        }
        let pooled = ops::global_avg_pool_forward(&x)?;
        let logits = ops::linear_forward(&pooled, &self.fc.weight.value, &self.fc.bias.value)?;
        if !logits.is_all_finite() {
            return Err(Error::Numeric(self.locate_nonfinite(input)));
        }
        Ok(logits)
    }

    /// Forward pass with batch statistics; returns logits plus the trace
    /// consumed by [`ResNet::backward`]. Updates BN running statistics.
    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, ForwardTrace<T>)> {
        self.check_input(input)?;
        let x = self.stem_conv.forward(input)?;
        let (x, stem_bn_cache) = ops::batchnorm2d_forward_train(
            &x,
            &self.stem_bn.gamma.value,
            &self.stem_bn.beta.value,
            &mut self.stem_bn.running_mean,
            &mut self.stem_bn.running_var,
            self.stem_bn.momentum,
            self.stem_bn.eps,
        )?;
        let stem_pre_relu = x.clone();
        let stem_out = ops::relu_forward(&x);

        let mut block_inputs = vec![stem_out];
        let mut block_traces = Vec::with_capacity(self.blocks.len());
        for block in self.blocks.iter_mut() {
            let x_in = block_inputs.last().expect("never empty");
            let c1 = block.conv1.forward(x_in)?;
            let (b1, bn1_cache) = ops::batchnorm2d_forward_train(
                &c1,
                &block.bn1.gamma.value,
                &block.bn1.beta.value,
                &mut block.bn1.running_mean,
                &mut block.bn1.running_var,
                block.bn1.momentum,
                block.bn1.eps,
            )?;
            let r1 = ops::relu_forward(&b1);
            let c2 = block.conv2.forward(&r1)?;
            let (mut sum, bn2_cache) = ops::batchnorm2d_forward_train(
                &c2,
                &block.bn2.gamma.value,
                &block.bn2.beta.value,
                &mut block.bn2.running_mean,
                &mut block.bn2.running_var,
                block.bn2.momentum,
                block.bn2.eps,
            )?;
            block.shortcut.apply(x_in, &mut sum)?;
            let out = ops::relu_forward(&sum);
            block_traces.push(BlockTrace { bn1_cache, bn1_out: b1, bn2_cache, sum_pre_relu: sum });
            block_inputs.push(out);
        }

        let last = block_inputs.last().expect("never empty");
        let (_, _, h, w) = last.dims4()?;
        let pooled = ops::global_avg_pool_forward(last)?;
        let logits = ops::linear_forward(&pooled, &self.fc.weight.value, &self.fc.bias.value)?;
        if !logits.is_all_finite() {
            return Err(Error::Numeric(self.locate_nonfinite(input)));
        }
        let trace = ForwardTrace {
            input: input.clone(),
            stem_bn_cache,
            stem_pre_relu,
            block_inputs,
            block_traces,
            pooled,
            final_spatial: (h, w),
        };
        Ok((logits, trace))
    }

    /// Accumulate parameter gradients from `grad_logits` through the trace.
    pub fn backward(&mut self, trace: &ForwardTrace<T>, grad_logits: &Tensor<T>) -> Result<()> {
        let (grad_pooled, gw_fc, gb_fc) =
            ops::linear_backward(grad_logits, &trace.pooled, &self.fc.weight.value)?;
        self.fc.weight.grad.add_assign(&gw_fc)?;
        self.fc.bias.grad.add_assign(&gb_fc)?;

        let (h, w) = trace.final_spatial;
        let mut grad_x = ops::global_avg_pool_backward(&grad_pooled, h, w)?;

        for (i, block) in self.blocks.iter_mut().enumerate().rev() {
            let bt = &trace.block_traces[i];
            let x_in = &trace.block_inputs[i];

            let g_sum = ops::relu_backward(&grad_x, &bt.sum_pre_relu);
            let (g_c2, g_gamma2, g_beta2) =
                ops::batchnorm2d_backward(&g_sum, &bt.bn2_cache, &block.bn2.gamma.value)?;
            block.bn2.gamma.grad.add_assign(&g_gamma2)?;
            block.bn2.beta.grad.add_assign(&g_beta2)?;

            let r1 = ops::relu_forward(&bt.bn1_out);
            let (g_r1, g_w2) =
                ops::conv2d_backward(&g_c2, &r1, &block.conv2.weight.value, block.conv2.stride, block.conv2.padding)?;
            block.conv2.weight.grad.add_assign(&g_w2)?;

            let g_b1 = ops::relu_backward(&g_r1, &bt.bn1_out);
            let (g_c1, g_gamma1, g_beta1) =
                ops::batchnorm2d_backward(&g_b1, &bt.bn1_cache, &block.bn1.gamma.value)?;
            block.bn1.gamma.grad.add_assign(&g_gamma1)?;
            block.bn1.beta.grad.add_assign(&g_beta1)?;

            let (mut g_x, g_w1) =
                ops::conv2d_backward(&g_c1, x_in, &block.conv1.weight.value, block.conv1.stride, block.conv1.padding)?;
            block.conv1.weight.grad.add_assign(&g_w1)?;

            block.shortcut.backward(&g_sum, &mut g_x)?;
            grad_x = g_x;
        }

        let g_stem = ops::relu_backward(&grad_x, &trace.stem_pre_relu);
        let (g_c, g_gamma, g_beta) =
            ops::batchnorm2d_backward(&g_stem, &trace.stem_bn_cache, &self.stem_bn.gamma.value)?;
        self.stem_bn.gamma.grad.add_assign(&g_gamma)?;
        self.stem_bn.beta.grad.add_assign(&g_beta)?;
        let (_, g_w) = ops::conv2d_backward(
            &g_c,
            &trace.input,
            &self.stem_conv.weight.value,
            self.stem_conv.stride,
            self.stem_conv.padding,
        )?;
        self.stem_conv.weight.grad.add_assign(&g_w)?;
        Ok(())
    }

    /// Logits for a batch in the requested mode.
    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Eval => self.forward_eval(input),
            Mode::Train => self.forward_train(input).map(|(logits, _)| logits),
        }
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = input.dims4()?;
        let expect_c = self.stem_conv.in_channels();
        if c != expect_c || h != ModelSpec::INPUT_SIDE || w != ModelSpec::INPUT_SIDE {
            return Err(Error::contract(format!(
                "model expects batches of {expect_c}x{}x{} images, got {:?}",
                ModelSpec::INPUT_SIDE,
                ModelSpec::INPUT_SIDE,
                input.shape()
            )));
        }
        Ok(())
    }

    /// Re-run the forward pass layer by layer to name the first layer that
    /// produced a non-finite activation. Only used on the failure path.
    fn locate_nonfinite(&self, input: &Tensor<T>) -> String {
        let mut x = match self.stem_conv.forward(input) {
            Ok(t) => t,
            Err(_) => return "stem.conv".to_string(),
        };
        if !x.is_all_finite() {
            return format!("non-finite activation in layer {}", self.stem_conv.path);
        }
        x = match ops::batchnorm2d_forward_eval(
            &x,
            &self.stem_bn.gamma.value,
            &self.stem_bn.beta.value,
            &self.stem_bn.running_mean,
            &self.stem_bn.running_var,
            self.stem_bn.eps,
        ) {
            Ok(t) => t,
            Err(_) => return self.stem_bn.path.clone(),
        };
        if !x.is_all_finite() {
            return format!("non-finite activation in layer {}", self.stem_bn.path);
        }
        x = ops::relu_forward(&x);
        for block in &self.blocks {
            let c1 = match block.conv1.forward(&x) {
                Ok(t) => t,
                Err(_) => return block.conv1.path.clone(),
            };
            if !c1.is_all_finite() {
                return format!("non-finite activation in layer {}", block.conv1.path);
            }
            let b1 = match ops::batchnorm2d_forward_eval(
                &c1,
                &block.bn1.gamma.value,
                &block.bn1.beta.value,
                &block.bn1.running_mean,
                &block.bn1.running_var,
                block.bn1.eps,
            ) {
                Ok(t) => t,
                Err(_) => return block.bn1.path.clone(),
            };
            if !b1.is_all_finite() {
                return format!("non-finite activation in layer {}", block.bn1.path);
            }
            let r1 = ops::relu_forward(&b1);
            let c2 = match block.conv2.forward(&r1) {
                Ok(t) => t,
                Err(_) => return block.conv2.path.clone(),
            };
            if !c2.is_all_finite() {
                return format!("non-finite activation in layer {}", block.conv2.path);
            }
            let mut sum = match ops::batchnorm2d_forward_eval(
                &c2,
                &block.bn2.gamma.value,
                &block.bn2.beta.value,
                &block.bn2.running_mean,
                &block.bn2.running_var,
                block.bn2.eps,
            ) {
                Ok(t) => t,
                Err(_) => return block.bn2.path.clone(),
            };
            if !sum.is_all_finite() {
                return format!("non-finite activation in layer {}", block.bn2.path);
            }
            if block.shortcut.apply(&x, &mut sum).is_err() {
                return format!("shortcut of {}", block.conv1.path);
            }
            x = ops::relu_forward(&sum);
        }
        "non-finite activation in layer fc".to_string()
    }

    /// Visit all trainable parameters in canonical order.
    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(&'a str, &'a Parameter<T>)) {
        f(&self.stem_conv.path, &self.stem_conv.weight);
        f(&self.stem_bn.path, &self.stem_bn.gamma);
        f(&self.stem_bn.path, &self.stem_bn.beta);
        for block in &self.blocks {
            f(&block.conv1.path, &block.conv1.weight);
            f(&block.bn1.path, &block.bn1.gamma);
            f(&block.bn1.path, &block.bn1.beta);
            f(&block.conv2.path, &block.conv2.weight);
            f(&block.bn2.path, &block.bn2.gamma);
            f(&block.bn2.path, &block.bn2.beta);
        }
        f(&self.fc.path, &self.fc.weight);
        f(&self.fc.path, &self.fc.bias);
    }

    /// Mutable references to all parameters in canonical order.
    pub fn params_mut(&mut self) -> Vec<&mut Parameter<T>> {
        let mut out: Vec<&mut Parameter<T>> = Vec::new();
        out.push(&mut self.stem_conv.weight);
        out.push(&mut self.stem_bn.gamma);
        out.push(&mut self.stem_bn.beta);
        for block in self.blocks.iter_mut() {
            out.push(&mut block.conv1.weight);
            out.push(&mut block.bn1.gamma);
            out.push(&mut block.bn1.beta);
            out.push(&mut block.conv2.weight);
            out.push(&mut block.bn2.gamma);
            out.push(&mut block.bn2.beta);
        }
        out.push(&mut self.fc.weight);
        out.push(&mut self.fc.bias);
        out
    }

    /// Named blob list covering parameters and BN running statistics, in
    /// canonical order. Used by checkpointing.
    pub fn named_state(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = Vec::new();
        out.push((format!("{}.weight", self.stem_conv.path), &self.stem_conv.weight.value));
        out.push((format!("{}.gamma", self.stem_bn.path), &self.stem_bn.gamma.value));
        out.push((format!("{}.beta", self.stem_bn.path), &self.stem_bn.beta.value));
        out.push((format!("{}.running_mean", self.stem_bn.path), &self.stem_bn.running_mean));
        out.push((format!("{}.running_var", self.stem_bn.path), &self.stem_bn.running_var));
        for block in &self.blocks {
            for (conv, bn) in [(&block.conv1, &block.bn1), (&block.conv2, &block.bn2)] {
                out.push((format!("{}.weight", conv.path), &conv.weight.value));
                out.push((format!("{}.gamma", bn.path), &bn.gamma.value));
                out.push((format!("{}.beta", bn.path), &bn.beta.value));
                out.push((format!("{}.running_mean", bn.path), &bn.running_mean));
                out.push((format!("{}.running_var", bn.path), &bn.running_var));
            }
        }
        out.push((format!("{}.weight", self.fc.path), &self.fc.weight.value));
        out.push((format!("{}.bias", self.fc.path), &self.fc.bias.value));
        out
    }

    /// Mutable counterpart of [`ResNet::named_state`], same order.
    pub fn named_state_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = Vec::new();
        out.push((format!("{}.weight", self.stem_conv.path), &mut self.stem_conv.weight.value));
        out.push((format!("{}.gamma", self.stem_bn.path), &mut self.stem_bn.gamma.value));
        out.push((format!("{}.beta", self.stem_bn.path), &mut self.stem_bn.beta.value));
        out.push((format!("{}.running_mean", self.stem_bn.path), &mut self.stem_bn.running_mean));
        out.push((format!("{}.running_var", self.stem_bn.path), &mut self.stem_bn.running_var));
        for block in self.blocks.iter_mut() {
            for (conv, bn) in [(&mut block.conv1, &mut block.bn1), (&mut block.conv2, &mut block.bn2)] {
                out.push((format!("{}.weight", conv.path), &mut conv.weight.value));
                out.push((format!("{}.gamma", bn.path), &mut bn.gamma.value));
                out.push((format!("{}.beta", bn.path), &mut bn.beta.value));
                out.push((format!("{}.running_mean", bn.path), &mut bn.running_mean));
                out.push((format!("{}.running_var", bn.path), &mut bn.running_var));
            }
        }
        out.push((format!("{}.weight", self.fc.path), &mut self.fc.weight.value));
        out.push((format!("{}.bias", self.fc.path), &mut self.fc.bias.value));
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Total count of trainable parameter elements.
    pub fn parameter_count(&self) -> usize {
        let mut total = 0;
        self.visit_params(|_, p| {
            if p.requires_grad {
                total += p.value.len();
            }
        });
        total
    }

    /// Number of convolution layers (stem included).
    pub fn conv_count(&self) -> usize {
        1 + 2 * self.blocks.len()
    }

    /// Convert the model to another precision (used by gradient checks).
    pub fn cast<U: Scalar>(&self) -> ResNet<U> {
        ResNet {
            spec: self.spec,
            init_seed: self.init_seed,
            stem_conv: Conv2d {
                path: self.stem_conv.path.clone(),
                weight: self.stem_conv.weight.cast(),
                stride: self.stem_conv.stride,
                padding: self.stem_conv.padding,
            },
            stem_bn: cast_bn(&self.stem_bn),
            blocks: self
                .blocks
                .iter()
                .map(|b| BasicBlock {
                    conv1: Conv2d {
                        path: b.conv1.path.clone(),
                        weight: b.conv1.weight.cast(),
                        stride: b.conv1.stride,
                        padding: b.conv1.padding,
                    },
                    bn1: cast_bn(&b.bn1),
                    conv2: Conv2d {
                        path: b.conv2.path.clone(),
                        weight: b.conv2.weight.cast(),
                        stride: b.conv2.stride,
                        padding: b.conv2.padding,
                    },
                    bn2: cast_bn(&b.bn2),
                    shortcut: b.shortcut.clone(),
                })
                .collect(),
            fc: Linear {
                path: self.fc.path.clone(),
                weight: self.fc.weight.cast(),
                bias: self.fc.bias.cast(),
            },
        }
    }
}

fn cast_bn<T: Scalar, U: Scalar>(bn: &BatchNorm2d<T>) -> BatchNorm2d<U> {
    BatchNorm2d {
        path: bn.path.clone(),
        gamma: bn.gamma.cast(),
        beta: bn.beta.cast(),
        running_mean: bn.running_mean.cast(),
        running_var: bn.running_var.cast(),
        eps: bn.eps,
        momentum: bn.momentum,
    }
}
