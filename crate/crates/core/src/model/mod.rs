//! CIFAR ResNet construction, execution, compaction, and checkpointing.

mod checkpoint;
mod compact;
mod resnet;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use compact::{extract_compact, CompactExtraction, CompactPlan};
pub use resnet::{BasicBlock, ForwardTrace, Mode, ResNet};

use crate::error::{Error, Result};
use crate::ops;
use crate::tensor::{Parameter, Scalar, Tensor};

/// Architecture family description for the CIFAR ResNets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub depth: usize,
}

impl ModelSpec {
    pub const VALID_DEPTHS: [usize; 5] = [20, 32, 44, 56, 110];
    pub const STAGE_CHANNELS: [usize; 3] = [16, 32, 64];
    pub const NUM_CLASSES: usize = 10;
    pub const INPUT_CHANNELS: usize = 3;
    pub const INPUT_SIDE: usize = 32;

    pub fn new(depth: usize) -> Result<Self> {
        if !Self::VALID_DEPTHS.contains(&depth) {
            return Err(Error::config(format!(
                "invalid depth {depth}; valid depths are {:?}",
                Self::VALID_DEPTHS
            )));
        }
        debug_assert_eq!((depth - 2) % 6, 0);
        Ok(ModelSpec { depth })
    }

    pub fn blocks_per_stage(&self) -> usize {
        (self.depth - 2) / 6
    }

    /// Spatial side length of the feature maps in stage `s` (0-based).
    pub fn stage_side(stage: usize) -> usize {
        Self::INPUT_SIDE >> stage
    }
}

/// Convolution layer state: a weight parameter plus its geometry.
#[derive(Debug, Clone)]
pub struct Conv2d<T: Scalar> {
    pub path: String,
    pub weight: Parameter<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Scalar> Conv2d<T> {
    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.shape()[2]
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        ops::conv2d_forward(input, &self.weight.value, self.stride, self.padding)
    }
}

/// Batch normalization layer state.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub path: String,
    pub gamma: Parameter<T>,
    pub beta: Parameter<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(path: impl Into<String>, channels: usize, eps: f64, momentum: f64) -> Self {
        BatchNorm2d {
            path: path.into(),
            gamma: Parameter::new(Tensor::filled(&[channels], T::one())),
            beta: Parameter::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::filled(&[channels], T::one()),
            eps,
            momentum,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }
}

/// Final classifier.
#[derive(Debug, Clone)]
pub struct Linear<T: Scalar> {
    pub path: String,
    pub weight: Parameter<T>,
    pub bias: Parameter<T>,
}

/// Parameter-free shortcut connection.
///
/// `positions[i]` is the output channel that input channel `i` adds into;
/// output channels not listed receive only the residual branch. The plain
/// identity case stores no map.
#[derive(Debug, Clone)]
pub enum Shortcut {
    Identity,
    Mapped { stride: usize, out_channels: usize, positions: Vec<usize> },
}

impl Shortcut {
    /// Option-A stage-boundary shortcut: stride-2 subsample, zero-padded
    /// channels appended after the carried ones.
    pub fn downsample(in_channels: usize, out_channels: usize) -> Self {
        Shortcut::Mapped { stride: 2, out_channels, positions: (0..in_channels).collect() }
    }

    /// Add the shortcut contribution of `input` into `sum` (shape checked by caller).
    pub fn apply<T: Scalar>(&self, input: &Tensor<T>, sum: &mut Tensor<T>) -> Result<()> {
        match self {
            Shortcut::Identity => sum.add_assign(input),
            Shortcut::Mapped { stride, out_channels, positions } => {
                let (n, c_in, h_in, w_in) = input.dims4()?;
                let (sn, sc, sh, sw) = sum.dims4()?;
                if sn != n || sc != *out_channels {
                    return Err(Error::contract(format!(
                        "shortcut: sum shape {:?} does not match mapped output ({n}, {out_channels}, ..)",
                        sum.shape()
                    )));
                }
                let in_plane = h_in * w_in;
                let out_plane = sh * sw;
                let data_in = input.data();
                let data_sum = sum.data_mut();
                for b in 0..n {
                    for (i, &pos) in positions.iter().enumerate().take(c_in) {
                        let src_base = (b * c_in + i) * in_plane;
                        let dst_base = (b * sc + pos) * out_plane;
                        for y in 0..sh {
                            for x in 0..sw {
                                let src = src_base + (y * stride) * w_in + x * stride;
                                let dst = dst_base + y * sw + x;
                                data_sum[dst] = data_sum[dst] + data_in[src];
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }

    /// Adjoint of [`Shortcut::apply`]: scatter `grad_out` back onto the input grad.
    pub fn backward<T: Scalar>(&self, grad_out: &Tensor<T>, grad_in: &mut Tensor<T>) -> Result<()> {
        match self {
            Shortcut::Identity => grad_in.add_assign(grad_out),
            Shortcut::Mapped { stride, out_channels: _, positions } => {
                let (n, c_in, _h_in, w_in) = grad_in.dims4()?;
                let (_, sc, sh, sw) = grad_out.dims4()?;
                let out_plane = sh * sw;
                let in_plane = grad_in.shape()[2] * w_in;
                let go = grad_out.data();
                let gi = grad_in.data_mut();
                for b in 0..n {
                    for (i, &pos) in positions.iter().enumerate().take(c_in) {
                        let src_base = (b * sc + pos) * out_plane;
                        let dst_base = (b * c_in + i) * in_plane;
                        for y in 0..sh {
                            for x in 0..sw {
                                let dst = dst_base + (y * stride) * w_in + x * stride;
                                gi[dst] = gi[dst] + go[src_base + y * sw + x];
                            }
                        }
                    }
                }
                Ok(())
            }
        }
    }
}
