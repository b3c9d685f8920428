//! Physical extraction of a compact model from a masked one.
//!
//! Only layers whose removal leaves every residual add intact are ever
//! masked: the stem and each block's first convolution. Removing a stem
//! filter narrows the stage-1 feature maps, so the first block's shortcut
//! carries an index map aligning its input channels with the block output.

use crate::error::{Error, Result};
use crate::prune::FilterMask;
use crate::tensor::{Parameter, Scalar, Tensor};

use super::resnet::BasicBlock;
use super::{BatchNorm2d, Conv2d, Linear, ResNet, Shortcut};

/// Per-layer kept-channel index lists produced by an extraction.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CompactPlan {
    /// Kept stem filters, ascending original indices.
    pub stem_kept: Vec<usize>,
    /// Kept conv1 filters per block, model block order.
    pub conv1_kept: Vec<Vec<usize>>,
}

impl CompactPlan {
    /// Plan that keeps everything, given the dense model.
    pub fn full<T: Scalar>(model: &ResNet<T>) -> Self {
        CompactPlan {
            stem_kept: (0..model.stem_conv.out_channels()).collect(),
            conv1_kept: model.blocks.iter().map(|b| (0..b.conv1.out_channels()).collect()).collect(),
        }
    }
}

/// A compact model plus the bookkeeping that produced it.
pub struct CompactExtraction<T: Scalar = f32> {
    pub model: ResNet<T>,
    pub plan: CompactPlan,
}

fn kept_indices(keep: &[bool]) -> Vec<usize> {
    keep.iter().enumerate().filter_map(|(i, &k)| if k { Some(i) } else { None }).collect()
}

fn slice_rows<T: Scalar>(weight: &Tensor<T>, kept: &[usize]) -> Tensor<T> {
    let dims = weight.shape();
    let row = dims[1] * dims[2] * dims[3];
    let mut data = Vec::with_capacity(kept.len() * row);
    for &o in kept {
        data.extend_from_slice(&weight.data()[o * row..(o + 1) * row]);
    }
    Tensor::from_vec(&[kept.len(), dims[1], dims[2], dims[3]], data).expect("consistent slice")
}

fn slice_in_channels<T: Scalar>(weight: &Tensor<T>, kept: &[usize]) -> Tensor<T> {
    let dims = weight.shape();
    let (o_dim, i_dim, k) = (dims[0], dims[1], dims[2]);
    let plane = k * k;
    let mut data = Vec::with_capacity(o_dim * kept.len() * plane);
    for o in 0..o_dim {
        for &i in kept {
            let base = (o * i_dim + i) * plane;
            data.extend_from_slice(&weight.data()[base..base + plane]);
        }
    }
    Tensor::from_vec(&[o_dim, kept.len(), k, k], data).expect("consistent slice")
}

fn slice_channels<T: Scalar>(v: &Tensor<T>, kept: &[usize]) -> Tensor<T> {
    let data = kept.iter().map(|&i| v.data()[i]).collect();
    Tensor::from_vec(&[kept.len()], data).expect("consistent slice")
}

fn slice_bn<T: Scalar>(bn: &BatchNorm2d<T>, kept: &[usize]) -> BatchNorm2d<T> {
    BatchNorm2d {
        path: bn.path.clone(),
        gamma: Parameter::new(slice_channels(&bn.gamma.value, kept)),
        beta: Parameter::new(slice_channels(&bn.beta.value, kept)),
        running_mean: slice_channels(&bn.running_mean, kept),
        running_var: slice_channels(&bn.running_var, kept),
        eps: bn.eps,
        momentum: bn.momentum,
    }
}

/// Remove masked output filters, their batch-norm channels, and the matching
/// input channels of each consumer layer. Masks may cover the stem and block
/// conv1 layers; any other path is a contract violation.
pub fn extract_compact<T: Scalar>(model: &ResNet<T>, masks: &[FilterMask]) -> Result<CompactExtraction<T>> {
    let mut by_path: std::collections::HashMap<&str, &FilterMask> = std::collections::HashMap::new();
    for mask in masks {
        if by_path.insert(mask.path.as_str(), mask).is_some() {
            return Err(Error::contract(format!("duplicate mask for layer {}", mask.path)));
        }
    }

    let mut prunable: Vec<&str> = vec![model.stem_conv.path.as_str()];
    prunable.extend(model.blocks.iter().map(|b| b.conv1.path.as_str()));
    for mask in masks {
        if !prunable.contains(&mask.path.as_str()) {
            return Err(Error::contract(format!(
                "mask targets layer {}, which is outside the prunable scope",
                mask.path
            )));
        }
    }

    let keep_of = |conv: &Conv2d<T>| -> Result<Vec<usize>> {
        match by_path.get(conv.path.as_str()) {
            None => Ok((0..conv.out_channels()).collect()),
            Some(mask) => {
                if mask.keep.len() != conv.out_channels() {
                    return Err(Error::contract(format!(
                        "mask for {} has {} entries, layer has {} filters",
                        conv.path,
                        mask.keep.len(),
                        conv.out_channels()
                    )));
                }
                let kept = kept_indices(&mask.keep);
                if kept.is_empty() {
                    return Err(Error::Degenerate(format!(
                        "mask for {} would leave the layer with zero filters",
                        conv.path
                    )));
                }
                Ok(kept)
            }
        }
    };

    let stem_kept = keep_of(&model.stem_conv)?;
    let stem_conv = Conv2d {
        path: model.stem_conv.path.clone(),
        weight: Parameter::new(slice_rows(&model.stem_conv.weight.value, &stem_kept)),
        stride: model.stem_conv.stride,
        padding: model.stem_conv.padding,
    };
    let stem_bn = slice_bn(&model.stem_bn, &stem_kept);
    let stem_full = stem_kept.len() == model.stem_conv.out_channels();

    let mut blocks = Vec::with_capacity(model.blocks.len());
    let mut conv1_kept_all = Vec::with_capacity(model.blocks.len());
    for (i, block) in model.blocks.iter().enumerate() {
        let conv1_kept = keep_of(&block.conv1)?;

        // Stage-1 entry block: its input is the (possibly narrowed) stem output.
        let first_of_stage1 = i == 0;
        let conv1_weight = if first_of_stage1 && !stem_full {
            slice_in_channels(&slice_rows(&block.conv1.weight.value, &conv1_kept), &stem_kept)
        } else {
            slice_rows(&block.conv1.weight.value, &conv1_kept)
        };
        let conv1 = Conv2d {
            path: block.conv1.path.clone(),
            weight: Parameter::new(conv1_weight),
            stride: block.conv1.stride,
            padding: block.conv1.padding,
        };
        let bn1 = slice_bn(&block.bn1, &conv1_kept);
        let conv2 = Conv2d {
            path: block.conv2.path.clone(),
            weight: Parameter::new(slice_in_channels(&block.conv2.weight.value, &conv1_kept)),
            stride: block.conv2.stride,
            padding: block.conv2.padding,
        };
        let shortcut = if first_of_stage1 && !stem_full {
            Shortcut::Mapped {
                stride: 1,
                out_channels: block.conv2.out_channels(),
                positions: stem_kept.clone(),
            }
        } else {
            block.shortcut.clone()
        };
        blocks.push(BasicBlock {
            conv1,
            bn1,
            conv2,
            bn2: slice_bn(&block.bn2, &(0..block.bn2.channels()).collect::<Vec<_>>()),
            shortcut,
        });
        conv1_kept_all.push(conv1_kept);
    }

    let fc = Linear {
        path: model.fc.path.clone(),
        weight: Parameter::new(model.fc.weight.value.clone()),
        bias: Parameter::new(model.fc.bias.value.clone()),
    };

    let compact = ResNet {
        spec: model.spec,
        init_seed: model.init_seed,
        stem_conv,
        stem_bn,
        blocks,
        fc,
    };
    Ok(CompactExtraction { model: compact, plan: CompactPlan { stem_kept, conv1_kept: conv1_kept_all } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelSpec;

    fn mask(path: &str, total: usize, pruned: &[usize]) -> FilterMask {
        let mut keep = vec![true; total];
        for &p in pruned {
            keep[p] = false;
        }
        FilterMask { path: path.to_string(), keep }
    }

    #[test]
    fn all_keep_masks_preserve_parameter_count() {
        let model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 5);
        let masks: Vec<FilterMask> = Vec::new();
        let extraction = extract_compact(&model, &masks).unwrap();
        assert_eq!(extraction.model.parameter_count(), model.parameter_count());
        assert_eq!(extraction.plan, CompactPlan::full(&model));
    }

    #[test]
    fn removing_filters_shrinks_parameter_count() {
        let model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 5);
        let masks = vec![mask("stage1.block2.conv1", 16, &[0, 7])];
        let extraction = extract_compact(&model, &masks).unwrap();
        assert!(extraction.model.parameter_count() < model.parameter_count());
    }

    #[test]
    fn wrong_mask_length_is_contract_violation() {
        let model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 5);
        let masks = vec![FilterMask { path: "stage1.block1.conv1".into(), keep: vec![true; 8] }];
        assert!(matches!(extract_compact(&model, &masks), Err(Error::Contract(_))));
    }

    #[test]
    fn empty_keep_set_is_degenerate() {
        let model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 5);
        let masks =
            vec![FilterMask { path: "stage1.block1.conv1".into(), keep: vec![false; 16] }];
        assert!(matches!(extract_compact(&model, &masks), Err(Error::Degenerate(_))));
    }

    #[test]
    fn masks_outside_scope_are_rejected() {
        let model: ResNet<f32> = ResNet::build(ModelSpec::new(20).unwrap(), 5);
        let masks = vec![mask("stage1.block1.conv2", 16, &[0])];
        assert!(matches!(extract_compact(&model, &masks), Err(Error::Contract(_))));
    }
}
