//! Multiply-accumulate cost accounting.
//!
//! One FLOP here is one multiply-accumulate; batch norm, ReLU, pooling, and
//! residual adds are excluded. Reports exist in two flavors:
//!
//! * physical accounting of an actual (masked or compact) model, always
//!   integer channel counts, used for the masked/compact equality checks and
//!   per-epoch metrics;
//! * policy accounting over an architecture at a given keep ratio, covering
//!   several candidate conventions for how pruning propagates channel counts
//!   (fractional conventions included). The `Calibrated` policy is the one
//!   whose numbers line up with the published per-depth costs.

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ResNet};
use crate::prune::FilterMask;
use crate::tensor::Scalar;

/// Cost of a single layer. Channel counts are reals because fractional
/// policies scale them continuously; physical reports hold exact integers.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerCost {
    pub path: String,
    pub h_out: usize,
    pub w_out: usize,
    pub kernel: usize,
    pub c_in: f64,
    pub c_out: f64,
    pub macs: u64,
}

/// Per-layer costs plus the total.
#[derive(Debug, Clone, PartialEq)]
pub struct FlopReport {
    pub layers: Vec<LayerCost>,
}

impl FlopReport {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn mega_flops(&self) -> f64 {
        self.total_macs() as f64 / 1e6
    }

    /// Aligned text rendering, total in MegaFLOPs to two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<22} {:>5} {:>5} {:>3} {:>8} {:>8} {:>12}\n",
            "layer", "h_out", "w_out", "k", "c_in", "c_out", "macs"
        ));
        for l in &self.layers {
            out.push_str(&format!(
                "{:<22} {:>5} {:>5} {:>3} {:>8} {:>8} {:>12}\n",
                l.path,
                l.h_out,
                l.w_out,
                l.kernel,
                format_channels(l.c_in),
                format_channels(l.c_out),
                l.macs
            ));
        }
        out.push_str(&format!("total: {} MACs = {:.2} MegaFLOPs\n", self.total_macs(), self.mega_flops()));
        out
    }

    /// Machine-readable comma-separated rendering.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("layer,h_out,w_out,k,c_in,c_out,macs\n");
        for l in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                l.path,
                l.h_out,
                l.w_out,
                l.kernel,
                format_channels(l.c_in),
                format_channels(l.c_out),
                l.macs
            ));
        }
        out
    }
}

fn format_channels(c: f64) -> String {
    if c.fract() == 0.0 {
        format!("{}", c as u64)
    } else {
        format!("{c}")
    }
}

/// `h_out * w_out * k^2 * c_in * c_out`.
pub fn conv_macs(c_in: usize, c_out: usize, k: usize, h_out: usize, w_out: usize) -> u64 {
    (h_out * w_out * k * k * c_in * c_out) as u64
}

/// Percentage decrease of `pruned` relative to `dense`, one decimal place.
pub fn flop_delta(dense: &FlopReport, pruned: &FlopReport) -> f64 {
    let d = dense.total_macs() as f64;
    let p = pruned.total_macs() as f64;
    (1000.0 * (1.0 - p / d)).round() / 10.0
}

/// Channel-count conventions for policy reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlopPolicy {
    /// Full-width model; the keep ratio is ignored.
    Dense,
    /// Exact-fraction accounting that reproduces the published pruned costs:
    /// every convolution keeps the fraction `r` of its outputs; inputs stay
    /// full where a residual add feeds them, and chain (also fraction `r`)
    /// into block-second convolutions, stage-entry convolutions, the stem
    /// output, and the classifier.
    Calibrated,
    /// Exact fractions, inputs chained through every consecutive conv pair.
    FractionalChained,
    /// Exact fractions applied to outputs only; all inputs full width.
    FractionalUniform,
    /// Integer masks on the stem and block-internal convolutions; block
    /// outputs keep full width (the physically maskable scope).
    MaskedBlockInternal,
    /// Integer stage-wide channel pruning: block outputs and shortcuts thin
    /// together and counts chain through the stage; stem unpruned.
    MaskedStageChannel,
    /// Integer masks on every convolution with residual adds restoring full
    /// width between blocks.
    MaskedAllConv,
}

impl FlopPolicy {
    pub const ALL: [FlopPolicy; 7] = [
        FlopPolicy::Dense,
        FlopPolicy::Calibrated,
        FlopPolicy::FractionalChained,
        FlopPolicy::FractionalUniform,
        FlopPolicy::MaskedBlockInternal,
        FlopPolicy::MaskedStageChannel,
        FlopPolicy::MaskedAllConv,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            FlopPolicy::Dense => "dense",
            FlopPolicy::Calibrated => "calibrated",
            FlopPolicy::FractionalChained => "fractional-chained",
            FlopPolicy::FractionalUniform => "fractional-uniform",
            FlopPolicy::MaskedBlockInternal => "block-internal",
            FlopPolicy::MaskedStageChannel => "stage-channel",
            FlopPolicy::MaskedAllConv => "all-conv",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|p| p.name() == s)
            .copied()
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|p| p.name()).collect();
                Error::config(format!("unknown scope policy `{s}`; expected one of {names:?}"))
            })
    }
}

/// Integer kept-filter count: `C - floor(C * (1 - r))`.
fn kept_int(c: usize, r: f64) -> f64 {
    (c - (c as f64 * (1.0 - r)).floor() as usize) as f64
}

struct LayerGeom {
    path: String,
    side: usize,
    kernel: usize,
    c_in: usize,
    c_out: usize,
    /// Position in the architecture, used by policies to pick scalings.
    kind: LayerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LayerKind {
    Stem,
    /// conv1 of the first block of stage 1: fed by the stem.
    Conv1AfterStem,
    /// conv1 of the first block of stages 2 and 3: fed across a stage boundary.
    Conv1StageEntry,
    /// conv1 of any other block: fed by a residual add.
    Conv1Interior,
    Conv2,
    Classifier,
}

fn architecture_layers(spec: &ModelSpec) -> Vec<LayerGeom> {
    let n = spec.blocks_per_stage();
    let mut layers = Vec::with_capacity(2 + 6 * n);
    layers.push(LayerGeom {
        path: "stem.conv".to_string(),
        side: ModelSpec::INPUT_SIDE,
        kernel: 3,
        c_in: ModelSpec::INPUT_CHANNELS,
        c_out: ModelSpec::STAGE_CHANNELS[0],
        kind: LayerKind::Stem,
    });
    for stage in 0..3 {
        let c = ModelSpec::STAGE_CHANNELS[stage];
        let side = ModelSpec::stage_side(stage);
        for b in 0..n {
            let kind = if b == 0 {
                if stage == 0 {
                    LayerKind::Conv1AfterStem
                } else {
                    LayerKind::Conv1StageEntry
                }
            } else {
                LayerKind::Conv1Interior
            };
            let c_in = if b == 0 && stage > 0 { ModelSpec::STAGE_CHANNELS[stage - 1] } else { c };
            let prefix = format!("stage{}.block{}", stage + 1, b + 1);
            layers.push(LayerGeom {
                path: format!("{prefix}.conv1"),
                side,
                kernel: 3,
                c_in,
                c_out: c,
                kind,
            });
            layers.push(LayerGeom {
                path: format!("{prefix}.conv2"),
                side,
                kernel: 3,
                c_in: c,
                c_out: c,
                kind: LayerKind::Conv2,
            });
        }
    }
    layers.push(LayerGeom {
        path: "fc".to_string(),
        side: 1,
        kernel: 1,
        c_in: ModelSpec::STAGE_CHANNELS[2],
        c_out: ModelSpec::NUM_CLASSES,
        kind: LayerKind::Classifier,
    });
    layers
}

/// Cost of an architecture at a keep ratio under a channel-count policy.
pub fn model_flops(spec: &ModelSpec, keep_ratio: f64, policy: FlopPolicy) -> Result<FlopReport> {
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::config(format!("keep ratio must lie in (0, 1], got {keep_ratio}")));
    }
    let r = keep_ratio;
    let mut layers = Vec::new();
    // Chained integer width for the stage-channel policy.
    let mut chain_width = ModelSpec::STAGE_CHANNELS[0] as f64;
    for geom in architecture_layers(spec) {
        let full_in = geom.c_in as f64;
        let full_out = geom.c_out as f64;
        let (c_in, c_out) = match policy {
            FlopPolicy::Dense => (full_in, full_out),
            FlopPolicy::Calibrated => match geom.kind {
                LayerKind::Stem => (full_in, r * full_out),
                LayerKind::Conv1AfterStem | LayerKind::Conv1Interior => (full_in, r * full_out),
                LayerKind::Conv1StageEntry => (r * full_in, r * full_out),
                LayerKind::Conv2 => (r * full_in, r * full_out),
                LayerKind::Classifier => (r * full_in, full_out),
            },
            FlopPolicy::FractionalChained => match geom.kind {
                LayerKind::Stem => (full_in, r * full_out),
                LayerKind::Classifier => (r * full_in, full_out),
                _ => (r * full_in, r * full_out),
            },
            FlopPolicy::FractionalUniform => match geom.kind {
                LayerKind::Classifier => (full_in, full_out),
                _ => (full_in, r * full_out),
            },
            FlopPolicy::MaskedBlockInternal => match geom.kind {
                LayerKind::Stem => (full_in, kept_int(geom.c_out, r)),
                LayerKind::Conv1AfterStem => (kept_int(geom.c_in, r), kept_int(geom.c_out, r)),
                LayerKind::Conv1StageEntry | LayerKind::Conv1Interior => {
                    (full_in, kept_int(geom.c_out, r))
                }
                LayerKind::Conv2 => (kept_int(geom.c_in, r), full_out),
                LayerKind::Classifier => (full_in, full_out),
            },
            FlopPolicy::MaskedStageChannel => match geom.kind {
                LayerKind::Stem => (full_in, full_out),
                LayerKind::Classifier => (kept_int(geom.c_in, r), full_out),
                _ => {
                    let c_in = chain_width;
                    let c_out = kept_int(geom.c_out, r);
                    chain_width = c_out;
                    (c_in, c_out)
                }
            },
            FlopPolicy::MaskedAllConv => match geom.kind {
                LayerKind::Stem => (full_in, kept_int(geom.c_out, r)),
                LayerKind::Conv1AfterStem | LayerKind::Conv1StageEntry | LayerKind::Conv1Interior => {
                    (full_in, kept_int(geom.c_out, r))
                }
                LayerKind::Conv2 => (kept_int(geom.c_in, r), kept_int(geom.c_out, r)),
                LayerKind::Classifier => (full_in, full_out),
            },
        };
        layers.push(layer_cost(&geom, c_in, c_out));
    }
    Ok(FlopReport { layers })
}

fn layer_cost(geom: &LayerGeom, c_in: f64, c_out: f64) -> LayerCost {
    let spatial = (geom.side * geom.side * geom.kernel * geom.kernel) as f64;
    LayerCost {
        path: geom.path.clone(),
        h_out: geom.side,
        w_out: geom.side,
        kernel: geom.kernel,
        c_in,
        c_out,
        macs: (spatial * c_in * c_out).round() as u64,
    }
}

/// Physical cost of a dense model carrying soft-pruning masks: every count
/// is the number of live channels actually multiplied at inference time.
pub fn masked_model_flops<T: Scalar>(model: &ResNet<T>, masks: &[FilterMask]) -> Result<FlopReport> {
    let kept = |path: &str, full: usize| -> Result<usize> {
        match masks.iter().find(|m| m.path == path) {
            None => Ok(full),
            Some(m) => {
                if m.keep.len() != full {
                    return Err(Error::contract(format!(
                        "mask for {path} has {} entries, layer has {full} filters",
                        m.keep.len()
                    )));
                }
                Ok(m.kept_count())
            }
        }
    };
    for m in masks {
        let valid = m.path == model.stem_conv.path
            || model.blocks.iter().any(|b| b.conv1.path == m.path);
        if !valid {
            return Err(Error::contract(format!(
                "mask targets layer {}, which is outside the prunable scope",
                m.path
            )));
        }
    }

    let mut layers = Vec::new();
    let stem_kept = kept(&model.stem_conv.path, model.stem_conv.out_channels())?;
    layers.push(physical_cost(
        &model.stem_conv.path,
        ModelSpec::INPUT_SIDE,
        3,
        model.stem_conv.in_channels(),
        stem_kept,
    ));
    let mut side = ModelSpec::INPUT_SIDE;
    for (i, block) in model.blocks.iter().enumerate() {
        if block.conv1.stride == 2 {
            side /= 2;
        }
        let input_width = if i == 0 { stem_kept } else { block.conv1.in_channels() };
        let conv1_kept = kept(&block.conv1.path, block.conv1.out_channels())?;
        layers.push(physical_cost(&block.conv1.path, side, 3, input_width, conv1_kept));
        layers.push(physical_cost(&block.conv2.path, side, 3, conv1_kept, block.conv2.out_channels()));
    }
    let (classes, feat) = model.fc.weight.value.dims2()?;
    layers.push(physical_cost(&model.fc.path, 1, 1, feat, classes));
    Ok(FlopReport { layers })
}

/// Physical cost of a model read off its actual layer shapes.
pub fn compact_model_flops<T: Scalar>(model: &ResNet<T>) -> Result<FlopReport> {
    let mut layers = Vec::new();
    layers.push(physical_cost(
        &model.stem_conv.path,
        ModelSpec::INPUT_SIDE,
        3,
        model.stem_conv.in_channels(),
        model.stem_conv.out_channels(),
    ));
    let mut side = ModelSpec::INPUT_SIDE;
    for block in &model.blocks {
        if block.conv1.stride == 2 {
            side /= 2;
        }
        layers.push(physical_cost(
            &block.conv1.path,
            side,
            3,
            block.conv1.in_channels(),
            block.conv1.out_channels(),
        ));
        layers.push(physical_cost(
            &block.conv2.path,
            side,
            3,
            block.conv2.in_channels(),
            block.conv2.out_channels(),
        ));
    }
    let (classes, feat) = model.fc.weight.value.dims2()?;
    layers.push(physical_cost(&model.fc.path, 1, 1, feat, classes));
    Ok(FlopReport { layers })
}

fn physical_cost(path: &str, side: usize, kernel: usize, c_in: usize, c_out: usize) -> LayerCost {
    LayerCost {
        path: path.to_string(),
        h_out: side,
        w_out: side,
        kernel,
        c_in: c_in as f64,
        c_out: c_out as f64,
        macs: conv_macs(c_in, c_out, kernel, side, side),
    }
}
