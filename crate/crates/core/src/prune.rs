//! Soft filter pruning.
//!
//! Each pruning step ranks a layer's output filters by l_p norm, zeroes the
//! lowest-ranked ones together with their batch-norm channels, then lets
//! ordinary training regrow them. Filters are only physically removed at the
//! very end, after a final zeroing pass, via [`finalize_compact`].

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{extract_compact, CompactExtraction, ResNet};
use crate::rng;
use crate::tensor::{Scalar, Tensor};

/// Weight added to every norm in stochastic selection so all-zero layers
/// still form a valid distribution.
const STOCHASTIC_EPS: f64 = 1e-12;

/// Per-layer boolean keep-vector over output filters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    pub path: String,
    pub keep: Vec<bool>,
}

impl FilterMask {
    pub fn pruned_count(&self) -> usize {
        self.keep.iter().filter(|&&k| !k).count()
    }

    pub fn kept_count(&self) -> usize {
        self.keep.len() - self.pruned_count()
    }
}

/// How filters are chosen for pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionMode {
    /// Deterministically prune the smallest-norm filters (ties: lower index).
    #[default]
    SmallestNorm,
    /// Sample without replacement with probability proportional to norm + eps.
    StochasticByNorm,
}

impl SelectionMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "smallest_norm" => Ok(SelectionMode::SmallestNorm),
            "stochastic_by_norm" => Ok(SelectionMode::StochasticByNorm),
            other => Err(Error::config(format!(
                "unknown selection mode `{other}` (expected smallest_norm or stochastic_by_norm)"
            ))),
        }
    }
}

/// Which convolution layers are maskable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PruneScope {
    /// The stem plus every block's first convolution. Block-ending
    /// convolutions keep full width so residual adds stay intact.
    #[default]
    BlockInternal,
    /// Block-internal convolutions only; the stem keeps full width.
    Conv1Only,
}

impl PruneScope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "block-internal" => Ok(PruneScope::BlockInternal),
            "conv1-only" => Ok(PruneScope::Conv1Only),
            other => Err(Error::config(format!(
                "unknown prune scope `{other}` (expected block-internal or conv1-only)"
            ))),
        }
    }

    pub fn includes_stem(&self) -> bool {
        matches!(self, PruneScope::BlockInternal)
    }
}

/// The full pruning schedule configuration.
#[derive(Debug, Clone, Copy)]
pub struct PruneSchedule {
    /// Fraction of filters retained per in-scope layer each step.
    pub keep_ratio: f64,
    pub p_norm: f64,
    pub mode: SelectionMode,
    pub scope: PruneScope,
    /// Prune every `frequency` epochs.
    pub frequency: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule {
            keep_ratio: 0.9,
            p_norm: 2.0,
            mode: SelectionMode::SmallestNorm,
            scope: PruneScope::BlockInternal,
            frequency: 1,
        }
    }
}

impl PruneSchedule {
    pub fn validate(&self) -> Result<()> {
        if !(self.keep_ratio > 0.0 && self.keep_ratio <= 1.0) {
            return Err(Error::config(format!(
                "prune.keep_ratio must lie in (0, 1], got {}",
                self.keep_ratio
            )));
        }
        if self.p_norm <= 0.0 {
            return Err(Error::config(format!("prune.p must be positive, got {}", self.p_norm)));
        }
        if self.frequency == 0 {
            return Err(Error::config("prune.frequency must be at least 1".to_string()));
        }
        Ok(())
    }
}

/// Number of filters pruned from a layer of `filters` outputs.
pub fn pruned_filter_count(filters: usize, keep_ratio: f64) -> usize {
    (filters as f64 * (1.0 - keep_ratio)).floor() as usize
}

/// l_p norm of each output filter's weight slab.
pub fn compute_filter_norms<T: Scalar>(weight: &Tensor<T>, p: f64) -> Vec<f64> {
    let dims = weight.shape();
    let row = dims[1..].iter().product::<usize>();
    weight
        .data()
        .chunks(row)
        .map(|slab| {
            let sum: f64 = slab.iter().map(|w| w.as_f64().abs().powf(p)).sum();
            sum.powf(1.0 / p)
        })
        .collect()
}

/// Choose the indices to prune. Returned indices are ascending.
pub fn select_filters(
    norms: &[f64],
    keep_ratio: f64,
    mode: SelectionMode,
    rng: &mut rng::SeededRng,
) -> Result<Vec<usize>> {
    if norms.is_empty() {
        return Err(Error::contract("select_filters on an empty norm vector".to_string()));
    }
    if !(keep_ratio > 0.0 && keep_ratio <= 1.0) {
        return Err(Error::config(format!("keep_ratio must lie in (0, 1], got {keep_ratio}")));
    }
    let count = pruned_filter_count(norms.len(), keep_ratio);
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut picked = match mode {
        SelectionMode::SmallestNorm => {
            let mut order: Vec<usize> = (0..norms.len()).collect();
            order.sort_by(|&a, &b| {
                norms[a].partial_cmp(&norms[b]).expect("norms are finite").then(a.cmp(&b))
            });
            order.truncate(count);
            order
        }
        SelectionMode::StochasticByNorm => {
            let mut weights: Vec<f64> = norms.iter().map(|n| n + STOCHASTIC_EPS).collect();
            let mut picked = Vec::with_capacity(count);
            for _ in 0..count {
                let total: f64 = weights.iter().sum();
                let mut u = rng.gen_range(0.0..total);
                let mut chosen = weights.len() - 1;
                for (i, &w) in weights.iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    if u < w {
                        chosen = i;
                        break;
                    }
                    u -= w;
                }
                picked.push(chosen);
                weights[chosen] = 0.0;
            }
            picked
        }
    };
    picked.sort_unstable();
    Ok(picked)
}

fn zero_filter<T: Scalar>(weight: &mut Tensor<T>, index: usize) {
    let row: usize = weight.shape()[1..].iter().product();
    weight.data_mut()[index * row..(index + 1) * row].fill(T::zero());
}

fn zero_bn_channel<T: Scalar>(bn: &mut crate::model::BatchNorm2d<T>, index: usize) {
    bn.gamma.value.data_mut()[index] = T::zero();
    bn.beta.value.data_mut()[index] = T::zero();
    bn.running_mean.data_mut()[index] = T::zero();
    bn.running_var.data_mut()[index] = T::zero();
}

/// One soft-pruning step: zero the selected filters of every in-scope layer
/// (weights plus matching batch-norm channels) and report the masks.
pub fn apply_soft_prune<T: Scalar>(
    model: &mut ResNet<T>,
    schedule: &PruneSchedule,
    rng: &mut rng::SeededRng,
) -> Result<Vec<FilterMask>> {
    schedule.validate()?;
    let mut masks = Vec::new();

    // Stem first, then blocks in order, so rng consumption is well defined.
    if schedule.scope.includes_stem() {
        let norms = compute_filter_norms(&model.stem_conv.weight.value, schedule.p_norm);
        let pruned = select_filters(&norms, schedule.keep_ratio, schedule.mode, rng)?;
        let mut keep = vec![true; norms.len()];
        for &i in &pruned {
            keep[i] = false;
            zero_filter(&mut model.stem_conv.weight.value, i);
        }
        let stem_bn = &mut model.stem_bn;
        for &i in &pruned {
            zero_bn_channel(stem_bn, i);
        }
        masks.push(FilterMask { path: model.stem_conv.path.clone(), keep });
    }
    for block in model.blocks.iter_mut() {
        let norms = compute_filter_norms(&block.conv1.weight.value, schedule.p_norm);
        let pruned = select_filters(&norms, schedule.keep_ratio, schedule.mode, rng)?;
        let mut keep = vec![true; norms.len()];
        for &i in &pruned {
            keep[i] = false;
            zero_filter(&mut block.conv1.weight.value, i);
            zero_bn_channel(&mut block.bn1, i);
        }
        masks.push(FilterMask { path: block.conv1.path.clone(), keep });
    }
    Ok(masks)
}

/// Mask sets recorded at each pruning event, in order.
pub type MaskHistory = Vec<Vec<FilterMask>>;

/// Alternate pruning and training: prune at every epoch divisible by the
/// schedule frequency, train one epoch, repeat; always finish with one more
/// pruning pass so zero filters are exact at extraction time.
///
/// Per-event randomness comes from stream `epoch` of `prune_seed`, so a run
/// resumed at any epoch reproduces the same masks.
pub fn sfp_epoch_loop<T, F>(
    model: &mut ResNet<T>,
    schedule: &PruneSchedule,
    prune_seed: u64,
    epochs: usize,
    mut train_one_epoch: F,
) -> Result<MaskHistory>
where
    T: Scalar,
    F: FnMut(&mut ResNet<T>, usize) -> Result<()>,
{
    schedule.validate()?;
    let mut history = MaskHistory::new();
    for epoch in 0..epochs {
        if epoch % schedule.frequency == 0 {
            let mut rng = rng::stream(prune_seed, epoch as u64);
            history.push(apply_soft_prune(model, schedule, &mut rng)?);
        }
        train_one_epoch(model, epoch)?;
    }
    let mut rng = rng::stream(prune_seed, epochs as u64);
    history.push(apply_soft_prune(model, schedule, &mut rng)?);
    Ok(history)
}

/// Detect the exactly-zero filters left by the final pruning pass and
/// extract the compact model.
pub fn finalize_compact<T: Scalar>(model: &ResNet<T>, schedule: &PruneSchedule) -> Result<CompactExtraction<T>> {
    schedule.validate()?;
    let masks = zero_filter_masks(model, schedule.scope);
    extract_compact(model, &masks)
}

/// Masks marking exactly-zero filters of the in-scope layers.
pub fn zero_filter_masks<T: Scalar>(model: &ResNet<T>, scope: PruneScope) -> Vec<FilterMask> {
    let mut masks = Vec::new();
    let mut push = |path: &str, weight: &Tensor<T>| {
        let norms = compute_filter_norms(weight, 2.0);
        let keep: Vec<bool> = norms.iter().map(|&n| n != 0.0).collect();
        if keep.iter().any(|&k| !k) {
            masks.push(FilterMask { path: path.to_string(), keep });
        }
    };
    if scope.includes_stem() {
        push(&model.stem_conv.path, &model.stem_conv.weight.value);
    }
    for block in &model.blocks {
        push(&block.conv1.path, &block.conv1.weight.value);
    }
    masks
}
