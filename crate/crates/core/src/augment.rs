//! Seeded batch transforms: mixup, cutout, and the standard crop/flip pair.
//!
//! All transforms are pure functions of `(input, config, rng state)`. The
//! rng-free variants (`mixup_batch_with`, `cutout_at`, `pad_crop`, `hflip`)
//! expose the deterministic cores directly.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct MixupConfig {
    /// Beta distribution concentration for the mixing weight.
    pub alpha: f64,
    pub enabled: bool,
}

impl Default for MixupConfig {
    fn default() -> Self {
        MixupConfig { alpha: 1.0, enabled: false }
    }
}

impl MixupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alpha <= 0.0 {
            return Err(Error::config(format!("mixup.alpha must be positive, got {}", self.alpha)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CutoutConfig {
    /// Side length of the zeroed square, in pixels.
    pub mask_size: usize,
    pub enabled: bool,
}

impl Default for CutoutConfig {
    fn default() -> Self {
        CutoutConfig { mask_size: 16, enabled: false }
    }
}

impl CutoutConfig {
    pub fn validate(&self, image_side: usize) -> Result<()> {
        if self.mask_size > 2 * image_side {
            return Err(Error::config(format!(
                "cutout.size {} exceeds twice the image side {image_side}",
                self.mask_size
            )));
        }
        Ok(())
    }
}

/// Draw the batch mixing weight `lambda ~ Beta(alpha, alpha)`.
pub fn sample_mixup_lambda(alpha: f64, rng: &mut rng::SeededRng) -> f64 {
    let beta = Beta::new(alpha, alpha).expect("alpha validated positive");
    beta.sample(rng)
}

/// Mixup on a full batch: draws one lambda and one pairing permutation.
/// Batches of fewer than two samples pass through unchanged with lambda 1.
pub fn mixup_batch(
    images: &Tensor<f32>,
    targets: &Tensor<f32>,
    cfg: &MixupConfig,
    rng: &mut rng::SeededRng,
) -> Result<(Tensor<f32>, Tensor<f32>, f64)> {
    cfg.validate()?;
    let n = images.shape()[0];
    check_one_hot(targets)?;
    if n < 2 {
        return Ok((images.clone(), targets.clone(), 1.0));
    }
    let lambda = sample_mixup_lambda(cfg.alpha, rng);
    let mut perm: Vec<usize> = (0..n).collect();
    use rand::seq::SliceRandom;
    perm.shuffle(rng);
    let (mixed_images, mixed_targets) = mixup_batch_with(images, targets, lambda, &perm)?;
    Ok((mixed_images, mixed_targets, lambda))
}

/// Deterministic mixup core: `x~_i = lambda*x_i + (1-lambda)*x_perm(i)`,
/// same for the targets.
pub fn mixup_batch_with(
    images: &Tensor<f32>,
    targets: &Tensor<f32>,
    lambda: f64,
    perm: &[usize],
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let n = images.shape()[0];
    if targets.shape()[0] != n || perm.len() != n {
        return Err(Error::contract(format!(
            "mixup: images {n}, targets {}, permutation {} rows",
            targets.shape()[0],
            perm.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::contract(format!("mixup lambda {lambda} outside [0, 1]")));
    }
    let l = lambda as f32;
    let mix = |t: &Tensor<f32>| -> Tensor<f32> {
        let row = t.len() / n;
        let src = t.data();
        let mut out = vec![0.0f32; t.len()];
        for i in 0..n {
            let j = perm[i];
            for k in 0..row {
                out[i * row + k] = l * src[i * row + k] + (1.0 - l) * src[j * row + k];
            }
        }
        Tensor::from_vec(t.shape(), out).expect("same shape")
    };
    Ok((mix(images), mix(targets)))
}

fn check_one_hot(targets: &Tensor<f32>) -> Result<()> {
    let (n, k) = targets.dims2()?;
    for i in 0..n {
        let row = &targets.data()[i * k..(i + 1) * k];
        let ones = row.iter().filter(|&&v| v == 1.0).count();
        let zeros = row.iter().filter(|&&v| v == 0.0).count();
        if ones != 1 || zeros != k - 1 {
            return Err(Error::contract(format!("mixup: target row {i} is not one-hot")));
        }
    }
    Ok(())
}

/// Zero a `mask_size` square around a uniformly random center pixel.
pub fn cutout(image: &Tensor<f32>, cfg: &CutoutConfig, rng: &mut rng::SeededRng) -> Result<Tensor<f32>> {
    let (_, h, w) = chw_dims(image)?;
    cfg.validate(h.max(w))?;
    let cy = rng.gen_range(0..h);
    let cx = rng.gen_range(0..w);
    Ok(cutout_at(image, cfg.mask_size, cy, cx))
}

/// Deterministic cutout core: the square spans `mask_size` pixels centered
/// at `(cy, cx)` (offset `-size/2`), clipped to the image bounds.
pub fn cutout_at(image: &Tensor<f32>, mask_size: usize, cy: usize, cx: usize) -> Tensor<f32> {
    let (c, h, w) = chw_dims(image).expect("checked by callers");
    let half = (mask_size / 2) as isize;
    let y0 = (cy as isize - half).max(0) as usize;
    let x0 = (cx as isize - half).max(0) as usize;
    let y1 = ((cy as isize - half) + mask_size as isize).clamp(0, h as isize) as usize;
    let x1 = ((cx as isize - half) + mask_size as isize).clamp(0, w as isize) as usize;

    let mut out = image.clone();
    for ch in 0..c {
        for y in y0..y1 {
            let base = (ch * h + y) * w;
            out.data_mut()[base + x0..base + x1].fill(0.0);
        }
    }
    out
}

/// Zero-pad by `pad` on every side, then crop a `h x w` window at `(dy, dx)`.
pub fn pad_crop(image: &Tensor<f32>, pad: usize, dy: usize, dx: usize) -> Tensor<f32> {
    let (c, h, w) = chw_dims(image).expect("checked by callers");
    assert!(dy <= 2 * pad && dx <= 2 * pad, "crop offset outside the padded frame");
    let mut out = Tensor::zeros(image.shape());
    for ch in 0..c {
        for y in 0..h {
            let src_y = y as isize + dy as isize - pad as isize;
            if src_y < 0 || src_y >= h as isize {
                continue;
            }
            for x in 0..w {
                let src_x = x as isize + dx as isize - pad as isize;
                if src_x < 0 || src_x >= w as isize {
                    continue;
                }
                out.data_mut()[(ch * h + y) * w + x] =
                    image.data()[(ch * h + src_y as usize) * w + src_x as usize];
            }
        }
    }
    out
}

/// Mirror the image horizontally.
pub fn hflip(image: &Tensor<f32>) -> Tensor<f32> {
    let (c, h, w) = chw_dims(image).expect("checked by callers");
    let mut out = image.clone();
    for ch in 0..c {
        for y in 0..h {
            let base = (ch * h + y) * w;
            out.data_mut()[base..base + w].reverse();
        }
    }
    out
}

/// Standard training augmentation: pad 4, random crop, flip with p = 0.5.
pub fn standard_augment(image: &Tensor<f32>, rng: &mut rng::SeededRng) -> Tensor<f32> {
    const PAD: usize = 4;
    let dy = rng.gen_range(0..=2 * PAD);
    let dx = rng.gen_range(0..=2 * PAD);
    let flip: bool = rng.gen_bool(0.5);
    let cropped = pad_crop(image, PAD, dy, dx);
    if flip {
        hflip(&cropped)
    } else {
        cropped
    }
}

fn chw_dims(image: &Tensor<f32>) -> Result<(usize, usize, usize)> {
    match image.shape() {
        [c, h, w] => Ok((*c, *h, *w)),
        other => Err(Error::contract(format!("expected CHW image, got shape {other:?}"))),
    }
}

/// Apply a per-image transform to every sample of an NCHW batch in order.
pub fn map_batch_images(
    batch: &mut Tensor<f32>,
    mut f: impl FnMut(&Tensor<f32>) -> Tensor<f32>,
) {
    let shape = batch.shape().to_vec();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let len = c * h * w;
    for i in 0..n {
        let img = Tensor::from_vec(&[c, h, w], batch.data()[i * len..(i + 1) * len].to_vec())
            .expect("slice of batch");
        let out = f(&img);
        batch.data_mut()[i * len..(i + 1) * len].copy_from_slice(out.data());
    }
}
