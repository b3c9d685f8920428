//! Per-channel batch normalization over NCHW tensors.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Values cached by the training-mode forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T: Scalar> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<T>,
}

fn check_channel_vectors<T: Scalar>(c: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    if gamma.len() != c || beta.len() != c {
        return Err(Error::contract(format!(
            "batchnorm: gamma/beta lengths {}/{} do not match {c} channels",
            gamma.len(),
            beta.len()
        )));
    }
    Ok(())
}

/// Normalize with batch statistics and update the running estimates in place.
///
/// Variance is the biased (population) estimate, both for normalization and
/// for the running average; the two paths stay mutually consistent that way.
pub fn batchnorm2d_forward_train<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    momentum: f64,
    eps: f64,
) -> Result<(Tensor<T>, BnCache<T>)> {
    let (n, c, h, w) = input.dims4()?;
    check_channel_vectors(c, gamma, beta)?;
    let m = n * h * w;
    if m == 0 {
        return Err(Error::Degenerate(format!(
            "batchnorm over zero elements per channel (input shape {:?})",
            input.shape()
        )));
    }

    let plane = h * w;
    let sample = c * plane;
    let data = input.data();

    // (mean, inv_std) per channel.
    let stats: Vec<(T, T)> = par::map_indexed(c, |ch| {
        let mut sum = T::zero();
        for b in 0..n {
            let base = b * sample + ch * plane;
            for i in 0..plane {
                sum = sum + data[base + i];
            }
        }
        let mean = sum / T::from_f64(m as f64);
        let mut var_sum = T::zero();
        for b in 0..n {
            let base = b * sample + ch * plane;
            for i in 0..plane {
                let d = data[base + i] - mean;
                var_sum = var_sum + d * d;
            }
        }
        let var = var_sum / T::from_f64(m as f64);
        let inv_std = T::one() / (var + T::from_f64(eps)).sqrt();
        (mean, inv_std)
    });

    let mom = T::from_f64(momentum);
    let keep = T::one() - mom;
    for ch in 0..c {
        let (mean, inv_std) = stats[ch];
        let var = T::one() / (inv_std * inv_std) - T::from_f64(eps);
        running_mean.data_mut()[ch] = keep * running_mean.data()[ch] + mom * mean;
        running_var.data_mut()[ch] = keep * running_var.data()[ch] + mom * var;
    }

    let mut x_hat = Tensor::zeros(input.shape());
    par::for_each_chunk_mut(x_hat.data_mut(), sample, |b, chunk| {
        for ch in 0..c {
            let (mean, inv_std) = stats[ch];
            let src = &data[b * sample + ch * plane..b * sample + (ch + 1) * plane];
            let dst = &mut chunk[ch * plane..(ch + 1) * plane];
            for i in 0..plane {
                dst[i] = (src[i] - mean) * inv_std;
            }
        }
    });

    let out = affine(&x_hat, gamma, beta, c, plane, sample);
    let inv_std = stats.iter().map(|&(_, s)| s).collect();
    Ok((out, BnCache { x_hat, inv_std }))
}

/// Normalize with the stored running statistics (inference mode).
pub fn batchnorm2d_forward_eval<T: Scalar>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    let (_, c, h, w) = input.dims4()?;
    check_channel_vectors(c, gamma, beta)?;
    let plane = h * w;
    let sample = c * plane;
    let data = input.data();
    let mut out = Tensor::zeros(input.shape());
    par::for_each_chunk_mut(out.data_mut(), sample, |b, chunk| {
        for ch in 0..c {
            let inv_std = T::one() / (running_var.data()[ch] + T::from_f64(eps)).sqrt();
            let mean = running_mean.data()[ch];
            let g = gamma.data()[ch];
            let bt = beta.data()[ch];
            let src = &data[b * sample + ch * plane..b * sample + (ch + 1) * plane];
            let dst = &mut chunk[ch * plane..(ch + 1) * plane];
            for i in 0..plane {
                dst[i] = g * (src[i] - mean) * inv_std + bt;
            }
        }
    });
    Ok(out)
}

fn affine<T: Scalar>(
    x_hat: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    c: usize,
    plane: usize,
    sample: usize,
) -> Tensor<T> {
    let mut out = Tensor::zeros(x_hat.shape());
    let src_all = x_hat.data();
    par::for_each_chunk_mut(out.data_mut(), sample, |b, chunk| {
        for ch in 0..c {
            let g = gamma.data()[ch];
            let bt = beta.data()[ch];
            let src = &src_all[b * sample + ch * plane..b * sample + (ch + 1) * plane];
            let dst = &mut chunk[ch * plane..(ch + 1) * plane];
            for i in 0..plane {
                dst[i] = g * src[i] + bt;
            }
        }
    });
    out
}

/// Backward pass for training mode: returns `(grad_input, grad_gamma, grad_beta)`.
pub fn batchnorm2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cache: &BnCache<T>,
    gamma: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = grad_out.dims4()?;
    if cache.x_hat.shape() != grad_out.shape() {
        return Err(Error::contract(format!(
            "batchnorm backward: cache shape {:?} vs grad shape {:?}",
            cache.x_hat.shape(),
            grad_out.shape()
        )));
    }
    let plane = h * w;
    let sample = c * plane;
    let m = T::from_f64((n * plane) as f64);
    let go = grad_out.data();
    let xh = cache.x_hat.data();

    // Per-channel reductions: sum(dy) and sum(dy * x_hat).
    let sums: Vec<(T, T)> = par::map_indexed(c, |ch| {
        let mut s = T::zero();
        let mut sx = T::zero();
        for b in 0..n {
            let base = b * sample + ch * plane;
            for i in 0..plane {
                s = s + go[base + i];
                sx = sx + go[base + i] * xh[base + i];
            }
        }
        (s, sx)
    });

    let grad_beta = Tensor::from_vec(&[c], sums.iter().map(|&(s, _)| s).collect())?;
    let grad_gamma = Tensor::from_vec(&[c], sums.iter().map(|&(_, sx)| sx).collect())?;

    let mut grad_input = Tensor::zeros(grad_out.shape());
    par::for_each_chunk_mut(grad_input.data_mut(), sample, |b, chunk| {
        for ch in 0..c {
            let (s, sx) = sums[ch];
            let coeff = gamma.data()[ch] * cache.inv_std[ch];
            let mean_dy = s / m;
            let mean_dy_xhat = sx / m;
            let base = b * sample + ch * plane;
            let dst = &mut chunk[ch * plane..(ch + 1) * plane];
            for i in 0..plane {
                dst[i] = coeff * (go[base + i] - mean_dy - xh[base + i] * mean_dy_xhat);
            }
        }
    });
    Ok((grad_input, grad_gamma, grad_beta))
}
