//! Global average pooling over the spatial dimensions.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// NCHW -> NC, mean over H and W per channel.
pub fn global_avg_pool_forward<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::Degenerate(format!("global_avg_pool on empty spatial dims {h}x{w}")));
    }
    let plane = h * w;
    let inv = T::one() / T::from_f64(plane as f64);
    let mut out = Tensor::zeros(&[n, c]);
    for b in 0..n {
        for ch in 0..c {
            let base = (b * c + ch) * plane;
            let mut sum = T::zero();
            for i in 0..plane {
                sum = sum + input.data()[base + i];
            }
            out.data_mut()[b * c + ch] = sum * inv;
        }
    }
    Ok(out)
}

/// Adjoint: spreads each channel gradient uniformly as `1/(H*W)`.
pub fn global_avg_pool_backward<T: Scalar>(grad_out: &Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let (n, c) = grad_out.dims2()?;
    let plane = h * w;
    let inv = T::one() / T::from_f64(plane as f64);
    let mut grad_input = Tensor::zeros(&[n, c, h, w]);
    for b in 0..n {
        for ch in 0..c {
            let g = grad_out.data()[b * c + ch] * inv;
            let base = (b * c + ch) * plane;
            grad_input.data_mut()[base..base + plane].fill(g);
        }
    }
    Ok(grad_input)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_pools_to_its_value() {
        let mut input = Tensor::zeros(&[1, 2, 3, 3]);
        input.data_mut()[..9].fill(2.5f32);
        input.data_mut()[9..].fill(-1.0f32);
        let out = global_avg_pool_forward(&input).unwrap();
        assert_eq!(out.data(), &[2.5, -1.0]);
    }

    #[test]
    fn one_by_one_spatial_is_identity_on_channels() {
        let input = Tensor::from_vec(&[2, 3, 1, 1], (0..6).map(|i| i as f32).collect()).unwrap();
        let out = global_avg_pool_forward(&input).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn gradient_is_uniform_spread() {
        let go = Tensor::from_vec(&[1, 1], vec![8.0f32]).unwrap();
        let gi = global_avg_pool_backward(&go, 2, 2).unwrap();
        assert_eq!(gi.data(), &[2.0, 2.0, 2.0, 2.0]);
    }
}
