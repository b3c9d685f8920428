//! Fully connected layer: `out = input * weight^T + bias`.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub fn linear_forward<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c) = input.dims2()?;
    let (k, wc) = weight.dims2()?;
    if wc != c || bias.len() != k {
        return Err(Error::contract(format!(
            "linear: input {:?} weight {:?} bias {:?} are inconsistent",
            input.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, k]);
    T::gemm_nt(n, c, k, T::one(), input.data(), weight.data(), T::zero(), out.data_mut());
    for row in out.data_mut().chunks_mut(k) {
        for (o, b) in row.iter_mut().zip(bias.data()) {
            *o = *o + *b;
        }
    }
    Ok(out)
}

/// Returns `(grad_input, grad_weight, grad_bias)`.
pub fn linear_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c) = input.dims2()?;
    let (k, _) = weight.dims2()?;
    if grad_out.shape() != [n, k] {
        return Err(Error::contract(format!(
            "linear backward: grad shape {:?}, expected [{n}, {k}]",
            grad_out.shape()
        )));
    }
    let mut grad_input = Tensor::zeros(&[n, c]);
    T::gemm(n, k, c, T::one(), grad_out.data(), weight.data(), T::zero(), grad_input.data_mut());

    let mut grad_weight = Tensor::zeros(&[k, c]);
    T::gemm_tn(k, n, c, T::one(), grad_out.data(), input.data(), T::zero(), grad_weight.data_mut());

    let mut grad_bias = Tensor::zeros(&[k]);
    for row in grad_out.data().chunks(k) {
        for (g, r) in grad_bias.data_mut().iter_mut().zip(row) {
            *g = *g + *r;
        }
    }
    Ok((grad_input, grad_weight, grad_bias))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_weight_zero_bias_is_identity() {
        let input = Tensor::from_vec(&[2, 3], vec![1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let mut weight = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            weight.data_mut()[i * 3 + i] = 1.0;
        }
        let bias = Tensor::zeros(&[3]);
        let out = linear_forward(&input, &weight, &bias).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn zero_input_yields_bias_rows() {
        let input = Tensor::zeros(&[2, 4]);
        let weight = Tensor::filled(&[3, 4], 0.7f32);
        let bias = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let out = linear_forward(&input, &weight, &bias).unwrap();
        assert_eq!(out.data(), &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let input = Tensor::<f32>::zeros(&[2, 4]);
        let weight = Tensor::<f32>::zeros(&[3, 5]);
        let bias = Tensor::<f32>::zeros(&[3]);
        assert!(linear_forward(&input, &weight, &bias).is_err());
    }
}
