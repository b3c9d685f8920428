//! Elementwise activations.

use crate::tensor::{Scalar, Tensor};

/// `max(0, x)` elementwise.
pub fn relu_forward<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// ReLU adjoint. The subgradient at exactly zero is taken as zero.
pub fn relu_backward<T: Scalar>(grad_out: &Tensor<T>, pre_activation: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!(grad_out.shape(), pre_activation.shape());
    let data = grad_out
        .data()
        .iter()
        .zip(pre_activation.data())
        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data).expect("shapes checked above")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamps_negatives() {
        let x = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn all_negative_input_blocks_gradient() {
        let x = Tensor::filled(&[4], -3.0f32);
        let g = Tensor::filled(&[4], 1.0f32);
        assert!(relu_forward(&x).data().iter().all(|&v| v == 0.0));
        assert!(relu_backward(&g, &x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_gets_zero_subgradient() {
        let x = Tensor::from_vec(&[2], vec![0.0f32, 1.0]).unwrap();
        let g = Tensor::filled(&[2], 5.0f32);
        assert_eq!(relu_backward(&g, &x).data(), &[0.0, 5.0]);
    }
}
