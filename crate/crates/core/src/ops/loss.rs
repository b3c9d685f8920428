//! Softmax cross entropy against soft target distributions.
//!
//! Targets are full distributions rather than class indices because mixup
//! produces convex combinations of one-hot rows.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

const TARGET_ROW_TOLERANCE: f64 = 1e-6;

/// Mean over the batch of `-sum_k t_k * log softmax(logits)_k`, with the
/// max-subtraction trick for stability. Also returns `d loss / d logits`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    targets: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    let (n, k) = logits.dims2()?;
    if targets.shape() != [n, k] {
        return Err(Error::contract(format!(
            "cross entropy: logits {:?} vs targets {:?}",
            logits.shape(),
            targets.shape()
        )));
    }
    for (row_idx, row) in targets.data().chunks(k).enumerate() {
        let mut sum = 0.0f64;
        for &t in row {
            if t < T::zero() {
                return Err(Error::contract(format!(
                    "cross entropy: target row {row_idx} has a negative entry"
                )));
            }
            sum += t.as_f64();
        }
        if (sum - 1.0).abs() > TARGET_ROW_TOLERANCE {
            return Err(Error::contract(format!(
                "cross entropy: target row {row_idx} sums to {sum}, not 1"
            )));
        }
    }

    let inv_n = T::one() / T::from_f64(n as f64);
    let mut grad = Tensor::zeros(&[n, k]);
    let mut loss = 0.0f64;
    for row_idx in 0..n {
        let l_row = &logits.data()[row_idx * k..(row_idx + 1) * k];
        let t_row = &targets.data()[row_idx * k..(row_idx + 1) * k];
        let g_row = &mut grad.data_mut()[row_idx * k..(row_idx + 1) * k];

        let max = l_row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for &l in l_row {
            denom = denom + (l - max).exp();
        }
        let log_denom = denom.ln();
        for j in 0..k {
            let log_softmax = l_row[j] - max - log_denom;
            loss -= t_row[j].as_f64() * log_softmax.as_f64();
            let softmax = log_softmax.exp();
            g_row[j] = (softmax - t_row[j]) * inv_n;
        }
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_one_hot_target_is_ln_k() {
        let logits = Tensor::zeros(&[1, 10]);
        let mut targets = Tensor::zeros(&[1, 10]);
        targets.data_mut()[3] = 1.0f32;
        let (loss, _) = softmax_cross_entropy(&logits, &targets).unwrap();
        assert!((loss - (10.0f64).ln()).abs() < 1e-6, "loss {loss}");
    }

    #[test]
    fn target_equal_to_softmax_gives_zero_grad() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.2f64, -0.7, 1.1]).unwrap();
        let max = 1.1f64;
        let exps: Vec<f64> = [0.2, -0.7, 1.1].iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let targets = Tensor::from_vec(&[1, 3], exps.iter().map(|e| e / denom).collect()).unwrap();
        let (_, grad) = softmax_cross_entropy(&logits, &targets).unwrap();
        for &g in grad.data() {
            assert!(g.abs() < 1e-12, "grad entry {g}");
        }
    }

    #[test]
    fn loss_is_linear_in_the_target() {
        // CE against a lambda-mixed target equals the mix of the two CEs.
        let logits = Tensor::from_vec(&[2, 4], vec![0.3f64, -1.0, 2.0, 0.1, 1.5, 0.0, -0.5, 0.7]).unwrap();
        let mut t_i = Tensor::zeros(&[2, 4]);
        t_i.data_mut()[1] = 1.0;
        t_i.data_mut()[4 + 2] = 1.0;
        let mut t_j = Tensor::zeros(&[2, 4]);
        t_j.data_mut()[3] = 1.0;
        t_j.data_mut()[4] = 1.0;

        let lambda = 0.3;
        let mixed = Tensor::from_vec(
            &[2, 4],
            t_i.data().iter().zip(t_j.data()).map(|(&a, &b)| lambda * a + (1.0 - lambda) * b).collect(),
        )
        .unwrap();

        let (l_mixed, _) = softmax_cross_entropy(&logits, &mixed).unwrap();
        let (l_i, _) = softmax_cross_entropy(&logits, &t_i).unwrap();
        let (l_j, _) = softmax_cross_entropy(&logits, &t_j).unwrap();
        assert!((l_mixed - (lambda * l_i + (1.0 - lambda) * l_j)).abs() < 1e-6);
    }

    #[test]
    fn shift_invariance_per_row() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.5f64, 1.5, -2.0]).unwrap();
        let shifted = logits.map(|v| v + 123.25);
        let mut targets = Tensor::zeros(&[1, 3]);
        targets.data_mut()[0] = 0.2;
        targets.data_mut()[1] = 0.5;
        targets.data_mut()[2] = 0.3;
        let (a, _) = softmax_cross_entropy(&logits, &targets).unwrap();
        let (b, _) = softmax_cross_entropy(&shifted, &targets).unwrap();
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn invalid_target_rows_are_rejected() {
        let logits = Tensor::<f32>::zeros(&[1, 3]);
        let bad_sum = Tensor::from_vec(&[1, 3], vec![0.5f32, 0.2, 0.2]).unwrap();
        assert!(softmax_cross_entropy(&logits, &bad_sum).is_err());
        let negative = Tensor::from_vec(&[1, 3], vec![1.2f32, -0.2, 0.0]).unwrap();
        assert!(softmax_cross_entropy(&logits, &negative).is_err());
    }
}
