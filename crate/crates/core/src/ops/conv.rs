//! 2-D convolution, forward and backward, NCHW layout.
//!
//! The forward pass lowers each sample to an im2col matrix and runs a GEMM
//! against the `O x (I*K*K)` weight matrix; the backward pass reuses the same
//! lowering for both adjoints. Samples are independent, so the batch loop is
//! data-parallel; the weight gradient is reduced over samples in batch order.

use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Output extent along one spatial axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding).saturating_sub(kernel) / stride + 1
}

/// Geometry of one convolution call, validated against the actual tensors.
#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    c_in: usize,
    h_in: usize,
    w_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvGeom {
    fn resolve<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, stride: usize, padding: usize) -> Result<Self> {
        let (batch, c_in, h_in, w_in) = input.dims4()?;
        let (c_out, w_cin, kh, kw) = weight.dims4()?;
        if kh != kw {
            return Err(Error::contract(format!("only square kernels supported, got {kh}x{kw}")));
        }
        if w_cin != c_in {
            return Err(Error::contract(format!(
                "conv2d channel mismatch: input shape {:?} has {c_in} channels, weight shape {:?} expects {w_cin}",
                input.shape(),
                weight.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::contract("conv2d stride must be positive".to_string()));
        }
        if h_in + 2 * padding < kh || w_in + 2 * padding < kh {
            return Err(Error::contract(format!(
                "conv2d kernel {kh} does not fit input {h_in}x{w_in} with padding {padding}"
            )));
        }
        let h_out = conv_out_dim(h_in, kh, stride, padding);
        let w_out = conv_out_dim(w_in, kw, stride, padding);
        Ok(ConvGeom { batch, c_in, h_in, w_in, c_out, kernel: kh, stride, padding, h_out, w_out })
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    fn col_cols(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Lower one sample into a `(live.len()*K*K) x (H_out*W_out)` patch matrix,
/// taking only the listed input channels.
fn im2col<T: Scalar>(sample: &[T], g: &ConvGeom, live: &[usize], cols: &mut [T]) {
    let k = g.kernel;
    let (h_in, w_in) = (g.h_in as isize, g.w_in as isize);
    let col_w = g.col_cols();
    for (ci, &c) in live.iter().enumerate() {
        let plane = &sample[c * g.h_in * g.w_in..(c + 1) * g.h_in * g.w_in];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let out_row = &mut cols[row * col_w..(row + 1) * col_w];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let base = oy * g.w_out;
                    if iy < 0 || iy >= h_in {
                        out_row[base..base + g.w_out].fill(T::zero());
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        out_row[base + ox] = if ix < 0 || ix >= w_in {
                            T::zero()
                        } else {
                            plane[iy as usize * g.w_in + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-accumulate a patch matrix back onto one input sample.
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, sample: &mut [T]) {
    let k = g.kernel;
    let (h_in, w_in) = (g.h_in as isize, g.w_in as isize);
    let col_w = g.col_cols();
    for c in 0..g.c_in {
        let plane = &mut sample[c * g.h_in * g.w_in..(c + 1) * g.h_in * g.w_in];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let col_row = &cols[row * col_w..(row + 1) * col_w];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= h_in {
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix < 0 || ix >= w_in {
                            continue;
                        }
                        let idx = iy as usize * g.w_in + ix as usize;
                        plane[idx] = plane[idx] + col_row[oy * g.w_out + ox];
                    }
                }
            }
        }
    }
}

/// Input channels that carry at least one nonzero value across the batch.
///
/// Soft pruning leaves dense models with exactly-zero channels; skipping
/// them keeps the reduction identical to the physically compacted model's
/// (bit for bit) and saves their share of the work.
fn live_channels<T: Scalar>(input: &Tensor<T>, g: &ConvGeom) -> Vec<usize> {
    let plane = g.h_in * g.w_in;
    let sample = g.c_in * plane;
    let data = input.data();
    (0..g.c_in)
        .filter(|&c| {
            (0..g.batch).any(|n| {
                data[n * sample + c * plane..n * sample + (c + 1) * plane]
                    .iter()
                    .any(|v| *v != T::zero())
            })
        })
        .collect()
}

/// Weight matrix restricted to the listed input channels, `[O, live*K*K]`.
fn gather_weight_columns<T: Scalar>(weight: &Tensor<T>, g: &ConvGeom, live: &[usize]) -> Vec<T> {
    let kk = g.kernel * g.kernel;
    let row = g.c_in * kk;
    let mut out = Vec::with_capacity(g.c_out * live.len() * kk);
    for o in 0..g.c_out {
        for &c in live {
            let base = o * row + c * kk;
            out.extend_from_slice(&weight.data()[base..base + kk]);
        }
    }
    out
}

/// `out[n,o,y,x] = sum_{i,dy,dx} input[n,i,y*s-p+dy,x*s-p+dx] * weight[o,i,dy,dx]`,
/// reading zero outside the input bounds.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let g = ConvGeom::resolve(input, weight, stride, padding)?;
    let mut out = Tensor::zeros(&[g.batch, g.c_out, g.h_out, g.w_out]);
    let sample_in = g.c_in * g.h_in * g.w_in;
    let sample_out = g.c_out * g.col_cols();
    let in_data = input.data();

    let live = live_channels(input, &g);
    let w_reduced;
    let w_data = if live.len() == g.c_in {
        weight.data()
    } else {
        w_reduced = gather_weight_columns(weight, &g, &live);
        &w_reduced
    };
    let k_rows = live.len() * g.kernel * g.kernel;

    if live.is_empty() {
        return Ok(out); // all-zero input; the output is identically zero
    }
    par::for_each_chunk_mut(out.data_mut(), sample_out, |n, out_n| {
        let mut cols = vec![T::zero(); k_rows * g.col_cols()];
        im2col(&in_data[n * sample_in..(n + 1) * sample_in], &g, &live, &mut cols);
        T::gemm(g.c_out, k_rows, g.col_cols(), T::one(), w_data, &cols, T::zero(), out_n);
    });
    Ok(out)
}

/// Exact adjoints of [`conv2d_forward`]: returns `(grad_input, grad_weight)`.
pub fn conv2d_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input: &Tensor<T>,
    weight: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let g = ConvGeom::resolve(input, weight, stride, padding)?;
    let expect = [g.batch, g.c_out, g.h_out, g.w_out];
    if grad_out.shape() != expect {
        return Err(Error::contract(format!(
            "conv2d_backward: grad_out shape {:?} does not match forward output {:?}",
            grad_out.shape(),
            expect
        )));
    }
    let sample_in = g.c_in * g.h_in * g.w_in;
    let sample_out = g.c_out * g.col_cols();
    let in_data = input.data();
    let go_data = grad_out.data();
    let w_data = weight.data();

    let all_channels: Vec<usize> = (0..g.c_in).collect();
    // Per-sample adjoints run in parallel; the weight gradient is then folded
    // in batch order so the reduction order never depends on scheduling.
    let per_sample: Vec<(Vec<T>, Vec<T>)> = par::map_indexed(g.batch, |n| {
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        im2col(&in_data[n * sample_in..(n + 1) * sample_in], &g, &all_channels, &mut cols);
        let go_n = &go_data[n * sample_out..(n + 1) * sample_out];

        let mut gw_n = vec![T::zero(); g.c_out * g.col_rows()];
        T::gemm_nt(g.c_out, g.col_cols(), g.col_rows(), T::one(), go_n, &cols, T::zero(), &mut gw_n);

        let mut grad_cols = cols; // reuse the buffer
        T::gemm_tn(
            g.col_rows(),
            g.c_out,
            g.col_cols(),
            T::one(),
            w_data,
            go_n,
            T::zero(),
            &mut grad_cols,
        );
        let mut gi_n = vec![T::zero(); sample_in];
        col2im(&grad_cols, &g, &mut gi_n);
        (gi_n, gw_n)
    });

    let mut grad_input = Tensor::zeros(input.shape());
    let mut grad_weight = Tensor::zeros(weight.shape());
    for (n, (gi_n, gw_n)) in per_sample.into_iter().enumerate() {
        grad_input.data_mut()[n * sample_in..(n + 1) * sample_in].copy_from_slice(&gi_n);
        for (d, s) in grad_weight.data_mut().iter_mut().zip(gw_n.iter()) {
            *d = *d + *s;
        }
    }
    Ok((grad_input, grad_weight))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn out_dim_formula() {
        assert_eq!(conv_out_dim(32, 3, 1, 1), 32);
        assert_eq!(conv_out_dim(32, 3, 2, 1), 16);
        assert_eq!(conv_out_dim(3, 1, 1, 0), 3);
    }

    #[test]
    fn scalar_kernel_scales_input() {
        // 1x1x3x3 ones through a single 1x1 kernel of [2] -> all twos.
        let input = Tensor::filled(&[1, 1, 3, 3], 1.0f32);
        let weight = Tensor::from_vec(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let out = conv2d_forward(&input, &weight, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let input = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(|i| i as f32).collect()).unwrap();
        let weight = Tensor::zeros(&[3, 2, 1, 1]);
        let out = conv2d_forward(&input, &weight, 1, 0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_grad_out_gives_zero_grads() {
        let input = Tensor::filled(&[1, 1, 4, 4], 1.0f32);
        let weight = Tensor::filled(&[2, 1, 3, 3], 0.5f32);
        let go = Tensor::zeros(&[1, 2, 2, 2]);
        let (gi, gw) = conv2d_backward(&go, &input, &weight, 1, 0).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(gw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_passes_grad_through() {
        let input = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let weight = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0f32]).unwrap();
        let go = Tensor::from_vec(&[1, 1, 2, 2], vec![0.1f32, 0.2, 0.3, 0.4]).unwrap();
        let (gi, _) = conv2d_backward(&go, &input, &weight, 1, 0).unwrap();
        assert_eq!(gi.data(), go.data());
    }

    #[test]
    fn channel_mismatch_reports_both_shapes() {
        let input = Tensor::<f32>::zeros(&[1, 3, 8, 8]);
        let weight = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let err = conv2d_forward(&input, &weight, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3, 8, 8]") && msg.contains("[4, 2, 3, 3]"), "{msg}");
    }

    #[test]
    fn kernel_larger_than_padded_input_is_rejected() {
        let input = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        let weight = Tensor::<f32>::zeros(&[1, 1, 5, 5]);
        assert!(conv2d_forward(&input, &weight, 1, 0).is_err());
    }
}
