//! Strided standard convolution for the encoder stem and the 1x1 classifier.
//!
//! Square (2k+1) kernels, zero padding of k on every side, stride >= 1, so
//! the output size is `(in - 1)/stride + 1`. Forward and backward run as
//! im2col plus one GEMM per batch element.

use crate::error::{Error, Result};
use crate::kconv::KernelWeights;
use crate::scalar::{gemm_strided_ab, gemm_strided_b, Scalar};
use crate::tensor::Tensor4;

pub fn conv2d_out_size(in_len: usize, stride: usize) -> usize {
    (in_len - 1) / stride + 1
}

fn kernel_geom<S: Scalar>(weights: &KernelWeights<S>) -> Result<(usize, usize, usize, usize)> {
    let (c_out, c_in, side, side2) = weights.kernel.shape();
    if side != side2 || side % 2 == 0 {
        return Err(Error::InvalidSpec(format!(
            "conv2d kernel must be odd square, got {side}x{side2}"
        )));
    }
    Ok((c_out, c_in, side, (side - 1) / 2))
}

fn fill_columns<S: Scalar>(
    input: &Tensor4<S>,
    ni: usize,
    c_in: usize,
    side: usize,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    colt: &mut [S],
) {
    let (_, _, h, w) = input.shape();
    let out_hw = out_h * out_w;
    let mut row = 0usize;
    for c1 in 0..c_in {
        let plane = input.plane(ni, c1);
        for dy in 0..side {
            for dx in 0..side {
                let dst = &mut colt[row * out_hw..(row + 1) * out_hw];
                for p in 0..out_h {
                    let y = (p * stride + dy) as isize - k as isize;
                    let drow = &mut dst[p * out_w..(p + 1) * out_w];
                    if y < 0 || y >= h as isize {
                        drow.iter_mut().for_each(|v| *v = S::zero());
                        continue;
                    }
                    let srow = &plane[y as usize * w..(y as usize + 1) * w];
                    for (q, v) in drow.iter_mut().enumerate() {
                        let x = (q * stride + dx) as isize - k as isize;
                        *v = if x < 0 || x >= w as isize {
                            S::zero()
                        } else {
                            srow[x as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv2d_forward<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    stride: usize,
) -> Result<Tensor4<S>> {
    if stride < 1 {
        return Err(Error::InvalidSpec("stride must be >= 1".into()));
    }
    let (c_out, c_in, side, k) = kernel_geom(weights)?;
    let (n, in_c, h, w) = input.shape();
    if in_c != c_in {
        return Err(Error::ShapeMismatch {
            context: "conv2d_forward",
            detail: format!("input has {in_c} channels, kernel expects {c_in}"),
        });
    }
    let out_h = conv2d_out_size(h, stride);
    let out_w = conv2d_out_size(w, stride);
    let out_hw = out_h * out_w;
    let kl = c_in * side * side;
    let mut out = Tensor4::zeros(n, c_out, out_h, out_w);
    let mut colt = vec![S::zero(); kl * out_hw];
    for ni in 0..n {
        fill_columns(input, ni, c_in, side, k, stride, out_h, out_w, &mut colt);
        let out_slice = {
            let start = ni * c_out * out_hw;
            &mut out.data_mut()[start..start + c_out * out_hw]
        };
        gemm_strided_b(
            c_out,
            kl,
            out_hw,
            weights.kernel.data(),
            &colt,
            out_hw as isize,
            1,
            S::zero(),
            out_slice,
        );
        for c2 in 0..c_out {
            let b = weights.bias[c2];
            if b != S::zero() {
                for v in &mut out_slice[c2 * out_hw..(c2 + 1) * out_hw] {
                    *v += b;
                }
            }
        }
    }
    Ok(out)
}

pub fn conv2d_backward<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    stride: usize,
    d_out: &Tensor4<S>,
) -> Result<(Tensor4<S>, Tensor4<S>, Vec<S>)> {
    let (c_out, c_in, side, k) = kernel_geom(weights)?;
    let (n, _, h, w) = input.shape();
    let out_h = conv2d_out_size(h, stride);
    let out_w = conv2d_out_size(w, stride);
    if d_out.shape() != (n, c_out, out_h, out_w) {
        return Err(Error::ShapeMismatch {
            context: "conv2d_backward",
            detail: format!(
                "d_out {:?}, forward output is ({n}, {c_out}, {out_h}, {out_w})",
                d_out.shape()
            ),
        });
    }
    let out_hw = out_h * out_w;
    let kl = c_in * side * side;
    let mut d_input = input.zeros_like();
    let mut d_kernel = weights.kernel.zeros_like();
    let mut d_bias = vec![S::zero(); c_out];
    for c2 in 0..c_out {
        let mut acc = 0.0f64;
        for ni in 0..n {
            for &g in d_out.plane(ni, c2) {
                acc += g.as_f64();
            }
        }
        d_bias[c2] = S::from_f64(acc);
    }
    let mut colt = vec![S::zero(); kl * out_hw];
    let mut d_colt = vec![S::zero(); kl * out_hw];
    for ni in 0..n {
        fill_columns(input, ni, c_in, side, k, stride, out_h, out_w, &mut colt);
        let d_out_slice = {
            let start = ni * c_out * out_hw;
            &d_out.data()[start..start + c_out * out_hw]
        };
        gemm_strided_b(
            c_out,
            out_hw,
            kl,
            d_out_slice,
            &colt,
            1,
            out_hw as isize,
            S::one(),
            d_kernel.data_mut(),
        );
        gemm_strided_ab(
            kl,
            c_out,
            out_hw,
            weights.kernel.data(),
            1,
            kl as isize,
            d_out_slice,
            out_hw as isize,
            1,
            S::zero(),
            &mut d_colt,
        );
        // scatter the column gradient back onto the input
        let mut row = 0usize;
        for c1 in 0..c_in {
            let dplane = d_input.plane_mut(ni, c1);
            for dy in 0..side {
                for dx in 0..side {
                    let src = &d_colt[row * out_hw..(row + 1) * out_hw];
                    for p in 0..out_h {
                        let y = (p * stride + dy) as isize - k as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let drow = &mut dplane[y as usize * w..(y as usize + 1) * w];
                        let srow = &src[p * out_w..(p + 1) * out_w];
                        for (q, &g) in srow.iter().enumerate() {
                            let x = (q * stride + dx) as isize - k as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            drow[x as usize] = S::from_f64(drow[x as usize].as_f64() + g.as_f64());
                        }
                    }
                    row += 1;
                }
            }
        }
    }
    Ok((d_input, d_kernel, d_bias))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kconv::{he_init, ConvSpec, Padding};
    use crate::reference::standard_forward;
    use crate::rng::Rng;
    use crate::tensor::allclose;
    use crate::train::grad_check;

    fn random_input(seed: u64, n: usize, c: usize, h: usize, w: usize) -> Tensor4<f64> {
        let mut rng = Rng::new(seed);
        Tensor4::from_fn(n, c, h, w, |_, _, _, _| rng.normal())
    }

    #[test]
    fn stride_one_matches_reference_standard_conv() {
        let spec = ConvSpec::new(1, 1, 1, 3, 4, Padding::Same).unwrap();
        let w = he_init::<f64>(&mut Rng::new(1), &spec);
        let x = random_input(2, 2, 3, 9, 8);
        let fast = conv2d_forward(&x, &w, 1).unwrap();
        let reference = standard_forward(&x, &w, Padding::Same).unwrap();
        let rep = allclose(&fast, &reference, 0.0, 1e-12).unwrap();
        assert!(rep.pass, "max diff {}", rep.max_abs_diff);
    }

    #[test]
    fn stride_two_halves_even_sizes() {
        let spec = ConvSpec::new(1, 1, 1, 3, 4, Padding::Same).unwrap();
        let w = he_init::<f64>(&mut Rng::new(3), &spec);
        let x = random_input(4, 1, 3, 64, 32);
        let out = conv2d_forward(&x, &w, 2).unwrap();
        assert_eq!(out.shape(), (1, 4, 32, 16));
        // stride-2 output is the stride-1 output sampled at even coordinates
        let dense = conv2d_forward(&x, &w, 1).unwrap();
        for c2 in 0..4 {
            for p in 0..32 {
                for q in 0..16 {
                    assert_eq!(out.at(0, c2, p, q), dense.at(0, c2, 2 * p, 2 * q));
                }
            }
        }
    }

    #[test]
    fn one_by_one_kernel_is_channel_mix() {
        let spec = ConvSpec::new(0, 1, 1, 3, 2, Padding::Same).unwrap();
        let mut w = he_init::<f64>(&mut Rng::new(5), &spec);
        w.bias = vec![0.25, -0.5];
        let x = random_input(6, 1, 3, 4, 4);
        let out = conv2d_forward(&x, &w, 1).unwrap();
        assert_eq!(out.shape(), (1, 2, 4, 4));
        for y in 0..4 {
            for xx in 0..4 {
                for c2 in 0..2 {
                    let expect: f64 = (0..3)
                        .map(|c1| w.kernel.at(c2, c1, 0, 0) * x.at(0, c1, y, xx))
                        .sum::<f64>()
                        + w.bias[c2];
                    assert!((out.at(0, c2, y, xx) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences_stride_two() {
        let spec = ConvSpec::new(1, 1, 1, 2, 3, Padding::Same).unwrap();
        let mut w = he_init::<f64>(&mut Rng::new(7), &spec);
        w.bias = vec![0.1, -0.2, 0.3];
        let x = random_input(8, 2, 2, 8, 8);
        let sens = random_input(9, 2, 3, 4, 4);
        let (da, dk, db) = conv2d_backward(&x, &w, 2, &sens).unwrap();

        let rep = grad_check(
            |t| {
                conv2d_forward(t, &w, 2)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(sens.data())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &x,
            &da,
            1e-3,
            96,
            1,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-9, "d_input rel err {}", rep.max_rel_err);

        let rep = grad_check(
            |kt| {
                let wk = KernelWeights { kernel: kt.clone(), bias: w.bias.clone() };
                conv2d_forward(&x, &wk, 2)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(sens.data())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &w.kernel,
            &dk,
            1e-3,
            96,
            2,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-9, "d_kernel rel err {}", rep.max_rel_err);

        for c2 in 0..3 {
            let sum: f64 = sens.plane(0, c2).iter().sum::<f64>()
                + sens.plane(1, c2).iter().sum::<f64>();
            assert!((db[c2] - sum).abs() < 1e-12);
        }
    }
}
