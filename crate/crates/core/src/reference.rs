//! Independent reference convolutions used as cross-checks.
//!
//! These are deliberately naive loop implementations that share no code with
//! the Kronecker paths in [`crate::kconv`]: the standard convolution and the
//! atrous (dilated) convolution here are what the degeneration checks compare
//! against, and the standard backward pass anchors the gradient checks.

use crate::error::{Error, Result};
use crate::kconv::{KernelWeights, Padding};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Plain dense convolution with a (2k+1) x (2k+1) kernel; `Same` zero-pads by
/// k on every side, `Valid` requires the kernel to fit inside the input.
pub fn standard_forward<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    padding: Padding,
) -> Result<Tensor4<S>> {
    atrous_forward(input, weights, 1, padding)
}

/// Atrous convolution with taps spaced `rate` pixels apart.
///
/// Offsets are `i * rate` for `i in [-k, k]`; `Same` zero-pads by `k * rate`
/// so the output keeps the input resolution.
pub fn atrous_forward<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    rate: usize,
    padding: Padding,
) -> Result<Tensor4<S>> {
    if rate < 1 {
        return Err(Error::InvalidSpec(format!("atrous rate must be >= 1, got {rate}")));
    }
    let (n, c_in, h, w) = input.shape();
    let (c_out, kc_in, side, side2) = weights.kernel.shape();
    if side != side2 {
        return Err(Error::InvalidSpec(format!("kernel must be square, got {side}x{side2}")));
    }
    if kc_in != c_in {
        return Err(Error::ShapeMismatch {
            context: "atrous_forward",
            detail: format!("input has {c_in} channels, kernel expects {kc_in}"),
        });
    }
    let k = (side - 1) / 2;
    let reach = k * rate;
    let (out_h, out_w, off) = match padding {
        Padding::Same => (h, w, 0isize),
        Padding::Valid => {
            let span = 2 * reach + 1;
            if h < span || w < span {
                return Err(Error::InvalidSpec(format!(
                    "input {h}x{w} smaller than dilated footprint {span}x{span}"
                )));
            }
            (h - span + 1, w - span + 1, reach as isize)
        }
    };
    let mut out = Tensor4::zeros(n, c_out, out_h, out_w);
    for ni in 0..n {
        for c2 in 0..c_out {
            for p in 0..out_h {
                for q in 0..out_w {
                    let mut acc = weights.bias[c2].as_f64();
                    for c1 in 0..c_in {
                        for i in 0..side {
                            for j in 0..side {
                                let ty = p as isize + off + (i as isize - k as isize) * rate as isize;
                                let tx = q as isize + off + (j as isize - k as isize) * rate as isize;
                                if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize {
                                    continue;
                                }
                                acc += weights.kernel.at(c2, c1, i, j).as_f64()
                                    * input.at(ni, c1, ty as usize, tx as usize).as_f64();
                            }
                        }
                    }
                    out.set(ni, c2, p, q, S::from_f64(acc));
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`standard_forward`] with `Same` padding, again written as
/// plain loops with no shared machinery.
pub fn standard_backward<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    d_out: &Tensor4<S>,
) -> Result<(Tensor4<S>, Tensor4<S>, Vec<S>)> {
    let (n, c_in, h, w) = input.shape();
    let (c_out, _, side, _) = weights.kernel.shape();
    if d_out.shape() != (n, c_out, h, w) {
        return Err(Error::ShapeMismatch {
            context: "standard_backward",
            detail: format!("d_out {:?}, expected ({n}, {c_out}, {h}, {w})", d_out.shape()),
        });
    }
    let k = (side - 1) / 2;
    let mut d_input = input.zeros_like();
    let mut d_kernel = weights.kernel.zeros_like();
    let mut d_bias = vec![S::zero(); c_out];
    for c2 in 0..c_out {
        let mut acc = 0.0f64;
        for ni in 0..n {
            for p in 0..h {
                for q in 0..w {
                    acc += d_out.at(ni, c2, p, q).as_f64();
                }
            }
        }
        d_bias[c2] = S::from_f64(acc);
    }
    for ni in 0..n {
        for c2 in 0..c_out {
            for c1 in 0..c_in {
                for i in 0..side {
                    for j in 0..side {
                        let kv = weights.kernel.at(c2, c1, i, j).as_f64();
                        let mut kacc = d_kernel.at(c2, c1, i, j).as_f64();
                        for p in 0..h {
                            for q in 0..w {
                                let ty = p as isize + i as isize - k as isize;
                                let tx = q as isize + j as isize - k as isize;
                                if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize {
                                    continue;
                                }
                                let g = d_out.at(ni, c2, p, q).as_f64();
                                let (ty, tx) = (ty as usize, tx as usize);
                                kacc += g * input.at(ni, c1, ty, tx).as_f64();
                                let di = d_input.idx(ni, c1, ty, tx);
                                d_input.data_mut()[di] =
                                    S::from_f64(d_input.data()[di].as_f64() + g * kv);
                            }
                        }
                        d_kernel.set(c2, c1, i, j, S::from_f64(kacc));
                    }
                }
            }
        }
    }
    Ok((d_input, d_kernel, d_bias))
}
