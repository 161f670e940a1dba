//! Kronecker convolution: forward in three execution strategies, exact
//! reverse-mode gradients, the VFR metric, and the multiply-add cost model.
//!
//! The operator expands a small learnable kernel K by a Kronecker product
//! with a fixed binary matrix F of side `r1` whose top-left `r2 x r2` block
//! is ones. Each surviving kernel tap therefore aggregates an `r2 x r2`
//! input subregion, taps sit `r1` pixels apart, and no parameters are added.
//! With `r2 = 1` the operator is an atrous convolution; with `r1 = r2 = 1`
//! it is a standard convolution.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::{gemm_strided_ab, gemm_strided_b, Scalar};
use crate::tensor::Tensor4;

/// Padding mode. `Same` preserves the input resolution (see [`pad_for_same`]);
/// `Valid` uses no padding and requires the footprint to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

/// Geometry of one Kronecker convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    /// Half kernel extent; the kernel side is `2k + 1`.
    pub k: usize,
    /// Inter-dilating factor (tap spacing), >= 1.
    pub r1: usize,
    /// Intra-sharing factor (subregion side), `1 <= r2 <= r1`.
    pub r2: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub padding: Padding,
}

impl ConvSpec {
    pub fn new(
        k: usize,
        r1: usize,
        r2: usize,
        c_in: usize,
        c_out: usize,
        padding: Padding,
    ) -> Result<Self> {
        if r1 < 1 || r2 < 1 || r2 > r1 {
            return Err(Error::InvalidSpec(format!(
                "factors must satisfy 1 <= r2 <= r1, got r1={r1}, r2={r2}"
            )));
        }
        if c_in < 1 || c_out < 1 {
            return Err(Error::InvalidSpec(format!(
                "channel counts must be >= 1, got c_in={c_in}, c_out={c_out}"
            )));
        }
        Ok(ConvSpec { k, r1, r2, c_in, c_out, padding })
    }

    /// Side of the learnable kernel.
    pub fn kernel_side(&self) -> usize {
        2 * self.k + 1
    }

    /// Side of the expanded kernel K'.
    pub fn expanded_side(&self) -> usize {
        self.kernel_side() * self.r1
    }

    /// Spatial extent of the taps actually read: offsets span
    /// `[-k*r1, k*r1 + r2 - 1]`.
    pub fn footprint(&self) -> usize {
        2 * self.k * self.r1 + self.r2
    }

    /// Learnable scalars: kernel plus bias, independent of (r1, r2).
    pub fn param_count(&self) -> usize {
        let side = self.kernel_side();
        self.c_out * self.c_in * side * side + self.c_out
    }
}

/// Learnable kernel K of shape (c_out, c_in, 2k+1, 2k+1) plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelWeights<S: Scalar> {
    pub kernel: Tensor4<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> KernelWeights<S> {
    pub fn zeros(spec: &ConvSpec) -> Self {
        let side = spec.kernel_side();
        KernelWeights {
            kernel: Tensor4::zeros(spec.c_out, spec.c_in, side, side),
            bias: vec![S::zero(); spec.c_out],
        }
    }

    pub fn matches(&self, spec: &ConvSpec) -> Result<()> {
        let side = spec.kernel_side();
        if self.kernel.shape() != (spec.c_out, spec.c_in, side, side) {
            return Err(Error::ShapeMismatch {
                context: "KernelWeights",
                detail: format!(
                    "kernel {:?}, spec expects ({}, {}, {side}, {side})",
                    self.kernel.shape(),
                    spec.c_out,
                    spec.c_in
                ),
            });
        }
        if self.bias.len() != spec.c_out {
            return Err(Error::ShapeMismatch {
                context: "KernelWeights",
                detail: format!("bias len {}, expected {}", self.bias.len(), spec.c_out),
            });
        }
        Ok(())
    }
}

/// He-normal initialization: kernel entries ~ Normal(0, 2/fan_in) with
/// `fan_in = c_in * (2k+1)^2`, bias zero. Entries are drawn in kernel data
/// order, so a given seed always yields the same weights.
pub fn he_init<S: Scalar>(rng: &mut Rng, spec: &ConvSpec) -> KernelWeights<S> {
    let side = spec.kernel_side();
    let fan_in = (spec.c_in * side * side) as f64;
    let std = (2.0 / fan_in).sqrt();
    let mut w = KernelWeights::zeros(spec);
    for v in w.kernel.data_mut() {
        *v = S::from_f64(rng.normal() * std);
    }
    w
}

/// The fixed binary matrix F: ones in the top-left `r2 x r2` block of an
/// `r1 x r1` matrix, zeros elsewhere.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformMatrix {
    pub r1: usize,
    pub r2: usize,
    values: Vec<u8>,
}

impl TransformMatrix {
    #[inline]
    pub fn at(&self, u: usize, v: usize) -> u8 {
        self.values[u * self.r1 + v]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }
}

pub fn build_transform(r1: usize, r2: usize) -> Result<TransformMatrix> {
    if r1 < 1 || r2 < 1 || r2 > r1 {
        return Err(Error::InvalidSpec(format!(
            "transform needs 1 <= r2 <= r1, got r1={r1}, r2={r2}"
        )));
    }
    let mut values = vec![0u8; r1 * r1];
    for u in 0..r2 {
        for v in 0..r2 {
            values[u * r1 + v] = 1;
        }
    }
    Ok(TransformMatrix { r1, r2, values })
}

/// The expanded kernel K' of shape (c_out, c_in, (2k+1)r1, (2k+1)r1).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedKernel<S: Scalar> {
    pub kernel: Tensor4<S>,
}

/// Per-channel-pair Kronecker product of the small kernel with F:
/// entry ((i+k)r1+u, (j+k)r1+v) is K[i+k][j+k] when F[u][v] = 1, else zero.
pub fn expand_kernel<S: Scalar>(
    weights: &KernelWeights<S>,
    transform: &TransformMatrix,
) -> ExpandedKernel<S> {
    let (c_out, c_in, side, _) = weights.kernel.shape();
    let r1 = transform.r1;
    let big = side * r1;
    let mut kernel = Tensor4::zeros(c_out, c_in, big, big);
    for c2 in 0..c_out {
        for c1 in 0..c_in {
            for ki in 0..side {
                for kj in 0..side {
                    let kv = weights.kernel.at(c2, c1, ki, kj);
                    for u in 0..transform.r2 {
                        for v in 0..transform.r2 {
                            kernel.set(c2, c1, ki * r1 + u, kj * r1 + v, kv);
                        }
                    }
                }
            }
        }
    }
    ExpandedKernel { kernel }
}

/// Zero padding that keeps the output resolution equal to the input:
/// (top, left, bottom, right) = (k*r1, k*r1, k*r1 + r2 - 1, k*r1 + r2 - 1).
/// Asymmetric because the subregion offsets u, v in [0, r2) are one-sided.
pub fn pad_for_same(spec: &ConvSpec) -> (usize, usize, usize, usize) {
    let reach = spec.k * spec.r1;
    (reach, reach, reach + spec.r2 - 1, reach + spec.r2 - 1)
}

/// Output spatial size and the input-frame coordinate of the first output's
/// center: `Same` maps output (p, q) to center (p, q); `Valid` to
/// (p + k*r1, q + k*r1).
pub fn out_geometry(spec: &ConvSpec, h: usize, w: usize) -> Result<(usize, usize, usize)> {
    match spec.padding {
        Padding::Same => Ok((h, w, 0)),
        Padding::Valid => {
            let fp = spec.footprint();
            if h < fp || w < fp {
                return Err(Error::InvalidSpec(format!(
                    "input {h}x{w} smaller than footprint {fp}x{fp} under Valid padding"
                )));
            }
            Ok((h - fp + 1, w - fp + 1, spec.k * spec.r1))
        }
    }
}

fn check_input<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    spec: &ConvSpec,
) -> Result<()> {
    weights.matches(spec)?;
    if input.c() != spec.c_in {
        return Err(Error::ShapeMismatch {
            context: "kconv",
            detail: format!("input has {} channels, spec expects {}", input.c(), spec.c_in),
        });
    }
    Ok(())
}

/// Dense-oracle forward: materializes K' and performs a plain dense
/// convolution with it, reading out-of-range input as zero. This is the
/// reference the factored and SAT paths are checked against.
pub fn kconv_forward_expanded<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    spec: &ConvSpec,
) -> Result<Tensor4<S>> {
    check_input(input, weights, spec)?;
    let (n, c_in, h, w) = input.shape();
    let (out_h, out_w, c0) = out_geometry(spec, h, w)?;
    let transform = build_transform(spec.r1, spec.r2)?;
    let expanded = expand_kernel(weights, &transform);
    let big = spec.expanded_side();
    let reach = (spec.k * spec.r1) as isize;
    let mut out = Tensor4::zeros(n, spec.c_out, out_h, out_w);
    for ni in 0..n {
        for c2 in 0..spec.c_out {
            for p in 0..out_h {
                for q in 0..out_w {
                    let cy = (p + c0) as isize;
                    let cx = (q + c0) as isize;
                    let mut acc = weights.bias[c2].as_f64();
                    for c1 in 0..c_in {
                        for a in 0..big {
                            let ty = cy + a as isize - reach;
                            if ty < 0 || ty >= h as isize {
                                continue;
                            }
                            for b in 0..big {
                                let tx = cx + b as isize - reach;
                                if tx < 0 || tx >= w as isize {
                                    continue;
                                }
                                acc += expanded.kernel.at(c2, c1, a, b).as_f64()
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

/// Anchor-grid map of r2 x r2 subregion sums.
///
/// Grid index (gy, gx) holds the sum of the input window whose top-left
/// corner sits at input coordinates (gy - base, gx - base) with
/// `base = k*r1` for Same padding and 0 for Valid; entries outside the
/// image count as zero. Sums are accumulated in f64.
struct SubregionMap<S: Scalar> {
    gh: usize,
    gw: usize,
    /// (n, c_in, gh, gw), row-major.
    data: Vec<S>,
}

impl<S: Scalar> SubregionMap<S> {
    #[inline]
    fn plane(&self, n: usize, c: usize, c_in: usize) -> &[S] {
        let start = (n * c_in + c) * self.gh * self.gw;
        &self.data[start..start + self.gh * self.gw]
    }
}

fn smap_geometry(spec: &ConvSpec, out_h: usize, out_w: usize) -> (usize, usize, usize) {
    let reach = spec.k * spec.r1;
    (out_h + 2 * reach, out_w + 2 * reach, reach)
}

/// Direct construction: each window sum is accumulated tap by tap.
fn smap_direct<S: Scalar>(
    input: &Tensor4<S>,
    spec: &ConvSpec,
    out_h: usize,
    out_w: usize,
) -> SubregionMap<S> {
    let (n, c_in, h, w) = input.shape();
    let (gh, gw, reach) = smap_geometry(spec, out_h, out_w);
    let base = match spec.padding {
        Padding::Same => reach as isize,
        Padding::Valid => 0,
    };
    let r2 = spec.r2;
    let mut data = vec![S::zero(); n * c_in * gh * gw];
    let mut idx = 0usize;
    for ni in 0..n {
        for c1 in 0..c_in {
            let plane = input.plane(ni, c1);
            for gy in 0..gh {
                let ay = gy as isize - base;
                for gx in 0..gw {
                    let ax = gx as isize - base;
                    let mut acc = 0.0f64;
                    for u in 0..r2 {
                        let y = ay + u as isize;
                        if y < 0 || y >= h as isize {
                            continue;
                        }
                        let row = &plane[y as usize * w..(y as usize + 1) * w];
                        for v in 0..r2 {
                            let x = ax + v as isize;
                            if x < 0 || x >= w as isize {
                                continue;
                            }
                            acc += row[x as usize].as_f64();
                        }
                    }
                    data[idx] = S::from_f64(acc);
                    idx += 1;
                }
            }
        }
    }
    SubregionMap { gh, gw, data }
}

/// Summed-area-table construction: builds the integral image of each padded
/// plane once, then reads every window sum with four lookups. Integral values
/// are f64 regardless of the element type because the four-term difference is
/// cancellation-prone.
fn smap_sat<S: Scalar>(
    input: &Tensor4<S>,
    spec: &ConvSpec,
    out_h: usize,
    out_w: usize,
) -> SubregionMap<S> {
    let (n, c_in, h, w) = input.shape();
    let (gh, gw, reach) = smap_geometry(spec, out_h, out_w);
    let (pad, r2) = (
        match spec.padding {
            Padding::Same => reach,
            Padding::Valid => 0,
        },
        spec.r2,
    );
    // padded plane dims; anchor grid index == padded coordinate
    let hp = gh + r2 - 1;
    let wp = gw + r2 - 1;
    let mut integral = vec![0.0f64; (hp + 1) * (wp + 1)];
    let mut data = vec![S::zero(); n * c_in * gh * gw];
    let mut idx = 0usize;
    for ni in 0..n {
        for c1 in 0..c_in {
            let plane = input.plane(ni, c1);
            // I[y+1][x+1] = P[y][x] + I[y][x+1] + I[y+1][x] - I[y][x]
            for y in 0..hp {
                let mut row_sum = 0.0f64;
                for x in 0..wp {
                    let inside_y = y >= pad && y < pad + h;
                    let inside_x = x >= pad && x < pad + w;
                    let v = if inside_y && inside_x {
                        plane[(y - pad) * w + (x - pad)].as_f64()
                    } else {
                        0.0
                    };
                    row_sum += v;
                    integral[(y + 1) * (wp + 1) + (x + 1)] = integral[y * (wp + 1) + (x + 1)] + row_sum;
                }
            }
            for gy in 0..gh {
                let top = gy;
                let bot = gy + r2;
                for gx in 0..gw {
                    let left = gx;
                    let right = gx + r2;
                    let sum = integral[bot * (wp + 1) + right] - integral[top * (wp + 1) + right]
                        - integral[bot * (wp + 1) + left]
                        + integral[top * (wp + 1) + left];
                    data[idx] = S::from_f64(sum);
                    idx += 1;
                }
            }
        }
    }
    SubregionMap { gh, gw, data }
}

/// Applies the (2k+1)^2 dilated taps to a subregion map:
/// out[c2][p][q] = bias[c2] + sum over (c1, ii, jj) of
/// K[c2][c1][ii][jj] * S[c1][p + ii*r1][q + jj*r1].
///
/// Implemented as im2col rows gathered from the map followed by one GEMM per
/// batch element, so each output element is produced by exactly one
/// deterministic accumulation.
fn tap_stage<S: Scalar>(
    smap: &SubregionMap<S>,
    weights: &KernelWeights<S>,
    spec: &ConvSpec,
    n: usize,
    out_h: usize,
    out_w: usize,
) -> Tensor4<S> {
    let side = spec.kernel_side();
    let (c_in, c_out, r1) = (spec.c_in, spec.c_out, spec.r1);
    let kl = c_in * side * side;
    let out_hw = out_h * out_w;
    let mut out = Tensor4::zeros(n, c_out, out_h, out_w);
    let mut colt = vec![S::zero(); kl * out_hw];
    for ni in 0..n {
        // gather: row (c1, ii, jj) of colt = S plane rows shifted by (ii*r1, jj*r1)
        let mut row = 0usize;
        for c1 in 0..c_in {
            let plane = smap.plane(ni, c1, c_in);
            for ii in 0..side {
                for jj in 0..side {
                    let dst = &mut colt[row * out_hw..(row + 1) * out_hw];
                    for p in 0..out_h {
                        let src_off = (p + ii * r1) * smap.gw + jj * r1;
                        dst[p * out_w..(p + 1) * out_w]
                            .copy_from_slice(&plane[src_off..src_off + out_w]);
                    }
                    row += 1;
                }
            }
        }
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
            for v in &mut out_slice[c2 * out_hw..(c2 + 1) * out_hw] {
                *v += b;
            }
        }
    }
    out
}

/// Factored forward: subregion sums first (direct construction), then the
/// dilated tap stage.
pub fn kconv_forward_factored<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    spec: &ConvSpec,
) -> Result<Tensor4<S>> {
    check_input(input, weights, spec)?;
    let (n, _, h, w) = input.shape();
    let (out_h, out_w, _) = out_geometry(spec, h, w)?;
    let smap = smap_direct(input, spec, out_h, out_w);
    Ok(tap_stage(&smap, weights, spec, n, out_h, out_w))
}

/// SAT forward: subregion sums read from a per-channel summed-area table,
/// then the same tap stage as the factored path.
pub fn kconv_forward_sat<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    spec: &ConvSpec,
) -> Result<Tensor4<S>> {
    check_input(input, weights, spec)?;
    let (n, _, h, w) = input.shape();
    let (out_h, out_w, _) = out_geometry(spec, h, w)?;
    let smap = smap_sat(input, spec, out_h, out_w);
    Ok(tap_stage(&smap, weights, spec, n, out_h, out_w))
}

/// Gradients of the factored forward.
#[derive(Debug, Clone)]
pub struct KconvGrads<S: Scalar> {
    pub d_input: Tensor4<S>,
    pub d_kernel: Tensor4<S>,
    pub d_bias: Vec<S>,
}

/// Exact reverse-mode gradients of [`kconv_forward_factored`]:
/// `d_bias[c2]` is the plain sum of `d_out` over (n, p, q); `d_kernel` and
/// `d_input` run the tap stage and the subregion sums in reverse.
pub fn kconv_backward<S: Scalar>(
    input: &Tensor4<S>,
    weights: &KernelWeights<S>,
    spec: &ConvSpec,
    d_out: &Tensor4<S>,
) -> Result<KconvGrads<S>> {
    check_input(input, weights, spec)?;
    let (n, c_in, h, w) = input.shape();
    let (out_h, out_w, _) = out_geometry(spec, h, w)?;
    if d_out.shape() != (n, spec.c_out, out_h, out_w) {
        return Err(Error::ShapeMismatch {
            context: "kconv_backward",
            detail: format!(
                "d_out {:?}, forward output is ({n}, {}, {out_h}, {out_w})",
                d_out.shape(),
                spec.c_out
            ),
        });
    }
    let side = spec.kernel_side();
    let (c_out, r1, r2) = (spec.c_out, spec.r1, spec.r2);
    let kl = c_in * side * side;
    let out_hw = out_h * out_w;
    let smap = smap_direct(input, spec, out_h, out_w);
    let (gh, gw) = (smap.gh, smap.gw);
    let base = match spec.padding {
        Padding::Same => (spec.k * spec.r1) as isize,
        Padding::Valid => 0,
    };

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

    let mut d_kernel = weights.kernel.zeros_like();
    let mut d_smap = vec![0.0f64; gh * gw]; // one (n, c1) plane at a time
    let mut d_input = input.zeros_like();
    let mut colt = vec![S::zero(); kl * out_hw];
    let mut d_colt = vec![S::zero(); kl * out_hw];
    for ni in 0..n {
        // rebuild the im2col view of the subregion map for this image
        let mut row = 0usize;
        for c1 in 0..c_in {
            let plane = smap.plane(ni, c1, c_in);
            for ii in 0..side {
                for jj in 0..side {
                    let dst = &mut colt[row * out_hw..(row + 1) * out_hw];
                    for p in 0..out_h {
                        let src_off = (p + ii * r1) * gw + jj * r1;
                        dst[p * out_w..(p + 1) * out_w]
                            .copy_from_slice(&plane[src_off..src_off + out_w]);
                    }
                    row += 1;
                }
            }
        }
        let d_out_slice = {
            let start = ni * c_out * out_hw;
            &d_out.data()[start..start + c_out * out_hw]
        };
        // dK += dOut(c_out x out_hw) * colt^T(out_hw x kl)
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
        // d_colt(kl x out_hw) = W^T(kl x c_out) * dOut(c_out x out_hw)
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
        // scatter d_colt rows into the subregion-map gradient, then fold the
        // r2 x r2 window sums back onto the input
        for c1 in 0..c_in {
            d_smap.iter_mut().for_each(|v| *v = 0.0);
            let mut row = c1 * side * side;
            for ii in 0..side {
                for jj in 0..side {
                    let src = &d_colt[row * out_hw..(row + 1) * out_hw];
                    for p in 0..out_h {
                        let dst_off = (p + ii * r1) * gw + jj * r1;
                        let dst = &mut d_smap[dst_off..dst_off + out_w];
                        let srow = &src[p * out_w..(p + 1) * out_w];
                        for (d, s) in dst.iter_mut().zip(srow) {
                            *d += s.as_f64();
                        }
                    }
                    row += 1;
                }
            }
            let dplane = d_input.plane_mut(ni, c1);
            for a in 0..h {
                let drow = &mut dplane[a * w..(a + 1) * w];
                for u in 0..r2 {
                    let gy = a as isize + base - u as isize;
                    if gy < 0 || gy >= gh as isize {
                        continue;
                    }
                    let srow = &d_smap[gy as usize * gw..(gy as usize + 1) * gw];
                    for v in 0..r2 {
                        // grid col gx = b + base - v must lie in [0, gw)
                        let shift = base - v as isize;
                        let b0 = (-shift).max(0) as usize;
                        let b1 = ((gw as isize - shift).min(w as isize)).max(0) as usize;
                        for b in b0..b1 {
                            let add = srow[(b as isize + shift) as usize];
                            drow[b] = S::from_f64(drow[b].as_f64() + add);
                        }
                    }
                }
            }
        }
    }
    Ok(KconvGrads { d_input, d_kernel, d_bias })
}

/// Valid Feature Ratio: the fraction of feature vectors in the expanded
/// convolutional patch that participate in computation, `r2^2 / r1^2`.
pub fn vfr(r1: usize, r2: usize) -> Result<f64> {
    if r1 < 1 || r2 < 1 || r2 > r1 {
        return Err(Error::InvalidSpec(format!(
            "vfr needs 1 <= r2 <= r1, got r1={r1}, r2={r2}"
        )));
    }
    Ok((r2 * r2) as f64 / (r1 * r1) as f64)
}

/// Alternative, footprint-based ratio: involved feature vectors over the
/// tight tap footprint `(2k*r1 + r2)^2` rather than the expanded-kernel
/// patch. For a 3x3 kernel at rate 4 with r2 = 1 this is the 9-in-81 figure.
pub fn footprint_vfr(k: usize, r1: usize, r2: usize) -> Result<f64> {
    if r1 < 1 || r2 < 1 || r2 > r1 {
        return Err(Error::InvalidSpec(format!(
            "footprint_vfr needs 1 <= r2 <= r1, got r1={r1}, r2={r2}"
        )));
    }
    let side = 2 * k + 1;
    let fp = 2 * k * r1 + r2;
    Ok((side * side * r2 * r2) as f64 / (fp * fp) as f64)
}

/// Execution strategies priced by [`mac_count`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MacStrategy {
    /// Dense convolution with the materialized K' kernel.
    DenseExpanded,
    /// Visiting only the (2k+1)^2 * r2^2 nonzero taps.
    SparseTaps,
    /// Subregion sums recomputed per tap, then (2k+1)^2 weighted taps.
    Factored,
    /// Subregion sums read from a summed-area table.
    Sat,
}

impl MacStrategy {
    pub fn name(self) -> &'static str {
        match self {
            MacStrategy::DenseExpanded => "dense-expanded",
            MacStrategy::SparseTaps => "sparse-taps",
            MacStrategy::Factored => "factored",
            MacStrategy::Sat => "sat",
        }
    }
}

/// Multiply/add counts per output element, plus any one-off build cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MacCount {
    pub per_elem_mults: u64,
    pub per_elem_adds: u64,
    /// Whole-tensor setup cost (SAT construction), in adds.
    pub build_adds: u64,
}

impl MacCount {
    pub fn per_elem_total(&self) -> u64 {
        self.per_elem_mults + self.per_elem_adds
    }
}

/// Analytic cost model for one batch element of the given input size.
pub fn mac_count(spec: &ConvSpec, strategy: MacStrategy, in_h: usize, in_w: usize) -> Result<MacCount> {
    out_geometry(spec, in_h, in_w)?;
    let side = spec.kernel_side() as u64;
    let c_in = spec.c_in as u64;
    let (r1, r2) = (spec.r1 as u64, spec.r2 as u64);
    Ok(match strategy {
        MacStrategy::DenseExpanded => MacCount {
            per_elem_mults: c_in * (side * r1) * (side * r1),
            per_elem_adds: 0,
            build_adds: 0,
        },
        MacStrategy::SparseTaps => MacCount {
            per_elem_mults: c_in * side * side * r2 * r2,
            per_elem_adds: 0,
            build_adds: 0,
        },
        MacStrategy::Factored => MacCount {
            per_elem_mults: c_in * side * side,
            per_elem_adds: c_in * side * side * (r2 * r2 - 1),
            build_adds: 0,
        },
        MacStrategy::Sat => {
            let (hp, wp) = match spec.padding {
                Padding::Same => {
                    let (t, l, b, r) = pad_for_same(spec);
                    ((in_h + t + b) as u64, (in_w + l + r) as u64)
                }
                Padding::Valid => (in_h as u64, in_w as u64),
            };
            MacCount {
                per_elem_mults: c_in * side * side,
                per_elem_adds: 3 * c_in * side * side,
                build_adds: 2 * c_in * hp * wp,
            }
        }
    })
}

/// The (k, r1, r2) grid every equivalence and gradient suite runs over.
pub const GRID_KS: [usize; 3] = [0, 1, 2];
pub const GRID_FACTORS: [(usize, usize); 7] =
    [(1, 1), (2, 1), (2, 2), (3, 2), (4, 3), (6, 5), (10, 7)];
