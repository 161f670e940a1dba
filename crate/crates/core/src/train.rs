//! Training recipe: poly learning-rate schedule, masked cross-entropy, SGD
//! with momentum and weight decay, finite-difference gradient checking,
//! bilinear resizing, and the mirror/resize augmentation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelMap, SegSample};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

fn default_base_lr() -> f64 {
    0.001
}
fn default_power() -> f64 {
    0.9
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    0.0001
}
fn default_batch_size() -> usize {
    8
}
fn default_ignore_index() -> u32 {
    255
}
fn default_seed() -> u64 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    pub max_iter: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_ignore_index")]
    pub ignore_index: u32,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) {
            return Err(Error::Config(format!("base_lr must be > 0, got {}", self.base_lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.power > 0.0) {
            return Err(Error::Config(format!("power must be > 0, got {}", self.power)));
        }
        if self.batch_size == 0 || self.max_iter == 0 {
            return Err(Error::Config("batch_size and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// `base_lr * (1 - iter/max_iter)^power`, the poly schedule.
pub fn poly_lr(iter: usize, cfg: &TrainConfig) -> Result<f64> {
    if iter > cfg.max_iter {
        return Err(Error::InvalidArgument(format!(
            "iter {iter} exceeds max_iter {}",
            cfg.max_iter
        )));
    }
    let frac = 1.0 - iter as f64 / cfg.max_iter as f64;
    Ok(cfg.base_lr * frac.powf(cfg.power))
}

/// Per-pixel softmax over the channel axis.
pub fn softmax_channels<S: Scalar>(logits: &Tensor4<S>) -> Tensor4<S> {
    let (n, c, h, w) = logits.shape();
    let mut out = logits.clone();
    let plane = h * w;
    for ni in 0..n {
        for p in 0..plane {
            let mut maxv = f64::NEG_INFINITY;
            for ci in 0..c {
                maxv = maxv.max(logits.data()[(ni * c + ci) * plane + p].as_f64());
            }
            let mut sum = 0.0;
            for ci in 0..c {
                sum += (logits.data()[(ni * c + ci) * plane + p].as_f64() - maxv).exp();
            }
            for ci in 0..c {
                let i = (ni * c + ci) * plane + p;
                let e = (logits.data()[i].as_f64() - maxv).exp();
                out.data_mut()[i] = S::from_f64(e / sum);
            }
        }
    }
    out
}

/// Mean cross-entropy over non-ignored pixels, with the gradient w.r.t. the
/// logits. An all-ignored batch yields loss 0 and a zero gradient.
pub fn cross_entropy_masked<S: Scalar>(
    logits: &Tensor4<S>,
    labels: &LabelMap,
    ignore_index: u32,
) -> Result<(f64, Tensor4<S>)> {
    let (n, c, h, w) = logits.shape();
    if labels.shape() != (n, h, w) {
        return Err(Error::ShapeMismatch {
            context: "cross_entropy_masked",
            detail: format!(
                "logits {:?} vs labels {:?}",
                logits.shape(),
                labels.shape()
            ),
        });
    }
    // first pass: validate labels and count
    let mut count = 0usize;
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let lab = labels.at(ni, y, x);
                if lab == ignore_index {
                    continue;
                }
                if lab as usize >= c {
                    return Err(Error::LabelOutOfRange {
                        label: lab,
                        classes: c,
                        n: ni,
                        y,
                        x,
                    });
                }
                count += 1;
            }
        }
    }
    let mut dlogits = logits.zeros_like();
    if count == 0 {
        return Ok((0.0, dlogits));
    }
    let plane = h * w;
    let inv = 1.0 / count as f64;
    let mut loss = 0.0f64;
    for ni in 0..n {
        for y in 0..h {
            for x in 0..w {
                let lab = labels.at(ni, y, x);
                if lab == ignore_index {
                    continue;
                }
                let p = y * w + x;
                let mut maxv = f64::NEG_INFINITY;
                for ci in 0..c {
                    maxv = maxv.max(logits.data()[(ni * c + ci) * plane + p].as_f64());
                }
                let mut sum = 0.0;
                for ci in 0..c {
                    sum += (logits.data()[(ni * c + ci) * plane + p].as_f64() - maxv).exp();
                }
                let log_sum = sum.ln();
                let z_lab = logits.data()[(ni * c + lab as usize) * plane + p].as_f64() - maxv;
                loss += (log_sum - z_lab) * inv;
                for ci in 0..c {
                    let i = (ni * c + ci) * plane + p;
                    let soft = (logits.data()[i].as_f64() - maxv).exp() / sum;
                    let onehot = if ci == lab as usize { 1.0 } else { 0.0 };
                    dlogits.data_mut()[i] = S::from_f64((soft - onehot) * inv);
                }
            }
        }
    }
    Ok((loss, dlogits))
}

/// One learnable tensor wired into an SGD step.
pub struct SgdParam<'a, S: Scalar> {
    pub value: &'a mut Tensor4<S>,
    pub grad: &'a Tensor4<S>,
    pub velocity: &'a mut Tensor4<S>,
    /// Weight decay applies to convolution kernels only.
    pub decay: bool,
}

/// `v <- momentum*v + (grad + weight_decay*w); w <- w - lr*v`.
pub fn sgd_step<S: Scalar>(params: &mut [SgdParam<'_, S>], lr: f64, momentum: f64, weight_decay: f64) {
    for p in params.iter_mut() {
        debug_assert_eq!(p.value.shape(), p.grad.shape());
        debug_assert_eq!(p.value.shape(), p.velocity.shape());
        let wd = if p.decay { weight_decay } else { 0.0 };
        let value = p.value.data_mut();
        let vel = p.velocity.data_mut();
        let grad = p.grad.data();
        for i in 0..value.len() {
            let g = grad[i].as_f64() + wd * value[i].as_f64();
            let v = momentum * vel[i].as_f64() + g;
            vel[i] = S::from_f64(v);
            value[i] = S::from_f64(value[i].as_f64() - lr * v);
        }
    }
}

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub coords_checked: usize,
}

/// Central-difference check of `analytic` against `f` at `x`.
///
/// Uses step `h_scale * max(1, |x_i|)` per coordinate and relative error
/// `|a - n| / max(|a|, |n|, 1e-12)`. Tensors larger than `max_coords` are
/// subsampled with a seeded stream.
pub fn grad_check<F: FnMut(&Tensor4<f64>) -> f64>(
    mut f: F,
    x: &Tensor4<f64>,
    analytic: &Tensor4<f64>,
    h_scale: f64,
    max_coords: usize,
    seed: u64,
) -> Result<GradReport> {
    if x.shape() != analytic.shape() {
        return Err(Error::ShapeMismatch {
            context: "grad_check",
            detail: format!("{:?} vs {:?}", x.shape(), analytic.shape()),
        });
    }
    let len = x.len();
    let coords: Vec<usize> = if len <= max_coords {
        (0..len).collect()
    } else {
        let mut rng = Rng::new(seed);
        (0..max_coords).map(|_| rng.below(len as u64) as usize).collect()
    };
    let mut probe = x.clone();
    let mut max_rel = 0.0f64;
    let mut worst = 0usize;
    for &i in &coords {
        let orig = probe.data()[i];
        let h = h_scale * orig.abs().max(1.0);
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("grad_check objective"));
        }
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        if rel > max_rel {
            max_rel = rel;
            worst = i;
        }
    }
    Ok(GradReport {
        max_rel_err: max_rel,
        worst_index: worst,
        coords_checked: coords.len(),
    })
}

/// Bilinear resize with half-pixel centers: the source coordinate of output
/// pixel `d` is `(d + 0.5) * (in/out) - 0.5`, clamped to the image.
pub fn bilinear_resize<S: Scalar>(x: &Tensor4<S>, out_h: usize, out_w: usize) -> Result<Tensor4<S>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be >= 1".into()));
    }
    let (n, c, h, w) = x.shape();
    if out_h == h && out_w == w {
        return Ok(x.clone());
    }
    let mut out = Tensor4::zeros(n, c, out_h, out_w);
    let taps_y = resize_taps(h, out_h);
    let taps_x = resize_taps(w, out_w);
    for ni in 0..n {
        for ci in 0..c {
            let src = x.plane(ni, ci);
            let dst = out.plane_mut(ni, ci);
            for (dy, &(y0, y1, fy)) in taps_y.iter().enumerate() {
                for (dx, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                    let v00 = src[y0 * w + x0].as_f64();
                    let v01 = src[y0 * w + x1].as_f64();
                    let v10 = src[y1 * w + x0].as_f64();
                    let v11 = src[y1 * w + x1].as_f64();
                    let top = v00 + fx * (v01 - v00);
                    let bot = v10 + fx * (v11 - v10);
                    dst[dy * out_w + dx] = S::from_f64(top + fy * (bot - top));
                }
            }
        }
    }
    Ok(out)
}

/// (lo index, hi index, fraction) per output coordinate.
fn resize_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            let f = (s - i0 as f64).clamp(0.0, 1.0);
            (i0, i1, f)
        })
        .collect()
}

/// Adjoint of [`bilinear_resize`]: scatters `dy` back through the same taps.
pub fn bilinear_resize_backward<S: Scalar>(
    dy: &Tensor4<S>,
    in_h: usize,
    in_w: usize,
) -> Result<Tensor4<S>> {
    let (n, c, out_h, out_w) = dy.shape();
    if out_h == in_h && out_w == in_w {
        return Ok(dy.clone());
    }
    let mut dx: Tensor4<S> = Tensor4::zeros(n, c, in_h, in_w);
    let taps_y = resize_taps(in_h, out_h);
    let taps_x = resize_taps(in_w, out_w);
    for ni in 0..n {
        for ci in 0..c {
            let src = dy.plane(ni, ci);
            let dst = dx.plane_mut(ni, ci);
            for (dyi, &(y0, y1, fy)) in taps_y.iter().enumerate() {
                for (dxi, &(x0, x1, fx)) in taps_x.iter().enumerate() {
                    let g = src[dyi * out_w + dxi].as_f64();
                    dst[y0 * in_w + x0] =
                        S::from_f64(dst[y0 * in_w + x0].as_f64() + g * (1.0 - fy) * (1.0 - fx));
                    dst[y0 * in_w + x1] =
                        S::from_f64(dst[y0 * in_w + x1].as_f64() + g * (1.0 - fy) * fx);
                    dst[y1 * in_w + x0] =
                        S::from_f64(dst[y1 * in_w + x0].as_f64() + g * fy * (1.0 - fx));
                    dst[y1 * in_w + x1] = S::from_f64(dst[y1 * in_w + x1].as_f64() + g * fy * fx);
                }
            }
        }
    }
    Ok(dx)
}

/// Nearest-neighbor label resize (half-pixel centers); never fabricates label
/// values, so the ignore index survives exactly.
pub fn resize_labels_nearest(labels: &LabelMap, out_h: usize, out_w: usize) -> LabelMap {
    let (n, h, w) = labels.shape();
    if out_h == h && out_w == w {
        return labels.clone();
    }
    let mut out = LabelMap::filled(n, out_h, out_w, 0);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for ni in 0..n {
        for y in 0..out_h {
            let src_y = (((y as f64 + 0.5) * sy - 0.5).round().max(0.0) as usize).min(h - 1);
            for x in 0..out_w {
                let src_x = (((x as f64 + 0.5) * sx - 0.5).round().max(0.0) as usize).min(w - 1);
                out.set(ni, y, x, labels.at(ni, src_y, src_x));
            }
        }
    }
    out
}

/// Mirror/scale augmentation with explicit decisions; [`augment`] draws them.
pub fn augment_with<S: Scalar>(sample: &SegSample<S>, mirror: bool, scale: f64) -> SegSample<S> {
    let mut image = sample.image.clone();
    let mut labels = sample.labels.clone();
    if mirror {
        image = image.flip_w();
        labels = labels.flip_w();
    }
    if scale != 1.0 {
        let (_, _, h, w) = image.shape();
        let oh = ((h as f64 * scale).round() as usize).max(1);
        let ow = ((w as f64 * scale).round() as usize).max(1);
        image = bilinear_resize(&image, oh, ow).expect("target >= 1 by construction");
        labels = resize_labels_nearest(&labels, oh, ow);
    }
    SegSample { image, labels }
}

/// Random horizontal mirror (probability 0.5) and random resize with a scale
/// drawn uniformly from [0.5, 2.0]. Draw order: mirror flag, then scale.
pub fn augment<S: Scalar>(sample: &SegSample<S>, rng: &mut Rng) -> SegSample<S> {
    let mirror = rng.chance(0.5);
    let scale = rng.uniform_in(0.5, 2.0);
    augment_with(sample, mirror, scale)
}

/// Brings an augmented sample back to `size` x `size` for batching: larger
/// samples get a random crop, smaller ones are placed at a random offset on a
/// zero image whose uncovered labels are `ignore_index`.
pub fn fit_to_size<S: Scalar>(
    sample: &SegSample<S>,
    size: usize,
    ignore_index: u32,
    rng: &mut Rng,
) -> SegSample<S> {
    let (_, ch, h, w) = sample.image.shape();
    if h == size && w == size {
        return sample.clone();
    }
    let mut image = Tensor4::zeros(1, ch, size, size);
    let mut labels = LabelMap::filled(1, size, size, ignore_index);
    // offsets drawn in fixed order: y then x
    let (src_y0, dst_y0, copy_h) = crop_or_pad_offsets(h, size, rng);
    let (src_x0, dst_x0, copy_w) = crop_or_pad_offsets(w, size, rng);
    for ci in 0..ch {
        for y in 0..copy_h {
            for x in 0..copy_w {
                let v = sample.image.at(0, ci, src_y0 + y, src_x0 + x);
                image.set(0, ci, dst_y0 + y, dst_x0 + x, v);
            }
        }
    }
    for y in 0..copy_h {
        for x in 0..copy_w {
            labels.set(0, dst_y0 + y, dst_x0 + x, sample.labels.at(0, src_y0 + y, src_x0 + x));
        }
    }
    SegSample { image, labels }
}

fn crop_or_pad_offsets(have: usize, want: usize, rng: &mut Rng) -> (usize, usize, usize) {
    if have >= want {
        let slack = (have - want) as u64;
        let src = if slack == 0 { 0 } else { rng.below(slack + 1) as usize };
        (src, 0, want)
    } else {
        let slack = (want - have) as u64;
        let dst = rng.below(slack + 1) as usize;
        (0, dst, have)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(max_iter: usize) -> TrainConfig {
        serde_json::from_value(serde_json::json!({ "max_iter": max_iter })).unwrap()
    }

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        let c = cfg(1000);
        assert_eq!(poly_lr(0, &c).unwrap(), 0.001);
        assert_eq!(poly_lr(1000, &c).unwrap(), 0.0);
        let mid = poly_lr(500, &c).unwrap();
        assert!((mid - 5.35887e-4).abs() < 1e-8, "got {mid}");
        assert!(poly_lr(1001, &c).is_err());
    }

    #[test]
    fn poly_lr_is_monotone_nonincreasing() {
        let c = cfg(137);
        let mut prev = f64::INFINITY;
        for it in 0..=137 {
            let lr = poly_lr(it, &c).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn xent_uniform_two_classes_is_ln2() {
        let logits = Tensor4::<f64>::filled(1, 2, 3, 3, 0.7);
        let labels = LabelMap::filled(1, 3, 3, 1);
        let (loss, _) = cross_entropy_masked(&logits, &labels, 255).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12, "loss {loss}");
    }

    #[test]
    fn xent_all_ignored_is_zero() {
        let logits = Tensor4::<f64>::filled(2, 3, 2, 2, 0.3);
        let labels = LabelMap::filled(2, 2, 2, 255);
        let (loss, dl) = cross_entropy_masked(&logits, &labels, 255).unwrap();
        assert_eq!(loss, 0.0);
        assert!(dl.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn xent_label_out_of_range_reports_pixel() {
        let logits = Tensor4::<f64>::filled(1, 2, 2, 2, 0.0);
        let mut labels = LabelMap::filled(1, 2, 2, 0);
        labels.set(0, 1, 0, 9);
        match cross_entropy_masked(&logits, &labels, 255) {
            Err(Error::LabelOutOfRange { label: 9, y: 1, x: 0, .. }) => {}
            other => panic!("expected LabelOutOfRange, got {other:?}"),
        }
    }

    #[test]
    fn xent_gradient_rows_sum_to_zero_per_pixel() {
        let mut rng = Rng::new(3);
        let logits = Tensor4::<f64>::from_fn(2, 4, 3, 3, |_, _, _, _| rng.normal());
        let mut labels = LabelMap::filled(2, 3, 3, 0);
        for i in 0..labels.data().len() {
            labels.data_mut()[i] = (i % 4) as u32;
        }
        labels.set(0, 0, 0, 255);
        let (_, dl) = cross_entropy_masked(&logits, &labels, 255).unwrap();
        let (n, c, h, w) = dl.shape();
        for ni in 0..n {
            for y in 0..h {
                for x in 0..w {
                    let sum: f64 = (0..c).map(|ci| dl.at(ni, ci, y, x)).sum();
                    assert!(sum.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        let mut rng = Rng::new(17);
        let logits = Tensor4::<f64>::from_fn(2, 4, 5, 5, |_, _, _, _| rng.normal());
        let mut labels = LabelMap::filled(2, 5, 5, 0);
        for i in 0..labels.data().len() {
            labels.data_mut()[i] = (i % 5) as u32; // one in five is out-of... no: 4 classes
        }
        // remap 4 -> ignore so labels stay valid and the mask path is exercised
        for v in labels.data_mut() {
            if *v == 4 {
                *v = 255;
            }
        }
        let (_, analytic) = cross_entropy_masked(&logits, &labels, 255).unwrap();
        let rep = grad_check(
            |l| cross_entropy_masked(l, &labels, 255).unwrap().0,
            &logits,
            &analytic,
            1e-6,
            96,
            7,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-6, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn sgd_zero_grad_zero_velocity_keeps_weights() {
        let mut w = Tensor4::<f64>::filled(1, 1, 2, 2, 0.3);
        let g = w.zeros_like();
        let mut v = w.zeros_like();
        let before = w.clone();
        sgd_step(
            &mut [SgdParam { value: &mut w, grad: &g, velocity: &mut v, decay: false }],
            0.1,
            0.9,
            0.0,
        );
        assert_eq!(w, before);
    }

    #[test]
    fn sgd_single_step_formula() {
        let mut w = Tensor4::<f64>::filled(1, 1, 1, 2, 2.0);
        let g = Tensor4::<f64>::filled(1, 1, 1, 2, 0.5);
        let mut v = w.zeros_like();
        let (lr, wd) = (0.1, 0.01);
        sgd_step(
            &mut [SgdParam { value: &mut w, grad: &g, velocity: &mut v, decay: true }],
            lr,
            0.9,
            wd,
        );
        // w <- w - lr*(g + wd*w)
        let expect = 2.0 - lr * (0.5 + wd * 2.0);
        assert!((w.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn sgd_two_steps_accumulate_momentum() {
        let mut w = Tensor4::<f64>::filled(1, 1, 1, 1, 1.0);
        let g = Tensor4::<f64>::filled(1, 1, 1, 1, 0.25);
        let mut v = w.zeros_like();
        let (lr, momentum) = (0.01, 0.9);
        for _ in 0..2 {
            sgd_step(
                &mut [SgdParam { value: &mut w, grad: &g, velocity: &mut v, decay: false }],
                lr,
                momentum,
                0.0,
            );
        }
        // total update lr*g*(2 + momentum)
        let expect = 1.0 - lr * 0.25 * (2.0 + momentum);
        assert!((w.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn sgd_lr_zero_is_identity_on_weights() {
        let mut w = Tensor4::<f64>::filled(1, 1, 2, 2, 0.7);
        let g = Tensor4::<f64>::filled(1, 1, 2, 2, 0.3);
        let mut v = w.zeros_like();
        let before = w.clone();
        sgd_step(
            &mut [SgdParam { value: &mut w, grad: &g, velocity: &mut v, decay: true }],
            0.0,
            0.9,
            0.1,
        );
        assert_eq!(w, before);
    }

    #[test]
    fn grad_check_quadratic_is_tight() {
        let mut rng = Rng::new(5);
        let x = Tensor4::<f64>::from_fn(1, 2, 3, 3, |_, _, _, _| rng.normal());
        let analytic = x.scaled(2.0);
        let rep = grad_check(
            |t| t.data().iter().map(|v| v * v).sum(),
            &x,
            &analytic,
            1e-4,
            1000,
            1,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-9, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn grad_check_linear_is_tighter() {
        let mut rng = Rng::new(6);
        let x = Tensor4::<f64>::from_fn(1, 1, 4, 4, |_, _, _, _| rng.normal());
        let coefs = Tensor4::<f64>::from_fn(1, 1, 4, 4, |_, _, y, x| (1 + y * 4 + x) as f64);
        let rep = grad_check(
            |t| {
                t.data()
                    .iter()
                    .zip(coefs.data())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &x,
            &coefs,
            1e-3,
            1000,
            2,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-10, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn resize_identity_is_bitwise() {
        let mut rng = Rng::new(8);
        let x = Tensor4::<f64>::from_fn(1, 2, 5, 7, |_, _, _, _| rng.normal());
        let y = bilinear_resize(&x, 5, 7).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn resize_constant_stays_constant() {
        let x = Tensor4::<f64>::filled(1, 2, 4, 4, 0.37);
        for (oh, ow) in [(8, 8), (3, 5), (16, 2)] {
            let y = bilinear_resize(&x, oh, ow).unwrap();
            for &v in y.data() {
                assert!((v - 0.37).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resize_backward_matches_finite_differences() {
        let mut rng = Rng::new(9);
        let x = Tensor4::<f64>::from_fn(1, 2, 4, 4, |_, _, _, _| rng.normal());
        let weights = Tensor4::<f64>::from_fn(1, 2, 8, 8, |_, _, _, _| rng.normal());
        let analytic = {
            let d = bilinear_resize_backward(&weights, 4, 4).unwrap();
            d
        };
        let rep = grad_check(
            |t| {
                bilinear_resize(t, 8, 8)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(weights.data())
                    .map(|(a, b)| a * b)
                    .sum()
            },
            &x,
            &analytic,
            1e-3,
            1000,
            3,
        )
        .unwrap();
        assert!(rep.max_rel_err < 1e-8, "rel err {}", rep.max_rel_err);
    }

    #[test]
    fn resize_is_linear_operator() {
        let mut rng = Rng::new(10);
        let x = Tensor4::<f64>::from_fn(1, 1, 6, 6, |_, _, _, _| rng.normal());
        let y = Tensor4::<f64>::from_fn(1, 1, 6, 6, |_, _, _, _| rng.normal());
        let (a, b) = (1.7, -0.4);
        let combined = bilinear_resize(&x.scaled(a).add(&y.scaled(b)).unwrap(), 9, 4).unwrap();
        let separate = bilinear_resize(&x, 9, 4)
            .unwrap()
            .scaled(a)
            .add(&bilinear_resize(&y, 9, 4).unwrap().scaled(b))
            .unwrap();
        let rep = crate::tensor::allclose(&combined, &separate, 0.0, 1e-12).unwrap();
        assert!(rep.pass, "max diff {}", rep.max_abs_diff);
    }

    fn toy_sample() -> SegSample<f64> {
        let mut rng = Rng::new(12);
        let image = Tensor4::from_fn(1, 3, 8, 8, |_, _, _, _| rng.uniform());
        let mut labels = LabelMap::filled(1, 8, 8, 0);
        for y in 0..8 {
            for x in 0..8 {
                labels.set(0, y, x, ((y / 3 + x / 3) % 3) as u32);
            }
        }
        labels.set(0, 0, 0, 255);
        SegSample { image, labels }
    }

    #[test]
    fn augment_identity_settings_keep_sample() {
        let s = toy_sample();
        let out = augment_with(&s, false, 1.0);
        assert_eq!(out.image, s.image);
        assert_eq!(out.labels, s.labels);
    }

    #[test]
    fn augment_mirror_twice_restores() {
        let s = toy_sample();
        let once = augment_with(&s, true, 1.0);
        let twice = augment_with(&once, true, 1.0);
        assert_eq!(twice.image, s.image);
        assert_eq!(twice.labels, s.labels);
    }

    #[test]
    fn augment_resize_preserves_label_set() {
        let s = toy_sample();
        let out = augment_with(&s, false, 2.0);
        let mut allowed: Vec<u32> = s.labels.data().to_vec();
        allowed.sort_unstable();
        allowed.dedup();
        for &v in out.labels.data() {
            assert!(allowed.contains(&v), "label {v} not in original set");
        }
        assert_eq!(out.labels.shape(), (1, 16, 16));
    }

    #[test]
    fn fit_to_size_marks_padding_ignored() {
        let s = toy_sample();
        let small = augment_with(&s, false, 0.5); // 4x4
        let mut rng = Rng::new(1);
        let fitted = fit_to_size(&small, 8, 255, &mut rng);
        assert_eq!(fitted.image.shape(), (1, 3, 8, 8));
        let ign = fitted.labels.data().iter().filter(|&&v| v == 255).count();
        assert!(ign >= 8 * 8 - 4 * 4, "padding must be ignored, got {ign}");
    }
}
