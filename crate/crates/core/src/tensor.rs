use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense rank-4 array in (batch, channel, height, width) layout.
///
/// Data is contiguous row-major in N -> C -> H -> W order. Values are immutable
/// once a tensor leaves the function that built it; operations return new
/// tensors, so read-only sharing across threads is always safe.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4<S: Scalar> {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    data: Vec<S>,
}

impl<S: Scalar> Tensor4<S> {
    pub fn zeros(n: usize, c: usize, h: usize, w: usize) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![S::zero(); n * c * h * w],
        }
    }

    pub fn filled(n: usize, c: usize, h: usize, w: usize, v: S) -> Self {
        Tensor4 {
            n,
            c,
            h,
            w,
            data: vec![v; n * c * h * w],
        }
    }

    pub fn from_vec(n: usize, c: usize, h: usize, w: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != n * c * h * w {
            return Err(Error::ShapeMismatch {
                context: "Tensor4::from_vec",
                detail: format!(
                    "data length {} != {}x{}x{}x{} = {}",
                    data.len(),
                    n,
                    c,
                    h,
                    w,
                    n * c * h * w
                ),
            });
        }
        Ok(Tensor4 { n, c, h, w, data })
    }

    pub fn from_fn(n: usize, c: usize, h: usize, w: usize, mut f: impl FnMut(usize, usize, usize, usize) -> S) -> Self {
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(ni, ci, y, x));
                    }
                }
            }
        }
        Tensor4 { n, c, h, w, data }
    }

    pub fn zeros_like(&self) -> Self {
        Tensor4::zeros(self.n, self.c, self.h, self.w)
    }

    #[inline(always)]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.n, self.c, self.h, self.w)
    }

    #[inline(always)]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline(always)]
    pub fn c(&self) -> usize {
        self.c
    }

    #[inline(always)]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline(always)]
    pub fn w(&self) -> usize {
        self.w
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline(always)]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    #[inline(always)]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> S {
        self.data[self.idx(n, c, y, x)]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: S) {
        let i = self.idx(n, c, y, x);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    /// The contiguous h*w slice for one (batch, channel) plane.
    #[inline]
    pub fn plane(&self, n: usize, c: usize) -> &[S] {
        let start = (n * self.c + c) * self.h * self.w;
        &self.data[start..start + self.h * self.w]
    }

    #[inline]
    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [S] {
        let start = (n * self.c + c) * self.h * self.w;
        let len = self.h * self.w;
        &mut self.data[start..start + len]
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, a: S) -> Self {
        self.map(|v| v * a)
    }

    /// Elementwise `self + other`, shapes must match.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other, "Tensor4::add")?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor4 {
            n: self.n,
            c: self.c,
            h: self.h,
            w: self.w,
            data,
        })
    }

    /// In-place `self += a * other`, shapes must match.
    pub fn add_scaled_assign(&mut self, a: S, other: &Self) -> Result<()> {
        self.check_same_shape(other, "Tensor4::add_scaled_assign")?;
        for (dst, &src) in self.data.iter_mut().zip(&other.data) {
            *dst = *dst + a * src;
        }
        Ok(())
    }

    /// Copy of channels `[c0, c1)` for every batch element.
    pub fn channel_slice(&self, c0: usize, c1: usize) -> Result<Self> {
        if c0 > c1 || c1 > self.c {
            return Err(Error::InvalidArgument(format!(
                "channel slice [{c0}, {c1}) out of range for {} channels",
                self.c
            )));
        }
        let cw = c1 - c0;
        let mut out = Tensor4::zeros(self.n, cw, self.h, self.w);
        let plane = self.h * self.w;
        for n in 0..self.n {
            for c in 0..cw {
                let src = (n * self.c + c0 + c) * plane;
                let dst = (n * cw + c) * plane;
                out.data[dst..dst + plane].copy_from_slice(&self.data[src..src + plane]);
            }
        }
        Ok(out)
    }

    /// New tensor with the width axis mirrored (horizontal flip).
    pub fn flip_w(&self) -> Self {
        let mut out = self.clone();
        for n in 0..self.n {
            for c in 0..self.c {
                let plane = out.plane_mut(n, c);
                for row in plane.chunks_exact_mut(self.w) {
                    row.reverse();
                }
            }
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch {
                context,
                detail: format!("{:?} vs {:?}", self.shape(), other.shape()),
            });
        }
        Ok(())
    }
}

/// Stacks the parts along the channel axis, preserving order: the data of
/// part `i` occupies channel block `i` of the output.
pub fn concat_channels<S: Scalar>(parts: &[&Tensor4<S>]) -> Result<Tensor4<S>> {
    let first = parts.first().ok_or_else(|| {
        Error::InvalidArgument("concat_channels needs at least one part".into())
    })?;
    let (n, _, h, w) = first.shape();
    let mut c_total = 0usize;
    for (i, p) in parts.iter().enumerate() {
        if p.n() != n || p.h() != h || p.w() != w {
            return Err(Error::ShapeMismatch {
                context: "concat_channels",
                detail: format!(
                    "part {i} has shape {:?}, expected (n={n}, _, h={h}, w={w})",
                    p.shape()
                ),
            });
        }
        c_total += p.c();
    }
    let plane = h * w;
    let mut out = Tensor4::zeros(n, c_total, h, w);
    for ni in 0..n {
        let mut c_off = 0usize;
        for p in parts {
            for ci in 0..p.c() {
                let dst = (ni * c_total + c_off + ci) * plane;
                let src = (ni * p.c() + ci) * plane;
                out.data[dst..dst + plane].copy_from_slice(&p.data()[src..src + plane]);
            }
            c_off += p.c();
        }
    }
    Ok(out)
}

/// Result of an [`allclose`] comparison.
#[derive(Debug, Clone, Copy)]
pub struct CloseReport {
    pub pass: bool,
    pub max_abs_diff: f64,
    /// Coordinate (n, c, y, x) of the worst absolute difference.
    pub worst: (usize, usize, usize, usize),
}

/// True iff `|a_i - b_i| <= atol + rtol * |b_i|` for every element, with the
/// worst absolute difference reported either way.
pub fn allclose<S: Scalar>(
    a: &Tensor4<S>,
    b: &Tensor4<S>,
    rtol: f64,
    atol: f64,
) -> Result<CloseReport> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            context: "allclose",
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let mut pass = true;
    let mut max_abs = 0.0f64;
    let mut worst = 0usize;
    for (i, (&av, &bv)) in a.data().iter().zip(b.data()).enumerate() {
        let (av, bv) = (av.as_f64(), bv.as_f64());
        let diff = (av - bv).abs();
        if diff > max_abs {
            max_abs = diff;
            worst = i;
        }
        if diff > atol + rtol * bv.abs() {
            pass = false;
        }
    }
    let (_, c, h, w) = a.shape();
    let x = worst % w;
    let y = (worst / w) % h;
    let ci = (worst / (w * h)) % c;
    let ni = worst / (w * h * c);
    Ok(CloseReport {
        pass,
        max_abs_diff: max_abs,
        worst: (ni, ci, y, x),
    })
}
