use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor4;

/// Integer label map for a batch of images, shape (n, h, w).
///
/// Values are class indices plus an ignore value (conventionally 255) marking
/// pixels excluded from the loss and the metrics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    n: usize,
    h: usize,
    w: usize,
    data: Vec<u32>,
}

impl LabelMap {
    pub fn filled(n: usize, h: usize, w: usize, v: u32) -> Self {
        LabelMap {
            n,
            h,
            w,
            data: vec![v; n * h * w],
        }
    }

    pub fn from_vec(n: usize, h: usize, w: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::ShapeMismatch {
                context: "LabelMap::from_vec",
                detail: format!("data length {} != {n}x{h}x{w}", data.len()),
            });
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.h, self.w)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    #[inline(always)]
    pub fn at(&self, n: usize, y: usize, x: usize) -> u32 {
        self.data[(n * self.h + y) * self.w + x]
    }

    #[inline(always)]
    pub fn set(&mut self, n: usize, y: usize, x: usize, v: u32) {
        self.data[(n * self.h + y) * self.w + x] = v;
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u32] {
        &mut self.data
    }

    pub fn flip_w(&self) -> Self {
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(self.w) {
            row.reverse();
        }
        out
    }

    /// Stacks single-image maps (n = 1 each) into one batch.
    pub fn stack(maps: &[&LabelMap]) -> Result<LabelMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::InvalidArgument("LabelMap::stack needs at least one map".into()))?;
        let (h, w) = (first.h, first.w);
        let mut data = Vec::new();
        let mut n = 0;
        for (i, m) in maps.iter().enumerate() {
            if m.h != h || m.w != w {
                return Err(Error::ShapeMismatch {
                    context: "LabelMap::stack",
                    detail: format!("map {i} is {}x{}, expected {h}x{w}", m.h, m.w),
                });
            }
            data.extend_from_slice(&m.data);
            n += m.n;
        }
        LabelMap::from_vec(n, h, w, data)
    }

    /// Round-trips through the tensor container (labels stored as exact
    /// integer-valued scalars) for on-disk storage in the tensor format.
    pub fn to_tensor<S: Scalar>(&self) -> Tensor4<S> {
        let mut t = Tensor4::zeros(self.n, 1, self.h, self.w);
        for (dst, &v) in t.data_mut().iter_mut().zip(&self.data) {
            *dst = S::from_f64(v as f64);
        }
        t
    }

    pub fn from_tensor<S: Scalar>(t: &Tensor4<S>) -> Result<LabelMap> {
        let (n, c, h, w) = t.shape();
        if c != 1 {
            return Err(Error::ShapeMismatch {
                context: "LabelMap::from_tensor",
                detail: format!("expected 1 channel, got {c}"),
            });
        }
        let mut data = Vec::with_capacity(n * h * w);
        for &v in t.data() {
            let f = v.as_f64();
            if f < 0.0 || f.fract() != 0.0 || f > u32::MAX as f64 {
                return Err(Error::InvalidArgument(format!(
                    "label tensor holds non-integer value {f}"
                )));
            }
            data.push(f as u32);
        }
        LabelMap::from_vec(n, h, w, data)
    }
}

/// One segmentation sample: an image tensor (1, 3, h, w) with values in [0, 1]
/// and its per-pixel label map.
#[derive(Clone, Debug)]
pub struct SegSample<S: Scalar> {
    pub image: Tensor4<S>,
    pub labels: LabelMap,
}
