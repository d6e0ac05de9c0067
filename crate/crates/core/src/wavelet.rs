//! Single-level orthonormal 2D Haar transform.
//!
//! For each 2×2 block `[a b; c d]`:
//!
//! ```text
//! ll = (a + b + c + d) / 2    lh = (a - b + c - d) / 2
//! hl = (a + b - c - d) / 2    hh = (a - b - c + d) / 2
//! ```
//!
//! `lh` carries horizontal detail, `hl` vertical and `hh` diagonal. The 4×4
//! block matrix is symmetric and its own inverse, so the synthesis step
//! applies the same butterfly and the gradient of each direction is the
//! other direction.
//!
//! The stacked layout is `[4C, H/2, W/2]` with the four bands of input
//! channel `c` at channels `4c..4c+4` in the order `ll, lh, hl, hh`.

use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// The four quarter-resolution bands of a `[C, H, W]` image.
#[derive(Clone, Debug, PartialEq)]
pub struct SubBands {
    pub ll: Tensor,
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

#[inline]
fn butterfly(a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
    [
        0.5 * (a + b + c + d),
        0.5 * (a - b + c - d),
        0.5 * (a + b - c - d),
        0.5 * (a - b - c + d),
    ]
}

/// Splits `[.., C, H, W]` into (lead, C, H, W).
fn dims(shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    let n = shape.len();
    if n < 3 {
        return Err(shape_err!(
            "wavelet transform needs [.., C, H, W], got {:?}",
            shape
        ));
    }
    Ok((
        shape[..n - 3].iter().product(),
        shape[n - 3],
        shape[n - 2],
        shape[n - 1],
    ))
}

fn analysis(x: &[f64], lead: usize, c: usize, h: usize, w: usize) -> Vec<f64> {
    let (hh, hw) = (h / 2, w / 2);
    let mut out = vec![0.0; x.len()];
    for l in 0..lead {
        for ch in 0..c {
            let src = &x[(l * c + ch) * h * w..][..h * w];
            let dst = &mut out[(l * c + ch) * h * w..][..h * w];
            let q = hh * hw;
            for i in 0..hh {
                for j in 0..hw {
                    let a = src[2 * i * w + 2 * j];
                    let b = src[2 * i * w + 2 * j + 1];
                    let cc = src[(2 * i + 1) * w + 2 * j];
                    let d = src[(2 * i + 1) * w + 2 * j + 1];
                    let bands = butterfly(a, b, cc, d);
                    for (k, v) in bands.into_iter().enumerate() {
                        dst[k * q + i * hw + j] = v;
                    }
                }
            }
        }
    }
    out
}

fn synthesis(s: &[f64], lead: usize, c4: usize, hh: usize, hw: usize) -> Vec<f64> {
    let c = c4 / 4;
    let (h, w) = (hh * 2, hw * 2);
    let mut out = vec![0.0; s.len()];
    let q = hh * hw;
    for l in 0..lead {
        for ch in 0..c {
            let src = &s[(l * c + ch) * h * w..][..h * w];
            let dst = &mut out[(l * c + ch) * h * w..][..h * w];
            for i in 0..hh {
                for j in 0..hw {
                    let p = i * hw + j;
                    let [a, b, cc, d] =
                        butterfly(src[p], src[q + p], src[2 * q + p], src[3 * q + p]);
                    dst[2 * i * w + 2 * j] = a;
                    dst[2 * i * w + 2 * j + 1] = b;
                    dst[(2 * i + 1) * w + 2 * j] = cc;
                    dst[(2 * i + 1) * w + 2 * j + 1] = d;
                }
            }
        }
    }
    out
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(shape_err!(
            "wavelet transform needs even extents, got {h}x{w}"
        ));
    }
    Ok(())
}

fn stacked_shape(shape: &[usize]) -> Vec<usize> {
    let n = shape.len();
    let mut s = shape.to_vec();
    s[n - 3] *= 4;
    s[n - 2] /= 2;
    s[n - 1] /= 2;
    s
}

fn unstacked_shape(shape: &[usize]) -> Vec<usize> {
    let n = shape.len();
    let mut s = shape.to_vec();
    s[n - 3] /= 4;
    s[n - 2] *= 2;
    s[n - 1] *= 2;
    s
}

/// Forward transform of `[.., C, H, W]` into the stacked `[.., 4C, H/2, W/2]`
/// layout.
pub fn dwt2d_stacked(x: &Tensor) -> Result<Tensor> {
    let (lead, c, h, w) = dims(x.shape())?;
    check_even(h, w)?;
    Ok(Tensor::from_parts(
        stacked_shape(x.shape()),
        analysis(x.data(), lead, c, h, w),
        x.dtype(),
    ))
}

/// Inverse of [`dwt2d_stacked`].
pub fn idwt2d_stacked(s: &Tensor) -> Result<Tensor> {
    let (lead, c4, hh, hw) = dims(s.shape())?;
    if c4 % 4 != 0 {
        return Err(shape_err!(
            "stacked sub-bands need a multiple of 4 channels, got {c4}"
        ));
    }
    Ok(Tensor::from_parts(
        unstacked_shape(s.shape()),
        synthesis(s.data(), lead, c4, hh, hw),
        s.dtype(),
    ))
}

/// Forward transform of `x: [C, H, W]` into separate sub-bands.
pub fn dwt2d(x: &Tensor) -> Result<SubBands> {
    if x.rank() != 3 {
        return Err(shape_err!("dwt2d expects [C, H, W], got {:?}", x.shape()));
    }
    SubBands::from_stacked(&dwt2d_stacked(x)?)
}

/// Exact inverse of [`dwt2d`].
pub fn idwt2d(s: &SubBands) -> Result<Tensor> {
    idwt2d_stacked(&s.stacked()?)
}

impl SubBands {
    pub fn shape(&self) -> &[usize] {
        self.ll.shape()
    }

    pub fn bands(&self) -> [&Tensor; 4] {
        [&self.ll, &self.lh, &self.hl, &self.hh]
    }

    /// Interleaves the bands into the stacked `[4C, H/2, W/2]` layout.
    pub fn stacked(&self) -> Result<Tensor> {
        let shape = self.ll.shape();
        if shape.len() != 3 || self.bands().iter().any(|b| b.shape() != shape) {
            return Err(shape_err!("sub-bands must share one [C, h, w] shape"));
        }
        let (c, q) = (shape[0], shape[1] * shape[2]);
        let mut data = Vec::with_capacity(4 * c * q);
        for ch in 0..c {
            for b in self.bands() {
                data.extend_from_slice(&b.data()[ch * q..][..q]);
            }
        }
        Ok(Tensor::from_parts(
            vec![4 * c, shape[1], shape[2]],
            data,
            self.ll.dtype(),
        ))
    }

    pub fn from_stacked(s: &Tensor) -> Result<SubBands> {
        if s.rank() != 3 || !s.shape()[0].is_multiple_of(4) {
            return Err(shape_err!(
                "stacked sub-bands must be [4C, h, w], got {:?}",
                s.shape()
            ));
        }
        let c = s.shape()[0] / 4;
        let idx = |k: usize| -> Vec<usize> { (0..c).map(|ch| 4 * ch + k).collect() };
        Ok(SubBands {
            ll: s.index_select(0, &idx(0))?,
            lh: s.index_select(0, &idx(1))?,
            hl: s.index_select(0, &idx(2))?,
            hh: s.index_select(0, &idx(3))?,
        })
    }
}

/// Channel indices of band `k` (0 = ll .. 3 = hh) in a stacked tensor with
/// `c` source channels.
pub fn band_indices(c: usize, k: usize) -> Vec<usize> {
    (0..c).map(|ch| 4 * ch + k).collect()
}

impl<'t> Var<'t> {
    pub fn dwt2d(self) -> Result<Var<'t>> {
        let x = self.value();
        let (lead, c, h, w) = dims(x.shape())?;
        check_even(h, w)?;
        let y = Tensor::from_parts(
            stacked_shape(x.shape()),
            analysis(x.data(), lead, c, h, w),
            x.dtype(),
        );
        Ok(self.tape().record(y, &[self], move |g, _| {
            vec![Some(synthesis(g, lead, 4 * c, h / 2, w / 2))]
        }))
    }

    pub fn idwt2d(self) -> Result<Var<'t>> {
        let s = self.value();
        let (lead, c4, hh, hw) = dims(s.shape())?;
        if c4 % 4 != 0 {
            return Err(shape_err!(
                "stacked sub-bands need a multiple of 4 channels, got {c4}"
            ));
        }
        let y = Tensor::from_parts(
            unstacked_shape(s.shape()),
            synthesis(s.data(), lead, c4, hh, hw),
            s.dtype(),
        );
        Ok(self.tape().record(y, &[self], move |g, _| {
            vec![Some(analysis(g, lead, c4 / 4, hh * 2, hw * 2))]
        }))
    }
}
