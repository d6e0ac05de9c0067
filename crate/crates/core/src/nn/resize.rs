use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Two-tap interpolation weights for each output coordinate of an `r`-times
/// bilinear upsample with half-pixel centres, clamped at the edges.
fn taps(n: usize, r: usize) -> Vec<(usize, usize, f64)> {
    (0..n * r)
        .map(|d| {
            let s = ((d as f64 + 0.5) / r as f64 - 0.5).max(0.0);
            let i0 = (s.floor() as usize).min(n - 1);
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

struct Plan {
    lead: usize,
    h: usize,
    w: usize,
    ty: Vec<(usize, usize, f64)>,
    tx: Vec<(usize, usize, f64)>,
}

fn plan(shape: &[usize], r: usize) -> Result<(Plan, Vec<usize>)> {
    if r < 1 {
        return Err(shape_err!("upsample factor must be >= 1"));
    }
    let n = shape.len();
    if n < 2 || shape[n - 1] == 0 || shape[n - 2] == 0 {
        return Err(shape_err!(
            "upsample needs [.., H, W] with positive extents, got {:?}",
            shape
        ));
    }
    let (h, w) = (shape[n - 2], shape[n - 1]);
    let mut out = shape.to_vec();
    out[n - 2] = h * r;
    out[n - 1] = w * r;
    let p = Plan {
        lead: shape[..n - 2].iter().product(),
        h,
        w,
        ty: taps(h, r),
        tx: taps(w, r),
    };
    Ok((p, out))
}

fn forward(x: &[f64], p: &Plan) -> Vec<f64> {
    let (oh, ow) = (p.ty.len(), p.tx.len());
    let mut out = Vec::with_capacity(p.lead * oh * ow);
    for l in 0..p.lead {
        let plane = &x[l * p.h * p.w..][..p.h * p.w];
        for &(y0, y1, ly) in &p.ty {
            for &(x0, x1, lx) in &p.tx {
                let top = plane[y0 * p.w + x0] * (1.0 - lx) + plane[y0 * p.w + x1] * lx;
                let bot = plane[y1 * p.w + x0] * (1.0 - lx) + plane[y1 * p.w + x1] * lx;
                out.push(top * (1.0 - ly) + bot * ly);
            }
        }
    }
    out
}

/// Bilinear upsample of the last two axes by integer factor `r`, source
/// coordinate `(d + 0.5) / r - 0.5`, edge clamped.
pub fn upsample_bilinear(x: &Tensor, r: usize) -> Result<Tensor> {
    let (p, shape) = plan(x.shape(), r)?;
    Ok(Tensor::from_parts(shape, forward(x.data(), &p), x.dtype()))
}

impl<'t> Var<'t> {
    pub fn upsample_bilinear(self, r: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (p, shape) = plan(x.shape(), r)?;
        let y = Tensor::from_parts(shape, forward(x.data(), &p), x.dtype());
        let n = x.numel();
        Ok(self.tape().record(y, &[self], move |g, _| {
            let mut dx = vec![0.0; n];
            let (oh, ow) = (p.ty.len(), p.tx.len());
            for l in 0..p.lead {
                let plane = &mut dx[l * p.h * p.w..][..p.h * p.w];
                for (oy, &(y0, y1, ly)) in p.ty.iter().enumerate() {
                    for (ox, &(x0, x1, lx)) in p.tx.iter().enumerate() {
                        let gv = g[(l * oh + oy) * ow + ox];
                        plane[y0 * p.w + x0] += gv * (1.0 - ly) * (1.0 - lx);
                        plane[y0 * p.w + x1] += gv * (1.0 - ly) * lx;
                        plane[y1 * p.w + x0] += gv * ly * (1.0 - lx);
                        plane[y1 * p.w + x1] += gv * ly * lx;
                    }
                }
            }
            vec![Some(dx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::grad_check;
    use crate::rng::RngStream;
    use crate::tensor::DType;

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::uniform(&[2, 3, 4], 0.0, 1.0, &mut RngStream::new(1), DType::F64);
        assert_eq!(upsample_bilinear(&x, 1).unwrap(), x);
        assert!(upsample_bilinear(&x, 0).is_err());
    }

    #[test]
    fn constant_stays_constant() {
        let x = Tensor::full(&[1, 3, 5], 0.3, DType::F64);
        let y = upsample_bilinear(&x, 3).unwrap();
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-15));
    }

    #[test]
    fn matches_per_pixel_formula() {
        let x = Tensor::uniform(&[1, 3, 3], 0.0, 1.0, &mut RngStream::new(2), DType::F64);
        let y = upsample_bilinear(&x, 2).unwrap();
        let at = |i: usize, j: usize| x.get(&[0, i, j]).unwrap();
        for dy in 0..6 {
            for dx in 0..6 {
                let sy = ((dy as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 2.0);
                let sx = ((dx as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 2.0);
                let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
                let (y1, x1) = ((y0 + 1).min(2), (x0 + 1).min(2));
                let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
                let want = at(y0, x0) * (1.0 - fy) * (1.0 - fx)
                    + at(y0, x1) * (1.0 - fy) * fx
                    + at(y1, x0) * fy * (1.0 - fx)
                    + at(y1, x1) * fy * fx;
                assert!((y.get(&[0, dy, dx]).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient() {
        let x = Tensor::uniform(&[2, 3, 2], -1.0, 1.0, &mut RngStream::new(3), DType::F64);
        let e = grad_check(
            |_, v| Ok(v.upsample_bilinear(2)?.square().sum_all()),
            &x,
            1e-4,
        )
        .unwrap();
        assert!(e < 1e-6);
    }
}
