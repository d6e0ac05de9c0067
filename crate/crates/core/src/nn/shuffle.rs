use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

/// Source index for every output element of a pixel shuffle with factor
/// `r` applied to `[.., r*r*C, H, W]`.
fn shuffle_indices(shape: &[usize], r: usize) -> Result<(Vec<usize>, Vec<usize>)> {
    if shape.len() < 3 || r == 0 {
        return Err(shape_err!(
            "pixel_shuffle needs [.., C, H, W] and r >= 1, got {:?}, r = {r}",
            shape
        ));
    }
    let n = shape.len();
    let (cin, h, w) = (shape[n - 3], shape[n - 2], shape[n - 1]);
    if cin % (r * r) != 0 {
        return Err(shape_err!(
            "{cin} channels not divisible by r^2 = {}",
            r * r
        ));
    }
    let c = cin / (r * r);
    let lead: usize = shape[..n - 3].iter().product();
    let mut out_shape = shape[..n - 3].to_vec();
    out_shape.extend([c, r * h, r * w]);
    let mut idx = Vec::with_capacity(lead * cin * h * w);
    for l in 0..lead {
        for ch in 0..c {
            for oy in 0..r * h {
                let (i, a) = (oy / r, oy % r);
                for ox in 0..r * w {
                    let (j, b) = (ox / r, ox % r);
                    let src_c = ch * r * r + a * r + b;
                    idx.push(((l * cin + src_c) * h + i) * w + j);
                }
            }
        }
    }
    Ok((out_shape, idx))
}

/// Rearranges `[r²C, H, W]` into `[C, rH, rW]`:
/// `out[c, r*i + a, r*j + b] = in[c*r² + a*r + b, i, j]`. Leading batch
/// axes are carried through.
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let (shape, idx) = shuffle_indices(x.shape(), r)?;
    Ok(Tensor::from_parts(
        shape,
        idx.iter().map(|&i| x.data()[i]).collect(),
        x.dtype(),
    ))
}

/// Inverse of [`pixel_shuffle`]: `[C, rH, rW]` back to `[r²C, H, W]`.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Result<Tensor> {
    let n = x.rank();
    if n < 3 || r == 0 || !x.shape()[n - 2].is_multiple_of(r) || !x.shape()[n - 1].is_multiple_of(r)
    {
        return Err(shape_err!(
            "pixel_unshuffle: extents of {:?} not divisible by {r}",
            x.shape()
        ));
    }
    let mut src_shape = x.shape()[..n - 3].to_vec();
    src_shape.extend([
        x.shape()[n - 3] * r * r,
        x.shape()[n - 2] / r,
        x.shape()[n - 1] / r,
    ]);
    let (_, idx) = shuffle_indices(&src_shape, r)?;
    let mut out = vec![0.0; x.numel()];
    for (o, &s) in idx.iter().enumerate() {
        out[s] = x.data()[o];
    }
    Ok(Tensor::from_parts(src_shape, out, x.dtype()))
}

impl<'t> Var<'t> {
    pub fn pixel_shuffle(self, r: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (shape, idx) = shuffle_indices(x.shape(), r)?;
        let y = Tensor::from_parts(shape, idx.iter().map(|&i| x.data()[i]).collect(), x.dtype());
        let n = x.numel();
        Ok(self.tape().record(y, &[self], move |g, _| {
            let mut dx = vec![0.0; n];
            for (o, &s) in idx.iter().enumerate() {
                dx[s] = g[o];
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
        let x = Tensor::iota(&[3, 2, 4], DType::F64);
        assert_eq!(pixel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn two_by_two_block_layout() {
        let x = Tensor::from_f64(&[4, 1, 1], vec![1., 2., 3., 4.]).unwrap();
        let y = pixel_shuffle(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 2]);
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
    }

    #[test]
    fn factor_four_shape_and_round_trip() {
        let x = Tensor::uniform(
            &[16 * 3, 5, 6],
            0.0,
            1.0,
            &mut RngStream::new(3),
            DType::F32,
        );
        let y = pixel_shuffle(&x, 4).unwrap();
        assert_eq!(y.shape(), &[3, 20, 24]);
        assert_eq!(pixel_unshuffle(&y, 4).unwrap(), x);
        let b = x.reshape(&[1, 48, 5, 6]).unwrap();
        assert_eq!(pixel_shuffle(&b, 4).unwrap().shape(), &[1, 3, 20, 24]);
    }

    #[test]
    fn divisibility_checked() {
        assert!(pixel_shuffle(&Tensor::zeros(&[6, 2, 2], DType::F64), 2).is_err());
    }

    #[test]
    fn gradient_is_inverse_permutation() {
        let x = Tensor::uniform(&[8, 2, 3], -1.0, 1.0, &mut RngStream::new(1), DType::F64);
        let probe = Tensor::uniform(&[2, 4, 6], -1.0, 1.0, &mut RngStream::new(2), DType::F64);
        let e = grad_check(
            |t, v| {
                Ok(v.pixel_shuffle(2)?
                    .mul(t.constant(probe.clone()))?
                    .sum_all())
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(e < 1e-9);
    }

    proptest::proptest! {
        #[test]
        fn shuffle_is_a_bijection(c in 1usize..3, r in 1usize..4, h in 1usize..5, w in 1usize..5, seed in 0u64..100) {
            let x = Tensor::uniform(&[c * r * r, h, w], -1.0, 1.0, &mut RngStream::new(seed), DType::F64);
            let y = pixel_shuffle(&x, r).unwrap();
            proptest::prop_assert_eq!(pixel_unshuffle(&y, r).unwrap(), x);
        }
    }
}
