//! Differentiable tensor operations recorded on the tape.

use std::rc::Rc;

use super::tape::Var;
use crate::error::{numeric_err, shape_err, Result};
use crate::tensor::{
    gather_maps, numel, reduce_sum, scatter_maps, validate_axes, AxisMaps, PadMode, Tensor,
};

fn same_shape(a: &Var<'_>, b: &Var<'_>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(shape_err!("shape mismatch {:?} vs {:?}", sa, sb));
    }
    if a.dtype() != b.dtype() {
        return Err(shape_err!(
            "dtype mismatch {} vs {}",
            a.dtype().name(),
            b.dtype().name()
        ));
    }
    Ok(())
}

fn erf(x: f64) -> f64 {
    libm::erf(x)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x * INV_SQRT_2))
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    0.5 * (1.0 + erf(x * INV_SQRT_2)) + x * INV_SQRT_2PI * (-0.5 * x * x).exp()
}

pub(crate) fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'t> Var<'t> {
    fn unary(self, f: impl Fn(f64) -> f64, df: impl Fn(f64, f64) -> f64 + 'static) -> Var<'t> {
        let x = self.value();
        let y = x.map(&f);
        let yv = Rc::new(y.data().to_vec());
        self.tape().record(y, &[self], move |g, _| {
            let d = x
                .data()
                .iter()
                .zip(yv.iter())
                .zip(g)
                .map(|((&xi, &yi), &gi)| gi * df(xi, yi))
                .collect();
            vec![Some(d)]
        })
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape(&self, &other)?;
        let y = self.value().add(&other.value())?;
        Ok(self.tape().record(y, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.to_vec())]
        }))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape(&self, &other)?;
        let y = self.value().sub(&other.value())?;
        Ok(self.tape().record(y, &[self, other], |g, _| {
            vec![Some(g.to_vec()), Some(g.iter().map(|v| -v).collect())]
        }))
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y = a.mul(&b)?;
        Ok(self.tape().record(y, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g * b).collect());
            let gb = needs[1].then(|| g.iter().zip(a.data()).map(|(g, a)| g * a).collect());
            vec![ga, gb]
        }))
    }

    pub fn div(self, other: Var<'t>) -> Result<Var<'t>> {
        same_shape(&self, &other)?;
        let (a, b) = (self.value(), other.value());
        let y = a.div(&b)?;
        Ok(self.tape().record(y, &[self, other], move |g, needs| {
            let ga = needs[0].then(|| g.iter().zip(b.data()).map(|(g, b)| g / b).collect());
            let gb = needs[1].then(|| {
                g.iter()
                    .zip(a.data())
                    .zip(b.data())
                    .map(|((g, a), b)| -g * a / (b * b))
                    .collect()
            });
            vec![ga, gb]
        }))
    }

    pub fn scalar_mul(self, s: f64) -> Var<'t> {
        let y = self.value().scalar_mul(s);
        self.tape().record(y, &[self], move |g, _| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        })
    }

    pub fn scalar_add(self, s: f64) -> Var<'t> {
        let y = self.value().scalar_add(s);
        self.tape()
            .record(y, &[self], |g, _| vec![Some(g.to_vec())])
    }

    pub fn neg(self) -> Var<'t> {
        self.scalar_mul(-1.0)
    }

    pub fn square(self) -> Var<'t> {
        self.unary(|x| x * x, |x, _| 2.0 * x)
    }

    pub fn sqrt(self) -> Result<Var<'t>> {
        if self.value().data().iter().any(|&v| v <= 0.0) {
            return Err(numeric_err!("sqrt of a non-positive element"));
        }
        Ok(self.unary(f64::sqrt, |_, y| 0.5 / y))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.unary(sigmoid_scalar, |_, y| y * (1.0 - y))
    }

    /// Exact GELU, `x * Phi(x)`.
    pub fn gelu(self) -> Var<'t> {
        self.unary(gelu_scalar, |x, _| gelu_grad_scalar(x))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let y = self.value().reshape(shape)?;
        Ok(self
            .tape()
            .record(y, &[self], |g, _| vec![Some(g.to_vec())]))
    }

    fn gather(self, maps: AxisMaps) -> Var<'t> {
        let x = self.value();
        let src_shape = x.shape().to_vec();
        let out_shape: Vec<usize> = maps.iter().map(|m| m.len()).collect();
        let y = Tensor::from_parts(
            out_shape,
            gather_maps(x.data(), &src_shape, &maps),
            x.dtype(),
        );
        self.tape().record(y, &[self], move |g, _| {
            vec![Some(scatter_maps(g, &src_shape, &maps))]
        })
    }

    pub fn pad(self, pads: &[(usize, usize)], mode: PadMode) -> Result<Var<'t>> {
        let maps = self.value().pad_maps(pads, mode)?;
        Ok(self.gather(maps))
    }

    pub fn slice(self, axis: usize, start: usize, stop: usize) -> Result<Var<'t>> {
        let maps = self.value().slice_maps(axis, start, stop)?;
        Ok(self.gather(maps))
    }

    pub fn select(self, axis: usize, index: usize) -> Result<Var<'t>> {
        let mut shape = self.shape();
        let s = self.slice(axis, index, index + 1)?;
        shape.remove(axis);
        s.reshape(&shape)
    }

    pub fn index_select(self, axis: usize, indices: &[usize]) -> Result<Var<'t>> {
        let maps = self.value().index_maps(axis, indices)?;
        Ok(self.gather(maps))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat of an empty list"))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        if values.iter().any(|v| v.dtype() != values[0].dtype()) {
            return Err(shape_err!("concat of mixed dtypes"));
        }
        let refs: Vec<&Tensor> = values.iter().map(|v| v.as_ref()).collect();
        let y = Tensor::concat(&refs, axis)?;
        let shape = y.shape().to_vec();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Ok(first.tape().record(y, parts, move |g, needs| {
            let mut out: Vec<Option<Vec<f64>>> = extents
                .iter()
                .zip(needs)
                .map(|(&e, &n)| n.then(|| Vec::with_capacity(outer * e * inner)))
                .collect();
            let total: usize = extents.iter().sum();
            for o in 0..outer {
                let mut off = o * total * inner;
                for (slot, &e) in out.iter_mut().zip(&extents) {
                    let block = e * inner;
                    if let Some(buf) = slot {
                        buf.extend_from_slice(&g[off..off + block]);
                    }
                    off += block;
                }
            }
            out
        }))
    }

    /// Stacks equally shaped values along a new leading axis.
    pub fn stack(parts: &[Var<'t>]) -> Result<Var<'t>> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("stack of an empty list"))?;
        let mut shape = vec![1];
        shape.extend(first.shape());
        let lifted = parts
            .iter()
            .map(|p| p.reshape(&shape))
            .collect::<Result<Vec<_>>>()?;
        Var::concat(&lifted, 0)
    }

    pub fn permute(self, axes: &[usize]) -> Result<Var<'t>> {
        let y = self.value().permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &a) in axes.iter().enumerate() {
            inverse[a] = i;
        }
        let out_shape = y.shape().to_vec();
        let dtype = y.dtype();
        Ok(self.tape().record(y, &[self], move |g, _| {
            let gt = Tensor::from_parts(out_shape.clone(), g.to_vec(), dtype);
            vec![Some(
                gt.permute(&inverse)
                    .expect("valid inverse permutation")
                    .into_data(),
            )]
        }))
    }

    pub fn sum_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(axes, false)
    }

    pub fn mean_axes(self, axes: &[usize]) -> Result<Var<'t>> {
        self.reduce(axes, true)
    }

    fn reduce(self, axes: &[usize], mean: bool) -> Result<Var<'t>> {
        let x = self.value();
        let in_shape = x.shape().to_vec();
        let mask = validate_axes(in_shape.len(), axes)?;
        let (out_shape, mut data) = reduce_sum(&in_shape, x.data(), axes)?;
        let k = (numel(&in_shape) / numel(&out_shape).max(1)).max(1) as f64;
        let scale = if mean { 1.0 / k } else { 1.0 };
        if mean {
            for v in &mut data {
                *v *= scale;
            }
        }
        let y = Tensor::from_parts(out_shape, data, x.dtype());
        let maps: AxisMaps = in_shape
            .iter()
            .zip(&mask)
            .map(|(&n, &m)| {
                if m {
                    vec![Some(0); n]
                } else {
                    (0..n).map(Some).collect()
                }
            })
            .collect();
        let kept_shape: Vec<usize> = in_shape
            .iter()
            .zip(&mask)
            .map(|(&n, &m)| if m { 1 } else { n })
            .collect();
        Ok(self.tape().record(y, &[self], move |g, _| {
            let mut gx = gather_maps(g, &kept_shape, &maps);
            if scale != 1.0 {
                for v in &mut gx {
                    *v *= scale;
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn sum_all(self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.sum_axes(&axes).expect("all axes are valid")
    }

    pub fn mean_all(self) -> Var<'t> {
        let axes: Vec<usize> = (0..self.shape().len()).collect();
        self.mean_axes(&axes).expect("all axes are valid")
    }

    /// Tiles a single-element value to `shape`.
    pub fn expand_scalar(self, shape: &[usize]) -> Result<Var<'t>> {
        let x = self.value();
        if x.numel() != 1 {
            return Err(shape_err!("expand_scalar on shape {:?}", x.shape()));
        }
        let y = Tensor::full(shape, x.item(), x.dtype());
        Ok(self
            .tape()
            .record(y, &[self], |g, _| vec![Some(vec![g.iter().sum()])]))
    }
}
