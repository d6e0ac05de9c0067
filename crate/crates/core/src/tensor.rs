//! Dense row-major tensors.
//!
//! Elements are held as `f64`. A tensor tagged [`DType::F32`] keeps every
//! element rounded to the nearest `f32`, so float32 results are exactly what
//! a float32 kernel with float64 accumulation would produce.

use crate::error::{numeric_err, shape_err, Result};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 1,
            DType::F64 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            _ => None,
        }
    }

    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            DType::F32 => v as f32 as f64,
            DType::F64 => v,
        }
    }

    pub fn round_slice(self, data: &mut [f64]) {
        if self == DType::F32 {
            for v in data {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::F32 => "float32",
            DType::F64 => "float64",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Reflect,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    dtype: DType,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Per-axis index maps: output coordinate `i` on axis `a` reads source
/// coordinate `maps[a][i]`, or zero when `None`.
pub(crate) type AxisMaps = Vec<Vec<Option<usize>>>;

pub(crate) fn gather_maps(src: &[f64], src_shape: &[usize], maps: &AxisMaps) -> Vec<f64> {
    let out_shape: Vec<usize> = maps.iter().map(|m| m.len()).collect();
    let mut out = vec![0.0; numel(&out_shape)];
    visit_maps(src_shape, maps, |o, s| {
        if let Some(s) = s {
            out[o] = src[s];
        }
    });
    out
}

pub(crate) fn scatter_maps(grad_out: &[f64], src_shape: &[usize], maps: &AxisMaps) -> Vec<f64> {
    let mut g = vec![0.0; numel(src_shape)];
    visit_maps(src_shape, maps, |o, s| {
        if let Some(s) = s {
            g[s] += grad_out[o];
        }
    });
    g
}

fn visit_maps(src_shape: &[usize], maps: &AxisMaps, mut f: impl FnMut(usize, Option<usize>)) {
    let out_shape: Vec<usize> = maps.iter().map(|m| m.len()).collect();
    let total = numel(&out_shape);
    if total == 0 {
        return;
    }
    let rank = out_shape.len();
    if rank == 0 {
        f(0, Some(0));
        return;
    }
    let src_strides = strides(src_shape);
    let mut idx = vec![0usize; rank];
    for o in 0..total {
        let mut s = Some(0usize);
        for a in 0..rank {
            s = match (s, maps[a][idx[a]]) {
                (Some(acc), Some(si)) => Some(acc + si * src_strides[a]),
                _ => None,
            };
        }
        f(o, s);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
}

/// Reflect (mirror without edge repeat) an index into `0..n`.
pub(crate) fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f64>, dtype: DType) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(shape_err!(
                "shape {:?} holds {} elements but {} were given",
                shape,
                numel(shape),
                data.len()
            ));
        }
        let mut data = data;
        dtype.round_slice(&mut data);
        Ok(Self {
            shape: shape.to_vec(),
            dtype,
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn from_f64(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(shape, data, DType::F64)
    }

    pub fn from_f32(shape: &[usize], data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| v as f64).collect(), DType::F32)
    }

    /// Internal constructor for kernels that already produced `numel(shape)`
    /// elements.
    pub(crate) fn from_parts(shape: Vec<usize>, mut data: Vec<f64>, dtype: DType) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        dtype.round_slice(&mut data);
        Self {
            shape,
            dtype,
            data,
            requires_grad: false,
            grad: None,
        }
    }

    pub fn zeros(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, 0.0, dtype)
    }

    pub fn ones(shape: &[usize], dtype: DType) -> Self {
        Self::full(shape, 1.0, dtype)
    }

    pub fn full(shape: &[usize], value: f64, dtype: DType) -> Self {
        Self::from_parts(shape.to_vec(), vec![value; numel(shape)], dtype)
    }

    pub fn scalar(value: f64, dtype: DType) -> Self {
        Self::from_parts(vec![], vec![value], dtype)
    }

    /// 0, 1, 2, ... in row-major order.
    pub fn iota(shape: &[usize], dtype: DType) -> Self {
        let n = numel(shape);
        Self::from_parts(shape.to_vec(), (0..n).map(|i| i as f64).collect(), dtype)
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut RngStream, dtype: DType) -> Self {
        let n = numel(shape);
        Self::from_parts(
            shape.to_vec(),
            (0..n).map(|_| rng.uniform(lo, hi)).collect(),
            dtype,
        )
    }

    pub fn randn(shape: &[usize], std: f64, rng: &mut RngStream, dtype: DType) -> Self {
        let n = numel(shape);
        Self::from_parts(
            shape.to_vec(),
            (0..n).map(|_| std * rng.normal()).collect(),
            dtype,
        )
    }

    pub fn with_requires_grad(mut self, requires_grad: bool) -> Self {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
        self
    }

    pub fn set_requires_grad(&mut self, requires_grad: bool) {
        self.requires_grad = requires_grad;
        if !requires_grad {
            self.grad = None;
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn strides(&self) -> Vec<usize> {
        strides(&self.shape)
    }

    pub fn item(&self) -> f64 {
        self.data[0]
    }

    fn flat_index(&self, idx: &[usize]) -> Result<usize> {
        if idx.len() != self.shape.len() {
            return Err(shape_err!(
                "index rank {} for tensor of rank {}",
                idx.len(),
                self.rank()
            ));
        }
        let mut off = 0;
        for ((&i, &n), s) in idx.iter().zip(&self.shape).zip(self.strides()) {
            if i >= n {
                return Err(shape_err!(
                    "index {:?} out of bounds for shape {:?}",
                    idx,
                    self.shape
                ));
            }
            off += i * s;
        }
        Ok(off)
    }

    pub fn get(&self, idx: &[usize]) -> Result<f64> {
        Ok(self.data[self.flat_index(idx)?])
    }

    pub fn set(&mut self, idx: &[usize], value: f64) -> Result<()> {
        let i = self.flat_index(idx)?;
        self.data[i] = self.dtype.round(value);
        Ok(())
    }

    /// Applies `f` to every element in place, keeping dtype rounding.
    pub fn map_inplace(&mut self, f: impl Fn(f64) -> f64) {
        let d = self.dtype;
        for v in &mut self.data {
            *v = d.round(f(*v));
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        let mut t = self.detached();
        t.map_inplace(f);
        t
    }

    /// Copy of the value without gradient state.
    pub fn detached(&self) -> Tensor {
        Self {
            shape: self.shape.clone(),
            dtype: self.dtype,
            data: self.data.clone(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn to_dtype(&self, dtype: DType) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.clone(), dtype)
    }

    pub fn grad(&self) -> Option<Tensor> {
        self.grad
            .as_ref()
            .map(|g| Self::from_parts(self.shape.clone(), g.clone(), self.dtype))
    }

    pub fn grad_data(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `g` into the gradient buffer. Ignored when the tensor does not
    /// require gradients.
    pub fn accumulate_grad(&mut self, g: &[f64]) -> Result<()> {
        if g.len() != self.data.len() {
            return Err(shape_err!(
                "gradient of {} elements for tensor of {}",
                g.len(),
                self.data.len()
            ));
        }
        if !self.requires_grad {
            return Ok(());
        }
        let d = self.dtype;
        match &mut self.grad {
            Some(buf) => {
                for (b, &x) in buf.iter_mut().zip(g) {
                    *b = d.round(*b + x);
                }
            }
            None => {
                let mut buf = g.to_vec();
                d.round_slice(&mut buf);
                self.grad = Some(buf);
            }
        }
        Ok(())
    }

    /// Overwrites values in place (used by optimizers). Length must match.
    pub fn assign(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.data.len() {
            return Err(shape_err!(
                "assign of {} values to tensor of {}",
                values.len(),
                self.data.len()
            ));
        }
        self.data.copy_from_slice(values);
        self.dtype.round_slice(&mut self.data);
        Ok(())
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != self.numel() {
            return Err(shape_err!(
                "cannot reshape {:?} into {:?}",
                self.shape,
                shape
            ));
        }
        Ok(Self::from_parts(
            shape.to_vec(),
            self.data.clone(),
            self.dtype,
        ))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        check_same_shape(self, other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean_all(&self) -> f64 {
        self.sum_all() / self.numel() as f64
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        if other.data.contains(&0.0) {
            return Err(numeric_err!("division by an exact zero element"));
        }
        self.zip_with(other, |a, b| a / b)
    }

    pub fn scalar_mul(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn scalar_add(&self, s: f64) -> Tensor {
        self.map(|v| v + s)
    }

    fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        check_same_shape(self, other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Self::from_parts(self.shape.clone(), data, self.dtype))
    }

    pub(crate) fn pad_maps(&self, pads: &[(usize, usize)], mode: PadMode) -> Result<AxisMaps> {
        if pads.len() != self.rank() {
            return Err(shape_err!(
                "{} pad pairs for rank {}",
                pads.len(),
                self.rank()
            ));
        }
        let mut maps = Vec::with_capacity(self.rank());
        for (&n, &(before, after)) in self.shape.iter().zip(pads) {
            if mode == PadMode::Reflect && (before >= n || after >= n) && (before > 0 || after > 0)
            {
                return Err(shape_err!(
                    "reflect pad ({before},{after}) needs width < extent {n}"
                ));
            }
            let map = (0..n + before + after)
                .map(|o| {
                    let i = o as isize - before as isize;
                    if (0..n as isize).contains(&i) {
                        Some(i as usize)
                    } else {
                        match mode {
                            PadMode::Zero => None,
                            PadMode::Reflect => Some(reflect_index(i, n)),
                        }
                    }
                })
                .collect();
            maps.push(map);
        }
        Ok(maps)
    }

    pub fn pad(&self, pads: &[(usize, usize)], mode: PadMode) -> Result<Tensor> {
        let maps = self.pad_maps(pads, mode)?;
        let shape = maps.iter().map(|m| m.len()).collect();
        Ok(Self::from_parts(
            shape,
            gather_maps(&self.data, &self.shape, &maps),
            self.dtype,
        ))
    }

    pub(crate) fn slice_maps(&self, axis: usize, start: usize, stop: usize) -> Result<AxisMaps> {
        if axis >= self.rank() || start > stop || stop > self.shape[axis] {
            return Err(shape_err!(
                "slice [{start},{stop}) on axis {axis} of {:?}",
                self.shape
            ));
        }
        Ok(self
            .shape
            .iter()
            .enumerate()
            .map(|(a, &n)| {
                if a == axis {
                    (start..stop).map(Some).collect()
                } else {
                    (0..n).map(Some).collect()
                }
            })
            .collect())
    }

    pub fn slice(&self, axis: usize, start: usize, stop: usize) -> Result<Tensor> {
        let maps = self.slice_maps(axis, start, stop)?;
        let shape = maps.iter().map(|m| m.len()).collect();
        Ok(Self::from_parts(
            shape,
            gather_maps(&self.data, &self.shape, &maps),
            self.dtype,
        ))
    }

    /// Takes `index` along `axis` and drops that axis.
    pub fn select(&self, axis: usize, index: usize) -> Result<Tensor> {
        let s = self.slice(axis, index, index + 1)?;
        let mut shape = self.shape.clone();
        shape.remove(axis);
        s.reshape(&shape)
    }

    pub(crate) fn index_maps(&self, axis: usize, indices: &[usize]) -> Result<AxisMaps> {
        if axis >= self.rank() {
            return Err(shape_err!(
                "axis {axis} out of range for rank {}",
                self.rank()
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.shape[axis]) {
            return Err(shape_err!(
                "index {bad} out of range on axis {axis} of {:?}",
                self.shape
            ));
        }
        Ok(self
            .shape
            .iter()
            .enumerate()
            .map(|(a, &n)| {
                if a == axis {
                    indices.iter().map(|&i| Some(i)).collect()
                } else {
                    (0..n).map(Some).collect()
                }
            })
            .collect())
    }

    pub fn index_select(&self, axis: usize, indices: &[usize]) -> Result<Tensor> {
        let maps = self.index_maps(axis, indices)?;
        let shape = maps.iter().map(|m| m.len()).collect();
        Ok(Self::from_parts(
            shape,
            gather_maps(&self.data, &self.shape, &maps),
            self.dtype,
        ))
    }

    pub fn concat(parts: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("concat of an empty list"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(shape_err!("concat axis {axis} for rank {rank}"));
        }
        let mut total = 0;
        for p in parts {
            if p.rank() != rank
                || p.shape
                    .iter()
                    .zip(&first.shape)
                    .enumerate()
                    .any(|(a, (x, y))| a != axis && x != y)
            {
                return Err(shape_err!(
                    "concat shapes {:?} and {:?} disagree off axis {axis}",
                    first.shape,
                    p.shape
                ));
            }
            total += p.shape[axis];
        }
        let mut shape = first.shape.clone();
        shape[axis] = total;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(numel(&shape));
        for o in 0..outer {
            for p in parts {
                let block = p.shape[axis] * inner;
                data.extend_from_slice(&p.data[o * block..(o + 1) * block]);
            }
        }
        Ok(Self::from_parts(shape, data, first.dtype))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err!("stack of an empty list"))?;
        let mut data = Vec::with_capacity(first.numel() * parts.len());
        for p in parts {
            check_same_shape(first, p)?;
            data.extend_from_slice(&p.data);
        }
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(&first.shape);
        Ok(Self::from_parts(shape, data, first.dtype))
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank
            || axes
                .iter()
                .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
        {
            return Err(shape_err!("invalid permutation {:?} for rank {rank}", axes));
        }
        let shape: Vec<usize> = axes.iter().map(|&a| self.shape[a]).collect();
        let src_strides = self.strides();
        let perm_strides: Vec<usize> = axes.iter().map(|&a| src_strides[a]).collect();
        let mut data = Vec::with_capacity(self.numel());
        let mut idx = vec![0usize; rank];
        for _ in 0..self.numel() {
            let off: usize = idx.iter().zip(&perm_strides).map(|(i, s)| i * s).sum();
            data.push(self.data[off]);
            for a in (0..rank).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Self::from_parts(shape, data, self.dtype))
    }

    /// Sums over `axes` (removed from the shape).
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let (shape, data) = reduce_sum(&self.shape, &self.data, axes)?;
        Ok(Self::from_parts(shape, data, self.dtype))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let (shape, mut data) = reduce_sum(&self.shape, &self.data, axes)?;
        let k = (self.numel() / numel(&shape).max(1)) as f64;
        for v in &mut data {
            *v /= k;
        }
        Ok(Self::from_parts(shape, data, self.dtype))
    }
}

pub(crate) fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape {
        return Err(shape_err!("shape mismatch {:?} vs {:?}", a.shape, b.shape));
    }
    Ok(())
}

pub(crate) fn validate_axes(rank: usize, axes: &[usize]) -> Result<Vec<bool>> {
    let mut mask = vec![false; rank];
    for &a in axes {
        if a >= rank || mask[a] {
            return Err(shape_err!(
                "invalid reduction axes {:?} for rank {rank}",
                axes
            ));
        }
        mask[a] = true;
    }
    Ok(mask)
}

pub(crate) fn reduce_sum(
    shape: &[usize],
    data: &[f64],
    axes: &[usize],
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mask = validate_axes(shape.len(), axes)?;
    let out_shape: Vec<usize> = shape
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| !m)
        .map(|(&n, _)| n)
        .collect();
    let maps: AxisMaps = shape
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
    // Reduced axes map every coordinate to 0, so scattering the input onto the
    // kept-axes shape accumulates in row-major order.
    let mut kept_shape = shape.to_vec();
    for (k, &m) in kept_shape.iter_mut().zip(&mask) {
        if m {
            *k = 1;
        }
    }
    let sums = scatter_maps(data, &kept_shape, &maps);
    Ok((out_shape, sums))
}
