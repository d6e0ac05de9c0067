//! Zero-outside bilinear / trilinear sampling and deformable convolution.

use crate::autograd::Var;
use crate::error::{numeric_err, shape_err, Result};
use crate::par;
use crate::tensor::Tensor;

use super::conv::ConvSpec;

/// Interpolates `vol` (extents `dims = [T, H, W]`) at real position `pos`.
/// Neighbours outside the volume contribute zero. Returns the value and its
/// derivative with respect to each coordinate.
#[inline]
fn sample(vol: &[f64], dims: [usize; 3], pos: [f64; 3]) -> (f64, [f64; 3]) {
    let mut value = 0.0;
    let mut d = [0.0; 3];
    for_each_corner(dims, pos, |idx, w, dw| {
        let v = vol[idx];
        value += w * v;
        d[0] += dw[0] * v;
        d[1] += dw[1] * v;
        d[2] += dw[2] * v;
    });
    (value, d)
}

/// Visits the in-range corners of the interpolation cell around `pos` with
/// their weights and weight derivatives.
#[inline]
fn for_each_corner(dims: [usize; 3], pos: [f64; 3], mut f: impl FnMut(usize, f64, [f64; 3])) {
    let base = pos.map(f64::floor);
    let frac = [pos[0] - base[0], pos[1] - base[1], pos[2] - base[2]];
    let i0 = base.map(|b| b as isize);
    for a in 0..2isize {
        let t = i0[0] + a;
        if t < 0 || t >= dims[0] as isize {
            continue;
        }
        let (wt, dwt) = if a == 0 {
            (1.0 - frac[0], -1.0)
        } else {
            (frac[0], 1.0)
        };
        for b in 0..2isize {
            let y = i0[1] + b;
            if y < 0 || y >= dims[1] as isize {
                continue;
            }
            let (wy, dwy) = if b == 0 {
                (1.0 - frac[1], -1.0)
            } else {
                (frac[1], 1.0)
            };
            for c in 0..2isize {
                let x = i0[2] + c;
                if x < 0 || x >= dims[2] as isize {
                    continue;
                }
                let (wx, dwx) = if c == 0 {
                    (1.0 - frac[2], -1.0)
                } else {
                    (frac[2], 1.0)
                };
                let idx = ((t as usize) * dims[1] + y as usize) * dims[2] + x as usize;
                f(
                    idx,
                    wt * wy * wx,
                    [dwt * wy * wx, wt * dwy * wx, wt * wy * dwx],
                );
            }
        }
    }
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if !t.is_finite() {
        return Err(numeric_err!("non-finite {what}"));
    }
    Ok(())
}

fn sample_points_forward(x: &Tensor, pts: &Tensor) -> Result<Tensor> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(shape_err!("bilinear_sample expects [C, H, W], got {:?}", s));
    }
    if pts.rank() != 2 || pts.shape()[1] != 2 {
        return Err(shape_err!("points must be [L, 2], got {:?}", pts.shape()));
    }
    check_finite(pts, "sample point")?;
    let (c, h, w) = (s[0], s[1], s[2]);
    let l = pts.shape()[0];
    let mut out = vec![0.0; c * l];
    par::for_each_chunk(&mut out, l.max(1), |ci, row| {
        let plane = &x.data()[ci * h * w..][..h * w];
        for (li, o) in row.iter_mut().enumerate() {
            let p = &pts.data()[li * 2..li * 2 + 2];
            *o = sample(plane, [1, h, w], [0.0, p[0], p[1]]).0;
        }
    });
    Ok(Tensor::from_parts(vec![c, l], out, x.dtype()))
}

/// Bilinear interpolation of `x: [C, H, W]` at `points: [L, 2]` of `(y, x)`
/// pairs; returns `[C, L]`. Out-of-frame neighbours read as zero.
pub fn bilinear_sample(x: &Tensor, points: &Tensor) -> Result<Tensor> {
    sample_points_forward(x, points)
}

/// Layout and geometry of a deformable convolution.
#[derive(Clone, Debug)]
struct DeformGeom {
    cin: usize,
    cout: usize,
    groups: usize,
    input: [usize; 3],
    output: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    /// 2 for (dy, dx) offsets, 3 for (dt, dy, dx).
    offset_dims: usize,
}

impl DeformGeom {
    fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    fn positions(&self) -> usize {
        self.output.iter().product()
    }

    fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    /// Sampling position of tap `k` at output position `p`.
    #[inline]
    fn position(&self, offsets: &[f64], k: usize, p: usize) -> [f64; 3] {
        let [_, oh, ow] = self.output;
        let [_, kh, kw] = self.kernel;
        let (ot, ohh, oww) = (p / (oh * ow), (p / ow) % oh, p % ow);
        let (kt, khh, kww) = (k / (kh * kw), (k / kw) % kh, k % kw);
        let base = [
            (ot * self.stride[0] + kt) as f64 - self.pad[0] as f64,
            (ohh * self.stride[1] + khh) as f64 - self.pad[1] as f64,
            (oww * self.stride[2] + kww) as f64 - self.pad[2] as f64,
        ];
        let np = self.positions();
        let d = self.offset_dims;
        let off = |j: usize| offsets[(k * d + j) * np + p];
        if d == 3 {
            [base[0] + off(0), base[1] + off(1), base[2] + off(2)]
        } else {
            [base[0], base[1] + off(0), base[2] + off(1)]
        }
    }

    /// Sampled columns `[C_in, K, P]`.
    fn columns(&self, x: &[f64], offsets: &[f64]) -> Vec<f64> {
        let (k, np, plane) = (self.taps(), self.positions(), self.in_plane());
        let mut cols = vec![0.0; self.cin * k * np];
        par::for_each_chunk(&mut cols, k * np, |ci, chunk| {
            let vol = &x[ci * plane..][..plane];
            for kk in 0..k {
                for p in 0..np {
                    chunk[kk * np + p] = sample(vol, self.input, self.position(offsets, kk, p)).0;
                }
            }
        });
        cols
    }

    fn forward(&self, x: &[f64], w: &[f64], bias: Option<&[f64]>, offsets: &[f64]) -> Vec<f64> {
        let cols = self.columns(x, offsets);
        let (k, np) = (self.taps(), self.positions());
        let (cin_g, cout_g) = (self.cin / self.groups, self.cout / self.groups);
        let mut out = vec![0.0; self.cout * np];
        par::for_each_chunk(&mut out, np, |oc, row| {
            if let Some(b) = bias {
                row.fill(b[oc]);
            }
            let grp = oc / cout_g;
            for icl in 0..cin_g {
                let ic = grp * cin_g + icl;
                for kk in 0..k {
                    let wv = w[(oc * cin_g + icl) * k + kk];
                    let col = &cols[(ic * k + kk) * np..][..np];
                    for (o, c) in row.iter_mut().zip(col) {
                        *o += wv * c;
                    }
                }
            }
        });
        out
    }

    /// Returns (dx, dw, db, doffsets) for the requested parents.
    fn backward(
        &self,
        dy: &[f64],
        x: &[f64],
        w: &[f64],
        offsets: &[f64],
        need_x: bool,
        need_w: bool,
        need_off: bool,
    ) -> (Option<Vec<f64>>, Option<Vec<f64>>, Option<Vec<f64>>) {
        let (k, np, plane) = (self.taps(), self.positions(), self.in_plane());
        let (cin_g, cout_g) = (self.cin / self.groups, self.cout / self.groups);

        let dw = need_w.then(|| {
            let cols = self.columns(x, offsets);
            let mut dw = vec![0.0; self.cout * cin_g * k];
            par::for_each_chunk(&mut dw, cin_g * k, |oc, chunk| {
                let grp = oc / cout_g;
                let dyr = &dy[oc * np..][..np];
                for icl in 0..cin_g {
                    let ic = grp * cin_g + icl;
                    for kk in 0..k {
                        let col = &cols[(ic * k + kk) * np..][..np];
                        chunk[icl * k + kk] = dyr.iter().zip(col).map(|(a, b)| a * b).sum();
                    }
                }
            });
            dw
        });

        if !need_x && !need_off {
            return (None, dw, None);
        }
        // d(loss)/d(columns), [C_in, K, P]
        let mut dcols = vec![0.0; self.cin * k * np];
        par::for_each_chunk(&mut dcols, k * np, |ic, chunk| {
            let grp = ic / cin_g;
            let icl = ic % cin_g;
            for ocl in 0..cout_g {
                let oc = grp * cout_g + ocl;
                let dyr = &dy[oc * np..][..np];
                for kk in 0..k {
                    let wv = w[(oc * cin_g + icl) * k + kk];
                    for (d, g) in chunk[kk * np..][..np].iter_mut().zip(dyr) {
                        *d += wv * g;
                    }
                }
            }
        });

        let dx = need_x.then(|| {
            let mut dx = vec![0.0; self.cin * plane];
            par::for_each_chunk(&mut dx, plane, |ic, vol| {
                for kk in 0..k {
                    for p in 0..np {
                        let g = dcols[(ic * k + kk) * np + p];
                        if g == 0.0 {
                            continue;
                        }
                        for_each_corner(
                            self.input,
                            self.position(offsets, kk, p),
                            |idx, wgt, _| {
                                vol[idx] += wgt * g;
                            },
                        );
                    }
                }
            });
            dx
        });

        let doff = need_off.then(|| {
            let d = self.offset_dims;
            let mut doff = vec![0.0; k * d * np];
            par::for_each_chunk(&mut doff, d * np, |kk, chunk| {
                for p in 0..np {
                    let pos = self.position(offsets, kk, p);
                    let mut acc = [0.0; 3];
                    for ic in 0..self.cin {
                        let g = dcols[(ic * k + kk) * np + p];
                        let (_, dv) = sample(&x[ic * plane..][..plane], self.input, pos);
                        for j in 0..3 {
                            acc[j] += g * dv[j];
                        }
                    }
                    if d == 3 {
                        for j in 0..3 {
                            chunk[j * np + p] = acc[j];
                        }
                    } else {
                        chunk[p] = acc[1];
                        chunk[np + p] = acc[2];
                    }
                }
            });
            doff
        });
        (dx, dw, doff)
    }
}

fn deform_geom(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    offsets: &Tensor,
    spec: &ConvSpec,
    rank: usize,
) -> Result<(DeformGeom, Vec<usize>)> {
    spec.validate(rank)?;
    let s = x.shape();
    if s.len() != rank + 1 {
        return Err(shape_err!(
            "deformable conv input must have rank {}, got {:?}",
            rank + 1,
            s
        ));
    }
    if s[0] != spec.in_channels {
        return Err(shape_err!(
            "input has {} channels, spec expects {}",
            s[0],
            spec.in_channels
        ));
    }
    if w.shape() != spec.weight_shape().as_slice() {
        return Err(shape_err!(
            "weight shape {:?}, spec expects {:?}",
            w.shape(),
            spec.weight_shape()
        ));
    }
    match (b, spec.bias) {
        (Some(b), true) if b.shape() == [spec.out_channels] => {}
        (None, false) => {}
        _ => return Err(shape_err!("bias does not match spec")),
    }
    let spatial = &s[1..];
    let out = spec.output_extents(spatial);
    let k = spec.taps();
    let mut off_shape = vec![rank * k];
    off_shape.extend_from_slice(&out);
    if offsets.shape() != off_shape.as_slice() {
        return Err(shape_err!(
            "offsets shape {:?}, expected {:?}",
            offsets.shape(),
            off_shape
        ));
    }
    check_finite(offsets, "offset")?;
    let lift = |v: &[usize], fill: usize| {
        if v.len() == 2 {
            [fill, v[0], v[1]]
        } else {
            [v[0], v[1], v[2]]
        }
    };
    let g = DeformGeom {
        cin: spec.in_channels,
        cout: spec.out_channels,
        groups: spec.groups,
        input: lift(spatial, 1),
        output: lift(&out, 1),
        kernel: lift(&spec.kernel, 1),
        stride: lift(&spec.stride, 1),
        pad: lift(&spec.padding(), 0),
        offset_dims: rank,
    };
    let mut out_shape = vec![spec.out_channels];
    out_shape.extend(out);
    Ok((g, out_shape))
}

/// Deformable 2D convolution. `x: [C_in, H, W]`, `offsets: [2K, H_out, W_out]`
/// holding `(dy, dx)` for each of the `K = kh * kw` taps (row-major tap
/// order). Each tap samples `x` bilinearly at its grid position plus offset.
pub fn deformable_conv2d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    offsets: &Tensor,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (g, shape) = deform_geom(x, w, b, offsets, spec, 2)?;
    Ok(Tensor::from_parts(
        shape,
        g.forward(x.data(), w.data(), b.map(|b| b.data()), offsets.data()),
        x.dtype(),
    ))
}

/// Deformable 3D convolution with trilinear sampling. `x: [C_in, T, H, W]`,
/// `offsets: [3K, T_out, H_out, W_out]` holding `(dt, dy, dx)` per tap.
pub fn deformable_conv3d(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    offsets: &Tensor,
    spec: &ConvSpec,
) -> Result<Tensor> {
    let (g, shape) = deform_geom(x, w, b, offsets, spec, 3)?;
    Ok(Tensor::from_parts(
        shape,
        g.forward(x.data(), w.data(), b.map(|b| b.data()), offsets.data()),
        x.dtype(),
    ))
}

impl<'t> Var<'t> {
    pub fn bilinear_sample(self, points: Var<'t>) -> Result<Var<'t>> {
        let (x, pts) = (self.value(), points.value());
        let y = sample_points_forward(&x, &pts)?;
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let l = pts.shape()[0];
        Ok(self.tape().record(y, &[self, points], move |g, needs| {
            let dx = needs[0].then(|| {
                let mut dx = vec![0.0; c * h * w];
                let pts = pts.data();
                par::for_each_chunk(&mut dx, h * w, |ci, plane| {
                    for li in 0..l {
                        let p = &pts[li * 2..li * 2 + 2];
                        let gv = g[ci * l + li];
                        for_each_corner([1, h, w], [0.0, p[0], p[1]], |idx, wgt, _| {
                            plane[idx] += wgt * gv
                        });
                    }
                });
                dx
            });
            let dp = needs[1].then(|| {
                let mut dp = vec![0.0; l * 2];
                for li in 0..l {
                    let p = &pts.data()[li * 2..li * 2 + 2];
                    for ci in 0..c {
                        let (_, d) = sample(
                            &x.data()[ci * h * w..][..h * w],
                            [1, h, w],
                            [0.0, p[0], p[1]],
                        );
                        dp[li * 2] += g[ci * l + li] * d[1];
                        dp[li * 2 + 1] += g[ci * l + li] * d[2];
                    }
                }
                dp
            });
            vec![dx, dp]
        }))
    }

    fn deformable(
        self,
        w: Var<'t>,
        b: Option<Var<'t>>,
        offsets: Var<'t>,
        spec: &ConvSpec,
        rank: usize,
    ) -> Result<Var<'t>> {
        let (xv, wv, ov) = (self.value(), w.value(), offsets.value());
        let bv = b.map(|b| b.value());
        let (g, shape) = deform_geom(&xv, &wv, bv.as_deref(), &ov, spec, rank)?;
        let y = Tensor::from_parts(
            shape,
            g.forward(
                xv.data(),
                wv.data(),
                bv.as_ref().map(|b| b.data()),
                ov.data(),
            ),
            xv.dtype(),
        );
        let has_bias = b.is_some();
        let mut parents = vec![self, w, offsets];
        parents.extend(b);
        Ok(self.tape().record(y, &parents, move |dy, needs| {
            let (dx, dw, doff) = g.backward(
                dy,
                xv.data(),
                wv.data(),
                ov.data(),
                needs[0],
                needs[1],
                needs[2],
            );
            let mut grads = vec![dx, dw, doff];
            if has_bias {
                grads.push(needs[3].then(|| super::conv::bias_grad(dy, 1, g.cout, g.positions())));
            }
            grads
        }))
    }

    pub fn deformable_conv2d(
        self,
        w: Var<'t>,
        b: Option<Var<'t>>,
        offsets: Var<'t>,
        spec: &ConvSpec,
    ) -> Result<Var<'t>> {
        self.deformable(w, b, offsets, spec, 2)
    }

    pub fn deformable_conv3d(
        self,
        w: Var<'t>,
        b: Option<Var<'t>>,
        offsets: Var<'t>,
        spec: &ConvSpec,
    ) -> Result<Var<'t>> {
        self.deformable(w, b, offsets, spec, 3)
    }
}
