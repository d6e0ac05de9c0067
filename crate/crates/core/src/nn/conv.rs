use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::par;
use crate::tensor::Tensor;

/// Convolution configuration. Padding is always "same":
/// `(kernel - 1) / 2` zeros per side.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    pub fn new2d(in_channels: usize, out_channels: usize, k: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: vec![k, k],
            stride: vec![1, 1],
            groups: 1,
            bias: true,
        }
    }

    pub fn new3d(in_channels: usize, out_channels: usize, k: [usize; 3]) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: k.to_vec(),
            stride: vec![1; 3],
            groups: 1,
            bias: true,
        }
    }

    pub fn depthwise2d(channels: usize, k: usize) -> Self {
        Self::new2d(channels, channels, k).with_groups(channels)
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: &[usize]) -> Self {
        self.stride = stride.to_vec();
        self
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn padding(&self) -> Vec<usize> {
        self.kernel.iter().map(|k| (k - 1) / 2).collect()
    }

    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels / self.groups.max(1)];
        s.extend_from_slice(&self.kernel);
        s
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * (self.in_channels / self.groups) * self.taps()
            + if self.bias { self.out_channels } else { 0 }
    }

    pub fn output_extents(&self, input: &[usize]) -> Vec<usize> {
        input
            .iter()
            .zip(&self.kernel)
            .zip(&self.stride)
            .map(|((&n, &k), &s)| (n + 2 * ((k - 1) / 2) - k) / s + 1)
            .collect()
    }

    pub fn validate(&self, spatial_rank: usize) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 || self.groups == 0 {
            return Err(shape_err!(
                "conv channel counts and groups must be positive"
            ));
        }
        if !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(shape_err!(
                "groups {} must divide in {} and out {} channels",
                self.groups,
                self.in_channels,
                self.out_channels
            ));
        }
        if self.kernel.len() != spatial_rank || self.stride.len() != spatial_rank {
            return Err(shape_err!(
                "conv spec rank {} for {spatial_rank} spatial axes",
                self.kernel.len()
            ));
        }
        if self.kernel.iter().any(|&k| k == 0 || k % 2 == 0) {
            return Err(shape_err!("kernel extents {:?} must be odd", self.kernel));
        }
        if self.stride.contains(&0) {
            return Err(shape_err!("stride must be positive"));
        }
        Ok(())
    }
}

/// Geometry of a (batched) 3D convolution; 2D convolutions use `T = 1`.
#[derive(Clone, Debug)]
pub(crate) struct Geom {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
}

impl Geom {
    pub fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    pub fn taps(&self) -> usize {
        self.kernel.iter().product()
    }

    pub fn in_plane(&self) -> usize {
        self.input.iter().product()
    }

    pub fn out_plane(&self) -> usize {
        self.output.iter().product()
    }

    fn build(spec: &ConvSpec, batch: usize, cin: usize, spatial: &[usize]) -> Result<Self> {
        spec.validate(spatial.len())?;
        if cin != spec.in_channels {
            return Err(shape_err!(
                "input has {cin} channels, spec expects {}",
                spec.in_channels
            ));
        }
        let lift = |v: &[usize], fill: usize| -> [usize; 3] {
            match v.len() {
                2 => [fill, v[0], v[1]],
                _ => [v[0], v[1], v[2]],
            }
        };
        let out = spec.output_extents(spatial);
        Ok(Self {
            batch,
            cin,
            cout: spec.out_channels,
            groups: spec.groups,
            input: lift(spatial, 1),
            output: lift(&out, 1),
            kernel: lift(&spec.kernel, 1),
            stride: lift(&spec.stride, 1),
            pad: lift(&spec.padding(), 0),
        })
    }

    /// Valid output range along one axis for kernel offset `k`:
    /// output `o` reads input `o * s + k - p`.
    #[inline]
    fn out_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let (n, s, p, on) = (
            self.input[axis] as isize,
            self.stride[axis] as isize,
            self.pad[axis] as isize,
            self.output[axis],
        );
        let k = k as isize;
        // smallest o with o*s + k - p >= 0
        let lo = ((p - k).max(0) + s - 1) / s;
        // largest o with o*s + k - p <= n - 1
        let hi_num = n - 1 - k + p;
        if hi_num < 0 {
            return (0, 0);
        }
        let hi = (hi_num / s + 1).min(on as isize);
        (lo.min(hi) as usize, hi.max(0) as usize)
    }
}

pub(crate) fn conv_forward(x: &[f64], w: &[f64], bias: Option<&[f64]>, g: &Geom) -> Vec<f64> {
    let (cin_g, cout_g, taps) = (g.cin_g(), g.cout_g(), g.taps());
    let (in_plane, out_plane) = (g.in_plane(), g.out_plane());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [_, sh, sw] = g.stride;
    let [st, _, _] = g.stride;
    let [pt, ph, pw] = g.pad;
    let mut out = vec![0.0; g.batch * g.cout * out_plane];
    par::for_each_chunk(&mut out, out_plane, |i, plane| {
        let (b, oc) = (i / g.cout, i % g.cout);
        if let Some(bias) = bias {
            plane.fill(bias[oc]);
        }
        let grp = oc / cout_g;
        for icl in 0..cin_g {
            let ic = grp * cin_g + icl;
            let xin = &x[(b * g.cin + ic) * in_plane..][..in_plane];
            let wk = &w[(oc * cin_g + icl) * taps..][..taps];
            for a in 0..kt {
                let (t_lo, t_hi) = g.out_range(0, a);
                for bb in 0..kh {
                    let (h_lo, h_hi) = g.out_range(1, bb);
                    for c in 0..kw {
                        let (w_lo, w_hi) = g.out_range(2, c);
                        let wv = wk[(a * kh + bb) * kw + c];
                        for ot in t_lo..t_hi {
                            let it = ot * st + a - pt;
                            for ohh in h_lo..h_hi {
                                let ihh = ohh * sh + bb - ph;
                                let orow = &mut plane[(ot * oh + ohh) * ow..][..ow];
                                let irow = &xin[(it * ih + ihh) * iw..][..iw];
                                if sw == 1 {
                                    let off = c as isize - pw as isize;
                                    for owi in w_lo..w_hi {
                                        orow[owi] += wv * irow[(owi as isize + off) as usize];
                                    }
                                } else {
                                    for owi in w_lo..w_hi {
                                        orow[owi] += wv * irow[owi * sw + c - pw];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

pub(crate) fn conv_backward_input(dy: &[f64], w: &[f64], g: &Geom) -> Vec<f64> {
    let (cin_g, cout_g, taps) = (g.cin_g(), g.cout_g(), g.taps());
    let (in_plane, out_plane) = (g.in_plane(), g.out_plane());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let mut dx = vec![0.0; g.batch * g.cin * in_plane];
    par::for_each_chunk(&mut dx, in_plane, |i, plane| {
        let (b, ic) = (i / g.cin, i % g.cin);
        let grp = ic / cin_g;
        let icl = ic % cin_g;
        for ocl in 0..cout_g {
            let oc = grp * cout_g + ocl;
            let dyp = &dy[(b * g.cout + oc) * out_plane..][..out_plane];
            let wk = &w[(oc * cin_g + icl) * taps..][..taps];
            for a in 0..kt {
                let (t_lo, t_hi) = g.out_range(0, a);
                for bb in 0..kh {
                    let (h_lo, h_hi) = g.out_range(1, bb);
                    for c in 0..kw {
                        let (w_lo, w_hi) = g.out_range(2, c);
                        let wv = wk[(a * kh + bb) * kw + c];
                        for ot in t_lo..t_hi {
                            let it = ot * st + a - pt;
                            for ohh in h_lo..h_hi {
                                let ihh = ohh * sh + bb - ph;
                                let drow = &dyp[(ot * oh + ohh) * ow..][..ow];
                                let xrow = &mut plane[(it * ih + ihh) * iw..][..iw];
                                for owi in w_lo..w_hi {
                                    xrow[owi * sw + c - pw] += wv * drow[owi];
                                }
                            }
                        }
                    }
                }
            }
        }
    });
    dx
}

pub(crate) fn conv_backward_weight(dy: &[f64], x: &[f64], g: &Geom) -> Vec<f64> {
    let (cin_g, taps) = (g.cin_g(), g.taps());
    let cout_g = g.cout_g();
    let (in_plane, out_plane) = (g.in_plane(), g.out_plane());
    let [_, ih, iw] = g.input;
    let [_, oh, ow] = g.output;
    let [kt, kh, kw] = g.kernel;
    let [st, sh, sw] = g.stride;
    let [pt, ph, pw] = g.pad;
    let mut dw = vec![0.0; g.cout * cin_g * taps];
    par::for_each_chunk(&mut dw, cin_g * taps, |oc, chunk| {
        let grp = oc / cout_g;
        for icl in 0..cin_g {
            let ic = grp * cin_g + icl;
            for a in 0..kt {
                let (t_lo, t_hi) = g.out_range(0, a);
                for bb in 0..kh {
                    let (h_lo, h_hi) = g.out_range(1, bb);
                    for c in 0..kw {
                        let (w_lo, w_hi) = g.out_range(2, c);
                        let mut acc = 0.0;
                        for b in 0..g.batch {
                            let dyp = &dy[(b * g.cout + oc) * out_plane..][..out_plane];
                            let xin = &x[(b * g.cin + ic) * in_plane..][..in_plane];
                            for ot in t_lo..t_hi {
                                let it = ot * st + a - pt;
                                for ohh in h_lo..h_hi {
                                    let ihh = ohh * sh + bb - ph;
                                    let drow = &dyp[(ot * oh + ohh) * ow..][..ow];
                                    let xrow = &xin[(it * ih + ihh) * iw..][..iw];
                                    for owi in w_lo..w_hi {
                                        acc += drow[owi] * xrow[owi * sw + c - pw];
                                    }
                                }
                            }
                        }
                        chunk[(icl * kt + a) * kh * kw + bb * kw + c] = acc;
                    }
                }
            }
        }
    });
    dw
}

pub(crate) fn bias_grad(dy: &[f64], batch: usize, channels: usize, plane: usize) -> Vec<f64> {
    let mut db = vec![0.0; channels];
    for b in 0..batch {
        for (c, acc) in db.iter_mut().enumerate() {
            *acc += dy[(b * channels + c) * plane..][..plane]
                .iter()
                .sum::<f64>();
        }
    }
    db
}

/// Splits an input shape into (batch, channels, spatial extents, batched?).
fn split_input(shape: &[usize], spatial_rank: usize) -> Result<(usize, usize, Vec<usize>, bool)> {
    match shape.len() {
        n if n == spatial_rank + 1 => Ok((1, shape[0], shape[1..].to_vec(), false)),
        n if n == spatial_rank + 2 => Ok((shape[0], shape[1], shape[2..].to_vec(), true)),
        _ => Err(shape_err!(
            "convolution input of shape {:?} for {spatial_rank} spatial axes",
            shape
        )),
    }
}

fn check_params(w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec, x: &Tensor) -> Result<()> {
    if w.shape() != spec.weight_shape().as_slice() {
        return Err(shape_err!(
            "weight shape {:?}, spec expects {:?}",
            w.shape(),
            spec.weight_shape()
        ));
    }
    if w.dtype() != x.dtype() {
        return Err(shape_err!(
            "weight dtype {} vs input {}",
            w.dtype().name(),
            x.dtype().name()
        ));
    }
    match (b, spec.bias) {
        (Some(b), true) if b.shape() == [spec.out_channels] => Ok(()),
        (None, false) => Ok(()),
        (Some(b), true) => Err(shape_err!(
            "bias shape {:?} for {} outputs",
            b.shape(),
            spec.out_channels
        )),
        (Some(_), false) => Err(shape_err!("bias given but spec has bias = false")),
        (None, true) => Err(shape_err!("spec has bias = true but no bias given")),
    }
}

fn prepare(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
    spatial_rank: usize,
) -> Result<(Geom, Vec<usize>)> {
    let (batch, cin, spatial, batched) = split_input(x.shape(), spatial_rank)?;
    let g = Geom::build(spec, batch, cin, &spatial)?;
    check_params(w, b, spec, x)?;
    let mut out_shape = Vec::new();
    if batched {
        out_shape.push(batch);
    }
    out_shape.push(spec.out_channels);
    out_shape.extend(spec.output_extents(&spatial));
    Ok((g, out_shape))
}

fn conv_plain(
    x: &Tensor,
    w: &Tensor,
    b: Option<&Tensor>,
    spec: &ConvSpec,
    rank: usize,
) -> Result<Tensor> {
    let (g, out_shape) = prepare(x, w, b, spec, rank)?;
    let y = conv_forward(x.data(), w.data(), b.map(|b| b.data()), &g);
    Ok(Tensor::from_parts(out_shape, y, x.dtype()))
}

/// 2D cross-correlation with zero "same" padding. `x` is `[C, H, W]` or
/// `[B, C, H, W]`; `w` is `[C_out, C_in / groups, kh, kw]`.
pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    conv_plain(x, w, b, spec, 2)
}

/// 3D cross-correlation over `[C, T, H, W]` or `[B, C, T, H, W]`.
pub fn conv3d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, spec: &ConvSpec) -> Result<Tensor> {
    conv_plain(x, w, b, spec, 3)
}

impl<'t> Var<'t> {
    fn conv_nd(
        self,
        w: Var<'t>,
        b: Option<Var<'t>>,
        spec: &ConvSpec,
        rank: usize,
    ) -> Result<Var<'t>> {
        let (xv, wv) = (self.value(), w.value());
        let bv = b.map(|b| b.value());
        let (g, out_shape) = prepare(&xv, &wv, bv.as_deref(), spec, rank)?;
        let y = conv_forward(xv.data(), wv.data(), bv.as_ref().map(|b| b.data()), &g);
        let y = Tensor::from_parts(out_shape, y, xv.dtype());
        let mut parents = vec![self, w];
        parents.extend(b);
        Ok(self.tape().record(y, &parents, move |dy, needs| {
            let mut grads = vec![
                needs[0].then(|| conv_backward_input(dy, wv.data(), &g)),
                needs[1].then(|| conv_backward_weight(dy, xv.data(), &g)),
            ];
            if needs.len() > 2 {
                grads.push(needs[2].then(|| bias_grad(dy, g.batch, g.cout, g.out_plane())));
            }
            grads
        }))
    }

    pub fn conv2d(self, w: Var<'t>, b: Option<Var<'t>>, spec: &ConvSpec) -> Result<Var<'t>> {
        self.conv_nd(w, b, spec, 2)
    }

    pub fn conv3d(self, w: Var<'t>, b: Option<Var<'t>>, spec: &ConvSpec) -> Result<Var<'t>> {
        self.conv_nd(w, b, spec, 3)
    }
}
