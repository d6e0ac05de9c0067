use crate::autograd::Var;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

struct Layout {
    outer: usize,
    channels: usize,
    inner: usize,
}

fn layout(shape: &[usize], axis: usize, gamma: &Tensor, beta: &Tensor) -> Result<Layout> {
    if axis >= shape.len() {
        return Err(shape_err!(
            "normalization axis {axis} for shape {:?}",
            shape
        ));
    }
    let channels = shape[axis];
    if gamma.shape() != [channels] || beta.shape() != [channels] {
        return Err(shape_err!(
            "gamma {:?} / beta {:?} do not match {channels} channels",
            gamma.shape(),
            beta.shape()
        ));
    }
    Ok(Layout {
        outer: shape[..axis].iter().product(),
        channels,
        inner: shape[axis + 1..].iter().product(),
    })
}

/// Per-position mean and inverse standard deviation over the channel axis,
/// two-pass.
fn moments(x: &[f64], l: &Layout, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let n = l.outer * l.inner;
    let mut mean = vec![0.0; n];
    let mut rstd = vec![0.0; n];
    for o in 0..l.outer {
        for i in 0..l.inner {
            let at = |c: usize| x[(o * l.channels + c) * l.inner + i];
            let mu = (0..l.channels).map(at).sum::<f64>() / l.channels as f64;
            let var =
                (0..l.channels).map(|c| (at(c) - mu).powi(2)).sum::<f64>() / l.channels as f64;
            mean[o * l.inner + i] = mu;
            rstd[o * l.inner + i] = 1.0 / (var + eps).sqrt();
        }
    }
    (mean, rstd)
}

fn forward(x: &[f64], gamma: &[f64], beta: &[f64], l: &Layout, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (mean, rstd) = moments(x, l, eps);
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    for o in 0..l.outer {
        for c in 0..l.channels {
            for i in 0..l.inner {
                let j = (o * l.channels + c) * l.inner + i;
                let p = o * l.inner + i;
                xhat[j] = (x[j] - mean[p]) * rstd[p];
                y[j] = xhat[j] * gamma[c] + beta[c];
            }
        }
    }
    (y, xhat)
}

/// Normalizes `x` over `axis`: `(x - mean) / sqrt(var + eps) * gamma + beta`,
/// with biased variance.
pub fn layer_norm(
    x: &Tensor,
    axis: usize,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<Tensor> {
    let l = layout(x.shape(), axis, gamma, beta)?;
    let (y, _) = forward(x.data(), gamma.data(), beta.data(), &l, eps);
    Ok(Tensor::from_parts(x.shape().to_vec(), y, x.dtype()))
}

impl<'t> Var<'t> {
    pub fn layer_norm(
        self,
        axis: usize,
        gamma: Var<'t>,
        beta: Var<'t>,
        eps: f64,
    ) -> Result<Var<'t>> {
        let (x, g, b) = (self.value(), gamma.value(), beta.value());
        let l = layout(x.shape(), axis, &g, &b)?;
        let (y, xhat) = forward(x.data(), g.data(), b.data(), &l, eps);
        let (_, rstd) = moments(x.data(), &l, eps);
        let y = Tensor::from_parts(x.shape().to_vec(), y, x.dtype());
        Ok(self
            .tape()
            .record(y, &[self, gamma, beta], move |dy, needs| {
                let c_n = l.channels as f64;
                let dx = needs[0].then(|| {
                    let mut dx = vec![0.0; dy.len()];
                    for o in 0..l.outer {
                        for i in 0..l.inner {
                            let idx = |c: usize| (o * l.channels + c) * l.inner + i;
                            let p = o * l.inner + i;
                            let mut sum_d = 0.0;
                            let mut sum_dx = 0.0;
                            for c in 0..l.channels {
                                let d = dy[idx(c)] * g.data()[c];
                                sum_d += d;
                                sum_dx += d * xhat[idx(c)];
                            }
                            for c in 0..l.channels {
                                let d = dy[idx(c)] * g.data()[c];
                                dx[idx(c)] =
                                    rstd[p] * (d - sum_d / c_n - xhat[idx(c)] * sum_dx / c_n);
                            }
                        }
                    }
                    dx
                });
                let mut dg = vec![0.0; l.channels];
                let mut db = vec![0.0; l.channels];
                if needs[1] || needs[2] {
                    for o in 0..l.outer {
                        for c in 0..l.channels {
                            for i in 0..l.inner {
                                let j = (o * l.channels + c) * l.inner + i;
                                dg[c] += dy[j] * xhat[j];
                                db[c] += dy[j];
                            }
                        }
                    }
                }
                vec![dx, needs[1].then_some(dg), needs[2].then_some(db)]
            }))
    }
}
