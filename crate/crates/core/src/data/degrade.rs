use super::VideoClip;
use crate::autograd::Var;
use crate::error::{config_err, shape_err, Result};
use crate::par;
use crate::rng::RngStream;
use crate::tensor::{reflect_index, PadMode, Tensor};

/// Parameters of the blur → downsample → noise degradation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DegradationParams {
    pub blur_sigma: f64,
    pub scale: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self::bi()
    }
}

impl DegradationParams {
    /// Bicubic ×4 only.
    pub fn bi() -> Self {
        Self {
            blur_sigma: 0.0,
            scale: 4,
            noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// Gaussian blur σ = 1.6 followed by bicubic ×4.
    pub fn bd() -> Self {
        Self {
            blur_sigma: 1.6,
            ..Self::bi()
        }
    }

    pub fn track(name: &str) -> Result<Self> {
        match name {
            "bi" => Ok(Self::bi()),
            "bd" => Ok(Self::bd()),
            _ => Err(config_err!(
                "unknown degradation track '{name}' (expected bi or bd)"
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale < 1 {
            return Err(config_err!("scale must be >= 1"));
        }
        if !(self.blur_sigma >= 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(config_err!("sigmas must be >= 0"));
        }
        Ok(())
    }
}

/// Normalized 1D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn plane_dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    let s = x.shape();
    if s.len() < 2 {
        return Err(shape_err!("image needs [.., H, W], got {:?}", s));
    }
    let n = s.len();
    Ok((s[..n - 2].iter().product(), s[n - 2], s[n - 1]))
}

/// Separable Gaussian blur of the last two axes with reflect boundary.
pub fn gaussian_blur(x: &Tensor, sigma: f64) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(config_err!("blur sigma must be >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let (_, h, w) = plane_dims(x)?;
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let mut out = x.data().to_vec();
    par::for_each_chunk(&mut out, h * w, |_, plane| {
        let mut tmp = vec![0.0; h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * plane[y * w + reflect_index(xx as isize + i as isize - r, w)];
                }
                tmp[y * w + xx] = acc;
            }
        }
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (i, kv) in k.iter().enumerate() {
                    acc += kv * tmp[reflect_index(y as isize + i as isize - r, h) * w + xx];
                }
                plane[y * w + xx] = acc;
            }
        }
    });
    Tensor::new(x.shape(), out, x.dtype())
}

fn cubic(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((A + 2.0) * t - (A + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((A * t - 5.0 * A) * t + 8.0 * A) * t - 4.0 * A
    } else {
        0.0
    }
}

fn cubic_taps(n_in: usize, n_out: usize) -> Vec<[(usize, f64); 4]> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|d| {
            let s = (d as f64 + 0.5) * ratio - 0.5;
            let i0 = s.floor();
            let t = s - i0;
            let mut taps = [(0, 0.0); 4];
            for (k, tap) in taps.iter_mut().enumerate() {
                let off = k as isize - 1;
                let i = (i0 as isize + off).clamp(0, n_in as isize - 1) as usize;
                *tap = (i, cubic(t - off as f64));
            }
            taps
        })
        .collect()
}

struct Resample {
    lead: usize,
    h: usize,
    w: usize,
    ty: Vec<[(usize, f64); 4]>,
    tx: Vec<[(usize, f64); 4]>,
}

impl Resample {
    fn plan(shape: &[usize], out_h: usize, out_w: usize) -> Result<(Self, Vec<usize>)> {
        let n = shape.len();
        if n < 2 {
            return Err(shape_err!("image needs [.., H, W], got {:?}", shape));
        }
        let (h, w) = (shape[n - 2], shape[n - 1]);
        if out_h == 0 || out_w == 0 || h == 0 || w == 0 {
            return Err(shape_err!("bicubic resample needs positive extents"));
        }
        let mut out = shape.to_vec();
        out[n - 2] = out_h;
        out[n - 1] = out_w;
        let lead = shape[..n - 2].iter().product();
        Ok((
            Self {
                lead,
                h,
                w,
                ty: cubic_taps(h, out_h),
                tx: cubic_taps(w, out_w),
            },
            out,
        ))
    }

    fn forward(&self, src: &[f64]) -> Vec<f64> {
        let (h, w, oh, ow) = (self.h, self.w, self.ty.len(), self.tx.len());
        let mut out = vec![0.0; self.lead * oh * ow];
        par::for_each_chunk(&mut out, oh * ow, |l, plane| {
            let inp = &src[l * h * w..][..h * w];
            let mut tmp = vec![0.0; h * ow];
            for y in 0..h {
                for (ox, taps) in self.tx.iter().enumerate() {
                    tmp[y * ow + ox] = taps.iter().map(|&(i, k)| k * inp[y * w + i]).sum();
                }
            }
            for (oy, taps) in self.ty.iter().enumerate() {
                for ox in 0..ow {
                    plane[oy * ow + ox] = taps.iter().map(|&(i, k)| k * tmp[i * ow + ox]).sum();
                }
            }
        });
        out
    }

    fn backward(&self, g: &[f64]) -> Vec<f64> {
        let (h, w, oh, ow) = (self.h, self.w, self.ty.len(), self.tx.len());
        let mut dx = vec![0.0; self.lead * h * w];
        par::for_each_chunk(&mut dx, h * w, |l, plane| {
            let go = &g[l * oh * ow..][..oh * ow];
            let mut tmp = vec![0.0; h * ow];
            for (oy, taps) in self.ty.iter().enumerate() {
                for &(i, k) in taps {
                    for ox in 0..ow {
                        tmp[i * ow + ox] += k * go[oy * ow + ox];
                    }
                }
            }
            for y in 0..h {
                for (ox, taps) in self.tx.iter().enumerate() {
                    for &(i, k) in taps {
                        plane[y * w + i] += k * tmp[y * ow + ox];
                    }
                }
            }
        });
        dx
    }
}

/// Catmull-Rom (a = -0.5) resampling of the last two axes to
/// `out_h × out_w`, half-pixel coordinate mapping, edge-clamped taps.
pub fn bicubic_resample(x: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (r, shape) = Resample::plan(x.shape(), out_h, out_w)?;
    Tensor::new(&shape, r.forward(x.data()), x.dtype())
}

impl<'t> Var<'t> {
    pub fn bicubic_resample(self, out_h: usize, out_w: usize) -> Result<Var<'t>> {
        let x = self.value();
        let (r, shape) = Resample::plan(x.shape(), out_h, out_w)?;
        let y = Tensor::new(&shape, r.forward(x.data()), x.dtype())?;
        Ok(self
            .tape()
            .record(y, &[self], move |g, _| vec![Some(r.backward(g))]))
    }
}

/// Zero-mean Gaussian samples with standard deviation `sigma`.
pub fn noise_field(shape: &[usize], sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    (0..shape.iter().product::<usize>())
        .map(|_| sigma * rng.normal())
        .collect()
}

/// Adds i.i.d. Gaussian noise drawn from `rng`, then clamps to `[0, 1]`.
pub fn add_noise_with(x: &Tensor, sigma: f64, rng: &mut RngStream) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(config_err!("noise sigma must be >= 0, got {sigma}"));
    }
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let n = noise_field(x.shape(), sigma, rng);
    let data = x
        .data()
        .iter()
        .zip(n)
        .map(|(v, e)| (v + e).clamp(0.0, 1.0))
        .collect();
    Tensor::new(x.shape(), data, x.dtype())
}

pub fn add_noise(x: &Tensor, sigma: f64, seed: u64) -> Result<Tensor> {
    add_noise_with(x, sigma, &mut RngStream::new(seed))
}

/// Reflect-pads the last two axes at the bottom/right up to multiples of `m`.
pub fn pad_to_multiple(x: &Tensor, m: usize) -> Result<Tensor> {
    let n = x.rank();
    if n < 2 || m == 0 {
        return Err(shape_err!("pad_to_multiple needs [.., H, W] and m > 0"));
    }
    let (h, w) = (x.shape()[n - 2], x.shape()[n - 1]);
    let (ph, pw) = ((m - h % m) % m, (m - w % m) % m);
    if ph == 0 && pw == 0 {
        return Ok(x.clone());
    }
    let mut pads = vec![(0, 0); n];
    pads[n - 2] = (0, ph);
    pads[n - 1] = (0, pw);
    x.pad(&pads, PadMode::Reflect)
}

/// Blur, downsample by `p.scale`, add noise. `frame_rng` drives the noise.
pub fn degrade_frame(
    frame: &Tensor,
    p: &DegradationParams,
    frame_rng: &mut RngStream,
) -> Result<Tensor> {
    let n = frame.rank();
    let blurred = gaussian_blur(frame, p.blur_sigma)?;
    let (h, w) = (frame.shape()[n - 2], frame.shape()[n - 1]);
    let down = if p.scale == 1 {
        blurred
    } else {
        bicubic_resample(&blurred, h / p.scale, w / p.scale)?
    };
    add_noise_with(&down, p.noise_sigma, frame_rng)
}

/// Applies the degradation to every frame. Extents that are not multiples of
/// the scale are reflect-padded first. Frame `t` draws noise from stream
/// `split(t)` of `p.seed`.
pub fn degrade_clip(hr: &VideoClip, p: &DegradationParams) -> Result<VideoClip> {
    p.validate()?;
    let frames = pad_to_multiple(&hr.frames, p.scale)?;
    let root = RngStream::new(p.seed);
    let out: Result<Vec<Tensor>> = (0..hr.len())
        .map(|t| degrade_frame(&frames.select(0, t)?, p, &mut root.split(t as u64)))
        .collect();
    VideoClip::from_frames(&out?, hr.frame_rate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, 0.0, 1.0, &mut RngStream::new(seed), DType::F64)
    }

    #[test]
    fn blur_identity_and_constant() {
        let x = rand(&[2, 9, 7], 1);
        assert_eq!(gaussian_blur(&x, 0.0).unwrap(), x);
        let c = Tensor::full(&[1, 8, 8], 0.4, DType::F64);
        assert!(gaussian_blur(&c, 1.6)
            .unwrap()
            .data()
            .iter()
            .all(|v| (v - 0.4).abs() < 1e-12));
        assert!(matches!(
            gaussian_blur(&x, -1.0),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn blur_matches_dense_kernel() {
        let x = rand(&[2, 10, 12], 2);
        let sigma = 1.3;
        let k = gaussian_kernel(sigma);
        let r = (k.len() / 2) as isize;
        let y = gaussian_blur(&x, sigma).unwrap();
        let (h, w) = (10, 12);
        for c in 0..2 {
            for i in 0..h {
                for j in 0..w {
                    let mut acc = 0.0;
                    for a in -r..=r {
                        for b in -r..=r {
                            let si = reflect_index(i as isize + a, h);
                            let sj = reflect_index(j as isize + b, w);
                            acc += k[(a + r) as usize]
                                * k[(b + r) as usize]
                                * x.get(&[c, si, sj]).unwrap();
                        }
                    }
                    assert!((acc - y.get(&[c, i, j]).unwrap()).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn kernel_radius() {
        assert_eq!(gaussian_kernel(1.6).len(), 2 * 5 + 1);
        assert!((gaussian_kernel(0.7).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bicubic_identity_and_constant() {
        let x = rand(&[3, 6, 5], 3);
        assert!(
            bicubic_resample(&x, 6, 5)
                .unwrap()
                .max_abs_diff(&x)
                .unwrap()
                < 1e-12
        );
        let c = Tensor::full(&[1, 5, 7], 0.25, DType::F64);
        for (h, w) in [(2, 3), (20, 28), (5, 7)] {
            let y = bicubic_resample(&c, h, w).unwrap();
            assert!(y.data().iter().all(|v| (v - 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn bicubic_linear_precision_on_downscale() {
        let (h, w) = (8, 16);
        let data: Vec<f64> = (0..h * w).map(|i| 0.1 + 0.05 * (i % w) as f64).collect();
        let x = Tensor::from_f64(&[1, h, w], data).unwrap();
        let y = bicubic_resample(&x, h / 2, w / 2).unwrap();
        // output column d samples source coordinate 2d + 0.5
        for i in 0..h / 2 {
            for d in 1..w / 2 - 1 {
                let want = 0.1 + 0.05 * (2.0 * d as f64 + 0.5);
                assert!((y.get(&[0, i, d]).unwrap() - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bicubic_gradient() {
        let x = rand(&[2, 5, 6], 8);
        let probe = rand(&[2, 9, 4], 9);
        let e = crate::grad_check(
            |t, v| {
                Ok(v.bicubic_resample(9, 4)?
                    .mul(t.constant(probe.clone()))?
                    .square()
                    .sum_all())
            },
            &x,
            1e-4,
        )
        .unwrap();
        assert!(e < 1e-6);
    }

    #[test]
    fn noise_properties() {
        let x = Tensor::full(&[1, 200, 200], 0.5, DType::F64);
        assert_eq!(add_noise(&x, 0.0, 3).unwrap(), x);
        assert_eq!(
            add_noise(&x, 0.05, 3).unwrap(),
            add_noise(&x, 0.05, 3).unwrap()
        );
        let n = noise_field(&[200, 200], 0.05, &mut RngStream::new(9));
        let mean = n.iter().sum::<f64>() / n.len() as f64;
        let std = (n.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n.len() as f64).sqrt();
        assert!((std - 0.05).abs() < 0.02 * 0.05);
        let y = add_noise(&x, 1.0, 3).unwrap();
        assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn degrade_stages_compose() {
        let frames = rand(&[2, 3, 16, 16], 4);
        let clip = VideoClip::new(frames.clone(), 24.0).unwrap();
        let id = DegradationParams {
            blur_sigma: 0.0,
            scale: 1,
            noise_sigma: 0.0,
            seed: 0,
        };
        assert_eq!(degrade_clip(&clip, &id).unwrap().frames, frames);

        let p = DegradationParams {
            blur_sigma: 1.2,
            scale: 4,
            noise_sigma: 0.02,
            seed: 11,
        };
        let out = degrade_clip(&clip, &p).unwrap();
        assert_eq!(out.frames.shape(), &[2, 3, 4, 4]);
        let f1 = frames.select(0, 1).unwrap();
        let staged = add_noise_with(
            &bicubic_resample(&gaussian_blur(&f1, 1.2).unwrap(), 4, 4).unwrap(),
            0.02,
            &mut RngStream::new(11).split(1),
        )
        .unwrap();
        assert_eq!(out.frame(1).unwrap(), staged);
    }

    #[test]
    fn degrade_pads_to_multiple() {
        let clip = VideoClip::new(rand(&[1, 1, 10, 13], 5), 1.0).unwrap();
        let out = degrade_clip(&clip, &DegradationParams::bi()).unwrap();
        assert_eq!(out.size(), (3, 4));
    }
}
