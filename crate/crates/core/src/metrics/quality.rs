use crate::error::{shape_err, Result};
use crate::tensor::{check_same_shape, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` when the inputs match.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    let n = a.numel().max(1) as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1D Gaussian of the SSIM window.
pub fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering of an `h × w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over channels and valid window positions of `[c, H, W]`
/// images with dynamic range 1.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.rank() != 3 {
        return Err(shape_err!("ssim expects [c, H, W], got {:?}", a.shape()));
    }
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(shape_err!("ssim needs H, W >= {SSIM_WINDOW}, got {h}x{w}"));
    }
    let g = ssim_window();
    let (c1, c2) = (SSIM_K1 * SSIM_K1, SSIM_K2 * SSIM_K2);
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a.data()[ch * h * w..][..h * w];
        let pb = &b.data()[ch * h * w..][..h * w];
        let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
            pa.iter().zip(pb).map(|(&x, &y)| f(x, y)).collect()
        };
        let mu_a = filter_valid(pa, h, w, &g);
        let mu_b = filter_valid(pb, h, w, &g);
        let e_aa = filter_valid(&prod(&|x, _| x * x), h, w, &g);
        let e_bb = filter_valid(&prod(&|_, y| y * y), h, w, &g);
        let e_ab = filter_valid(&prod(&|x, y| x * y), h, w, &g);
        for i in 0..mu_a.len() {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (e_aa[i] - ma * ma, e_bb[i] - mb * mb, e_ab[i] - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Drops `border` pixels from every side of the last two axes.
pub fn crop_border(x: &Tensor, border: usize) -> Result<Tensor> {
    let n = x.rank();
    if n < 2 {
        return Err(shape_err!("crop needs [.., H, W]"));
    }
    let (h, w) = (x.shape()[n - 2], x.shape()[n - 1]);
    if 2 * border >= h || 2 * border >= w {
        return Err(shape_err!("border {border} leaves nothing of {h}x{w}"));
    }
    x.slice(n - 2, border, h - border)?
        .slice(n - 1, border, w - border)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use crate::tensor::DType;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::uniform(shape, 0.0, 1.0, &mut RngStream::new(seed), DType::F64)
    }

    #[test]
    fn psnr_cases() {
        let x = rand(&[3, 8, 8], 1);
        assert_eq!(psnr(&x, &x, 1.0).unwrap(), f64::INFINITY);
        let a = Tensor::full(&[1, 4, 4], 0.5, DType::F64);
        let b = Tensor::full(&[1, 4, 4], 0.4, DType::F64);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let y = rand(&[3, 8, 8], 2);
        let mse: f64 = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (p - q).powi(2))
            .sum::<f64>()
            / 192.0;
        assert!((psnr(&x, &y, 1.0).unwrap() - (-10.0 * mse.log10())).abs() < 1e-9);
        assert!(psnr(&x, &rand(&[3, 8, 7], 2), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let x = rand(&[3, 16, 16], 3);
        assert!((ssim(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let a = Tensor::full(&[1, 12, 12], 0.5, DType::F64);
        let b = Tensor::full(&[1, 12, 12], 0.25, DType::F64);
        let want = (0.25 + 1e-4) / (0.3125 + 1e-4);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-12);
        assert!(matches!(
            ssim(&rand(&[1, 10, 16], 1), &rand(&[1, 10, 16], 2)),
            Err(crate::Error::Shape(_))
        ));
    }

    #[test]
    fn ssim_symmetry_and_sensitivity() {
        let a = rand(&[2, 16, 16], 4);
        let b = rand(&[2, 16, 16], 5);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        for d in [1e-3, -0.05, 0.2] {
            assert!(ssim(&a, &a.scalar_add(d)).unwrap() < 1.0);
        }
    }

    #[test]
    fn ssim_matches_window_loop() {
        let a = rand(&[1, 16, 16], 6);
        let b = rand(&[1, 16, 16], 7);
        let g = ssim_window();
        let (c1, c2) = (1e-4, 9e-4);
        let mut acc = 0.0;
        for y in 0..6 {
            for x in 0..6 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i] * g[j];
                        ma += wgt * a.get(&[0, y + i, x + j]).unwrap();
                        mb += wgt * b.get(&[0, y + i, x + j]).unwrap();
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wgt = g[i] * g[j];
                        let (p, q) = (
                            a.get(&[0, y + i, x + j]).unwrap() - ma,
                            b.get(&[0, y + i, x + j]).unwrap() - mb,
                        );
                        va += wgt * p * p;
                        vb += wgt * q * q;
                        cov += wgt * p * q;
                    }
                }
                acc += (2.0 * ma * mb + c1) * (2.0 * cov + c2)
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            }
        }
        assert!((ssim(&a, &b).unwrap() - acc / 36.0).abs() < 1e-6);
    }

    #[test]
    fn crop() {
        let x = Tensor::iota(&[1, 6, 6], DType::F64);
        let c = crop_border(&x, 2).unwrap();
        assert_eq!(c.shape(), &[1, 2, 2]);
        assert_eq!(c.data(), &[14.0, 15.0, 20.0, 21.0]);
        assert!(crop_border(&x, 3).is_err());
    }
}
