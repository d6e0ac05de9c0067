//! Invariant suites shared by the `selftest` command and the test targets.
//!
//! Each suite returns [`Check`] records instead of panicking so callers can
//! report every failure at once.

use std::str::FromStr;

use crate::autograd::{grad_check, grad_check_coords, Tape, Var};
use crate::error::{config_err, Error, Result};
use crate::metrics::{ssim, SSIM_K1, SSIM_K2};
use crate::model::{build_model, memory_update, MemoryState, ModelConfig, ModelWeights, Net};
use crate::nn::{conv2d, deformable_conv2d, ConvSpec};
use crate::rng::RngStream;
use crate::tensor::{DType, PadMode, Tensor};
use crate::train::{adamw_step, OptimState, TrainConfig};
use crate::wavelet::{dwt2d_stacked, idwt2d_stacked};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Level {
    Quick,
    Full,
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Level::Quick),
            "full" => Ok(Level::Full),
            _ => Err(config_err!(
                "unknown selftest level '{s}' (expected quick or full)"
            )),
        }
    }
}

/// Deliberate corruption for exercising the failure path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturb one wavelet coefficient before inverting.
    Dwt,
}

impl FromStr for Fault {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dwt" => Ok(Fault::Dwt),
            _ => Err(config_err!("unknown fault '{s}'")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn bound(name: impl Into<String>, value: Result<f64>, limit: f64) -> Self {
        let name = name.into();
        match value {
            Ok(v) => Check {
                passed: v < limit,
                detail: format!("max error {v:.3e} (limit {limit:.0e})"),
                name,
            },
            Err(e) => Check {
                passed: false,
                detail: e.to_string(),
                name,
            },
        }
    }
}

const SSIM_C1: f64 = SSIM_K1 * SSIM_K1;
const SSIM_C2: f64 = SSIM_K2 * SSIM_K2;

fn rand(shape: &[usize], seed: u64, lo: f64, hi: f64, dtype: DType) -> Tensor {
    Tensor::uniform(shape, lo, hi, &mut RngStream::new(seed), dtype)
}

/// Max `|idwt(dwt(x)) - x|` over `n` random images per dtype; errors above
/// `1e-6` (f32) or `1e-12` (f64) fail.
pub fn dwt_round_trip(n: usize, fault: Option<Fault>) -> Vec<Check> {
    [(DType::F32, 1e-6), (DType::F64, 1e-12)]
        .into_iter()
        .map(|(dtype, limit)| {
            let worst = (0..n as u64).try_fold(0.0f64, |acc, seed| {
                let mut rng = RngStream::new(seed).split_named(dtype.name());
                let c = 1 + rng.below(3);
                let h = 2 * (1 + rng.below(12));
                let w = 2 * (1 + rng.below(12));
                let x = Tensor::uniform(&[c, h, w], -1.0, 1.0, &mut rng, dtype);
                let mut s = dwt2d_stacked(&x)?;
                if fault == Some(Fault::Dwt) && seed == 0 {
                    let mut d = s.data().to_vec();
                    d[0] += 0.25;
                    s.assign(&d)?;
                }
                Ok::<f64, Error>(acc.max(idwt2d_stacked(&s)?.max_abs_diff(&x)?))
            });
            Check::bound(format!("dwt round-trip ({})", dtype.name()), worst, limit)
        })
        .collect()
}

/// Zero-offset deformable convolution against plain convolution.
pub fn zero_offset_equivalence(n: usize) -> Check {
    let worst = (0..n as u64).try_fold(0.0f64, |acc, seed| {
        let mut rng = RngStream::new(seed).split_named("dcn");
        let (ci, co) = (1 + rng.below(4), 1 + rng.below(4));
        let k = [1, 3, 5][rng.below(3)];
        let (h, w) = (3 + rng.below(8), 3 + rng.below(8));
        let spec = ConvSpec::new2d(ci, co, k);
        let x = Tensor::uniform(&[ci, h, w], -1.0, 1.0, &mut rng, DType::F32);
        let wt = Tensor::uniform(&spec.weight_shape(), -1.0, 1.0, &mut rng, DType::F32);
        let b = Tensor::uniform(&[co], -1.0, 1.0, &mut rng, DType::F32);
        let off = Tensor::zeros(&[2 * k * k, h, w], DType::F32);
        let a = deformable_conv2d(&x, &wt, Some(&b), &off, &spec)?;
        Ok::<f64, Error>(acc.max(a.max_abs_diff(&conv2d(&x, &wt, Some(&b), &spec)?)?))
    });
    Check::bound("zero-offset deformable == conv", worst, 1e-6)
}

/// Scalar `sum(out * probe)` with a fixed random probe, so every output
/// element carries a distinct weight.
fn scalarize<'t>(tape: &'t Tape, out: Var<'t>) -> Result<Var<'t>> {
    let probe = rand(&out.shape(), 99, -1.0, 1.0, DType::F64);
    Ok(out.mul(tape.constant(probe))?.sum_all())
}

/// Gradient check of `f` with respect to each input in turn.
fn check_inputs<F>(inputs: &[Tensor], f: F) -> Result<f64>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>>,
{
    let mut worst: f64 = 0.0;
    for i in 0..inputs.len() {
        let e = grad_check(
            |t, v| {
                let vars: Vec<Var<'_>> = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, x)| if j == i { v } else { t.constant(x.clone()) })
                    .collect();
                scalarize(t, f(t, &vars)?)
            },
            &inputs[i],
            1e-4,
        )?;
        worst = worst.max(e);
    }
    Ok(worst)
}

/// Offsets whose samples stay clear of integer lattice crossings under the
/// finite-difference step, where bilinear sampling has kinks.
fn smooth_offsets(shape: &[usize], seed: u64) -> Tensor {
    rand(shape, seed, -1.4, 1.4, DType::F64).map(|v| {
        if (v - v.round()).abs() < 0.01 {
            v + 0.05
        } else {
            v
        }
    })
}

/// Finite-difference checks (h = 1e-4, float64) of every differentiable
/// operation; each fails above a relative error of 1e-4.
pub fn gradient_checks() -> Vec<Check> {
    let r = |shape: &[usize], seed: u64| rand(shape, seed, -1.0, 1.0, DType::F64);
    let pos = |shape: &[usize], seed: u64| rand(shape, seed, 0.5, 2.0, DType::F64);
    let away = |shape: &[usize], seed: u64| {
        r(shape, seed).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
    };
    let a = r(&[2, 3, 4], 1);
    let b = r(&[2, 3, 4], 2);
    let cases: Vec<(&str, Result<f64>)> = vec![
        (
            "add",
            check_inputs(&[a.clone(), b.clone()], |_, v| v[0].add(v[1])),
        ),
        (
            "sub",
            check_inputs(&[a.clone(), b.clone()], |_, v| v[0].sub(v[1])),
        ),
        (
            "mul",
            check_inputs(&[a.clone(), b.clone()], |_, v| v[0].mul(v[1])),
        ),
        (
            "div",
            check_inputs(&[a.clone(), pos(&[2, 3, 4], 3)], |_, v| v[0].div(v[1])),
        ),
        (
            "scalar_mul/add",
            check_inputs(std::slice::from_ref(&a), |_, v| {
                Ok(v[0].scalar_mul(-1.7).scalar_add(0.3).neg())
            }),
        ),
        (
            "square",
            check_inputs(std::slice::from_ref(&a), |_, v| Ok(v[0].square())),
        ),
        (
            "sqrt",
            check_inputs(&[pos(&[2, 3, 4], 4)], |_, v| v[0].sqrt()),
        ),
        (
            "abs",
            check_inputs(&[away(&[2, 3, 4], 5)], |_, v| Ok(v[0].abs())),
        ),
        (
            "sigmoid",
            check_inputs(std::slice::from_ref(&a), |_, v| Ok(v[0].sigmoid())),
        ),
        (
            "gelu",
            check_inputs(&[r(&[2, 3, 4], 6).scalar_mul(3.0)], |_, v| Ok(v[0].gelu())),
        ),
        (
            "reshape/permute",
            check_inputs(std::slice::from_ref(&a), |_, v| {
                v[0].reshape(&[4, 3, 2])?.permute(&[2, 0, 1])
            }),
        ),
        (
            "pad",
            check_inputs(std::slice::from_ref(&a), |_, v| {
                let z = v[0].pad(&[(0, 0), (1, 2), (0, 1)], PadMode::Zero)?;
                let f = v[0].pad(&[(0, 0), (2, 1), (3, 2)], PadMode::Reflect)?;
                z.sum_all().add(f.sum_all())?.mul(z.mean_all())
            }),
        ),
        (
            "slice/select/index_select",
            check_inputs(std::slice::from_ref(&a), |_, v| {
                let s = v[0].slice(2, 1, 3)?.select(0, 1)?;
                let i = v[0].index_select(1, &[2, 0, 2])?.select(0, 0)?;
                Var::concat(&[s, i], 1)
            }),
        ),
        (
            "concat/stack",
            check_inputs(&[a.clone(), b.clone()], |_, v| {
                Var::stack(&[
                    Var::concat(&[v[0], v[1]], 1)?,
                    Var::concat(&[v[1].square(), v[0]], 1)?,
                ])
            }),
        ),
        (
            "sum/mean axes",
            check_inputs(std::slice::from_ref(&a), |_, v| {
                v[0].sum_axes(&[0])?.mul(v[0].mean_axes(&[0])?)
            }),
        ),
        (
            "sum/mean all",
            check_inputs(std::slice::from_ref(&a), |_, v| {
                v[0].sum_all().mul(v[0].mean_all())?.expand_scalar(&[2])
            }),
        ),
        ("conv2d", {
            let spec = ConvSpec::new2d(4, 6, 3).with_groups(2);
            check_inputs(
                &[r(&[4, 5, 6], 7), r(&spec.weight_shape(), 8), r(&[6], 9)],
                |_, v| v[0].conv2d(v[1], Some(v[2]), &spec),
            )
        }),
        ("conv2d strided", {
            let spec = ConvSpec::new2d(2, 3, 3).with_stride(&[2, 2]);
            check_inputs(
                &[r(&[2, 7, 6], 10), r(&spec.weight_shape(), 11), r(&[3], 12)],
                |_, v| v[0].conv2d(v[1], Some(v[2]), &spec),
            )
        }),
        ("conv3d", {
            let spec = ConvSpec::new3d(2, 3, [3, 3, 3]);
            check_inputs(
                &[
                    r(&[2, 3, 4, 4], 13),
                    r(&spec.weight_shape(), 14),
                    r(&[3], 15),
                ],
                |_, v| v[0].conv3d(v[1], Some(v[2]), &spec),
            )
        }),
        (
            "bilinear_sample",
            check_inputs(
                &[r(&[2, 4, 4], 16), rand(&[5, 2], 17, -0.7, 3.6, DType::F64)],
                |_, v| v[0].bilinear_sample(v[1]),
            ),
        ),
        ("deformable_conv2d", {
            let spec = ConvSpec::new2d(2, 3, 3);
            check_inputs(
                &[
                    r(&[2, 5, 5], 18),
                    r(&spec.weight_shape(), 19),
                    r(&[3], 20),
                    smooth_offsets(&[18, 5, 5], 21),
                ],
                |_, v| v[0].deformable_conv2d(v[1], Some(v[2]), v[3], &spec),
            )
        }),
        ("deformable_conv3d", {
            let spec = ConvSpec::new3d(2, 2, [1, 3, 3]);
            check_inputs(
                &[
                    r(&[2, 3, 4, 4], 22),
                    r(&spec.weight_shape(), 23),
                    r(&[2], 24),
                    smooth_offsets(&[27, 3, 4, 4], 25),
                ],
                |_, v| v[0].deformable_conv3d(v[1], Some(v[2]), v[3], &spec),
            )
        }),
        (
            "layer_norm",
            check_inputs(&[r(&[4, 3, 3], 26), pos(&[4], 27), r(&[4], 28)], |_, v| {
                v[0].layer_norm(0, v[1], v[2], 1e-6)
            }),
        ),
        (
            "upsample_bilinear",
            check_inputs(&[r(&[2, 3, 4], 29)], |_, v| v[0].upsample_bilinear(2)),
        ),
        (
            "pixel_shuffle",
            check_inputs(&[r(&[8, 2, 3], 30)], |_, v| v[0].pixel_shuffle(2)),
        ),
        (
            "dwt2d/idwt2d",
            check_inputs(&[r(&[2, 4, 6], 31)], |_, v| v[0].dwt2d()?.square().idwt2d()),
        ),
        (
            "bicubic_resample",
            check_inputs(&[r(&[2, 5, 4], 32)], |_, v| v[0].bicubic_resample(9, 11)),
        ),
        (
            "losses",
            check_inputs(&[a.clone(), b.clone()], |_, v| {
                let c = crate::train::charbonnier_loss(v[0], v[1], 1e-3)?;
                c.add(crate::train::l2_loss(v[0], v[1])?)?
                    .expand_scalar(&[1])
            }),
        ),
    ];
    cases
        .into_iter()
        .map(|(name, e)| Check::bound(format!("grad {name}"), e, 1e-4))
        .collect()
}

/// Two chained forward steps of a tiny f64 model; the loss depends on the
/// frames, every parameter and, through the memory, the first step.
fn two_step_loss<'t>(
    tape: &'t Tape,
    cfg: &ModelConfig,
    w: &ModelWeights,
    over: Option<(&str, Var<'t>)>,
    frames: Var<'t>,
) -> Result<Var<'t>> {
    let mut bound = w.bind(tape, false);
    if let Some((name, v)) = over {
        bound.set(name, v)?;
    }
    let net = Net::new(cfg, &bound, tape);
    let (_, m1) = net.stream(frames, 1, None)?;
    let (hr, _) = net.stream(frames, 1, m1)?;
    scalarize(tape, hr)
}

/// Finite-difference check of the whole tiny model: `frame_coords` sampled
/// input coordinates and `param_coords` per parameter tensor; counts at or
/// above a tensor's size check every coordinate.
pub fn model_gradient_check(frame_coords: usize, param_coords: usize) -> Check {
    let cfg = ModelConfig {
        temporal_radius: 1,
        base_channels: 4,
        feat_blocks: 1,
        n_res3d: 1,
        wavelet_channels: 2,
        n_convnext: 1,
        scale: 2,
        ..ModelConfig::default()
    };
    let run = || -> Result<f64> {
        let w = build_model(&cfg, 21)?.to_dtype(DType::F64).map(|k, t| {
            // offsets start mid-cell: bilinear sampling has kinks on the
            // integer lattice, and zero offsets sit exactly on it
            if k == "align.offset.conv2.bias" {
                rand(t.shape(), 7, 0.3, 0.7, DType::F64)
            } else if k.ends_with(".bias") || k.ends_with(".beta") || k == "memory.beta_raw" {
                // non-zero biases and shifts so their paths are exercised
                rand(t.shape(), k.len() as u64, -0.2, 0.2, DType::F64)
            } else {
                t.clone()
            }
        });
        let frames = rand(&[3, 3, 8, 8], 22, 0.0, 1.0, DType::F64);
        let pick = |n: usize, count: usize, seed: u64| -> Vec<usize> {
            if count >= n {
                return (0..n).collect();
            }
            let mut rng = RngStream::new(seed);
            (0..count).map(|_| rng.below(n)).collect()
        };
        let mut worst = grad_check_coords(
            |t, v| two_step_loss(t, &cfg, &w, None, v),
            &frames,
            1e-4,
            &pick(frames.numel(), frame_coords, 1),
        )?;
        for (i, name) in w.names().enumerate() {
            let p = w.get(name)?;
            let e = grad_check_coords(
                |t, v| two_step_loss(t, &cfg, &w, Some((name, v)), t.constant(frames.clone())),
                p,
                1e-4,
                &pick(p.numel(), param_coords, i as u64),
            )?;
            worst = worst.max(e);
        }
        Ok(worst)
    };
    Check::bound("grad full tiny model", run(), 1e-4)
}

/// `M_t` under constant features and frozen `beta = 0.5` against the
/// geometric closed form `H (1 - beta^t) / (1 - beta)`, and `M_4 / H = 1.875`.
pub fn memory_closed_form(steps: usize) -> Check {
    let run = || -> Result<f64> {
        let h = rand(&[1, 2, 3, 3], 5, 0.5, 1.5, DType::F64);
        let beta: f64 = 0.5;
        let mut m = MemoryState::initial();
        let mut worst: f64 = 0.0;
        for t in 1..=steps {
            m = memory_update(&m, &h, 0.0)?;
            let closed = h
                .select(0, 0)?
                .scalar_mul((1.0 - beta.powi(t as i32)) / (1.0 - beta));
            worst = worst.max(m.m[0].max_abs_diff(&closed)?);
            if t == 4 {
                let ratio = m.m[0].div(&h.select(0, 0)?)?;
                worst = worst.max(ratio.map(|v| (v - 1.875).abs()).max_abs());
            }
        }
        Ok(worst)
    };
    Check::bound("memory closed form", run(), 1e-6)
}

/// SSIM identity, the constant-image closed form and agreement with a
/// direct per-window loop on random 16x16 pairs.
pub fn ssim_oracle(n: usize) -> Vec<Check> {
    let identity = (|| -> Result<f64> {
        let x = rand(&[3, 16, 16], 1, 0.0, 1.0, DType::F64);
        Ok((ssim(&x, &x)? - 1.0).abs())
    })();
    let constant = (|| -> Result<f64> {
        let a = Tensor::full(&[1, 16, 16], 0.5, DType::F64);
        let b = Tensor::full(&[1, 16, 16], 0.25, DType::F64);
        let (ma, mb) = (0.5f64, 0.25f64);
        let closed = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        Ok((ssim(&a, &b)? - closed).abs())
    })();
    let window = (0..n as u64).try_fold(0.0f64, |acc, seed| {
        let a = rand(&[1, 16, 16], 2 * seed, 0.0, 1.0, DType::F64);
        let b = rand(&[1, 16, 16], 2 * seed + 1, 0.0, 1.0, DType::F64);
        Ok::<f64, Error>(acc.max((ssim(&a, &b)? - ssim_loop(&a, &b)).abs()))
    });
    vec![
        Check::bound("ssim identity", identity, 1e-12),
        Check::bound("ssim constant closed form", constant, 1e-4),
        Check::bound("ssim window oracle", window, 1e-6),
    ]
}

/// SSIM of single-channel images by explicit 11x11 window sums.
fn ssim_loop(a: &Tensor, b: &Tensor) -> f64 {
    let g = crate::metrics::ssim_window();
    let (h, w) = (a.shape()[1], a.shape()[2]);
    let k = g.len();
    let mut total = 0.0;
    let mut count = 0;
    for y in 0..=h - k {
        for x in 0..=w - k {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..k {
                for j in 0..k {
                    let wt = g[i] * g[j];
                    let va = a.data()[(y + i) * w + x + j];
                    let vb = b.data()[(y + i) * w + x + j];
                    ma += wt * va;
                    mb += wt * vb;
                    saa += wt * va * va;
                    sbb += wt * vb * vb;
                    sab += wt * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            count += 1;
        }
    }
    total / count as f64
}

/// Three AdamW steps on a scalar against the update rule written out.
pub fn adamw_oracle() -> Check {
    let run = || -> Result<f64> {
        let cfg = TrainConfig::default();
        let mut w = ModelWeights::new();
        w.insert("p", Tensor::scalar(0.0, DType::F64));
        let mut state = OptimState::new(&w);
        let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        let mut worst: f64 = 0.0;
        for (k, g) in [1.0, -0.5, 0.25].into_iter().enumerate() {
            adamw_step(
                &mut w,
                &[("p".to_string(), vec![g])].into(),
                &mut state,
                &cfg,
            )?;
            let t = k as i32 + 1;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t));
            let vh = v / (1.0 - 0.999f64.powi(t));
            p -= 4e-4 * (mh / (vh.sqrt() + 1e-8) + 0.001 * p);
            worst = worst.max((w.get("p")?.item() - p).abs());
        }
        Ok(worst)
    };
    Check::bound("adamw hand oracle", run(), 1e-12)
}

/// Runs the suites of `level`. Quick covers every invariant at reduced
/// counts; full uses the acceptance counts and denser model coordinates.
pub fn run(level: Level, fault: Option<Fault>) -> Vec<Check> {
    let (images, dcn, windows, coords) = match level {
        Level::Quick => (50, 25, 4, (10, 1)),
        Level::Full => (200, 100, 16, (64, 6)),
    };
    let mut checks = dwt_round_trip(images, fault);
    checks.push(zero_offset_equivalence(dcn));
    checks.extend(gradient_checks());
    checks.push(model_gradient_check(coords.0, coords.1));
    checks.push(memory_closed_form(32));
    checks.extend(ssim_oracle(windows));
    checks.push(adamw_oracle());
    checks
}
