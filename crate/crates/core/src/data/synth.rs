use std::f64::consts::PI;
use std::str::FromStr;

use super::VideoClip;
use crate::error::{config_err, shape_err, Error, Result};
use crate::rng::RngStream;
use crate::tensor::{DType, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// A fixed random texture translated horizontally by `motion` px/frame.
    PanningTexture,
    /// Anti-aliased rectangles and disks moving over a gradient background.
    MovingShapes,
    /// One texture frame repeated.
    Static,
}

impl SynthKind {
    pub fn name(self) -> &'static str {
        match self {
            SynthKind::PanningTexture => "panning_texture",
            SynthKind::MovingShapes => "moving_shapes",
            SynthKind::Static => "static",
        }
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "panning_texture" => Ok(SynthKind::PanningTexture),
            "moving_shapes" => Ok(SynthKind::MovingShapes),
            "static" => Ok(SynthKind::Static),
            _ => Err(config_err!("unknown clip kind '{s}'")),
        }
    }
}

/// Sum of random plane waves, evaluated at continuous coordinates so that
/// fractional translation is exact.
struct Texture {
    // per channel: (amplitude, fy, fx, phase)
    waves: Vec<Vec<(f64, f64, f64, f64)>>,
}

impl Texture {
    fn new(c: usize, rng: &mut RngStream) -> Self {
        let waves = (0..c)
            .map(|_| {
                let n = 8;
                (0..n)
                    .map(|_| {
                        let period = rng.uniform(3.0, 16.0);
                        let angle = rng.uniform(0.0, PI);
                        let amp = 0.45 / n as f64 * rng.uniform(0.5, 1.0);
                        let f = 2.0 * PI / period;
                        (
                            amp,
                            f * angle.sin(),
                            f * angle.cos(),
                            rng.uniform(0.0, 2.0 * PI),
                        )
                    })
                    .collect()
            })
            .collect();
        Self { waves }
    }

    fn eval(&self, ch: usize, y: f64, x: f64) -> f64 {
        let v: f64 = self.waves[ch]
            .iter()
            .map(|&(a, fy, fx, p)| a * (fy * y + fx * x + p).sin())
            .sum();
        (0.5 + v).clamp(0.0, 1.0)
    }
}

struct Shape {
    disk: bool,
    cy: f64,
    cx: f64,
    // radius, or half extents (ry, rx)
    ry: f64,
    rx: f64,
    vy: f64,
    vx: f64,
    color: Vec<f64>,
}

fn coverage_1d(d: f64, half: f64) -> f64 {
    // fraction of the unit pixel around a point at distance d inside [-half, half]
    (half - d.abs() + 0.5).clamp(0.0, 1.0)
}

/// Procedurally generated clip `[T, c, H, W]` in `[0, 1]`, stored as f32.
pub fn synth_clip(
    kind: SynthKind,
    t: usize,
    c: usize,
    h: usize,
    w: usize,
    motion: f64,
    seed: u64,
) -> Result<VideoClip> {
    if t == 0 || c == 0 || h == 0 || w == 0 {
        return Err(shape_err!("synth_clip needs positive extents"));
    }
    let root = RngStream::new(seed);
    let mut data = Vec::with_capacity(t * c * h * w);
    match kind {
        SynthKind::PanningTexture | SynthKind::Static => {
            let tex = Texture::new(c, &mut root.split_named("texture"));
            for f in 0..t {
                let shift = if kind == SynthKind::Static {
                    0.0
                } else {
                    motion * f as f64
                };
                for ch in 0..c {
                    for y in 0..h {
                        for x in 0..w {
                            data.push(tex.eval(ch, y as f64, x as f64 + shift));
                        }
                    }
                }
            }
        }
        SynthKind::MovingShapes => {
            let mut rng = root.split_named("shapes");
            let shapes: Vec<Shape> = (0..4)
                .map(|_| {
                    let dir = rng.uniform(0.0, 2.0 * PI);
                    Shape {
                        disk: rng.uniform(0.0, 1.0) < 0.5,
                        cy: rng.uniform(0.0, h as f64),
                        cx: rng.uniform(0.0, w as f64),
                        ry: rng.uniform(0.08, 0.25) * h.min(w) as f64,
                        rx: rng.uniform(0.08, 0.25) * h.min(w) as f64,
                        vy: motion * dir.sin(),
                        vx: motion * dir.cos(),
                        color: (0..c).map(|_| rng.uniform(0.0, 1.0)).collect(),
                    }
                })
                .collect();
            let bg: Vec<(f64, f64, f64)> = (0..c)
                .map(|_| {
                    (
                        rng.uniform(0.2, 0.6),
                        rng.uniform(-0.2, 0.2),
                        rng.uniform(-0.2, 0.2),
                    )
                })
                .collect();
            for f in 0..t {
                for (ch, &(b0, gy, gx)) in bg.iter().enumerate() {
                    for y in 0..h {
                        for x in 0..w {
                            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
                            let mut v = b0 + gy * py / h as f64 + gx * px / w as f64;
                            for s in &shapes {
                                let (cy, cx) = (s.cy + s.vy * f as f64, s.cx + s.vx * f as f64);
                                let cov = if s.disk {
                                    let d = ((py - cy).powi(2) + (px - cx).powi(2)).sqrt();
                                    (s.ry - d + 0.5).clamp(0.0, 1.0)
                                } else {
                                    coverage_1d(py - cy, s.ry) * coverage_1d(px - cx, s.rx)
                                };
                                v = v * (1.0 - cov) + s.color[ch] * cov;
                            }
                            data.push(v.clamp(0.0, 1.0));
                        }
                    }
                }
            }
        }
    }
    VideoClip::new(Tensor::new(&[t, c, h, w], data, DType::F32)?, 25.0)
}
