//! The recurrent super-resolution network.
//!
//! Per stream and window of `2N + 1` low-resolution frames: shared feature
//! extraction, deformable alignment to the reference frame, residual 3D
//! convolutions collapsed over time, a Haar wavelet branch, the memory
//! recurrence `M_t = sigmoid(beta_raw) * M_{t-1} + H_t`, and reconstruction
//! (memory injection, ConvNeXt blocks, pixel shuffle, bicubic residual).
//!
//! Tensor-level entry points here run on a throw-away tape with the weights
//! bound as constants; training goes through [`Net`] directly.

mod config;
mod forward;
mod weights;

pub use config::{DeformableMode, ModelConfig, Variant};
pub use forward::Net;
pub use weights::{build_model, layout, Bound, Layer, ModelWeights, BANDS};

use crate::autograd::{Tape, Var};
use crate::data::{VideoWindow, WindowMode};
use crate::error::{shape_err, Result};
use crate::tensor::{DType, Tensor};

/// Per-stream memory `M_t`, each `[C_f, h, w]`. An empty state is the zero
/// initial memory of any shape.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct MemoryState {
    pub m: Vec<Tensor>,
}

impl MemoryState {
    pub fn initial() -> Self {
        Self::default()
    }

    pub fn zeros(streams: usize, shape: &[usize], dtype: DType) -> Self {
        Self {
            m: (0..streams).map(|_| Tensor::zeros(shape, dtype)).collect(),
        }
    }

    pub fn is_initial(&self) -> bool {
        self.m.is_empty()
    }

    /// Effective decay `sigmoid(beta_raw)` of a set of weights.
    pub fn beta(weights: &ModelWeights) -> Result<f64> {
        Ok(crate::autograd::sigmoid(
            weights.get("memory.beta_raw")?.item(),
        ))
    }

    pub fn detached(&self) -> Self {
        Self {
            m: self.m.iter().map(Tensor::detached).collect(),
        }
    }
}

/// A super-resolved frame `[b, c, s*h, s*w]` and its index in the clip.
#[derive(Clone, Debug, PartialEq)]
pub struct HRFrame {
    pub image: Tensor,
    pub target: usize,
}

fn stream_count(x: &Tensor, axis: usize) -> Result<usize> {
    x.shape()
        .get(axis)
        .copied()
        .ok_or_else(|| shape_err!("missing batch axis {axis} in {:?}", x.shape()))
}

/// Runs `f` per stream on `x`'s batch axis and stacks the results on
/// `out_axis`.
fn per_stream(
    x: &Tensor,
    axis: usize,
    out_axis: usize,
    mut f: impl FnMut(usize, Tensor) -> Result<Tensor>,
) -> Result<Tensor> {
    let b = stream_count(x, axis)?;
    let outs: Result<Vec<Tensor>> = (0..b).map(|i| f(i, x.select(axis, i)?)).collect();
    let outs = outs?;
    let stacked = Tensor::stack(&outs.iter().collect::<Vec<_>>())?;
    if out_axis == 0 {
        return Ok(stacked);
    }
    let mut perm: Vec<usize> = (1..stacked.rank()).collect();
    perm.insert(out_axis, 0);
    stacked.permute(&perm)
}

fn with_net<R>(
    weights: &ModelWeights,
    cfg: &ModelConfig,
    zero_offsets: bool,
    f: impl for<'t> FnOnce(&Net<'_, 't>) -> Result<R>,
) -> Result<R> {
    let tape = Tape::new();
    let bound = weights.bind(&tape, false);
    let mut net = Net::new(cfg, &bound, &tape);
    net.zero_offsets = zero_offsets;
    f(&net)
}

/// Features of every frame aligned to the reference: `[2N+1, b, C_f, h, w]`.
pub fn align_block(
    window: &VideoWindow,
    weights: &ModelWeights,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    align_block_with(window, weights, cfg, false)
}

/// [`align_block`] with the option to force all offsets to zero.
pub fn align_block_with(
    window: &VideoWindow,
    weights: &ModelWeights,
    cfg: &ModelConfig,
    zero_offsets: bool,
) -> Result<Tensor> {
    let frames = window.frames.to_dtype(weights.dtype());
    per_stream(&frames, 1, 1, |_, f| {
        with_net(weights, cfg, zero_offsets, |net| {
            let feat = net.features(net.tape.constant(f))?;
            Ok(net.align(feat, window.reference)?.to_tensor())
        })
    })
}

/// `[2N+1, b, C_f, h, w] -> [b, C_f, h, w]`.
pub fn res3d_block(
    features: &Tensor,
    reference: usize,
    weights: &ModelWeights,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    per_stream(features, 1, 0, |_, f| {
        with_net(weights, cfg, false, |net| {
            Ok(net.res3d(net.tape.constant(f), reference)?.to_tensor())
        })
    })
}

/// `[b, C_f, h, w] -> [b, C_f, h, w]`.
pub fn wavelet_branch(
    center_feat: &Tensor,
    weights: &ModelWeights,
    cfg: &ModelConfig,
) -> Result<Tensor> {
    per_stream(center_feat, 0, 0, |_, f| {
        with_net(weights, cfg, false, |net| {
            Ok(net.wavelet(net.tape.constant(f))?.to_tensor())
        })
    })
}

/// `M_t = sigmoid(beta_raw) * M_{t-1} + H_t` per stream; `h_feat: [b, C_f, h, w]`.
pub fn memory_update(m_prev: &MemoryState, h_feat: &Tensor, beta_raw: f64) -> Result<MemoryState> {
    let b = stream_count(h_feat, 0)?;
    if !m_prev.is_initial() && m_prev.m.len() != b {
        return Err(shape_err!(
            "memory has {} streams, features have {b}",
            m_prev.m.len()
        ));
    }
    let beta = crate::autograd::sigmoid(beta_raw);
    let mut m = Vec::with_capacity(b);
    for i in 0..b {
        let h = h_feat.select(0, i)?;
        m.push(match m_prev.m.get(i) {
            Some(prev) => prev.scalar_mul(beta).add(&h)?,
            None => h,
        });
    }
    Ok(MemoryState { m })
}

/// Reconstruction from fused features `[b, C_f, h, w]`, the already updated
/// memory, and the reference LR frame `[b, c, h, w]`.
pub fn reconstruct(
    fused: &Tensor,
    memory: &MemoryState,
    center_lr: &Tensor,
    weights: &ModelWeights,
    cfg: &ModelConfig,
) -> Result<HRFrame> {
    let image = per_stream(fused, 0, 0, |i, f| {
        let lr = center_lr.select(0, i)?.to_dtype(f.dtype());
        with_net(weights, cfg, false, |net| {
            let m = memory.m.get(i).map(|m| net.tape.constant(m.clone()));
            Ok(net
                .reconstruct(net.tape.constant(f), m, net.tape.constant(lr))?
                .to_tensor())
        })
    })?;
    Ok(HRFrame { image, target: 0 })
}

/// One step of the recurrence: the HR reference frame and the new memory.
pub fn rcdm_forward(
    window: &VideoWindow,
    m_prev: &MemoryState,
    weights: &ModelWeights,
    cfg: &ModelConfig,
) -> Result<(HRFrame, MemoryState)> {
    let frames = window.frames.to_dtype(weights.dtype());
    let b = window.batch();
    if !m_prev.is_initial() && m_prev.m.len() != b {
        return Err(shape_err!(
            "memory has {} streams, window has {b}",
            m_prev.m.len()
        ));
    }
    let mut memory = Vec::with_capacity(b);
    let image = per_stream(&frames, 1, 0, |i, f| {
        with_net(weights, cfg, false, |net| {
            let m = m_prev
                .m
                .get(i)
                .map(|m| net.tape.constant(m.to_dtype(weights.dtype())));
            let (hr, m_new) = net.stream(net.tape.constant(f), window.reference, m)?;
            memory.extend(m_new.map(|m: Var<'_>| m.to_tensor()));
            Ok(hr.to_tensor())
        })
    })?;
    Ok((
        HRFrame {
            image,
            target: window.target,
        },
        MemoryState { m: memory },
    ))
}

/// Windows of `frames: [T, b, c, h, w]` for `mode`.
pub fn sequence_windows(
    frames: &Tensor,
    radius: usize,
    mode: WindowMode,
) -> Result<Vec<VideoWindow>> {
    let width = 2 * radius + 1;
    if frames.rank() != 5 {
        return Err(shape_err!(
            "sequence must be [T, b, c, h, w], got {:?}",
            frames.shape()
        ));
    }
    let t = frames.shape()[0];
    if t < width {
        return Err(shape_err!(
            "sequence of {t} frames is shorter than a window of {width}"
        ));
    }
    (0..=t - width)
        .map(|k| {
            VideoWindow::new(
                frames.slice(0, k, k + width)?,
                mode.reference(radius),
                k + mode.reference(radius),
            )
        })
        .collect()
}

/// Slides a window over the sequence, threading memory from each step to
/// the next. Returns the HR frames with the memory after each step.
pub fn run_sequence_with_memory(
    frames: &Tensor,
    weights: &ModelWeights,
    cfg: &ModelConfig,
    mode: WindowMode,
) -> Result<Vec<(HRFrame, MemoryState)>> {
    let mut memory = MemoryState::initial();
    let mut out = Vec::new();
    for window in sequence_windows(frames, cfg.temporal_radius, mode)? {
        let (hr, m) = rcdm_forward(&window, &memory, weights, cfg)?;
        memory = m.clone();
        out.push((hr, m));
    }
    Ok(out)
}

pub fn run_sequence(
    frames: &Tensor,
    weights: &ModelWeights,
    cfg: &ModelConfig,
    mode: WindowMode,
) -> Result<Vec<HRFrame>> {
    Ok(run_sequence_with_memory(frames, weights, cfg, mode)?
        .into_iter()
        .map(|(h, _)| h)
        .collect())
}
