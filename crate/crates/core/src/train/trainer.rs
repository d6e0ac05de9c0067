use std::collections::BTreeMap;

use super::{adamw_step, clip_grad_norm, loss_value, LossKind, OptimState, TrainConfig};
use crate::autograd::Tape;
use crate::data::{VideoClip, WindowMode};
use crate::error::{config_err, shape_err, Result};
use crate::model::{build_model, run_sequence, ModelConfig, ModelWeights, Net};
use crate::tensor::Tensor;

/// A low-resolution clip and its high-resolution ground truth.
#[derive(Clone, Debug)]
pub struct TrainClip {
    pub lr: VideoClip,
    pub hr: VideoClip,
}

impl TrainClip {
    pub fn new(lr: VideoClip, hr: VideoClip) -> Result<Self> {
        if lr.len() != hr.len() || lr.channels() != hr.channels() {
            return Err(shape_err!(
                "LR clip {:?} does not pair with HR clip {:?}",
                lr.frames.shape(),
                hr.frames.shape()
            ));
        }
        Ok(Self { lr, hr })
    }

    fn windows(&self, frames: usize) -> usize {
        (self.lr.len() + 1).saturating_sub(frames)
    }
}

/// Everything needed to continue a run: weights, optimizer moments, the
/// step counter, the window cursor and the memory carried into the next
/// window (empty at a clip start).
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub weights: ModelWeights,
    pub optim: OptimState,
    pub step: usize,
    pub cursor: usize,
    pub memory: Option<Tensor>,
}

impl TrainState {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Ok(Self::from_weights(build_model(cfg, seed)?))
    }

    pub fn from_weights(weights: ModelWeights) -> Self {
        let optim = OptimState::new(&weights);
        Self {
            weights,
            optim,
            step: 0,
            cursor: 0,
            memory: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f64,
}

pub fn loss_csv(trace: &[TrainStep]) -> String {
    let mut s = String::from("step,loss\n");
    for t in trace {
        s.push_str(&format!("{},{}\n", t.step, t.loss));
    }
    s
}

/// Window `cursor` of the flattened sequence over all clips, as
/// `(clip, first frame)`.
fn locate(clips: &[TrainClip], frames: usize, cursor: usize) -> (usize, usize) {
    let mut k = cursor;
    for (i, c) in clips.iter().enumerate() {
        let n = c.windows(frames);
        if k < n {
            return (i, k);
        }
        k -= n;
    }
    unreachable!("cursor outside the window range")
}

/// Runs optimization steps until `state.step == tcfg.steps`. Each step
/// takes `batch` consecutive centre-reference windows, cycling through the
/// clips in order; memory flows from one window to the next within a clip
/// (detached, so gradients stop at the window boundary) and restarts from
/// zero at each clip. `on_step` sees every step as it completes.
pub fn train_loop(
    state: &mut TrainState,
    clips: &[TrainClip],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut on_step: impl FnMut(&TrainStep),
) -> Result<Vec<TrainStep>> {
    mcfg.validate()?;
    tcfg.validate()?;
    let frames = mcfg.frames();
    let radius = mcfg.temporal_radius;
    let total: usize = clips.iter().map(|c| c.windows(frames)).sum();
    if total == 0 {
        return Err(config_err!(
            "no clip has the {frames} frames a window needs"
        ));
    }
    let dtype = state.weights.dtype();
    let mut trace = Vec::new();
    while state.step < tcfg.steps {
        let mut grads: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut loss_sum = 0.0;
        for _ in 0..tcfg.batch {
            let (ci, k) = locate(clips, frames, state.cursor % total);
            let clip = &clips[ci];
            if k == 0 {
                state.memory = None;
            }
            let input = clip.lr.frames.slice(0, k, k + frames)?.to_dtype(dtype);
            let target = clip.hr.frame(k + radius)?.to_dtype(dtype);

            let tape = Tape::new();
            let bound = state.weights.bind(&tape, true);
            let net = Net::new(mcfg, &bound, &tape);
            let m_prev = state.memory.take().map(|m| tape.constant(m));
            let (hr, m_new) = net.stream(tape.constant(input), radius, m_prev)?;
            let loss = loss_value(tcfg.loss, hr, tape.constant(target))?;
            let g = tape.backward(loss)?;
            loss_sum += loss.value().item();
            for (name, gv) in bound.gradients(&g) {
                match grads.get_mut(&name) {
                    Some(acc) => acc.iter_mut().zip(&gv).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(name, gv);
                    }
                }
            }
            state.memory = m_new.map(|m| m.to_tensor().detached());
            state.cursor = (state.cursor + 1) % total;
        }
        let inv = 1.0 / tcfg.batch as f64;
        grads.values_mut().flatten().for_each(|g| *g *= inv);
        if let Some(max) = tcfg.grad_clip_norm {
            clip_grad_norm(&mut grads, max);
        }
        adamw_step(&mut state.weights, &grads, &mut state.optim, tcfg)?;
        state.step += 1;
        let rec = TrainStep {
            step: state.step,
            loss: loss_sum * inv,
        };
        on_step(&rec);
        trace.push(rec);
    }
    Ok(trace)
}

/// Mean loss over every centre-reference window of `clip`, memory threaded
/// from the clip start, without touching any weights.
pub fn evaluate_clip(
    weights: &ModelWeights,
    mcfg: &ModelConfig,
    clip: &TrainClip,
    kind: LossKind,
) -> Result<f64> {
    let frames = clip
        .lr
        .frames
        .reshape(&with_batch(clip.lr.frames.shape()))?;
    let outs = run_sequence(&frames, weights, mcfg, WindowMode::Center)?;
    let mut total = 0.0;
    for hr in &outs {
        let target = clip.hr.frame(hr.target)?.to_dtype(hr.image.dtype());
        let pred = hr.image.select(0, 0)?;
        let tape = Tape::new();
        total += loss_value(kind, tape.constant(pred), tape.constant(target))?
            .value()
            .item();
    }
    Ok(total / outs.len() as f64)
}

fn with_batch(s: &[usize]) -> Vec<usize> {
    let mut v = s.to_vec();
    v.insert(1, 1);
    v
}
