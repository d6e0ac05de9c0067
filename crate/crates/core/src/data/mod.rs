//! Degradation pipeline, synthetic clips, windowing and file formats.

mod degrade;
mod io;
mod synth;
mod window;

pub use degrade::{
    add_noise, add_noise_with, bicubic_resample, degrade_clip, degrade_frame, gaussian_blur,
    gaussian_kernel, noise_field, pad_to_multiple, DegradationParams,
};
pub use io::{
    frame_name, rct_from_bytes, rct_to_bytes, read_clip, read_ppm, read_rct, write_clip, write_ppm,
    write_rct, ClipMeta,
};
pub use synth::{synth_clip, SynthKind};
pub use window::{make_windows, VideoWindow, WindowMode};

use crate::tensor::Tensor;

/// A clip of frames `[T, c, H, W]` with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub frames: Tensor,
    pub frame_rate: f64,
}

impl VideoClip {
    pub fn new(frames: Tensor, frame_rate: f64) -> crate::Result<Self> {
        if frames.rank() != 4 {
            return Err(crate::error::shape_err!(
                "clip frames must be [T, c, H, W], got {:?}",
                frames.shape()
            ));
        }
        Ok(Self { frames, frame_rate })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.frames.shape()[1]
    }

    /// `(H, W)` of every frame.
    pub fn size(&self) -> (usize, usize) {
        (self.frames.shape()[2], self.frames.shape()[3])
    }

    pub fn frame(&self, t: usize) -> crate::Result<Tensor> {
        self.frames.select(0, t)
    }

    pub fn from_frames(frames: &[Tensor], frame_rate: f64) -> crate::Result<Self> {
        let refs: Vec<&Tensor> = frames.iter().collect();
        Self::new(Tensor::stack(&refs)?, frame_rate)
    }
}
