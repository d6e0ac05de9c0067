use std::str::FromStr;

use super::VideoClip;
use crate::error::{config_err, shape_err, Error, Result};
use crate::tensor::Tensor;

/// Which frame of a window is super-resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WindowMode {
    Center,
    /// The last frame; no future frames are used.
    Causal,
}

impl WindowMode {
    pub fn name(self) -> &'static str {
        match self {
            WindowMode::Center => "center",
            WindowMode::Causal => "causal",
        }
    }

    /// Position of the target frame inside a window of radius `n`.
    pub fn reference(self, n: usize) -> usize {
        match self {
            WindowMode::Center => n,
            WindowMode::Causal => 2 * n,
        }
    }
}

impl FromStr for WindowMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(WindowMode::Center),
            "causal" => Ok(WindowMode::Causal),
            _ => Err(config_err!(
                "unknown window mode '{s}' (expected center or causal)"
            )),
        }
    }
}

/// `2N + 1` consecutive low-resolution frames `[2N+1, b, c, h, w]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoWindow {
    pub frames: Tensor,
    /// Index of the frame being super-resolved within the window.
    pub reference: usize,
    /// Index of that frame in the source clip.
    pub target: usize,
}

impl VideoWindow {
    pub fn new(frames: Tensor, reference: usize, target: usize) -> Result<Self> {
        let s = frames.shape();
        if s.len() != 5 || s[0].is_multiple_of(2) || reference >= s[0] {
            return Err(shape_err!(
                "window must be [2N+1, b, c, h, w] with reference inside, got {:?} ref {reference}",
                s
            ));
        }
        Ok(Self {
            frames,
            reference,
            target,
        })
    }

    pub fn radius(&self) -> usize {
        self.frames.shape()[0] / 2
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn batch(&self) -> usize {
        self.frames.shape()[1]
    }

    /// `(c, h, w)` of each frame.
    pub fn frame_dims(&self) -> (usize, usize, usize) {
        let s = self.frames.shape();
        (s[2], s[3], s[4])
    }
}

/// Stride-1 sliding windows of width `2N + 1` over a clip (batch 1).
pub fn make_windows(clip: &VideoClip, n: usize, mode: WindowMode) -> Result<Vec<VideoWindow>> {
    let width = 2 * n + 1;
    let t = clip.len();
    if t < width {
        return Err(shape_err!(
            "clip of {t} frames is shorter than a window of {width}"
        ));
    }
    let (c, h, w) = (clip.channels(), clip.size().0, clip.size().1);
    (0..=t - width)
        .map(|k| {
            let frames = clip
                .frames
                .slice(0, k, k + width)?
                .reshape(&[width, 1, c, h, w])?;
            VideoWindow::new(frames, mode.reference(n), k + mode.reference(n))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DType;

    fn clip(t: usize) -> VideoClip {
        VideoClip::new(Tensor::iota(&[t, 1, 2, 2], DType::F64), 1.0).unwrap()
    }

    #[test]
    fn counts() {
        assert_eq!(
            make_windows(&clip(5), 2, WindowMode::Center).unwrap().len(),
            1
        );
        assert_eq!(
            make_windows(&clip(100), 2, WindowMode::Center)
                .unwrap()
                .len(),
            96
        );
        assert!(matches!(
            make_windows(&clip(4), 2, WindowMode::Center),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn targets() {
        let c = clip(9);
        for (k, win) in make_windows(&c, 2, WindowMode::Center)
            .unwrap()
            .iter()
            .enumerate()
        {
            assert_eq!(win.target, k + 2);
            assert_eq!(win.frames.shape(), &[5, 1, 1, 2, 2]);
            let f = win
                .frames
                .select(0, win.reference)
                .unwrap()
                .reshape(&[1, 2, 2])
                .unwrap();
            assert_eq!(f, c.frame(win.target).unwrap());
        }
        let causal = make_windows(&c, 2, WindowMode::Causal).unwrap();
        assert_eq!(causal[0].target, 4);
        assert_eq!(causal[0].reference, 4);
    }
}
