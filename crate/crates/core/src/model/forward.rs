use super::config::{DeformableMode, ModelConfig};
use super::weights::{spec_from_weight, Bound, BANDS};
use crate::autograd::{Tape, Var};
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;
use crate::wavelet::band_indices;

/// The network evaluated for one stream on a tape.
pub struct Net<'a, 't> {
    pub cfg: &'a ModelConfig,
    pub w: &'a Bound<'t>,
    pub tape: &'t Tape,
    /// Replace every predicted offset with zeros.
    pub zero_offsets: bool,
}

impl<'a, 't> Net<'a, 't> {
    pub fn new(cfg: &'a ModelConfig, w: &'a Bound<'t>, tape: &'t Tape) -> Self {
        Self {
            cfg,
            w,
            tape,
            zero_offsets: false,
        }
    }

    fn conv(&self, layer: &str, x: Var<'t>) -> Result<Var<'t>> {
        let w = self.w.get(&format!("{layer}.weight"))?;
        let b = self.w.maybe(&format!("{layer}.bias"));
        let ws = w.shape();
        let xs = x.shape();
        let spatial = ws.len() - 2;
        if xs.len() < spatial + 1 {
            return Err(shape_err!(
                "{layer}: input {:?} too small for weight {:?}",
                xs,
                ws
            ));
        }
        let spec = spec_from_weight(&ws, xs[xs.len() - spatial - 1], b.is_some())?;
        match spatial {
            2 => x.conv2d(w, b, &spec),
            3 => x.conv3d(w, b, &spec),
            _ => Err(shape_err!("{layer}: unsupported kernel rank {spatial}")),
        }
    }

    /// Shared per-frame features: `[T, c, h, w] -> [T, C_f, h, w]`.
    pub fn features(&self, frames: Var<'t>) -> Result<Var<'t>> {
        let mut f = self.conv("feat.conv_first", frames)?;
        for i in 0..self.cfg.feat_blocks {
            let y = self.conv(&format!("feat.block{i}.conv1"), f)?.gelu();
            f = f.add(self.conv(&format!("feat.block{i}.conv2"), y)?)?;
        }
        Ok(f)
    }

    /// Offsets for every non-reference frame, `[T-1, d*K, h, w]` in frame
    /// order with the reference skipped.
    fn predict_offsets(&self, feat: Var<'t>, reference: usize) -> Result<Vec<Var<'t>>> {
        let t = feat.shape()[0];
        let cond = if self.cfg.early_fusion {
            let s = feat.shape();
            let flat = feat.reshape(&[s[0] * s[1], s[2], s[3]])?;
            self.conv("align.context", flat)?
        } else {
            feat.select(0, reference)?
        };
        let inputs: Result<Vec<Var<'t>>> = (0..t)
            .filter(|&i| i != reference)
            .map(|i| Var::concat(&[feat.select(0, i)?, cond], 0))
            .collect();
        let batch = Var::stack(&inputs?)?;
        let hidden = self.conv("align.offset.conv1", batch)?.gelu();
        let off = self.conv("align.offset.conv2", hidden)?;
        (0..t - 1).map(|i| off.select(0, i)).collect()
    }

    /// Aligns every frame's features to the reference frame:
    /// `[T, C_f, h, w] -> [T, C_f, h, w]`. The reference goes through the same
    /// deformable layer with zero offsets, so all outputs share one feature
    /// space. With no neighbours the features pass through untouched.
    pub fn align(&self, feat: Var<'t>, reference: usize) -> Result<Var<'t>> {
        let s = feat.shape();
        let (t, h, w) = (s[0], s[2], s[3]);
        if t == 1 {
            return Ok(feat);
        }
        let dims = self.cfg.deformable_mode.offset_dims();
        let taps = self.cfg.deform_taps();
        let zeros = || {
            self.tape
                .constant(Tensor::zeros(&[dims * taps, h, w], feat.dtype()))
        };
        let predicted = if self.zero_offsets {
            vec![]
        } else {
            self.predict_offsets(feat, reference)?
        };
        let mut offsets = Vec::with_capacity(t);
        let mut pred = predicted.into_iter();
        for i in 0..t {
            offsets.push(if i == reference {
                zeros()
            } else {
                pred.next().unwrap_or_else(zeros)
            });
        }
        let w = self.w.get("align.dcn.weight")?;
        let b = self.w.maybe("align.dcn.bias");
        let spec = spec_from_weight(&w.shape(), s[1], b.is_some())?;
        match self.cfg.deformable_mode {
            DeformableMode::PerFrame2d => {
                let aligned: Result<Vec<Var<'t>>> = (0..t)
                    .map(|i| {
                        feat.select(0, i)?
                            .deformable_conv2d(w, b, offsets[i], &spec)
                    })
                    .collect();
                Var::stack(&aligned?)
            }
            DeformableMode::Trilinear3d => {
                let off = Var::stack(&offsets)?.permute(&[1, 0, 2, 3])?;
                let x = feat.permute(&[1, 0, 2, 3])?;
                x.deformable_conv3d(w, b, off, &spec)?
                    .permute(&[1, 0, 2, 3])
            }
        }
    }

    /// Residual 3D blocks over `[T, C_f, h, w]`, then a temporal collapse to
    /// the reference features plus the mean residual over time.
    pub fn res3d(&self, aligned: Var<'t>, reference: usize) -> Result<Var<'t>> {
        let center = aligned.select(0, reference)?;
        if self.cfg.n_res3d == 0 {
            return Ok(center);
        }
        let x0 = aligned.permute(&[1, 0, 2, 3])?;
        let mut x = x0;
        for i in 0..self.cfg.n_res3d {
            let y = self.conv(&format!("res3d.block{i}.conv1"), x)?.gelu();
            x = x.add(self.conv(&format!("res3d.block{i}.conv2"), y)?)?;
        }
        center.add(x.sub(x0)?.mean_axes(&[1])?)
    }

    /// Sub-band conv stacks on the Haar bands of `x: [C_f, h, w]`, upsampled
    /// back to `h × w` and fused with `x` by a 1×1 conv.
    pub fn wavelet(&self, x: Var<'t>) -> Result<Var<'t>> {
        if !self.cfg.use_wavelet {
            return Ok(x);
        }
        let c = x.shape()[0];
        let s = x.dwt2d()?;
        let mut bands = Vec::with_capacity(4);
        for (k, name) in BANDS.iter().enumerate() {
            let b = s.index_select(0, &band_indices(c, k))?;
            let y = self.conv(&format!("wavelet.{name}.conv1"), b)?.gelu();
            bands.push(self.conv(&format!("wavelet.{name}.conv2"), y)?);
        }
        let up = Var::concat(&bands, 0)?.upsample_bilinear(2)?;
        self.conv("wavelet.fuse", Var::concat(&[x, up], 0)?)
    }

    /// `m_new = sigmoid(beta_raw) * m_prev + h_feat`.
    pub fn memory_update(&self, m_prev: Var<'t>, h_feat: Var<'t>) -> Result<Var<'t>> {
        let beta = self
            .w
            .get("memory.beta_raw")?
            .sigmoid()
            .expand_scalar(&h_feat.shape())?;
        beta.mul(m_prev)?.add(h_feat)
    }

    fn inject(&self, h_feat: Var<'t>, m: Var<'t>) -> Result<Var<'t>> {
        let m = if self.cfg.dwt_state {
            self.conv("memory.dwt_conv", m.dwt2d()?)?.idwt2d()?
        } else {
            m
        };
        h_feat.add(self.conv("memory.inject", m)?)
    }

    /// Memory injection, ConvNeXt refinement, sub-pixel upsampling and the
    /// bicubic global residual. `center_lr: [c, h, w]`.
    pub fn reconstruct(
        &self,
        h_feat: Var<'t>,
        memory: Option<Var<'t>>,
        center_lr: Var<'t>,
    ) -> Result<Var<'t>> {
        let mut r = match memory {
            Some(m) if self.cfg.use_memory => self.inject(h_feat, m)?,
            _ => h_feat,
        };
        for i in 0..self.cfg.n_convnext {
            let p = format!("recon.convnext{i}");
            let y = self.conv(&format!("{p}.dw"), r)?;
            let y = y.layer_norm(
                0,
                self.w.get(&format!("{p}.norm.gamma"))?,
                self.w.get(&format!("{p}.norm.beta"))?,
                self.cfg.layer_norm_eps,
            )?;
            let y = self.conv(&format!("{p}.pw1"), y)?.gelu();
            r = r.add(self.conv(&format!("{p}.pw2"), y)?)?;
        }
        let s = self.cfg.scale;
        let out = self.conv("recon.out", r)?.pixel_shuffle(s)?;
        let (h, w) = (center_lr.shape()[1], center_lr.shape()[2]);
        out.add(center_lr.bicubic_resample(s * h, s * w)?)
    }

    /// One stream: `frames: [T, c, h, w]` → (HR `[c, s*h, s*w]`, memory).
    /// The returned memory is `None` when the model has no memory.
    pub fn stream(
        &self,
        frames: Var<'t>,
        reference: usize,
        m_prev: Option<Var<'t>>,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        let s = frames.shape();
        if s.len() != 4 || s[0] != self.cfg.frames() || s[1] != self.cfg.in_channels {
            return Err(shape_err!(
                "expected {} frames of {} channels, got {:?}",
                self.cfg.frames(),
                self.cfg.in_channels,
                s
            ));
        }
        let center_lr = frames.select(0, reference)?;
        let feat = self.features(frames)?;
        let aligned = self.align(feat, reference)?;
        let fused = self.res3d(aligned, reference)?;
        let h_feat = self.wavelet(fused)?;
        let memory = if self.cfg.use_memory {
            let m_prev = match m_prev {
                Some(m) if m.shape() == h_feat.shape() => m,
                Some(m) => {
                    return Err(shape_err!(
                        "memory shape {:?} vs features {:?}",
                        m.shape(),
                        h_feat.shape()
                    ));
                }
                None => self
                    .tape
                    .constant(Tensor::zeros(&h_feat.shape(), h_feat.dtype())),
            };
            Some(self.memory_update(m_prev, h_feat)?)
        } else {
            None
        };
        let hr = self.reconstruct(h_feat, memory, center_lr)?;
        Ok((hr, memory))
    }
}
