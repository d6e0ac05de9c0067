use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Rcdm,
    RcdmLight,
    Rc2dm,
    RcdmDwtState,
    Rc2dmDwtState,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::RcdmLight,
        Variant::Rc2dmDwtState,
        Variant::Rc2dm,
        Variant::Rcdm,
        Variant::RcdmDwtState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Rcdm => "rcdm",
            Variant::RcdmLight => "rcdm_light",
            Variant::Rc2dm => "rc2dm",
            Variant::RcdmDwtState => "rcdm_dwt_state",
            Variant::Rc2dmDwtState => "rc2dm_dwt_state",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| config_err!("unknown variant '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeformableMode {
    /// 2D deformable convolution applied to each neighbour frame.
    PerFrame2d,
    /// 3D deformable convolution over the frame stack with trilinear
    /// sampling; each tap also gets a temporal offset.
    Trilinear3d,
}

impl DeformableMode {
    pub fn name(self) -> &'static str {
        match self {
            DeformableMode::PerFrame2d => "per_frame_2d",
            DeformableMode::Trilinear3d => "trilinear_3d",
        }
    }

    /// Offset components per kernel tap.
    pub fn offset_dims(self) -> usize {
        match self {
            DeformableMode::PerFrame2d => 2,
            DeformableMode::Trilinear3d => 3,
        }
    }
}

impl FromStr for DeformableMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_frame_2d" => Ok(DeformableMode::PerFrame2d),
            "trilinear_3d" => Ok(DeformableMode::Trilinear3d),
            _ => Err(config_err!("unknown deformable_mode '{s}'")),
        }
    }
}

/// Architecture hyperparameters. [`ModelConfig::variant`] fills the
/// defaults of a family member; individual fields may then be overridden.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    /// N: neighbours on each side of the reference frame.
    pub temporal_radius: usize,
    pub scale: usize,
    /// Image channels c.
    pub in_channels: usize,
    /// Feature width C_f.
    pub base_channels: usize,
    /// Residual 2D blocks in the shared per-frame feature extractor.
    pub feat_blocks: usize,
    pub n_res3d: usize,
    /// Width of each sub-band conv stack in the wavelet branch.
    pub wavelet_channels: usize,
    pub n_convnext: usize,
    pub convnext_kernel: usize,
    pub convnext_expansion: usize,
    /// Kernel extent of the deformable alignment convolution.
    pub deform_kernel: usize,
    pub use_memory: bool,
    pub use_wavelet: bool,
    /// Fuse all frames' features (1×1 conv) and condition offsets on them.
    pub early_fusion: bool,
    /// Process the memory in the wavelet domain before injecting it.
    pub dwt_state: bool,
    pub deformable_mode: DeformableMode,
    pub layer_norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::variant(Variant::Rcdm)
    }
}

impl ModelConfig {
    pub fn variant(variant: Variant) -> Self {
        let base = ModelConfig {
            variant,
            temporal_radius: 2,
            scale: 4,
            in_channels: 3,
            base_channels: 16,
            feat_blocks: 2,
            n_res3d: 2,
            wavelet_channels: 8,
            n_convnext: 2,
            convnext_kernel: 7,
            convnext_expansion: 4,
            deform_kernel: 3,
            use_memory: true,
            use_wavelet: true,
            early_fusion: false,
            dwt_state: false,
            deformable_mode: DeformableMode::PerFrame2d,
            layer_norm_eps: 1e-6,
        };
        match variant {
            Variant::Rcdm => base,
            Variant::RcdmLight => ModelConfig {
                feat_blocks: 1,
                n_res3d: 1,
                wavelet_channels: 4,
                n_convnext: 1,
                ..base
            },
            Variant::Rc2dm => ModelConfig {
                early_fusion: true,
                n_res3d: 1,
                ..base
            },
            Variant::RcdmDwtState => ModelConfig {
                dwt_state: true,
                ..base
            },
            Variant::Rc2dmDwtState => ModelConfig {
                early_fusion: true,
                n_res3d: 1,
                dwt_state: true,
                wavelet_channels: 2,
                ..base
            },
        }
    }

    /// Small configuration used by unit tests and hand-count oracles.
    pub fn unit() -> Self {
        ModelConfig {
            base_channels: 8,
            feat_blocks: 1,
            n_res3d: 1,
            wavelet_channels: 4,
            n_convnext: 1,
            ..Self::default()
        }
    }

    pub fn frames(&self) -> usize {
        2 * self.temporal_radius + 1
    }

    pub fn deform_taps(&self) -> usize {
        self.deform_kernel * self.deform_kernel
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("scale", self.scale),
            ("in_channels", self.in_channels),
            ("base_channels", self.base_channels),
            ("wavelet_channels", self.wavelet_channels),
            ("convnext_expansion", self.convnext_expansion),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(config_err!("{k} must be positive"));
            }
        }
        for (k, v) in [
            ("convnext_kernel", self.convnext_kernel),
            ("deform_kernel", self.deform_kernel),
        ] {
            if v % 2 == 0 {
                return Err(config_err!("{k} must be odd, got {v}"));
            }
        }
        if !(self.layer_norm_eps > 0.0) {
            return Err(config_err!("layer_norm_eps must be > 0"));
        }
        Ok(())
    }

    /// Sets one field from its textual form. Unknown keys are errors that
    /// name the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| config_err!("bad value '{v}' for key '{key}'"))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(config_err!("bad boolean '{v}' for key '{key}'")),
            }
        }
        match key {
            "variant" => {
                // switching variant resets the variant defaults
                *self = ModelConfig::variant(value.parse()?);
            }
            "temporal_radius" => self.temporal_radius = num(key, value)?,
            "scale" => self.scale = num(key, value)?,
            "in_channels" => self.in_channels = num(key, value)?,
            "base_channels" => self.base_channels = num(key, value)?,
            "feat_blocks" => self.feat_blocks = num(key, value)?,
            "n_res3d" => self.n_res3d = num(key, value)?,
            "wavelet_channels" => self.wavelet_channels = num(key, value)?,
            "n_convnext" => self.n_convnext = num(key, value)?,
            "convnext_kernel" => self.convnext_kernel = num(key, value)?,
            "convnext_expansion" => self.convnext_expansion = num(key, value)?,
            "deform_kernel" => self.deform_kernel = num(key, value)?,
            "use_memory" => self.use_memory = flag(key, value)?,
            "use_wavelet" => self.use_wavelet = flag(key, value)?,
            "early_fusion" => self.early_fusion = flag(key, value)?,
            "dwt_state" => self.dwt_state = flag(key, value)?,
            "deformable_mode" => self.deformable_mode = value.parse()?,
            "layer_norm_eps" => self.layer_norm_eps = num(key, value)?,
            _ => return Err(config_err!("unknown key '{key}' in [model]")),
        }
        Ok(())
    }

    /// Every field as `(key, value)` in a stable order, variant first.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("variant", self.variant.name().to_string()),
            ("temporal_radius", self.temporal_radius.to_string()),
            ("scale", self.scale.to_string()),
            ("in_channels", self.in_channels.to_string()),
            ("base_channels", self.base_channels.to_string()),
            ("feat_blocks", self.feat_blocks.to_string()),
            ("n_res3d", self.n_res3d.to_string()),
            ("wavelet_channels", self.wavelet_channels.to_string()),
            ("n_convnext", self.n_convnext.to_string()),
            ("convnext_kernel", self.convnext_kernel.to_string()),
            ("convnext_expansion", self.convnext_expansion.to_string()),
            ("deform_kernel", self.deform_kernel.to_string()),
            ("use_memory", self.use_memory.to_string()),
            ("use_wavelet", self.use_wavelet.to_string()),
            ("early_fusion", self.early_fusion.to_string()),
            ("dwt_state", self.dwt_state.to_string()),
            ("deformable_mode", self.deformable_mode.name().to_string()),
            ("layer_norm_eps", format!("{:e}", self.layer_norm_eps)),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_round_trip() {
        let mut cfg = ModelConfig::variant(Variant::Rc2dmDwtState);
        cfg.base_channels = 5;
        cfg.deformable_mode = DeformableMode::Trilinear3d;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.entries() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ModelConfig::default().set("chanels", "3").unwrap_err();
        assert!(err.to_string().contains("chanels"));
        assert!(ModelConfig::default().set("use_memory", "maybe").is_err());
        assert!("rcdm_heavy".parse::<Variant>().is_err());
    }
}
