use std::collections::BTreeMap;

use super::config::{DeformableMode, ModelConfig};
use crate::autograd::{Gradients, Tape, Var};
use crate::error::{config_err, shape_err, Result};
use crate::nn::ConvSpec;
use crate::rng::RngStream;
use crate::tensor::{DType, Tensor};

/// One learnable layer of the network.
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        name: String,
        spec: ConvSpec,
    },
    /// Layer-norm affine pair `gamma`, `beta` over `channels`.
    Norm {
        name: String,
        channels: usize,
    },
    /// A single scalar parameter.
    Scalar {
        name: String,
    },
}

impl Layer {
    pub fn name(&self) -> &str {
        match self {
            Layer::Conv { name, .. } | Layer::Norm { name, .. } | Layer::Scalar { name } => name,
        }
    }
}

pub const BANDS: [&str; 4] = ["ll", "lh", "hl", "hh"];

/// Every learnable layer of `cfg`, in forward order.
pub fn layout(cfg: &ModelConfig) -> Vec<Layer> {
    let c = cfg.base_channels;
    let mut out = Vec::new();
    let mut conv = |name: String, spec: ConvSpec| out.push(Layer::Conv { name, spec });
    conv(
        "feat.conv_first".into(),
        ConvSpec::new2d(cfg.in_channels, c, 3),
    );
    for i in 0..cfg.feat_blocks {
        conv(format!("feat.block{i}.conv1"), ConvSpec::new2d(c, c, 3));
        conv(format!("feat.block{i}.conv2"), ConvSpec::new2d(c, c, 3));
    }
    if cfg.temporal_radius > 0 {
        if cfg.early_fusion {
            conv(
                "align.context".into(),
                ConvSpec::new2d(cfg.frames() * c, c, 1),
            );
        }
        let k = cfg.deform_kernel;
        conv("align.offset.conv1".into(), ConvSpec::new2d(2 * c, c, 3));
        conv(
            "align.offset.conv2".into(),
            ConvSpec::new2d(c, cfg.deformable_mode.offset_dims() * cfg.deform_taps(), 3),
        );
        let dcn = match cfg.deformable_mode {
            DeformableMode::PerFrame2d => ConvSpec::new2d(c, c, k),
            DeformableMode::Trilinear3d => ConvSpec::new3d(c, c, [1, k, k]),
        };
        conv("align.dcn".into(), dcn);
    }
    for i in 0..cfg.n_res3d {
        conv(
            format!("res3d.block{i}.conv1"),
            ConvSpec::new3d(c, c, [3, 3, 3]),
        );
        conv(
            format!("res3d.block{i}.conv2"),
            ConvSpec::new3d(c, c, [3, 3, 3]),
        );
    }
    if cfg.use_wavelet {
        let cw = cfg.wavelet_channels;
        for band in BANDS {
            conv(format!("wavelet.{band}.conv1"), ConvSpec::new2d(c, cw, 3));
            conv(format!("wavelet.{band}.conv2"), ConvSpec::new2d(cw, cw, 3));
        }
        conv("wavelet.fuse".into(), ConvSpec::new2d(c + 4 * cw, c, 1));
    }
    if cfg.use_memory {
        out.push(Layer::Scalar {
            name: "memory.beta_raw".into(),
        });
        if cfg.dwt_state {
            out.push(Layer::Conv {
                name: "memory.dwt_conv".into(),
                spec: ConvSpec::new2d(4 * c, 4 * c, 3).with_groups(c),
            });
        }
        out.push(Layer::Conv {
            name: "memory.inject".into(),
            spec: ConvSpec::new2d(c, c, 1),
        });
    }
    for i in 0..cfg.n_convnext {
        let e = cfg.convnext_expansion * c;
        out.push(Layer::Conv {
            name: format!("recon.convnext{i}.dw"),
            spec: ConvSpec::depthwise2d(c, cfg.convnext_kernel),
        });
        out.push(Layer::Norm {
            name: format!("recon.convnext{i}.norm"),
            channels: c,
        });
        out.push(Layer::Conv {
            name: format!("recon.convnext{i}.pw1"),
            spec: ConvSpec::new2d(c, e, 1),
        });
        out.push(Layer::Conv {
            name: format!("recon.convnext{i}.pw2"),
            spec: ConvSpec::new2d(e, c, 1),
        });
    }
    out.push(Layer::Conv {
        name: "recon.out".into(),
        spec: ConvSpec::new2d(c, cfg.in_channels * cfg.scale * cfg.scale, 3),
    });
    out
}

/// Named parameter set of one network, keyed by hierarchical path such as
/// `res3d.block0.conv1.weight`.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ModelWeights {
    params: BTreeMap<String, Tensor>,
}

impl ModelWeights {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| config_err!("missing parameter '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| config_err!("missing parameter '{name}'"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn dtype(&self) -> DType {
        self.params
            .values()
            .next()
            .map(Tensor::dtype)
            .unwrap_or(DType::F32)
    }

    pub fn to_dtype(&self, dtype: DType) -> ModelWeights {
        ModelWeights {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.to_dtype(dtype)))
                .collect(),
        }
    }

    pub fn map(&self, f: impl Fn(&str, &Tensor) -> Tensor) -> ModelWeights {
        ModelWeights {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), f(k, v)))
                .collect(),
        }
    }

    /// Records every parameter on `tape`; `trainable` parameters track
    /// gradients.
    pub fn bind<'t>(&self, tape: &'t Tape, trainable: bool) -> Bound<'t> {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v)
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters recorded on a tape.
pub struct Bound<'t> {
    vars: BTreeMap<String, Var<'t>>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| config_err!("missing parameter '{name}'"))
    }

    /// Replaces the variable bound to `name`.
    pub fn set(&mut self, name: &str, var: Var<'t>) -> Result<()> {
        match self.vars.get_mut(name) {
            Some(v) if v.shape() == var.shape() => {
                *v = var;
                Ok(())
            }
            Some(v) => Err(shape_err!(
                "'{name}' is {:?}, got {:?}",
                v.shape(),
                var.shape()
            )),
            None => Err(config_err!("missing parameter '{name}'")),
        }
    }

    pub fn maybe(&self, name: &str) -> Option<Var<'t>> {
        self.vars.get(name).copied()
    }

    /// Gradient of every parameter, zero-filled for unreached ones.
    pub fn gradients(&self, grads: &Gradients) -> BTreeMap<String, Vec<f64>> {
        self.vars
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    grads
                        .raw(*v)
                        .map(<[f64]>::to_vec)
                        .unwrap_or_else(|| vec![0.0; v.numel()]),
                )
            })
            .collect()
    }

    /// Names of parameters that received no gradient.
    pub fn unreached(&self, grads: &Gradients) -> Vec<String> {
        self.vars
            .iter()
            .filter(|(_, v)| grads.raw(**v).is_none())
            .map(|(k, _)| k.clone())
            .collect()
    }
}

/// Fresh weights: conv kernels uniform in `±1/sqrt(fan_in)`, biases zero,
/// norm scales one, norm shifts zero, scalars zero. Each tensor draws from
/// its own stream keyed by its path, so adding layers does not perturb the
/// others.
pub fn build_model(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    cfg.validate()?;
    let root = RngStream::new(seed);
    let dtype = DType::F32;
    let mut w = ModelWeights::new();
    for layer in layout(cfg) {
        match layer {
            Layer::Conv { name, spec } => {
                spec.validate(spec.kernel.len())?;
                let fan_in = (spec.in_channels / spec.groups) * spec.taps();
                let bound = 1.0 / (fan_in as f64).sqrt();
                let key = format!("{name}.weight");
                let mut rng = root.split_named(&key);
                w.insert(
                    key,
                    Tensor::uniform(&spec.weight_shape(), -bound, bound, &mut rng, dtype),
                );
                if spec.bias {
                    w.insert(
                        format!("{name}.bias"),
                        Tensor::zeros(&[spec.out_channels], dtype),
                    );
                }
            }
            Layer::Norm { name, channels } => {
                w.insert(format!("{name}.gamma"), Tensor::ones(&[channels], dtype));
                w.insert(format!("{name}.beta"), Tensor::zeros(&[channels], dtype));
            }
            Layer::Scalar { name } => w.insert(name, Tensor::scalar(0.0, dtype)),
        }
    }
    Ok(w)
}

/// The conv spec implied by a weight of shape `[C_out, C_in/g, k..]` applied
/// to an input with `in_channels` channels.
pub(crate) fn spec_from_weight(w: &[usize], in_channels: usize, bias: bool) -> Result<ConvSpec> {
    if w.len() < 3 || w[1] == 0 || !in_channels.is_multiple_of(w[1]) {
        return Err(shape_err!(
            "weight {:?} does not fit {in_channels} input channels",
            w
        ));
    }
    let kernel = w[2..].to_vec();
    Ok(ConvSpec {
        in_channels,
        out_channels: w[0],
        stride: vec![1; kernel.len()],
        kernel,
        groups: in_channels / w[1],
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::config::Variant;

    #[test]
    fn deterministic_build() {
        let cfg = ModelConfig::unit();
        assert_eq!(build_model(&cfg, 3).unwrap(), build_model(&cfg, 3).unwrap());
        assert_ne!(build_model(&cfg, 3).unwrap(), build_model(&cfg, 4).unwrap());
    }

    #[test]
    fn init_ranges() {
        let w = build_model(&ModelConfig::unit(), 1).unwrap();
        let k = w.get("feat.conv_first.weight").unwrap();
        let bound = 1.0 / ((3 * 9) as f64).sqrt();
        assert!(k.data().iter().all(|v| v.abs() <= bound));
        assert!(k.max_abs() > 0.5 * bound);
        assert_eq!(w.get("feat.conv_first.bias").unwrap().max_abs(), 0.0);
        assert_eq!(w.get("memory.beta_raw").unwrap().item(), 0.0);
        assert_eq!(w.get("recon.convnext0.norm.gamma").unwrap().sum_all(), 8.0);
    }

    #[test]
    fn optional_layers() {
        let mut cfg = ModelConfig::unit();
        cfg.use_memory = false;
        cfg.use_wavelet = false;
        cfg.temporal_radius = 0;
        let w = build_model(&cfg, 0).unwrap();
        assert!(w
            .names()
            .all(|n| n.starts_with("feat.") || n.starts_with("res3d.") || n.starts_with("recon.")));
        let w = build_model(&ModelConfig::variant(Variant::Rc2dmDwtState), 0).unwrap();
        assert!(w.contains("align.context.weight") && w.contains("memory.dwt_conv.weight"));
    }
}
