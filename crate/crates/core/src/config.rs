//! Run configuration files.
//!
//! Grammar, one item per line:
//!
//! ```text
//! # comment
//! [section]          model | train | degradation
//! key = value
//! ```
//!
//! Blank lines and `#` comments are ignored. Keys must appear under a
//! section; an unknown section or key is an error naming it. Later keys
//! override earlier ones, and `variant` resets every model field to that
//! variant's defaults, so it should come first in `[model]`.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::DegradationParams;
use crate::error::{config_err, io_err, Result};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub degradation: DegradationParams,
}

pub const PRESETS: [&str; 8] = [
    "rcdm",
    "rcdm_light",
    "rc2dm",
    "rcdm_dwt_state",
    "rc2dm_dwt_state",
    "rcdm-paper-scale",
    "tiny-overfit",
    "unit",
];

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        match name {
            "rcdm-paper-scale" => {
                cfg.model = ModelConfig {
                    base_channels: 48,
                    feat_blocks: 1,
                    n_res3d: 2,
                    wavelet_channels: 192,
                    n_convnext: 10,
                    convnext_expansion: 4,
                    ..ModelConfig::variant(Variant::Rcdm)
                };
            }
            "tiny-overfit" => {
                cfg.model = ModelConfig {
                    base_channels: 16,
                    feat_blocks: 1,
                    n_res3d: 1,
                    wavelet_channels: 8,
                    n_convnext: 1,
                    ..ModelConfig::variant(Variant::Rcdm)
                };
                cfg.train.steps = 300;
            }
            "unit" => cfg.model = ModelConfig::unit(),
            _ => {
                cfg.model = ModelConfig::variant(
                    name.parse()
                        .map_err(|_| config_err!("unknown preset '{name}'"))?,
                )
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let at = |e: crate::Error| config_err!("line {}: {}", n + 1, strip(&e));
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !matches!(name, "model" | "train" | "degradation") {
                    return Err(config_err!("line {}: unknown section '[{name}]'", n + 1));
                }
                section = Some(name.to_string());
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err!("line {}: expected 'key = value'", n + 1))?;
            let (k, v) = (k.trim(), v.trim());
            match section.as_deref() {
                Some("model") => cfg.model.set(k, v).map_err(at)?,
                Some("train") => cfg.train.set(k, v).map_err(at)?,
                Some("degradation") => set_degradation(&mut cfg.degradation, k, v).map_err(at)?,
                _ => return Err(config_err!("line {}: key '{k}' outside any section", n + 1)),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| io_err!("cannot read {}: {e}", path.display()))?;
        Self::parse(&text).map_err(|e| config_err!("{}: {}", path.display(), strip(&e)))
    }

    /// Text that [`RunConfig::parse`] maps back to `self`, every field
    /// materialized.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut section = |name: &str, entries: Vec<(&str, String)>| {
            let _ = writeln!(s, "[{name}]");
            for (k, v) in entries {
                let _ = writeln!(s, "{k} = {v}");
            }
            s.push('\n');
        };
        section("model", self.model.entries());
        section("train", self.train.entries());
        section("degradation", degradation_entries(&self.degradation));
        s.pop();
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.degradation.validate()
    }
}

fn strip(e: &crate::Error) -> String {
    match e {
        crate::Error::Config(m)
        | crate::Error::Shape(m)
        | crate::Error::Numeric(m)
        | crate::Error::Io(m) => m.clone(),
    }
}

fn set_degradation(p: &mut DegradationParams, key: &str, value: &str) -> Result<()> {
    let bad = || config_err!("bad value '{value}' for key '{key}'");
    match key {
        "track" => {
            *p = DegradationParams {
                seed: p.seed,
                ..DegradationParams::track(value)?
            }
        }
        "blur_sigma" => p.blur_sigma = value.parse().map_err(|_| bad())?,
        "scale" => p.scale = value.parse().map_err(|_| bad())?,
        "noise_sigma" => p.noise_sigma = value.parse().map_err(|_| bad())?,
        "seed" => p.seed = value.parse().map_err(|_| bad())?,
        _ => return Err(config_err!("unknown key '{key}' in [degradation]")),
    }
    Ok(())
}

fn degradation_entries(p: &DegradationParams) -> Vec<(&'static str, String)> {
    vec![
        ("blur_sigma", p.blur_sigma.to_string()),
        ("scale", p.scale.to_string()),
        ("noise_sigma", p.noise_sigma.to_string()),
        ("seed", p.seed.to_string()),
    ]
}
