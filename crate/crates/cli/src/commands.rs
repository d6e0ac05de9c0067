//! Resolved command plans. Each plan comes either from flags or from a
//! `run.meta`, records itself into `run.meta`, and executes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rcdm_core::config::RunConfig;
use rcdm_core::data::{
    degrade_clip, frame_name, pad_to_multiple, read_clip, synth_clip, write_clip, write_rct,
    DegradationParams, SynthKind, VideoClip, WindowMode,
};
use rcdm_core::metrics::{count_flops, crop_border, psnr, ssim};
use rcdm_core::model::{run_sequence, ModelConfig, Variant};
use rcdm_core::selftest::{self, Fault, Level};
use rcdm_core::train::{
    load_checkpoint, load_model, loss_csv, save_checkpoint, train_loop, TrainClip, TrainState,
};
use rcdm_core::Tensor;

use crate::meta::RunMeta;
use crate::CliError;

pub const TARGETS_FILE: &str = "targets.txt";

fn io(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

pub fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| io(p, e))
}

/// `HxW`, both positive.
pub fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("size '{s}' is not HxW"))?;
    let h: usize = h
        .trim()
        .parse()
        .map_err(|_| format!("bad height in '{s}'"))?;
    let w: usize = w
        .trim()
        .parse()
        .map_err(|_| format!("bad width in '{s}'"))?;
    if h == 0 || w == 0 {
        return Err(format!("size '{s}' must be positive"));
    }
    Ok((h, w))
}

fn meta_dir(out: &Path) -> PathBuf {
    out.parent().map(Path::to_path_buf).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthPlan {
    pub kind: SynthKind,
    pub frames: usize,
    pub size: (usize, usize),
    pub motion: f64,
    pub seed: u64,
    pub out: PathBuf,
}

impl SynthPlan {
    pub fn meta(&self) -> RunMeta {
        RunMeta::new("synth")
            .arg("kind", self.kind.name())
            .arg("frames", self.frames)
            .arg("size", format!("{}x{}", self.size.0, self.size.1))
            .arg("motion", self.motion)
            .arg("seed", self.seed)
            .arg("out", self.out.display())
    }

    pub fn from_meta(m: &RunMeta) -> Result<Self, CliError> {
        Ok(Self {
            kind: m.get("kind")?.parse()?,
            frames: m.parse_arg("frames")?,
            size: parse_size(m.get("size")?).map_err(CliError::Usage)?,
            motion: m.parse_arg("motion")?,
            seed: m.parse_arg("seed")?,
            out: m.get("out")?.into(),
        })
    }

    pub fn run(&self) -> Result<(), CliError> {
        if self.frames == 0 {
            return Err(CliError::Usage("--frames must be at least 1".into()));
        }
        let clip = synth_clip(
            self.kind,
            self.frames,
            3,
            self.size.0,
            self.size.1,
            self.motion,
            self.seed,
        )?;
        write_clip(&clip, &self.out)?;
        self.meta().write(&self.out)?;
        println!(
            "wrote {} frames of {}x{} to {}",
            self.frames,
            self.size.0,
            self.size.1,
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DegradePlan {
    pub input: PathBuf,
    pub params: DegradationParams,
    pub out: PathBuf,
}

impl DegradePlan {
    pub fn meta(&self) -> RunMeta {
        RunMeta::new("degrade")
            .arg("in", self.input.display())
            .arg("scale", self.params.scale)
            .arg("blur_sigma", self.params.blur_sigma)
            .arg("noise_sigma", self.params.noise_sigma)
            .arg("seed", self.params.seed)
            .arg("out", self.out.display())
    }

    pub fn from_meta(m: &RunMeta) -> Result<Self, CliError> {
        Ok(Self {
            input: m.get("in")?.into(),
            params: DegradationParams {
                scale: m.parse_arg("scale")?,
                blur_sigma: m.parse_arg("blur_sigma")?,
                noise_sigma: m.parse_arg("noise_sigma")?,
                seed: m.parse_arg("seed")?,
            },
            out: m.get("out")?.into(),
        })
    }

    pub fn run(&self) -> Result<(), CliError> {
        let hr = read_clip(&self.input)?;
        let lr = degrade_clip(&hr, &self.params)?;
        write_clip(&lr, &self.out)?;
        self.meta().write(&self.out)?;
        let (h, w) = lr.size();
        println!(
            "wrote {} frames of {h}x{w} to {}",
            lr.len(),
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainPlan {
    pub config: RunConfig,
    pub data: Vec<PathBuf>,
    pub out: PathBuf,
    pub resume: bool,
}

impl TrainPlan {
    pub fn meta(&self) -> RunMeta {
        let data: Vec<String> = self.data.iter().map(|p| p.display().to_string()).collect();
        RunMeta::new("train")
            .arg("data", data.join(","))
            .arg("out", self.out.display())
            .arg("resume", self.resume)
            .arg("seed", self.config.train.seed)
            .arg("steps", self.config.train.steps)
            .with_config(&self.config)
    }

    pub fn from_meta(m: &RunMeta) -> Result<Self, CliError> {
        let config = m
            .config
            .clone()
            .ok_or_else(|| CliError::Usage("train run.meta lacks a config".into()))?;
        Ok(Self {
            config,
            data: m.get("data")?.split(',').map(PathBuf::from).collect(),
            out: m.get("out")?.into(),
            resume: m.parse_arg("resume")?,
        })
    }

    /// HR clips from the data directories, degraded with the configured
    /// pipeline.
    fn clips(&self) -> Result<Vec<TrainClip>, CliError> {
        let d = &self.config.degradation;
        if d.scale != self.config.model.scale {
            return Err(CliError::Usage(format!(
                "degradation scale {} differs from model scale {}",
                d.scale, self.config.model.scale
            )));
        }
        self.data
            .iter()
            .map(|dir| {
                let hr = read_clip(dir)?;
                let (h, w) = hr.size();
                if h % (2 * d.scale) != 0 || w % (2 * d.scale) != 0 {
                    return Err(CliError::Usage(format!(
                        "{}: {h}x{w} frames must be multiples of {} for training",
                        dir.display(),
                        2 * d.scale
                    )));
                }
                let lr = degrade_clip(&hr, d)?;
                Ok(TrainClip::new(lr, hr)?)
            })
            .collect()
    }

    pub fn run(&self) -> Result<(), CliError> {
        let clips = self.clips()?;
        let model = &self.config.model;
        let mut state = if self.resume && self.out.join("train.state").exists() {
            let ck = load_checkpoint(&self.out)?;
            if &ck.model != model {
                return Err(CliError::Usage(
                    "checkpoint model config differs from --config".into(),
                ));
            }
            ck.state
        } else {
            TrainState::new(model, self.config.train.seed)?
        };
        let start = state.step;
        let total = self.config.train.steps;
        let every = (total / 10).max(1);
        let trace = train_loop(&mut state, &clips, model, &self.config.train, |s| {
            if s.step % every == 0 || s.step == total {
                eprintln!("step {:>5}/{total}  loss {:.6}", s.step, s.loss);
            }
        })?;
        save_checkpoint(&self.out, model, &state)?;
        let csv_path = self.out.join("loss.csv");
        let csv = if self.resume && start > 0 && csv_path.exists() {
            let prev = fs::read_to_string(&csv_path).map_err(|e| io(&csv_path, e))?;
            let kept: String = prev
                .lines()
                .skip(1)
                .take(start)
                .map(|l| format!("{l}\n"))
                .collect();
            let fresh = loss_csv(&trace);
            format!(
                "step,loss\n{kept}{}",
                fresh.split_once('\n').map_or("", |(_, r)| r)
            )
        } else {
            loss_csv(&trace)
        };
        fs::write(&csv_path, csv).map_err(|e| io(&csv_path, e))?;
        self.meta().write(&self.out)?;
        println!(
            "trained steps {start}..{} into {}",
            state.step,
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferPlan {
    pub ckpt: PathBuf,
    pub input: PathBuf,
    pub mode: WindowMode,
    pub out: PathBuf,
    pub save_rct: bool,
}

impl InferPlan {
    pub fn meta(&self) -> RunMeta {
        RunMeta::new("infer")
            .arg("ckpt", self.ckpt.display())
            .arg("in", self.input.display())
            .arg("mode", self.mode.name())
            .arg("out", self.out.display())
            .arg("save_rct", self.save_rct)
    }

    pub fn from_meta(m: &RunMeta) -> Result<Self, CliError> {
        Ok(Self {
            ckpt: m.get("ckpt")?.into(),
            input: m.get("in")?.into(),
            mode: m.get("mode")?.parse()?,
            out: m.get("out")?.into(),
            save_rct: m.parse_arg("save_rct")?,
        })
    }

    pub fn run(&self) -> Result<(), CliError> {
        let (cfg, weights) = load_model(&self.ckpt)?;
        let lr = read_clip(&self.input)?;
        if lr.channels() != cfg.in_channels {
            return Err(CliError::Usage(format!(
                "clip has {} channels, model expects {}",
                lr.channels(),
                cfg.in_channels
            )));
        }
        let (h, w) = lr.size();
        // the wavelet branch needs even extents; pad and crop back
        let frames = pad_to_multiple(&lr.frames, 2)?;
        let s = frames.shape().to_vec();
        let frames = frames.reshape(&[s[0], 1, s[1], s[2], s[3]])?;
        let outs = run_sequence(&frames, &weights, &cfg, self.mode)?;
        let (oh, ow) = (cfg.scale * h, cfg.scale * w);
        let mut images = Vec::with_capacity(outs.len());
        let mut targets = String::new();
        for hr in &outs {
            let img = hr.image.select(0, 0)?.slice(1, 0, oh)?.slice(2, 0, ow)?;
            images.push(img);
            let _ = writeln!(targets, "{}", hr.target);
        }
        let clip = VideoClip::from_frames(&images, lr.frame_rate)?;
        write_clip(&clip, &self.out)?;
        if self.save_rct {
            for (i, img) in images.iter().enumerate() {
                write_rct(img, self.out.join(frame_name(i).replace(".ppm", ".rct")))?;
            }
        }
        let tp = self.out.join(TARGETS_FILE);
        fs::write(&tp, targets).map_err(|e| io(&tp, e))?;
        self.meta().write(&self.out)?;
        println!(
            "wrote {} frames of {oh}x{ow} to {}",
            images.len(),
            self.out.display()
        );
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Metric {
    Ssim,
    Psnr,
}

impl Metric {
    fn name(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Psnr => "psnr",
        }
    }

    pub fn parse_list(s: &str) -> Result<Vec<Metric>, String> {
        let list: Result<Vec<Metric>, String> = s
            .split(',')
            .map(|m| match m.trim() {
                "ssim" => Ok(Metric::Ssim),
                "psnr" => Ok(Metric::Psnr),
                other => Err(format!("unknown metric '{other}'")),
            })
            .collect();
        let list = list?;
        if list.is_empty() {
            return Err("no metrics requested".into());
        }
        Ok(list)
    }
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        "inf".into()
    } else {
        format!("{v:.6}")
    }
}

/// Reference frame index of each frame in a test directory: from
/// `targets.txt` when present, else the identity.
fn targets(dir: &Path, n: usize) -> Result<Vec<usize>, CliError> {
    let p = dir.join(TARGETS_FILE);
    if !p.exists() {
        return Ok((0..n).collect());
    }
    let text = fs::read_to_string(&p).map_err(|e| io(&p, e))?;
    let t: Result<Vec<usize>, _> = text.split_whitespace().map(str::parse).collect();
    let t = t.map_err(|_| CliError::Usage(format!("{}: bad frame index", p.display())))?;
    if t.len() != n {
        return Err(CliError::Usage(format!(
            "{}: {} indices for {n} frames",
            p.display(),
            t.len()
        )));
    }
    Ok(t)
}

fn paired(
    reference: &VideoClip,
    test_dir: &Path,
    test: &VideoClip,
) -> Result<Vec<(usize, Tensor, Tensor)>, CliError> {
    let idx = targets(test_dir, test.len())?;
    if idx.len() > reference.len() && !test_dir.join(TARGETS_FILE).exists() {
        return Err(CliError::Usage(format!(
            "test clip has {} frames, reference {}",
            test.len(),
            reference.len()
        )));
    }
    idx.into_iter()
        .enumerate()
        .map(|(i, r)| {
            if r >= reference.len() {
                return Err(CliError::Usage(format!(
                    "frame index {r} beyond reference clip of {}",
                    reference.len()
                )));
            }
            let (a, b) = (reference.frame(r)?, test.frame(i)?);
            if a.shape() != b.shape() {
                return Err(CliError::Usage(format!(
                    "frame {r}: size {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
            Ok((r, a, b))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalPlan {
    pub reference: PathBuf,
    pub test: PathBuf,
    pub metrics: Vec<Metric>,
    pub crop_border: usize,
    pub out: PathBuf,
    /// Output of the model without the ablated component; switches the CSV
    /// to per-frame SSIM ratios.
    pub ablation: Option<PathBuf>,
}

impl EvalPlan {
    pub fn meta(&self) -> RunMeta {
        let metrics: Vec<&str> = self.metrics.iter().map(|m| m.name()).collect();
        let mut m = RunMeta::new("eval")
            .arg("ref", self.reference.display())
            .arg("test", self.test.display())
            .arg("metrics", metrics.join(","))
            .arg("crop_border", self.crop_border)
            .arg("out", self.out.display());
        if let Some(a) = &self.ablation {
            m = m.arg("ablation", a.display());
        }
        m
    }

    pub fn from_meta(m: &RunMeta) -> Result<Self, CliError> {
        Ok(Self {
            reference: m.get("ref")?.into(),
            test: m.get("test")?.into(),
            metrics: Metric::parse_list(m.get("metrics")?).map_err(CliError::Usage)?,
            crop_border: m.parse_arg("crop_border")?,
            out: m.get("out")?.into(),
            ablation: m.get("ablation").ok().map(PathBuf::from),
        })
    }

    fn score(&self, metric: Metric, a: &Tensor, b: &Tensor) -> Result<f64, CliError> {
        let a = crop_border(a, self.crop_border)?;
        let b = crop_border(b, self.crop_border)?;
        Ok(match metric {
            Metric::Ssim => ssim(&a, &b)?,
            Metric::Psnr => psnr(&a, &b, 1.0)?,
        })
    }

    pub fn run(&self) -> Result<(), CliError> {
        let reference = read_clip(&self.reference)?;
        let test = read_clip(&self.test)?;
        let pairs = paired(&reference, &self.test, &test)?;
        let mut csv = String::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        if let Some(base_dir) = &self.ablation {
            let base = read_clip(base_dir)?;
            let base_pairs = paired(&reference, base_dir, &base)?;
            if base_pairs.iter().map(|p| p.0).ne(pairs.iter().map(|p| p.0)) {
                return Err(CliError::Usage(
                    "ablation clip covers different frames".into(),
                ));
            }
            csv.push_str("frame,ssim_full,ssim_baseline,ssim_ratio\n");
            for ((r, hr, full), (_, _, abl)) in pairs.iter().zip(&base_pairs) {
                let f = self.score(Metric::Ssim, hr, full)?;
                let b = self.score(Metric::Ssim, hr, abl)?;
                rows.push(vec![f, b, f / b]);
                let _ = writeln!(
                    csv,
                    "{r},{},{},{}",
                    fmt_value(f),
                    fmt_value(b),
                    fmt_value(f / b)
                );
            }
        } else {
            let names: Vec<&str> = self.metrics.iter().map(|m| m.name()).collect();
            let _ = writeln!(csv, "frame,{}", names.join(","));
            for (r, hr, out) in &pairs {
                let vals: Vec<f64> = self
                    .metrics
                    .iter()
                    .map(|&m| self.score(m, hr, out))
                    .collect::<Result<_, _>>()?;
                let cells: Vec<String> = vals.iter().map(|&v| fmt_value(v)).collect();
                let _ = writeln!(csv, "{r},{}", cells.join(","));
                rows.push(vals);
            }
        }
        let n = rows.len() as f64;
        let means: Vec<String> = (0..rows[0].len())
            .map(|j| fmt_value(rows.iter().map(|r| r[j]).sum::<f64>() / n))
            .collect();
        let _ = writeln!(csv, "mean,{}", means.join(","));
        if let Some(dir) = self.out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
        }
        fs::write(&self.out, &csv).map_err(|e| io(&self.out, e))?;
        self.meta().write(&meta_dir(&self.out))?;
        print!(
            "{}",
            csv.lines()
                .last()
                .map(|l| format!("{l}\n"))
                .unwrap_or_default()
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalyzePlan {
    pub config: RunConfig,
    pub input_size: (usize, usize),
    pub out: Option<PathBuf>,
    pub family: bool,
}

impl AnalyzePlan {
    pub fn meta(&self) -> RunMeta {
        let mut m = RunMeta::new("analyze")
            .arg(
                "input_size",
                format!("{}x{}", self.input_size.0, self.input_size.1),
            )
            .arg("family", self.family);
        if let Some(o) = &self.out {
            m = m.arg("out", o.display());
        }
        m.with_config(&self.config)
    }

    pub fn from_meta(m: &RunMeta) -> Result<Self, CliError> {
        Ok(Self {
            config: m
                .config
                .clone()
                .ok_or_else(|| CliError::Usage("analyze run.meta lacks a config".into()))?,
            input_size: parse_size(m.get("input_size")?).map_err(CliError::Usage)?,
            out: m.get("out").ok().map(PathBuf::from),
            family: m.parse_arg("family")?,
        })
    }

    pub fn run(&self) -> Result<(), CliError> {
        let (h, w) = self.input_size;
        let report = count_flops(&self.config.model, h, w);
        if let Some(out) = &self.out {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
            }
            fs::write(out, report.to_csv()).map_err(|e| io(out, e))?;
            self.meta().write(&meta_dir(out))?;
        }
        println!(
            "{}: {:.4} M params, {:.2} GFLOPs per frame at {h}x{w}",
            self.config.model.variant,
            report.params_millions(),
            report.gflops()
        );
        if self.family {
            println!(
                "{:<18} {:>12} {:>10} {:>10}",
                "variant", "params", "M", "GFLOPs"
            );
            for v in Variant::ALL {
                let r = count_flops(&ModelConfig::variant(v), h, w);
                println!(
                    "{:<18} {:>12} {:>10.4} {:>10.3}",
                    v.name(),
                    r.total_params(),
                    r.params_millions(),
                    r.gflops()
                );
            }
        }
        Ok(())
    }
}

pub fn run_selftest(level: Level, fault: Option<Fault>) -> Result<(), CliError> {
    let checks = selftest::run(level, fault);
    for c in &checks {
        println!(
            "{} {:<36} {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    if failed.is_empty() {
        println!("{} checks passed", checks.len());
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed: {}", failed.join(", "))))
    }
}
