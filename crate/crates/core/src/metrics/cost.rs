use std::fmt::Write;

use crate::model::{DeformableMode, ModelConfig, ModelWeights};

/// One row of a cost report.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostRow {
    pub layer: String,
    pub params: u64,
    pub flops: u64,
}

/// Per-layer parameter and FLOP counts. One multiply-accumulate counts as
/// 2 FLOPs; FLOPs are per output frame at `input` (h, w).
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub input: Option<(usize, usize)>,
}

impl CostReport {
    fn push(&mut self, layer: impl Into<String>, params: u64, flops: u64) {
        self.rows.push(CostRow {
            layer: layer.into(),
            params,
            flops,
        });
    }

    pub fn total_params(&self) -> u64 {
        self.rows.iter().map(|r| r.params).sum()
    }

    pub fn total_flops(&self) -> u64 {
        self.rows.iter().map(|r| r.flops).sum()
    }

    pub fn params_millions(&self) -> f64 {
        self.total_params() as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.total_flops() as f64 / 1e9
    }

    /// `layer,params,flops` rows and a final `TOTAL` row, preceded by a
    /// `#` comment stating the counting convention.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        match self.input {
            Some((h, w)) => writeln!(
                s,
                "# flops: MAC = 2 FLOPs, per output frame at input {h}x{w}"
            )
            .unwrap(),
            None => writeln!(s, "# flops: MAC = 2 FLOPs").unwrap(),
        }
        s.push_str("layer,params,flops\n");
        for r in &self.rows {
            writeln!(s, "{},{},{}", r.layer, r.params, r.flops).unwrap();
        }
        writeln!(s, "TOTAL,{},{}", self.total_params(), self.total_flops()).unwrap();
        s
    }
}

/// Element counts of every named parameter.
pub fn count_params(weights: &ModelWeights) -> CostReport {
    let mut r = CostReport::default();
    for (name, t) in weights.iter() {
        r.push(name.clone(), t.numel() as u64, 0);
    }
    r
}

/// FLOPs of a dense or grouped convolution over `positions` outputs.
pub fn conv_flops(positions: u64, out_ch: u64, in_per_group: u64, taps: u64) -> u64 {
    2 * positions * out_ch * in_per_group * taps
}

/// Closed-form parameter and FLOP counts of `cfg` for `h × w` inputs.
pub fn count_flops(cfg: &ModelConfig, h: usize, w: usize) -> CostReport {
    let mut r = CostReport {
        rows: Vec::new(),
        input: Some((h, w)),
    };
    let u = |v: usize| v as u64;
    let (c, img, s) = (u(cfg.base_channels), u(cfg.in_channels), u(cfg.scale));
    let t = u(cfg.frames());
    let p = u(h * w);
    let p4 = u((h / 2) * (w / 2));
    let conv = |name: &str,
                r: &mut CostReport,
                cin: u64,
                cout: u64,
                groups: u64,
                taps: u64,
                reps: u64,
                pos: u64| {
        r.push(
            name,
            cout * (cin / groups) * taps + cout,
            reps * conv_flops(pos, cout, cin / groups, taps),
        );
    };

    conv("feat.conv_first", &mut r, img, c, 1, 9, t, p);
    for i in 0..cfg.feat_blocks {
        conv(&format!("feat.block{i}.conv1"), &mut r, c, c, 1, 9, t, p);
        conv(&format!("feat.block{i}.conv2"), &mut r, c, c, 1, 9, t, p);
        // gelu + residual add
        r.push(format!("feat.block{i}.elementwise"), 0, 2 * t * c * p);
    }

    if cfg.temporal_radius > 0 {
        let k = u(cfg.deform_taps());
        let d = u(cfg.deformable_mode.offset_dims());
        if cfg.early_fusion {
            conv("align.context", &mut r, t * c, c, 1, 1, 1, p);
        }
        conv("align.offset.conv1", &mut r, 2 * c, c, 1, 9, t - 1, p);
        r.push("align.offset.elementwise", 0, (t - 1) * c * p);
        conv("align.offset.conv2", &mut r, c, d * k, 1, 9, t - 1, p);
        conv("align.dcn", &mut r, c, c, 1, k, t, p);
        // bilinear sampling: 4 mul + 4 add per tap and position
        let sampling = 2 * k * p * 8;
        let label = match cfg.deformable_mode {
            DeformableMode::PerFrame2d => "align.dcn.sampling",
            DeformableMode::Trilinear3d => "align.dcn.sampling3d",
        };
        r.push(label, 0, t * sampling);
    }

    for i in 0..cfg.n_res3d {
        conv(
            &format!("res3d.block{i}.conv1"),
            &mut r,
            c,
            c,
            1,
            27,
            1,
            t * p,
        );
        conv(
            &format!("res3d.block{i}.conv2"),
            &mut r,
            c,
            c,
            1,
            27,
            1,
            t * p,
        );
        r.push(format!("res3d.block{i}.elementwise"), 0, 2 * c * t * p);
    }
    if cfg.n_res3d > 0 {
        // residual difference, temporal mean, centre add
        r.push("res3d.collapse", 0, 2 * c * t * p + c * p);
    }

    if cfg.use_wavelet {
        let cw = u(cfg.wavelet_channels);
        r.push("wavelet.dwt", 0, 8 * c * p4);
        for band in crate::model::BANDS {
            conv(&format!("wavelet.{band}.conv1"), &mut r, c, cw, 1, 9, 1, p4);
            r.push(format!("wavelet.{band}.elementwise"), 0, cw * p4);
            conv(
                &format!("wavelet.{band}.conv2"),
                &mut r,
                cw,
                cw,
                1,
                9,
                1,
                p4,
            );
        }
        r.push("wavelet.upsample", 0, 4 * cw * p);
        conv("wavelet.fuse", &mut r, c + 4 * cw, c, 1, 1, 1, p);
    }

    if cfg.use_memory {
        r.push("memory.update", 1, 2 * c * p);
        if cfg.dwt_state {
            r.push("memory.dwt", 0, 8 * c * p4);
            conv("memory.dwt_conv", &mut r, 4 * c, 4 * c, c, 9, 1, p4);
            r.push("memory.idwt", 0, 8 * c * p4);
        }
        conv("memory.inject", &mut r, c, c, 1, 1, 1, p);
        r.push("memory.inject.add", 0, c * p);
    }

    let kk = u(cfg.convnext_kernel * cfg.convnext_kernel);
    let e = u(cfg.convnext_expansion) * c;
    for i in 0..cfg.n_convnext {
        conv(&format!("recon.convnext{i}.dw"), &mut r, c, c, c, kk, 1, p);
        r.push(format!("recon.convnext{i}.norm"), 2 * c, c * p);
        conv(&format!("recon.convnext{i}.pw1"), &mut r, c, e, 1, 1, 1, p);
        r.push(format!("recon.convnext{i}.elementwise"), 0, e * p + c * p);
        conv(&format!("recon.convnext{i}.pw2"), &mut r, e, c, 1, 1, 1, p);
    }
    conv("recon.out", &mut r, c, img * s * s, 1, 9, 1, p);
    r.push("recon.pixel_shuffle", 0, 0);
    // bicubic upsample + residual add, one each per output element
    r.push("recon.residual", 0, 2 * img * s * s * p);
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(conv_flops(16, 1, 1, 1), 32);
        let spec = crate::nn::ConvSpec::new2d(8, 16, 3);
        assert_eq!(spec.param_count(), 8 * 16 * 9 + 16);
    }

    #[test]
    fn csv_layout() {
        let mut r = CostReport {
            rows: vec![],
            input: Some((4, 4)),
        };
        r.push("a", 3, 10);
        r.push("b", 4, 0);
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert!(lines[0].starts_with('#') && lines[0].contains("MAC = 2"));
        assert_eq!(
            &lines[1..],
            &["layer,params,flops", "a,3,10", "b,4,0", "TOTAL,7,10"]
        );
    }
}
