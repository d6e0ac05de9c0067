use rcdm_core::data::{
    bicubic_resample, make_windows, synth_clip, SynthKind, VideoClip, VideoWindow, WindowMode,
};
use rcdm_core::model::{
    align_block, align_block_with, build_model, memory_update, rcdm_forward, reconstruct,
    res3d_block, run_sequence, run_sequence_with_memory, wavelet_branch, DeformableMode,
    MemoryState, ModelConfig, ModelWeights, Net,
};
use rcdm_core::rng::RngStream;
use rcdm_core::{grad_check_coords, DType, Result, Tape, Tensor, Var};

fn rand(shape: &[usize], seed: u64, dtype: DType) -> Tensor {
    Tensor::uniform(shape, 0.0, 1.0, &mut RngStream::new(seed), dtype)
}

fn window(n: usize, b: usize, c: usize, h: usize, w: usize, seed: u64) -> VideoWindow {
    VideoWindow::new(rand(&[2 * n + 1, b, c, h, w], seed, DType::F32), n, n).unwrap()
}

fn zero_layers(w: &ModelWeights, prefix: &str) -> ModelWeights {
    w.map(|k, t| {
        if k.starts_with(prefix) {
            Tensor::zeros(t.shape(), t.dtype())
        } else {
            t.clone()
        }
    })
}

#[test]
fn eq2_shape_contract_over_chained_steps() {
    let cfg = ModelConfig::unit();
    let w = build_model(&cfg, 1).unwrap();
    let mut m = MemoryState::initial();
    for step in 0..10 {
        let win = window(2, 1, 3, 16, 16, step);
        let (hr, next) = rcdm_forward(&win, &m, &w, &cfg).unwrap();
        assert_eq!(hr.image.shape(), &[1, 3, 64, 64]);
        assert_eq!(next.m.len(), 1);
        assert_eq!(next.m[0].shape(), &[cfg.base_channels, 16, 16]);
        m = next;
    }
}

#[test]
fn batched_streams_are_independent() {
    let cfg = ModelConfig::unit();
    let w = build_model(&cfg, 2).unwrap();
    let win = window(2, 2, 3, 8, 8, 3);
    let (hr, m) = rcdm_forward(&win, &MemoryState::initial(), &w, &cfg).unwrap();
    assert_eq!(hr.image.shape(), &[2, 3, 32, 32]);
    assert_eq!(m.m.len(), 2);
    let single = VideoWindow::new(win.frames.slice(1, 1, 2).unwrap(), 2, 2).unwrap();
    let (hr1, m1) = rcdm_forward(&single, &MemoryState::initial(), &w, &cfg).unwrap();
    assert_eq!(
        hr.image.select(0, 1).unwrap(),
        hr1.image.select(0, 0).unwrap()
    );
    assert_eq!(m.m[1], m1.m[0]);
}

#[test]
fn deterministic_inference() {
    let cfg = ModelConfig::unit();
    let w = build_model(&cfg, 4).unwrap();
    let win = window(2, 1, 3, 8, 8, 5);
    let a = rcdm_forward(&win, &MemoryState::initial(), &w, &cfg).unwrap();
    let b = rcdm_forward(&win, &MemoryState::initial(), &w, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn degenerate_depths_run() {
    let mut cfg = ModelConfig::unit();
    cfg.n_convnext = 0;
    cfg.n_res3d = 0;
    cfg.feat_blocks = 0;
    let w = build_model(&cfg, 0).unwrap();
    let (hr, _) =
        rcdm_forward(&window(2, 1, 3, 8, 8, 1), &MemoryState::initial(), &w, &cfg).unwrap();
    assert_eq!(hr.image.shape(), &[1, 3, 32, 32]);

    let mut cfg = ModelConfig::unit();
    cfg.temporal_radius = 0;
    let w = build_model(&cfg, 0).unwrap();
    assert!(!w.names().any(|n| n.starts_with("align.")));
    let win = window(0, 1, 3, 8, 8, 2);
    let aligned = align_block(&win, &w, &cfg).unwrap();
    assert_eq!(aligned.shape(), &[1, 1, 8, 8, 8]);
    let (hr, _) = rcdm_forward(&win, &MemoryState::initial(), &w, &cfg).unwrap();
    assert_eq!(hr.image.shape(), &[1, 3, 32, 32]);
}

#[test]
fn alignment_of_identical_frames_under_zero_offsets() {
    for mode in [DeformableMode::PerFrame2d, DeformableMode::Trilinear3d] {
        let mut cfg = ModelConfig::unit();
        cfg.deformable_mode = mode;
        let w = build_model(&cfg, 7).unwrap();
        let frame = rand(&[1, 1, 3, 10, 12], 8, DType::F32);
        let frames = Tensor::concat(&[&frame; 5], 0).unwrap();
        let win = VideoWindow::new(frames, 2, 2).unwrap();
        let out = align_block_with(&win, &w, &cfg, true).unwrap();
        assert_eq!(out.shape(), &[5, 1, 8, 10, 12]);
        let center = out.select(0, 2).unwrap();
        for t in 0..5 {
            assert_eq!(out.select(0, t).unwrap(), center, "{mode:?} frame {t}");
        }
        // predicted offsets keep the spatial extents
        assert_eq!(
            align_block(&win, &w, &cfg).unwrap().shape(),
            &[5, 1, 8, 10, 12]
        );
    }
}

#[test]
fn trilinear_mode_reduces_to_per_frame_with_zero_offsets() {
    let cfg2 = ModelConfig::unit();
    let mut cfg3 = cfg2.clone();
    cfg3.deformable_mode = DeformableMode::Trilinear3d;
    let w2 = build_model(&cfg2, 9).unwrap();
    let mut w3 = build_model(&cfg3, 9).unwrap();
    let k = w2.get("align.dcn.weight").unwrap();
    let s = k.shape().to_vec();
    w3.insert(
        "align.dcn.weight",
        k.reshape(&[s[0], s[1], 1, s[2], s[3]]).unwrap(),
    );
    let win = window(2, 1, 3, 8, 8, 10);
    let a = align_block_with(&win, &w2, &cfg2, true).unwrap();
    let b = align_block_with(&win, &w3, &cfg3, true).unwrap();
    assert!(a.max_abs_diff(&b).unwrap() < 1e-6);
}

#[test]
fn res3d_zero_branch_is_center() {
    let cfg = ModelConfig::unit();
    let w = zero_layers(&build_model(&cfg, 1).unwrap(), "res3d.");
    let feats = rand(&[5, 2, 8, 6, 6], 3, DType::F32);
    let out = res3d_block(&feats, 2, &w, &cfg).unwrap();
    assert_eq!(out.shape(), &[2, 8, 6, 6]);
    assert_eq!(out, feats.select(0, 2).unwrap());
    let w = build_model(&cfg, 1).unwrap();
    assert_ne!(
        res3d_block(&feats, 2, &w, &cfg).unwrap(),
        feats.select(0, 2).unwrap()
    );
}

#[test]
fn wavelet_branch_cases() {
    let mut cfg = ModelConfig::unit();
    let x = rand(&[1, 8, 6, 6], 4, DType::F32);
    let w = build_model(&cfg, 1).unwrap();
    assert_eq!(wavelet_branch(&x, &w, &cfg).unwrap().shape(), &[1, 8, 6, 6]);
    // zero on the sub-band inputs, identity on the skip
    let c = cfg.base_channels;
    let cin = c + 4 * cfg.wavelet_channels;
    let mut fuse = vec![0.0; c * cin];
    for i in 0..c {
        fuse[i * cin + i] = 1.0;
    }
    let mut w2 = w.clone();
    w2.insert(
        "wavelet.fuse.weight",
        Tensor::new(&[c, cin, 1, 1], fuse, DType::F32).unwrap(),
    );
    assert_eq!(wavelet_branch(&x, &w2, &cfg).unwrap(), x);
    cfg.use_wavelet = false;
    let w3 = build_model(&cfg, 1).unwrap();
    assert_eq!(wavelet_branch(&x, &w3, &cfg).unwrap(), x);
    let odd = rand(&[1, 8, 5, 6], 4, DType::F32);
    cfg.use_wavelet = true;
    assert!(matches!(
        wavelet_branch(&odd, &w, &cfg),
        Err(rcdm_core::Error::Shape(_))
    ));
}

#[test]
fn memory_update_closed_forms() {
    let h = rand(&[1, 4, 3, 3], 5, DType::F64);
    let zero = MemoryState::zeros(1, &[4, 3, 3], DType::F64);
    for beta_raw in [-3.0, 0.0, 2.0] {
        assert_eq!(
            memory_update(&zero, &h, beta_raw).unwrap().m[0],
            h.select(0, 0).unwrap()
        );
    }
    let prev = MemoryState {
        m: vec![rand(&[4, 3, 3], 6, DType::F64)],
    };
    let m = memory_update(&prev, &h, -60.0).unwrap();
    assert!(m.m[0].max_abs_diff(&h.select(0, 0).unwrap()).unwrap() < 1e-20);

    // beta = 0.5, constant features: M_4 = 1.875 H
    let hc = Tensor::full(&[1, 2, 2, 2], 0.8, DType::F64);
    let mut state = MemoryState::initial();
    for _ in 0..4 {
        state = memory_update(&state, &hc, 0.0).unwrap();
    }
    assert!(state.m[0]
        .data()
        .iter()
        .all(|v| (v / 0.8 - 1.875).abs() < 1e-12));
}

#[test]
fn memory_matches_geometric_sum_for_recorded_features() {
    let beta_raw = 0.3f64;
    let beta = 1.0 / (1.0 + (-beta_raw).exp());
    let feats: Vec<Tensor> = (0..32)
        .map(|t| rand(&[1, 2, 2, 2], 100 + t, DType::F64))
        .collect();
    let mut state = MemoryState::initial();
    for t in 0..32 {
        state = memory_update(&state, &feats[t], beta_raw).unwrap();
        let mut closed = vec![0.0; 8];
        for (k, f) in feats.iter().enumerate().take(t + 1) {
            let wgt = beta.powi((t - k) as i32);
            for (c, v) in closed.iter_mut().zip(f.data()) {
                *c += wgt * v;
            }
        }
        let got = state.m[0].data();
        assert!(got.iter().zip(&closed).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn zero_network_is_bicubic() {
    let cfg = ModelConfig::unit();
    let w = build_model(&cfg, 2)
        .unwrap()
        .map(|_, t| Tensor::zeros(t.shape(), t.dtype()));
    let win = window(2, 1, 3, 8, 10, 11);
    let (hr, _) = rcdm_forward(&win, &MemoryState::initial(), &w, &cfg).unwrap();
    let center = win.frames.select(0, 2).unwrap().select(0, 0).unwrap();
    let bic = bicubic_resample(&center, 32, 40).unwrap();
    assert!(hr.image.select(0, 0).unwrap().max_abs_diff(&bic).unwrap() < 1e-6);

    let fused = rand(&[1, 8, 8, 10], 1, DType::F32);
    let rec = reconstruct(
        &fused,
        &MemoryState::initial(),
        &center.reshape(&[1, 3, 8, 10]).unwrap(),
        &w,
        &cfg,
    )
    .unwrap();
    assert_eq!(rec.image.shape(), &[1, 3, 32, 40]);
    assert!(rec.image.select(0, 0).unwrap().max_abs_diff(&bic).unwrap() < 1e-6);
}

#[test]
fn memory_ablation_equivalence() {
    let on = ModelConfig::unit();
    let mut off = on.clone();
    off.use_memory = false;
    let w_off = build_model(&off, 3).unwrap();
    let mut w_on = build_model(&on, 3).unwrap();
    for (k, v) in w_off.iter() {
        w_on.insert(k.clone(), v.clone());
    }
    w_on.insert("memory.beta_raw", Tensor::scalar(-40.0, DType::F32));
    let w_on = zero_layers(&w_on, "memory.inject");
    let frames = rand(&[7, 1, 3, 8, 8], 12, DType::F32);
    let a = run_sequence(&frames, &w_on, &on, WindowMode::Center).unwrap();
    let b = run_sequence(&frames, &w_off, &off, WindowMode::Center).unwrap();
    assert_eq!(a, b);
}

#[test]
fn run_sequence_windows_and_composition() {
    let cfg = ModelConfig::unit();
    let w = build_model(&cfg, 5).unwrap();
    let frames = rand(&[5, 1, 3, 8, 8], 13, DType::F32);
    let one = run_sequence(&frames, &w, &cfg, WindowMode::Center).unwrap();
    assert_eq!(one.len(), 1);
    assert_eq!(one[0].target, 2);
    assert!(run_sequence(
        &frames.slice(0, 0, 4).unwrap(),
        &w,
        &cfg,
        WindowMode::Center
    )
    .is_err());

    let frames = rand(&[8, 1, 3, 8, 8], 14, DType::F32);
    let trace = run_sequence_with_memory(&frames, &w, &cfg, WindowMode::Causal).unwrap();
    assert_eq!(trace.len(), 4);
    let clip = VideoClip::new(frames.reshape(&[8, 3, 8, 8]).unwrap(), 1.0).unwrap();
    let mut m = MemoryState::initial();
    for (k, win) in make_windows(&clip, 2, WindowMode::Causal)
        .unwrap()
        .iter()
        .enumerate()
    {
        let (hr, next) = rcdm_forward(win, &m, &w, &cfg).unwrap();
        assert_eq!(hr, trace[k].0);
        assert_eq!(next, trace[k].1);
        assert_eq!(hr.target, k + 4);
        m = next;
    }
}

#[test]
fn static_scene_reaches_memory_fixed_point() {
    let cfg = ModelConfig::unit();
    let w = build_model(&cfg, 6).unwrap().to_dtype(DType::F64);
    let clip = synth_clip(SynthKind::Static, 24, 3, 8, 8, 0.0, 3).unwrap();
    let frames = clip.frames.reshape(&[24, 1, 3, 8, 8]).unwrap();
    let trace = run_sequence_with_memory(&frames, &w, &cfg, WindowMode::Center).unwrap();
    let beta = MemoryState::beta(&w).unwrap();
    // step 0 memory equals the per-step features H; fixed point H / (1 - beta)
    let h = &trace[0].1.m[0];
    let fixed = h.scalar_mul(1.0 / (1.0 - beta));
    let mut converged_at = None;
    for t in 1..trace.len() {
        let d = trace[t].1.m[0].sub(&trace[t - 1].1.m[0]).unwrap().max_abs();
        if d < 1e-4 && converged_at.is_none() {
            converged_at = Some(t);
        }
    }
    assert!(converged_at.unwrap() <= 20);
    assert!(trace.last().unwrap().1.m[0].max_abs_diff(&fixed).unwrap() < 1e-4);
    let last = &trace[trace.len() - 1].0.image;
    let prev = &trace[trace.len() - 2].0.image;
    assert!(last.max_abs_diff(prev).unwrap() < 1e-4);
}

#[test]
fn every_parameter_receives_gradient() {
    for cfg in [
        ModelConfig::unit(),
        ModelConfig {
            early_fusion: true,
            dwt_state: true,
            ..ModelConfig::unit()
        },
        ModelConfig {
            deformable_mode: DeformableMode::Trilinear3d,
            ..ModelConfig::unit()
        },
    ] {
        let w = build_model(&cfg, 8).unwrap();
        let tape = Tape::new();
        let bound = w.bind(&tape, true);
        let net = Net::new(&cfg, &bound, &tape);
        let frames = tape.constant(rand(&[5, 3, 8, 8], 15, DType::F32));
        let (_, m1) = net.stream(frames, 2, None).unwrap();
        let (hr, _) = net.stream(frames, 2, m1).unwrap();
        let grads = tape.backward(hr.sum_all()).unwrap();
        assert!(
            bound.unreached(&grads).is_empty(),
            "{:?}",
            bound.unreached(&grads)
        );
    }
}

fn tiny() -> ModelConfig {
    ModelConfig {
        temporal_radius: 1,
        base_channels: 4,
        feat_blocks: 1,
        n_res3d: 1,
        wavelet_channels: 2,
        n_convnext: 1,
        scale: 2,
        ..ModelConfig::default()
    }
}

fn coords(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let mut rng = RngStream::new(seed);
    (0..count.min(n)).map(|_| rng.below(n)).collect()
}

/// Two chained steps so gradients also flow through the memory.
fn two_step_loss<'t>(
    tape: &'t Tape,
    cfg: &ModelConfig,
    w: &ModelWeights,
    over: Option<(&str, Var<'t>)>,
    frames: Var<'t>,
    probe: &Tensor,
) -> Result<Var<'t>> {
    let mut bound = w.bind(tape, false);
    if let Some((name, v)) = over {
        bound.set(name, v)?;
    }
    let net = Net::new(cfg, &bound, tape);
    let (_, m1) = net.stream(frames, 1, None)?;
    let (hr, _) = net.stream(frames, 1, m1)?;
    Ok(hr.mul(tape.constant(probe.clone()))?.sum_all())
}

#[test]
fn whole_model_gradient_check() {
    let cfg = tiny();
    let w = build_model(&cfg, 21).unwrap().to_dtype(DType::F64);
    let w = w.map(|k, t| {
        if k == "align.offset.conv2.bias" {
            // sample mid-cell, away from the bilinear kinks on integer lines
            Tensor::uniform(t.shape(), 0.3, 0.7, &mut RngStream::new(7), DType::F64)
        } else if k.ends_with(".bias") || k.ends_with(".beta") || k == "memory.beta_raw" {
            Tensor::uniform(
                t.shape(),
                -0.2,
                0.2,
                &mut RngStream::new(k.len() as u64),
                DType::F64,
            )
        } else {
            t.clone()
        }
    });
    let frames = rand(&[3, 3, 8, 8], 22, DType::F64);
    let probe = rand(&[3, 16, 16], 23, DType::F64);
    let e = grad_check_coords(
        |t, v| two_step_loss(t, &cfg, &w, None, v, &probe),
        &frames,
        1e-4,
        &coords(frames.numel(), 40, 1),
    )
    .unwrap();
    assert!(e < 1e-4, "frames: {e}");
    for (i, name) in w.names().enumerate() {
        let p = w.get(name).unwrap();
        let e = grad_check_coords(
            |t, v| {
                let frames = t.constant(frames.clone());
                two_step_loss(t, &cfg, &w, Some((name, v)), frames, &probe)
            },
            p,
            1e-4,
            &coords(p.numel(), 4, i as u64),
        )
        .unwrap();
        assert!(e < 1e-4, "{name}: {e}");
    }
}
