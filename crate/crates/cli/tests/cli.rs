use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rcdm_core::config::RunConfig;
use rcdm_core::model::build_model;
use rcdm_core::train::{load_model, load_weights, save_model};
use rcdm_core::Tensor;

fn rcdm(args: &[&str]) -> Output {
    rcdm_env(args, &[])
}

fn rcdm_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rcdm"));
    cmd.args(args)
        .env_remove("RCDM_SELFTEST_FAULT")
        .env_remove("RCDM_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = rcdm(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn frames(dir: &Path) -> Vec<Vec<u8>> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
        .collect();
    names.sort();
    names.iter().map(|n| fs::read(n).unwrap()).collect()
}

#[test]
fn synth_static_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(&[
        "synth",
        "--kind",
        "static",
        "--frames",
        "5",
        "--size",
        "12x10",
        "--seed",
        "7",
        "--out",
        p(&a),
    ]);
    let f = frames(&a);
    assert_eq!(f.len(), 5);
    assert!(f.iter().all(|x| x == &f[0]));
    ok(&[
        "synth",
        "--kind",
        "static",
        "--frames",
        "5",
        "--size",
        "12x10",
        "--seed",
        "7",
        "--out",
        p(&b),
    ]);
    assert_eq!(frames(&b), f);
    assert_eq!(
        fs::read(a.join("clip.meta")).unwrap(),
        fs::read(b.join("clip.meta")).unwrap()
    );
    assert_eq!(code(&rcdm(&["synth", "--frames", "0", "--out", p(&a)])), 2);
    assert_eq!(
        code(&rcdm(&["synth", "--size", "12by10", "--out", p(&a)])),
        2
    );
}

#[test]
fn degrade_shapes_tracks_and_errors() {
    let d = tempfile::tempdir().unwrap();
    let hr = d.path().join("hr");
    ok(&["synth", "--frames", "3", "--size", "64x64", "--out", p(&hr)]);
    let (bi, explicit, id) = (
        d.path().join("bi"),
        d.path().join("ex"),
        d.path().join("id"),
    );
    ok(&["degrade", "--in", p(&hr), "--track", "bi", "--out", p(&bi)]);
    ok(&[
        "degrade",
        "--in",
        p(&hr),
        "--blur-sigma",
        "0",
        "--scale",
        "4",
        "--noise-sigma",
        "0",
        "--out",
        p(&explicit),
    ]);
    assert_eq!(frames(&bi), frames(&explicit));
    assert!(fs::read_to_string(bi.join("clip.meta"))
        .unwrap()
        .contains("H=16\nW=16"));
    ok(&[
        "degrade",
        "--in",
        p(&hr),
        "--scale",
        "1",
        "--blur-sigma",
        "0",
        "--noise-sigma",
        "0",
        "--out",
        p(&id),
    ]);
    assert_eq!(frames(&id), frames(&hr));
    let missing = rcdm(&[
        "degrade",
        "--in",
        p(d.path()),
        "--out",
        p(&d.path().join("x")),
    ]);
    assert_eq!(code(&missing), 2);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("clip.meta"));
}

#[test]
fn train_zero_steps_bad_key_and_determinism() {
    let d = tempfile::tempdir().unwrap();
    let hr = d.path().join("hr");
    ok(&["synth", "--frames", "5", "--size", "32x32", "--out", p(&hr)]);
    let ck = d.path().join("ck0");
    ok(&[
        "train",
        "--preset",
        "unit",
        "--data",
        p(&hr),
        "--steps",
        "0",
        "--seed",
        "3",
        "--out",
        p(&ck),
    ]);
    let fresh = build_model(&RunConfig::preset("unit").unwrap().model, 3).unwrap();
    assert_eq!(load_weights(&ck).unwrap(), fresh);
    assert_eq!(
        fs::read_to_string(ck.join("loss.csv")).unwrap(),
        "step,loss\n"
    );

    let (a, b) = (d.path().join("a"), d.path().join("b"));
    for out in [&a, &b] {
        ok(&[
            "train",
            "--preset",
            "unit",
            "--data",
            p(&hr),
            "--steps",
            "3",
            "--out",
            p(out),
        ]);
    }
    let csv = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert_eq!(csv, fs::read_to_string(b.join("loss.csv")).unwrap());
    assert_eq!(csv.lines().count(), 4);

    let cfg = d.path().join("bad.cfg");
    fs::write(&cfg, "[model]\nvariant = rcdm\nwidth = 4\n").unwrap();
    let out = rcdm(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&hr),
        "--out",
        p(&d.path().join("c")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("'width'"));
}

#[test]
fn resume_continues_the_trace() {
    let d = tempfile::tempdir().unwrap();
    let hr = d.path().join("hr");
    ok(&["synth", "--frames", "5", "--size", "32x32", "--out", p(&hr)]);
    let (full, part) = (d.path().join("full"), d.path().join("part"));
    ok(&[
        "train",
        "--preset",
        "unit",
        "--data",
        p(&hr),
        "--steps",
        "4",
        "--out",
        p(&full),
    ]);
    ok(&[
        "train",
        "--preset",
        "unit",
        "--data",
        p(&hr),
        "--steps",
        "2",
        "--out",
        p(&part),
    ]);
    ok(&[
        "train",
        "--preset",
        "unit",
        "--data",
        p(&hr),
        "--steps",
        "4",
        "--out",
        p(&part),
        "--resume",
    ]);
    assert_eq!(
        fs::read(full.join("loss.csv")).unwrap(),
        fs::read(part.join("loss.csv")).unwrap()
    );
    assert_eq!(load_weights(&full).unwrap(), load_weights(&part).unwrap());
}

#[test]
fn infer_window_counts_and_static_modes() {
    let d = tempfile::tempdir().unwrap();
    let (hr, lr, ck) = (
        d.path().join("hr"),
        d.path().join("lr"),
        d.path().join("ck"),
    );
    ok(&[
        "synth",
        "--kind",
        "static",
        "--frames",
        "7",
        "--size",
        "32x32",
        "--seed",
        "2",
        "--out",
        p(&hr),
    ]);
    ok(&["degrade", "--in", p(&hr), "--out", p(&lr)]);
    ok(&[
        "train",
        "--preset",
        "unit",
        "--data",
        p(&hr),
        "--steps",
        "1",
        "--out",
        p(&ck),
    ]);
    // The reference slot is structurally distinct (zero offsets), so centre and
    // causal windows agree only once the predicted offsets vanish too.
    let (mcfg, mut weights) = load_model(&ck).unwrap();
    for key in ["align.offset.conv2.weight", "align.offset.conv2.bias"] {
        let t = weights.get(key).unwrap();
        weights.insert(key.to_string(), Tensor::zeros(t.shape(), t.dtype()));
    }
    save_model(&ck, &mcfg, &weights).unwrap();
    let (center, causal) = (d.path().join("center"), d.path().join("causal"));
    ok(&[
        "infer",
        "--ckpt",
        p(&ck),
        "--in",
        p(&lr),
        "--mode",
        "center",
        "--out",
        p(&center),
    ]);
    ok(&[
        "infer",
        "--ckpt",
        p(&ck),
        "--in",
        p(&lr),
        "--mode",
        "causal",
        "--out",
        p(&causal),
    ]);
    assert!(fs::read_to_string(center.join("clip.meta"))
        .unwrap()
        .contains("T=3\nc=3\nH=32\nW=32"));
    assert_eq!(
        fs::read_to_string(center.join("targets.txt")).unwrap(),
        "2\n3\n4\n"
    );
    assert_eq!(
        fs::read_to_string(causal.join("targets.txt")).unwrap(),
        "4\n5\n6\n"
    );
    // static scene: step k sees identical windows in both modes
    assert_eq!(frames(&center), frames(&causal));

    let short = d.path().join("short");
    ok(&[
        "synth",
        "--frames",
        "4",
        "--size",
        "8x8",
        "--out",
        p(&short),
    ]);
    assert_eq!(
        code(&rcdm(&[
            "infer",
            "--ckpt",
            p(&ck),
            "--in",
            p(&short),
            "--out",
            p(&d.path().join("s"))
        ])),
        2
    );

    let five = d.path().join("five");
    ok(&[
        "synth",
        "--frames",
        "5",
        "--size",
        "6x10",
        "--out",
        p(&five),
    ]);
    let out = d.path().join("five_sr");
    ok(&[
        "infer",
        "--ckpt",
        p(&ck),
        "--in",
        p(&five),
        "--out",
        p(&out),
    ]);
    assert!(fs::read_to_string(out.join("clip.meta"))
        .unwrap()
        .contains("T=1\nc=3\nH=24\nW=40"));
}

#[test]
fn eval_identity_schema_and_mismatch() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    ok(&["synth", "--frames", "3", "--size", "24x24", "--out", p(&a)]);
    let csv = d.path().join("m.csv");
    ok(&[
        "eval",
        "--ref",
        p(&a),
        "--test",
        p(&a),
        "--crop-border",
        "4",
        "--out",
        p(&csv),
    ]);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "frame,ssim,psnr");
    assert_eq!(lines[1], "0,1.000000,inf");
    assert_eq!(lines[4], "mean,1.000000,inf");
    assert!(d.path().join("run.meta").exists());
    ok(&["synth", "--frames", "3", "--size", "24x20", "--out", p(&b)]);
    assert_eq!(
        code(&rcdm(&[
            "eval",
            "--ref",
            p(&a),
            "--test",
            p(&b),
            "--out",
            p(&csv)
        ])),
        2
    );

    let c = d.path().join("c");
    ok(&[
        "synth",
        "--frames",
        "3",
        "--size",
        "24x24",
        "--seed",
        "1",
        "--out",
        p(&c),
    ]);
    let abl = d.path().join("abl.csv");
    ok(&[
        "eval",
        "--ref",
        p(&a),
        "--test",
        p(&a),
        "--ablation",
        p(&c),
        "--out",
        p(&abl),
    ]);
    let text = fs::read_to_string(&abl).unwrap();
    assert!(text.starts_with("frame,ssim_full,ssim_baseline,ssim_ratio\n"));
    let row: Vec<f64> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(|v| v.parse().unwrap())
        .collect();
    assert!((row[3] - row[1] / row[2]).abs() < 1e-4 * row[3] && row[3] > 1.0);
}

#[test]
fn analyze_outputs() {
    let d = tempfile::tempdir().unwrap();
    let csv = d.path().join("cost.csv");
    let stdout = ok(&[
        "analyze",
        "--preset",
        "unit",
        "--input-size",
        "8x8",
        "--family",
        "--out",
        p(&csv),
    ]);
    assert!(fs::read_to_string(&csv)
        .unwrap()
        .ends_with("TOTAL,14427,5432576\n"));
    for v in ["rcdm_light", "rc2dm_dwt_state", "rc2dm", "rcdm_dwt_state"] {
        assert!(stdout.contains(v));
    }
    let cfg = d.path().join("x.cfg");
    fs::write(&cfg, "[model]\nn_res3d = many\n").unwrap();
    assert_eq!(code(&rcdm(&["analyze", "--config", p(&cfg)])), 2);
    assert_eq!(
        code(&rcdm(&[
            "analyze",
            "--config",
            p(&d.path().join("missing.cfg"))
        ])),
        2
    );
}

#[test]
fn selftest_exit_codes() {
    let out = rcdm(&["selftest", "--level", "quick"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    let out = rcdm_env(&["selftest"], &[("RCDM_SELFTEST_FAULT", "dwt")]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("dwt round-trip"));
    assert_eq!(code(&rcdm(&["selftest", "--level", "thorough"])), 2);
}

#[test]
fn thread_cap_is_validated_and_harmless() {
    let d = tempfile::tempdir().unwrap();
    let (a, b) = (d.path().join("a"), d.path().join("b"));
    let args = |o: &Path| vec!["synth".to_string(), "--out".into(), p(o).into()];
    let run = |o: &Path, n: &str| {
        rcdm_env(
            &args(o).iter().map(String::as_str).collect::<Vec<_>>(),
            &[("RCDM_THREADS", n)],
        )
    };
    assert!(run(&a, "1").status.success());
    assert!(run(&b, "3").status.success());
    assert_eq!(frames(&a), frames(&b));
    assert_eq!(code(&run(&a, "zero")), 2);
}

#[test]
fn replay_reproduces_synth_and_degrade() {
    let d = tempfile::tempdir().unwrap();
    let (hr, lr) = (d.path().join("hr"), d.path().join("lr"));
    ok(&[
        "synth",
        "--kind",
        "moving_shapes",
        "--frames",
        "3",
        "--size",
        "16x16",
        "--seed",
        "4",
        "--out",
        p(&hr),
    ]);
    ok(&[
        "degrade",
        "--in",
        p(&hr),
        "--track",
        "bd",
        "--noise-sigma",
        "0.02",
        "--seed",
        "9",
        "--out",
        p(&lr),
    ]);
    let (hr2, lr2) = (d.path().join("hr2"), d.path().join("lr2"));
    ok(&[
        "replay",
        "--meta",
        p(&hr.join("run.meta")),
        "--out",
        p(&hr2),
    ]);
    ok(&[
        "replay",
        "--meta",
        p(&lr.join("run.meta")),
        "--out",
        p(&lr2),
    ]);
    assert_eq!(frames(&hr), frames(&hr2));
    assert_eq!(frames(&lr), frames(&lr2));
    assert_eq!(
        code(&rcdm(&["replay", "--meta", p(&d.path().join("nope"))])),
        2
    );
}
