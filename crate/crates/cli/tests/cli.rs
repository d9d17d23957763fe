use std::path::Path;
use std::process::{Command, Output};

use prt_core::feature_field::FieldConfig;
use prt_core::scene::Scene;
use prt_core::train::checkpoint::{self, CheckpointMeta};
use prt_core::transport::TransportModel;

fn prt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_prt")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = prt(args);
    assert!(out.status.success(), "prt {args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// The last stderr line is a JSON object with `code` and `message`.
fn error_code(out: &Output) -> String {
    let err = String::from_utf8_lossy(&out.stderr);
    let line = err.lines().last().unwrap_or_default();
    let json = line.strip_prefix("error: ").unwrap_or_else(|| panic!("unexpected stderr: {err}"));
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert!(v["message"].is_string());
    v["code"].as_str().unwrap().to_string()
}

#[test]
fn help_lists_every_documented_flag() {
    let expect: &[(&str, &[&str])] = &[
        (
            "precompute",
            &[
                "--scene", "--envs", "--out", "--config", "--spp", "--size", "--cameras", "--seed", "--face-res",
                "--rotations", "--envs-per-view", "--max-bounces", "--store-direct", "--trajectory", "--phase",
                "--paper-scale",
            ],
        ),
        (
            "train",
            &[
                "--data", "--config", "--out", "--log", "--held-out", "--steps", "--seed", "--wavelets-per-step",
                "--pixels-per-strategy", "--eval-every", "--checkpoint-every", "--paper-scale",
            ],
        ),
        (
            "render",
            &[
                "--ckpt", "--env", "--camera", "--scene", "--rotation", "--wavelets", "--mode", "--full",
                "--direct-spp", "--size", "--seed", "--out", "--remote",
            ],
        ),
        ("eval", &["--ckpt", "--compare", "--data", "--report", "--wavelets", "--mode"]),
        ("wavelet-stats", &["--env", "--out", "--face-res", "--mode"]),
        ("serve", &["--port", "--host", "--workers"]),
        ("fixture", &["--out", "--probes", "--face-res"]),
    ];
    for (cmd, flags) in expect {
        let help = ok(&[cmd, "--help"]);
        for f in *flags {
            assert!(help.contains(f), "`prt {cmd} --help` does not mention {f}");
        }
        for global in ["--threads", "--assets-dir", "--log-level"] {
            assert!(help.contains(global), "`prt {cmd} --help` does not mention {global}");
        }
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let out = prt(&["render", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = prt(&["precompute", "--scene", "x", "--envs", "y", "--out", "z", "--size", "12"]);
    assert_eq!(out.status.code(), Some(2));
    let out = prt(&[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_inputs_report_json_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let nope = dir.path().join("nope");
    let out = prt(&["train", "--data", s(&nope), "--out", s(&dir.path().join("m.wprt"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_code(&out), "missing_input");
    let out = prt(&["wavelet-stats", "--env", s(&nope), "--out", s(&dir.path().join("w.csv"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_code(&out), "missing_input");
    let out = prt(&["eval", "--ckpt", s(&nope), "--data", s(&nope), "--report", "r.json"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("assets");
    ok(&["fixture", "--out", s(&assets), "--probes", "1", "--face-res", "8"]);
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"spp": "many"}"#).unwrap();
    let out = prt(&[
        "precompute", "--scene", s(&assets.join("scenes/fixture")), "--envs", s(&assets.join("envs")), "--out",
        s(&dir.path().join("d")), "--config", s(&cfg),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_code(&out), "invalid_config");
}

#[test]
fn offline_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let assets = d.join("assets");
    ok(&["fixture", "--out", s(&assets), "--probes", "2", "--face-res", "8"]);
    let scene = assets.join("scenes/fixture");
    let cfg = d.join("pre.json");
    std::fs::write(&cfg, r#"{"spp": 4, "width": 12, "height": 12}"#).unwrap();
    let summary = ok(&[
        "precompute", "--scene", s(&scene), "--envs", s(&assets.join("envs")), "--out", s(&d.join("data")),
        "--config", s(&cfg), "--cameras", "3", "--face-res", "4", "--rotations", "90", "--spp", "3",
    ]);
    let v: serde_json::Value = serde_json::from_str(&summary).unwrap();
    assert_eq!(v["images"], 12);
    let effective: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("data/precompute.json")).unwrap()).unwrap();
    assert_eq!(effective["spp"], 3, "flags override the config file");
    assert_eq!(effective["width"], 12);
    assert_eq!(effective["rotations_deg"], serde_json::json!([90.0]));

    ok(&[
        "precompute", "--scene", s(&scene), "--envs", s(&assets.join("envs")), "--out", s(&d.join("held")),
        "--spp", "4", "--size", "12x12", "--cameras", "1", "--face-res", "4", "--rotations", "", "--phase", "0.5",
        "--store-direct",
    ]);
    let ckpt = assets.join("checkpoints/m.wprt");
    let train = ok(&[
        "train", "--data", s(&d.join("data")), "--out", s(&ckpt), "--steps", "4", "--eval-every", "2",
        "--held-out", s(&d.join("held")), "--pixels-per-strategy", "8", "--wavelets-per-step", "8",
    ]);
    let v: serde_json::Value = serde_json::from_str(&train).unwrap();
    assert_eq!(v["steps"], 4);
    let log = std::fs::read_to_string(format!("{}.log.jsonl", ckpt.display())).unwrap();
    assert_eq!(log.lines().count(), 4);
    assert!(log.lines().nth(1).unwrap().contains("held_out_psnr"));

    // Scene found by hash under --assets-dir; env given as an asset id.
    let out = d.join("frames/a");
    ok(&[
        "--assets-dir", s(&assets), "render", "--ckpt", s(&ckpt), "--env", "probe1", "--camera", "top", "--size",
        "10x8", "--wavelets", "all", "--out", s(&out),
    ]);
    let img = prt_core::imageio::read_pfm(&out.with_extension("pfm")).unwrap();
    assert_eq!((img.width, img.height), (10, 8));
    let side: serde_json::Value = serde_json::from_slice(&std::fs::read(out.with_extension("json")).unwrap()).unwrap();
    assert_eq!(side["wavelets_used"], 96);
    assert!(out.with_extension("png").exists());

    let report = d.join("report.json");
    ok(&["eval", "--ckpt", s(&ckpt), "--data", s(&d.join("held")), "--report", s(&report), "--wavelets", "16"]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["images"].as_array().unwrap().len(), 2);
    assert!(r["mean"]["psnr"].as_f64().unwrap().is_finite());
    assert!(r["mean"]["full_psnr"].as_f64().is_some());

    ok(&["eval", "--compare", s(&d.join("held")), "--data", s(&d.join("held")), "--report", s(&report)]);
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["mean"]["psnr"], 99.0);
    assert_eq!(r["mean"]["rel_l2"], 0.0);

    let csv = d.join("stats.csv");
    ok(&["wavelet-stats", "--env", s(&assets.join("envs/probe0")), "--out", s(&csv), "--face-res", "8"]);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("k,fraction,retained"));
    let last: Vec<f64> = text.lines().last().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(last[0], 384.0);
    assert!((last[2] - 1.0).abs() < 1e-9);
}

#[test]
fn checkpoint_for_another_scene_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("assets");
    ok(&["fixture", "--out", s(&assets), "--probes", "1", "--face-res", "8"]);
    let cfg = FieldConfig { wavelet_face_res: 4, levels: 2, log2_table_size: 8, ..FieldConfig::desk() };
    let model = TransportModel::<f32>::new(cfg.clone(), 1).unwrap();
    let ckpt = dir.path().join("m.wprt");
    checkpoint::save(&ckpt, &model, &CheckpointMeta::new(cfg, model.mlp.config().clone(), "0000")).unwrap();
    let out = prt(&[
        "render", "--ckpt", s(&ckpt), "--scene", s(&assets.join("scenes/fixture")), "--env",
        s(&assets.join("envs/probe0")), "--camera", "front", "--out", s(&dir.path().join("f")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_code(&out), "scene_mismatch");
}

#[test]
fn remote_render_goes_through_the_service() {
    let dir = tempfile::tempdir().unwrap();
    let assets = dir.path().join("assets");
    ok(&["fixture", "--out", s(&assets), "--probes", "1", "--face-res", "8"]);
    let scene = Scene::load(&assets.join("scenes/fixture/scene.json")).unwrap();
    let cfg = FieldConfig { wavelet_face_res: 4, levels: 2, log2_table_size: 8, ..FieldConfig::desk() };
    let model = TransportModel::<f32>::new(cfg.clone(), 1).unwrap();
    let meta = CheckpointMeta::new(cfg, model.mlp.config().clone(), scene.hash());
    checkpoint::save(&assets.join("checkpoints/m.wprt"), &model, &meta).unwrap();

    let rt = tokio::runtime::Runtime::new().unwrap();
    let addr = rt.block_on(async {
        let cfg = prt_service::ServiceConfig { assets_dir: assets.clone(), host: "127.0.0.1".into(), port: 0, workers: 1 };
        let (addr, state, server) = prt_service::bind(cfg).await.unwrap();
        tokio::spawn(server);
        while !state.is_ready() {
            tokio::time::sleep(std::time::Duration::from_millis(10)).await;
        }
        addr
    });
    let url = format!("http://{addr}");
    let out = dir.path().join("remote");
    let stdout = ok(&[
        "render", "--remote", &url, "--scene", "fixture", "--ckpt", "m", "--env", "probe0", "--camera", "left",
        "--size", "20x12", "--wavelets", "32", "--out", s(&out),
    ]);
    let v: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(v["wavelets_used"], 32);
    let png = std::fs::read(out.with_extension("png")).unwrap();
    let img = image::load_from_memory_with_format(&png, image::ImageFormat::Png).unwrap();
    assert_eq!((img.width(), img.height()), (20, 12));

    let bad = prt(&[
        "render", "--remote", &url, "--scene", "fixture", "--ckpt", "missing", "--env", "probe0", "--camera", "left",
        "--out", s(&out),
    ]);
    assert_eq!(bad.status.code(), Some(1));
    assert_eq!(error_code(&bad), "remote");
    drop(rt);
}
