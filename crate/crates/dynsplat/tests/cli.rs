use std::path::Path;
use std::process::{Command, Output};

use dynsplat::config::RunConfig;
use dynsplat::pipeline::{self, Manifest, RunDir};

const SMALL: &str = r#"
[synth]
n_frames = 8
width = 24
height = 24
n_test = 2

[seeding]
n_static = 300
n_dynamic = 60
knot_count = 4

[schedule]
phase1_iters = 40
phase2_iters = 10

[run]
checkpoint_every = 20
log_every = 0
"#;

fn dynsplat(run: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dynsplat"))
        .arg("--run-dir")
        .arg(run)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "exit {:?}\n{}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    out
}

fn small_run() -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("config.toml"), SMALL).unwrap();
    tmp
}

fn manifest(run: &Path) -> Manifest {
    dynsplat::formats::read_json(&run.join("manifest.json"), "manifest").unwrap()
}

#[test]
fn full_run_writes_reports_checkpoints_and_one_manifest() {
    let tmp = small_run();
    let out = ok(dynsplat(tmp.path(), &["full-run"]));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("PSNR-D"), "{stdout}");
    for model in ["baseline", "full"] {
        assert!(tmp.path().join(format!("eval/{model}/report.json")).is_file());
        assert!(tmp.path().join(format!("eval/{model}/report.txt")).is_file());
        assert!(tmp.path().join(format!("checkpoints/{model}.json")).is_file());
    }
    assert!(tmp.path().join("checkpoints/baseline_000020.json").is_file());
    assert!(tmp.path().join("pseudo/records.json").is_file());
    let m = manifest(tmp.path());
    assert_eq!(m.stages.len(), 1);
    assert_eq!(m.stages[0].command, "full-run");
    assert_eq!(m.stages[0].config.synth.n_frames, 8);
    assert_eq!(m.stages[0].config.schedule.phase2_iters, 10);
    let text = std::fs::read_to_string(tmp.path().join("eval/full/report.json")).unwrap();
    assert!(text.contains("\"schema_version\": 1"));
}

#[test]
fn stages_one_by_one_record_the_ablation_flags() {
    let tmp = small_run();
    let run = tmp.path();
    for args in [
        &["synth"][..],
        &["train", "--seed-masks", "random"],
        &["sample-cams"],
        &["build-pseudo"],
        &["refine", "--no-dr", "--no-so"],
        &["eval", "--model", "naive"],
    ] {
        ok(dynsplat(run, args));
    }
    let m = manifest(run);
    let cmds: Vec<&str> = m.stages.iter().map(|s| s.command.as_str()).collect();
    assert_eq!(cmds, ["synth", "train", "sample-cams", "build-pseudo", "refine", "eval"]);
    assert_eq!(m.stages[1].flags["seed_masks"], "random");
    assert_eq!(m.stages[4].flags["use_dr"], false);
    assert_eq!(m.stages[4].flags["use_so"], false);
    assert_eq!(m.stages[4].flags["model"], "naive");
    assert!(run.join("eval/naive/report.json").is_file());
    // 18 cameras per timestep
    let records = std::fs::read_dir(run.join("pseudo/enhanced")).unwrap().count();
    assert_eq!(records, 8 * 18);
}

#[test]
fn unknown_config_key_exits_2_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("config.toml"), "[schedule]\nphase_one = 3\n").unwrap();
    let out = dynsplat(tmp.path(), &["synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("phase_one"));
}

#[test]
fn missing_dataset_exits_3() {
    let tmp = small_run();
    let out = dynsplat(tmp.path(), &["train"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset"));
}

#[test]
fn external_identity_enhancer_reproduces_the_renders() {
    let tmp = small_run();
    let run = tmp.path();
    for args in [&["synth"][..], &["train"], &["sample-cams"]] {
        ok(dynsplat(run, args));
    }
    let bin = env!("CARGO_BIN_EXE_dynsplat");
    ok(dynsplat(run, &["build-pseudo", "--external-cmd", bin, "identity-responder"]));
    for e in std::fs::read_dir(run.join("pseudo/renders")).unwrap() {
        let e = e.unwrap();
        let a = dynsplat::io::read_rgb(&e.path()).unwrap();
        let b = dynsplat::io::read_rgb(&run.join("pseudo/enhanced").join(e.file_name())).unwrap();
        assert_eq!(a, b);
    }
    let m = manifest(run);
    assert_eq!(m.stages[3].config.enhancer.mode, dynsplat_core::enhance::EnhancerMode::External);
}

#[test]
fn failing_external_enhancer_exits_5() {
    let tmp = small_run();
    let run = tmp.path();
    for args in [&["synth"][..], &["train"], &["sample-cams"]] {
        ok(dynsplat(run, args));
    }
    let out = dynsplat(run, &["build-pseudo", "--external-cmd", "sh", "-c", "echo broken > \"$0/ERROR\""]);
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("broken"));
}

#[test]
fn resumed_training_matches_an_uninterrupted_run() {
    let tmp = small_run();
    let run = tmp.path();
    ok(dynsplat(run, &["synth"]));
    ok(dynsplat(run, &["train"]));
    let full = std::fs::read(run.join("checkpoints/baseline.json")).unwrap();
    std::fs::remove_file(run.join("checkpoints/baseline.json")).unwrap();
    ok(dynsplat(run, &["train", "--resume"]));
    assert_eq!(std::fs::read(run.join("checkpoints/baseline.json")).unwrap(), full);
}

#[test]
fn missing_prediction_is_named() {
    let tmp = small_run();
    let run = RunDir::new(tmp.path());
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    pipeline::synth(&run, &cfg).unwrap();
    let data = pipeline::load_dataset(&run, &cfg).unwrap();
    let pred = tmp.path().join("pred");
    dynsplat::io::write_rgb(&pred.join("v000.png"), &data.test_images[0]).unwrap();
    let err = pipeline::report_from_dir(&pred, &data, &cfg).unwrap_err().to_string();
    assert!(err.contains("v001.png") && !err.contains("v000.png"), "{err}");
}

#[test]
fn report_from_files_equals_the_metric_ops() {
    let tmp = small_run();
    let run = RunDir::new(tmp.path());
    let cfg = RunConfig::from_toml(SMALL).unwrap();
    pipeline::synth(&run, &cfg).unwrap();
    let data = pipeline::load_dataset(&run, &cfg).unwrap();
    let pred = tmp.path().join("pred");
    let mut preds = Vec::new();
    for (i, gt) in data.test_images.iter().enumerate() {
        let mut p = gt.clone();
        p.data.iter_mut().enumerate().for_each(|(k, v)| *v = (*v + if k % 3 == 0 { 0.1 } else { -0.05 }).clamp(0.0, 1.0));
        dynsplat::io::write_rgb(&pred.join(dynsplat::dataset::test_name(i)), &p).unwrap();
        preds.push(dynsplat::io::quantized(&p));
    }
    let rep = pipeline::report_from_dir(&pred, &data, &cfg).unwrap();
    use dynsplat_core::eval::{psnr_masked, ssim_masked};
    for (i, f) in rep.frames.iter().enumerate() {
        assert_eq!(f.psnr_m, psnr_masked(&preds[i], &data.test_images[i], &data.covis_masks[i]).unwrap());
        assert_eq!(f.ssim_d, ssim_masked(&preds[i], &data.test_images[i], &data.test_dyn_masks[i]).unwrap());
    }
}
