//! End-to-end checks of the command-line workflows.

use std::path::Path;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_patchprior"))
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn gen_data_is_deterministic_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["a.pt1", "b.pt1"] {
        let out = bin()
            .args([
                "gen-data",
                "--family",
                "ellipse",
                "--n",
                "5",
                "--seed",
                "7",
                "--image-size",
                "32",
                "--out",
            ])
            .arg(dir.path().join(name))
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(
        read(&dir.path().join("a.pt1")),
        read(&dir.path().join("b.pt1"))
    );
}

#[test]
fn disabled_refine_reconstruction_matches_fixed_prior() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("train.pt1");
    let ok = bin()
        .args(["gen-data", "--family", "ellipse", "--n", "4", "--seed", "1"])
        .args(["--image-size", "32", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(ok.success());

    let model_dir = dir.path().join("model");
    let out = bin()
        .args(["train", "--dataset"])
        .arg(&data)
        .args(["--out-dir"])
        .arg(&model_dir)
        .args(["--steps", "3", "--batch-size", "2", "--seed", "2"])
        .args(["--base-channels", "6", "--n-blocks", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ckpt = model_dir.join("ckpt_final.ckpt");
    assert!(ckpt.exists());

    // solver config whose refine cadence never fires (K > T)
    let cfg_path = dir.path().join("solver.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "t_steps": 8, "sigma_max": 10.0, "sigma_min": 0.01,
            "eps_step": 0.0002, "gamma": 10.0, "m_cg": 2,
            "k_refine": 100, "refine_iters": 5, "refine_lr": 1e-5,
            "noise_convention": "paper-literal", "patch": 16, "seed": 0
        }"#,
    )
    .unwrap();

    let mut outputs = Vec::new();
    for method in ["ss", "fixed"] {
        let out_dir = dir.path().join(format!("recon_{method}"));
        let out = bin()
            .args(["reconstruct", "--task", "ct60", "--method", method])
            .args(["--checkpoint"])
            .arg(&ckpt)
            .args(["--simulate-from"])
            .arg(&data)
            .args(["--image-index", "0", "--seed", "5", "--config"])
            .arg(&cfg_path)
            .args(["--out-dir"])
            .arg(&out_dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        outputs.push(read(&out_dir.join("recon.pt1")));
    }
    assert_eq!(outputs[0], outputs[1], "K > T must disable refinement exactly");
}

#[test]
fn unknown_config_keys_fail_with_one_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.pt1");
    assert!(bin()
        .args(["gen-data", "--family", "ellipse", "--n", "1", "--seed", "3"])
        .args(["--image-size", "32", "--out"])
        .arg(&data)
        .status()
        .unwrap()
        .success());

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"steps": 1, "not_a_real_key": 2}"#).unwrap();
    let out = bin()
        .args(["train", "--dataset"])
        .arg(&data)
        .args(["--out-dir"])
        .arg(dir.path().join("m"))
        .args(["--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap();
    let parsed: serde_json::Value = serde_json::from_str(line).expect("one JSON error line");
    assert!(parsed["error"].as_str().unwrap().contains("not_a_real_key"));
}

#[test]
fn invalid_config_lists_every_offending_key() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.pt1");
    assert!(bin()
        .args(["gen-data", "--family", "ellipse", "--n", "1", "--seed", "3"])
        .args(["--image-size", "32", "--out"])
        .arg(&data)
        .status()
        .unwrap()
        .success());

    let out = bin()
        .args(["train", "--dataset"])
        .arg(&data)
        .args(["--out-dir"])
        .arg(dir.path().join("m"))
        .args(["--batch-size", "0", "--lr=-1"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("batch_size") && stderr.contains("lr"), "{stderr}");
}
