use std::path::Path;
use std::process::{Command, Output};

fn splatrecon(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splatrecon"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const FAST: &str = "[metrics]\nsamples = 20000\n";

#[test]
fn pipeline_is_deterministic_and_cached() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    std::fs::write(root.join("p.toml"), FAST).unwrap();
    let first = ok(&splatrecon(&["pipeline", "--config", "p.toml", "--out", "a", "--seed", "3"], root));
    assert!(first.contains("remesh: ran"));
    for f in ["stack.bin", "pred_n.ply", "refined.obj", "report.json"] {
        assert!(root.join("a").join(f).exists(), "{f} missing");
    }
    for s in ["encode", "netshell", "remesh", "eval"] {
        assert!(root.join("a/manifests").join(format!("{s}.json")).exists());
    }
    ok(&splatrecon(&["pipeline", "--config", "p.toml", "--out", "b", "--seed", "3"], root));
    for f in ["refined.obj", "report.json"] {
        let a = std::fs::read(root.join("a").join(f)).unwrap();
        let b = std::fs::read(root.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let again = ok(&splatrecon(&["pipeline", "--config", "p.toml", "--out", "a", "--seed", "3"], root));
    assert_eq!(again.matches("skipped (cached)").count(), 4, "{again}");
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("a/report.json")).unwrap()).unwrap();
    assert!(report["geometry"]["cd_p_to_s"].as_f64().unwrap() < 0.2);
    assert!(report.get("wall_ms").is_none() && report["remesh"].get("wall_ms").is_none());
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[remesh]\nitrations = 5\n").unwrap();
    let out = splatrecon(&["pipeline", "--config", "bad.toml"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("itrations"));
}

#[test]
fn stage_failure_reports_stage_and_code() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("p.toml"), "[paths]\nmesh = \"missing.obj\"\n").unwrap();
    let out = splatrecon(&["pipeline", "--config", "p.toml", "--out", "o"], tmp.path());
    assert_eq!(out.status.code(), Some(10));
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage encode failed"));
}

#[test]
fn individual_subcommands_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok(&splatrecon(&["fixture", "--out", "fx"], root));
    ok(&splatrecon(
        &["encode", "--mesh", "fx/body.obj", "--splat", "fx/sphere.ply", "--size", "32", "--q", "1", "--m", "3000", "--out", "enc"],
        root,
    ));
    ok(&splatrecon(&["netshell", "init", "--geo-channels", "27", "--out", "enc"], root));
    ok(&splatrecon(
        &["netshell", "run", "--geo", "enc/stack.bin", "--tex", "enc/texfeat.bin", "--weights", "enc/weights.nsw", "--out", "enc"],
        root,
    ));
    assert!(root.join("enc/pred_c.ply").exists() && root.join("enc/pred_n.ply").exists());
    ok(&splatrecon(
        &["run", "--geo", "enc/stack.bin", "--tex", "enc/texfeat.bin", "--out-splats", "seeded_{c,n}.ply", "--out", "enc"],
        root,
    ));
    assert!(root.join("enc/seeded_n.ply").exists());

    ok(&splatrecon(
        &["remesh", "--splat", "fx/sphere.ply", "--views", "ring8", "--res", "32", "--iters", "5", "--out", "rm"],
        root,
    ));
    let rep: serde_json::Value = serde_json::from_slice(&std::fs::read(root.join("rm/remesh_report.json")).unwrap()).unwrap();
    assert!(rep["final"]["total"].as_f64().unwrap() <= rep["initial"]["total"].as_f64().unwrap());

    let geo = ok(&splatrecon(
        &["eval", "geometry", "--pred", "rm/refined.obj", "--gt", "fx/gt_sphere.obj", "--samples", "5000"],
        root,
    ));
    let geo: serde_json::Value = serde_json::from_str(&geo).unwrap();
    for k in ["cd_p_to_s", "cd_s_to_p", "nc", "fscore", "tau"] {
        assert!(geo[k].is_number(), "missing {k}");
    }

    ok(&splatrecon(&["render", "--splat", "fx/sphere.ply", "--rig", "front3", "--size", "32", "--out", "r"], root));
    ok(&splatrecon(&["render", "--mesh", "rm/refined.obj", "--rig", "front3", "--size", "32", "--out", "rmesh"], root));
    let img = ok(&splatrecon(&["eval", "image", "--pred", "r/view_0.png", "--gt", "r/view_0.png"], root));
    let img: serde_json::Value = serde_json::from_str(&img).unwrap();
    assert_eq!(img["ssim"].as_f64(), Some(1.0));
    assert!(img["psnr_db"].is_number());
}

#[test]
fn bad_rig_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = splatrecon(&["render", "--splat", "x.ply", "--rig", "ring9"], tmp.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("ring9"));
}
