use std::path::Path;
use std::process::{Command, Output};

use dppass::io::{read_ppm, write_ppm, Checkpoint};
use dppass::Tensor;

fn dppass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dppass"))
        .args(args)
        .env("DPP_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn untimed(o: &Output) -> Vec<String> {
    stdout(o).lines().filter(|l| !l.starts_with('#')).map(str::to_owned).collect()
}

const TINY: &str = "
[train]
steps = 3
channels = 4, 8, 8
crops_per_source = 2
ablation_masks = none, pc
ablation_seeds = 0
[layout]
patch_size = 16
[data]
erp_height = 32
erp_width = 64
source_count = 2
target_count = 2
eval_count = 2
";

fn write_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("tiny.cfg");
    std::fs::write(&path, format!("{TINY}{extra}")).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn project_then_backproject_reconstructs_smooth_image() {
    let dir = tempfile::tempdir().unwrap();
    let (h, w) = (64, 128);
    let img = Tensor::from_fn(&[h, w, 3], |i| {
        let (r, c, ch) = (i / (w * 3), (i / 3) % w, i % 3);
        let lat = std::f64::consts::PI * (0.5 - r as f64 / (h - 1) as f64);
        let lon = std::f64::consts::TAU * c as f64 / w as f64;
        0.5 + 0.4 * (lat.sin() * 0.7 + (lon + ch as f64).cos() * lat.cos() * 0.3)
    });
    let src = dir.path().join("in.ppm");
    write_ppm(&src, &img).unwrap();
    let stored = read_ppm(&src).unwrap();
    let patches = dir.path().join("patches");
    let out = dppass(&["project", "--in", src.to_str().unwrap(), "--patch-size", "48", "--out-dir", patches.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(untimed(&out), vec!["planes=18 patch=48x48"]);
    assert!(patches.join("plane_17.ppm").exists());
    let back = dir.path().join("back.ppm");
    let out = dppass(&["backproject", "--in-dir", patches.to_str().unwrap(), "--out", back.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).starts_with("covered_fraction="));
    let rebuilt = read_ppm(&back).unwrap();
    let (mut err, mut n) = (0.0, 0);
    for (px_a, px_b) in stored.data().chunks_exact(3).zip(rebuilt.data().chunks_exact(3)) {
        if px_b.iter().any(|&v| v > 0.0) {
            err += px_a.iter().zip(px_b).map(|(a, b)| (a - b).abs()).sum::<f64>();
            n += 3;
        }
    }
    assert!(n > 0);
    assert!(err / n as f64 <= 0.02, "MAE {}", err / n as f64);
}

#[test]
fn gradcheck_reports_max_relative_error() {
    let out = dppass(&["gradcheck", "--instances", "5"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let line = stdout(&out).lines().find(|l| l.starts_with("max_rel_err=")).unwrap().to_owned();
    let x: f64 = line["max_rel_err=".len()..].parse().unwrap();
    assert!(x < 1e-5);
}

#[test]
fn synth_train_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    let cfg = write_config(dir.path(), &format!("dir = {data_s}\n"));
    let out = dppass(&["synth", "--config", &cfg, "--out-dir", data_s]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert_eq!(untimed(&out), vec!["source=2 target=2 eval=2"]);

    let ck1 = dir.path().join("a.dpw");
    let ck2 = dir.path().join("b.dpw");
    let run1 = dppass(&["train", "--config", &cfg, "--out", ck1.to_str().unwrap()]);
    let run2 = dppass(&["train", "--config", &cfg, "--out", ck2.to_str().unwrap()]);
    assert!(run1.status.success(), "{}", stderr(&run1));
    let log = untimed(&run1);
    assert_eq!(log.len(), 3);
    assert!(log[0].starts_with("step=1 L_s="));
    assert_eq!(log, untimed(&run2));
    assert_eq!(std::fs::read(&ck1).unwrap(), std::fs::read(&ck2).unwrap());

    for mode in ["erp_only", "dual_average"] {
        let out = dppass(&["eval", "--ckpt", ck1.to_str().unwrap(), "--data", data_s, "--mode", mode]);
        assert!(out.status.success(), "{}", stderr(&out));
        assert!(stdout(&out).starts_with("miou="));
        assert_eq!(stdout(&out).lines().count(), 6);
    }

    // removing the tangent path and both classifiers leaves erp_only scores alone
    let full = dppass(&["eval", "--ckpt", ck1.to_str().unwrap(), "--data", data_s]);
    let mut ck = Checkpoint::load(&ck1).unwrap();
    ck.remove_prefix("tp.");
    ck.remove_prefix("tp_cls.");
    ck.remove_prefix("erp_cls.");
    let pruned_path = dir.path().join("pruned.dpw");
    ck.save(&pruned_path).unwrap();
    let pruned = dppass(&["eval", "--ckpt", pruned_path.to_str().unwrap(), "--data", data_s, "--mode", "erp_only"]);
    assert!(pruned.status.success(), "{}", stderr(&pruned));
    assert_eq!(stdout(&full), stdout(&pruned));
    let dual = dppass(&["eval", "--ckpt", pruned_path.to_str().unwrap(), "--data", data_s, "--mode", "dual_average"]);
    assert_eq!(dual.status.code(), Some(4));
}

#[test]
fn ablate_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let csv = dir.path().join("results.csv");
    let out = dppass(&["ablate", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = std::fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "mask,seed,miou,background,disk,stripe,polygon,ring");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("none,0,"));
    assert!(lines[2].starts_with("pc,0,"));
}

#[test]
fn errors_are_single_lines_with_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<(Vec<String>, i32, &str)> = vec![
        (vec!["frobnicate".into()], 2, "usage"),
        (vec!["eval".into()], 2, "usage"),
        (vec!["project".into(), "--in".into(), "/nonexistent/x.ppm".into(), "--out-dir".into(), "/tmp/never".into()], 3, "io"),
        (vec!["eval".into(), "--ckpt".into(), "c".into(), "--data".into(), "d".into(), "--mode".into(), "sideways".into()], 2, "usage"),
    ];
    for (args, code, kind) in cases {
        let args: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = dppass(&args);
        assert_eq!(out.status.code(), Some(code), "{args:?}: {}", stderr(&out));
        let err = stderr(&out);
        assert_eq!(err.lines().count(), 1, "{err}");
        assert!(err.starts_with(&format!("error kind={kind} ")), "{err}");
    }
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "[train]\nstepz = 1\n").unwrap();
    let out = dppass(&["train", "--config", bad.to_str().unwrap(), "--out", "x.dpw"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(stderr(&out).contains("line 2"));
    let garbage = dir.path().join("garbage.ppm");
    std::fs::write(&garbage, b"P5\n1 1\n255\n\0").unwrap();
    let out = dppass(&["project", "--in", garbage.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(4));
    let out = Command::new(env!("CARGO_BIN_EXE_dppass")).arg("gradcheck").arg("--instances").arg("1").env("DPP_THREADS", "many").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_succeeds() {
    let out = dppass(&["--help"]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("gradcheck"));
}
