use std::path::Path;
use std::process::{Command, Output};

fn skd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skd")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = skd(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    skd(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen(dir: &Path, clips: &str, frames: &str, res: &str, seed: &str) {
    ok(&["gen-data", "--clips", clips, "--frames", frames, "--res", res, "--seed", seed, "--out", p(dir)]);
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "run_config.json" {
                let rel = path.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn gen_data_writes_requested_clips_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    gen(&a, "2", "4", "32", "7");
    gen(&b, "2", "4", "32", "7");
    let clips: Vec<_> = std::fs::read_dir(&a).unwrap().filter_map(|e| e.ok()).filter(|e| e.path().is_dir()).collect();
    assert_eq!(clips.len(), 2);
    let frames: usize = clips.iter().map(|c| std::fs::read_dir(c.path().join("frames")).unwrap().count()).sum();
    assert_eq!(frames, 8);
    assert!(a.join("run_config.json").exists());
    // run_config.json records the output path, everything else must match byte for byte
    let (ta, tb) = (tree_bytes(&a), tree_bytes(&b));
    assert_eq!(ta.len(), tb.len());
    for ((na, ba), (nb, bb)) in ta.iter().zip(&tb) {
        assert_eq!(na, nb);
        assert!(ba == bb, "{na} differs");
    }
}

#[test]
fn usage_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(code(&["gen-data", "--frames", "1", "--out", p(&out)]), 2);
    assert_eq!(code(&["gen-data", "--bogus"]), 2);
    let data = tmp.path().join("data");
    gen(&data, "3", "3", "16", "0");
    let train = |extra: &[&str]| {
        let mut args = vec!["train", "--data", p(&data), "--res", "16", "--out", p(&out)];
        args.extend_from_slice(extra);
        code(&args)
    };
    assert_eq!(train(&["--phase", "student-spatial", "--mu", "1.5"]), 2);
    assert_eq!(train(&["--phase", "fusion"]), 2);
    assert_eq!(train(&["--phase", "sideways"]), 2);
    assert!(!out.exists());
}

#[test]
fn full_protocol_then_eval_and_bench() {
    let tmp = tempfile::tempdir().unwrap();
    let t = |s: &str| tmp.path().join(s);
    let data = t("data");
    gen(&data, "4", "3", "16", "1");
    let common = ["--data", p(&data), "--res", "16", "--epochs", "1", "--batch", "4"];
    let run = |phase: &str, out: &Path, extra: &[&str]| {
        let mut args = vec!["train", "--phase", phase, "--out", p(out)];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        ok(&args);
    };
    let (s, tm, st) = (t("s"), t("t"), t("st"));
    run("student-spatial", &s, &[]);
    run("student-temporal", &tm, &[]);
    let sw = s.join("weights.skdw");
    let tw = tm.join("weights.skdw");
    run("fusion", &st, &["--weights-in", p(&tw), p(&sw)]);
    for d in [&s, &tm, &st] {
        assert!(d.join("weights.skdw").exists());
        assert!(d.join("run_config.json").exists());
        let hist = std::fs::read_to_string(d.join("loss_history.csv")).unwrap();
        assert_eq!(hist.lines().count(), 2);
    }
    let cfg: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(st.join("run_config.json")).unwrap()).unwrap();
    assert_eq!(cfg["distill"]["resolution"], 16);
    assert_eq!(cfg["invocation"]["command"], "train");

    // same flags, same bytes
    let again = t("st2");
    run("fusion", &again, &["--weights-in", p(&tw), p(&sw)]);
    assert_eq!(std::fs::read(st.join("weights.skdw")).unwrap(), std::fs::read(again.join("weights.skdw")).unwrap());

    let w = st.join("weights.skdw");
    let ev = t("eval");
    ok(&["eval", "--weights", p(&w), "--data", p(&data), "--out", p(&ev)]);
    let metrics = std::fs::read_to_string(ev.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("frame,auc,sauc,nss,sim,cc"));
    assert!(metrics.lines().count() > 1);
    let roc = std::fs::read_to_string(ev.join("roc.csv")).unwrap();
    assert!(roc.starts_with("fpr,tpr"));
    assert!(ev.join("run_config.json").exists());
    assert_eq!(code(&["eval", "--weights", p(&w), "--data", p(&data), "--res", "8", "--out", p(&t("bad"))]), 3);

    let bench = t("bench");
    let out = ok(&["bench", "--weights", p(&w), "--res-list", "16,32", "--iters", "3", "--warmup", "1", "--out", p(&bench)]);
    let csv = std::fs::read_to_string(bench.join("bench.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("resolution,param_count"));
    assert!(String::from_utf8_lossy(&out.stdout).contains("resolution,param_count"));
    assert!(bench.join("run_config.json").exists());
}

#[test]
fn zero_epochs_write_the_initialisation() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "3", "3", "16", "2");
    let train = |out: &Path, epochs: &str| {
        let args = ["train", "--phase", "student-temporal", "--data", p(&data), "--res", "16", "--epochs", epochs, "--out", p(out)];
        ok(&args);
        std::fs::read(out.join("weights.skdw")).unwrap()
    };
    let a = train(&tmp.path().join("a"), "0");
    let b = train(&tmp.path().join("b"), "0");
    let c = train(&tmp.path().join("c"), "1");
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn sweep_writes_one_row_per_grid_point() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    gen(&data, "3", "3", "16", "3");
    let out = tmp.path().join("sweep");
    let base = ["sweep-mu", "--data", p(&data), "--res", "16", "--repeats", "2", "--batch", "4", "--out", p(&out)];
    let mut bad = base.to_vec();
    bad.extend_from_slice(&["--grid", "0.5,1.2"]);
    assert_eq!(code(&bad), 2);
    let mut args = base.to_vec();
    args.extend_from_slice(&["--grid", "0,1"]);
    ok(&args);
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "mu,nss_mean,nss_std");
    assert_eq!(rows.len(), 3);
    for r in &rows[1..] {
        let std: f64 = r.split(',').nth(2).unwrap().parse().unwrap();
        assert!(std.is_finite() && std >= 0.0);
    }
}
