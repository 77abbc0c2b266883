use std::fs;
use std::path::Path;
use std::process::Command;

fn globdec(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_globdec")).args(args).output().unwrap()
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("exp.cfg");
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

const SMALL: &str = "\
model = random:seed=3,vocab=3,max_length=3,concentration=1
rules = none,top_k:2
n_local_samples = 300
n_chains = 200
n_iterations = 20
n_sweep = 1,20
";

#[test]
fn verify_theorems_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("t");
    let o = globdec(&["verify-theorems", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("theorems.csv")).unwrap();
    assert_eq!(csv.lines().count(), 21);
}

#[test]
fn report_writes_only_inside_out() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let o = globdec(&["report", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.csv", "report.json", "model.txt", "bounds_top_k_2.json", "figures/tv_vs_n.csv", "figures/README.md"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let tv = fs::read_to_string(out.join("figures/tv_vs_n.csv")).unwrap();
    assert_eq!(tv.lines().count(), 1 + 2 * 2);
    let mut top: Vec<_> = fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    top.sort();
    assert_eq!(top, vec!["exp.cfg", "run"]);
}

#[test]
fn subcommands_write_their_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    for (cmd, file) in [
        (vec!["sample-local"], "local_top_k_2.jsonl"),
        (vec!["exact"], "exact_global_top_k_2.csv"),
        (vec!["imh", "--trace"], "imh_trace_top_k_2.jsonl"),
        (vec!["sweep-n", "--n", "1,5"], "sweep_top_k_2.csv"),
    ] {
        let out = tmp.path().join(cmd[0]);
        let mut args = cmd.clone();
        args.extend(["--config", &cfg, "--out", out.to_str().unwrap()]);
        let o = globdec(&args);
        assert_eq!(o.status.code(), Some(0), "{cmd:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(out.join(file).exists(), "{cmd:?} {file}");
    }
}

#[test]
fn bad_config_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "model = forward:x=0.4,k=2,vocab=4,max_length=3\n");
    let o = globdec(&["report", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let cfg = write_config(tmp.path(), "colour = blue\n");
    assert_eq!(globdec(&["exact", "--config", &cfg]).status.code(), Some(1));
}

#[test]
fn budget_overflow_keeps_sampling_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("b");
    let o = globdec(&["report", "--config", &cfg, "--out", out.to_str().unwrap(), "--budget", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("local_top_k_2.jsonl").exists());
    assert!(out.join("imh_top_k_2.csv").exists());
    assert!(!out.join("exact_global_top_k_2.csv").exists());
    let report = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(report.contains("exact reference skipped"));
}
