//! Runs the `h2tf` binary end to end.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use h2tf::io::read_tensor;
use h2tf::kv::KvMap;
use tempfile::TempDir;

fn h2tf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_h2tf"))
        .args(args)
        .output()
        .expect("failed to start h2tf")
}

fn ok(args: &[&str]) -> String {
    let out = h2tf(args);
    assert!(
        out.status.success(),
        "h2tf {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    h2tf(args).status.code().expect("terminated by signal")
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Fixture { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }

    /// Writes `clean.ht3` and a Case-`case` corruption `noisy.ht3`.
    fn simulate(&self, size: &str, case: &str) {
        ok(&[
            "simulate",
            "--synthetic",
            size,
            "--clean-output",
            &self.arg("clean.ht3"),
            "--output",
            &self.arg("noisy.ht3"),
            "--case",
            case,
            "--seed",
            "5",
        ]);
    }
}

fn metric(text: &str, key: &str) -> f64 {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("no {key} in {text:?}"))
        .parse()
        .unwrap()
}

#[test]
fn metrics_of_a_cube_against_itself() {
    let f = Fixture::new();
    f.simulate("16,16,2", "1");
    let out = ok(&["metrics", "--x", &f.arg("clean.ht3"), "--ref", &f.arg("clean.ht3")]);
    assert_eq!(out, "psnr=100.0\nssim=1.0\n");
}

#[test]
fn simulated_gaussian_noise_has_the_expected_psnr() {
    let f = Fixture::new();
    f.simulate("64,64,8", "1");
    let out = ok(&["metrics", "--x", &f.arg("noisy.ht3"), "--reference", &f.arg("clean.ht3")]);
    let p = metric(&out, "psnr");
    let want = 10.0 * (1.0f64 / 0.04).log10();
    assert!((p - want).abs() <= 0.3, "psnr {p} vs {want}");
    assert!(metric(&out, "ssim") < 1.0);

    let manifest = KvMap::read(&f.path("noisy.ht3.manifest")).unwrap();
    assert_eq!(manifest.get("command"), Some("simulate"));
    assert_eq!(manifest.get("noise.case"), Some("1"));
    assert_eq!(manifest.parse::<f64>("result.psnr").unwrap(), p);
}

#[test]
fn one_iteration_gives_one_diagnostics_row() {
    let f = Fixture::new();
    f.simulate("12,12,3", "5");
    ok(&[
        "denoise",
        "--input",
        &f.arg("noisy.ht3"),
        "--output",
        &f.arg("x.ht3"),
        "--sparse-output",
        &f.arg("s.ht3"),
        "--diagnostics",
        &f.arg("d.csv"),
        "--truth",
        &f.arg("clean.ht3"),
        "--max-iters",
        "1",
    ]);
    let csv = std::fs::read_to_string(f.path("d.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2, "{csv}");
    assert!(lines[0].starts_with("iter,loss,"));
    assert!(lines[1].starts_with("1,"));
    assert_eq!(read_tensor(&f.path("x.ht3")).unwrap().dims(), (12, 12, 3));
    assert_eq!(read_tensor(&f.path("s.ht3")).unwrap().dims(), (12, 12, 3));
    let manifest = KvMap::read(&f.path("x.ht3.manifest")).unwrap();
    assert_eq!(manifest.parse::<usize>("result.iterations").unwrap(), 1);
    assert!(manifest.contains("result.psnr"));
}

fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn manifest_replay_is_bitwise_identical() {
    let f = Fixture::new();
    f.simulate("10,10,3", "2");
    ok(&[
        "denoise",
        "--input",
        &f.arg("noisy.ht3"),
        "--output",
        &f.arg("first.ht3"),
        "--max-iters",
        "40",
        "--hnt-layers",
        "1",
        "--seed",
        "9",
        "--checkpoint",
        &f.arg("ckpt"),
    ]);
    ok(&[
        "denoise",
        "--from-manifest",
        &f.arg("first.ht3.manifest"),
        "--output",
        &f.arg("second.ht3"),
    ]);
    assert!(same_bytes(&f.path("first.ht3"), &f.path("second.ht3")));
    let a = KvMap::read(&f.path("first.ht3.manifest")).unwrap();
    let b = KvMap::read(&f.path("second.ht3.manifest")).unwrap();
    for key in ["model.ranks", "model.seed", "solver.max_iters", "result.iterations"] {
        assert_eq!(a.get(key), b.get(key), "{key}");
    }
    assert!(f.path("ckpt").join("checkpoint.txt").is_file());

    // The simulated input is reproducible from its seed as well.
    ok(&["simulate", "--synthetic", "10,10,3", "--output", &f.arg("again.ht3"), "--case", "2", "--seed", "5"]);
    assert!(same_bytes(&f.path("noisy.ht3"), &f.path("again.ht3")));
}

#[test]
fn exit_codes_separate_usage_io_and_numeric_failures() {
    let f = Fixture::new();
    f.simulate("8,8,3", "1");
    let noisy = f.arg("noisy.ht3");
    let out = f.arg("x.ht3");

    assert_eq!(code(&["denoise", "--output", &out]), 2);
    assert_eq!(code(&["denoise", "--input", &f.arg("missing.ht3"), "--output", &out]), 2);
    assert_eq!(code(&["denoise", "--input", &noisy, "--output", &out, "--mu", "-1"]), 2);
    assert_eq!(code(&["simulate", "--synthetic", "8,8,3", "--output", &out, "--case", "9"]), 2);

    std::fs::write(f.path("bad.ht3"), b"not a tensor").unwrap();
    assert_eq!(code(&["metrics", "--x", &f.arg("bad.ht3"), "--ref", &noisy]), 3);
    let mut truncated = std::fs::read(f.path("noisy.ht3")).unwrap();
    truncated.truncate(truncated.len() - 8);
    std::fs::write(f.path("short.ht3"), truncated).unwrap();
    assert_eq!(code(&["denoise", "--input", &f.arg("short.ht3"), "--output", &out]), 3);

    let diag = f.arg("diverged.csv");
    let args = ["denoise", "--input", &noisy, "--output", &out, "--lr", "1e6", "--diagnostics", &diag];
    assert_eq!(code(&args), 4);
    let rows = std::fs::read_to_string(&diag).unwrap().lines().count();
    assert!(rows >= 2, "diagnostics written on divergence");
}

#[test]
fn bench_writes_one_row_per_grid_point() {
    let f = Fixture::new();
    ok(&[
        "bench",
        "--suite",
        "hnt-layers",
        "--out-dir",
        &f.arg("bench"),
        "--size",
        "8,8,3",
        "--limit",
        "2",
        "--max-iters",
        "5",
    ]);
    let csv = std::fs::read_to_string(f.path("bench").join("hnt-layers.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "suite,config,status,iterations,psnr,ssim,seconds");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("hnt-layers,m=0,ok,5,"));
    assert!(lines[2].starts_with("hnt-layers,m=1,ok,5,"));
    let manifest = KvMap::read(&f.path("bench").join("hnt-layers.manifest")).unwrap();
    assert_eq!(manifest.parse::<usize>("bench.points").unwrap(), 2);
}
