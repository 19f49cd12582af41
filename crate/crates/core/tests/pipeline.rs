//! End-to-end library runs on small cubes.

use h2tf::admm::{run, Scaling};
use h2tf::io::{read_tensor, write_tensor, Dtype};
use h2tf::metrics::{psnr, ssim};
use h2tf::model::{forward, init_params};
use h2tf::noise::{make_case, synthetic_low_tubal_rank};
use h2tf::{ModelConfig, NoiseCase, NoiseSpec, SolverConfig, Tensor3};

#[test]
fn noiseless_self_fit_reaches_40_db() {
    let (h, w, b) = (16, 16, 4);
    let mut truth_cfg = ModelConfig::new(h, w, b);
    truth_cfg.seed = 91;
    let y = forward(&init_params(&truth_cfg).unwrap()).unwrap();

    let mut model = ModelConfig::new(h, w, b);
    model.seed = 3;
    // Pure representation: no difference penalties and S pinned at zero.
    let solver = SolverConfig {
        alpha1: 1e6,
        alpha2: 0.0,
        alpha3: 0.0,
        max_iters: 2000,
        ..SolverConfig::default()
    };
    let result = run(&y, &model, &solver).unwrap();
    assert!(result.s.data().iter().all(|&v| v == 0.0));

    let scale = Scaling::min_max(&y);
    let p = psnr(&scale.forward(&result.x), &scale.forward(&y)).unwrap();
    println!("self-fit PSNR {p:.2} dB after {} iterations", result.iterations);
    assert!(p >= 40.0, "self-fit PSNR {p:.2} dB");
}

#[test]
fn denoising_improves_a_small_mixed_case() {
    let truth = synthetic_low_tubal_rank(16, 16, 6, 2, 8).unwrap();
    let y = make_case(&truth, &NoiseSpec::case(NoiseCase::Mixed, 8)).unwrap();
    let result = run(&y, &ModelConfig::new(16, 16, 6), &SolverConfig::default()).unwrap();
    assert_eq!(result.diagnostics.len(), result.iterations);
    let (p0, p1) = (psnr(&y, &truth).unwrap(), psnr(&result.x, &truth).unwrap());
    assert!(p1 > p0 + 1.0, "psnr {p0:.2} -> {p1:.2}");
    let s1 = ssim(&result.x, &truth).unwrap();
    assert!(s1.is_finite() && s1 <= 1.0);
}

#[test]
fn results_survive_a_file_round_trip() {
    let truth = synthetic_low_tubal_rank(8, 8, 3, 1, 2).unwrap();
    let solver = SolverConfig { max_iters: 20, ..SolverConfig::default() };
    let result = run(&truth, &ModelConfig::new(8, 8, 3), &solver).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.ht3");
    write_tensor(&path, &result.x, Dtype::F64).unwrap();
    let back: Tensor3 = read_tensor(&path).unwrap();
    assert_eq!(back, result.x);
}
