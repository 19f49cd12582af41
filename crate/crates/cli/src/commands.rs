use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use h2tf::admm::{run_with, RunOptions};
use h2tf::io::{
    model_config_from_kv, model_config_to_kv, read_tensor, solver_config_from_kv, solver_config_to_kv,
    write_checkpoint, write_tensor,
};
use h2tf::kv::{join_list, KvMap};
use h2tf::metrics::{psnr, ssim};
use h2tf::model::{default_rank_base, Activation, ActivationKind};
use h2tf::noise::{make_case, synthetic_low_tubal_rank};
use h2tf::{Error, IterationRecord, ModelConfig, NoiseCase, NoiseSpec, SolverConfig, Tensor3};

use crate::args::{BenchArgs, DenoiseArgs, MetricsArgs, ModelArgs, SimulateArgs, SolverArgs, Suite};
use crate::error::{CliError, CliResult};

/// Header of the diagnostics CSV written by `denoise`.
pub const DIAGNOSTICS_HEADER: &str =
    "iter,loss,fidelity,sparse_l1,residual_dx,residual_dy,residual_dxdz,residual_dydz,rel_change,psnr,seconds";

/// Header of the CSV written by `bench`.
pub const BENCH_HEADER: &str = "suite,config,status,iterations,psnr,ssim,seconds";

fn default_manifest(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} '{}' does not exist", path.display())))
    }
}

fn load(path: &Path, what: &str) -> CliResult<Tensor3> {
    require_file(path, what)?;
    Ok(read_tensor(path)?)
}

fn absolute(path: &Path) -> String {
    std::path::absolute(path)
        .unwrap_or_else(|_| path.to_path_buf())
        .display()
        .to_string()
}

fn tool_header(command: &str) -> KvMap {
    let mut kv = KvMap::new();
    kv.insert("tool.name", env!("CARGO_PKG_NAME"));
    kv.insert("tool.version", env!("CARGO_PKG_VERSION"));
    kv.insert("command", command);
    kv
}

pub fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let clean = match (&args.input, &args.synthetic) {
        (Some(p), None) => load(p, "input")?,
        (None, Some(s)) => synthetic_low_tubal_rank(s.0, s.1, s.2, args.tubal_rank, args.seed)?,
        _ => return Err(CliError::Usage("give exactly one of --input and --synthetic".into())),
    };
    let mut spec = NoiseSpec::case(NoiseCase::from_id(args.case_id)?, args.seed);
    if let Some(v) = args.gaussian_std {
        spec.gaussian_std = v;
    }
    if let Some(v) = args.impulse_rate {
        spec.impulse_rate = v;
    }
    if let Some(v) = args.deadline_band_fraction {
        spec.deadline_band_fraction = v;
    }
    if let Some(v) = args.deadline_count {
        spec.deadline_count = v;
    }
    if let Some(v) = args.deadline_width {
        spec.deadline_width = v;
    }
    if let Some(v) = args.stripe_band_fraction {
        spec.stripe_band_fraction = v;
    }
    if let Some(v) = args.stripe_count {
        spec.stripe_count = v;
    }
    if let Some(v) = args.stripe_amplitude {
        spec.stripe_amplitude = v;
    }
    let noisy = make_case(&clean, &spec)?;
    write_tensor(&args.output, &noisy, args.dtype.into())?;
    if let Some(p) = &args.clean_output {
        write_tensor(p, &clean, args.dtype.into())?;
    }

    let mut kv = tool_header("simulate");
    match &args.input {
        Some(p) => kv.insert("run.input", absolute(p)),
        None => {
            let s = args.synthetic.unwrap();
            kv.insert("run.synthetic", join_list(&[s.0, s.1, s.2]));
            kv.insert("run.tubal_rank", args.tubal_rank);
        }
    }
    kv.insert("run.output", absolute(&args.output));
    if let Some(p) = &args.clean_output {
        kv.insert("run.clean_output", absolute(p));
    }
    kv.insert("run.dtype", format!("{:?}", args.dtype).to_lowercase());
    kv.extend(&spec.to_kv());
    kv.insert("result.psnr", psnr(&noisy, &clean)?);
    let manifest = args.manifest.clone().unwrap_or_else(|| default_manifest(&args.output));
    kv.write(&manifest)?;
    log::info!("wrote {} and {}", args.output.display(), manifest.display());
    Ok(())
}

/// Model configuration for an `h x w x b` input from the flags.
pub fn model_config(m: &ModelArgs, dims: (usize, usize, usize)) -> CliResult<ModelConfig> {
    let (h, w, b) = dims;
    let mut cfg = if let Some(inner) = &m.ranks {
        let mut c = ModelConfig::new(h, w, b);
        c.ranks = std::iter::once(w).chain(inner.iter().copied()).chain([h]).collect();
        c
    } else {
        let l = m.hmf_layers.unwrap_or(5);
        let base = m.rank_base.unwrap_or_else(|| default_rank_base(h, w));
        ModelConfig::with_rank_base(h, w, b, l, base)
    };
    if let Some(v) = m.hnt_layers {
        cfg.hnt_layers = v;
    }
    cfg.activation = match (m.activation, m.slope) {
        (Some(ActivationKind::Identity), Some(_)) => {
            return Err(CliError::Usage("--slope has no effect with --activation identity".into()))
        }
        (Some(ActivationKind::Identity), None) => Activation::identity(),
        (_, slope) => Activation::leaky_relu(slope.unwrap_or(Activation::default().slope)),
    };
    if let Some(v) = m.init {
        cfg.init = v;
    }
    if let Some(v) = m.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn solver_config(s: &SolverArgs) -> CliResult<SolverConfig> {
    let mut cfg = SolverConfig::default();
    macro_rules! set {
        ($($flag:ident => $($field:ident).+),*) => {
            $(if let Some(v) = s.$flag { cfg.$($field).+ = v; })*
        };
    }
    set!(alpha1 => alpha1, alpha2 => alpha2, alpha3 => alpha3, mu => mu,
         lr => adam.lr, beta1 => adam.beta1, beta2 => adam.beta2, eps => adam.eps,
         max_iters => max_iters, tol => tol, inner_adam_steps => inner_adam_steps);
    if s.no_rescale {
        cfg.rescale = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_diagnostics(path: &Path, records: &[IterationRecord]) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    writeln!(f, "{DIAGNOSTICS_HEADER}")?;
    for r in records {
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.iter,
            r.loss,
            r.fidelity,
            r.sparse_l1,
            r.residuals[0],
            r.residuals[1],
            r.residuals[2],
            r.residuals[3],
            r.rel_change,
            fmt_opt(r.psnr),
            r.seconds
        )?;
    }
    f.flush()?;
    Ok(())
}

pub fn denoise(args: &DenoiseArgs) -> CliResult<()> {
    let replay = match &args.from_manifest {
        Some(p) => {
            if args.model.any_set() || args.solver.any_set() || args.input.is_some() {
                return Err(CliError::Usage(
                    "--from-manifest cannot be combined with --input or model/solver flags".into(),
                ));
            }
            require_file(p, "manifest")?;
            let kv = KvMap::read(p)?;
            if kv.get("command") != Some("denoise") {
                return Err(CliError::Usage(format!("'{}' is not a denoise manifest", p.display())));
            }
            Some(kv)
        }
        None => None,
    };
    let input = match (&replay, &args.input) {
        (Some(kv), _) => PathBuf::from(kv.parse::<String>("run.input")?),
        (None, Some(p)) => p.clone(),
        (None, None) => return Err(CliError::Usage("--input is required".into())),
    };
    let y = load(&input, "input")?;
    let truth = args.truth.as_deref().map(|p| load(p, "truth")).transpose()?;
    let (model, solver) = match &replay {
        Some(kv) => (model_config_from_kv(kv)?, solver_config_from_kv(kv)?),
        None => (model_config(&args.model, y.dims())?, solver_config(&args.solver)?),
    };
    if model.shape != y.dims() {
        return Err(CliError::Usage(format!(
            "model shape {:?} does not match input {:?}",
            model.shape,
            y.dims()
        )));
    }
    log::info!(
        "denoising {:?} with ranks {:?}, m = {}, up to {} iterations",
        y.dims(),
        model.ranks,
        model.hnt_layers,
        solver.max_iters
    );

    let mut progress = |r: &IterationRecord| {
        if r.iter.is_multiple_of(100) {
            log::info!("iteration {}: loss {:.6e}, change {:.3e}", r.iter, r.loss, r.rel_change);
        }
    };
    let opts = RunOptions {
        truth: truth.as_ref(),
        on_iteration: Some(&mut progress),
    };
    let result = match run_with(&y, &model, &solver, opts) {
        Ok(r) => r,
        Err(Error::Diverged {
            iteration,
            reason,
            diagnostics,
        }) => {
            if let Some(p) = &args.diagnostics {
                write_diagnostics(p, &diagnostics)?;
            }
            return Err(Error::Diverged {
                iteration,
                reason,
                diagnostics,
            }
            .into());
        }
        Err(e) => return Err(e.into()),
    };

    let dtype = args.dtype.into();
    write_tensor(&args.output, &result.x, dtype)?;
    if let Some(p) = &args.sparse_output {
        write_tensor(p, &result.s, dtype)?;
    }
    if let Some(p) = &args.diagnostics {
        write_diagnostics(p, &result.diagnostics)?;
    }
    if let Some(dir) = &args.checkpoint {
        write_checkpoint(dir, &result.params, &model)?;
    }

    let mut kv = tool_header("denoise");
    kv.insert("run.input", absolute(&input));
    kv.insert("run.output", absolute(&args.output));
    if let Some(p) = &args.sparse_output {
        kv.insert("run.sparse_output", absolute(p));
    }
    if let Some(p) = &args.truth {
        kv.insert("run.truth", absolute(p));
    }
    kv.insert("run.dtype", format!("{:?}", args.dtype).to_lowercase());
    kv.extend(&model_config_to_kv(&model));
    kv.extend(&solver_config_to_kv(&solver));
    kv.insert("result.iterations", result.iterations);
    kv.insert("result.converged", result.converged);
    kv.insert("result.scaling_offset", result.scaling.offset);
    kv.insert("result.scaling_range", result.scaling.range);
    if let Some(t) = &truth {
        kv.insert("result.psnr_input", psnr(&y, t)?);
        kv.insert("result.psnr", psnr(&result.x, t)?);
        kv.insert("result.ssim", ssim(&result.x, t)?);
    }
    let manifest = args.manifest.clone().unwrap_or_else(|| default_manifest(&args.output));
    kv.write(&manifest)?;
    log::info!(
        "finished after {} iterations (converged: {})",
        result.iterations,
        result.converged
    );
    Ok(())
}

/// `psnr=<v>` and `ssim=<v>` lines.
pub fn metrics_text(x: &Tensor3, reference: &Tensor3) -> CliResult<String> {
    Ok(format!("psnr={:?}\nssim={:?}\n", psnr(x, reference)?, ssim(x, reference)?))
}

pub fn metrics(args: &MetricsArgs) -> CliResult<String> {
    let x = load(&args.x, "cube")?;
    let r = load(&args.reference, "reference")?;
    if x.dims() != r.dims() {
        return Err(CliError::Usage(format!(
            "cube {:?} and reference {:?} differ in size",
            x.dims(),
            r.dims()
        )));
    }
    metrics_text(&x, &r)
}

/// Labelled model configurations of a sweep.
pub fn suite_grid(suite: Suite, dims: (usize, usize, usize), seed: u64) -> Vec<(String, ModelConfig)> {
    let (h, w, b) = dims;
    let base = default_rank_base(h, w);
    let mut grid: Vec<(String, ModelConfig)> = match suite {
        Suite::HmfLayers => (2..=7)
            .map(|l| (format!("l={l}"), ModelConfig::with_rank_base(h, w, b, l, base)))
            .collect(),
        Suite::HntLayers => (0..=4)
            .map(|m| {
                let mut c = ModelConfig::new(h, w, b);
                c.hnt_layers = m;
                (format!("m={m}"), c)
            })
            .collect(),
        Suite::FactorSizes => (1..=20)
            .map(|k| {
                let c = ModelConfig::with_rank_base(h, w, b, 5, k);
                (format!("ranks={}", join_list(&c.ranks[1..5]).replace(',', "-")), c)
            })
            .collect(),
    };
    for (_, c) in &mut grid {
        c.seed = seed;
    }
    grid
}

fn suite_name(s: Suite) -> &'static str {
    match s {
        Suite::HmfLayers => "hmf-layers",
        Suite::HntLayers => "hnt-layers",
        Suite::FactorSizes => "factor-sizes",
    }
}

pub fn bench(args: &BenchArgs) -> CliResult<()> {
    let clean = match &args.input {
        Some(p) => load(p, "input")?,
        None => {
            let s = args.size;
            synthetic_low_tubal_rank(s.0, s.1, s.2, 2, args.seed)?
        }
    };
    let spec = NoiseSpec::case(NoiseCase::from_id(args.case_id)?, args.seed);
    let noisy = make_case(&clean, &spec)?;
    let solver = solver_config(&args.solver)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let name = suite_name(args.suite);
    let mut grid = suite_grid(args.suite, clean.dims(), args.seed);
    if let Some(n) = args.limit {
        grid.truncate(n);
    }
    let csv_path = args.out_dir.join(format!("{name}.csv"));
    let mut csv = BufWriter::new(File::create(&csv_path)?);
    writeln!(csv, "{BENCH_HEADER}")?;
    for (label, model) in &grid {
        let started = Instant::now();
        let row = match run_with(&noisy, model, &solver, RunOptions::default()) {
            Ok(r) => format!(
                "ok,{},{},{}",
                r.iterations,
                psnr(&r.x, &clean)?,
                ssim(&r.x, &clean)?
            ),
            Err(Error::Diverged { iteration, .. }) => format!("diverged,{iteration},,"),
            Err(e) => return Err(e.into()),
        };
        let secs = started.elapsed().as_secs_f64();
        log::info!("{name} {label}: {row} in {secs:.2}s");
        writeln!(csv, "{name},{label},{row},{secs}")?;
    }
    csv.flush()?;

    let mut kv = tool_header("bench");
    kv.insert("bench.suite", name);
    kv.insert("bench.points", grid.len());
    kv.insert("bench.csv", absolute(&csv_path));
    match &args.input {
        Some(p) => kv.insert("run.input", absolute(p)),
        None => {
            let s = args.size;
            kv.insert("run.synthetic", join_list(&[s.0, s.1, s.2]));
            kv.insert("run.tubal_rank", 2);
        }
    }
    kv.insert("run.seed", args.seed);
    kv.extend(&spec.to_kv());
    kv.extend(&solver_config_to_kv(&solver));
    kv.insert("result.psnr_input", psnr(&noisy, &clean)?);
    kv.write(&args.out_dir.join(format!("{name}.manifest")))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_of_identical_cubes() {
        let x = Tensor3::from_fn(12, 12, 2, |i, j, k| ((i * 7 + j * 3 + k) % 5) as f64 / 4.0);
        assert_eq!(metrics_text(&x, &x).unwrap(), "psnr=100.0\nssim=1.0\n");
    }

    #[test]
    fn grids_have_the_documented_points() {
        let dims = (32, 32, 8);
        let hmf = suite_grid(Suite::HmfLayers, dims, 1);
        assert_eq!(hmf.len(), 6);
        assert_eq!(hmf.iter().map(|(_, c)| c.hmf_layers()).collect::<Vec<_>>(), [2, 3, 4, 5, 6, 7]);
        let hnt = suite_grid(Suite::HntLayers, dims, 1);
        assert_eq!(hnt.iter().map(|(_, c)| c.hnt_layers).collect::<Vec<_>>(), [0, 1, 2, 3, 4]);
        let sizes = suite_grid(Suite::FactorSizes, dims, 1);
        assert_eq!(sizes.len(), 20);
        assert_eq!(sizes[0].0, "ranks=1-2-4-8");
        assert_eq!(sizes[19].1.ranks, [32, 20, 40, 80, 160, 32]);
        assert!(sizes.iter().all(|(_, c)| c.seed == 1 && c.validate().is_ok()));
    }

    #[test]
    fn unset_flags_give_library_defaults() {
        assert_eq!(solver_config(&SolverArgs::default()).unwrap(), SolverConfig::default());
        assert_eq!(model_config(&ModelArgs::default(), (16, 12, 4)).unwrap(), ModelConfig::new(16, 12, 4));
    }

    #[test]
    fn explicit_ranks_replace_the_pattern() {
        let m = ModelArgs {
            ranks: Some(vec![3, 5]),
            hnt_layers: Some(0),
            ..ModelArgs::default()
        };
        let c = model_config(&m, (6, 7, 2)).unwrap();
        assert_eq!(c.ranks, [7, 3, 5, 6]);
        assert_eq!(c.hnt_layers, 0);
    }

    #[test]
    fn slope_with_identity_is_a_usage_error() {
        let m = ModelArgs {
            activation: Some(ActivationKind::Identity),
            slope: Some(0.2),
            ..ModelArgs::default()
        };
        assert!(matches!(model_config(&m, (4, 4, 2)), Err(CliError::Usage(_))));
    }

    #[test]
    fn invalid_solver_values_are_rejected() {
        let s = SolverArgs {
            mu: Some(-1.0),
            ..SolverArgs::default()
        };
        assert!(solver_config(&s).is_err());
    }

    #[test]
    fn diagnostics_csv_has_one_row_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let rec = IterationRecord {
            iter: 1,
            loss: 2.0,
            fidelity: 1.0,
            sparse_l1: 0.5,
            residuals: [0.1, 0.2, 0.3, 0.4],
            rel_change: 0.01,
            psnr: None,
            seconds: 0.0,
        };
        write_diagnostics(&path, &[rec.clone(), IterationRecord { iter: 2, psnr: Some(20.0), ..rec }]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], DIAGNOSTICS_HEADER);
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[1], "1,2,1,0.5,0.1,0.2,0.3,0.4,0.01,,0");
        assert!(lines[2].ends_with(",20,0"));
    }
}
