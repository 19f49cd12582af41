use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use h2tf::io::Dtype;
use h2tf::model::{ActivationKind, InitScale};
use h2tf::noise::CountRange;

#[derive(Debug, Parser)]
#[command(name = "h2tf", version, about = "Hyperspectral denoising with hybrid hierarchical tensor factorization")]
pub struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Corrupt a clean cube with one of the five noise cases.
    Simulate(SimulateArgs),
    /// Denoise a cube.
    Denoise(DenoiseArgs),
    /// Print PSNR and SSIM of a cube against a reference.
    Metrics(MetricsArgs),
    /// Run a parameter sweep and write a CSV of the results.
    Bench(BenchArgs),
}

/// Cube size given as `H,W,B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims3(pub usize, pub usize, pub usize);

impl std::str::FromStr for Dims3 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let v: Vec<usize> = s
            .split(',')
            .map(|p| p.trim().parse::<usize>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<_, _>>()?;
        match v[..] {
            [h, w, b] if h > 0 && w > 0 && b > 0 => Ok(Dims3(h, w, b)),
            _ => Err(format!("expected three positive sizes H,W,B, got '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DtypeArg {
    F32,
    F64,
}

impl From<DtypeArg> for Dtype {
    fn from(d: DtypeArg) -> Self {
        match d {
            DtypeArg::F32 => Dtype::F32,
            DtypeArg::F64 => Dtype::F64,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Clean input cube.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,

    /// Generate a clean low-tubal-rank cube of size H,W,B instead of reading one.
    #[arg(long, value_name = "H,W,B")]
    pub synthetic: Option<Dims3>,

    /// Tubal rank of the synthetic cube.
    #[arg(long, default_value_t = 2, requires = "synthetic")]
    pub tubal_rank: usize,

    /// Where to write the generated clean cube.
    #[arg(long, requires = "synthetic")]
    pub clean_output: Option<PathBuf>,

    /// Corrupted output cube.
    #[arg(long)]
    pub output: PathBuf,

    /// Noise case, 1 to 5.
    #[arg(long = "case", default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..=5))]
    pub case_id: u32,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long)]
    pub gaussian_std: Option<f64>,
    #[arg(long)]
    pub impulse_rate: Option<f64>,
    #[arg(long)]
    pub deadline_band_fraction: Option<f64>,
    /// Deadlines per affected band, as LOW..HIGH.
    #[arg(long)]
    pub deadline_count: Option<CountRange>,
    /// Deadline widths, as LOW..HIGH.
    #[arg(long)]
    pub deadline_width: Option<CountRange>,
    #[arg(long)]
    pub stripe_band_fraction: Option<f64>,
    /// Stripes per affected band, as LOW..HIGH.
    #[arg(long)]
    pub stripe_count: Option<CountRange>,
    #[arg(long)]
    pub stripe_amplitude: Option<f64>,

    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,

    /// Manifest path; defaults to `<output>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

/// Model hyperparameters. Unset flags take the library defaults.
#[derive(Debug, Args, Default, Clone)]
pub struct ModelArgs {
    /// Inner ranks r_1..r_{l-1}, comma separated. Overrides --rank-base and --hmf-layers.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["rank_base", "hmf_layers"])]
    pub ranks: Option<Vec<usize>>,
    /// Smallest inner rank k of the doubling pattern k, 2k, 4k, ...
    #[arg(long)]
    pub rank_base: Option<usize>,
    /// Number of factors l.
    #[arg(long)]
    pub hmf_layers: Option<usize>,
    /// Number of spectral transforms m.
    #[arg(long)]
    pub hnt_layers: Option<usize>,
    #[arg(long)]
    pub activation: Option<ActivationKind>,
    #[arg(long)]
    pub slope: Option<f64>,
    /// `fan-in` or `fixed:<std>`.
    #[arg(long)]
    pub init: Option<InitScale>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ModelArgs {
    pub fn any_set(&self) -> bool {
        self.ranks.is_some()
            || self.rank_base.is_some()
            || self.hmf_layers.is_some()
            || self.hnt_layers.is_some()
            || self.activation.is_some()
            || self.slope.is_some()
            || self.init.is_some()
            || self.seed.is_some()
    }
}

/// Solver hyperparameters. Unset flags take the library defaults.
#[derive(Debug, Args, Default, Clone)]
pub struct SolverArgs {
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub alpha3: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub inner_adam_steps: Option<usize>,
    /// Solve on the raw values instead of min-max scaling to [0, 1].
    #[arg(long)]
    pub no_rescale: bool,
}

impl SolverArgs {
    pub fn any_set(&self) -> bool {
        self.alpha1.is_some()
            || self.alpha2.is_some()
            || self.alpha3.is_some()
            || self.mu.is_some()
            || self.lr.is_some()
            || self.beta1.is_some()
            || self.beta2.is_some()
            || self.eps.is_some()
            || self.max_iters.is_some()
            || self.tol.is_some()
            || self.inner_adam_steps.is_some()
            || self.no_rescale
    }
}

#[derive(Debug, Args)]
pub struct DenoiseArgs {
    /// Noisy input cube. Taken from the manifest with --from-manifest.
    #[arg(long, required_unless_present = "from_manifest")]
    pub input: Option<PathBuf>,

    /// Denoised output cube.
    #[arg(long)]
    pub output: PathBuf,

    /// Sparse component output.
    #[arg(long)]
    pub sparse_output: Option<PathBuf>,

    /// Per-iteration diagnostics CSV.
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,

    /// Clean reference; adds per-iteration PSNR to the diagnostics.
    #[arg(long)]
    pub truth: Option<PathBuf>,

    /// Directory for a parameter checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    /// Repeat the run recorded in a denoise manifest. Excludes model and solver flags.
    #[arg(long)]
    pub from_manifest: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "f64")]
    pub dtype: DtypeArg,

    /// Manifest path; defaults to `<output>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,

    #[command(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    pub solver: SolverArgs,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Cube to score.
    #[arg(long)]
    pub x: PathBuf,
    /// Reference cube.
    #[arg(long = "reference", alias = "ref")]
    pub reference: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    /// Number of factors l = 2..7.
    HmfLayers,
    /// Number of transforms m = 0..4.
    HntLayers,
    /// Inner ranks (k, 2k, 4k, 8k) for k = 1..20.
    FactorSizes,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,

    #[arg(long)]
    pub out_dir: PathBuf,

    /// Clean cube to corrupt; a synthetic one is generated when absent.
    #[arg(long, conflicts_with = "size")]
    pub input: Option<PathBuf>,

    /// Size H,W,B of the synthetic cube.
    #[arg(long, value_name = "H,W,B", default_value = "32,32,8")]
    pub size: Dims3,

    /// Noise case used for every grid point.
    #[arg(long = "case", default_value_t = 5, value_parser = clap::value_parser!(u32).range(1..=5))]
    pub case_id: u32,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Run only the first N grid points.
    #[arg(long)]
    pub limit: Option<usize>,

    #[command(flatten)]
    pub solver: SolverArgs,
}
