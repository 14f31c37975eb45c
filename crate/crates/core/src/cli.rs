//! Command-line front end for the `phasebit` binary.
//!
//! Exit codes: 0 success, 1 usage or parameter error, 2 I/O or file format
//! error, 3 a reconstruction stopped without converging.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::baselines::{reconstruct_biht_si, reconstruct_col, BihtConfig, ColConfig};
use crate::error::{Error, Result};
use crate::experiment::{
    acquire, benchmark_dir, center_crop, default_prior_dir, run_compare_experiment,
    run_slope_experiment, ExperimentPlan, Method, PriorCache,
};
use crate::geometry::{PaddedCanvas, SamplingMode, SpatialImage};
use crate::metrics::{format_metric, QualityReport, SsimParams};
use crate::noise::NoiseModel;
use crate::pgm::{read_pgm, write_pgm};
use crate::reconstruct::{
    default_epsilon, reconstruct_one_bit, reconstruct_two_bit, GammaPolicy, IterationConfig,
    ReconstructionResult, DEFAULT_GAMMA_FRACTION, DEFAULT_MAX_ITERS,
};
use crate::sampling::{read_bits, write_bits};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "phasebit", version, about = "Image recovery from one-bit and two-bit DFT sign samples")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw sign samples of an image's padded spectrum and write a PBIT file.
    Sample(SampleArgs),
    /// Reconstruct one image, from a PBIT file or from fresh samples.
    Reconstruct(ReconstructArgs),
    /// MSE decay against oversampling, with a log-log slope fit.
    Slope(SlopeArgs),
    /// All methods at an equal bit budget, with quality tables.
    Compare(CompareArgs),
    /// Quality metrics between a reference and an estimate.
    Metrics(MetricsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    OneBit,
    TwoBit,
}

impl From<ModeArg> for SamplingMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::OneBit => SamplingMode::OneBit,
            ModeArg::TwoBit => SamplingMode::TwoBit,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct NoiseArgs {
    /// Comparator noise variance.
    #[arg(long, default_value_t = 100.0)]
    pub sigma2: f64,
    /// Dither variance added to the comparator noise.
    #[arg(long, default_value_t = 0.0)]
    pub dither_sigma2: f64,
}

impl NoiseArgs {
    fn model(&self) -> Result<NoiseModel> {
        NoiseModel::gaussian(self.sigma2, self.dither_sigma2)
    }
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Explicit step size.
    #[arg(long, conflicts_with = "gamma_frac")]
    pub gamma: Option<f64>,
    /// Step size as a fraction of its upper bound.
    #[arg(long)]
    pub gamma_frac: Option<f64>,
    /// Residual threshold (default 1e-3 * 255 * N).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERS)]
    pub max_iters: usize,
}

impl SolverArgs {
    fn policy(&self) -> GammaPolicy {
        match (self.gamma, self.gamma_frac) {
            (Some(g), _) => GammaPolicy::Explicit(g),
            (None, Some(r)) => GammaPolicy::FractionOfBound(r),
            (None, None) => GammaPolicy::FractionOfBound(DEFAULT_GAMMA_FRACTION),
        }
    }
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Center-crop the image to this side first.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "one-bit")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Reference image: sampled when no bit file is given, and used for the
    /// quality report.
    #[arg(long, required_unless_present = "bits")]
    pub image: Option<PathBuf>,
    /// Previously written PBIT file.
    #[arg(long, requires = "m")]
    pub bits: Option<PathBuf>,
    /// Image side. Defaults to the reference image side.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, required_unless_present = "bits")]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value = "one-bit")]
    pub mode: ModeArg,
    /// algo1, algo2, col or biht-si. Defaults to the algorithm for `--mode`.
    #[arg(long)]
    pub method: Option<String>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corpus for the COL magnitude prior.
    #[arg(long)]
    pub prior_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SlopeArgs {
    /// Comma-separated PGM paths (default: the bundled cameraman).
    #[arg(long, value_delimiter = ',')]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 32)]
    pub m: usize,
    #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024")]
    pub n_list: Vec<usize>,
    /// `a..b`, a single seed, or a comma-separated list.
    #[arg(long, default_value = "0..10")]
    pub seeds: String,
    #[arg(long, value_delimiter = ',', default_value = "algo1,algo2")]
    pub methods: Vec<String>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Comma-separated PGM paths (default: the bundled Lena).
    #[arg(long, value_delimiter = ',')]
    pub images: Vec<PathBuf>,
    #[arg(long, default_value_t = 128)]
    pub m: usize,
    /// One-bit side; two-bit runs use the equal-budget side.
    #[arg(long, default_value_t = 2048)]
    pub n: usize,
    #[arg(long, default_value = "0")]
    pub seeds: String,
    #[arg(long, value_delimiter = ',', default_value = "algo1,algo2,col,biht-si")]
    pub methods: Vec<String>,
    #[arg(long)]
    pub prior_dir: Option<PathBuf>,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    #[arg(long)]
    pub reference: PathBuf,
    #[arg(long)]
    pub estimate: PathBuf,
    /// Method label for the output row.
    #[arg(long, default_value = "-")]
    pub method: String,
    /// Write the row to this CSV instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses a seed list: `a..b`, `a`, or `a,b,c`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidParameter(format!("bad seed list `{text}`"));
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        (a..b).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_>>()?
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    Ok(seeds)
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    let mut methods: Vec<Method> = names.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    methods.sort();
    methods.dedup();
    Ok(methods)
}

/// Maps an error to its exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) | Error::Csv(_) | Error::Format { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Sample(a) => sample(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Slope(a) => slope(a),
        Command::Compare(a) => compare(a),
        Command::Metrics(a) => metrics(a),
    }
}

fn load_reference(path: &Path, m: Option<usize>) -> Result<SpatialImage> {
    let image = read_pgm(path)?;
    match m {
        Some(m) => center_crop(&image, m),
        None => Ok(image),
    }
}

fn sample(a: SampleArgs) -> Result<i32> {
    let image = load_reference(&a.image, a.m)?;
    let (_, bits) = acquire(&image, a.n, a.mode.into(), &a.noise.model()?, a.seed)?;
    let mut out = BufWriter::new(File::create(&a.out).map_err(|e| Error::io_at(&a.out, e))?);
    write_bits(&bits, &mut out)?;
    println!(
        "wrote {} ({} mode, N={}, {} bits)",
        a.out.display(),
        bits.mode(),
        bits.n(),
        bits.drawn_bits()
    );
    Ok(0)
}

fn reconstruct(a: ReconstructArgs) -> Result<i32> {
    let noise = a.noise.model()?;
    let reference = a.image.as_deref().map(|p| load_reference(p, a.m)).transpose()?;
    let (canvas, bits) = match &a.bits {
        Some(path) => {
            let bits = read_bits(BufReader::new(File::open(path).map_err(|e| Error::io_at(path, e))?))?;
            let m = a.m.expect("clap requires --m with --bits");
            let placeholder = match &reference {
                Some(r) if r.m() == m => r.clone(),
                Some(r) => {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        actual: r.m(),
                    })
                }
                None => SpatialImage::zeros(m)?,
            };
            (PaddedCanvas::new(placeholder, bits.n(), bits.mode())?, bits)
        }
        None => {
            let image = reference.clone().expect("clap requires --image without --bits");
            let n = a.n.expect("clap requires --n without --bits");
            acquire(&image, n, a.mode.into(), &noise, a.seed)?
        }
    };
    let mode = canvas.mode();
    let method = match &a.method {
        Some(name) => name.parse()?,
        None if mode == SamplingMode::TwoBit => Method::Algo2,
        None => Method::Algo1,
    };
    if method.mode() != mode {
        return Err(Error::Mode(format!("{method} needs {} samples, got {mode}", method.mode())));
    }
    let n = canvas.n();
    let epsilon = a.solver.epsilon.unwrap_or_else(|| default_epsilon(n));
    let result: ReconstructionResult = match method {
        Method::Algo1 | Method::Algo2 => {
            let cfg = IterationConfig::new(&noise, a.solver.policy(), n)?
                .with_epsilon(epsilon)
                .with_max_iters(a.solver.max_iters);
            if method == Method::Algo1 {
                reconstruct_one_bit(&bits, &noise, &cfg, &canvas)?
            } else {
                reconstruct_two_bit(&bits, &noise, &cfg, &canvas)?
            }
        }
        Method::Col => {
            let dir = a.prior_dir.clone().unwrap_or_else(default_prior_dir);
            let prior = PriorCache::default().prior_for(&dir, &canvas)?;
            let mut cfg = ColConfig::new(prior, epsilon)?;
            cfg.max_iters = a.solver.max_iters;
            reconstruct_col(&bits, &cfg, &canvas)?
        }
        Method::BihtSi => {
            let mut cfg = BihtConfig::new(canvas.mask().clone(), epsilon);
            cfg.max_iters = a.solver.max_iters;
            reconstruct_biht_si(&bits, &cfg, &canvas)?.result
        }
    };

    std::fs::create_dir_all(&a.out)?;
    write_pgm(&a.out.join("estimate.pgm"), &result.estimate)?;
    let mut w = csv::Writer::from_path(a.out.join("residuals.csv"))?;
    for entry in &result.residual_trace {
        w.serialize(entry)?;
    }
    w.flush()?;
    println!(
        "{method}: {:?} after {} iterations, final residual {}",
        result.termination,
        result.iterations,
        result.final_residual().map(format_metric).unwrap_or_else(|| "-".into())
    );
    if let Some(reference) = &reference {
        let stored = read_pgm(&a.out.join("estimate.pgm"))?;
        let params = SsimParams::default().fitted_to(reference.m());
        let report = QualityReport::compute(reference, &stored, &params)?;
        let name = a.image.as_deref().map(image_label).unwrap_or_default();
        write_quality_csv(&a.out.join("quality.csv"), &name, &method.to_string(), &report)?;
        println!("psnr {} dB, ssim {}", format_metric(report.psnr), format_metric(report.ssim));
    }
    Ok(if result.converged() { 0 } else { EXIT_NOT_CONVERGED })
}

fn image_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

pub const QUALITY_HEADER: [&str; 6] = ["image", "method", "psnr", "ssim", "essim", "ms_ssim"];

fn quality_fields(image: &str, method: &str, q: &QualityReport) -> [String; 6] {
    [
        image.to_string(),
        method.to_string(),
        format_metric(q.psnr),
        format_metric(q.ssim),
        format_metric(q.essim),
        format_metric(q.ms_ssim),
    ]
}

fn write_quality_csv(path: &Path, image: &str, method: &str, q: &QualityReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(QUALITY_HEADER)?;
    w.write_record(quality_fields(image, method, q))?;
    w.flush()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn plan_from(
    images: &[PathBuf],
    default_image: &str,
    m: usize,
    n_list: Vec<usize>,
    seeds: &str,
    methods: &[String],
    noise: &NoiseArgs,
    solver: &SolverArgs,
    out: &Path,
) -> Result<ExperimentPlan> {
    let images = if images.is_empty() {
        vec![benchmark_dir().join(default_image)]
    } else {
        images.to_vec()
    };
    let mut plan = ExperimentPlan::new(images, m, n_list, out.to_path_buf());
    plan.seeds = parse_seeds(seeds)?;
    plan.methods = parse_methods(methods)?;
    plan.sigma2 = noise.sigma2;
    plan.dither_sigma2 = noise.dither_sigma2;
    plan.gamma_policy = solver.policy();
    plan.epsilon = solver.epsilon;
    plan.max_iters = solver.max_iters;
    Ok(plan)
}

fn count_unconverged(outputs: &[crate::experiment::CellOutput]) -> usize {
    outputs.iter().filter(|o| !o.result.converged()).count()
}

fn slope(a: SlopeArgs) -> Result<i32> {
    let plan = plan_from(
        &a.images,
        "cameraman.pgm",
        a.m,
        a.n_list.clone(),
        &a.seeds,
        &a.methods,
        &a.noise,
        &a.solver,
        &a.out,
    )?;
    let report = run_slope_experiment(&plan)?;
    for fit in &report.fits {
        match fit.decay() {
            Some(d) => println!("{} {}: decay {}", fit.image, fit.method, format_metric(d)),
            None => println!("{} {}: DEGENERATE_FIT", fit.image, fit.method),
        }
    }
    Ok(finish(count_unconverged(&report.outputs), report.outputs.len()))
}

fn compare(a: CompareArgs) -> Result<i32> {
    let mut plan = plan_from(
        &a.images,
        "lena.pgm",
        a.m,
        vec![a.n],
        &a.seeds,
        &a.methods,
        &a.noise,
        &a.solver,
        &a.out,
    )?;
    plan.save_estimates = true;
    if let Some(dir) = a.prior_dir {
        plan.prior_dir = dir;
    }
    let report = run_compare_experiment(&plan)?;
    for row in &report.rows {
        println!(
            "{} {} n={}: psnr {} ssim {} essim {} ms_ssim {}",
            row.image,
            row.method,
            row.n,
            format_metric(row.quality.psnr),
            format_metric(row.quality.ssim),
            format_metric(row.quality.essim),
            format_metric(row.quality.ms_ssim)
        );
    }
    Ok(finish(count_unconverged(&report.outputs), report.outputs.len()))
}

fn finish(unconverged: usize, total: usize) -> i32 {
    if unconverged == 0 {
        0
    } else {
        eprintln!("warning: {unconverged} of {total} runs stopped without converging");
        EXIT_NOT_CONVERGED
    }
}

fn metrics(a: MetricsArgs) -> Result<i32> {
    let reference = read_pgm(&a.reference)?;
    let estimate = read_pgm(&a.estimate)?;
    let params = SsimParams::default().fitted_to(reference.m());
    let report = QualityReport::compute(&reference, &estimate, &params)?;
    let name = image_label(&a.reference);
    match &a.out {
        Some(path) => write_quality_csv(path, &name, &a.method, &report)?,
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout());
            w.write_record(QUALITY_HEADER)?;
            w.write_record(quality_fields(&name, &a.method, &report))?;
            w.flush()?;
        }
    }
    Ok(0)
}
