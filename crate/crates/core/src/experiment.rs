//! Experiment harness: sweeps over images, sizes, seeds and methods, with
//! deterministic CSV and SVG output.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use ndarray::Array2;
use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{
    load_corpus, magnitude_prior, reconstruct_biht_si, reconstruct_col, BihtConfig,
    ColConfig,
};
use crate::error::{Error, Result};
use crate::geometry::{PaddedCanvas, SamplingMode, SpatialImage};
use crate::metrics::{format_metric, mse, QualityReport, SsimParams};
use crate::noise::NoiseModel;
use crate::pgm::{read_pgm, write_pgm};
use crate::reconstruct::{
    default_epsilon, reconstruct_one_bit, reconstruct_two_bit, select_gamma, GammaPolicy,
    IterationConfig, ReconstructionResult, Termination, DEFAULT_MAX_ITERS,
};
use crate::sampling::{sample_bits, BitSample};
use crate::transform::dft2;

pub const THREADS_ENV: &str = "PHASEBIT_THREADS";

/// Bundled corpus for the COL magnitude prior.
pub fn default_prior_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/prior")
}

/// Bundled benchmark images.
pub fn benchmark_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/benchmark")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Method {
    Algo1,
    Algo2,
    Col,
    BihtSi,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Algo1, Method::Algo2, Method::Col, Method::BihtSi];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Algo1 => "algo1",
            Method::Algo2 => "algo2",
            Method::Col => "col",
            Method::BihtSi => "biht_si",
        }
    }

    pub fn mode(self) -> SamplingMode {
        match self {
            Method::Algo2 => SamplingMode::TwoBit,
            _ => SamplingMode::OneBit,
        }
    }

    pub fn is_baseline(self) -> bool {
        matches!(self, Method::Col | Method::BihtSi)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "algo1" | "one_bit" => Ok(Method::Algo1),
            "algo2" | "two_bit" => Ok(Method::Algo2),
            "col" => Ok(Method::Col),
            "biht_si" | "biht" => Ok(Method::BihtSi),
            other => Err(Error::InvalidParameter(format!("unknown method `{other}`"))),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Two-bit side with the same bit budget as a one-bit side `n`: the nearest
/// even integer not above `n/√2`.
pub fn two_bit_size(n: usize) -> usize {
    let raw = (n as f64 / std::f64::consts::SQRT_2).floor() as usize;
    raw - raw % 2
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub images: Vec<PathBuf>,
    pub m: usize,
    pub n_list: Vec<usize>,
    pub sigma2: f64,
    pub dither_sigma2: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    pub gamma_policy: GammaPolicy,
    /// `None` uses the default threshold for each size.
    pub epsilon: Option<f64>,
    pub max_iters: usize,
    /// Two-bit runs use `two_bit_size(n)` instead of `n`.
    pub equal_bit_budget: bool,
    pub prior_dir: PathBuf,
    /// Write every estimate as a PGM.
    pub save_estimates: bool,
}

impl ExperimentPlan {
    pub fn new(images: Vec<PathBuf>, m: usize, n_list: Vec<usize>, output_dir: PathBuf) -> Self {
        Self {
            images,
            m,
            n_list,
            sigma2: 100.0,
            dither_sigma2: 0.0,
            seeds: vec![0],
            methods: vec![Method::Algo1, Method::Algo2],
            output_dir,
            gamma_policy: GammaPolicy::default(),
            epsilon: None,
            max_iters: DEFAULT_MAX_ITERS,
            equal_bit_budget: false,
            prior_dir: default_prior_dir(),
            save_estimates: false,
        }
    }

    pub fn noise(&self) -> Result<NoiseModel> {
        NoiseModel::gaussian(self.sigma2, self.dither_sigma2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::InvalidParameter("no input images".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidParameter("seed list is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidParameter("method list is empty".into()));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "n_list must be non-empty and strictly ascending".into(),
            ));
        }
        let window = SsimParams::default().window;
        if self.m < window {
            return Err(Error::InvalidParameter(format!(
                "M = {} is below the {window}-pixel quality-metric window",
                self.m
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        let noise = self.noise()?;
        select_gamma(&noise, self.gamma_policy)?;
        for &n in &self.n_list {
            for method in &self.methods {
                method.mode().check_sizes(self.m, self.size_for(*method, n))?;
            }
        }
        Ok(())
    }

    pub fn size_for(&self, method: Method, n: usize) -> usize {
        if self.equal_bit_budget && method == Method::Algo2 {
            two_bit_size(n)
        } else {
            n
        }
    }
}

/// One row of `runs.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub image: String,
    pub method: Method,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub sigma2: f64,
    pub dither_sigma2: f64,
    pub gamma: f64,
    pub gamma_fraction: Option<f64>,
    pub epsilon: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub final_residual: f64,
    pub bits_drawn: usize,
    pub quality: QualityReport,
    pub alpha_working: f64,
    pub alpha_full: f64,
}

impl RunRecord {
    pub const HEADER: [&'static str; 21] = [
        "image",
        "method",
        "m",
        "n",
        "seed",
        "sigma2",
        "dither_sigma2",
        "gamma",
        "gamma_fraction",
        "epsilon",
        "iterations",
        "termination",
        "final_residual",
        "bits_drawn",
        "mse",
        "psnr",
        "ssim",
        "essim",
        "ms_ssim",
        "alpha_working",
        "alpha_full",
    ];

    fn fields(&self) -> Vec<String> {
        let q = &self.quality;
        vec![
            self.image.clone(),
            self.method.to_string(),
            self.m.to_string(),
            self.n.to_string(),
            self.seed.to_string(),
            format_metric(self.sigma2),
            format_metric(self.dither_sigma2),
            format_metric(self.gamma),
            self.gamma_fraction.map(format_metric).unwrap_or_default(),
            format_metric(self.epsilon),
            self.iterations.to_string(),
            format!("{:?}", self.termination),
            format_metric(self.final_residual),
            self.bits_drawn.to_string(),
            format_metric(q.mse),
            format_metric(q.psnr),
            format_metric(q.ssim),
            format_metric(q.essim),
            format_metric(q.ms_ssim),
            format_metric(self.alpha_working),
            format_metric(self.alpha_full),
        ]
    }

    fn key(&self) -> (String, Method, usize, u64) {
        (self.image.clone(), self.method, self.n, self.seed)
    }
}

fn image_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Center crop of `image` to side `m` (no-op when already that size).
pub fn center_crop(image: &SpatialImage, m: usize) -> Result<SpatialImage> {
    if image.m() < m {
        return Err(Error::Dimension(format!(
            "image side {} is smaller than M = {m}",
            image.m()
        )));
    }
    let offset = (image.m() - m) / 2;
    image.crop(offset, offset, m)
}

/// Sign samples of `image` placed on an `n`-sided canvas.
pub fn acquire(
    image: &SpatialImage,
    n: usize,
    mode: SamplingMode,
    noise: &NoiseModel,
    seed: u64,
) -> Result<(PaddedCanvas, BitSample)> {
    let canvas = PaddedCanvas::new(image.clone(), n, mode)?;
    let spectrum = dft2(&canvas.canvas())?;
    let bits = sample_bits(&spectrum, noise, seed, mode)?;
    Ok((canvas, bits))
}

/// Output of one experiment cell.
#[derive(Debug, Clone)]
pub struct CellOutput {
    pub record: RunRecord,
    pub estimate: SpatialImage,
    pub result: ReconstructionResult,
}

/// Caches magnitude priors per `(m, n)`.
#[derive(Debug, Default)]
pub struct PriorCache {
    corpus: Mutex<Option<Vec<SpatialImage>>>,
    priors: Mutex<BTreeMap<(usize, usize), Array2<f64>>>,
}

impl PriorCache {
    pub fn prior_for(&self, dir: &Path, canvas: &PaddedCanvas) -> Result<Array2<f64>> {
        let key = (canvas.m(), canvas.n());
        if let Some(p) = self.priors.lock().unwrap().get(&key) {
            return Ok(p.clone());
        }
        let corpus = {
            let mut guard = self.corpus.lock().unwrap();
            if guard.is_none() {
                *guard = Some(load_corpus(dir)?);
            }
            guard.clone().unwrap()
        };
        let prior = magnitude_prior(&corpus, canvas.mask())?;
        self.priors.lock().unwrap().insert(key, prior.clone());
        Ok(prior)
    }
}

/// Runs one method on one image at one size and seed.
pub fn run_cell(
    plan: &ExperimentPlan,
    image_label: &str,
    image: &SpatialImage,
    method: Method,
    n: usize,
    seed: u64,
    priors: &PriorCache,
) -> Result<CellOutput> {
    let noise = plan.noise()?;
    let n_run = plan.size_for(method, n);
    let (canvas, bits) = acquire(image, n_run, method.mode(), &noise, seed)?;
    let epsilon = plan.epsilon.unwrap_or_else(|| default_epsilon(n_run));
    let cfg = IterationConfig::new(&noise, plan.gamma_policy, n_run)?
        .with_epsilon(epsilon)
        .with_max_iters(plan.max_iters);
    let result = match method {
        Method::Algo1 => reconstruct_one_bit(&bits, &noise, &cfg, &canvas)?,
        Method::Algo2 => reconstruct_two_bit(&bits, &noise, &cfg, &canvas)?,
        Method::Col => {
            let mut col = ColConfig::new(priors.prior_for(&plan.prior_dir, &canvas)?, epsilon)?;
            col.max_iters = plan.max_iters;
            reconstruct_col(&bits, &col, &canvas)?
        }
        Method::BihtSi => {
            let mut biht = BihtConfig::new(canvas.mask().clone(), epsilon);
            biht.max_iters = plan.max_iters;
            reconstruct_biht_si(&bits, &biht, &canvas)?.result
        }
    };
    let mut estimate = result.estimate.clone();
    if plan.save_estimates {
        // metrics are computed on the stored 8-bit levels so they can be
        // recomputed from the files
        estimate = SpatialImage::from_clamped(estimate.pixels().mapv(f64::round))?;
    }
    let params = SsimParams::default().fitted_to(image.m());
    let quality = QualityReport::compute(image, &estimate, &params)?;
    let gamma_fraction = match (method, plan.gamma_policy) {
        (Method::Algo1 | Method::Algo2, GammaPolicy::FractionOfBound(rho)) => Some(rho),
        _ => None,
    };
    let record = RunRecord {
        image: image_label.to_string(),
        method,
        m: image.m(),
        n: n_run,
        seed,
        sigma2: plan.sigma2,
        dither_sigma2: plan.dither_sigma2,
        gamma: if method.is_baseline() { f64::NAN } else { result.gamma },
        gamma_fraction,
        epsilon,
        iterations: result.iterations,
        termination: result.termination,
        final_residual: result.final_residual().unwrap_or(f64::NAN),
        bits_drawn: bits.drawn_bits(),
        quality,
        alpha_working: result.alpha_diag.working,
        alpha_full: result.alpha_diag.full,
    };
    Ok(CellOutput {
        record,
        estimate,
        result,
    })
}

/// Worker pool sized by `PHASEBIT_THREADS` (all cores when unset).
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            Error::InvalidParameter(format!("{THREADS_ENV} must be a positive integer, got `{v}`"))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))
}

/// Loads and crops every plan image.
pub fn load_images(plan: &ExperimentPlan) -> Result<Vec<(String, SpatialImage)>> {
    plan.images
        .iter()
        .map(|p| Ok((image_name(p), center_crop(&read_pgm(p)?, plan.m)?)))
        .collect()
}

/// Runs every `(image, method, n, seed)` cell; records come back sorted.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<CellOutput>> {
    plan.validate()?;
    let images = load_images(plan)?;
    let mut jobs = Vec::new();
    for (label, image) in &images {
        for &method in &plan.methods {
            for &n in &plan.n_list {
                for &seed in &plan.seeds {
                    jobs.push((label.as_str(), image, method, n, seed));
                }
            }
        }
    }
    let priors = PriorCache::default();
    let pool = worker_pool()?;
    let mut outputs: Vec<CellOutput> = pool.install(|| {
        jobs.par_iter()
            .map(|&(label, image, method, n, seed)| run_cell(plan, label, image, method, n, seed, &priors))
            .collect::<Result<Vec<_>>>()
    })?;
    outputs.sort_by_key(|o| o.record.key());
    Ok(outputs)
}

pub fn write_runs_csv(path: &Path, records: &[&RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RunRecord::HEADER)?;
    for r in records {
        w.write_record(r.fields())?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Slope experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub image: String,
    pub method: Method,
    pub m: usize,
    /// `(N, mean MSE over seeds)` for every size.
    pub points: Vec<(usize, f64)>,
    /// Least-squares slope of `log10(MSE)` against `log10(N/M)` over the
    /// largest half of the sizes; `None` when the fit is degenerate.
    pub slope: Option<f64>,
    pub fit_sizes: Vec<usize>,
}

impl SlopeFit {
    /// Decay exponent, `-slope`.
    pub fn decay(&self) -> Option<f64> {
        self.slope.map(|s| -s)
    }
}

/// Ordinary least-squares slope of `ys` against `xs`.
pub fn least_squares_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    slope.is_finite().then_some(slope)
}

/// Groups records by `(image, method)` and fits the decay slope.
pub fn fit_slopes(records: &[&RunRecord], zero_images: &[String]) -> Vec<SlopeFit> {
    let mut groups: BTreeMap<(String, Method), BTreeMap<usize, Vec<f64>>> = BTreeMap::new();
    let mut sides = BTreeMap::new();
    for r in records {
        groups
            .entry((r.image.clone(), r.method))
            .or_default()
            .entry(r.n)
            .or_default()
            .push(r.quality.mse);
        sides.insert(r.image.clone(), r.m);
    }
    groups
        .into_iter()
        .map(|((image, method), by_n)| {
            let m = sides[&image];
            let points: Vec<(usize, f64)> = by_n
                .into_iter()
                .map(|(n, v)| (n, v.iter().sum::<f64>() / v.len() as f64))
                .collect();
            let keep = points.len().div_ceil(2);
            let tail = &points[points.len() - keep..];
            let fit_sizes = tail.iter().map(|p| p.0).collect();
            let degenerate = zero_images.contains(&image)
                || tail.iter().any(|&(_, e)| !(e > 0.0 && e.is_finite()));
            let slope = if degenerate {
                None
            } else {
                let xs: Vec<f64> = tail.iter().map(|&(n, _)| (n as f64 / m as f64).log10()).collect();
                let ys: Vec<f64> = tail.iter().map(|&(_, e)| e.log10()).collect();
                least_squares_slope(&xs, &ys)
            };
            SlopeFit {
                image,
                method,
                m,
                points,
                slope,
                fit_sizes,
            }
        })
        .collect()
}

pub fn write_slope_csv(path: &Path, fits: &[SlopeFit]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image", "method", "m", "fit_sizes", "slope", "decay", "status"])?;
    for f in fits {
        let sizes: Vec<String> = f.fit_sizes.iter().map(|n| n.to_string()).collect();
        w.write_record([
            f.image.clone(),
            f.method.to_string(),
            f.m.to_string(),
            sizes.join(" "),
            f.slope.map(format_metric).unwrap_or_default(),
            f.decay().map(format_metric).unwrap_or_default(),
            if f.slope.is_some() { "ok" } else { "DEGENERATE_FIT" }.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_mse_csv(path: &Path, fits: &[SlopeFit]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image", "method", "n", "log10_n_over_m", "mean_mse", "log10_mse"])?;
    for f in fits {
        for &(n, e) in &f.points {
            w.write_record([
                f.image.clone(),
                f.method.to_string(),
                n.to_string(),
                format_metric((n as f64 / f.m as f64).log10()),
                format_metric(e),
                format_metric(e.log10()),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Log-log plot of mean MSE against `N/M`, one polyline per fit.
pub fn slope_svg(fits: &[SlopeFit]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const PAD: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let pts: Vec<(f64, f64)> = fits
        .iter()
        .flat_map(|f| f.points.iter().map(move |&(n, e)| ((n as f64 / f.m as f64).log10(), e.log10())))
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    if !pts.is_empty() {
        x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<path d="M{PAD} {top} V{bottom} H{right}" stroke="black" fill="none"/>"#,
        top = PAD,
        bottom = H - PAD,
        right = W - PAD
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">log10(N/M)</text>"#,
        W / 2.0,
        H - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {})">log10(MSE)</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (value, anchor, x, y) in [
        (x0, "start", sx(x0), H - PAD + 18.0),
        (x1, "end", sx(x1), H - PAD + 18.0),
    ] {
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-size="12">{value:.3}</text>"#);
    }
    for (value, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-size="12">{value:.3}</text>"#,
            PAD - 6.0,
            y + 4.0
        );
    }
    for (i, f) in fits.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let line: Vec<String> = f
            .points
            .iter()
            .map(|&(n, e)| ((n as f64 / f.m as f64).log10(), e.log10()))
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" stroke="{color}" stroke-width="2" fill="none"/>"#,
            line.join(" ")
        );
        let label = match f.decay() {
            Some(d) => format!("{} {} (decay {d:.2})", f.image, f.method),
            None => format!("{} {} (degenerate)", f.image, f.method),
        };
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" fill="{color}">{label}</text>"#,
            W - PAD - 200.0,
            PAD + 16.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[derive(Debug, Clone)]
pub struct SlopeReport {
    pub fits: Vec<SlopeFit>,
    pub outputs: Vec<CellOutput>,
}

/// Runs the sweep and writes `runs.csv`, `mse.csv`, `slope.csv` and
/// `slope.svg` into the output directory.
pub fn run_slope_experiment(plan: &ExperimentPlan) -> Result<SlopeReport> {
    if plan.n_list.len() < 3 {
        return Err(Error::InvalidParameter(
            "the slope experiment needs at least three sizes".into(),
        ));
    }
    let outputs = run_plan(plan)?;
    let zero_images: Vec<String> = load_images(plan)?
        .into_iter()
        .filter(|(_, img)| img.pixels().iter().all(|&v| v == 0.0))
        .map(|(name, _)| name)
        .collect();
    let records: Vec<&RunRecord> = outputs.iter().map(|o| &o.record).collect();
    let fits = fit_slopes(&records, &zero_images);
    std::fs::create_dir_all(&plan.output_dir)?;
    write_runs_csv(&plan.output_dir.join("runs.csv"), &records)?;
    write_mse_csv(&plan.output_dir.join("mse.csv"), &fits)?;
    write_slope_csv(&plan.output_dir.join("slope.csv"), &fits)?;
    std::fs::write(plan.output_dir.join("slope.svg"), slope_svg(&fits))?;
    save_estimates(plan, &outputs)?;
    Ok(SlopeReport { fits, outputs })
}

fn estimate_file(record: &RunRecord) -> String {
    format!(
        "{}_{}_n{}_s{}.pgm",
        record.image, record.method, record.n, record.seed
    )
}

fn save_estimates(plan: &ExperimentPlan, outputs: &[CellOutput]) -> Result<()> {
    if !plan.save_estimates {
        return Ok(());
    }
    let dir = plan.output_dir.join("estimates");
    std::fs::create_dir_all(&dir)?;
    for o in outputs {
        write_pgm(&dir.join(estimate_file(&o.record)), &o.estimate)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Comparison experiment
// ---------------------------------------------------------------------------

/// One row of a comparison table: metrics averaged over seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    pub image: String,
    pub method: Method,
    pub n: usize,
    pub quality: QualityReport,
}

pub fn compare_rows(records: &[&RunRecord]) -> Vec<CompareRow> {
    let mut groups: BTreeMap<(String, Method, usize), Vec<&QualityReport>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.image.clone(), r.method, r.n))
            .or_default()
            .push(&r.quality);
    }
    groups
        .into_iter()
        .map(|((image, method, n), qs)| {
            let k = qs.len() as f64;
            let avg = |f: fn(&QualityReport) -> f64| qs.iter().map(|q| f(q)).sum::<f64>() / k;
            let mse = avg(|q| q.mse);
            CompareRow {
                image,
                method,
                n,
                quality: QualityReport {
                    mse,
                    psnr: if qs.len() == 1 { qs[0].psnr } else { avg(|q| q.psnr) },
                    ssim: avg(|q| q.ssim),
                    essim: avg(|q| q.essim),
                    ms_ssim: avg(|q| q.ms_ssim),
                },
            }
        })
        .collect()
}

pub fn write_compare_csv(path: &Path, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["image", "method", "n", "psnr", "ssim", "essim", "ms_ssim"])?;
    for r in rows {
        w.write_record([
            r.image.clone(),
            r.method.to_string(),
            r.n.to_string(),
            format_metric(r.quality.psnr),
            format_metric(r.quality.ssim),
            format_metric(r.quality.essim),
            format_metric(r.quality.ms_ssim),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub outputs: Vec<CellOutput>,
}

/// Runs every method at each size (two-bit runs at the equal-budget size)
/// and writes `runs.csv`, `compare.csv` and one `compare_<image>.csv` per
/// image.
pub fn run_compare_experiment(plan: &ExperimentPlan) -> Result<CompareReport> {
    let mut plan = plan.clone();
    plan.equal_bit_budget = true;
    let outputs = run_plan(&plan)?;
    let records: Vec<&RunRecord> = outputs.iter().map(|o| &o.record).collect();
    let rows = compare_rows(&records);
    std::fs::create_dir_all(&plan.output_dir)?;
    write_runs_csv(&plan.output_dir.join("runs.csv"), &records)?;
    write_compare_csv(&plan.output_dir.join("compare.csv"), &rows)?;
    let mut by_image: BTreeMap<&str, Vec<CompareRow>> = BTreeMap::new();
    for r in &rows {
        by_image.entry(&r.image).or_default().push(r.clone());
    }
    for (image, rows) in by_image {
        write_compare_csv(&plan.output_dir.join(format!("compare_{image}.csv")), &rows)?;
    }
    save_estimates(&plan, &outputs)?;
    Ok(CompareReport { rows, outputs })
}

/// Tries each step fraction on `image` and returns the one with the lowest
/// mean MSE, with the full sweep.
pub fn sweep_gamma_fraction(
    image: &SpatialImage,
    n: usize,
    mode: SamplingMode,
    noise: &NoiseModel,
    seeds: &[u64],
    fractions: &[f64],
    max_iters: usize,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let mut sweep = Vec::new();
    for &rho in fractions {
        let mut total = 0.0;
        for &seed in seeds {
            let (canvas, bits) = acquire(image, n, mode, noise, seed)?;
            let cfg = IterationConfig::new(noise, GammaPolicy::FractionOfBound(rho), n)?
                .with_max_iters(max_iters);
            let result = match mode {
                SamplingMode::OneBit => reconstruct_one_bit(&bits, noise, &cfg, &canvas)?,
                SamplingMode::TwoBit => reconstruct_two_bit(&bits, noise, &cfg, &canvas)?,
            };
            total += mse(image, &result.estimate)?;
        }
        sweep.push((rho, total / seeds.len() as f64));
    }
    let best = sweep
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
        .ok_or_else(|| Error::InvalidParameter("empty fraction list".into()))?;
    Ok((best, sweep))
}
