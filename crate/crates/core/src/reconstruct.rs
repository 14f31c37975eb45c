//! Fixed-point reconstruction from sign samples.
//!
//! One-bit mode estimates the real part of the DFT with the map
//!
//! ```text
//! T(g) = P(γ·X_R + g − γ·(F(g) − ½))
//! ```
//!
//! and two-bit mode estimates the full complex DFT with
//!
//! ```text
//! Z(g) = Q(γ·(X_R + jX_I) + g − γ·(F(g_R) + jF(g_I) − (1 + j)/2))
//! ```
//!
//! where `F` is the noise CDF and `P`, `Q` project onto spectra of images
//! that vanish off the support and take values in `[0, 255]`. Both maps are
//! contractions for `γ ∈ (0, 2/f_max)` on any box where the noise density is
//! bounded away from zero, so Picard iteration from zero converges to a
//! unique fixed point.

use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{reflect, PaddedCanvas, SamplingMode, SpatialImage, SupportMask, PIXEL_MAX};
use crate::noise::NoiseModel;
use crate::sampling::BitSample;
use crate::spectrum::SpectralImage;
use crate::transform::RealTransformer;

pub const DEFAULT_GAMMA_FRACTION: f64 = 0.95;
pub const DEFAULT_MAX_ITERS: usize = 500;
pub const DIVERGENCE_WINDOW: usize = 10;

// element-wise loops below this many bins stay on one thread
const PARALLEL_MIN_BINS: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GammaPolicy {
    Explicit(f64),
    /// `ρ · 2/f_max` with `0 < ρ < 1`.
    FractionOfBound(f64),
}

impl Default for GammaPolicy {
    fn default() -> Self {
        GammaPolicy::FractionOfBound(DEFAULT_GAMMA_FRACTION)
    }
}

/// Upper end of the admissible step range, `2/f_max` (excluded).
pub fn gamma_upper_bound(noise: &NoiseModel) -> f64 {
    2.0 / noise.f_max()
}

pub fn check_gamma(gamma: f64, noise: &NoiseModel) -> Result<f64> {
    let upper = gamma_upper_bound(noise);
    if !(gamma > 0.0 && gamma < upper) {
        return Err(Error::GammaRange { gamma, upper });
    }
    Ok(gamma)
}

pub fn select_gamma(noise: &NoiseModel, policy: GammaPolicy) -> Result<f64> {
    match policy {
        GammaPolicy::Explicit(gamma) => check_gamma(gamma, noise),
        GammaPolicy::FractionOfBound(rho) => {
            let upper = gamma_upper_bound(noise);
            if !(rho > 0.0 && rho < 1.0) {
                return Err(Error::GammaRange {
                    gamma: rho * upper,
                    upper,
                });
            }
            check_gamma(rho * upper, noise)
        }
    }
}

/// Default stopping threshold for side length `n`: `1e-3 · 255 · n`.
pub fn default_epsilon(n: usize) -> f64 {
    1e-3 * PIXEL_MAX * n as f64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub max_iters: usize,
    pub gamma_policy: GammaPolicy,
}

impl IterationConfig {
    /// Resolves `policy` against `noise`, with the default threshold for
    /// side length `n`.
    pub fn new(noise: &NoiseModel, policy: GammaPolicy, n: usize) -> Result<Self> {
        Ok(Self {
            gamma: select_gamma(noise, policy)?,
            epsilon: default_epsilon(n),
            max_iters: DEFAULT_MAX_ITERS,
            gamma_policy: policy,
        })
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self, noise: &NoiseModel) -> Result<()> {
        check_gamma(self.gamma, noise)?;
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidParameter("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Projections
// ---------------------------------------------------------------------------

/// `x ↦ DFT(Clip(Proj(Re IDFT(x))))` for a fixed support.
///
/// With a one-bit mask the result is real (the support is symmetric under
/// point reflection, so the clipped image stays even); its zero imaginary
/// part is stored explicitly. With a two-bit mask the result is the complex
/// spectrum of a real image.
#[derive(Debug, Clone)]
pub struct Projector {
    transformer: RealTransformer,
    mask: SupportMask,
    rows: Vec<usize>,
}

impl Projector {
    pub fn new(mask: &SupportMask) -> Result<Self> {
        let n = mask.n();
        let rows = (0..n)
            .filter(|&r| (0..n).any(|c| mask.contains(r, c)))
            .collect();
        Ok(Self {
            transformer: RealTransformer::new(n)?,
            mask: mask.clone(),
            rows,
        })
    }

    pub fn mask(&self) -> &SupportMask {
        &self.mask
    }

    /// Real part of the inverse transform of `x` on the support rows;
    /// other rows are zero.
    pub fn spatial(&self, x: &Array2<Complex64>) -> Result<Array2<f64>> {
        self.check(x)?;
        let n = self.mask.n();
        let mut out = Array2::zeros((n, n));
        self.transformer.inverse_real_part_rows(x, &self.rows, &mut out)?;
        Ok(out)
    }

    fn check(&self, x: &Array2<Complex64>) -> Result<()> {
        if x.nrows() != self.mask.n() || x.ncols() != self.mask.n() {
            return Err(Error::DimensionMismatch {
                expected: self.mask.n(),
                actual: x.nrows(),
            });
        }
        Ok(())
    }

    /// Projects `data` in place.
    pub fn project_inplace(&self, data: &mut Array2<Complex64>) -> Result<()> {
        self.apply(data, true)
    }

    /// Linear support projection `DFT(Proj(Re IDFT(x)))`, without the clip.
    pub fn project_linear_inplace(&self, data: &mut Array2<Complex64>) -> Result<()> {
        self.apply(data, false)
    }

    pub fn project(&self, x: &SpectralImage) -> Result<SpectralImage> {
        let mut data = x.data().clone();
        self.project_inplace(&mut data)?;
        SpectralImage::new(data)
    }

    pub fn project_linear(&self, x: &SpectralImage) -> Result<SpectralImage> {
        let mut data = x.data().clone();
        self.project_linear_inplace(&mut data)?;
        SpectralImage::new(data)
    }

    fn apply(&self, data: &mut Array2<Complex64>, clip: bool) -> Result<()> {
        let mut spatial = self.spatial(data)?;
        let n = self.mask.n();
        let cells = self.mask.cells();
        for &r in &self.rows {
            for c in 0..n {
                let v = &mut spatial[[r, c]];
                *v = match (cells[r * n + c], clip) {
                    (false, _) => 0.0,
                    (true, true) => v.clamp(0.0, PIXEL_MAX),
                    (true, false) => *v,
                };
            }
        }
        self.transformer.forward_rows(&spatial, &self.rows, data)?;
        if self.mask.mode() == SamplingMode::OneBit {
            data.iter_mut().for_each(|z| z.im = 0.0);
        }
        Ok(())
    }
}

fn require_mode(mask: &SupportMask, mode: SamplingMode) -> Result<()> {
    if mask.mode() != mode {
        return Err(Error::Mode(format!(
            "operator needs a {mode} mask, got {}",
            mask.mode()
        )));
    }
    Ok(())
}

/// One-bit projection onto spectra of feasible images.
pub fn project_p(x: &SpectralImage, mask: &SupportMask) -> Result<SpectralImage> {
    require_mode(mask, SamplingMode::OneBit)?;
    Projector::new(mask)?.project(x)
}

/// Two-bit projection onto spectra of feasible images.
pub fn project_q(x: &SpectralImage, mask: &SupportMask) -> Result<SpectralImage> {
    require_mode(mask, SamplingMode::TwoBit)?;
    Projector::new(mask)?.project(x)
}

// ---------------------------------------------------------------------------
// Maps
// ---------------------------------------------------------------------------

/// A contraction map with its data term `γ·X` precomputed.
#[derive(Debug, Clone)]
pub struct ContractionMap {
    projector: Projector,
    noise: NoiseModel,
    gamma: f64,
    drive: Array2<Complex64>,
}

impl ContractionMap {
    /// Builds `T` (one-bit) or `Z` (two-bit) from sign samples.
    pub fn from_bits(
        bits: &BitSample,
        noise: &NoiseModel,
        gamma: f64,
        mask: &SupportMask,
    ) -> Result<Self> {
        check_gamma(gamma, noise)?;
        if bits.n() != mask.n() {
            return Err(Error::DimensionMismatch {
                expected: mask.n(),
                actual: bits.n(),
            });
        }
        let drive = match mask.mode() {
            SamplingMode::OneBit => bits.xr().mapv(|r| Complex64::new(gamma * r, 0.0)),
            SamplingMode::TwoBit => {
                let xi = bits
                    .xi()
                    .ok_or_else(|| Error::Mode("two-bit reconstruction needs imaginary bits".into()))?;
                let mut drive = Array2::zeros(bits.xr().dim());
                ndarray::Zip::from(&mut drive)
                    .and(bits.xr())
                    .and(xi)
                    .for_each(|d, &r, &i| *d = Complex64::new(gamma * r, gamma * i));
                drive
            }
        };
        Ok(Self {
            projector: Projector::new(mask)?,
            noise: *noise,
            gamma,
            drive,
        })
    }

    /// Noiseless-limit variant: the data term is `γ·Π(E[X])` for the true
    /// spectrum, where `Π` is the linear support projection. The true
    /// spectrum (real part in one-bit mode) is then an exact fixed point.
    pub fn noiseless(
        truth: &SpectralImage,
        noise: &NoiseModel,
        gamma: f64,
        mask: &SupportMask,
    ) -> Result<Self> {
        check_gamma(gamma, noise)?;
        let projector = Projector::new(mask)?;
        let one_bit = mask.mode() == SamplingMode::OneBit;
        let mut drive = truth.data().mapv(|z| {
            let re = noise.cdf(z.re) - 0.5;
            let im = if one_bit { 0.0 } else { noise.cdf(z.im) - 0.5 };
            Complex64::new(re, im)
        });
        projector.project_linear_inplace(&mut drive)?;
        drive.iter_mut().for_each(|z| *z *= gamma);
        Ok(Self {
            projector,
            noise: *noise,
            gamma,
            drive,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn mode(&self) -> SamplingMode {
        self.projector.mask.mode()
    }

    pub fn mask(&self) -> &SupportMask {
        &self.projector.mask
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Writes `map(g)` into `out`.
    pub fn apply_into(&self, g: &Array2<Complex64>, out: &mut Array2<Complex64>) -> Result<()> {
        if g.dim() != self.drive.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.drive.nrows(),
                actual: g.nrows(),
            });
        }
        if out.dim() != g.dim() {
            *out = Array2::zeros(g.dim());
        }
        let noise = self.noise;
        let gamma = self.gamma;
        let one_bit = self.mode() == SamplingMode::OneBit;
        let step = |(o, (&x, &d)): (&mut Complex64, (&Complex64, &Complex64))| {
            let re = d.re + x.re - gamma * (noise.cdf(x.re) - 0.5);
            let im = if one_bit {
                0.0
            } else {
                d.im + x.im - gamma * (noise.cdf(x.im) - 0.5)
            };
            *o = Complex64::new(re, im);
        };
        let src = g.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let drive = self.drive.as_slice().expect("standard layout");
        let dst = out.as_slice_mut().expect("standard layout");
        if dst.len() >= PARALLEL_MIN_BINS && rayon::current_num_threads() > 1 {
            dst.par_iter_mut()
                .zip(src.par_iter().zip(drive.par_iter()))
                .for_each(step);
        } else {
            dst.iter_mut().zip(src.iter().zip(drive.iter())).for_each(step);
        }
        self.projector.project_inplace(out)
    }

    pub fn apply(&self, g: &SpectralImage) -> Result<SpectralImage> {
        let mut out = Array2::zeros(g.data().dim());
        self.apply_into(g.data(), &mut out)?;
        SpectralImage::new(out)
    }
}

/// One application of the one-bit map `T`.
pub fn map_t(
    g: &SpectralImage,
    bits: &BitSample,
    noise: &NoiseModel,
    cfg: &IterationConfig,
    mask: &SupportMask,
) -> Result<SpectralImage> {
    require_mode(mask, SamplingMode::OneBit)?;
    ContractionMap::from_bits(bits, noise, cfg.gamma, mask)?.apply(g)
}

/// One application of the two-bit map `Z`.
pub fn map_z(
    g: &SpectralImage,
    bits: &BitSample,
    noise: &NoiseModel,
    cfg: &IterationConfig,
    mask: &SupportMask,
) -> Result<SpectralImage> {
    require_mode(mask, SamplingMode::TwoBit)?;
    if bits.mode() != SamplingMode::TwoBit {
        return Err(Error::Mode("map Z needs two-bit samples".into()));
    }
    ContractionMap::from_bits(bits, noise, cfg.gamma, mask)?.apply(g)
}

// ---------------------------------------------------------------------------
// Picard iteration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualEntry {
    pub iter: usize,
    pub residual: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// Residual grew for [`DIVERGENCE_WINDOW`] consecutive iterations.
    Diverged,
}

/// Contraction factor `‖1 − γf‖_max` over two intervals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AlphaDiagnostic {
    /// Largest |component| reached by any iterate.
    pub working_bound: f64,
    /// Factor over `[-working_bound, working_bound]`.
    pub working: f64,
    /// Factor over the full range `[-255N², 255N²]` (close to 1 for
    /// Gaussian noise).
    pub full: f64,
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub estimate: SpatialImage,
    pub fixed_point: SpectralImage,
    pub iterations: usize,
    pub residual_trace: Vec<ResidualEntry>,
    pub termination: Termination,
    pub alpha_diag: AlphaDiagnostic,
    pub gamma: f64,
    pub epsilon: f64,
}

impl ReconstructionResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn final_residual(&self) -> Option<f64> {
        self.residual_trace.last().map(|e| e.residual)
    }
}

/// Runs Picard iteration of `map` from `start` (zero when `None`).
pub fn picard(
    map: &ContractionMap,
    cfg: &IterationConfig,
    noise: &NoiseModel,
    start: Option<&SpectralImage>,
) -> Result<ReconstructionResult> {
    cfg.validate(noise)?;
    if (cfg.gamma - map.gamma()).abs() > 0.0 {
        return Err(Error::InvalidParameter(
            "configuration and map disagree on gamma".into(),
        ));
    }
    let n = map.mask().n();
    let mut current = match start {
        Some(s) if s.n() != n => {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: s.n(),
            })
        }
        Some(s) => s.data().as_standard_layout().into_owned(),
        None => Array2::zeros((n, n)),
    };
    let mut next = Array2::zeros((n, n));
    let mut trace = Vec::new();
    let mut bound = max_component(&current);
    let mut increases = 0;
    let mut termination = Termination::MaxIterations;
    let clock = Instant::now();

    for iter in 1..=cfg.max_iters {
        map.apply_into(&current, &mut next)?;
        let residual = distance(&next, &current);
        std::mem::swap(&mut current, &mut next);
        bound = bound.max(max_component(&current));
        let previous = trace.last().map(|e: &ResidualEntry| e.residual);
        trace.push(ResidualEntry {
            iter,
            residual,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if !residual.is_finite() {
            termination = Termination::Diverged;
            break;
        }
        if residual <= cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
        match previous {
            Some(p) if residual > p => increases += 1,
            _ => increases = 0,
        }
        if increases >= DIVERGENCE_WINDOW {
            termination = Termination::Diverged;
            break;
        }
    }

    let fixed_point = SpectralImage::new(current)?;
    let estimate = extract_estimate(&fixed_point, map.projector())?;
    Ok(ReconstructionResult {
        estimate,
        fixed_point,
        iterations: trace.len(),
        residual_trace: trace,
        termination,
        alpha_diag: AlphaDiagnostic {
            working_bound: bound,
            working: noise.contraction_factor(cfg.gamma, bound),
            full: noise.contraction_factor(cfg.gamma, SpectralImage::component_bound(n)),
        },
        gamma: cfg.gamma,
        epsilon: cfg.epsilon,
    })
}

fn max_component(x: &Array2<Complex64>) -> f64 {
    x.iter().fold(0.0f64, |acc, z| acc.max(z.re.abs()).max(z.im.abs()))
}

fn distance(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Spatial image carried by a spectrum on the support.
///
/// In one-bit mode the real spectrum describes the even part of the canvas,
/// i.e. half the block plus half its point reflection. The reflected copy is
/// mapped back onto the block and the two copies are added, which is twice
/// their average.
pub fn extract_estimate(spectrum: &SpectralImage, projector: &Projector) -> Result<SpatialImage> {
    let mask = projector.mask();
    let n = mask.n();
    let m = mask.m();
    let (pr, pc) = mask.placement();
    let spatial = projector.spatial(spectrum.data())?;
    let mut block = Array2::zeros((m, m));
    for i in 0..m {
        for j in 0..m {
            let (r, c) = (pr + i, pc + j);
            block[[i, j]] = match mask.mode() {
                SamplingMode::OneBit => {
                    let (rr, rc) = reflect(n, r, c);
                    spatial[[r, c]] + spatial[[rr, rc]]
                }
                SamplingMode::TwoBit => spatial[[r, c]],
            };
        }
    }
    SpatialImage::from_clamped(block)
}

fn check_geometry(bits: &BitSample, mask: &SupportMask, mode: SamplingMode) -> Result<()> {
    require_mode(mask, mode)?;
    if bits.mode() != mode {
        return Err(Error::Mode(format!(
            "expected {mode} samples, got {}",
            bits.mode()
        )));
    }
    Ok(())
}

/// Algorithm 1: Picard iteration of `T` from zero.
pub fn reconstruct_one_bit(
    bits: &BitSample,
    noise: &NoiseModel,
    cfg: &IterationConfig,
    geometry: &PaddedCanvas,
) -> Result<ReconstructionResult> {
    reconstruct_with_mask(bits, noise, cfg, geometry.mask(), None)
        .and_then(|r| expect_mode(r, geometry, SamplingMode::OneBit))
}

/// Algorithm 2: Picard iteration of `Z` from zero.
pub fn reconstruct_two_bit(
    bits: &BitSample,
    noise: &NoiseModel,
    cfg: &IterationConfig,
    geometry: &PaddedCanvas,
) -> Result<ReconstructionResult> {
    reconstruct_with_mask(bits, noise, cfg, geometry.mask(), None)
        .and_then(|r| expect_mode(r, geometry, SamplingMode::TwoBit))
}

fn expect_mode(
    result: ReconstructionResult,
    geometry: &PaddedCanvas,
    mode: SamplingMode,
) -> Result<ReconstructionResult> {
    if geometry.mode() != mode {
        return Err(Error::Mode(format!("expected a {mode} canvas")));
    }
    Ok(result)
}

/// Reconstruction for whichever mode `mask` has, optionally from `start`.
pub fn reconstruct_with_mask(
    bits: &BitSample,
    noise: &NoiseModel,
    cfg: &IterationConfig,
    mask: &SupportMask,
    start: Option<&SpectralImage>,
) -> Result<ReconstructionResult> {
    check_geometry(bits, mask, mask.mode())?;
    cfg.validate(noise)?;
    let map = ContractionMap::from_bits(bits, noise, cfg.gamma, mask)?;
    picard(&map, cfg, noise, start)
}

/// Noiseless-limit run: iterates the map whose data term is the projected
/// expectation of the samples. Its fixed point is the true spectrum (real
/// part in one-bit mode).
pub fn reconstruct_noiseless(
    geometry: &PaddedCanvas,
    noise: &NoiseModel,
    cfg: &IterationConfig,
) -> Result<ReconstructionResult> {
    let truth = crate::transform::dft2(&geometry.canvas())?;
    let truth = match geometry.mode() {
        SamplingMode::OneBit => SpectralImage::from_real(truth.re())?,
        SamplingMode::TwoBit => truth,
    };
    let map = ContractionMap::noiseless(&truth, noise, cfg.gamma, geometry.mask())?;
    picard(&map, cfg, noise, None)
}
