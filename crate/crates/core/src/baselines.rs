//! Comparison methods for one-bit samples: alternating projections with a
//! magnitude prior (COL) and binary iterative hard thresholding with known
//! support (BIHT-SI).

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::{PaddedCanvas, SamplingMode, SpatialImage, SupportMask, PIXEL_MAX};
use crate::pgm::read_pgm;
use crate::reconstruct::{
    extract_estimate, AlphaDiagnostic, Projector, ReconstructionResult, ResidualEntry, Termination,
    DEFAULT_MAX_ITERS,
};
use crate::sampling::BitSample;
use crate::spectrum::SpectralImage;
use crate::transform::RealTransformer;

#[derive(Debug, Clone)]
pub struct ColConfig {
    /// Initial estimate of `|Re DFT|` for every bin.
    pub magnitude_prior: Array2<f64>,
    pub max_iters: usize,
    pub epsilon: f64,
}

impl ColConfig {
    pub fn new(magnitude_prior: Array2<f64>, epsilon: f64) -> Result<Self> {
        if magnitude_prior.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "magnitude prior entries must be non-negative".into(),
            ));
        }
        Ok(Self {
            magnitude_prior,
            max_iters: DEFAULT_MAX_ITERS,
            epsilon,
        })
    }

    /// Flat prior: every bin starts at `level`.
    pub fn flat(n: usize, level: f64, epsilon: f64) -> Result<Self> {
        Self::new(Array2::from_elem((n, n), level), epsilon)
    }
}

#[derive(Debug, Clone)]
pub struct BihtConfig {
    pub step: f64,
    pub max_iters: usize,
    pub mask: SupportMask,
    pub epsilon: f64,
}

impl BihtConfig {
    /// Default step `1/N²`.
    pub fn new(mask: SupportMask, epsilon: f64) -> Self {
        let n = mask.n() as f64;
        Self {
            step: 1.0 / (n * n),
            max_iters: DEFAULT_MAX_ITERS,
            mask,
            epsilon,
        }
    }
}

fn one_bit_only(bits: &BitSample, geometry: &PaddedCanvas) -> Result<()> {
    if bits.mode() != SamplingMode::OneBit || geometry.mode() != SamplingMode::OneBit {
        return Err(Error::Mode("baselines work on one-bit samples".into()));
    }
    if bits.n() != geometry.n() {
        return Err(Error::DimensionMismatch {
            expected: geometry.n(),
            actual: bits.n(),
        });
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        -1.0
    }
}

fn diagnostics_placeholder() -> AlphaDiagnostic {
    AlphaDiagnostic {
        working_bound: f64::NAN,
        working: f64::NAN,
        full: f64::NAN,
    }
}

fn distance(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Alternates between the feasible-image projection and a frequency step
/// that keeps each bin's magnitude but imposes the measured sign.
pub fn reconstruct_col(
    bits: &BitSample,
    cfg: &ColConfig,
    geometry: &PaddedCanvas,
) -> Result<ReconstructionResult> {
    one_bit_only(bits, geometry)?;
    let n = geometry.n();
    if cfg.magnitude_prior.dim() != (n, n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: cfg.magnitude_prior.nrows(),
        });
    }
    let projector = Projector::new(geometry.mask())?;
    let signs = bits.xr().mapv(sign);
    let mut h = Array2::from_shape_fn((n, n), |ix| {
        Complex64::new(cfg.magnitude_prior[ix] * signs[ix], 0.0)
    });
    let mut feasible = h.clone();
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIterations;
    let clock = Instant::now();
    for iter in 1..=cfg.max_iters {
        feasible.assign(&h);
        projector.project_inplace(&mut feasible)?;
        let next = Array2::from_shape_fn((n, n), |ix| {
            Complex64::new(feasible[ix].re.abs() * signs[ix], 0.0)
        });
        let residual = distance(&next, &h);
        h = next;
        trace.push(ResidualEntry {
            iter,
            residual,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if residual <= cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
    }
    feasible.assign(&h);
    projector.project_inplace(&mut feasible)?;
    let fixed_point = SpectralImage::new(feasible)?;
    Ok(ReconstructionResult {
        estimate: extract_estimate(&fixed_point, &projector)?,
        fixed_point,
        iterations: trace.len(),
        residual_trace: trace,
        termination,
        alpha_diag: diagnostics_placeholder(),
        gamma: f64::NAN,
        epsilon: cfg.epsilon,
    })
}

#[derive(Debug, Clone)]
pub struct BihtResult {
    pub result: ReconstructionResult,
    /// Number of bins whose sign disagrees with the samples, per iteration
    /// (entry 0 is the starting point).
    pub hamming: Vec<usize>,
}

/// `g ← Π(g + step · Aᵀ(sign(X) − sign(A g)))` with `A = Re ∘ DFT` and `Π`
/// the support-and-clip projection, from `g = 0`.
pub fn reconstruct_biht_si(
    bits: &BitSample,
    cfg: &BihtConfig,
    geometry: &PaddedCanvas,
) -> Result<BihtResult> {
    one_bit_only(bits, geometry)?;
    if !(cfg.step >= 0.0 && cfg.step.is_finite()) {
        return Err(Error::InvalidParameter(format!("step must be non-negative, got {}", cfg.step)));
    }
    let n = geometry.n();
    let mask = &cfg.mask;
    if mask.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: mask.n(),
        });
    }
    let rows: Vec<usize> = (0..n).filter(|&r| (0..n).any(|c| mask.contains(r, c))).collect();
    let tf = RealTransformer::new(n)?;
    let target = bits.xr().mapv(sign);
    let nn = (n * n) as f64;

    let mut g = Array2::<f64>::zeros((n, n));
    let mut spectrum = Array2::<Complex64>::zeros((n, n));
    let mut back = Array2::<f64>::zeros((n, n));
    let mut hamming = Vec::new();
    let mut trace = Vec::new();
    let mut termination = Termination::MaxIterations;
    let clock = Instant::now();

    let mismatch = |spectrum: &Array2<Complex64>, out: &mut Array2<Complex64>| -> usize {
        let mut count = 0;
        ndarray::Zip::from(out)
            .and(spectrum)
            .and(&target)
            .for_each(|o, s, &t| {
                let d = t - sign(s.re);
                if d != 0.0 {
                    count += 1;
                }
                *o = Complex64::new(d, 0.0);
            });
        count
    };

    tf.forward_rows(&g, &rows, &mut spectrum)?;
    let mut diff = Array2::<Complex64>::zeros((n, n));
    hamming.push(mismatch(&spectrum, &mut diff));
    for iter in 1..=cfg.max_iters {
        // Aᵀ r = Re(N² · IDFT(r)) for real r
        tf.inverse_real_part_rows(&diff, &rows, &mut back)?;
        let mut change = 0.0;
        for &r in &rows {
            for c in 0..n {
                let old = g[[r, c]];
                let new = if mask.contains(r, c) {
                    (old + cfg.step * nn * back[[r, c]]).clamp(0.0, PIXEL_MAX)
                } else {
                    0.0
                };
                change += (new - old) * (new - old);
                g[[r, c]] = new;
            }
        }
        // Parseval: spectral distance is N times the spatial one
        let residual = change.sqrt() * n as f64;
        tf.forward_rows(&g, &rows, &mut spectrum)?;
        hamming.push(mismatch(&spectrum, &mut diff));
        trace.push(ResidualEntry {
            iter,
            residual,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
        });
        if residual <= cfg.epsilon {
            termination = Termination::Converged;
            break;
        }
    }
    let projector = Projector::new(mask)?;
    spectrum.iter_mut().for_each(|z| z.im = 0.0);
    let fixed_point = SpectralImage::new(spectrum)?;
    Ok(BihtResult {
        result: ReconstructionResult {
            estimate: extract_estimate(&fixed_point, &projector)?,
            fixed_point,
            iterations: trace.len(),
            residual_trace: trace,
            termination,
            alpha_diag: diagnostics_placeholder(),
            gamma: f64::NAN,
            epsilon: cfg.epsilon,
        },
        hamming,
    })
}

// ---------------------------------------------------------------------------
// Magnitude prior
// ---------------------------------------------------------------------------

/// Loads every `.pgm` in `dir`, sorted by file name.
pub fn load_corpus(dir: &Path) -> Result<Vec<SpatialImage>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no .pgm files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_pgm(p)).collect()
}

/// Brings a corpus image to side `m`: block-average when `m` divides the
/// side, otherwise a centered crop of the largest fitting downscale.
pub fn fit_to_side(image: &SpatialImage, m: usize) -> Result<SpatialImage> {
    let side = image.m();
    if m > side {
        return Err(Error::Dimension(format!("cannot enlarge a {side}-pixel image to {m}")));
    }
    let factor = side / m;
    let scaled = if factor > 1 { image.downscale(factor)? } else { image.clone() };
    let offset = (scaled.m() - m) / 2;
    scaled.crop(offset, offset, m)
}

/// Average `|Re DFT|` of the corpus images placed on the same canvas.
pub fn magnitude_prior(corpus: &[SpatialImage], mask: &SupportMask) -> Result<Array2<f64>> {
    let n = mask.n();
    let m = mask.m();
    if corpus.is_empty() {
        return Err(Error::InvalidParameter("empty corpus".into()));
    }
    let rows: Vec<usize> = (mask.placement().0..mask.placement().0 + m).collect();
    let tf = RealTransformer::new(n)?;
    let mut sum = Array2::<f64>::zeros((n, n));
    let mut spectrum = Array2::<Complex64>::zeros((n, n));
    for image in corpus {
        let canvas = PaddedCanvas::with_placement(fit_to_side(image, m)?, n, mask.mode(), mask.placement())?;
        tf.forward_rows(&canvas.canvas(), &rows, &mut spectrum)?;
        sum.zip_mut_with(&spectrum, |s, z| *s += z.re.abs());
    }
    Ok(sum / corpus.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::NoiseModel;
    use crate::sampling::sample_one_bit;
    use crate::transform::dft2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_image(m: usize, seed: u64) -> SpatialImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b): (f64, f64) = (rng.random_range(0.0..3.0), rng.random_range(0.0..3.0));
        SpatialImage::from_clamped(Array2::from_shape_fn((m, m), |(r, c)| {
            110.0 + 60.0 * (r as f64 / 4.0 + a).sin() + 40.0 * (c as f64 / 3.0 + b).cos()
        }))
        .unwrap()
    }

    fn correlation(a: &SpatialImage, b: &SpatialImage) -> f64 {
        let (x, y) = (a.pixels(), b.pixels());
        let (mx, my) = (x.mean().unwrap(), y.mean().unwrap());
        let cov: f64 = x.iter().zip(y.iter()).map(|(p, q)| (p - mx) * (q - my)).sum();
        let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }

    #[test]
    fn col_with_true_magnitude_recovers_the_image() {
        let image = smooth_image(8, 1);
        let canvas = PaddedCanvas::new(image.clone(), 32, SamplingMode::OneBit).unwrap();
        let spectrum = dft2(&canvas.canvas()).unwrap();
        let noise = NoiseModel::gaussian(1e-6, 0.0).unwrap();
        let bits = sample_one_bit(&spectrum, &noise, 0).unwrap();
        let prior = spectrum.re().mapv(f64::abs);
        let cfg = ColConfig::new(prior, 1e-6).unwrap();
        let result = reconstruct_col(&bits, &cfg, &canvas).unwrap();
        assert!(correlation(&result.estimate, &image) > 0.99);
    }

    #[test]
    fn col_with_all_negative_bits_is_dark() {
        let canvas = PaddedCanvas::new(smooth_image(4, 2), 16, SamplingMode::OneBit).unwrap();
        let bits = BitSample::from_parts(SamplingMode::OneBit, 0, Array2::from_elem((16, 16), -0.5), None).unwrap();
        let cfg = ColConfig::flat(16, 100.0, 1e-6).unwrap();
        let result = reconstruct_col(&bits, &cfg, &canvas).unwrap();
        assert!(result.estimate.pixels().iter().all(|&v| v >= 0.0));
        assert!(result.estimate.pixels().mean().unwrap() < 1.0);
    }

    #[test]
    fn col_rejects_negative_prior() {
        let mut prior = Array2::from_elem((8, 8), 1.0);
        prior[[2, 3]] = -1.0;
        assert!(ColConfig::new(prior, 1.0).is_err());
    }

    #[test]
    fn biht_hamming_decreases_on_noiseless_bits() {
        let image = smooth_image(4, 3);
        let canvas = PaddedCanvas::new(image, 16, SamplingMode::OneBit).unwrap();
        let spectrum = dft2(&canvas.canvas()).unwrap();
        let noise = NoiseModel::gaussian(1e-9, 0.0).unwrap();
        let bits = sample_one_bit(&spectrum, &noise, 0).unwrap();
        let mut cfg = BihtConfig::new(canvas.mask().clone(), 1e-12);
        cfg.max_iters = 50;
        let out = reconstruct_biht_si(&bits, &cfg, &canvas).unwrap();
        let h = &out.hamming;
        assert!(h.last().unwrap() < &h[0], "{h:?}");
        let early = h[1..=10].iter().min().unwrap();
        let late = h[41..=50].iter().min().unwrap();
        assert!(late < early, "{h:?}");
        assert!(out.result.estimate.pixels().iter().all(|&v| (0.0..=255.0).contains(&v)));
    }

    #[test]
    fn biht_step_only_rescales_iterates() {
        // sign(A g) is scale invariant and the lower clip commutes with
        // scaling, so the mismatch sequence does not depend on the step
        let image = smooth_image(4, 3);
        let canvas = PaddedCanvas::new(image, 16, SamplingMode::OneBit).unwrap();
        let spectrum = dft2(&canvas.canvas()).unwrap();
        let bits = sample_one_bit(&spectrum, &NoiseModel::gaussian(1e-9, 0.0).unwrap(), 0).unwrap();
        let run = |factor: f64| {
            let mut cfg = BihtConfig::new(canvas.mask().clone(), 1e-12);
            cfg.step *= factor;
            cfg.max_iters = 30;
            reconstruct_biht_si(&bits, &cfg, &canvas).unwrap().hamming
        };
        assert_eq!(run(1.0), run(0.01));
    }

    #[test]
    fn biht_zero_step_makes_no_progress() {
        let canvas = PaddedCanvas::new(smooth_image(4, 4), 16, SamplingMode::OneBit).unwrap();
        let spectrum = dft2(&canvas.canvas()).unwrap();
        let bits = sample_one_bit(&spectrum, &NoiseModel::gaussian(100.0, 0.0).unwrap(), 1).unwrap();
        let mut cfg = BihtConfig::new(canvas.mask().clone(), 1e-12);
        cfg.step = 0.0;
        cfg.max_iters = 5;
        let out = reconstruct_biht_si(&bits, &cfg, &canvas).unwrap();
        assert!(out.result.residual_trace.iter().all(|e| e.residual == 0.0));
        assert!(out.result.estimate.pixels().iter().all(|&v| v == 0.0));
        assert!(out.hamming.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn prior_from_bundled_corpus() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/prior");
        let corpus = load_corpus(&dir).unwrap();
        assert!(corpus.len() >= 8);
        let mask = crate::geometry::build_support_mask(32, 128, SamplingMode::OneBit, (1, 1)).unwrap();
        let prior = magnitude_prior(&corpus, &mask).unwrap();
        assert!(prior.iter().all(|&v| v >= 0.0));
        // the DC bin dominates for non-negative images
        let dc = prior[[0, 0]];
        assert!(prior.iter().all(|&v| v <= dc + 1e-9));
    }
}
