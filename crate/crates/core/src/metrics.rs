//! Image-quality metrics: MSE, PSNR, SSIM, MS-SSIM and an edge-based SSIM.

use ndarray::{s, Array2, ArrayView2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{SpatialImage, PIXEL_MAX};

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq)]
pub struct SsimParams {
    /// Side of the Gaussian window.
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
    /// One weight per MS-SSIM scale, finest first.
    pub weights: Vec<f64>,
    /// Stabilizing constant of the gradient-structure term.
    pub edge_constant: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: PIXEL_MAX,
            weights: MS_SSIM_WEIGHTS.to_vec(),
            edge_constant: (0.03 * PIXEL_MAX).powi(2) / 2.0,
        }
    }
}

impl SsimParams {
    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    /// Smallest side that supports every scale.
    pub fn min_side(&self) -> usize {
        (1usize << (self.scales().saturating_sub(1))) * self.window
    }

    /// Drops the coarsest scales until images of `side` fit, renormalizing
    /// the remaining weights to sum to the original total.
    pub fn fitted_to(&self, side: usize) -> Self {
        let mut fitted = self.clone();
        let total: f64 = self.weights.iter().sum();
        while fitted.scales() > 1 && fitted.min_side() > side {
            fitted.weights.pop();
        }
        let kept: f64 = fitted.weights.iter().sum();
        fitted.weights.iter_mut().for_each(|w| *w *= total / kept);
        fitted
    }

    fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range).powi(2)
    }

    fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range).powi(2)
    }

    fn kernel(&self) -> Vec<f64> {
        let half = (self.window as f64 - 1.0) / 2.0;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - half;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

fn same_shape(a: &SpatialImage, b: &SpatialImage) -> Result<()> {
    if a.m() != b.m() {
        return Err(Error::DimensionMismatch {
            expected: a.m(),
            actual: b.m(),
        });
    }
    Ok(())
}

pub fn mse(a: &SpatialImage, b: &SpatialImage) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels().iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.pixels().len() as f64)
}

/// `10·log10(255²/mse)`; `+∞` for identical images.
pub fn psnr(a: &SpatialImage, b: &SpatialImage) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (PIXEL_MAX * PIXEL_MAX / mse).log10()
    }
}

/// Separable valid-mode filtering with a symmetric kernel.
fn filter(x: ArrayView2<f64>, kernel: &[f64]) -> Array2<f64> {
    let w = kernel.len();
    let (rows, cols) = x.dim();
    let out_r = rows + 1 - w;
    let out_c = cols + 1 - w;
    let mut horizontal = Array2::<f64>::zeros((rows, out_c));
    for r in 0..rows {
        for c in 0..out_c {
            horizontal[[r, c]] = (0..w).map(|k| kernel[k] * x[[r, c + k]]).sum::<f64>();
        }
    }
    let mut out = Array2::<f64>::zeros((out_r, out_c));
    for r in 0..out_r {
        for c in 0..out_c {
            out[[r, c]] = (0..w).map(|k| kernel[k] * horizontal[[r + k, c]]).sum::<f64>();
        }
    }
    out
}

struct LocalStats {
    mu_a: Array2<f64>,
    mu_b: Array2<f64>,
    var_a: Array2<f64>,
    var_b: Array2<f64>,
    cov: Array2<f64>,
}

fn local_stats(a: ArrayView2<f64>, b: ArrayView2<f64>, params: &SsimParams) -> LocalStats {
    let kernel = params.kernel();
    let mu_a = filter(a, &kernel);
    let mu_b = filter(b, &kernel);
    let aa = filter((&a * &a).view(), &kernel);
    let bb = filter((&b * &b).view(), &kernel);
    let ab = filter((&a * &b).view(), &kernel);
    LocalStats {
        var_a: aa - &mu_a * &mu_a,
        var_b: bb - &mu_b * &mu_b,
        cov: ab - &mu_a * &mu_b,
        mu_a,
        mu_b,
    }
}

/// Mean SSIM and mean contrast-structure term over all window positions.
fn ssim_and_cs(a: ArrayView2<f64>, b: ArrayView2<f64>, params: &SsimParams) -> (f64, f64) {
    let st = local_stats(a, b, params);
    let (c1, c2) = (params.c1(), params.c2());
    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..st.mu_a.len() {
        let (ma, mb) = (st.mu_a.as_slice().unwrap()[i], st.mu_b.as_slice().unwrap()[i]);
        let va = st.var_a.as_slice().unwrap()[i];
        let vb = st.var_b.as_slice().unwrap()[i];
        let cv = st.cov.as_slice().unwrap()[i];
        let cs = (2.0 * cv + c2) / (va + vb + c2);
        let lum = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        ssim_sum += lum * cs;
        cs_sum += cs;
    }
    let count = st.mu_a.len() as f64;
    (ssim_sum / count, cs_sum / count)
}

fn check_window(side: usize, params: &SsimParams, scales: usize) -> Result<()> {
    if params.window == 0 || side < (1usize << scales.saturating_sub(1)) * params.window {
        return Err(Error::Scale {
            side,
            scales,
            window: params.window,
        });
    }
    Ok(())
}

pub fn ssim(a: &SpatialImage, b: &SpatialImage, params: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    check_window(a.m(), params, 1)?;
    Ok(ssim_and_cs(a.pixels().view(), b.pixels().view(), params).0)
}

/// Mean contrast-structure term, the part of SSIM that ignores luminance.
pub fn contrast_structure(a: &SpatialImage, b: &SpatialImage, params: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    check_window(a.m(), params, 1)?;
    Ok(ssim_and_cs(a.pixels().view(), b.pixels().view(), params).1)
}

fn downsample(x: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = (x.nrows() / 2, x.ncols() / 2);
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        x.slice(s![2 * r..2 * r + 2, 2 * c..2 * c + 2]).sum() / 4.0
    })
}

pub fn ms_ssim(a: &SpatialImage, b: &SpatialImage, params: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    let scales = params.scales();
    if scales == 0 {
        return Err(Error::InvalidParameter("MS-SSIM needs at least one scale".into()));
    }
    check_window(a.m(), params, scales)?;
    let mut x = a.pixels().clone();
    let mut y = b.pixels().clone();
    let mut value = 1.0;
    for (level, &weight) in params.weights.iter().enumerate() {
        let (full, cs) = ssim_and_cs(x.view(), y.view(), params);
        let term = if level + 1 == scales { full } else { cs };
        value *= term.max(0.0).powf(weight);
        if level + 1 < scales {
            x = downsample(&x);
            y = downsample(&y);
        }
    }
    Ok(value)
}

/// Sobel gradient magnitude with edge replication.
pub fn gradient_magnitude(x: &Array2<f64>) -> Array2<f64> {
    let (rows, cols) = x.dim();
    let at = |r: isize, c: isize| {
        let r = r.clamp(0, rows as isize - 1) as usize;
        let c = c.clamp(0, cols as isize - 1) as usize;
        x[[r, c]]
    };
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (r, c) = (r as isize, c as isize);
        let gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1))
            - (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
        let gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1))
            - (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
        (gx * gx + gy * gy).sqrt()
    })
}

/// Structure term of SSIM evaluated on Sobel gradient-magnitude maps.
pub fn essim(a: &SpatialImage, b: &SpatialImage, params: &SsimParams) -> Result<f64> {
    same_shape(a, b)?;
    check_window(a.m(), params, 1)?;
    let ga = gradient_magnitude(a.pixels());
    let gb = gradient_magnitude(b.pixels());
    let st = local_stats(ga.view(), gb.view(), params);
    let c3 = params.edge_constant;
    let mut sum = 0.0;
    for ((&va, &vb), &cv) in st.var_a.iter().zip(st.var_b.iter()).zip(st.cov.iter()) {
        let sd = (va.max(0.0) * vb.max(0.0)).sqrt();
        sum += (cv + c3) / (sd + c3);
    }
    Ok(sum / st.var_a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QualityReport {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub essim: f64,
    pub ms_ssim: f64,
}

impl QualityReport {
    pub fn compute(reference: &SpatialImage, estimate: &SpatialImage, params: &SsimParams) -> Result<Self> {
        let mse = mse(reference, estimate)?;
        Ok(Self {
            mse,
            psnr: psnr_from_mse(mse),
            ssim: ssim(reference, estimate, params)?,
            essim: essim(reference, estimate, params)?,
            ms_ssim: ms_ssim(reference, estimate, params)?,
        })
    }
}

/// Formats a metric for CSV output at full round-trip precision;
/// infinities become `inf`.
pub fn format_metric(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v}")
    }
}
