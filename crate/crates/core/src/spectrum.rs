//! DFT-domain images.

use ndarray::Array2;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::geometry::PIXEL_MAX;

/// `N x N` complex grid in the 2D-DFT domain.
///
/// One-bit reconstruction works on real spectra; those are stored with a zero
/// imaginary part.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralImage {
    data: Array2<Complex64>,
}

impl SpectralImage {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        let (rows, cols) = data.dim();
        if rows != cols {
            return Err(Error::NonSquare { rows, cols });
        }
        Ok(Self { data })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            data: Array2::zeros((n, n)),
        }
    }

    pub fn from_real(re: Array2<f64>) -> Result<Self> {
        Self::new(re.mapv(|v| Complex64::new(v, 0.0)))
    }

    pub fn from_parts(re: &Array2<f64>, im: &Array2<f64>) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(Error::DimensionMismatch {
                expected: re.nrows(),
                actual: im.nrows(),
            });
        }
        let mut data = Array2::zeros(re.dim());
        ndarray::Zip::from(&mut data)
            .and(re)
            .and(im)
            .for_each(|z, &a, &b| *z = Complex64::new(a, b));
        Self::new(data)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array2<Complex64> {
        &mut self.data
    }

    pub fn into_data(self) -> Array2<Complex64> {
        self.data
    }

    pub fn re(&self) -> Array2<f64> {
        self.data.mapv(|z| z.re)
    }

    pub fn im(&self) -> Array2<f64> {
        self.data.mapv(|z| z.im)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &SpectralImage) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_abs_component(&self) -> f64 {
        self.data
            .iter()
            .fold(0.0f64, |acc, z| acc.max(z.re.abs()).max(z.im.abs()))
    }

    /// Largest |component| admissible for a spectrum of a `[0, 255]` image:
    /// `255 · N²`.
    pub fn component_bound(n: usize) -> f64 {
        PIXEL_MAX * (n * n) as f64
    }

    /// Whether every real and imaginary component lies in `[-255N², 255N²]`.
    pub fn within_bounds(&self) -> bool {
        let bound = Self::component_bound(self.n()) * (1.0 + 1e-12);
        self.max_abs_component() <= bound
    }

    /// Largest `|g[k] - conj(g[-k])|` over all bins, with its location.
    pub fn conjugate_asymmetry(&self) -> (f64, (usize, usize)) {
        let n = self.n();
        let mut worst = (0.0, (0, 0));
        for ((k1, k2), z) in self.data.indexed_iter() {
            let mirror = self.data[[(n - k1) % n, (n - k2) % n]];
            let dev = (z - mirror.conj()).norm();
            if dev > worst.0 {
                worst = (dev, (k1, k2));
            }
        }
        worst
    }

    /// Fails unless the spectrum is conjugate symmetric to `rel_tol` relative
    /// to its largest component.
    pub fn check_conjugate_symmetric(&self, rel_tol: f64) -> Result<()> {
        let (dev, (k1, k2)) = self.conjugate_asymmetry();
        let scale = self.max_abs_component().max(1.0);
        if dev > rel_tol * scale {
            return Err(Error::Asymmetry {
                k1,
                k2,
                deviation: dev / scale,
            });
        }
        Ok(())
    }
}
