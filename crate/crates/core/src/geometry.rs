//! Image, canvas and support-region geometry.
//!
//! An `M x M` image is zero-padded into an `N x N` canvas before its 2D DFT is
//! taken. The support mask marks the canvas pixels that may carry signal:
//!
//! * two-bit sampling observes the full complex spectrum, so the support is
//!   just the image block (`M²` pixels);
//! * one-bit sampling only observes the real part of the spectrum, whose
//!   inverse transform is the even part `(x[n] + x[-n]) / 2`. The support is
//!   therefore the block together with its point reflection
//!   `(r, c) -> (-r mod N, -c mod N)` (`2·M²` pixels), and the two copies must
//!   not overlap, which requires `N > 2M`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PIXEL_MAX: f64 = 255.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SamplingMode {
    /// Sign of the noisy real part only.
    OneBit,
    /// Signs of the noisy real and imaginary parts.
    TwoBit,
}

impl SamplingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingMode::OneBit => "one-bit",
            SamplingMode::TwoBit => "two-bit",
        }
    }

    /// Block offset used when the caller does not choose one.
    ///
    /// One-bit canvases start at `(1, 1)`: at `(0, 0)` the DC pixel is its own
    /// point reflection and the two copies would share it.
    pub fn default_placement(self) -> (usize, usize) {
        match self {
            SamplingMode::OneBit => (1, 1),
            SamplingMode::TwoBit => (0, 0),
        }
    }

    /// Checks the canvas-size requirement of the mode.
    pub fn check_sizes(self, m: usize, n: usize) -> Result<()> {
        match self {
            SamplingMode::OneBit if n <= 2 * m => Err(Error::Dimension(format!(
                "one-bit sampling needs N > 2M, got N = {n}, M = {m}"
            ))),
            SamplingMode::TwoBit if n < m => Err(Error::Dimension(format!(
                "two-bit sampling needs N >= M, got N = {n}, M = {m}"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for SamplingMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Square grayscale image with pixel values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialImage {
    pixels: Array2<f64>,
}

impl SpatialImage {
    pub fn new(pixels: Array2<f64>) -> Result<Self> {
        let (rows, cols) = pixels.dim();
        if rows != cols {
            return Err(Error::NonSquare { rows, cols });
        }
        if rows == 0 {
            return Err(Error::Dimension("image side must be at least 1".into()));
        }
        for ((row, col), &value) in pixels.indexed_iter() {
            if !value.is_finite() {
                return Err(Error::NonFinite { row, col });
            }
            if !(0.0..=PIXEL_MAX).contains(&value) {
                return Err(Error::PixelRange { row, col, value });
            }
        }
        Ok(Self { pixels })
    }

    /// Builds an image by clamping every value into `[0, 255]`.
    pub fn from_clamped(mut pixels: Array2<f64>) -> Result<Self> {
        pixels.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, PIXEL_MAX) });
        Self::new(pixels)
    }

    pub fn zeros(m: usize) -> Result<Self> {
        Self::new(Array2::zeros((m, m)))
    }

    pub fn m(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn pixels(&self) -> &Array2<f64> {
        &self.pixels
    }

    pub fn into_pixels(self) -> Array2<f64> {
        self.pixels
    }

    /// Top-left `size x size` crop starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, size: usize) -> Result<Self> {
        if row + size > self.m() || col + size > self.m() || size == 0 {
            return Err(Error::Dimension(format!(
                "crop {size}x{size} at ({row}, {col}) exceeds a {m}x{m} image",
                m = self.m()
            )));
        }
        let view = self
            .pixels
            .slice(ndarray::s![row..row + size, col..col + size]);
        Self::new(view.to_owned())
    }

    /// Area-averaging downscale by an integer factor.
    pub fn downscale(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !self.m().is_multiple_of(factor) {
            return Err(Error::Dimension(format!(
                "cannot downscale a {m}x{m} image by {factor}",
                m = self.m()
            )));
        }
        let m = self.m() / factor;
        let norm = (factor * factor) as f64;
        let out = Array2::from_shape_fn((m, m), |(r, c)| {
            let block = self.pixels.slice(ndarray::s![
                r * factor..(r + 1) * factor,
                c * factor..(c + 1) * factor
            ]);
            block.sum() / norm
        });
        Self::new(out)
    }
}

/// Set of canvas pixels allowed to carry signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SupportMask {
    n: usize,
    m: usize,
    mode: SamplingMode,
    placement: (usize, usize),
    cells: Vec<bool>,
    cardinality: usize,
}

impl SupportMask {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn placement(&self) -> (usize, usize) {
        self.placement
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.n + col]
    }

    /// Row-major flags, one per canvas pixel.
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &inside)| inside)
            .map(move |(i, _)| (i / self.n, i % self.n))
    }

    /// Canvas coordinates of the original image block, row-major.
    pub fn block_indices(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (r0, c0) = self.placement;
        (0..self.m).flat_map(move |i| (0..self.m).map(move |j| (r0 + i, c0 + j)))
    }
}

/// Point reflection `(r, c) -> (-r mod n, -c mod n)`.
#[inline]
pub fn reflect(n: usize, row: usize, col: usize) -> (usize, usize) {
    ((n - row) % n, (n - col) % n)
}

pub fn build_support_mask(
    m: usize,
    n: usize,
    mode: SamplingMode,
    placement: (usize, usize),
) -> Result<SupportMask> {
    if m == 0 {
        return Err(Error::Dimension("image side must be at least 1".into()));
    }
    mode.check_sizes(m, n)?;
    let (r0, c0) = placement;
    if r0 + m > n || c0 + m > n {
        return Err(Error::Dimension(format!(
            "a {m}x{m} block at {placement:?} does not fit in a {n}x{n} canvas"
        )));
    }

    let mut cells = vec![false; n * n];
    for r in r0..r0 + m {
        for c in c0..c0 + m {
            cells[r * n + c] = true;
        }
    }
    if mode == SamplingMode::OneBit {
        for r in r0..r0 + m {
            for c in c0..c0 + m {
                let (rr, rc) = reflect(n, r, c);
                let slot = &mut cells[rr * n + rc];
                if *slot {
                    return Err(Error::Overlap { placement, n });
                }
                *slot = true;
            }
        }
    }
    let cardinality = cells.iter().filter(|&&inside| inside).count();
    Ok(SupportMask {
        n,
        m,
        mode,
        placement,
        cells,
        cardinality,
    })
}

/// An image zero-padded into an `N x N` canvas for a given sampling mode.
#[derive(Debug, Clone)]
pub struct PaddedCanvas {
    image: SpatialImage,
    mask: SupportMask,
}

impl PaddedCanvas {
    pub fn new(image: SpatialImage, n: usize, mode: SamplingMode) -> Result<Self> {
        Self::with_placement(image, n, mode, mode.default_placement())
    }

    pub fn with_placement(
        image: SpatialImage,
        n: usize,
        mode: SamplingMode,
        placement: (usize, usize),
    ) -> Result<Self> {
        let mask = build_support_mask(image.m(), n, mode, placement)?;
        Ok(Self { image, mask })
    }

    pub fn n(&self) -> usize {
        self.mask.n
    }

    pub fn m(&self) -> usize {
        self.mask.m
    }

    pub fn mode(&self) -> SamplingMode {
        self.mask.mode
    }

    pub fn placement(&self) -> (usize, usize) {
        self.mask.placement
    }

    pub fn image(&self) -> &SpatialImage {
        &self.image
    }

    pub fn mask(&self) -> &SupportMask {
        &self.mask
    }

    /// The `N x N` canvas: the image block at its placement, zero elsewhere.
    pub fn canvas(&self) -> Array2<f64> {
        let n = self.n();
        let (r0, c0) = self.placement();
        let mut out = Array2::zeros((n, n));
        out.slice_mut(ndarray::s![r0..r0 + self.m(), c0..c0 + self.m()])
            .assign(self.image.pixels());
        out
    }

    /// Same geometry with a different image of the same size.
    pub fn with_image(&self, image: SpatialImage) -> Result<Self> {
        if image.m() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                actual: image.m(),
            });
        }
        Ok(Self {
            image,
            mask: self.mask.clone(),
        })
    }
}
