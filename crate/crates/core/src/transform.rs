//! Unnormalized 2D DFT and its inverse.
//!
//! ```text
//! forward:  G[k,l] = Σ_{n1,n2} g[n1,n2] · exp(-j2π(k·n1 + l·n2)/N)
//! inverse:  g[k,l] = 1/N² · Σ_{n1,n2} G[n1,n2] · exp(+j2π(k·n1 + l·n2)/N)
//! ```
//!
//! The forward transform scales Frobenius norms by exactly `N`. Plans are
//! backed by `rustfft` and accept any size; the [`direct`] module holds the
//! quadruple-sum reference used in tests.

use std::cell::RefCell;
use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::spectrum::SpectralImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Square 2D transform of a fixed size and direction.
#[derive(Clone)]
pub struct TransformPlan {
    n: usize,
    direction: Direction,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TransformPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TransformPlan")
            .field("n", &self.n)
            .field("direction", &self.direction)
            .finish()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static REAL_PLANNER: RefCell<RealFftPlanner<f64>> = RefCell::new(RealFftPlanner::new());
}

// below this side length the rayon split costs more than it saves
const PARALLEL_MIN_N: usize = 256;
const TRANSPOSE_BLOCK: usize = 32;

impl TransformPlan {
    pub fn new(n: usize, direction: Direction) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dimension("transform size must be at least 1".into()));
        }
        let fft = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            match direction {
                Direction::Forward => p.plan_fft_forward(n),
                Direction::Inverse => p.plan_fft_inverse(n),
            }
        });
        Ok(Self { n, direction, fft })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    /// Transforms `data` in place. The inverse includes the `1/N²` factor.
    pub fn execute(&self, data: &mut Array2<Complex64>) -> Result<()> {
        let buf = contiguous(data, self.n)?;
        self.rows(buf);
        self.columns(buf);
        if self.direction == Direction::Inverse {
            let scale = 1.0 / (self.n * self.n) as f64;
            buf.iter_mut().for_each(|z| *z *= scale);
        }
        Ok(())
    }

    fn columns(&self, buf: &mut [Complex64]) {
        let mut tmp = vec![Complex64::default(); buf.len()];
        transpose(buf, &mut tmp, self.n);
        self.rows(&mut tmp);
        transpose(&tmp, buf, self.n);
    }

    fn rows(&self, buf: &mut [Complex64]) {
        let n = self.n;
        if n >= PARALLEL_MIN_N && rayon::current_num_threads() > 1 {
            let per_task = (n / rayon::current_num_threads()).max(8) * n;
            buf.par_chunks_mut(per_task).for_each(|chunk| {
                let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
                self.fft.process_with_scratch(chunk, &mut scratch);
            });
        } else {
            let mut scratch = vec![Complex64::default(); self.fft.get_inplace_scratch_len()];
            self.fft.process_with_scratch(buf, &mut scratch);
        }
    }
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for rb in (0..n).step_by(TRANSPOSE_BLOCK) {
        for cb in (0..n).step_by(TRANSPOSE_BLOCK) {
            for r in rb..(rb + TRANSPOSE_BLOCK).min(n) {
                for c in cb..(cb + TRANSPOSE_BLOCK).min(n) {
                    dst[c * n + r] = src[r * n + c];
                }
            }
        }
    }
}

/// Forward and inverse plans of one size.
#[derive(Debug, Clone)]
pub struct Transformer {
    forward: TransformPlan,
    inverse: TransformPlan,
}

impl Transformer {
    pub fn new(n: usize) -> Result<Self> {
        Ok(Self {
            forward: TransformPlan::new(n, Direction::Forward)?,
            inverse: TransformPlan::new(n, Direction::Inverse)?,
        })
    }

    pub fn n(&self) -> usize {
        self.forward.n
    }

    pub fn forward_inplace(&self, data: &mut Array2<Complex64>) -> Result<()> {
        self.forward.execute(data)
    }

    pub fn inverse_inplace(&self, data: &mut Array2<Complex64>) -> Result<()> {
        self.inverse.execute(data)
    }

    pub fn dft2_real(&self, x: &Array2<f64>) -> Result<SpectralImage> {
        check_finite(x.indexed_iter().map(|(ix, v)| (ix, v.is_finite())))?;
        let mut data = x.mapv(|v| Complex64::new(v, 0.0));
        self.forward.execute(&mut data)?;
        SpectralImage::new(data)
    }

    pub fn dft2(&self, x: &Array2<Complex64>) -> Result<SpectralImage> {
        check_finite(x.indexed_iter().map(|(ix, v)| (ix, v.is_finite())))?;
        let mut data = x.clone();
        self.forward.execute(&mut data)?;
        SpectralImage::new(data)
    }

    pub fn idft2(&self, x: &SpectralImage) -> Result<Array2<Complex64>> {
        let mut data = x.data().clone();
        self.inverse.execute(&mut data)?;
        Ok(data)
    }
}

/// Transforms between real images and spectra of real images that touch
/// only the `N/2 + 1` non-redundant spectral columns.
///
/// Both directions take a list of spatial rows: the forward transform treats
/// every other row as zero, the inverse computes only the listed rows.
#[derive(Clone)]
pub struct RealTransformer {
    n: usize,
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    columns_forward: Arc<dyn Fft<f64>>,
    columns_inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for RealTransformer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealTransformer").field("n", &self.n).finish()
    }
}

impl RealTransformer {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Dimension("transform size must be at least 1".into()));
        }
        let (r2c, c2r) = REAL_PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        let (columns_forward, columns_inverse) = PLANNER.with(|p| {
            let mut p = p.borrow_mut();
            (p.plan_fft_forward(n), p.plan_fft_inverse(n))
        });
        Ok(Self {
            n,
            half: n / 2 + 1,
            r2c,
            c2r,
            columns_forward,
            columns_inverse,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Rows `rows` of `Re IDFT(x)`, written into `out`; other rows of `out`
    /// are left unchanged. `x` may be any complex matrix.
    pub fn inverse_real_part_rows(
        &self,
        x: &Array2<Complex64>,
        rows: &[usize],
        out: &mut Array2<f64>,
    ) -> Result<()> {
        let n = self.n;
        let half = self.half;
        for dim in [x.dim(), out.dim()] {
            if dim != (n, n) {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    actual: dim.0,
                });
            }
        }
        // Hermitian part of x, transposed: cols[k2][k1]
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut cols = vec![Complex64::default(); half * n];
        for_blocks(n, half, |k1, k2| {
            let mirror = ((n - k1) % n) * n + (n - k2) % n;
            cols[k2 * n + k1] = (src[k1 * n + k2] + src[mirror].conj()) * 0.5;
        });
        run_rows(&*self.columns_inverse, &mut cols, n);

        let scale = 1.0 / (n * n) as f64;
        let mut spectrum_row = self.c2r.make_input_vec();
        let mut row_out = self.c2r.make_output_vec();
        let mut scratch = self.c2r.make_scratch_vec();
        for &r in rows {
            for k2 in 0..half {
                spectrum_row[k2] = cols[k2 * n + r];
            }
            spectrum_row[0].im = 0.0;
            if n.is_multiple_of(2) {
                spectrum_row[half - 1].im = 0.0;
            }
            self.c2r
                .process_with_scratch(&mut spectrum_row, &mut row_out, &mut scratch)
                .map_err(|e| Error::Dimension(e.to_string()))?;
            for (c, v) in row_out.iter().enumerate() {
                out[[r, c]] = v * scale;
            }
        }
        Ok(())
    }

    /// Full spectrum of the real image `x`, whose rows outside `rows` are
    /// zero, written into `out`.
    pub fn forward_rows(
        &self,
        x: &Array2<f64>,
        rows: &[usize],
        out: &mut Array2<Complex64>,
    ) -> Result<()> {
        let n = self.n;
        let half = self.half;
        if x.dim() != (n, n) {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: x.nrows(),
            });
        }
        if out.dim() != (n, n) || !out.is_standard_layout() {
            *out = Array2::zeros((n, n));
        }
        let mut cols = vec![Complex64::default(); half * n];
        let mut row_in = self.r2c.make_input_vec();
        let mut spectrum_row = self.r2c.make_output_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for &r in rows {
            row_in.iter_mut().zip(x.row(r).iter()).for_each(|(d, &v)| *d = v);
            self.r2c
                .process_with_scratch(&mut row_in, &mut spectrum_row, &mut scratch)
                .map_err(|e| Error::Dimension(e.to_string()))?;
            for k2 in 0..half {
                cols[k2 * n + r] = spectrum_row[k2];
            }
        }
        run_rows(&*self.columns_forward, &mut cols, n);
        let dst = out.as_slice_mut().expect("standard layout");
        for_blocks(n, half, |k1, k2| dst[k1 * n + k2] = cols[k2 * n + k1]);
        for_blocks(n, n - half, |k1, j| {
            let k2 = half + j;
            dst[k1 * n + k2] = cols[(n - k2) * n + (n - k1) % n].conj();
        });
        Ok(())
    }
}

/// Visits `(row, col)` for `row < rows`, `col < cols` in square tiles.
fn for_blocks(rows: usize, cols: usize, mut visit: impl FnMut(usize, usize)) {
    for rb in (0..rows).step_by(TRANSPOSE_BLOCK) {
        for cb in (0..cols).step_by(TRANSPOSE_BLOCK) {
            for r in rb..(rb + TRANSPOSE_BLOCK).min(rows) {
                for c in cb..(cb + TRANSPOSE_BLOCK).min(cols) {
                    visit(r, c);
                }
            }
        }
    }
}

/// In-place FFT of every length-`n` chunk of `buf`.
fn run_rows(fft: &dyn Fft<f64>, buf: &mut [Complex64], n: usize) {
    if buf.len() >= PARALLEL_MIN_N * n && rayon::current_num_threads() > 1 {
        let per_task = (buf.len() / n / rayon::current_num_threads()).max(8) * n;
        buf.par_chunks_mut(per_task).for_each(|chunk| {
            let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
            fft.process_with_scratch(chunk, &mut scratch);
        });
    } else {
        let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(buf, &mut scratch);
    }
}

fn contiguous(data: &mut Array2<Complex64>, n: usize) -> Result<&mut [Complex64]> {
    let (rows, cols) = data.dim();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    if rows != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: rows,
        });
    }
    if !data.is_standard_layout() {
        *data = data.as_standard_layout().into_owned();
    }
    Ok(data
        .as_slice_mut()
        .expect("standard layout arrays are contiguous"))
}

fn check_finite(mut cells: impl Iterator<Item = ((usize, usize), bool)>) -> Result<()> {
    match cells.find(|(_, ok)| !ok) {
        Some(((row, col), _)) => Err(Error::NonFinite { row, col }),
        None => Ok(()),
    }
}

fn square_side<T>(x: &Array2<T>) -> Result<usize> {
    let (rows, cols) = x.dim();
    if rows != cols {
        return Err(Error::NonSquare { rows, cols });
    }
    Ok(rows)
}

/// Forward 2D DFT of a real matrix.
pub fn dft2(x: &Array2<f64>) -> Result<SpectralImage> {
    Transformer::new(square_side(x)?)?.dft2_real(x)
}

/// Forward 2D DFT of a complex matrix.
pub fn dft2_complex(x: &Array2<Complex64>) -> Result<SpectralImage> {
    Transformer::new(square_side(x)?)?.dft2(x)
}

/// Inverse 2D DFT, including the `1/N²` factor.
pub fn idft2(x: &SpectralImage) -> Result<Array2<Complex64>> {
    Transformer::new(x.n())?.idft2(x)
}

/// Quadruple-sum evaluation of the transforms, `O(N⁴)`.
///
/// Twiddle angles are reduced with exact integer arithmetic `(k·n) mod N`,
/// so this shares nothing with the fast path. Meant for `N ≤ 32`.
pub mod direct {
    use super::*;

    fn transform(x: &Array2<Complex64>, sign: f64) -> Array2<Complex64> {
        let n = x.nrows();
        let twiddle: Vec<Complex64> = (0..n)
            .map(|i| Complex64::from_polar(1.0, sign * 2.0 * std::f64::consts::PI * i as f64 / n as f64))
            .collect();
        Array2::from_shape_fn((n, n), |(k, l)| {
            let mut acc = Complex64::default();
            for n1 in 0..n {
                for n2 in 0..n {
                    acc += x[[n1, n2]] * twiddle[(k * n1 + l * n2) % n];
                }
            }
            acc
        })
    }

    pub fn dft2(x: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        square_side(x)?;
        Ok(transform(x, -1.0))
    }

    pub fn idft2(x: &Array2<Complex64>) -> Result<Array2<Complex64>> {
        let n = square_side(x)?;
        let scale = 1.0 / (n * n) as f64;
        Ok(transform(x, 1.0).mapv(|z| z * scale))
    }
}
