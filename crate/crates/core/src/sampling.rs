//! Acquisition front-end: noise, dither and sign comparators on the DFT.
//!
//! Each recorded value is `1(component + noise + dither > 0) - 1/2`. The DFT
//! of a real image is conjugate symmetric, so only a canonical half of the
//! bins is drawn; the other half is filled by symmetry (real bits mirrored,
//! imaginary bits negated). A bin is canonical when its row-major index does
//! not exceed the index of its mirror `(-k1 mod N, -k2 mod N)`. For even `N`
//! these are the rows `1..N/2` plus the left halves (`k2 <= N/2`) of rows
//! `0` and `N/2`.
//!
//! Self-conjugate bins (mirror equal to themselves) have a zero imaginary
//! part; their imaginary bit is stored as `0` and never drawn.
//!
//! Noise for bin `(k1, k2)` and channel `c` comes from a ChaCha8 stream
//! selected by `(k1·N + k2)·2 + c`, so a sample depends only on the seed,
//! never on traversal order or thread count.

use std::io::{Read, Write};

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::SamplingMode;
use crate::noise::NoiseModel;
use crate::spectrum::SpectralImage;

pub const SYMMETRY_TOLERANCE: f64 = 1e-6;

const HALF: f64 = 0.5;

/// Sign samples of one spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct BitSample {
    mode: SamplingMode,
    seed: u64,
    xr: Array2<f64>,
    xi: Option<Array2<f64>>,
}

impl BitSample {
    pub fn from_parts(
        mode: SamplingMode,
        seed: u64,
        xr: Array2<f64>,
        xi: Option<Array2<f64>>,
    ) -> Result<Self> {
        let (rows, cols) = xr.dim();
        if rows != cols {
            return Err(Error::NonSquare { rows, cols });
        }
        match (&xi, mode) {
            (None, SamplingMode::TwoBit) => {
                return Err(Error::Mode("two-bit samples need imaginary bits".into()))
            }
            (Some(_), SamplingMode::OneBit) => {
                return Err(Error::Mode("one-bit samples carry no imaginary bits".into()))
            }
            (Some(im), _) if im.dim() != xr.dim() => {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    actual: im.nrows(),
                })
            }
            _ => {}
        }
        Ok(Self { mode, seed, xr, xi })
    }

    pub fn n(&self) -> usize {
        self.xr.nrows()
    }

    pub fn mode(&self) -> SamplingMode {
        self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Real-part bits, each `±1/2`.
    pub fn xr(&self) -> &Array2<f64> {
        &self.xr
    }

    /// Imaginary-part bits (two-bit mode only).
    pub fn xi(&self) -> Option<&Array2<f64>> {
        self.xi.as_ref()
    }

    /// Number of comparator outputs that were independently drawn.
    pub fn drawn_bits(&self) -> usize {
        drawn_bits(self.n(), self.mode)
    }
}

#[inline]
pub fn mirror(n: usize, k1: usize, k2: usize) -> (usize, usize) {
    ((n - k1) % n, (n - k2) % n)
}

#[inline]
pub fn is_canonical(n: usize, k1: usize, k2: usize) -> bool {
    let (m1, m2) = mirror(n, k1, k2);
    k1 * n + k2 <= m1 * n + m2
}

#[inline]
pub fn is_self_conjugate(n: usize, k1: usize, k2: usize) -> bool {
    mirror(n, k1, k2) == (k1, k2)
}

pub fn canonical_bin_count(n: usize) -> usize {
    let self_conj = if n.is_multiple_of(2) { 4 } else { 1 };
    (n * n + self_conj) / 2
}

pub fn drawn_bits(n: usize, mode: SamplingMode) -> usize {
    let canonical = canonical_bin_count(n);
    match mode {
        SamplingMode::OneBit => canonical,
        SamplingMode::TwoBit => {
            let self_conj = if n.is_multiple_of(2) { 4 } else { 1 };
            2 * canonical - self_conj
        }
    }
}

#[inline]
fn comparator(value: f64) -> f64 {
    if value > 0.0 {
        HALF
    } else {
        -HALF
    }
}

struct BinNoise {
    base: ChaCha8Rng,
    n: usize,
    noise: NoiseModel,
}

impl BinNoise {
    fn new(seed: u64, n: usize, noise: NoiseModel) -> Self {
        Self {
            base: ChaCha8Rng::seed_from_u64(seed),
            n,
            noise,
        }
    }

    fn draw(&self, k1: usize, k2: usize, channel: u64) -> f64 {
        let mut rng = self.base.clone();
        rng.set_stream(((k1 * self.n + k2) as u64) * 2 + channel);
        self.noise.draw(&mut rng)
    }
}

fn sample(
    spec: &SpectralImage,
    noise: &NoiseModel,
    seed: u64,
    mode: SamplingMode,
) -> Result<BitSample> {
    spec.check_conjugate_symmetric(SYMMETRY_TOLERANCE)?;
    let n = spec.n();
    let source = BinNoise::new(seed, n, *noise);
    let data = spec.data();

    // canonical bins first, row by row
    let rows: Vec<Vec<(f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|k1| {
            (0..n)
                .map(|k2| {
                    if !is_canonical(n, k1, k2) {
                        return (0.0, 0.0);
                    }
                    let z = data[[k1, k2]];
                    let re = comparator(z.re + source.draw(k1, k2, 0));
                    let im = if mode == SamplingMode::TwoBit && !is_self_conjugate(n, k1, k2) {
                        comparator(z.im + source.draw(k1, k2, 1))
                    } else {
                        0.0
                    };
                    (re, im)
                })
                .collect()
        })
        .collect();

    let mut xr = Array2::zeros((n, n));
    let mut xi = Array2::zeros((n, n));
    for k1 in 0..n {
        for k2 in 0..n {
            if is_canonical(n, k1, k2) {
                let (re, im) = rows[k1][k2];
                let (m1, m2) = mirror(n, k1, k2);
                xr[[k1, k2]] = re;
                xr[[m1, m2]] = re;
                xi[[k1, k2]] = im;
                xi[[m1, m2]] = -im;
            }
        }
    }
    let xi = (mode == SamplingMode::TwoBit).then_some(xi);
    BitSample::from_parts(mode, seed, xr, xi)
}

/// Records the sign of the noisy real part of every bin.
pub fn sample_one_bit(spec: &SpectralImage, noise: &NoiseModel, seed: u64) -> Result<BitSample> {
    sample(spec, noise, seed, SamplingMode::OneBit)
}

/// Records the signs of the noisy real and imaginary parts of every bin.
pub fn sample_two_bit(spec: &SpectralImage, noise: &NoiseModel, seed: u64) -> Result<BitSample> {
    sample(spec, noise, seed, SamplingMode::TwoBit)
}

pub fn sample_bits(
    spec: &SpectralImage,
    noise: &NoiseModel,
    seed: u64,
    mode: SamplingMode,
) -> Result<BitSample> {
    sample(spec, noise, seed, mode)
}

// ---------------------------------------------------------------------------
// PBIT files
//
//   offset  size  field
//   0       4     magic "PBIT"
//   4       2     version (1), u16 LE
//   6       4     N, u32 LE
//   10      1     mode: 1 = one-bit, 2 = two-bit
//   11      8     seed, u64 LE
//   19      ...   2-bit codes, four per byte, first code in the low bits:
//                 00 = -1/2, 01 = +1/2, 10 = 0 (self-conjugate imaginary bin).
//                 N² real codes in row-major order, then N² imaginary codes
//                 for two-bit files. The last byte of each plane is padded
//                 with zeros.
// ---------------------------------------------------------------------------

pub const PBIT_MAGIC: &[u8; 4] = b"PBIT";
pub const PBIT_VERSION: u16 = 1;
const FORMAT: &str = "PBIT";

fn encode(value: f64) -> Result<u8> {
    if value == -HALF {
        Ok(0b00)
    } else if value == HALF {
        Ok(0b01)
    } else if value == 0.0 {
        Ok(0b10)
    } else {
        Err(Error::format(FORMAT, format!("bit value {value} is not representable")))
    }
}

fn decode(code: u8) -> Result<f64> {
    match code {
        0b00 => Ok(-HALF),
        0b01 => Ok(HALF),
        0b10 => Ok(0.0),
        _ => Err(Error::format(FORMAT, "reserved code 11")),
    }
}

fn pack_plane(plane: &Array2<f64>, out: &mut Vec<u8>) -> Result<()> {
    let values: Vec<f64> = plane.iter().copied().collect();
    for chunk in values.chunks(4) {
        let mut byte = 0u8;
        for (i, &v) in chunk.iter().enumerate() {
            byte |= encode(v)? << (2 * i);
        }
        out.push(byte);
    }
    Ok(())
}

fn unpack_plane(bytes: &[u8], n: usize) -> Result<Array2<f64>> {
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n * n {
        values.push(decode((bytes[i / 4] >> (2 * (i % 4))) & 0b11)?);
    }
    Ok(Array2::from_shape_vec((n, n), values).expect("length matches n*n"))
}

pub fn write_bits<W: Write>(bits: &BitSample, mut out: W) -> Result<()> {
    let n = bits.n();
    let n32 = u32::try_from(n).map_err(|_| Error::format(FORMAT, "N exceeds u32"))?;
    let mut buf = Vec::with_capacity(19 + 2 * n * n / 4 + 2);
    buf.extend_from_slice(PBIT_MAGIC);
    buf.extend_from_slice(&PBIT_VERSION.to_le_bytes());
    buf.extend_from_slice(&n32.to_le_bytes());
    buf.push(match bits.mode {
        SamplingMode::OneBit => 1,
        SamplingMode::TwoBit => 2,
    });
    buf.extend_from_slice(&bits.seed.to_le_bytes());
    pack_plane(&bits.xr, &mut buf)?;
    if let Some(xi) = &bits.xi {
        pack_plane(xi, &mut buf)?;
    }
    out.write_all(&buf)?;
    Ok(())
}

pub fn read_bits<R: Read>(mut input: R) -> Result<BitSample> {
    let mut header = [0u8; 19];
    input
        .read_exact(&mut header)
        .map_err(|_| Error::format(FORMAT, "truncated header"))?;
    if &header[0..4] != PBIT_MAGIC {
        return Err(Error::format(FORMAT, "bad magic"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != PBIT_VERSION {
        return Err(Error::format(FORMAT, format!("unsupported version {version}")));
    }
    let n = u32::from_le_bytes(header[6..10].try_into().unwrap()) as usize;
    if n == 0 {
        return Err(Error::format(FORMAT, "N = 0"));
    }
    let mode = match header[10] {
        1 => SamplingMode::OneBit,
        2 => SamplingMode::TwoBit,
        other => return Err(Error::format(FORMAT, format!("unknown mode {other}"))),
    };
    let seed = u64::from_le_bytes(header[11..19].try_into().unwrap());
    let plane_len = (n * n).div_ceil(4);
    let planes = if mode == SamplingMode::TwoBit { 2 } else { 1 };
    let mut payload = vec![0u8; plane_len * planes];
    input
        .read_exact(&mut payload)
        .map_err(|_| Error::format(FORMAT, "truncated payload"))?;
    let xr = unpack_plane(&payload[..plane_len], n)?;
    let xi = if planes == 2 {
        Some(unpack_plane(&payload[plane_len..], n)?)
    } else {
        None
    };
    BitSample::from_parts(mode, seed, xr, xi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transform::dft2;
    use num_complex::Complex64;

    fn noise100() -> NoiseModel {
        NoiseModel::gaussian(100.0, 0.0).unwrap()
    }

    fn test_spectrum(n: usize) -> SpectralImage {
        let x = Array2::from_shape_fn((n, n), |(r, c)| if r < 3 && c < 3 { (r * 3 + c) as f64 } else { 0.0 });
        dft2(&x).unwrap()
    }

    #[test]
    fn canonical_half_plane_even() {
        let n = 8;
        let count = (0..n)
            .flat_map(|k1| (0..n).map(move |k2| (k1, k2)))
            .filter(|&(a, b)| is_canonical(n, a, b))
            .count();
        assert_eq!(count, canonical_bin_count(n));
        assert_eq!(count, 34);
        for k1 in 1..n / 2 {
            for k2 in 0..n {
                assert!(is_canonical(n, k1, k2));
            }
        }
        for k2 in 0..=n / 2 {
            assert!(is_canonical(n, 0, k2));
            assert!(is_canonical(n, n / 2, k2));
        }
        assert!(!is_canonical(n, 0, n / 2 + 1));
    }

    #[test]
    fn canonical_half_plane_odd() {
        let n = 7;
        let count = (0..n)
            .flat_map(|k1| (0..n).map(move |k2| (k1, k2)))
            .filter(|&(a, b)| is_canonical(n, a, b))
            .count();
        assert_eq!(count, canonical_bin_count(n));
        assert_eq!(count, 25);
    }

    #[test]
    fn symmetric_bits() {
        let spec = test_spectrum(10);
        let bits = sample_two_bit(&spec, &noise100(), 3).unwrap();
        let n = bits.n();
        let xi = bits.xi().unwrap();
        for k1 in 0..n {
            for k2 in 0..n {
                let (m1, m2) = mirror(n, k1, k2);
                assert_eq!(bits.xr()[[k1, k2]], bits.xr()[[m1, m2]]);
                assert_eq!(xi[[k1, k2]], -xi[[m1, m2]]);
                if is_self_conjugate(n, k1, k2) {
                    assert_eq!(xi[[k1, k2]], 0.0);
                } else {
                    assert_eq!(xi[[k1, k2]].abs(), 0.5);
                }
                assert_eq!(bits.xr()[[k1, k2]].abs(), 0.5);
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = test_spectrum(16);
        let a = sample_two_bit(&spec, &noise100(), 42).unwrap();
        let b = sample_two_bit(&spec, &noise100(), 42).unwrap();
        let c = sample_two_bit(&spec, &noise100(), 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_asymmetric_spectrum() {
        let mut spec = test_spectrum(8);
        spec.data_mut()[[1, 2]] += Complex64::new(5.0, 0.0);
        assert!(matches!(
            sample_one_bit(&spec, &noise100(), 0),
            Err(Error::Asymmetry { .. })
        ));
    }

    #[test]
    fn saturated_bin_is_always_positive() {
        let mut re = Array2::zeros((4, 4));
        re[[0, 0]] = 1e6;
        let spec = SpectralImage::from_real(re).unwrap();
        for seed in 0..2000 {
            let bits = sample_one_bit(&spec, &noise100(), seed).unwrap();
            assert_eq!(bits.xr()[[0, 0]], 0.5);
        }
    }

    fn single_bin(value: f64) -> SpectralImage {
        SpectralImage::from_real(Array2::from_elem((1, 1), value)).unwrap()
    }

    fn mean_over_seeds(trials: u64, f: impl Fn(u64) -> f64) -> f64 {
        (0..trials).map(f).sum::<f64>() / trials as f64
    }

    #[test]
    fn zero_bin_is_a_coin_flip() {
        let spec = single_bin(0.0);
        let freq = mean_over_seeds(10_000, |s| {
            (sample_one_bit(&spec, &noise100(), s).unwrap().xr()[[0, 0]] > 0.0) as u8 as f64
        });
        assert!((freq - 0.5).abs() < 0.01, "frequency {freq}");
    }

    #[test]
    fn one_bit_mean_matches_cdf() {
        let noise = noise100();
        let spec = single_bin(5.0);
        let mean = mean_over_seeds(10_000, |s| sample_one_bit(&spec, &noise, s).unwrap().xr()[[0, 0]]);
        let expected = noise.cdf(5.0) - 0.5;
        assert!((expected - 0.19146).abs() < 1e-5);
        assert!((mean - expected).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn two_bit_means_match_cdf() {
        let noise = noise100();
        let mut data = Array2::zeros((4, 4));
        data[[0, 1]] = Complex64::new(3.0, -3.0);
        data[[0, 3]] = Complex64::new(3.0, 3.0);
        let spec = SpectralImage::new(data).unwrap();
        let draws: Vec<BitSample> = (0..10_000)
            .map(|s| sample_two_bit(&spec, &noise, s).unwrap())
            .collect();
        let re = draws.iter().map(|b| b.xr()[[0, 1]]).sum::<f64>() / 1e4;
        let im = draws.iter().map(|b| b.xi().unwrap()[[0, 1]]).sum::<f64>() / 1e4;
        assert!((noise.cdf(3.0) - 0.5 - 0.11791).abs() < 1e-5);
        assert!((re - (noise.cdf(3.0) - 0.5)).abs() < 0.01, "re {re}");
        assert!((im - (noise.cdf(-3.0) - 0.5)).abs() < 0.01, "im {im}");
        // a purely real bin has equiprobable imaginary bits
        let im_real_bin = draws.iter().map(|b| b.xi().unwrap()[[1, 1]]).sum::<f64>() / 1e4;
        assert!(im_real_bin.abs() < 0.01);
    }

    #[test]
    fn distinct_bins_are_uncorrelated() {
        let spec = SpectralImage::zeros(4);
        let trials = 10_000u64;
        let pairs: Vec<(f64, f64)> = (0..trials)
            .map(|s| {
                let b = sample_one_bit(&spec, &noise100(), s).unwrap();
                (b.xr()[[0, 1]], b.xr()[[1, 1]])
            })
            .collect();
        let ma = pairs.iter().map(|p| p.0).sum::<f64>() / trials as f64;
        let mb = pairs.iter().map(|p| p.1).sum::<f64>() / trials as f64;
        let cov = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum::<f64>() / trials as f64;
        assert!(cov.abs() < 3.0 / (trials as f64).sqrt(), "cov {cov}");
    }

    #[test]
    fn bit_budget() {
        assert_eq!(drawn_bits(8, SamplingMode::OneBit), 34);
        assert_eq!(drawn_bits(8, SamplingMode::TwoBit), 64);
        assert_eq!(drawn_bits(1448, SamplingMode::TwoBit), 1448 * 1448);
        let ratio = drawn_bits(1448, SamplingMode::TwoBit) as f64
            / drawn_bits(2048, SamplingMode::OneBit) as f64;
        assert!((ratio - 1.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn pbit_round_trip() {
        let spec = test_spectrum(6);
        for bits in [
            sample_one_bit(&spec, &noise100(), 9).unwrap(),
            sample_two_bit(&spec, &noise100(), u64::MAX).unwrap(),
        ] {
            let mut buf = Vec::new();
            write_bits(&bits, &mut buf).unwrap();
            let planes = if bits.mode() == SamplingMode::TwoBit { 2 } else { 1 };
            assert_eq!(buf.len(), 19 + planes * 9);
            assert_eq!(&buf[..4], b"PBIT");
            assert_eq!(read_bits(buf.as_slice()).unwrap(), bits);
        }
    }

    #[test]
    fn pbit_header_layout() {
        let spec = test_spectrum(4);
        let bits = sample_one_bit(&spec, &noise100(), 0x0102030405060708).unwrap();
        let mut buf = Vec::new();
        write_bits(&bits, &mut buf).unwrap();
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[4, 0, 0, 0]);
        assert_eq!(buf[10], 1);
        assert_eq!(&buf[11..19], &[8, 7, 6, 5, 4, 3, 2, 1]);
        // first byte packs bins (0,0)..(0,3), low bits first
        let mut expected = 0u8;
        for k2 in 0..4 {
            let code = if bits.xr()[[0, k2]] > 0.0 { 1 } else { 0 };
            expected |= code << (2 * k2);
        }
        assert_eq!(buf[19], expected);
    }

    #[test]
    fn pbit_rejects_garbage() {
        assert!(read_bits(&b"PBIX\x01\x00"[..]).is_err());
        let spec = test_spectrum(4);
        let bits = sample_one_bit(&spec, &noise100(), 1).unwrap();
        let mut buf = Vec::new();
        write_bits(&bits, &mut buf).unwrap();
        buf[19] = 0xff;
        assert!(matches!(read_bits(buf.as_slice()), Err(Error::Format { .. })));
        buf.truncate(20);
        assert!(read_bits(buf.as_slice()).is_err());
    }
}
