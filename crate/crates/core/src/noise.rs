//! Noise models for the acquisition front-end.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NoiseFamily {
    Gaussian,
}

/// Zero-mean noise affecting each real component of the DFT, plus optional
/// Gaussian dither added before the comparator.
///
/// The reconstruction only ever sees the sum of the two, so `cdf`, `pdf` and
/// the derived constants all describe the combined distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    family: NoiseFamily,
    sigma2: f64,
    dither_sigma2: f64,
}

pub fn gaussian_noise_model(sigma2: f64, dither_sigma2: f64) -> Result<NoiseModel> {
    NoiseModel::gaussian(sigma2, dither_sigma2)
}

impl NoiseModel {
    pub fn gaussian(sigma2: f64, dither_sigma2: f64) -> Result<Self> {
        for (name, v) in [("sigma2", sigma2), ("dither_sigma2", dither_sigma2)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a finite non-negative variance, got {v}"
                )));
            }
        }
        if sigma2 + dither_sigma2 <= 0.0 {
            return Err(Error::ZeroNoise);
        }
        Ok(Self {
            family: NoiseFamily::Gaussian,
            sigma2,
            dither_sigma2,
        })
    }

    pub fn family(&self) -> NoiseFamily {
        self.family
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn dither_sigma2(&self) -> f64 {
        self.dither_sigma2
    }

    pub fn total_variance(&self) -> f64 {
        self.sigma2 + self.dither_sigma2
    }

    pub fn std_dev(&self) -> f64 {
        self.total_variance().sqrt()
    }

    #[inline]
    pub fn cdf(&self, x: f64) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => {
                0.5 * erfc(-x / (self.std_dev() * std::f64::consts::SQRT_2))
            }
        }
    }

    #[inline]
    pub fn pdf(&self, x: f64) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => {
                let var = self.total_variance();
                (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
            }
        }
    }

    /// Supremum of the density (attained at 0 for every shipped family).
    pub fn f_max(&self) -> f64 {
        self.pdf(0.0)
    }

    /// Infimum of the density over `[lo, hi]`.
    pub fn f_min_over(&self, lo: f64, hi: f64) -> f64 {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        // symmetric and unimodal: the minimum sits at the endpoint farthest from 0
        self.pdf(lo.abs().max(hi.abs()))
    }

    /// `‖1 − γ f‖_max` over `[-bound, bound]`.
    pub fn contraction_factor(&self, gamma: f64, bound: f64) -> f64 {
        let at_peak = (1.0 - gamma * self.f_max()).abs();
        let at_edge = (1.0 - gamma * self.f_min_over(-bound, bound)).abs();
        at_peak.max(at_edge)
    }

    /// One draw of channel noise plus dither.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            NoiseFamily::Gaussian => {
                let w: f64 = rng.sample(StandardNormal);
                let d: f64 = rng.sample(StandardNormal);
                self.sigma2.sqrt() * w + self.dither_sigma2.sqrt() * d
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f_max_of_variance_100() {
        let noise = NoiseModel::gaussian(100.0, 0.0).unwrap();
        let expected = 1.0 / (10.0 * (2.0 * std::f64::consts::PI).sqrt());
        assert!((noise.f_max() - expected).abs() < 1e-15);
        assert!((noise.f_max() - 0.039894).abs() < 1e-6);
    }

    #[test]
    fn cdf_is_half_at_zero() {
        for (s, d) in [(100.0, 0.0), (1.0, 3.0), (0.0, 0.25)] {
            let noise = NoiseModel::gaussian(s, d).unwrap();
            assert_eq!(noise.cdf(0.0), 0.5);
        }
    }

    #[test]
    fn zero_noise_rejected() {
        assert!(matches!(NoiseModel::gaussian(0.0, 0.0), Err(Error::ZeroNoise)));
        assert!(NoiseModel::gaussian(-1.0, 2.0).is_err());
    }

    #[test]
    fn dither_adds_variance() {
        let noise = NoiseModel::gaussian(64.0, 36.0).unwrap();
        assert_eq!(noise.std_dev(), 10.0);
    }

    #[test]
    fn cdf_symmetry_on_grid() {
        let noise = NoiseModel::gaussian(100.0, 0.0).unwrap();
        for i in -400..=400 {
            let x = i as f64 * 0.25;
            assert!((noise.cdf(x) + noise.cdf(-x) - 1.0).abs() < 1e-12, "x = {x}");
            assert_eq!(noise.pdf(x), noise.pdf(-x));
        }
    }

    #[test]
    fn cdf_monotone() {
        let noise = NoiseModel::gaussian(100.0, 0.0).unwrap();
        let mut prev = 0.0;
        for i in -2000..=2000 {
            let v = noise.cdf(i as f64 * 0.05);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn f_min_uses_farthest_endpoint() {
        let noise = NoiseModel::gaussian(100.0, 0.0).unwrap();
        assert_eq!(noise.f_min_over(-3.0, 20.0), noise.pdf(20.0));
        assert_eq!(noise.f_min_over(5.0, -30.0), noise.pdf(30.0));
    }

    #[test]
    fn draws_match_gaussian_cdf() {
        // Kolmogorov-Smirnov statistic against the analytic CDF.
        let noise = NoiseModel::gaussian(100.0, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let count = 1_000_000;
        let mut draws: Vec<f64> = (0..count).map(|_| noise.draw(&mut rng)).collect();
        draws.sort_by(f64::total_cmp);
        let mut ks: f64 = 0.0;
        for (i, &x) in draws.iter().enumerate() {
            let f = noise.cdf(x);
            let lo = i as f64 / count as f64;
            let hi = (i + 1) as f64 / count as f64;
            ks = ks.max((f - lo).abs()).max((hi - f).abs());
        }
        assert!(ks < 0.01, "KS statistic {ks}");
    }
}
