//! Frozen quality metrics for three 32x32 integer image pairs. Reference
//! values were computed independently with scikit-image (SSIM) and a
//! scipy.ndimage implementation of MS-SSIM and ESSIM.

use ndarray::Array2;
use phasebit::metrics::{essim, ms_ssim, mse, psnr, ssim, SsimParams};
use phasebit::SpatialImage;

const M: usize = 32;

fn image(f: impl Fn(i64, i64) -> i64) -> SpatialImage {
    SpatialImage::new(Array2::from_shape_fn((M, M), |(r, c)| f(r as i64, c as i64) as f64)).unwrap()
}

fn texture(r: i64, c: i64) -> i64 {
    (37 * r + 11 * c + 5 * ((r * c) % 17)) % 256
}

fn radial(r: i64, c: i64) -> i64 {
    ((r - 16).pow(2) + (c - 16).pow(2)) * 255 / 512
}

fn checker(r: i64, c: i64) -> i64 {
    40 + 170 * (((r / 4) + (c / 4)) % 2)
}

fn pairs() -> Vec<(&'static str, SpatialImage, SpatialImage)> {
    let noisy = image(|r, c| (texture(r, c) + 6 * (((7 * r + 3 * c) % 9) - 4)).clamp(0, 255));
    let blocky = image(|r, c| {
        let (br, bc) = (r / 4 * 4, c / 4 * 4);
        let mut sum = 0;
        for dr in 0..4 {
            for dc in 0..4 {
                sum += radial(br + dr, bc + dc);
            }
        }
        sum / 16
    });
    vec![
        ("texture vs perturbed", image(texture), noisy),
        ("radial vs block average", image(radial), blocky),
        ("checker vs inverted", image(checker), image(|r, c| 255 - checker(r, c))),
    ]
}

// (mse, psnr, ssim, essim, ms_ssim)
const EXPECTED: [(f64, f64, f64, f64, f64); 3] = [
    (228.3212890625, 24.545339531389022, 0.9748440411277768, 0.969255809031417, 0.9918056840267998),
    (209.8935546875, 24.910812581913227, 0.804551890840281, 0.29039202121943736, 0.9170538689367962),
    (28925.0, 3.5180699324412315, -0.9475288310509473, 1.0, 0.0),
];

#[test]
fn metrics_match_frozen_values() {
    let params = SsimParams::default().fitted_to(M);
    assert_eq!(params.scales(), 2);
    for ((name, a, b), expected) in pairs().iter().zip(EXPECTED) {
        let got = (
            mse(a, b).unwrap(),
            psnr(a, b).unwrap(),
            ssim(a, b, &params).unwrap(),
            essim(a, b, &params).unwrap(),
            ms_ssim(a, b, &params).unwrap(),
        );
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-9 * y.abs().max(1.0);
        assert!(close(got.0, expected.0), "{name}: mse {} vs {}", got.0, expected.0);
        assert!(close(got.1, expected.1), "{name}: psnr {} vs {}", got.1, expected.1);
        assert!(close(got.2, expected.2), "{name}: ssim {} vs {}", got.2, expected.2);
        assert!(close(got.3, expected.3), "{name}: essim {} vs {}", got.3, expected.3);
        assert!(close(got.4, expected.4), "{name}: ms_ssim {} vs {}", got.4, expected.4);
    }
}

#[test]
fn full_scale_ms_ssim_needs_large_images() {
    let (_, a, b) = &pairs()[0];
    assert!(ms_ssim(a, b, &SsimParams::default()).is_err());
}
