use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phasebit::experiment::{acquire, benchmark_dir, center_crop};
use phasebit::metrics::psnr;
use phasebit::pgm::read_pgm;
use phasebit::{read_bits, NoiseModel, SamplingMode};

fn phasebit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phasebit"))
        .args(args)
        .env("PHASEBIT_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn lena() -> PathBuf {
    benchmark_dir().join("lena.pgm")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = reader.headers().unwrap().iter().map(String::from).collect();
    let mut rows = vec![header];
    for rec in reader.records() {
        rows.push(rec.unwrap().iter().map(String::from).collect());
    }
    rows
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(phasebit(&[]).status.code(), Some(1));
    assert_eq!(phasebit(&["reconstruct", "--bogus"]).status.code(), Some(1));
    let out = tempfile::tempdir().unwrap();
    // one-bit geometry needs N > 2M
    let code = phasebit(&["sample", "--image", s(&lena()), "--n", "200", "--out", s(&out.path().join("b"))])
        .status
        .code();
    assert_eq!(code, Some(1));
    // gamma above its bound
    let code = phasebit(&[
        "reconstruct", "--image", s(&lena()), "--m", "16", "--n", "64", "--gamma", "1000", "--out",
        s(out.path()),
    ])
    .status
    .code();
    assert_eq!(code, Some(1));
}

#[test]
fn missing_or_malformed_files_exit_with_two() {
    let out = tempfile::tempdir().unwrap();
    let missing = out.path().join("missing.pgm");
    let code = phasebit(&["metrics", "--reference", s(&missing), "--estimate", s(&missing)]).status.code();
    assert_eq!(code, Some(2));
    let junk = out.path().join("junk.pbit");
    std::fs::write(&junk, b"not a bit file").unwrap();
    let code = phasebit(&["reconstruct", "--bits", s(&junk), "--m", "16", "--out", s(out.path())])
        .status
        .code();
    assert_eq!(code, Some(2));
}

#[test]
fn sample_writes_the_library_bits() {
    let out = tempfile::tempdir().unwrap();
    let path = out.path().join("bits.pbit");
    let result = phasebit(&[
        "sample", "--image", s(&lena()), "--m", "16", "--n", "64", "--mode", "two-bit", "--seed", "5",
        "--out", s(&path),
    ]);
    assert!(result.status.success(), "{}", String::from_utf8_lossy(&result.stderr));
    let from_file = read_bits(File::open(&path).unwrap()).unwrap();
    let image = center_crop(&read_pgm(&lena()).unwrap(), 16).unwrap();
    let noise = NoiseModel::gaussian(100.0, 0.0).unwrap();
    let (_, direct) = acquire(&image, 64, SamplingMode::TwoBit, &noise, 5).unwrap();
    assert_eq!(from_file, direct);
}

#[test]
fn reconstruct_from_bits_writes_outputs() {
    let out = tempfile::tempdir().unwrap();
    let bits = out.path().join("bits.pbit");
    assert!(phasebit(&["sample", "--image", s(&lena()), "--m", "16", "--n", "64", "--out", s(&bits)])
        .status
        .success());
    let dir = out.path().join("run");
    // a single iteration cannot meet the threshold
    let result = phasebit(&[
        "reconstruct", "--bits", s(&bits), "--m", "16", "--image", s(&lena()), "--max-iters", "1",
        "--out", s(&dir),
    ]);
    assert_eq!(result.status.code(), Some(3));
    let estimate = read_pgm(&dir.join("estimate.pgm")).unwrap();
    assert_eq!(estimate.m(), 16);
    let residuals = csv_rows(&dir.join("residuals.csv"));
    assert_eq!(residuals[0], ["iter", "residual", "wall_ms"]);
    assert_eq!(residuals.len(), 2);
    let quality = csv_rows(&dir.join("quality.csv"));
    assert_eq!(quality[0], ["image", "method", "psnr", "ssim", "essim", "ms_ssim"]);
    assert_eq!(quality[1][0..2], ["lena", "algo1"]);

    let result = phasebit(&[
        "reconstruct", "--bits", s(&bits), "--m", "16", "--max-iters", "2000", "--out", s(&dir),
    ]);
    assert_eq!(result.status.code(), Some(0), "{}", String::from_utf8_lossy(&result.stdout));
}

#[test]
fn baselines_refuse_two_bit_samples() {
    let out = tempfile::tempdir().unwrap();
    let code = phasebit(&[
        "reconstruct", "--image", s(&lena()), "--m", "16", "--n", "64", "--mode", "two-bit",
        "--method", "col", "--out", s(out.path()),
    ])
    .status
    .code();
    assert_eq!(code, Some(1));
}

#[test]
fn metrics_of_identical_images() {
    let result = phasebit(&["metrics", "--reference", s(&lena()), "--estimate", s(&lena())]);
    assert!(result.status.success());
    let text = String::from_utf8(result.stdout).unwrap();
    assert_eq!(text.lines().nth(1), Some("lena,-,inf,1,1,1"));
}

#[test]
fn compare_table_matches_saved_estimates() {
    let out = tempfile::tempdir().unwrap();
    let result = phasebit(&[
        "compare", "--images", s(&lena()), "--m", "16", "--n", "64", "--max-iters", "30", "--out",
        s(out.path()),
    ]);
    assert!(matches!(result.status.code(), Some(0 | 3)), "{}", String::from_utf8_lossy(&result.stderr));
    let reference = center_crop(&read_pgm(&lena()).unwrap(), 16).unwrap();
    let rows = csv_rows(&out.path().join("compare.csv"));
    assert_eq!(rows[0], ["image", "method", "n", "psnr", "ssim", "essim", "ms_ssim"]);
    assert_eq!(rows.len(), 5);
    for row in &rows[1..] {
        let (method, n) = (&row[1], &row[2]);
        if method == "algo2" {
            assert_eq!(n, "44");
        } else {
            assert_eq!(n, "64");
        }
        let file = out.path().join("estimates").join(format!("lena_{method}_n{n}_s0.pgm"));
        let estimate = read_pgm(&file).unwrap();
        let recomputed = psnr(&reference, &estimate).unwrap();
        let table: f64 = row[3].parse().unwrap();
        assert!((recomputed - table).abs() <= 1e-9, "{method}: {recomputed} vs {table}");
    }
    assert!(out.path().join("compare_lena.csv").exists());
}

#[test]
fn slope_writes_fit_and_plot() {
    let out = tempfile::tempdir().unwrap();
    let result = phasebit(&[
        "slope", "--m", "16", "--n-list", "64,128,256", "--seeds", "0..2", "--max-iters", "20",
        "--out", s(out.path()),
    ]);
    assert!(matches!(result.status.code(), Some(0 | 3)));
    let slope = csv_rows(&out.path().join("slope.csv"));
    assert_eq!(slope[0], ["image", "method", "m", "fit_sizes", "slope", "decay", "status"]);
    assert_eq!(slope.len(), 3);
    assert!(slope[1..].iter().all(|r| r[3] == "128 256" && r[6] == "ok"));
    let runs = csv_rows(&out.path().join("runs.csv"));
    assert_eq!(runs.len(), 1 + 2 * 3 * 2);
    let svg = std::fs::read_to_string(out.path().join("slope.svg")).unwrap();
    assert!(svg.contains("<polyline"));
}

#[test]
fn slope_flags_an_all_zero_image() {
    let out = tempfile::tempdir().unwrap();
    let zero = out.path().join("zero.pgm");
    phasebit::pgm::write_pgm(&zero, &phasebit::SpatialImage::zeros(16).unwrap()).unwrap();
    let result = phasebit(&[
        "slope", "--images", s(&zero), "--m", "16", "--n-list", "64,128,256", "--seeds", "0..2",
        "--methods", "algo1", "--max-iters", "20", "--out", s(&out.path().join("o")),
    ]);
    assert!(String::from_utf8_lossy(&result.stdout).contains("DEGENERATE_FIT"));
    let slope = csv_rows(&out.path().join("o/slope.csv"));
    assert_eq!(slope[1][6], "DEGENERATE_FIT");
}
