//! Independent reference computations and data builders shared by the
//! integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use soilspec::dataset::{Property, WavelengthGrid};
use soilspec::synthgen::{BandSpec, Baseline, ImbalanceRule, Noise, PropertyRule, SynthSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Intercept and slopes from the normal equations of `[1 X]`, solved by LU.
pub fn normal_equations(x: &DMatrix<f64>, y: &[f64]) -> (f64, Vec<f64>) {
    let (n, p) = x.shape();
    let a = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
    let ata = a.transpose() * &a;
    let aty = a.transpose() * nalgebra::DVector::from_column_slice(y);
    let theta = ata.lu().solve(&aty).expect("full-rank design");
    (theta[0], theta.iter().skip(1).copied().collect())
}

/// Direct O(N^2) DFT magnitudes.
pub fn dft_magnitude(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, &v) in x.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * ((k * t) % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
}

pub fn binary_mcc(tp: f64, tn: f64, fp: f64, fn_: f64) -> f64 {
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den
    }
}

/// Multiclass MCC as the correlation between one-hot truth and prediction
/// matrices, expanded sample by sample.
pub fn one_hot_correlation(counts: &[Vec<u64>]) -> f64 {
    let k = counts.len();
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for (i, row) in counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            for _ in 0..c {
                truth.push(i);
                pred.push(j);
            }
        }
    }
    let s = truth.len() as f64;
    let mean = |v: &[usize], c: usize| v.iter().filter(|&&x| x == c).count() as f64 / s;
    let (mut cxy, mut cxx, mut cyy) = (0.0, 0.0, 0.0);
    for c in 0..k {
        let (mt, mp) = (mean(&truth, c), mean(&pred, c));
        for (t, p) in truth.iter().zip(&pred) {
            let a = f64::from(u8::from(*p == c)) - mp;
            let b = f64::from(u8::from(*t == c)) - mt;
            cxy += a * b;
            cxx += a * a;
            cyy += b * b;
        }
    }
    if cxx == 0.0 || cyy == 0.0 {
        0.0
    } else {
        cxy / (cxx * cyy).sqrt()
    }
}

pub fn svr_primal(w: &[f64], b: f64, x: &DMatrix<f64>, y: &[f64], c: f64, eps: f64) -> f64 {
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let f: f64 = (0..x.ncols()).map(|j| w[j] * x[(i, j)]).sum::<f64>() + b;
        loss += ((yi - f).abs() - eps).max(0.0);
    }
    0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * loss
}

/// Minimum of the one-feature SVR primal by successively refined grids.
pub fn brute_force_svr(x: &DMatrix<f64>, y: &[f64], c: f64, eps: f64) -> (f64, f64, f64) {
    let (mut w0, mut b0) = (0.0, 0.0);
    let (mut half_w, mut half_b) = (10.0, 20.0);
    let steps = 400;
    let mut best = f64::INFINITY;
    for _ in 0..6 {
        let (cw, cb) = (w0, b0);
        for i in 0..=steps {
            let w = cw - half_w + 2.0 * half_w * i as f64 / steps as f64;
            for j in 0..=steps {
                let b = cb - half_b + 2.0 * half_b * j as f64 / steps as f64;
                let f = svr_primal(&[w], b, x, y, c, eps);
                if f < best {
                    best = f;
                    w0 = w;
                    b0 = b;
                }
            }
        }
        half_w /= 20.0;
        half_b /= 20.0;
    }
    (w0, b0, best)
}

/// Largest violation of the LASSO optimality conditions for
/// `(1/2n)||y - b0 - X b||^2 + lambda ||b||_1`.
pub fn lasso_kkt(x: &DMatrix<f64>, y: &[f64], intercept: f64, coef: &[f64], lambda: f64) -> f64 {
    let (n, p) = x.shape();
    let r: Vec<f64> = (0..n)
        .map(|i| y[i] - intercept - (0..p).map(|j| coef[j] * x[(i, j)]).sum::<f64>())
        .collect();
    let mut worst = r.iter().sum::<f64>().abs() / n as f64;
    for j in 0..p {
        let g: f64 = (0..n).map(|i| x[(i, j)] * r[i]).sum::<f64>() / n as f64;
        let v = if coef[j] != 0.0 {
            (g - lambda * coef[j].signum()).abs()
        } else {
            (g.abs() - lambda).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    sab / (saa * sbb).sqrt()
}

/// Gaussian blobs around the given centers, `n` points each.
pub fn blobs(centers: &[Vec<f64>], n: usize, spread: f64, seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let mut r = rng(seed);
    let d = centers[0].len();
    let mut x = DMatrix::zeros(centers.len() * n, d);
    let mut labels = Vec::new();
    for (c, center) in centers.iter().enumerate() {
        for i in 0..n {
            let row = c * n + i;
            for f in 0..d {
                let z: f64 = r.sample(StandardNormal);
                x[(row, f)] = center[f] + spread * z;
            }
            labels.push(c);
        }
    }
    (x, labels)
}

/// Three overlapping classes, 20 samples each, 6 features.
pub fn three_class_set(seed: u64) -> (DMatrix<f64>, Vec<usize>) {
    let centers = vec![
        vec![0.0, 0.0, 0.0, 0.5, -0.5, 0.0],
        vec![1.5, 0.5, -1.0, 0.0, 0.5, 0.3],
        vec![-1.0, 1.5, 1.0, -0.5, 0.0, -0.3],
    ];
    blobs(&centers, 20, 0.8, seed)
}

fn band(center_nm: f64, width_nm: f64) -> BandSpec {
    BandSpec {
        center_nm,
        width_nm,
        depth: [0.0, 0.2],
    }
}

/// Two planted bands driving pH equally, plus a pure-noise Na property.
pub fn pipeline_spec(n_samples: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_samples,
        grid: WavelengthGrid::canonical(),
        baseline: Baseline::default(),
        bands: vec![band(700.0, 40.0), band(1900.0, 40.0)],
        properties: vec![
            PropertyRule {
                property: Property::Ph,
                intercept: 5.0,
                weights: vec![10.0, 10.0],
                noise: Noise::Relative(0.05),
            },
            PropertyRule {
                property: Property::Na,
                intercept: 1.0,
                weights: vec![0.0, 0.0],
                noise: Noise::Absolute(0.5),
            },
        ],
        imbalance: None,
        reflectance_noise: 0.0,
        seed,
    }
}

/// One narrow band at 600 nm driving OM with noise at 1% of the signal, an
/// unrelated band at 1800 nm, and instrument noise on every reflectance.
pub fn planted_band_spec(n_samples: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_samples,
        grid: WavelengthGrid::canonical(),
        baseline: Baseline::default(),
        bands: vec![band(600.0, 12.0), band(1800.0, 50.0)],
        properties: vec![PropertyRule {
            property: Property::Om,
            intercept: 2.0,
            weights: vec![15.0, 0.0],
            noise: Noise::Relative(0.01),
        }],
        imbalance: None,
        reflectance_noise: 0.002,
        seed,
    }
}

/// Noise-free two-class construction: Na is a linear function of one band
/// depth and the minority class is its top tail.
pub fn imbalanced_spec(majority: usize, minority: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_samples: majority + minority,
        grid: WavelengthGrid::canonical(),
        baseline: Baseline::default(),
        bands: vec![band(1400.0, 50.0), band(2100.0, 50.0)],
        properties: vec![PropertyRule {
            property: Property::Na,
            intercept: 0.0,
            weights: vec![5.0, 0.0],
            noise: Noise::Absolute(0.0),
        }],
        imbalance: Some(ImbalanceRule {
            property: Property::Na,
            thresholds: vec![0.95],
            counts: vec![majority, minority],
            max_attempts_per_sample: 10_000,
        }),
        reflectance_noise: 0.0,
        seed,
    }
}

/// A small grid for fast command-line runs: 60 bands from 400 nm.
pub fn small_cli_spec(n_samples: usize, seed: u64) -> SynthSpec {
    let grid = WavelengthGrid::new(400.0, 8.5, 60).expect("valid grid");
    SynthSpec {
        n_samples,
        grid,
        baseline: Baseline::default(),
        bands: vec![band(500.0, 25.0), band(750.0, 30.0)],
        properties: vec![
            PropertyRule {
                property: Property::Ph,
                intercept: 5.0,
                weights: vec![8.0, 6.0],
                noise: Noise::Relative(0.05),
            },
            PropertyRule {
                property: Property::Om,
                intercept: 2.0,
                weights: vec![0.0, 20.0],
                noise: Noise::Relative(0.05),
            },
        ],
        imbalance: None,
        reflectance_noise: 0.0,
        seed,
    }
}
