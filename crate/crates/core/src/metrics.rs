//! Image-quality metrics: PSNR, NRMSE, SSIM and an optional perceptual hook.

use std::fmt;

use ccdc_tensor::Tensor;

use crate::error::{Error, Result};
use crate::imageops::{luma_plane, ColorImage};

/// Reported for identical images instead of infinity.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("metric operands differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mse(a: &Tensor<f32>, b: &Tensor<f32>) -> f64 {
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum();
    sum / a.len() as f64
}

/// `10 log10(1 / MSE)`, capped at 99 dB.
pub fn psnr(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    psnr_tensor(a.tensor(), b.tensor())
}

pub fn psnr_tensor(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    check_shapes(a, b)?;
    let m = mse(a, b);
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

/// `sqrt(MSE(a, b)) / RMS(b)`.
pub fn nrmse(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    let (a, b) = (a.tensor(), b.tensor());
    check_shapes(a, b)?;
    let rms: f64 = (b.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / b.len() as f64).sqrt();
    if rms == 0.0 {
        return Err(Error::Metric("NRMSE is undefined for an all-zero reference".into()));
    }
    Ok(mse(a, b).sqrt() / rms)
}

pub fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Valid-mode separable filtering of an H×W plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

fn luma_f64(img: &ColorImage) -> Result<Vec<f64>> {
    Ok(luma_plane(img.tensor())?.data().iter().map(|&v| v as f64).collect())
}

/// Mean SSIM over all valid 11×11 Gaussian windows of the luminance.
pub fn ssim(a: &ColorImage, b: &ColorImage) -> Result<f64> {
    check_shapes(a.tensor(), b.tensor())?;
    let (h, w) = a.size();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Metric(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let (x, y) = (luma_f64(a)?, luma_f64(b)?);
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let sxx = filter_valid(&prod(&x, &x), h, w, &k);
    let syy = filter_valid(&prod(&y, &y), h, w, &k);
    let sxy = filter_valid(&prod(&x, &y), h, w, &k);
    let (c1, c2) = ((SSIM_K1).powi(2), (SSIM_K2).powi(2));
    let mut total = 0.0;
    for i in 0..mx.len() {
        let (ux, uy) = (mx[i], my[i]);
        let vx = sxx[i] - ux * ux;
        let vy = syy[i] - uy * uy;
        let cov = sxy[i] - ux * uy;
        total += ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    Ok(total / mx.len() as f64)
}

/// External perceptual distance such as LPIPS.
pub trait PerceptualMetric {
    fn name(&self) -> &str;
    fn distance(&self, a: &ColorImage, b: &ColorImage) -> std::result::Result<f64, String>;
}

#[derive(Clone, Debug, PartialEq)]
pub enum Perceptual {
    NotConfigured,
    Value(f64),
    Unavailable(String),
}

impl fmt::Display for Perceptual {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Perceptual::NotConfigured => Ok(()),
            Perceptual::Value(v) => write!(f, "{v:.6}"),
            Perceptual::Unavailable(_) => write!(f, "unavailable"),
        }
    }
}

/// Delegates to `plugin` if present. Plugin errors and non-finite results
/// become [`Perceptual::Unavailable`].
pub fn lpips_hook(a: &ColorImage, b: &ColorImage, plugin: Option<&dyn PerceptualMetric>) -> Perceptual {
    let Some(plugin) = plugin else {
        return Perceptual::NotConfigured;
    };
    match plugin.distance(a, b) {
        Ok(v) if v.is_finite() => Perceptual::Value(v),
        Ok(v) => Perceptual::Unavailable(format!("{} returned {v}", plugin.name())),
        Err(e) => Perceptual::Unavailable(format!("{}: {e}", plugin.name())),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub nrmse: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub lpips: Perceptual,
    pub runtime_seconds: f64,
}

pub fn score(
    prediction: &ColorImage,
    ground_truth: &ColorImage,
    plugin: Option<&dyn PerceptualMetric>,
    runtime_seconds: f64,
) -> Result<MetricReport> {
    Ok(MetricReport {
        nrmse: nrmse(prediction, ground_truth)?,
        psnr: psnr(prediction, ground_truth)?,
        ssim: ssim(prediction, ground_truth)?,
        lpips: lpips_hook(prediction, ground_truth, plugin),
        runtime_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, h: usize, w: usize) -> ColorImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ColorImage::new(Tensor::from_fn(vec![3, h, w], |_| rng.gen_range(0.0..1.0))).unwrap()
    }

    fn offset(img: &ColorImage, d: f32) -> ColorImage {
        ColorImage::new(img.tensor().map(|v| v + d)).unwrap()
    }

    #[test]
    fn psnr_values() {
        let a = ColorImage::new(Tensor::full(vec![3, 16, 16], 0.5)).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), 99.0);
        assert!((psnr(&a, &offset(&a, 0.1)).unwrap() - 20.0).abs() < 1e-5);
        assert!((psnr(&a, &offset(&a, 0.01)).unwrap() - 40.0).abs() < 1e-4);
        let b = random(1, 16, 17);
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
    }

    #[test]
    fn nrmse_values() {
        let b = ColorImage::new(Tensor::from_fn(vec![3, 8, 8], |i| (i % 7) as f32 / 20.0 + 0.05)).unwrap();
        assert_eq!(nrmse(&b, &b).unwrap(), 0.0);
        let a = ColorImage::new(b.tensor().map(|v| 2.0 * v)).unwrap();
        assert!((nrmse(&a, &b).unwrap() - 1.0).abs() < 1e-7);
        let zero = ColorImage::new(Tensor::zeros(vec![3, 8, 8])).unwrap();
        assert!(matches!(nrmse(&b, &zero), Err(Error::Metric(_))));

        let (p, q) = (random(2, 9, 12), random(3, 9, 12));
        let (mut num, mut den) = (0.0f64, 0.0f64);
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..12 {
                    let i = (c * 9 + y) * 12 + x;
                    num += (p.tensor().data()[i] as f64 - q.tensor().data()[i] as f64).powi(2);
                    den += (q.tensor().data()[i] as f64).powi(2);
                }
            }
        }
        assert!((nrmse(&p, &q).unwrap() - (num / den).sqrt()).abs() < 1e-7);
    }

    /// Independent SSIM: a full 2-D weighted window at every valid position,
    /// with the weights built directly from the exponential.
    fn ssim_direct(a: &ColorImage, b: &ColorImage) -> f64 {
        let (h, w) = a.size();
        let lum = |img: &ColorImage, y: usize, x: usize| {
            let [r, g, bl] = img.pixel(y, x);
            0.299 * r as f64 + 0.587 * g as f64 + 0.114 * bl as f64
        };
        let mut weights = [[0.0f64; 11]; 11];
        let mut total = 0.0;
        for (i, row) in weights.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                total += *v;
            }
        }
        let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = weights[i][j] / total;
                        mx += wt * lum(a, y0 + i, x0 + j);
                        my += wt * lum(b, y0 + i, x0 + j);
                    }
                }
                let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = weights[i][j] / total;
                        let (dx, dy) = (lum(a, y0 + i, x0 + j) - mx, lum(b, y0 + i, x0 + j) - my);
                        vx += wt * dx * dx;
                        vy += wt * dy * dy;
                        cov += wt * dx * dy;
                    }
                }
                acc += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        acc / count as f64
    }

    #[test]
    fn ssim_matches_direct_formula() {
        for seed in 0..3 {
            let (a, b) = (random(10 + seed, 19, 23), random(20 + seed, 19, 23));
            assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-6);
            let near = ColorImage::from_clamped(a.tensor().zip_map(b.tensor(), |x, y| 0.8 * x + 0.2 * y).unwrap()).unwrap();
            assert!((ssim(&a, &near).unwrap() - ssim_direct(&a, &near)).abs() < 1e-6);
        }
    }

    #[test]
    fn ssim_edge_cases() {
        let a = random(5, 16, 16);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = ColorImage::new(a.tensor().map(|v| 1.0 - v)).unwrap();
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        let small = random(6, 10, 16);
        assert!(matches!(ssim(&small, &small), Err(Error::Metric(_))));
    }

    struct Fixed(std::result::Result<f64, String>);

    impl PerceptualMetric for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }

        fn distance(&self, _: &ColorImage, _: &ColorImage) -> std::result::Result<f64, String> {
            self.0.clone()
        }
    }

    #[test]
    fn perceptual_hook() {
        let a = random(7, 12, 12);
        assert_eq!(lpips_hook(&a, &a, None), Perceptual::NotConfigured);
        assert_eq!(lpips_hook(&a, &a, Some(&Fixed(Ok(0.25)))), Perceptual::Value(0.25));
        let failed = lpips_hook(&a, &a, Some(&Fixed(Err("model missing".into()))));
        assert!(matches!(failed, Perceptual::Unavailable(_)));
        assert_eq!(failed.to_string(), "unavailable");
        let report = score(&a, &a, Some(&Fixed(Err("x".into()))), 0.0).unwrap();
        assert_eq!(report.psnr, 99.0);
        assert_eq!(report.nrmse, 0.0);
    }

    proptest! {
        #[test]
        fn psnr_is_symmetric_and_self_capped(s1 in 0u64..1000, s2 in 0u64..1000) {
            let (a, b) = (random(s1, 12, 12), random(s2 + 1000, 12, 12));
            prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
            prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
            prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
            prop_assert_eq!(nrmse(&a, &a).unwrap(), 0.0);
            prop_assert!(nrmse(&a, &b).unwrap() >= 0.0);
        }
    }
}
