//! Image-quality metrics on real magnitude images.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(reference: &ArrayView2<'_, f64>, test: &ArrayView2<'_, f64>) -> Result<f64> {
    if reference.dim() != test.dim() {
        return Err(Error::shape(format!(
            "reference {:?} vs test {:?}",
            reference.dim(),
            test.dim()
        )));
    }
    let peak = reference.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::validation("reference", "maximum must be positive"));
    }
    Ok(peak)
}

/// `10·log10(max(ref)² / MSE)`; `+∞` when the images are identical.
pub fn psnr(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    let (r, t) = (reference.view(), test.view());
    let peak = check_pair(&r, &t)?;
    let mse = r
        .iter()
        .zip(t.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / r.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering of `x` with `taps` along both axes.
fn filter_valid(x: &Array2<f64>, taps: &[f64]) -> Array2<f64> {
    let k = taps.len();
    let (h, w) = x.dim();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = Array2::<f64>::zeros((h, ow));
    for i in 0..h {
        for j in 0..ow {
            rows[[i, j]] = (0..k).map(|t| taps[t] * x[[i, j + t]]).sum();
        }
    }
    let mut out = Array2::<f64>::zeros((oh, ow));
    for i in 0..oh {
        for j in 0..ow {
            out[[i, j]] = (0..k).map(|t| taps[t] * rows[[i + t, j]]).sum();
        }
    }
    out
}

/// Mean SSIM with an 11×11 Gaussian window (σ = 1.5) over valid positions and
/// dynamic range `max(ref)`.
pub fn ssim(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    let peak = check_pair(&reference.view(), &test.view())?;
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::validation(
            "image",
            format!("{h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        ));
    }
    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let mx = filter_valid(reference, &taps);
    let my = filter_valid(test, &taps);
    let mxx = filter_valid(&(reference * reference), &taps);
    let myy = filter_valid(&(test * test), &taps);
    let mxy = filter_valid(&(reference * test), &taps);
    let mut total = 0.0;
    for idx in 0..mx.len() {
        let (ux, uy) = (mx.as_slice().unwrap()[idx], my.as_slice().unwrap()[idx]);
        let vx = mxx.as_slice().unwrap()[idx] - ux * ux;
        let vy = myy.as_slice().unwrap()[idx] - uy * uy;
        let cxy = mxy.as_slice().unwrap()[idx] - ux * uy;
        let num = (2.0 * (ux * uy) + c1) * (2.0 * cxy + c2);
        let den = (ux * ux + uy * uy + c1) * (vx + vy + c2);
        total += num / den;
    }
    Ok(total / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_identical_is_infinite() {
        let a = Array2::from_shape_fn((8, 8), |(i, j)| (i * j) as f64 + 1.0);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_twenty_db() {
        // peak 1, every pixel off by 0.1 → MSE 0.01
        let r = Array2::from_elem((4, 4), 1.0);
        let t = Array2::from_elem((4, 4), 0.9);
        assert!((psnr(&r, &t).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_images() {
        let a = Array2::from_elem((16, 16), 0.7);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn errors() {
        let a = Array2::from_elem((8, 8), 1.0);
        let b = Array2::from_elem((8, 9), 1.0);
        assert!(matches!(psnr(&a, &b), Err(Error::Shape(_))));
        assert!(ssim(&a, &a).is_err());
        let z = Array2::zeros((12, 12));
        assert!(psnr(&z, &z).is_err());
    }

    #[test]
    fn taps_sum_to_one_and_are_symmetric() {
        let t = gaussian_taps(11, 1.5);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..11 {
            assert_eq!(t[i], t[10 - i]);
        }
    }
}
