//! Band-averaged PSNR and SSIM for cubes scaled to `[0, 1]`.

use crate::error::{Error, Result};
use crate::tensor::Tensor3;

/// PSNR reported for a band with zero error. Also the upper clamp for every band.
pub const PSNR_CAP: f64 = 100.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean squared error of each frontal slice.
pub fn band_mse(x: &Tensor3, reference: &Tensor3) -> Result<Vec<f64>> {
    x.same_dims(reference)?;
    let b = x.dims().2;
    Ok((0..b)
        .map(|k| {
            let (a, r) = (x.slice_data(k), reference.slice_data(k));
            a.iter().zip(r).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / a.len() as f64
        })
        .collect())
}

/// `10 log10(1 / mse)` per band (peak 1), clamped to [`PSNR_CAP`], averaged over bands.
pub fn psnr(x: &Tensor3, reference: &Tensor3) -> Result<f64> {
    let mse = band_mse(x, reference)?;
    let total: f64 = mse
        .iter()
        .map(|&m| {
            if m > 0.0 {
                (-10.0 * m.log10()).min(PSNR_CAP)
            } else {
                PSNR_CAP
            }
        })
        .sum();
    Ok(total / mse.len() as f64)
}

/// Side length of the SSIM window for an `h x w` band: 11, or the largest odd
/// size that fits when the band is smaller.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    let n = SSIM_WINDOW.min(h).min(w);
    if n.is_multiple_of(2) {
        n - 1
    } else {
        n
    }
}

/// Normalized Gaussian weights, row-major `n x n`.
pub fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let c = (n as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..n)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut w: Vec<f64> = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

fn ssim_band(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let n = ssim_window_size(h, w);
    let win = gaussian_window(n, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=h - n {
        for j0 in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for di in 0..n {
                for dj in 0..n {
                    let wt = win[di * n + dj];
                    let o = (i0 + di) * w + j0 + dj;
                    mx += wt * x[o];
                    my += wt * y[o];
                }
            }
            let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
            for di in 0..n {
                for dj in 0..n {
                    let wt = win[di * n + dj];
                    let o = (i0 + di) * w + j0 + dj;
                    let (dx, dy) = (x[o] - mx, y[o] - my);
                    sxx += wt * dx * dx;
                    syy += wt * dy * dy;
                    sxy += wt * dx * dy;
                }
            }
            let num = (2.0 * mx * my + c1) * (2.0 * sxy + c2);
            let den = (mx * mx + my * my + c1) * (sxx + syy + c2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

/// Single-scale SSIM with an 11x11 Gaussian window (sigma 1.5), `K1 = 0.01`,
/// `K2 = 0.03` and dynamic range 1, averaged over all window positions that fit
/// inside the band and then over bands. Bands smaller than the window use the
/// reduced window from [`ssim_window_size`].
pub fn ssim(x: &Tensor3, reference: &Tensor3) -> Result<f64> {
    x.same_dims(reference)?;
    let (h, w, b) = x.dims();
    if !x.is_finite() || !reference.is_finite() {
        return Err(Error::Numeric("SSIM of non-finite data".into()));
    }
    let total: f64 = (0..b)
        .map(|k| ssim_band(x.slice_data(k), reference.slice_data(k), h, w))
        .sum();
    Ok(total / b as f64)
}
