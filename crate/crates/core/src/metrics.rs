//! Masked image quality metrics for unit-range float images.
//!
//! PSNR uses peak 1.0 over the masked pixels; identical inputs report
//! `f64::INFINITY`. SSIM uses an 11×11 Gaussian window (σ = 1.5) with
//! k1 = 0.01, k2 = 0.03, window weights renormalized over the in-bounds,
//! masked pixels, averaged over masked window centers and channels.

use ndarray::{Array2, Array3};

use crate::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Array3<f64>, b: &Array3<f64>, mask: &Array2<bool>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Validation(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    let (_, h, w) = a.dim();
    if mask.dim() != (h, w) {
        return Err(Error::Validation(format!(
            "mask shape {:?} does not match {h}x{w} images",
            mask.dim()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::Validation("metric mask is empty".into()));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over the masked pixels, peak 1.0.
/// Returns `f64::INFINITY` when the masked pixels are identical.
pub fn psnr(a: &Array3<f64>, b: &Array3<f64>, mask: &Array2<bool>) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let (channels, h, w) = a.dim();
    let mut sum = 0.0;
    let mut count = 0usize;
    for r in 0..h {
        for col in 0..w {
            if !mask[[r, col]] {
                continue;
            }
            for c in 0..channels {
                let d = a[[c, r, col]] - b[[c, r, col]];
                sum += d * d;
                count += 1;
            }
        }
    }
    let mse = sum / count as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

fn gaussian_kernel() -> [[f64; SSIM_WINDOW]; SSIM_WINDOW] {
    let mut k = [[0.0; SSIM_WINDOW]; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    for (i, row) in k.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let dy = i as isize - half;
            let dx = j as isize - half;
            *v = (-((dx * dx + dy * dy) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        }
    }
    k
}

/// Mean SSIM over masked window centers, averaged across channels.
pub fn ssim(a: &Array3<f64>, b: &Array3<f64>, mask: &Array2<bool>) -> Result<f64> {
    check_shapes(a, b, mask)?;
    let (channels, h, w) = a.dim();
    let kernel = gaussian_kernel();
    let half = (SSIM_WINDOW / 2) as isize;
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    let mut total = 0.0;
    let mut windows = 0usize;
    for r in 0..h as isize {
        for col in 0..w as isize {
            if !mask[[r as usize, col as usize]] {
                continue;
            }
            for c in 0..channels {
                let mut wsum = 0.0;
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dy in -half..=half {
                    let y = r + dy;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    for dx in -half..=half {
                        let x = col + dx;
                        if x < 0 || x >= w as isize {
                            continue;
                        }
                        if !mask[[y as usize, x as usize]] {
                            continue;
                        }
                        let weight = kernel[(dy + half) as usize][(dx + half) as usize];
                        let va = a[[c, y as usize, x as usize]];
                        let vb = b[[c, y as usize, x as usize]];
                        wsum += weight;
                        mu_a += weight * va;
                        mu_b += weight * vb;
                        aa += weight * va * va;
                        bb += weight * vb * vb;
                        ab += weight * va * vb;
                    }
                }
                mu_a /= wsum;
                mu_b /= wsum;
                let var_a = (aa / wsum - mu_a * mu_a).max(0.0);
                let var_b = (bb / wsum - mu_b * mu_b).max(0.0);
                let cov = ab / wsum - mu_a * mu_b;
                let value = ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += value;
                windows += 1;
            }
        }
    }
    Ok(total / windows as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};

    fn checker(h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((1, h, w), |(_, r, c)| ((r + c) % 2) as f64)
    }

    fn full_mask(h: usize, w: usize) -> Array2<bool> {
        Array2::from_elem((h, w), true)
    }

    #[test]
    fn identical_images_hit_the_sentinels() {
        let a = checker(16, 16);
        let mask = full_mask(16, 16);
        assert!(psnr(&a, &a, &mask).unwrap().is_infinite());
        assert_eq!(ssim(&a, &a, &mask).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset_gives_twenty_db() {
        let a = Array3::from_shape_fn((3, 8, 8), |(c, r, col)| {
            0.1 + 0.05 * c as f64 + 0.01 * (r + col) as f64
        });
        let b = a.map(|v| v + 0.1);
        let mask = full_mask(8, 8);
        let value = psnr(&a, &b, &mask).unwrap();
        assert!((value - 20.0).abs() < 1e-9, "psnr {value}");
    }

    #[test]
    fn psnr_respects_the_mask() {
        let a = checker(8, 8);
        let mut b = a.clone();
        b[[0, 0, 0]] = 0.5;
        let mut mask = full_mask(8, 8);
        mask[[0, 0]] = false;
        assert!(psnr(&a, &b, &mask).unwrap().is_infinite());
    }

    #[test]
    fn contrast_inversion_is_near_minus_one() {
        let a = checker(32, 32);
        let b = a.map(|v| 1.0 - v);
        let mask = full_mask(32, 32);
        let value = ssim(&a, &b, &mask).unwrap();
        assert!(value < -0.9, "ssim {value}");

        // Direct formula evaluation, written independently.
        let mut kernel = vec![vec![0.0f64; 11]; 11];
        for i in 0..11 {
            for j in 0..11 {
                let dy = i as f64 - 5.0;
                let dx = j as f64 - 5.0;
                kernel[i][j] = (-(dx * dx + dy * dy) / 4.5).exp();
            }
        }
        let mut expected = 0.0;
        let mut n = 0usize;
        for r in 0..32i64 {
            for col in 0..32i64 {
                let mut wsum = 0.0;
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in -5i64..=5 {
                    for dx in -5i64..=5 {
                        let (y, x) = (r + dy, col + dx);
                        if !(0..32).contains(&y) || !(0..32).contains(&x) {
                            continue;
                        }
                        let weight = kernel[(dy + 5) as usize][(dx + 5) as usize];
                        let va = a[[0, y as usize, x as usize]];
                        let vb = b[[0, y as usize, x as usize]];
                        wsum += weight;
                        ma += weight * va;
                        mb += weight * vb;
                        saa += weight * va * va;
                        sbb += weight * vb * vb;
                        sab += weight * va * vb;
                    }
                }
                ma /= wsum;
                mb /= wsum;
                let (va, vb) = ((saa / wsum - ma * ma).max(0.0), (sbb / wsum - mb * mb).max(0.0));
                let cov = sab / wsum - ma * mb;
                expected += ((2.0 * ma * mb + 1e-4) * (2.0 * cov + 9e-4))
                    / ((ma * ma + mb * mb + 1e-4) * (va + vb + 9e-4));
                n += 1;
            }
        }
        expected /= n as f64;
        assert!((value - expected).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let a = checker(4, 4);
        let mask = Array2::from_elem((4, 4), false);
        assert!(psnr(&a, &a, &mask).is_err());
        assert!(ssim(&a, &a, &mask).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = checker(4, 4);
        let b = checker(4, 5);
        assert!(psnr(&a, &b, &full_mask(4, 4)).is_err());
        assert!(ssim(&a, &b, &full_mask(4, 4)).is_err());
        assert!(psnr(&a, &a, &full_mask(4, 5)).is_err());
    }

    #[test]
    fn psnr_nonnegative_for_unit_range_images() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let a = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(0.0..1.0));
            let b = Array3::from_shape_fn((3, 8, 8), |_| rng.random_range(0.0..1.0));
            let value = psnr(&a, &b, &full_mask(8, 8)).unwrap();
            assert!(value >= 0.0);
        }
    }
}
