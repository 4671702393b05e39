//! PNG helpers: unit-range float RGB arrays to and from 8-bit images.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};

use crate::{Error, Result};

/// Quantize a channel-first unit-range RGB array to 8 bits; pixels outside
/// the mask come out black.
pub fn rgb_to_image(rgb: &Array3<f64>, mask: Option<&Array2<bool>>) -> RgbImage {
    let (_, h, w) = rgb.dim();
    let mut img = RgbImage::new(w as u32, h as u32);
    for r in 0..h {
        for c in 0..w {
            let visible = mask.map_or(true, |m| m[[r, c]]);
            let px = if visible {
                let q = |ch: usize| (rgb[[ch, r, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
                Rgb([q(0), q(1), q(2)])
            } else {
                Rgb([0, 0, 0])
            };
            img.put_pixel(c as u32, r as u32, px);
        }
    }
    img
}

pub fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Load any supported image as a channel-first RGB array with values in
/// `[0, 1]` (8-bit levels divided by 255).
pub fn read_image_rgb(path: &Path) -> Result<Array3<f64>> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(Error::Validation(format!("empty image {}", path.display())));
    }
    let mut out = Array3::zeros((3, h as usize, w as usize));
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            out[[c, y as usize, x as usize]] = px[c] as f64 / 255.0;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        // Values on the 8-bit grid survive the round trip bit-exactly.
        let rgb = Array3::from_shape_fn((3, 4, 5), |(c, r, col)| {
            ((c * 37 + r * 11 + col * 3) % 256) as f64 / 255.0
        });
        write_png(&path, &rgb_to_image(&rgb, None)).unwrap();
        let back = read_image_rgb(&path).unwrap();
        assert_eq!(back, rgb);
    }

    #[test]
    fn mask_blanks_pixels() {
        let rgb = Array3::from_elem((3, 2, 2), 1.0);
        let mut mask = Array2::from_elem((2, 2), true);
        mask[[1, 0]] = false;
        let img = rgb_to_image(&rgb, Some(&mask));
        assert_eq!(img.get_pixel(0, 1), &Rgb([0, 0, 0]));
        assert_eq!(img.get_pixel(1, 1), &Rgb([255, 255, 255]));
    }
}
