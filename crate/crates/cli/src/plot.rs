//! Minimal line chart for the dilution table: reference mass (y, 0..1)
//! against target count (x), baseline vs rescaled.

use image::{Rgb, RgbImage};
use mvprior::attention::DilutionRow;

const MARGIN: u32 = 40;
const BG: Rgb<u8> = Rgb([255, 255, 255]);
const AXIS: Rgb<u8> = Rgb([60, 60, 60]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);
const BASELINE: Rgb<u8> = Rgb([31, 119, 180]);
const RESCALED: Rgb<u8> = Rgb([255, 127, 14]);

fn draw_line(img: &mut RgbImage, a: (f64, f64), b: (f64, f64), color: Rgb<u8>) {
    let steps = (a.0 - b.0).abs().max((a.1 - b.1).abs()).ceil() as usize + 1;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let x = a.0 + (b.0 - a.0) * t;
        let y = a.1 + (b.1 - a.1) * t;
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

fn draw_marker(img: &mut RgbImage, center: (f64, f64), color: Rgb<u8>) {
    for dy in -2i64..=2 {
        for dx in -2i64..=2 {
            let x = center.0 as i64 + dx;
            let y = center.1 as i64 + dy;
            if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
                img.put_pixel(x as u32, y as u32, color);
            }
        }
    }
}

pub fn dilution_chart(rows: &[DilutionRow], width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::from_pixel(width, height, BG);
    let x0 = MARGIN as f64;
    let x1 = (width - MARGIN) as f64;
    let y0 = (height - MARGIN) as f64;
    let y1 = MARGIN as f64;

    let max_targets = rows.iter().map(|r| r.n_targets).max().unwrap_or(1).max(1) as f64;
    let to_x = |m: usize| x0 + (x1 - x0) * m as f64 / max_targets;
    let to_y = |mass: f64| y0 + (y1 - y0) * mass.clamp(0.0, 1.0);

    // Horizontal gridlines at mass 0.25 steps.
    for i in 1..4 {
        let y = to_y(i as f64 * 0.25);
        draw_line(&mut img, (x0, y), (x1, y), GRID);
    }
    draw_line(&mut img, (x0, y0), (x1, y0), AXIS);
    draw_line(&mut img, (x0, y0), (x0, y1), AXIS);

    for (series, color) in [
        (rows.iter().map(|r| (r.n_targets, r.mass_baseline)).collect::<Vec<_>>(), BASELINE),
        (rows.iter().map(|r| (r.n_targets, r.mass_rescaled)).collect::<Vec<_>>(), RESCALED),
    ] {
        for pair in series.windows(2) {
            draw_line(
                &mut img,
                (to_x(pair[0].0), to_y(pair[0].1)),
                (to_x(pair[1].0), to_y(pair[1].1)),
                color,
            );
        }
        for &(m, mass) in &series {
            draw_marker(&mut img, (to_x(m), to_y(mass)), color);
        }
    }

    // Legend swatches, top-right: baseline then rescaled.
    draw_marker(&mut img, (x1 - 60.0, y1 + 10.0), BASELINE);
    draw_marker(&mut img, (x1 - 60.0, y1 + 24.0), RESCALED);
    img
}
