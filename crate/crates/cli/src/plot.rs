//! Minimal PNG line plots on the unit square.

use std::path::Path;

use anyhow::{Context, Result};

const SIZE: usize = 320;
const MARGIN: usize = 30;

struct Canvas {
    pixels: Vec<[u8; 3]>,
}

impl Canvas {
    fn new() -> Self {
        Self {
            pixels: vec![[255, 255, 255]; SIZE * SIZE],
        }
    }

    fn set(&mut self, x: i64, y: i64, rgb: [u8; 3]) {
        if x >= 0 && y >= 0 && (x as usize) < SIZE && (y as usize) < SIZE {
            self.pixels[y as usize * SIZE + x as usize] = rgb;
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), rgb: [u8; 3]) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        loop {
            self.set(x, y, rgb);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    fn marker(&mut self, (x, y): (i64, i64), rgb: [u8; 3]) {
        for dy in -2..=2 {
            for dx in -2..=2 {
                self.set(x + dx, y + dy, rgb);
            }
        }
    }
}

/// Maps a point in [0,1]² to pixel coordinates, y up.
fn to_pixel((x, y): (f64, f64)) -> (i64, i64) {
    let span = (SIZE - 2 * MARGIN) as f64;
    let px = MARGIN as f64 + x.clamp(0.0, 1.0) * span;
    let py = (SIZE - MARGIN) as f64 - y.clamp(0.0, 1.0) * span;
    (px.round() as i64, py.round() as i64)
}

/// Draws axes, a light diagonal and the curve, and writes an RGB PNG.
pub fn write_curve_png(points: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut c = Canvas::new();
    let grey = [200, 200, 200];
    let black = [0, 0, 0];
    c.line(to_pixel((0.0, 0.0)), to_pixel((1.0, 1.0)), grey);
    c.line(to_pixel((0.0, 0.0)), to_pixel((1.0, 0.0)), black);
    c.line(to_pixel((0.0, 0.0)), to_pixel((0.0, 1.0)), black);
    c.line(to_pixel((1.0, 0.0)), to_pixel((1.0, 1.0)), grey);
    c.line(to_pixel((0.0, 1.0)), to_pixel((1.0, 1.0)), grey);
    for t in 1..10 {
        let v = t as f64 / 10.0;
        let (x, y0) = to_pixel((v, 0.0));
        c.line((x, y0), (x, y0 + 4), black);
        let (x0, y) = to_pixel((0.0, v));
        c.line((x0 - 4, y), (x0, y), black);
    }
    let blue = [31, 90, 200];
    for w in points.windows(2) {
        c.line(to_pixel(w[0]), to_pixel(w[1]), blue);
    }
    for &p in points {
        c.marker(to_pixel(p), [200, 40, 40]);
    }

    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, SIZE as u32, SIZE as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().context("encoding PNG header")?;
        let flat: Vec<u8> = c.pixels.iter().flatten().copied().collect();
        writer.write_image_data(&flat).context("encoding PNG body")?;
    }
    vssdet::io::write_atomic(path, &bytes)?;
    Ok(())
}
