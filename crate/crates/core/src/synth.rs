//! Analytic synthetic scenes with known motion, for tests and benchmarks.
//!
//! A [`Texture`] is a continuous intensity function, so a frame translated by
//! any subpixel amount can be rendered exactly instead of resampled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::image::Image;

#[derive(Clone, Copy, Debug)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amplitude: f64,
}

#[derive(Clone, Copy, Debug)]
struct Tile {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
    contrast: f64,
}

#[derive(Clone, Debug)]
pub struct Texture {
    mean: f64,
    waves: Vec<Wave>,
    tiles: Vec<Tile>,
    edge: f64,
}

/// Soft step from 0 to 1 over `[-edge/2, edge/2]`.
fn soft_step(u: f64, edge: f64) -> f64 {
    let s = (u / edge + 0.5).clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

impl Texture {
    /// Smooth sum of plane waves whose range is guaranteed to stay inside
    /// `[lo, hi]`.
    pub fn random(seed: u64, lo: f64, hi: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = 10;
        let budget = 0.5 * (hi - lo);
        let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.5..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let waves = raw
            .iter()
            .map(|&a| {
                let wavelength = rng.gen_range(12.0..40.0);
                let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                let k = std::f64::consts::TAU / wavelength;
                Wave {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    amplitude: budget * a / total,
                }
            })
            .collect();
        Self {
            mean: 0.5 * (lo + hi),
            waves,
            tiles: Vec::new(),
            edge: 1.0,
        }
    }

    /// Overlapping soft-edged rectangles over a low-contrast wave
    /// background: many FAST corners, trackable everywhere. Values are
    /// clamped to `[0, 255]` when rendered.
    pub fn mosaic(seed: u64, width: f64, height: f64) -> Self {
        let mut tex = Self::random(seed ^ 0x9e37_79b9_7f4a_7c15, 90.0, 150.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = ((width * height) / 300.0).ceil() as usize;
        tex.tiles = (0..count)
            .map(|_| {
                let (w, h) = (rng.gen_range(6.0..24.0), rng.gen_range(6.0..24.0));
                let x0 = rng.gen_range(-10.0..width);
                let y0 = rng.gen_range(-10.0..height);
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                Tile {
                    x0,
                    y0,
                    x1: x0 + w,
                    y1: y0 + h,
                    contrast: sign * rng.gen_range(25.0..60.0),
                }
            })
            .collect();
        tex.edge = 1.5;
        tex
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = self.mean;
        for w in &self.waves {
            v += w.amplitude * (w.kx * x + w.ky * y + w.phase).sin();
        }
        for t in &self.tiles {
            if x < t.x0 - self.edge || x > t.x1 + self.edge || y < t.y0 - self.edge || y > t.y1 + self.edge {
                continue;
            }
            let e = self.edge;
            v += t.contrast
                * soft_step(x - t.x0, e)
                * soft_step(t.x1 - x, e)
                * soft_step(y - t.y0, e)
                * soft_step(t.y1 - y, e);
        }
        v
    }

    /// Frame in which the scene content has moved by `(dx, dy)`.
    pub fn render(&self, width: usize, height: usize, dx: f64, dy: f64) -> Image {
        self.render_lit(width, height, dx, dy, 1.0, 0.0)
    }

    /// Like [`render`](Self::render) with intensities mapped through
    /// `gain · v + offset` before rounding.
    pub fn render_lit(
        &self,
        width: usize,
        height: usize,
        dx: f64,
        dy: f64,
        gain: f64,
        offset: f64,
    ) -> Image {
        Image::from_fn(width, height, |x, y| {
            let v = gain * self.eval(x as f64 - dx, y as f64 - dy) + offset;
            v.round().clamp(0.0, 255.0) as u8
        })
        .expect("positive dimensions")
    }
}

/// Resamples `img` so its content moves by `(dx, dy)`; pixels whose source
/// falls outside are replicated from the nearest edge.
pub fn translate_bilinear(img: &Image, dx: f64, dy: f64) -> Image {
    let (w, h) = (img.width(), img.height());
    Image::from_fn(w, h, |x, y| {
        let sx = (x as f64 - dx).clamp(0.0, (w - 1) as f64);
        let sy = (y as f64 - dy).clamp(0.0, (h - 1) as f64);
        img.sample_unchecked(sx, sy).round() as u8
    })
    .expect("positive dimensions")
}

/// Applies `gain · v + offset`, rounded and clamped.
pub fn relight(img: &Image, gain: f64, offset: f64) -> Image {
    Image::from_fn(img.width(), img.height(), |x, y| {
        (gain * img.get(x, y) as f64 + offset).round().clamp(0.0, 255.0) as u8
    })
    .expect("positive dimensions")
}

/// `width × height` window of `canvas` at `origin`, with the content moved
/// by the integer `shift`. Pixels falling outside the canvas are 0.
pub fn shifted_crop(canvas: &Image, width: usize, height: usize, origin: (usize, usize), shift: (i64, i64)) -> Image {
    Image::from_fn(width, height, |x, y| {
        let sx = origin.0 as i64 + x as i64 - shift.0;
        let sy = origin.1 as i64 + y as i64 - shift.1;
        if sx < 0 || sy < 0 || sx >= canvas.width() as i64 || sy >= canvas.height() as i64 {
            0
        } else {
            canvas.get(sx as usize, sy as usize)
        }
    })
    .expect("positive dimensions")
}
