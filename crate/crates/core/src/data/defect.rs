//! Parametric defect renderings on a textured gray background.
//!
//! Each class is a distinct geometry following its visual description:
//!
//! | class          | rendering                                              |
//! |----------------|--------------------------------------------------------|
//! | Remain         | flat irregular region clipped by an image edge         |
//! | Silk           | bright dashed polyline                                 |
//! | Multi-dots     | 4 to 7 separated small bright dots                     |
//! | Scratch        | dark anti-aliased line segment                         |
//! | Small-Particle | small ragged bright blob                               |
//! | Ball           | shaded bright disc                                     |
//! | Hump           | soft merged gaussian bumps                             |
//! | Flask          | irregular blob with a rippled top                      |
//! | Fallon         | large ragged bright blob with a sharp edge             |
//! | Oval           | ellipse built from shaded spheres                      |
//! | Color-Mark     | flat dark ellipse, no relief                           |
//!
//! Sizes scale with the shorter image side. The mask marks pixels whose
//! rendered coverage is at least one half.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

// test builds link std, whose inherent float methods shadow these
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DefectClass, Image};
use crate::error::{Error, Result};

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 32;

/// Intensity levels of the renderer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorParams {
    /// Mean background gray level.
    pub background: f64,
    /// Amplitude of the low-frequency background undulation.
    pub texture: f64,
    /// Amplitude of per-pixel uniform noise.
    pub noise: f64,
    /// Gray-level offset of a fully covered foreground pixel.
    pub contrast: f64,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            background: 110.0,
            texture: 10.0,
            noise: 4.0,
            contrast: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSample {
    /// Single-channel image.
    pub image: Image,
    pub label: DefectClass,
    /// Foreground pixels, row-major.
    pub mask: Vec<bool>,
}

struct Canvas {
    width: usize,
    height: usize,
    cover: Vec<f64>,
    relief: Vec<f64>,
}

impl Canvas {
    fn new(width: usize, height: usize) -> Self {
        Canvas {
            width,
            height,
            cover: vec![0.0; width * height],
            relief: vec![0.0; width * height],
        }
    }

    /// `shape(x, y)` returns `(coverage, height)` of one primitive at a pixel
    /// centre; overlapping primitives keep the larger value.
    fn paint(&mut self, shape: impl Fn(f64, f64) -> (f64, f64)) {
        for y in 0..self.height {
            for x in 0..self.width {
                let (c, h) = shape(x as f64, y as f64);
                let c = c.clamp(0.0, 1.0);
                let i = y * self.width + x;
                self.cover[i] = self.cover[i].max(c);
                self.relief[i] = self.relief[i].max(c * h);
            }
        }
    }

    /// Like [`Canvas::paint`] but the second value is the relief itself,
    /// independent of the coverage.
    fn paint_relief(&mut self, shape: impl Fn(f64, f64) -> (f64, f64)) {
        for y in 0..self.height {
            for x in 0..self.width {
                let (c, h) = shape(x as f64, y as f64);
                let i = y * self.width + x;
                self.cover[i] = self.cover[i].max(c.clamp(0.0, 1.0));
                self.relief[i] = self.relief[i].max(h);
            }
        }
    }
}

fn disc(cx: f64, cy: f64, r: f64) -> impl Fn(f64, f64) -> f64 {
    move |x, y| r + 0.5 - ((x - cx).powi(2) + (y - cy).powi(2)).sqrt()
}

fn segment_distance(x: f64, y: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    ((x - a.0 - t * dx).powi(2) + (y - a.1 - t * dy).powi(2)).sqrt()
}

/// Star-shaped blob with radius `r * (1 + sum a_k cos(k theta + phi_k))`.
struct Blob {
    cx: f64,
    cy: f64,
    r: f64,
    harmonics: Vec<(f64, f64, f64)>,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng, cx: f64, cy: f64, r: f64, roughness: f64, orders: usize) -> Self {
        let harmonics = (2..2 + orders)
            .map(|k| (k as f64, rng.gen_range(0.3..1.0) * roughness / orders as f64 * 2.0, rng.gen_range(0.0..2.0 * PI)))
            .collect();
        Blob { cx, cy, r, harmonics }
    }

    fn coverage(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let theta = dy.atan2(dx);
        let scale: f64 = 1.0 + self.harmonics.iter().map(|&(k, a, p)| a * (k * theta + p).cos()).sum::<f64>();
        self.r * scale.max(0.2) + 0.5 - (dx * dx + dy * dy).sqrt()
    }
}

/// Renders one sample of `class` at `width x height` from `seed`.
pub fn generate_defect(
    class: DefectClass,
    width: usize,
    height: usize,
    seed: u64,
    params: &GeneratorParams,
) -> Result<GeneratedSample> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::Config(alloc::format!(
            "generated images must be at least {MIN_SIDE}x{MIN_SIDE}, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (width as f64, height as f64);
    let side = w.min(h);
    let unit = side / 64.0;
    let mut canvas = Canvas::new(width, height);
    let centre = |rng: &mut ChaCha8Rng, spread: f64| {
        (
            w / 2.0 + rng.gen_range(-spread..=spread) * w,
            h / 2.0 + rng.gen_range(-spread..=spread) * h,
        )
    };
    let mut sign = 1.0;
    match class {
        DefectClass::Remain => {
            let r = rng.gen_range(0.28..0.38) * side;
            let along = rng.gen_range(0.3..0.7);
            let inset = rng.gen_range(-0.05..0.08) * side;
            let (cx, cy) = match rng.gen_range(0..4) {
                0 => (along * w, inset),
                1 => (along * w, h - 1.0 - inset),
                2 => (inset, along * h),
                _ => (w - 1.0 - inset, along * h),
            };
            let blob = Blob::random(&mut rng, cx, cy, r, 0.25, 3);
            canvas.paint(|x, y| (blob.coverage(x, y), 0.55));
        }
        DefectClass::Silk => {
            let vertices = rng.gen_range(3..=4);
            let mut pts = Vec::with_capacity(vertices);
            let mut p = (rng.gen_range(0.1..0.3) * w, rng.gen_range(0.15..0.85) * h);
            pts.push(p);
            let step = 0.8 * w / (vertices - 1) as f64;
            for _ in 1..vertices {
                p = (p.0 + step * rng.gen_range(0.7..1.0), (p.1 + rng.gen_range(-0.3..0.3) * h).clamp(0.1 * h, 0.9 * h));
                pts.push(p);
            }
            let (on, off) = (rng.gen_range(5.0..9.0) * unit, rng.gen_range(3.0..5.0) * unit);
            let half = 0.9 * unit.max(1.0);
            let phase = rng.gen_range(0.0..on + off);
            // arc length at the start of each segment
            let mut starts = vec![0.0];
            for s in pts.windows(2) {
                let l = ((s[1].0 - s[0].0).powi(2) + (s[1].1 - s[0].1).powi(2)).sqrt();
                starts.push(starts.last().unwrap() + l);
            }
            canvas.paint(|x, y| {
                let mut best = (f64::INFINITY, 0.0);
                for (i, s) in pts.windows(2).enumerate() {
                    let d = segment_distance(x, y, s[0], s[1]);
                    if d < best.0 {
                        let (dx, dy) = (s[1].0 - s[0].0, s[1].1 - s[0].1);
                        let l2 = dx * dx + dy * dy;
                        let t = (((x - s[0].0) * dx + (y - s[0].1) * dy) / l2).clamp(0.0, 1.0);
                        best = (d, starts[i] + t * l2.sqrt());
                    }
                }
                let lit = (best.1 + phase) % (on + off) < on;
                (if lit { half + 0.5 - best.0 } else { 0.0 }, 0.9)
            });
        }
        DefectClass::MultiDots => {
            let n = rng.gen_range(4..=7);
            let mut dots: Vec<(f64, f64, f64)> = Vec::with_capacity(n);
            let margin = 4.0 * unit + 3.0;
            while dots.len() < n {
                let r = rng.gen_range(1.5..3.0) * unit.max(1.0);
                let (x, y) = (rng.gen_range(margin..w - margin), rng.gen_range(margin..h - margin));
                if dots.iter().all(|&(a, b, q)| ((a - x).powi(2) + (b - y).powi(2)).sqrt() > r + q + 3.0) {
                    dots.push((x, y, r));
                }
            }
            canvas.paint(|x, y| {
                let c = dots.iter().map(|&(cx, cy, r)| disc(cx, cy, r)(x, y)).fold(f64::NEG_INFINITY, f64::max);
                (c, 1.0)
            });
        }
        DefectClass::Scratch => {
            let len = rng.gen_range(0.5..0.8) * side;
            let angle = rng.gen_range(0.0..PI);
            let (cx, cy) = centre(&mut rng, 0.1);
            let (dx, dy) = (angle.cos() * len / 2.0, angle.sin() * len / 2.0);
            let (a, b) = ((cx - dx, cy - dy), (cx + dx, cy + dy));
            let half = 0.8 * unit.max(1.0);
            canvas.paint(|x, y| (half + 0.5 - segment_distance(x, y, a, b), 1.0));
            sign = -1.0;
        }
        DefectClass::SmallParticle => {
            let (cx, cy) = centre(&mut rng, 0.25);
            let r = rng.gen_range(0.04..0.07) * side;
            let blob = Blob::random(&mut rng, cx, cy, r + 1.0, 0.35, 3);
            canvas.paint(|x, y| (blob.coverage(x, y), 1.0));
        }
        DefectClass::Ball => {
            let r = rng.gen_range(0.15..0.25) * side;
            let (cx, cy) = centre(&mut rng, 0.12);
            let cover = disc(cx, cy, r);
            canvas.paint(|x, y| {
                let d2 = ((x - cx).powi(2) + (y - cy).powi(2)) / (r * r);
                (cover(x, y), 0.6 + 0.4 * (1.0 - d2).max(0.0).sqrt())
            });
        }
        DefectClass::Hump => {
            let (cx, cy) = centre(&mut rng, 0.1);
            let bumps: Vec<(f64, f64, f64)> = (0..rng.gen_range(2..=4))
                .map(|_| {
                    (
                        cx + rng.gen_range(-0.12..0.12) * side,
                        cy + rng.gen_range(-0.12..0.12) * side,
                        rng.gen_range(0.08..0.12) * side,
                    )
                })
                .collect();
            canvas.paint_relief(|x, y| {
                let height: f64 = bumps
                    .iter()
                    .map(|&(bx, by, s)| (-((x - bx).powi(2) + (y - by).powi(2)) / (2.0 * s * s)).exp())
                    .sum::<f64>()
                    .min(1.0);
                // soft edge: the mask threshold sits at 30% of the peak
                ((height - 0.3) / 0.4 + 0.5, 0.6 * height)
            });
        }
        DefectClass::Flask => {
            let (cx, cy) = centre(&mut rng, 0.1);
            let r = rng.gen_range(0.2..0.3) * side;
            let blob = Blob::random(&mut rng, cx, cy, r, 0.3, 4);
            let (fx, fy) = (rng.gen_range(0.5..0.9) / unit, rng.gen_range(0.5..0.9) / unit);
            let phase = rng.gen_range(0.0..2.0 * PI);
            canvas.paint(|x, y| (blob.coverage(x, y), 0.55 + 0.45 * (fx * x + phase).sin() * (fy * y).cos()));
        }
        DefectClass::Fallon => {
            let (cx, cy) = centre(&mut rng, 0.1);
            let r = rng.gen_range(0.28..0.36) * side;
            let blob = Blob::random(&mut rng, cx, cy, r, 0.45, 5);
            canvas.paint(|x, y| (blob.coverage(x, y), 1.0));
        }
        DefectClass::Oval => {
            let a = rng.gen_range(0.25..0.35) * side;
            let b = a * rng.gen_range(0.5..0.7);
            let angle = rng.gen_range(0.0..PI);
            let (cx, cy) = centre(&mut rng, 0.08);
            let (ca, sa) = (angle.cos(), angle.sin());
            let spheres: Vec<(f64, f64, f64)> = (0..rng.gen_range(4..=7))
                .map(|_| {
                    let (u, v) = (rng.gen_range(-0.6..0.6) * a, rng.gen_range(-0.5..0.5) * b);
                    (cx + u * ca - v * sa, cy + u * sa + v * ca, rng.gen_range(0.3..0.5) * b)
                })
                .collect();
            canvas.paint(|x, y| {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * ca + dy * sa, -dx * sa + dy * ca);
                let q = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                let cover = (1.0 - q) * b + 0.5;
                let shade = spheres
                    .iter()
                    .map(|&(sx, sy, r)| (1.0 - ((x - sx).powi(2) + (y - sy).powi(2)) / (r * r)).max(0.0).sqrt())
                    .fold(0.0, f64::max);
                (cover, 0.5 + 0.5 * shade)
            });
        }
        DefectClass::ColorMark => {
            let a = rng.gen_range(0.25..0.4) * side;
            let b = a * rng.gen_range(0.6..0.95);
            let angle = rng.gen_range(0.0..PI);
            let (cx, cy) = centre(&mut rng, 0.08);
            let (ca, sa) = (angle.cos(), angle.sin());
            canvas.paint(|x, y| {
                let (dx, dy) = (x - cx, y - cy);
                let (u, v) = (dx * ca + dy * sa, -dx * sa + dy * ca);
                let q = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                ((1.0 - q) * b + 0.5, 0.45)
            });
            sign = -1.0;
        }
    }

    // background: two low-frequency undulations plus pixel noise
    let waves: Vec<(f64, f64, f64)> = (0..2)
        .map(|_| {
            (
                rng.gen_range(0.5..2.0) * 2.0 * PI / w,
                rng.gen_range(0.5..2.0) * 2.0 * PI / h,
                rng.gen_range(0.0..2.0 * PI),
            )
        })
        .collect();
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let texture: f64 = waves.iter().map(|&(kx, ky, p)| (kx * xf + ky * yf + p).sin()).sum::<f64>() / 2.0;
            let noise = rng.gen_range(-1.0..=1.0) * params.noise;
            let i = y * width + x;
            let v = params.background + params.texture * texture + noise + sign * params.contrast * canvas.relief[i];
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    let mask = canvas.cover.iter().map(|&c| c >= 0.5).collect();
    Ok(GeneratedSample {
        image: Image::new(width, height, 1, pixels)?,
        label: class,
        mask,
    })
}

/// `per_class` samples of every class in `classes`, interleaved class by
/// class; sample `i` is rendered from seed `base_seed + i`.
pub fn generate_set(
    classes: &[DefectClass],
    per_class: usize,
    width: usize,
    height: usize,
    base_seed: u64,
    params: &GeneratorParams,
) -> Result<Vec<GeneratedSample>> {
    (0..per_class * classes.len())
        .map(|i| generate_defect(classes[i % classes.len()], width, height, base_seed.wrapping_add(i as u64), params))
        .collect()
}
