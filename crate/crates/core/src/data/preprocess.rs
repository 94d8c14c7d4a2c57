//! Image to network-input conversion and training-time augmentation.

use alloc::vec;
use alloc::vec::Vec;

// test builds link std, whose inherent float methods shadow these
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Image;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::{Shape, Tensor};

/// Zero padding on each side before a random crop.
pub const CROP_PAD: usize = 4;

/// Per-channel standardization applied after scaling to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|&s| !(s > 0.0 && s.is_finite())) || self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::Config("normalization std must be positive and finite".into()));
        }
        Ok(())
    }
}

/// Seeded flip / crop parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Augmentation {
    pub flip: bool,
    /// Crop offset into the padded image, each in `0..=2 * CROP_PAD`.
    pub dx: usize,
    pub dy: usize,
}

impl Augmentation {
    pub fn identity() -> Self {
        Augmentation {
            flip: false,
            dx: CROP_PAD,
            dy: CROP_PAD,
        }
    }

    /// Flip with probability one half, uniform crop offset.
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Augmentation {
            flip: rng.gen_bool(0.5),
            dx: rng.gen_range(0..=2 * CROP_PAD),
            dy: rng.gen_range(0..=2 * CROP_PAD),
        }
    }
}

/// Bilinear resize with half-pixel centres; the identity when the size
/// already matches.
pub fn resize_bilinear(image: &Image, width: usize, height: usize) -> Result<Image> {
    if width == 0 || height == 0 || image.width == 0 || image.height == 0 {
        return Err(Error::Data("cannot resize an empty image".into()));
    }
    if width == image.width && height == image.height {
        return Ok(image.clone());
    }
    let c = image.channels;
    let sx = image.width as f64 / width as f64;
    let sy = image.height as f64 / height as f64;
    let axis = |o: usize, scale: f64, len: usize| {
        let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i = p.floor() as usize;
        (i, (i + 1).min(len - 1), p - i as f64)
    };
    let mut out = Vec::with_capacity(width * height * c);
    for y in 0..height {
        let (y0, y1, fy) = axis(y, sy, image.height);
        for x in 0..width {
            let (x0, x1, fx) = axis(x, sx, image.width);
            for ch in 0..c {
                let g = |xx, yy| image.get(xx, yy, ch) as f64;
                let top = g(x0, y0) * (1.0 - fx) + g(x1, y0) * fx;
                let bottom = g(x0, y1) * (1.0 - fx) + g(x1, y1) * fx;
                out.push((top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Image::new(width, height, c, out)
}

/// Mirrors every plane left to right.
pub fn flip_horizontal<T: Real>(tensor: &Tensor<T>) -> Tensor<T> {
    let w = tensor.shape().w;
    let mut out = tensor.clone();
    for (src, dst) in tensor.data().chunks(w).zip(out.data_mut().chunks_mut(w)) {
        dst.iter_mut().zip(src.iter().rev()).for_each(|(d, &s)| *d = s);
    }
    out
}

/// Optional flip, then a crop of the original size from the image padded
/// with `CROP_PAD` zeros (zero is the mean level after standardization).
pub fn augment<T: Real>(tensor: &Tensor<T>, aug: Augmentation) -> Tensor<T> {
    let src = if aug.flip { flip_horizontal(tensor) } else { tensor.clone() };
    let s = src.shape();
    let mut out = Tensor::zeros(s);
    let (ox, oy) = (aug.dx as isize - CROP_PAD as isize, aug.dy as isize - CROP_PAD as isize);
    for plane in 0..s.n * s.c {
        let base = plane * s.h * s.w;
        for y in 0..s.h {
            let sy = y as isize + oy;
            if sy < 0 || sy >= s.h as isize {
                continue;
            }
            for x in 0..s.w {
                let sx = x as isize + ox;
                if sx >= 0 && sx < s.w as isize {
                    out.data_mut()[base + y * s.w + x] = src.data()[base + sy as usize * s.w + sx as usize];
                }
            }
        }
    }
    out
}

/// Resize to `width x height`, scale to `[0, 1]`, standardize per channel and
/// lay out as a `(1, channels, height, width)` tensor. Gray images are
/// replicated across the channels. With `augment`, a seeded flip and crop
/// follow.
pub fn preprocess<T: Real>(
    image: &Image,
    width: usize,
    height: usize,
    channels: usize,
    norm: &Normalization,
    augment_seed: Option<u64>,
) -> Result<Tensor<T>> {
    if !(channels == 1 || channels == 3) {
        return Err(Error::Config(alloc::format!("input channels must be 1 or 3, got {channels}")));
    }
    if image.channels == 3 && channels == 1 {
        return Err(Error::Data("color image given to a single-channel network".into()));
    }
    let resized = resize_bilinear(image, width, height)?;
    let mut data = vec![T::zero(); channels * width * height];
    for ch in 0..channels {
        let src = if resized.channels == 1 { 0 } else { ch };
        let (mean, std) = (norm.mean[ch], norm.std[ch]);
        let plane = &mut data[ch * width * height..(ch + 1) * width * height];
        for (i, v) in plane.iter_mut().enumerate() {
            let p = resized.pixels[i * resized.channels + src] as f64 / 255.0;
            *v = T::from_f64((p - mean) / std);
        }
    }
    let t = Tensor::from_vec(Shape::new(1, channels, height, width), data)?;
    Ok(match augment_seed {
        Some(seed) => augment(&t, Augmentation::sample(seed)),
        None => t,
    })
}
