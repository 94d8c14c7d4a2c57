//! Defect classes, 8-bit images, the synthetic generator and preprocessing.

mod defect;
pub mod geometry;
mod preprocess;

pub use defect::{generate_defect, generate_set, GeneratedSample, GeneratorParams, MIN_SIDE};
pub use preprocess::{augment, flip_horizontal, preprocess, resize_bilinear, Augmentation, Normalization, CROP_PAD};

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// The eleven defect-pattern classes, numbered densely in this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DefectClass {
    Remain,
    Silk,
    MultiDots,
    Scratch,
    SmallParticle,
    Ball,
    Hump,
    Flask,
    Fallon,
    Oval,
    ColorMark,
}

impl DefectClass {
    pub const ALL: [DefectClass; 11] = [
        DefectClass::Remain,
        DefectClass::Silk,
        DefectClass::MultiDots,
        DefectClass::Scratch,
        DefectClass::SmallParticle,
        DefectClass::Ball,
        DefectClass::Hump,
        DefectClass::Flask,
        DefectClass::Fallon,
        DefectClass::Oval,
        DefectClass::ColorMark,
    ];

    pub fn id(self) -> usize {
        self as usize
    }

    pub fn from_id(id: usize) -> Option<Self> {
        Self::ALL.get(id).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            DefectClass::Remain => "Remain",
            DefectClass::Silk => "Silk",
            DefectClass::MultiDots => "Multi-dots",
            DefectClass::Scratch => "Scratch",
            DefectClass::SmallParticle => "Small-Particle",
            DefectClass::Ball => "Ball",
            DefectClass::Hump => "Hump",
            DefectClass::Flask => "Flask",
            DefectClass::Fallon => "Fallon",
            DefectClass::Oval => "Oval",
            DefectClass::ColorMark => "Color-Mark",
        }
    }

    /// Case-insensitive; `-`, `_` and spaces are interchangeable.
    pub fn from_name(name: &str) -> Option<Self> {
        let key = |s: &str| -> Vec<u8> {
            s.bytes()
                .filter(|b| !matches!(b, b'-' | b'_' | b' '))
                .map(|b| b.to_ascii_lowercase())
                .collect()
        };
        let want = key(name);
        Self::ALL.iter().copied().find(|c| key(c.name()) == want)
    }
}

impl core::fmt::Display for DefectClass {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

/// Row-major 8-bit image with 1 (gray) or 3 (interleaved RGB) channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if !(channels == 1 || channels == 3) {
            return Err(Error::Data(format!("images have 1 or 3 channels, got {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Data(format!(
                "{}x{}x{} image needs {} bytes, got {}",
                width,
                height,
                channels,
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Image { width, height, channels, pixels })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        Image {
            width,
            height,
            channels,
            pixels: vec![value; width * height * channels],
        }
    }

    pub fn get(&self, x: usize, y: usize, channel: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + channel]
    }
}
