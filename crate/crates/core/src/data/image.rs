//! Decode, resize, augment and normalise images.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use image::imageops::FilterType;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::Record;
use crate::config::AugmentConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug)]
pub struct Sample<F: Scalar> {
    /// Normalised `[3, H, W]`.
    pub pixels: Tensor<F>,
    pub score: f64,
}

/// Planar RGB in `[0, 1]`, `[3, size, size]`.
type Planar = Vec<f32>;

/// Decoded and resized images keyed by path. Augmentation always runs on a
/// copy, so cached entries stay pristine.
#[derive(Debug)]
pub struct ImageCache {
    size: usize,
    entries: Mutex<HashMap<PathBuf, Arc<Planar>>>,
}

impl ImageCache {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            entries: Mutex::new(HashMap::new()),
        }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    fn resized(&self, path: &Path) -> Result<Arc<Planar>> {
        if let Some(hit) = self.entries.lock().expect("cache lock").get(path) {
            return Ok(hit.clone());
        }
        let img = Arc::new(decode_resize(path, self.size)?);
        self.entries
            .lock()
            .expect("cache lock")
            .insert(path.to_path_buf(), img.clone());
        Ok(img)
    }

    /// Resize, optionally augment with `rng`, then normalise.
    pub fn load_sample<F: Scalar>(
        &self,
        record: &Record,
        train_mode: bool,
        aug: &AugmentConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Sample<F>> {
        let base = self.resized(&record.image_path)?;
        let pixels = if train_mode && aug.enabled {
            let mut img = base.as_ref().clone();
            augment(&mut img, self.size, aug, rng);
            normalize(&img, self.size)
        } else {
            normalize(&base, self.size)
        };
        Ok(Sample {
            pixels,
            score: record.score,
        })
    }
}

fn decode_resize(path: &Path, size: usize) -> Result<Planar> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let rgb = if rgb.width() as usize == size && rgb.height() as usize == size {
        rgb
    } else {
        image::imageops::resize(&rgb, size as u32, size as u32, FilterType::Triangle)
    };
    let plane = size * size;
    let mut out = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(out)
}

/// Channel-wise ImageNet normalisation into a `[3, S, S]` tensor.
pub fn normalize<F: Scalar>(img: &[f32], size: usize) -> Tensor<F> {
    let plane = size * size;
    let data = img
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let c = i / plane;
            F::of(((v - IMAGENET_MEAN[c]) / IMAGENET_STD[c]) as f64)
        })
        .collect();
    Tensor::new(vec![3, size, size], data).expect("planar buffer matches shape")
}

fn augment(img: &mut Planar, size: usize, aug: &AugmentConfig, rng: &mut ChaCha8Rng) {
    let flip = rng.random::<f64>() < aug.flip_prob;
    let angle = if aug.rotation_degrees > 0.0 {
        rng.random_range(-aug.rotation_degrees..=aug.rotation_degrees)
    } else {
        0.0
    };
    let mut factor = |s: f64| {
        if s > 0.0 {
            rng.random_range((1.0 - s).max(0.0)..=1.0 + s) as f32
        } else {
            1.0
        }
    };
    let (b, c, s) = (factor(aug.brightness), factor(aug.contrast), factor(aug.saturation));

    if flip {
        flip_horizontal(img, size);
    }
    if angle != 0.0 {
        *img = rotate(img, size, angle);
    }
    jitter(img, size, b, c, s);
}

pub(crate) fn flip_horizontal(img: &mut [f32], size: usize) {
    for row in img.chunks_mut(size) {
        row.reverse();
    }
}

/// Rotation about the image centre with bilinear sampling and edge-replicate fill.
pub(crate) fn rotate(img: &[f32], size: usize, degrees: f64) -> Planar {
    let (sin, cos) = degrees.to_radians().sin_cos();
    let c = (size as f64 - 1.0) / 2.0;
    let max = (size - 1) as f64;
    let plane = size * size;
    let mut out = vec![0.0f32; img.len()];
    for y in 0..size {
        for x in 0..size {
            let (dx, dy) = (x as f64 - c, y as f64 - c);
            let sx = (cos * dx + sin * dy + c).clamp(0.0, max);
            let sy = (-sin * dx + cos * dy + c).clamp(0.0, max);
            let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
            let (x1, y1) = ((x0 + 1).min(size - 1), (y0 + 1).min(size - 1));
            let (fx, fy) = ((sx - x0 as f64) as f32, (sy - y0 as f64) as f32);
            for ch in 0..3 {
                let p = &img[ch * plane..(ch + 1) * plane];
                let top = p[y0 * size + x0] * (1.0 - fx) + p[y0 * size + x1] * fx;
                let bot = p[y1 * size + x0] * (1.0 - fx) + p[y1 * size + x1] * fx;
                out[ch * plane + y * size + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness scale, contrast blend toward mean luma, saturation blend toward
/// per-pixel luma; results clamped to `[0, 1]`.
fn jitter(img: &mut [f32], size: usize, brightness: f32, contrast: f32, saturation: f32) {
    let plane = size * size;
    if brightness != 1.0 {
        img.iter_mut().for_each(|v| *v = (*v * brightness).clamp(0.0, 1.0));
    }
    if contrast != 1.0 {
        let mean = (0..plane)
            .map(|i| luma(img[i], img[plane + i], img[2 * plane + i]))
            .sum::<f32>()
            / plane as f32;
        img.iter_mut()
            .for_each(|v| *v = (contrast * *v + (1.0 - contrast) * mean).clamp(0.0, 1.0));
    }
    if saturation != 1.0 {
        for i in 0..plane {
            let g = luma(img[i], img[plane + i], img[2 * plane + i]);
            for ch in 0..3 {
                let v = &mut img[ch * plane + i];
                *v = (saturation * *v + (1.0 - saturation) * g).clamp(0.0, 1.0);
            }
        }
    }
}
