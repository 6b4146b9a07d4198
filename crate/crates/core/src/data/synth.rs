//! Procedural face-like images with a known score function.
//!
//! Each image is a skin-toned ellipse with two eyes on a near-gray
//! background. Two latent factors drive both the rendering and the label:
//! brightness `β` scales the face tone and symmetry `σ_s` controls how far
//! the right half and right eye drift from the left. The score is
//! `1 + 4·sigmoid(0.9β + 0.7σ_s)`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Manifest, Record};
use crate::autograd::sigmoid;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    pub folds: usize,
}

struct Face {
    brightness: f64,
    symmetry: f64,
    cx: f64,
    cy: f64,
}

impl Face {
    fn score(&self) -> f64 {
        1.0 + 4.0 * sigmoid(0.9 * self.brightness + 0.7 * self.symmetry)
    }
}

fn render(face: &Face, size: usize, rng: &mut impl Rng) -> image::RgbImage {
    let s = size as f64;
    let noise = Normal::new(0.0, 0.02).expect("valid std");
    let tone = (0.62 + 0.16 * face.brightness).clamp(0.2, 1.0);
    let skin = [tone, tone * 0.78, tone * 0.66];
    // 0 for perfectly symmetric faces, up to 1 for strongly asymmetric ones.
    let asym = sigmoid(-1.5 * face.symmetry);
    let (rx, ry) = (0.3 * s, 0.38 * s);
    let eye_r = (0.06 * s).max(0.75);
    let eyes = [
        (face.cx - 0.12 * s, face.cy - 0.08 * s),
        (face.cx + 0.12 * s, face.cy - 0.08 * s + asym * 0.12 * s),
    ];
    image::RgbImage::from_fn(size as u32, size as u32, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let inside = ((px - face.cx) / rx).powi(2) + ((py - face.cy) / ry).powi(2) <= 1.0;
        let mut rgb = if inside {
            let shade = if px > face.cx { 1.0 - 0.35 * asym } else { 1.0 };
            skin.map(|c| c * shade)
        } else {
            [0.5; 3]
        };
        if inside && eyes.iter().any(|(ex, ey)| (px - ex).hypot(py - ey) <= eye_r) {
            rgb = [0.12, 0.1, 0.1];
        }
        image::Rgb(rgb.map(|c| ((c + noise.sample(rng)).clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Writes `n` PNGs plus `manifest.csv` into `dir`. Folds are assigned
/// round-robin; the same seed always yields byte-identical files.
pub fn synth_dataset(dir: &Path, params: SynthParams) -> Result<Manifest> {
    let SynthParams { n, size, seed, folds } = params;
    if folds == 0 || n < folds {
        return Err(Error::InvalidArgument(format!(
            "synthetic dataset needs at least one sample per fold (n = {n}, folds = {folds})"
        )));
    }
    if size < 4 {
        return Err(Error::InvalidArgument(format!("image size {size} is too small")));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = seed::rng(seed, "synth");
    let jitter = 0.04 * size as f64;
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let face = Face {
            brightness: rng.sample(rand_distr::StandardNormal),
            symmetry: rng.sample(rand_distr::StandardNormal),
            cx: size as f64 / 2.0 + rng.random_range(-jitter..=jitter),
            cy: size as f64 / 2.0 + rng.random_range(-jitter..=jitter),
        };
        let img = render(&face, size, &mut rng);
        let path = dir.join(format!("img_{i:05}.png"));
        img.save(&path).map_err(|e| Error::Image {
            path: path.clone(),
            msg: e.to_string(),
        })?;
        records.push(Record {
            image_path: path,
            // Rounded so the manifest text reproduces the stored value exactly.
            score: (face.score() * 1e6).round() / 1e6,
            fold: i % folds + 1,
        });
    }
    let manifest = Manifest {
        path: dir.join("manifest.csv"),
        records,
        folds,
    };
    manifest.write(&manifest.path)?;
    Ok(manifest)
}
