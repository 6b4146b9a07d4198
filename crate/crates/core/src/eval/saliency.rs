//! Gradient × activation token attribution on the patch grid.
//!
//! For a scalar score `s` and the token activations `a: [S, D]` entering a
//! branch's last block, token `i` gets `ReLU(Σ_c a[i,c]·∂s/∂a[i,c])`. Patch
//! tokens are laid out on the `√N × √N` grid and the map is divided by its
//! maximum. The fused map scores `ŷ` and sums the two branch attributions.

use std::fmt::Write as _;
use std::path::Path;

use image::imageops::FilterType;
use image::{ImageBuffer, Luma, Rgb, RgbImage};

use crate::autograd::Gradients;
use crate::data::{IMAGENET_MEAN, IMAGENET_STD};
use crate::embedding::EmbeddingParams;
use crate::error::{Error, Result};
use crate::model::VmBeautyNet;
use crate::tensor::{Scalar, Tensor};
use crate::vit::BranchOutput;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Vit,
    Mamba,
    Fused,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Vit, Branch::Mamba, Branch::Fused];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Vit => "vit",
            Branch::Mamba => "mamba",
            Branch::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Branch::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown branch {s:?}; valid tags are vit, mamba, fused")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyMap {
    pub branch: Branch,
    pub side: usize,
    /// Row-major `side × side`, values in `[0, 1]`.
    pub grid: Vec<f64>,
}

impl SaliencyMap {
    fn from_raw(branch: Branch, side: usize, raw: Vec<f64>) -> Self {
        let max = raw.iter().copied().fold(0.0, f64::max);
        let grid = if max > 0.0 {
            raw.iter().map(|v| v / max).collect()
        } else {
            vec![0.0; raw.len()]
        };
        Self { branch, side, grid }
    }

    /// Patch indices sorted from most to least important (ties by index).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.grid.len()).collect();
        idx.sort_by(|&a, &b| self.grid[b].total_cmp(&self.grid[a]).then(a.cmp(&b)));
        idx
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for row in self.grid.chunks(self.side) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            writeln!(s, "{}", cells.join(",")).expect("string write");
        }
        s
    }

    /// Bilinear upsampling to `size × size`.
    pub fn upsample(&self, size: usize) -> Vec<f32> {
        let src: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_raw(
            self.side as u32,
            self.side as u32,
            self.grid.iter().map(|v| *v as f32).collect(),
        )
        .expect("grid matches side");
        image::imageops::resize(&src, size as u32, size as u32, FilterType::Triangle).into_raw()
    }

    /// Red heat blended over the de-normalised input image.
    pub fn overlay<F: Scalar>(&self, image: &Tensor<F>) -> RgbImage {
        let size = image.shape()[1];
        let plane = size * size;
        let heat = self.upsample(size);
        let px = image.data();
        RgbImage::from_fn(size as u32, size as u32, |x, y| {
            let i = y as usize * size + x as usize;
            let h = heat[i].clamp(0.0, 1.0);
            let rgb: [f32; 3] = std::array::from_fn(|c| {
                let v = (px[c * plane + i].as_f64() as f32 * IMAGENET_STD[c] + IMAGENET_MEAN[c]).clamp(0.0, 1.0);
                let tint = if c == 0 { 1.0 } else { 0.0 };
                (1.0 - 0.5 * h) * v + 0.5 * h * tint
            });
            Rgb(rgb.map(|v| (v * 255.0).round() as u8))
        })
    }

    pub fn write(&self, dir: &Path, stem: &str, image: &Tensor<impl Scalar>) -> Result<()> {
        let csv = dir.join(format!("{stem}_{}.csv", self.branch.name()));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let png = dir.join(format!("{stem}_{}.png", self.branch.name()));
        self.overlay(image).save(&png).map_err(|e| Error::Image {
            path: png.clone(),
            msg: e.to_string(),
        })
    }
}

/// Raw per-patch attribution from one backward pass.
fn attribution<F: Scalar>(grads: &Gradients<F>, out: &BranchOutput<'_, F>, embed: &EmbeddingParams) -> Vec<f64> {
    let act = out.last_block_input.value();
    let grad = grads.get_or_zeros(out.last_block_input);
    let d = act.shape()[1];
    embed
        .patch_range()
        .map(|tok| {
            let row = tok * d..(tok + 1) * d;
            let s: f64 = act.data()[row.clone()]
                .iter()
                .zip(&grad.data()[row])
                .map(|(a, g)| a.as_f64() * g.as_f64())
                .sum();
            s.max(0.0)
        })
        .collect()
}

/// Maps for all three tags from a single forward pass.
pub fn saliency_maps<F: Scalar>(model: &VmBeautyNet<F>, image: &Tensor<F>) -> Result<[SaliencyMap; 3]> {
    let (gv, gm) = (model.vit.embed.config.grid(), model.mamba.embed.config.grid());
    if gv != gm {
        return Err(Error::InvalidArgument(format!(
            "branch patch grids differ ({gv}x{gv} vs {gm}x{gm}); fused saliency needs a shared grid"
        )));
    }
    // Every parameter is a gradient leaf here so frozen branches still attribute.
    let mut model = model.clone();
    model.store.set_trainable("", true);
    let tape = model.new_tape();
    let p = model.store.bind(&tape);
    let out = model.forward(&p, image, None)?;

    let g = tape.backward(out.vit.score)?;
    let vit = attribution(&g, &out.vit, &model.vit.embed);
    let g = tape.backward(out.mamba.score)?;
    let mamba = attribution(&g, &out.mamba, &model.mamba.embed);
    let g = tape.backward(out.fused)?;
    let fused: Vec<f64> = attribution(&g, &out.vit, &model.vit.embed)
        .iter()
        .zip(attribution(&g, &out.mamba, &model.mamba.embed))
        .map(|(a, b)| a + b)
        .collect();
    Ok([
        SaliencyMap::from_raw(Branch::Vit, gv, vit),
        SaliencyMap::from_raw(Branch::Mamba, gv, mamba),
        SaliencyMap::from_raw(Branch::Fused, gv, fused),
    ])
}

pub fn saliency<F: Scalar>(model: &VmBeautyNet<F>, image: &Tensor<F>, branch: Branch) -> Result<SaliencyMap> {
    let [v, m, f] = saliency_maps(model, image)?;
    Ok(match branch {
        Branch::Vit => v,
        Branch::Mamba => m,
        Branch::Fused => f,
    })
}

/// Branch score of a prediction.
pub fn branch_score<F: Scalar>(model: &VmBeautyNet<F>, image: &Tensor<F>, branch: Branch) -> Result<f64> {
    let p = model.predict(image)?;
    Ok(match branch {
        Branch::Vit => p.vit,
        Branch::Mamba => p.mamba,
        Branch::Fused => p.fused,
    }
    .as_f64())
}

/// Replaces one patch (row-major index on a grid of `patch`-sized cells)
/// with mid-gray in normalised units.
pub fn occlude<F: Scalar>(image: &Tensor<F>, patch: usize, index: usize) -> Tensor<F> {
    let size = image.shape()[1];
    let grid = size / patch;
    let (py, px) = (index / grid, index % grid);
    let mut out = image.clone();
    let data = out.data_mut();
    for c in 0..3 {
        let gray = F::of(((0.5 - IMAGENET_MEAN[c]) / IMAGENET_STD[c]) as f64);
        for y in py * patch..(py + 1) * patch {
            for x in px * patch..(px + 1) * patch {
                data[(c * size + y) * size + x] = gray;
            }
        }
    }
    out
}

/// `|Δscore|` for occluding each patch in turn.
pub fn occlusion_deltas<F: Scalar>(model: &VmBeautyNet<F>, image: &Tensor<F>, branch: Branch) -> Result<Vec<f64>> {
    let base = branch_score(model, image, branch)?;
    let patch = model.config.vit.patch_size;
    let n = model.vit.embed.config.num_patches();
    (0..n)
        .map(|i| Ok((branch_score(model, &occlude(image, patch, i), branch)? - base).abs()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::params::normal_tensor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_heads_give_zero_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut m = VmBeautyNet::<f64>::new(&ModelConfig::tiny(), &mut rng).unwrap();
        m.store
            .set(m.vit.head.1, Tensor::from_f64([1], &[3.0]).unwrap())
            .unwrap();
        let img = normal_tensor(&[3, 8, 8], 1.0, &mut rng);
        for map in saliency_maps(&m, &img).unwrap() {
            assert_eq!(map.side, 2);
            assert_eq!(map.grid, vec![0.0; 4]);
        }
    }

    #[test]
    fn maps_are_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = VmBeautyNet::<f64>::new(&ModelConfig::tiny(), &mut rng).unwrap();
        for head in [m.vit.head.0, m.mamba.head.0] {
            m.store.set(head, normal_tensor(&[8, 1], 1.0, &mut rng)).unwrap();
        }
        let img = normal_tensor(&[3, 8, 8], 1.0, &mut rng);
        for map in saliency_maps(&m, &img).unwrap() {
            assert!(map.grid.iter().all(|v| (0.0..=1.0).contains(v)));
            let max = map.grid.iter().copied().fold(0.0, f64::max);
            assert!(max == 1.0 || max == 0.0);
        }
    }

    #[test]
    fn grid_side_at_default_resolution() {
        let map = SaliencyMap::from_raw(Branch::Vit, 14, vec![0.5; 196]);
        assert_eq!(map.to_csv().lines().count(), 14);
        assert_eq!(map.upsample(224).len(), 224 * 224);
    }

    #[test]
    fn bogus_branch_lists_tags() {
        let err = Branch::parse("bogus").unwrap_err().to_string();
        assert!(err.contains("vit, mamba, fused"));
    }

    #[test]
    fn occlusion_touches_one_patch() {
        let img = Tensor::<f64>::full([3, 8, 8], 2.0);
        let o = occlude(&img, 4, 3);
        let changed = img.data().iter().zip(o.data()).filter(|(a, b)| a != b).count();
        assert_eq!(changed, 3 * 16);
    }
}
