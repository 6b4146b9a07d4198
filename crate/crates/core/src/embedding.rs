//! Patch tokenisation: patchify, linear projection, class token and learned
//! positional embeddings.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat, Var};
use crate::config::ClassTokenPosition;
use crate::error::{Error, Result};
use crate::params::{normal_tensor, Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchEmbedConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub embed_dim: usize,
}

impl PatchEmbedConfig {
    pub fn new(image_size: usize, patch_size: usize, channels: usize, embed_dim: usize) -> Result<Self> {
        if patch_size == 0 || !image_size.is_multiple_of(patch_size) || image_size == 0 {
            return Err(Error::Config(format!(
                "patch size {patch_size} does not divide image size {image_size}"
            )));
        }
        Ok(Self {
            image_size,
            patch_size,
            channels,
            embed_dim,
        })
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }
}

/// Splits `image[C, H, W]` into `[N, P²·C]`. Patches are ordered row-major
/// over the grid; each row flattens its patch as `[C, P, P]`.
pub fn patchify<F: Scalar>(image: &Tensor<F>, patch: usize) -> Result<Tensor<F>> {
    let &[c, h, w] = image.shape() else {
        return Err(Error::InvalidShape {
            op: "patchify",
            msg: format!("expected [C, H, W], got {:?}", image.shape()),
        });
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::InvalidShape {
            op: "patchify",
            msg: format!("image {h}x{w} is not divisible by patch size {patch}"),
        });
    }
    let (gh, gw) = (h / patch, w / patch);
    let src = image.data();
    let mut out = Vec::with_capacity(src.len());
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..c {
                for y in 0..patch {
                    let row = (ch * h + py * patch + y) * w + px * patch;
                    out.extend_from_slice(&src[row..row + patch]);
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, patch * patch * c], out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<F: Scalar>(
    patches: &Tensor<F>,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Tensor<F>> {
    let (gh, gw) = (height / patch, width / patch);
    if patches.shape() != [gh * gw, patch * patch * channels] {
        return Err(Error::InvalidShape {
            op: "unpatchify",
            msg: format!(
                "patches {:?} do not tile a {channels}x{height}x{width} image",
                patches.shape()
            ),
        });
    }
    let src = patches.data();
    let mut out = vec![F::zero(); channels * height * width];
    let mut k = 0;
    for py in 0..gh {
        for px in 0..gw {
            for ch in 0..channels {
                for y in 0..patch {
                    let row = (ch * height + py * patch + y) * width + px * patch;
                    out[row..row + patch].copy_from_slice(&src[k..k + patch]);
                    k += patch;
                }
            }
        }
    }
    Tensor::new(vec![channels, height, width], out)
}

/// Learned parameters of one branch's embedding.
#[derive(Clone, Debug)]
pub struct EmbeddingParams {
    pub config: PatchEmbedConfig,
    pub class_position: ClassTokenPosition,
    /// `E: [P²·C, D]`
    pub projection: ParamId,
    /// `x_class: [1, D]`, zero-initialised.
    pub class_token: ParamId,
    /// `E_pos: [N+1, D]`, indexed by sequence position.
    pub positional: ParamId,
}

impl EmbeddingParams {
    pub fn register<F: Scalar>(
        store: &mut ParamStore<F>,
        prefix: &str,
        config: PatchEmbedConfig,
        class_position: ClassTokenPosition,
        init_std: f64,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = config.embed_dim;
        let projection = store.add(
            format!("{prefix}.proj"),
            normal_tensor(&[config.patch_dim(), d], init_std, rng),
        );
        let class_token = store.add(format!("{prefix}.cls"), Tensor::zeros([1, d]));
        let positional = store.add(
            format!("{prefix}.pos"),
            normal_tensor(&[config.seq_len(), d], init_std, rng),
        );
        Self {
            config,
            class_position,
            projection,
            class_token,
            positional,
        }
    }

    /// Sequence index of the class token.
    pub fn class_index(&self) -> usize {
        match self.class_position {
            ClassTokenPosition::First => 0,
            ClassTokenPosition::Last => self.config.num_patches(),
        }
    }

    /// Index range of the patch tokens within the sequence.
    pub fn patch_range(&self) -> std::ops::Range<usize> {
        let n = self.config.num_patches();
        match self.class_position {
            ClassTokenPosition::First => 1..n + 1,
            ClassTokenPosition::Last => 0..n,
        }
    }

    /// `z0 = [x_class; x_p E] + E_pos` from precomputed patches `[N, P²·C]`.
    pub fn embed<'t, F: Scalar>(&self, params: &Bound<'t, F>, patches: Var<'t, F>) -> Result<Var<'t, F>> {
        let expect = [self.config.num_patches(), self.config.patch_dim()];
        if patches.shape() != expect {
            return Err(Error::ShapeMismatch {
                op: "embed",
                lhs: patches.shape(),
                rhs: expect.to_vec(),
            });
        }
        let tokens = patches.matmul(&params[self.projection])?;
        let cls = params[self.class_token];
        let seq = match self.class_position {
            ClassTokenPosition::First => concat(&[cls, tokens], 0)?,
            ClassTokenPosition::Last => concat(&[tokens, cls], 0)?,
        };
        seq.add(&params[self.positional])
    }
}
