//! Branch A: pre-norm Transformer encoder over patch tokens with a linear
//! regression head on the class token.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::Var;
use crate::config::{ClassTokenPosition, ModelConfig};
use crate::embedding::{EmbeddingParams, PatchEmbedConfig};
use crate::error::Result;
use crate::params::{normal_tensor, Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct ViTBlock {
    pub ln1: (ParamId, ParamId),
    pub wq: (ParamId, ParamId),
    pub wk: (ParamId, ParamId),
    pub wv: (ParamId, ParamId),
    pub wo: (ParamId, ParamId),
    pub ln2: (ParamId, ParamId),
    pub fc1: (ParamId, ParamId),
    pub fc2: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct ViTBackbone {
    pub embed: EmbeddingParams,
    pub blocks: Vec<ViTBlock>,
    pub norm: (ParamId, ParamId),
    pub head: (ParamId, ParamId),
    pub embed_dim: usize,
    pub num_heads: usize,
    pub dropout: f64,
    pub eps: f64,
}

/// Result of one branch forward pass.
pub struct BranchOutput<'t, F: Scalar> {
    /// Branch score, shape `[1]`.
    pub score: Var<'t, F>,
    /// Token activations entering the last block, `[S, D]`.
    pub last_block_input: Var<'t, F>,
    /// Attention probabilities per block, each `[heads, S, S]` (ViT only).
    pub attention: Vec<Var<'t, F>>,
}

pub(crate) fn linear_params<F: Scalar>(
    store: &mut ParamStore<F>,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    std: f64,
    rng: &mut ChaCha8Rng,
) -> (ParamId, ParamId) {
    let w = store.add(format!("{name}.w"), normal_tensor(&[fan_in, fan_out], std, rng));
    let b = store.add(format!("{name}.b"), Tensor::zeros([fan_out]));
    (w, b)
}

/// Regression head `D → 1`, zero-initialised so the untrained branch predicts 0.
pub(crate) fn zero_head<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> (ParamId, ParamId) {
    let w = store.add(format!("{name}.w"), Tensor::zeros([d, 1]));
    let b = store.add(format!("{name}.b"), Tensor::zeros([1]));
    (w, b)
}

pub(crate) fn norm_params<F: Scalar>(store: &mut ParamStore<F>, name: &str, d: usize) -> (ParamId, ParamId) {
    let g = store.add(format!("{name}.g"), Tensor::full([d], F::one()));
    let b = store.add(format!("{name}.b"), Tensor::zeros([d]));
    (g, b)
}

pub(crate) fn apply_linear<'t, F: Scalar>(
    x: &Var<'t, F>,
    p: &Bound<'t, F>,
    (w, b): (ParamId, ParamId),
) -> Result<Var<'t, F>> {
    x.linear(&p[w], Some(&p[b]))
}

pub(crate) fn apply_norm<'t, F: Scalar>(
    x: &Var<'t, F>,
    p: &Bound<'t, F>,
    (g, b): (ParamId, ParamId),
    eps: f64,
) -> Result<Var<'t, F>> {
    x.layernorm(&p[g], &p[b], eps)
}

/// Inverted dropout with a mask drawn from `rng`.
fn dropout<'t, F: Scalar>(x: Var<'t, F>, p: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var<'t, F>> {
    let Some(rng) = rng else { return Ok(x) };
    if p <= 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let keep = F::of(1.0 / (1.0 - p));
    let mask: Vec<F> = (0..shape.iter().product::<usize>())
        .map(|_| if rng.random::<f64>() < p { F::zero() } else { keep })
        .collect();
    x.mul(&x.tape().constant(Tensor::new(shape, mask)?))
}

impl ViTBackbone {
    pub fn register<F: Scalar>(store: &mut ParamStore<F>, model: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let cfg = &model.vit;
        let d = cfg.embed_dim;
        let std = model.init_std;
        let pe = PatchEmbedConfig::new(model.image_size, cfg.patch_size, model.channels, d)?;
        let embed = EmbeddingParams::register(store, "vit.embed", pe, ClassTokenPosition::First, std, rng);
        let hidden = cfg.mlp_ratio * d;
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("vit.blocks.{i}");
                ViTBlock {
                    ln1: norm_params(store, &format!("{p}.ln1"), d),
                    wq: linear_params(store, &format!("{p}.attn.q"), d, d, std, rng),
                    wk: linear_params(store, &format!("{p}.attn.k"), d, d, std, rng),
                    wv: linear_params(store, &format!("{p}.attn.v"), d, d, std, rng),
                    wo: linear_params(store, &format!("{p}.attn.o"), d, d, std, rng),
                    ln2: norm_params(store, &format!("{p}.ln2"), d),
                    fc1: linear_params(store, &format!("{p}.mlp.fc1"), d, hidden, std, rng),
                    fc2: linear_params(store, &format!("{p}.mlp.fc2"), hidden, d, std, rng),
                }
            })
            .collect();
        let norm = norm_params(store, "vit.norm", d);
        let head = zero_head(store, "vit.head", d);
        Ok(Self {
            embed,
            blocks,
            norm,
            head,
            embed_dim: d,
            num_heads: cfg.num_heads,
            dropout: cfg.dropout,
            eps: model.layernorm_eps,
        })
    }

    /// Multi-head self-attention over `z: [S, D]`. Returns the projected
    /// output and the attention probabilities `[heads, S, S]`.
    pub fn mhsa<'t, F: Scalar>(
        &self,
        block: &ViTBlock,
        p: &Bound<'t, F>,
        z: &Var<'t, F>,
    ) -> Result<(Var<'t, F>, Var<'t, F>)> {
        let s = z.shape()[0];
        let h = self.num_heads;
        let dh = self.embed_dim / h;
        let split = |x: Var<'t, F>| x.reshape([s, h, dh])?.transpose(0, 1);
        let q = split(apply_linear(z, p, block.wq)?)?;
        let k = split(apply_linear(z, p, block.wk)?)?.transpose(1, 2)?;
        let v = split(apply_linear(z, p, block.wv)?)?;
        let scores = q.matmul(&k)?.scale(F::of(1.0 / (dh as f64).sqrt()))?;
        let attn = scores.softmax(2)?;
        let ctx = attn.matmul(&v)?.transpose(0, 1)?.reshape([s, self.embed_dim])?;
        Ok((apply_linear(&ctx, p, block.wo)?, attn))
    }

    fn block_forward<'t, F: Scalar>(
        &self,
        block: &ViTBlock,
        p: &Bound<'t, F>,
        z: Var<'t, F>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var<'t, F>, Var<'t, F>)> {
        let (a, attn) = self.mhsa(block, p, &apply_norm(&z, p, block.ln1, self.eps)?)?;
        let a = dropout(a, self.dropout, rng.as_deref_mut())?;
        let z = z.add(&a)?;
        let m = apply_linear(&apply_norm(&z, p, block.ln2, self.eps)?, p, block.fc1)?.gelu()?;
        let m = dropout(apply_linear(&m, p, block.fc2)?, self.dropout, rng)?;
        Ok((z.add(&m)?, attn))
    }

    /// Runs the encoder stack and head on an embedded sequence `z0: [N+1, D]`.
    pub fn encode<'t, F: Scalar>(
        &self,
        p: &Bound<'t, F>,
        z0: Var<'t, F>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<BranchOutput<'t, F>> {
        let mut z = z0;
        let mut last_block_input = z0;
        let mut attention = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            last_block_input = z;
            let (next, attn) = self.block_forward(block, p, z, rng.as_deref_mut())?;
            attention.push(attn);
            z = next;
        }
        let cls = apply_norm(&z, p, self.norm, self.eps)?.slice(0, self.embed.class_index(), 1)?;
        let score = apply_linear(&cls, p, self.head)?.reshape([1])?;
        Ok(BranchOutput {
            score,
            last_block_input,
            attention,
        })
    }

    pub fn forward<'t, F: Scalar>(
        &self,
        p: &Bound<'t, F>,
        patches: Var<'t, F>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<BranchOutput<'t, F>> {
        let z0 = self.embed.embed(p, patches)?;
        self.encode(p, z0, rng)
    }
}
