//! Branch B: a stack of selective-scan blocks over patch tokens with a
//! class-token regression head.
//!
//! Each block computes
//!
//! ```text
//! u    = LN(z)
//! x    = silu(causal_conv(in_proj(u)))
//! gate = silu(gate_proj(u))
//! y    = scan(x)                          (unidirectional)
//!      = (scan(x) + rev(scan(rev(x)))) / 2  (bidirectional)
//! z'   = z + out_proj(gate ⊙ y)
//! ```
//!
//! with per-token `Δ = softplus(x·W_Δ + b_Δ)`, `B = x·W_B`, `C = x·W_C` and a
//! diagonal `A = −exp(A_log)` so every entry of `A` stays negative. Both scan
//! directions share their projections.

pub mod scan;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat, Var};
use crate::config::{MambaConfig, ModelConfig};
use crate::embedding::{EmbeddingParams, PatchEmbedConfig};
use crate::error::Result;
use crate::params::{normal_tensor, Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};
use crate::vit::{apply_linear, apply_norm, linear_params, norm_params, zero_head, BranchOutput};

#[derive(Clone, Debug)]
pub struct MambaBlock {
    pub norm: (ParamId, ParamId),
    pub in_proj: (ParamId, ParamId),
    pub gate_proj: (ParamId, ParamId),
    /// Depthwise causal taps `[kernel, inner]`; the last tap hits the current token.
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub b_proj: ParamId,
    pub c_proj: ParamId,
    pub dt_proj: (ParamId, ParamId),
    pub a_log: ParamId,
    pub out_proj: (ParamId, ParamId),
}

#[derive(Clone, Debug)]
pub struct MambaBackbone {
    pub embed: EmbeddingParams,
    pub blocks: Vec<MambaBlock>,
    pub norm: (ParamId, ParamId),
    pub head: (ParamId, ParamId),
    pub inner_dim: usize,
    pub d_state: usize,
    pub conv_kernel: usize,
    pub bidirectional: bool,
    pub eps: f64,
}

/// Inverse of softplus, for initialising `b_Δ` from a target step size.
fn inv_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

impl MambaBackbone {
    pub fn register<F: Scalar>(store: &mut ParamStore<F>, model: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let cfg: &MambaConfig = &model.mamba;
        let d = cfg.embed_dim;
        let inner = cfg.inner_dim();
        let n = cfg.d_state;
        let std = model.init_std;
        let pe = PatchEmbedConfig::new(model.image_size, cfg.patch_size, model.channels, d)?;
        let embed = EmbeddingParams::register(store, "mamba.embed", pe, cfg.class_token, std, rng);

        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("mamba.blocks.{i}");
                let norm = norm_params(store, &format!("{p}.norm"), d);
                let in_proj = linear_params(store, &format!("{p}.in_proj"), d, inner, std, rng);
                let gate_proj = linear_params(store, &format!("{p}.gate_proj"), d, inner, std, rng);
                let conv_std = 1.0 / (cfg.conv_kernel as f64).sqrt();
                let conv_w = store.add(
                    format!("{p}.conv.w"),
                    normal_tensor(&[cfg.conv_kernel, inner], conv_std, rng),
                );
                let conv_b = store.add(format!("{p}.conv.b"), Tensor::zeros([inner]));
                let b_proj = store.add(format!("{p}.b_proj"), normal_tensor(&[inner, n], std, rng));
                let c_proj = store.add(format!("{p}.c_proj"), normal_tensor(&[inner, n], std, rng));
                let dt_w = store.add(format!("{p}.dt_proj.w"), normal_tensor(&[inner, inner], std, rng));
                let (lo, hi) = (cfg.dt_min.ln(), cfg.dt_max.ln());
                let dt_bias: Vec<F> = (0..inner)
                    .map(|_| {
                        let dt = if hi > lo {
                            rng.random_range(lo..hi).exp()
                        } else {
                            cfg.dt_min
                        };
                        F::of(inv_softplus(dt))
                    })
                    .collect();
                let dt_b = store.add(format!("{p}.dt_proj.b"), Tensor::from_parts(vec![inner], dt_bias));
                let a_log: Vec<F> = (0..inner)
                    .flat_map(|_| (1..=n).map(|k| F::of((k as f64).ln())))
                    .collect();
                let a_log = store.add(format!("{p}.a_log"), Tensor::from_parts(vec![inner, n], a_log));
                let out_proj = linear_params(store, &format!("{p}.out_proj"), inner, d, std, rng);
                MambaBlock {
                    norm,
                    in_proj,
                    gate_proj,
                    conv_w,
                    conv_b,
                    b_proj,
                    c_proj,
                    dt_proj: (dt_w, dt_b),
                    a_log,
                    out_proj,
                }
            })
            .collect();
        let norm = norm_params(store, "mamba.norm", d);
        let head = zero_head(store, "mamba.head", d);
        Ok(Self {
            embed,
            blocks,
            norm,
            head,
            inner_dim: inner,
            d_state: n,
            conv_kernel: cfg.conv_kernel,
            bidirectional: cfg.bidirectional,
            eps: model.layernorm_eps,
        })
    }

    /// Depthwise causal convolution over tokens of `x: [S, I]`.
    pub fn causal_conv<'t, F: Scalar>(
        &self,
        block: &MambaBlock,
        p: &Bound<'t, F>,
        x: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let s = x.shape()[0];
        let k = self.conv_kernel;
        let padded = if k > 1 {
            let pad = x.tape().constant(Tensor::zeros([k - 1, self.inner_dim]));
            concat(&[pad, *x], 0)?
        } else {
            *x
        };
        let w = p[block.conv_w];
        let mut acc = p[block.conv_b];
        for j in 0..k {
            let tap = w.slice(0, j, 1)?.reshape([self.inner_dim])?;
            let term = padded.slice(0, j, s)?.mul(&tap)?;
            acc = term.add(&acc)?;
        }
        Ok(acc)
    }

    /// Input-conditioned scan of `x: [S, I]` in sequence order.
    pub fn ssm<'t, F: Scalar>(
        &self,
        block: &MambaBlock,
        p: &Bound<'t, F>,
        x: &Var<'t, F>,
        a: &Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let delta = apply_linear(x, p, block.dt_proj)?.softplus()?;
        let b = x.matmul(&p[block.b_proj])?;
        let c = x.matmul(&p[block.c_proj])?;
        x.selective_scan(&delta, a, &b, &c)
    }

    pub fn block_forward<'t, F: Scalar>(
        &self,
        block: &MambaBlock,
        p: &Bound<'t, F>,
        z: Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let u = apply_norm(&z, p, block.norm, self.eps)?;
        let x = self
            .causal_conv(block, p, &apply_linear(&u, p, block.in_proj)?)?
            .silu()?;
        let gate = apply_linear(&u, p, block.gate_proj)?.silu()?;
        let a = p[block.a_log].exp()?.scale(-F::one())?;
        let forward = self.ssm(block, p, &x, &a)?;
        let y = if self.bidirectional {
            let backward = self.ssm(block, p, &x.reverse(0)?, &a)?.reverse(0)?;
            forward.add(&backward)?.scale(F::of(0.5))?
        } else {
            forward
        };
        z.add(&apply_linear(&y.mul(&gate)?, p, block.out_proj)?)
    }

    pub fn encode<'t, F: Scalar>(&self, p: &Bound<'t, F>, z0: Var<'t, F>) -> Result<BranchOutput<'t, F>> {
        let mut z = z0;
        let mut last_block_input = z0;
        for block in &self.blocks {
            last_block_input = z;
            z = self.block_forward(block, p, z)?;
        }
        let cls = apply_norm(&z, p, self.norm, self.eps)?.slice(0, self.embed.class_index(), 1)?;
        let score = apply_linear(&cls, p, self.head)?.reshape([1])?;
        Ok(BranchOutput {
            score,
            last_block_input,
            attention: Vec::new(),
        })
    }

    pub fn forward<'t, F: Scalar>(&self, p: &Bound<'t, F>, patches: Var<'t, F>) -> Result<BranchOutput<'t, F>> {
        let z0 = self.embed.embed(p, patches)?;
        self.encode(p, z0)
    }
}
