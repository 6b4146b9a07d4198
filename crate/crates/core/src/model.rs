//! The full dual-branch network and its learnable score fusion.

use rand_chacha::ChaCha8Rng;

use crate::autograd::{concat, Tape, Var};
use crate::config::ModelConfig;
use crate::embedding::patchify;
use crate::error::{Error, Result};
use crate::mamba::MambaBackbone;
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};
use crate::vit::{BranchOutput, ViTBackbone};

/// `ŷ = W·[p_vit, p_mamba]ᵀ + b` on plain numbers.
pub fn fuse<F: Scalar>(w: [F; 2], b: F, p_vit: F, p_mamba: F) -> F {
    w[0] * p_vit + w[1] * p_mamba + b
}

#[derive(Clone, Debug)]
pub struct VmBeautyNet<F: Scalar> {
    pub config: ModelConfig,
    pub store: ParamStore<F>,
    pub vit: ViTBackbone,
    pub mamba: MambaBackbone,
    /// `W: [2]`
    pub fusion_w: ParamId,
    /// `b: [1]`
    pub fusion_b: ParamId,
}

pub struct ForwardOutput<'t, F: Scalar> {
    /// Fused score `[1]`.
    pub fused: Var<'t, F>,
    pub vit: BranchOutput<'t, F>,
    pub mamba: BranchOutput<'t, F>,
}

/// Plain-number predictions for one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction<F> {
    pub fused: F,
    pub vit: F,
    pub mamba: F,
}

impl<F: Scalar> VmBeautyNet<F> {
    pub fn new(config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let vit = ViTBackbone::register(&mut store, config, rng)?;
        let mamba = MambaBackbone::register(&mut store, config, rng)?;
        let [w0, w1] = config.fusion.init_weight;
        let fusion_w = store.add("fusion.w", Tensor::from_f64([2], &[w0, w1])?);
        let fusion_b = store.add("fusion.b", Tensor::from_f64([1], &[config.fusion.init_bias])?);
        Ok(Self {
            config: config.clone(),
            store,
            vit,
            mamba,
            fusion_w,
            fusion_b,
        })
    }

    /// Current fusion weights and bias.
    pub fn fusion(&self) -> ([F; 2], F) {
        let w = self.store.value(self.fusion_w).data();
        ([w[0], w[1]], self.store.value(self.fusion_b).data()[0])
    }

    pub fn set_fusion(&mut self, w: [f64; 2], b: f64) -> Result<()> {
        self.store.set(self.fusion_w, Tensor::from_f64([2], &w)?)?;
        self.store.set(self.fusion_b, Tensor::from_f64([1], &[b])?)
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.config.image_size;
        [self.config.channels, s, s]
    }

    /// Same architecture with parameters converted to another precision.
    pub fn cast<G: Scalar>(&self) -> VmBeautyNet<G> {
        VmBeautyNet {
            config: self.config.clone(),
            store: self.store.cast(),
            vit: self.vit.clone(),
            mamba: self.mamba.clone(),
            fusion_w: self.fusion_w,
            fusion_b: self.fusion_b,
        }
    }

    pub fn new_tape(&self) -> Tape<F> {
        Tape::new().with_scan_strategy(self.config.mamba.scan_strategy())
    }

    /// Both branch forwards and the fusion on one image `[C, H, W]`.
    /// `rng` drives dropout and is `None` in evaluation.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, F>,
        image: &Tensor<F>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<ForwardOutput<'t, F>> {
        let expect = self.image_shape();
        if image.shape() != expect {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: image.shape().to_vec(),
                rhs: expect.to_vec(),
            });
        }
        let tape = p[self.fusion_w].tape();
        let vit_in = tape.constant(patchify(image, self.config.vit.patch_size)?);
        let mamba_in = tape.constant(patchify(image, self.config.mamba.patch_size)?);
        let vit = self.vit.forward(p, vit_in, rng)?;
        let mamba = self.mamba.forward(p, mamba_in)?;
        let fused = self.fuse_vars(p, &vit.score, &mamba.score)?;
        Ok(ForwardOutput { fused, vit, mamba })
    }

    pub fn fuse_vars<'t>(&self, p: &Bound<'t, F>, p_vit: &Var<'t, F>, p_mamba: &Var<'t, F>) -> Result<Var<'t, F>> {
        let scores = concat(&[*p_vit, *p_mamba], 0)?;
        p[self.fusion_w]
            .mul(&scores)?
            .sum()?
            .reshape([1])?
            .add(&p[self.fusion_b])
    }

    pub fn predict(&self, image: &Tensor<F>) -> Result<Prediction<F>> {
        let tape = self.new_tape();
        let p = self.store.bind(&tape);
        let out = self.forward(&p, image, None)?;
        Ok(Prediction {
            fused: out.fused.item()?,
            vit: out.vit.score.item()?,
            mamba: out.mamba.score.item()?,
        })
    }
}

/// The four configurations compared in the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    VitOnly,
    MambaOnly,
    Averaging,
    LearnedFusion,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::VitOnly,
        Variant::MambaOnly,
        Variant::Averaging,
        Variant::LearnedFusion,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::VitOnly => "vit_only",
            Variant::MambaOnly => "mamba_only",
            Variant::Averaging => "averaging",
            Variant::LearnedFusion => "learned_fusion",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "unknown variant {s:?}; expected one of vit_only, mamba_only, averaging, learned_fusion"
            ))
        })
    }

    /// The score this variant reports.
    pub fn readout<F: Scalar>(self, p: &Prediction<F>) -> F {
        match self {
            Variant::VitOnly => p.vit,
            Variant::MambaOnly => p.mamba,
            Variant::Averaging => (p.vit + p.mamba) * F::of(0.5),
            Variant::LearnedFusion => p.fused,
        }
    }

    /// The differentiable score this variant is trained on.
    pub fn training_output<'t, F: Scalar>(self, out: &ForwardOutput<'t, F>) -> Var<'t, F> {
        match self {
            Variant::VitOnly => out.vit.score,
            Variant::MambaOnly => out.mamba.score,
            Variant::Averaging | Variant::LearnedFusion => out.fused,
        }
    }

    /// Marks which parameters this variant trains.
    pub fn apply_trainable<F: Scalar>(self, model: &mut VmBeautyNet<F>) {
        let store = &mut model.store;
        store.set_trainable("", true);
        match self {
            Variant::VitOnly => {
                store.set_trainable("mamba.", false);
                store.set_trainable("fusion.", false);
            }
            Variant::MambaOnly => {
                store.set_trainable("vit.", false);
                store.set_trainable("fusion.", false);
            }
            Variant::Averaging => store.set_trainable("fusion.", false),
            Variant::LearnedFusion => {}
        }
    }

    /// Readies a freshly initialised model for training this variant.
    /// Averaging pins the fusion at `W = [0.5, 0.5], b = 0`.
    pub fn prepare<F: Scalar>(self, model: &mut VmBeautyNet<F>) -> Result<()> {
        if self == Variant::Averaging {
            model.set_fusion([0.5, 0.5], 0.0)?;
        }
        self.apply_trainable(model);
        Ok(())
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
