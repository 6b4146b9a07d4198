//! Squared-error training with AdamW, per-epoch checkpoints and the k-fold
//! driver.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::autograd::Var;
use crate::checkpoint::{self, CheckpointMeta};
use crate::config::{RunConfig, TrainConfig};
use crate::data::{Loader, Manifest, Record, Sample};
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport};
use crate::model::{Variant, VmBeautyNet};
use crate::params::ParamStore;
use crate::seed;
use crate::tensor::{Scalar, Tensor};

pub const HISTORY_HEADER: &str = "epoch,mean_train_loss,val_pc,val_mae,val_rmse";

/// Batch-mean squared error on the tape.
pub fn mse_loss<'t, F: Scalar>(pred: &Var<'t, F>, target: &Tensor<F>) -> Result<Var<'t, F>> {
    if pred.shape() != target.shape() {
        return Err(Error::LengthMismatch(pred.shape().iter().product(), target.numel()));
    }
    if target.numel() == 0 {
        return Err(Error::EmptyTestSet);
    }
    pred.sub(&pred.tape().constant(target.clone()))?.square()?.mean()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl From<&TrainConfig> for AdamW {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: c.learning_rate,
            beta1: c.beta1,
            beta2: c.beta2,
            eps: c.eps,
            weight_decay: c.weight_decay,
        }
    }
}

/// First and second moments for every parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F: Scalar> {
    pub t: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(store: &ParamStore<F>) -> Self {
        let zeros: Vec<Tensor<F>> = store.iter().map(|e| Tensor::zeros(e.value.shape())).collect();
        Self {
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Named tensors for checkpointing.
    pub fn to_named(&self, store: &ParamStore<F>) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::with_capacity(2 * store.len());
        for (e, (m, v)) in store.iter().zip(self.m.iter().zip(&self.v)) {
            out.push((format!("optim.m.{}", e.name), m.clone()));
            out.push((format!("optim.v.{}", e.name), v.clone()));
        }
        out
    }

    pub fn from_named(store: &ParamStore<F>, t: u64, named: &[(String, Tensor<F>)]) -> Result<Self> {
        let mut state = Self::new(store);
        state.t = t;
        for (name, tensor) in named {
            let (slot, pname) = if let Some(p) = name.strip_prefix("optim.m.") {
                (&mut state.m, p)
            } else if let Some(p) = name.strip_prefix("optim.v.") {
                (&mut state.v, p)
            } else {
                return Err(Error::UnknownParam(name.clone()));
            };
            let id = store.id(pname)?;
            let expected = store.value(id).shape();
            if tensor.shape() != expected {
                return Err(Error::CheckpointShape {
                    name: name.clone(),
                    stored: tensor.shape().to_vec(),
                    expected: expected.to_vec(),
                });
            }
            slot[id.index()] = tensor.clone();
        }
        Ok(state)
    }
}

/// One decoupled-weight-decay Adam update of every trainable parameter:
/// `θ ← θ·(1 − η·wd) − η·m̂/(√v̂ + eps)`.
pub fn adamw_step<F: Scalar>(store: &mut ParamStore<F>, state: &mut OptimizerState<F>, hp: &AdamW) -> Result<()> {
    if let Some(e) = store.iter().find(|e| e.trainable && e.grad.is_none()) {
        return Err(Error::MissingGrad(e.name.clone()));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (F::of(hp.beta1), F::of(hp.beta2));
    let (c1, c2) = (F::of(1.0 - hp.beta1.powi(t)), F::of(1.0 - hp.beta2.powi(t)));
    let lr = F::of(hp.lr);
    let decay = F::of(1.0 - hp.lr * hp.weight_decay);
    let eps = F::of(hp.eps);
    for (i, e) in store.iter_mut().enumerate() {
        if !e.trainable {
            continue;
        }
        let g = e.grad.as_ref().expect("checked above");
        let (m, v) = (state.m[i].data_mut(), state.v[i].data_mut());
        let theta = e.value.data_mut();
        for (j, &gj) in g.data().iter().enumerate() {
            m[j] = b1 * m[j] + (F::one() - b1) * gj;
            v[j] = b2 * v[j] + (F::one() - b2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            theta[j] = theta[j] * decay - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales gradients so their global norm is at most `max_norm`.
pub fn clip_grad_norm<F: Scalar>(store: &mut ParamStore<F>, max_norm: f64) -> f64 {
    let norm = store.grad_norm();
    if max_norm > 0.0 && norm > max_norm {
        let s = F::of(max_norm / norm);
        for e in store.iter_mut() {
            if let Some(g) = e.grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    norm
}

/// Learning rate at `step` (0-based) out of `total`.
pub fn learning_rate(cfg: &TrainConfig, step: u64, total: u64) -> f64 {
    if !cfg.cosine_schedule || total == 0 {
        return cfg.learning_rate;
    }
    let progress = (step as f64 / total as f64).min(1.0);
    0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Batch-mean squared error of `variant`'s training output and its gradient
/// for every parameter in store order. Each sample runs on its own tape;
/// per-sample gradients are summed in sample order.
pub fn batch_gradients<F: Scalar>(
    model: &VmBeautyNet<F>,
    variant: Variant,
    samples: &[Sample<F>],
    dropout_rng: impl Fn(usize) -> Option<ChaCha8Rng> + Sync,
) -> Result<(f64, Vec<Tensor<F>>)> {
    if samples.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let inv_b = F::of(1.0 / samples.len() as f64);
    let per_sample: Vec<(F, Vec<Tensor<F>>)> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let tape = model.new_tape();
            let p = model.store.bind(&tape);
            let mut rng = dropout_rng(i);
            let out = model.forward(&p, &s.pixels, rng.as_mut())?;
            let y = variant.training_output(&out);
            let target = tape.constant(Tensor::full([1], F::of(s.score)));
            let loss = y.sub(&target)?.square()?.sum()?.scale(inv_b)?;
            let grads = tape.backward(loss)?;
            Ok((loss.item()?, p.collect_grads(&grads)))
        })
        .collect::<Result<_>>()?;
    let mut iter = per_sample.into_iter();
    let (first_loss, mut acc) = iter.next().expect("non-empty batch");
    let mut loss = first_loss.as_f64();
    for (l, grads) in iter {
        loss += l.as_f64();
        for (a, g) in acc.iter_mut().zip(&grads) {
            for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                *x += y;
            }
        }
    }
    Ok((loss, acc))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub val: Option<MetricsReport>,
}

pub struct TrainOutcome<F: Scalar> {
    pub model: VmBeautyNet<F>,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
    /// Digest of every epoch's sample order; equal across variants trained
    /// under the same seed and split.
    pub data_order_hash: String,
    pub final_checkpoint: Option<PathBuf>,
}

/// What to train and where to put it.
#[derive(Clone, Debug)]
pub struct TrainJob<'a> {
    pub config: &'a RunConfig,
    pub variant: Variant,
    pub train: &'a [Record],
    pub val: &'a [Record],
    pub test_fold: Option<usize>,
    pub out_dir: Option<&'a Path>,
    pub resume: Option<&'a Path>,
}

impl TrainJob<'_> {
    fn stream(&self) -> String {
        match self.test_fold {
            Some(k) => format!("fold{k}"),
            None => "all".to_string(),
        }
    }

    fn init_rng(&self) -> ChaCha8Rng {
        seed::rng(self.config.train.seed, &format!("init/{}", self.stream()))
    }

    /// Record order for `epoch` (1-based): a seeded shuffle of the train set.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        let mut rng = seed::rng(self.config.train.seed, &format!("data/{}/epoch{epoch}", self.stream()));
        order.shuffle(&mut rng);
        order
    }

    fn sample_seed(&self, epoch: usize, position: usize) -> u64 {
        seed::derive(
            self.config.train.seed,
            &format!("augment/{}/epoch{epoch}/{position}", self.stream()),
        )
    }

    pub fn data_order_hash(&self) -> String {
        let mut h = Sha256::new();
        for epoch in 1..=self.config.train.epochs {
            h.update((epoch as u64).to_le_bytes());
            for i in self.epoch_order(epoch) {
                h.update(self.train[i].image_path.to_string_lossy().as_bytes());
                h.update([0]);
            }
        }
        hex::encode(&h.finalize()[..8])
    }

    fn meta(&self, epoch: usize, step: u64) -> CheckpointMeta {
        CheckpointMeta {
            config: self.config.clone(),
            variant: self.variant,
            test_fold: self.test_fold,
            epoch,
            step,
        }
    }
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        let (pc, mae, rmse) = r
            .val
            .as_ref()
            .map_or((f64::NAN, f64::NAN, f64::NAN), |m| (m.pc, m.mae, m.rmse));
        writeln!(s, "{},{},{},{},{}", r.epoch, r.mean_train_loss, pc, mae, rmse).expect("string write");
    }
    s
}

fn parse_history(text: &str, upto: usize) -> Vec<EpochRecord> {
    text.lines()
        .skip(1)
        .filter_map(|line| {
            let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect();
            let epoch = *f.first()? as usize;
            (f.len() == 5 && epoch <= upto).then(|| EpochRecord {
                epoch,
                mean_train_loss: f[1],
                val: f[2..].iter().any(|v| !v.is_nan()).then(|| MetricsReport {
                    pc: f[2],
                    mae: f[3],
                    rmse: f[4],
                    n: 0,
                    residuals: Vec::new(),
                }),
            })
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn epoch_checkpoint_name(epoch: usize) -> String {
    format!("epoch_{epoch:03}.ckpt")
}

pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const HISTORY_FILE: &str = "history.csv";

/// Runs the training loop. Per batch: augment, forward both branches, fuse,
/// squared error, backward, AdamW step. Aborts on a non-finite loss.
pub fn train<F: Scalar>(job: &TrainJob<'_>, loader: &Loader) -> Result<TrainOutcome<F>> {
    let cfg = &job.config.train;
    job.config.validate()?;
    if job.train.is_empty() {
        return Err(Error::EmptyTrainSplit(job.test_fold.unwrap_or(0)));
    }
    if let Some(dir) = job.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let (mut model, mut state, start_epoch, mut history) = match job.resume {
        Some(path) => {
            let (model, meta, extra) = checkpoint::load_model::<F>(path)?;
            if meta.variant != job.variant || meta.test_fold != job.test_fold {
                return Err(Error::InvalidArgument(format!(
                    "{} was trained as {} on fold {:?}",
                    path.display(),
                    meta.variant,
                    meta.test_fold
                )));
            }
            let state = OptimizerState::from_named(&model.store, meta.step, &extra)?;
            let history = job
                .out_dir
                .and_then(|d| std::fs::read_to_string(d.join(HISTORY_FILE)).ok())
                .map(|t| parse_history(&t, meta.epoch))
                .unwrap_or_default();
            (model, state, meta.epoch + 1, history)
        }
        None => {
            let mut model = VmBeautyNet::<F>::new(&job.config.model, &mut job.init_rng())?;
            job.variant.prepare(&mut model)?;
            if cfg.center_heads {
                let mean = job.train.iter().map(|r| r.score).sum::<f64>() / job.train.len() as f64;
                for head_bias in [model.vit.head.1, model.mamba.head.1] {
                    model.store.set(head_bias, Tensor::from_f64([1], &[mean])?)?;
                }
            }
            let state = OptimizerState::new(&model.store);
            (model, state, 1, Vec::new())
        }
    };

    let val_samples: Vec<Sample<F>> = loader.load_eval(job.val)?;
    let batches_per_epoch = job.train.len().div_ceil(cfg.batch_size) as u64;
    let planned = batches_per_epoch * cfg.epochs as u64;
    let total_steps = if cfg.max_steps > 0 {
        planned.min(cfg.max_steps as u64)
    } else {
        planned
    };
    let mut hp = AdamW::from(cfg);
    let mut saved: Vec<PathBuf> = Vec::new();
    let mut last_saved = None;

    'epochs: for epoch in start_epoch..=cfg.epochs {
        if state.t >= total_steps {
            break;
        }
        let order = job.epoch_order(epoch);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let records: Vec<&Record> = idx.iter().map(|&i| &job.train[i]).collect();
            let base = batch * cfg.batch_size;
            let samples: Vec<Sample<F>> = loader.load(&records, true, &job.config.augment, |i| {
                ChaCha8Rng::seed_from_u64(job.sample_seed(epoch, base + i))
            })?;
            let dropout_on = job.config.model.vit.dropout > 0.0;
            let (loss, grads) = batch_gradients(&model, job.variant, &samples, |i| {
                dropout_on.then(|| seed::rng(job.sample_seed(epoch, base + i), "dropout"))
            })?;
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    batch: batch + 1,
                });
            }
            model.store.zero_grad();
            model.store.accumulate_flat(&grads);
            clip_grad_norm(&mut model.store, cfg.grad_clip);
            hp.lr = learning_rate(cfg, state.t, total_steps);
            adamw_step(&mut model.store, &mut state, &hp)?;
            model.store.zero_grad();
            loss_sum += loss * samples.len() as f64;
            seen += samples.len();
            if state.t >= total_steps {
                history.push(epoch_record(
                    &model,
                    job.variant,
                    epoch,
                    loss_sum / seen as f64,
                    &val_samples,
                )?);
                last_saved = save_epoch(job, &model, &state, epoch, &mut saved, &history)?.or(last_saved);
                break 'epochs;
            }
        }
        history.push(epoch_record(
            &model,
            job.variant,
            epoch,
            loss_sum / seen as f64,
            &val_samples,
        )?);
        last_saved = save_epoch(job, &model, &state, epoch, &mut saved, &history)?.or(last_saved);
    }

    let final_checkpoint = match job.out_dir {
        Some(dir) => {
            let path = dir.join(FINAL_CHECKPOINT);
            let epoch = history.last().map_or(0, |r| r.epoch);
            checkpoint::save_model(&path, &model, &job.meta(epoch, state.t), &state.to_named(&model.store))?;
            write_file(&dir.join(HISTORY_FILE), &history_csv(&history))?;
            Some(path)
        }
        None => last_saved,
    };
    Ok(TrainOutcome {
        model,
        history,
        steps: state.t,
        data_order_hash: job.data_order_hash(),
        final_checkpoint,
    })
}

fn epoch_record<F: Scalar>(
    model: &VmBeautyNet<F>,
    variant: Variant,
    epoch: usize,
    mean_train_loss: f64,
    val: &[Sample<F>],
) -> Result<EpochRecord> {
    let val = if val.is_empty() {
        None
    } else {
        Some(evaluate(model, variant, val)?)
    };
    log::info!(
        "epoch {epoch}: train loss {mean_train_loss:.6}{}",
        val.as_ref().map_or(String::new(), |m| format!(
            ", val pc {:.4} mae {:.4} rmse {:.4}",
            m.pc, m.mae, m.rmse
        ))
    );
    Ok(EpochRecord {
        epoch,
        mean_train_loss,
        val,
    })
}

fn save_epoch<F: Scalar>(
    job: &TrainJob<'_>,
    model: &VmBeautyNet<F>,
    state: &OptimizerState<F>,
    epoch: usize,
    saved: &mut Vec<PathBuf>,
    history: &[EpochRecord],
) -> Result<Option<PathBuf>> {
    let Some(dir) = job.out_dir else { return Ok(None) };
    let path = dir.join(epoch_checkpoint_name(epoch));
    checkpoint::save_model(&path, model, &job.meta(epoch, state.t), &state.to_named(&model.store))?;
    write_file(&dir.join(HISTORY_FILE), &history_csv(history))?;
    saved.push(path.clone());
    let keep = job.config.train.keep_last.max(1);
    while saved.len() > keep {
        let old = saved.remove(0);
        std::fs::remove_file(&old).map_err(|e| Error::io(&old, e))?;
    }
    Ok(Some(path))
}

/// Per-fold reports and their mean.
#[derive(Clone, Debug)]
pub struct CrossValidation {
    pub folds: Vec<(usize, MetricsReport)>,
    pub mean: MetricsReport,
}

/// Trains and evaluates one model per fold with fold-derived seeds.
/// `only` restricts the run to a subset of folds.
pub fn cross_validate<F: Scalar>(
    config: &RunConfig,
    manifest: &Manifest,
    variant: Variant,
    loader: &Loader,
    out_dir: Option<&Path>,
    only: Option<&[usize]>,
) -> Result<CrossValidation> {
    let mut folds = Vec::new();
    for k in 1..=manifest.folds {
        if only.is_some_and(|o| !o.contains(&k)) {
            continue;
        }
        let (train_set, test_set) = manifest.fold_split(k)?;
        let dir = out_dir.map(|d| d.join(format!("fold{k}")));
        let job = TrainJob {
            config,
            variant,
            train: &train_set,
            val: &test_set,
            test_fold: Some(k),
            out_dir: dir.as_deref(),
            resume: None,
        };
        let outcome = train::<F>(&job, loader)?;
        let test: Vec<Sample<F>> = loader.load_eval(&test_set)?;
        folds.push((k, evaluate(&outcome.model, variant, &test)?));
    }
    let reports: Vec<MetricsReport> = folds.iter().map(|(_, r)| r.clone()).collect();
    Ok(CrossValidation {
        mean: MetricsReport::mean_of(&reports),
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autograd::Tape;

    fn store(values: &[(&str, f64, f64)]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        for (name, theta, g) in values {
            let id = s.add(*name, Tensor::from_f64([1], &[*theta]).unwrap());
            s.entry_mut(id).grad = Some(Tensor::from_f64([1], &[*g]).unwrap());
        }
        s
    }

    fn hp(lr: f64, wd: f64) -> AdamW {
        AdamW {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: wd,
        }
    }

    #[test]
    fn mse_values() {
        let tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::from_f64([2], &[1.0, 3.0]).unwrap(), true);
        let l = mse_loss(&p, &Tensor::from_f64([2], &[2.0, 1.0]).unwrap()).unwrap();
        assert_eq!(l.item().unwrap(), 2.5);
        let g = tape.backward(l).unwrap().get(p).unwrap();
        assert_eq!(g.data(), &[-1.0, 2.0]);
        let zero = mse_loss(&p, &Tensor::from_f64([2], &[1.0, 3.0]).unwrap()).unwrap();
        assert_eq!(zero.item().unwrap(), 0.0);
        assert!(mse_loss(&p, &Tensor::from_f64([3], &[1.0, 3.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn adamw_first_step() {
        let mut s = store(&[("a", 1.0, 1.0)]);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &hp(0.1, 0.0)).unwrap();
        let expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((s.iter().next().unwrap().value.data()[0] - expect).abs() < 1e-12);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adamw_zero_grad_no_decay_is_noop() {
        let mut s = store(&[("a", 1.5, 0.0), ("b", -2.0, 0.0)]);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &hp(0.1, 0.0)).unwrap();
        let v: Vec<f64> = s.iter().map(|e| e.value.data()[0]).collect();
        assert_eq!(v, vec![1.5, -2.0]);
    }

    #[test]
    fn adamw_pure_decay() {
        let mut s = store(&[("a", 1.0, 0.0)]);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &hp(0.1, 0.01)).unwrap();
        assert!((s.iter().next().unwrap().value.data()[0] - 0.999).abs() < 1e-15);
    }

    #[test]
    fn adamw_missing_grad_named() {
        let mut s = store(&[("a", 1.0, 0.0)]);
        s.add("lonely", Tensor::from_f64([1], &[1.0]).unwrap());
        let mut st = OptimizerState::new(&s);
        match adamw_step(&mut s, &mut st, &hp(0.1, 0.0)) {
            Err(Error::MissingGrad(name)) => assert_eq!(name, "lonely"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn frozen_params_untouched() {
        let mut s = store(&[("a", 1.0, 1.0)]);
        s.set_trainable("a", false);
        let mut st = OptimizerState::new(&s);
        adamw_step(&mut s, &mut st, &hp(0.1, 0.5)).unwrap();
        assert_eq!(s.iter().next().unwrap().value.data()[0], 1.0);
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let mut c = TrainConfig::default();
        assert_eq!(learning_rate(&c, 5, 10), c.learning_rate);
        c.cosine_schedule = true;
        assert_eq!(learning_rate(&c, 0, 10), c.learning_rate);
        assert!(learning_rate(&c, 10, 10).abs() < 1e-20);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut s = store(&[("a", 0.0, 3.0), ("b", 0.0, 4.0)]);
        assert_eq!(clip_grad_norm(&mut s, 1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn history_roundtrip() {
        let h = vec![
            EpochRecord {
                epoch: 1,
                mean_train_loss: 0.5,
                val: None,
            },
            EpochRecord {
                epoch: 2,
                mean_train_loss: 0.25,
                val: Some(MetricsReport {
                    pc: 0.5,
                    mae: 0.1,
                    rmse: 0.2,
                    n: 0,
                    residuals: vec![],
                }),
            },
        ];
        let text = history_csv(&h);
        assert!(text.starts_with(HISTORY_HEADER));
        assert_eq!(parse_history(&text, 9), h);
        assert_eq!(parse_history(&text, 1).len(), 1);
    }
}
