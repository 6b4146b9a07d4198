//! End-to-end acceptance run. Each criterion prints one PASS/FAIL line; the
//! test fails if any criterion does.

mod common;

use std::io::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use vmbeauty::bench::{self, BenchConfig};
use vmbeauty::checkpoint::{self, CheckpointMeta};
use vmbeauty::config::{AugmentConfig, ModelConfig};
use vmbeauty::data::{synth_dataset, Loader, Manifest, Sample, SynthParams};
use vmbeauty::eval::saliency::{occlusion_deltas, saliency_maps};
use vmbeauty::eval::{ablate, evaluate, mae, pearson, rmse, Branch};
use vmbeauty::mamba::scan::{discretize, run, scan_discrete, scan_streaming, ScanDims, ScanStrategy};
use vmbeauty::mamba::MambaBackbone;
use vmbeauty::train::{train, TrainJob, FINAL_CHECKPOINT};
use vmbeauty::{ParamStore, RunConfig, Scalar, Tape, Tensor, Variant, VmBeautyNet};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// The small model used wherever a trained network is needed: the tiny
/// layout at 16×16 input with 32-dim tokens in both branches.
fn trainable_config(epochs: usize, batch: usize) -> RunConfig {
    let mut c = RunConfig {
        model: ModelConfig::tiny(),
        augment: AugmentConfig::disabled(),
        ..RunConfig::default()
    };
    c.model.image_size = 16;
    c.model.vit.embed_dim = 32;
    c.model.mamba.embed_dim = 32;
    c.train.epochs = epochs;
    c.train.batch_size = batch;
    c.train.learning_rate = 1e-3;
    c.data.folds = 2;
    c
}

fn synth(dir: &Path, n: usize, seed: u64, folds: usize) -> Manifest {
    synth_dataset(
        dir,
        SynthParams {
            n,
            size: 32,
            seed,
            folds,
        },
    )
    .unwrap()
}

fn train_all(config: &RunConfig, m: &Manifest, out: Option<&Path>) -> VmBeautyNet<f32> {
    let job = TrainJob {
        config,
        variant: Variant::LearnedFusion,
        train: &m.records,
        val: &[],
        test_fold: None,
        out_dir: out,
        resume: None,
    };
    train::<f32>(&job, &Loader::new(config.model.image_size, 4).unwrap())
        .unwrap()
        .model
}

fn gradient_correctness() -> Verdict {
    let seeds = 100;
    let mut worst = (0.0f64, String::new());
    for c in common::op_cases() {
        let e = (0..seeds)
            .into_par_iter()
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(s);
                let inputs = (c.inputs)(&mut rng);
                common::check_op(c.op.as_ref(), &inputs, &mut rng)
            })
            .reduce(|| 0.0, f64::max);
        if e >= worst.0 {
            worst = (e, c.name.to_string());
        }
    }
    let (model_err, group) = (0..seeds)
        .into_par_iter()
        .map(|s| common::check_model(s, None))
        .reduce(|| (0.0, String::new()), |a, b| if b.0 > a.0 { b } else { a });
    let pass = worst.0 < common::REL_TOL && model_err < common::REL_TOL;
    verdict(
        pass,
        format!(
            "{} ops, worst op {} {:.2e}; tiny model worst group {} {:.2e}; {seeds} seeds",
            common::op_cases().len(),
            worst.1,
            worst.0,
            group,
            model_err
        ),
    )
}

fn random_scan<F: Scalar>(len: usize, rng: &mut ChaCha8Rng) -> (ScanDims, [Vec<F>; 5]) {
    let (channels, state) = (4, 4);
    let dims = ScanDims { len, channels, state };
    let normal = |n: usize, rng: &mut ChaCha8Rng| {
        (0..n)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                F::of(z)
            })
            .collect::<Vec<F>>()
    };
    let x = normal(len * channels, rng);
    let delta = (0..len * channels)
        .map(|_| F::of(10f64.powf(rng.random_range(-3.0..-1.0))))
        .collect();
    let a = (0..channels * state)
        .map(|i| F::of(-((i % state) as f64 + 1.0) * rng.random_range(0.5..1.5)))
        .collect();
    let b = normal(len * state, rng);
    let c = normal(len * state, rng);
    (dims, [x, delta, a, b, c])
}

fn max_gap<F: Scalar>(dims: ScanDims, ops: &[Vec<F>; 5], block: usize) -> f64 {
    let [x, delta, a, b, c] = ops;
    let disc = discretize(dims, a, b, delta).unwrap();
    let (seq, _) = run(dims, &disc, c, x, ScanStrategy::Sequential);
    let (fast, _) = run(dims, &disc, c, x, ScanStrategy::Chunked(block));
    let streamed = scan_streaming(dims, x, delta, a, b, c);
    seq.iter()
        .zip(&fast)
        .zip(&streamed)
        .map(|((s, f), t)| (s.as_f64() - f.as_f64()).abs().max((s.as_f64() - t.as_f64()).abs()))
        .fold(0.0, f64::max)
}

fn scan_equivalence() -> Verdict {
    let dims = ScanDims {
        len: 3,
        channels: 1,
        state: 1,
    };
    let hand: Vec<Vec<f64>> = [ScanStrategy::Sequential, ScanStrategy::Chunked(2)]
        .into_iter()
        .map(|s| scan_discrete(dims, &[0.5; 3], &[1.0; 3], &[1.0; 3], &[1.0; 3], s))
        .collect();
    let hand_ok = hand.iter().all(|y| y == &[1.0, 1.5, 1.75]);

    let (mut gap32, mut gap64) = (0.0f64, 0.0f64);
    for len in [1, 2, 7, 64, 1024] {
        let (g32, g64) = (0..100u64)
            .into_par_iter()
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(len as u64 * 1000 + k);
                let block = rng.random_range(1..=128);
                let (d32, ops32) = random_scan::<f32>(len, &mut rng);
                let (d64, ops64) = random_scan::<f64>(len, &mut rng);
                (max_gap(d32, &ops32, block), max_gap(d64, &ops64, block))
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
        gap32 = gap32.max(g32);
        gap64 = gap64.max(g64);
    }
    verdict(
        hand_ok && gap32 <= 1e-5 && gap64 <= 1e-10,
        format!("hand case exact: {hand_ok}; max |Δ| f32 {gap32:.2e}, f64 {gap64:.2e}"),
    )
}

fn bench_scaling() -> Verdict {
    let cfg = BenchConfig::default();
    let report = bench::run(&cfg).unwrap();
    verdict(
        report.scan_exponent < 1.3 && report.attention_exponent > 1.7,
        format!(
            "lengths {:?}, {} trials, exponents scan {:.3}, attention {:.3}",
            cfg.lengths, cfg.trials, report.scan_exponent, report.attention_exponent
        ),
    )
}

struct Overfit {
    model: VmBeautyNet<f32>,
    samples: Vec<Sample<f32>>,
}

fn overfit(dir: &Path) -> (Verdict, Overfit) {
    let m = synth(&dir.join("overfit"), 32, 21, 2);
    let mut config = trainable_config(200, 32);
    config.train.max_steps = 200;
    let model = train_all(&config, &m, None);
    let samples: Vec<Sample<f32>> = Loader::new(16, 4).unwrap().load_eval(&m.records).unwrap();
    let mse = evaluate(&model, Variant::LearnedFusion, &samples).unwrap().rmse.powi(2);
    (
        verdict(mse < 0.01, format!("final train MSE {mse:.3e} after 200 steps")),
        Overfit { model, samples },
    )
}

fn fusion_degeneracy(fit: &Overfit) -> Verdict {
    let mut model = fit.model.clone();
    model.set_fusion([0.5, 0.5], 0.0).unwrap();
    let learned = evaluate(&model, Variant::LearnedFusion, &fit.samples).unwrap();
    let averaged = evaluate(&model, Variant::Averaging, &fit.samples).unwrap();
    model.set_fusion([1.0, 0.0], 0.0).unwrap();
    let vit_weighted = evaluate(&model, Variant::LearnedFusion, &fit.samples).unwrap();
    let vit_only = evaluate(&model, Variant::VitOnly, &fit.samples).unwrap();
    let (a, b) = (learned.bit_eq(&averaged), vit_weighted.bit_eq(&vit_only));
    verdict(a && b, format!("[.5,.5] == averaging: {a}; [1,0] == vit_only: {b}"))
}

fn metric_checks() -> Verdict {
    let (p, t) = ([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 5.0]);
    let hand = [
        (mae(&p, &t).unwrap(), 0.25),
        (rmse(&p, &t).unwrap(), 0.5),
        (pearson(&p, &t).unwrap(), 6.5 / 43.75f64.sqrt()),
        (pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0),
        (pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0),
        (rmse(&[1.0, 3.0], &[2.0, 1.0]).unwrap(), 2.5f64.sqrt()),
    ];
    let hand_ok = hand.iter().all(|(got, want)| (got - want).abs() < 1e-10);

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut dominance, mut invariance, mut worst) = (0, 0, 0.0f64);
    for _ in 0..1000 {
        let n = rng.random_range(2..100);
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..5.0)).collect();
        if rmse(&p, &t).unwrap() >= mae(&p, &t).unwrap() {
            dominance += 1;
        }
        let (a, b) = (rng.random_range(0.01..100.0), rng.random_range(-50.0..50.0));
        let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
        let gap = (pearson(&q, &t).unwrap() - pearson(&p, &t).unwrap()).abs();
        worst = worst.max(gap);
        if gap < 1e-9 {
            invariance += 1;
        }
    }
    verdict(
        hand_ok && dominance == 1000 && invariance == 1000,
        format!("hand values: {hand_ok}; rmse>=mae {dominance}/1000; affine-invariant pc {invariance}/1000 (max gap {worst:.1e})"),
    )
}

fn ablation(dir: &Path) -> Verdict {
    let m = synth(&dir.join("ablation"), 200, 31, 2);
    let config = trainable_config(20, 16);
    let loader = Loader::new(16, 4).unwrap();
    let report = ablate::<f32>(&config, &m, &loader, Some(&dir.join("ablation_out"))).unwrap();
    let rows_ok = report.rows.len() == 4 && report.rows.iter().all(|r| r.report.is_finite() && r.report.pc > 0.0);
    let hash = &report.rows[0].data_order_hash;
    let same_order = report.rows.iter().all(|r| &r.data_order_hash == hash);
    let pcs: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{} {:.3}", r.variant, r.report.pc))
        .collect();
    verdict(
        rows_ok && same_order,
        format!("pc: {}; shared data order: {same_order}", pcs.join(", ")),
    )
}

fn determinism(dir: &Path) -> Verdict {
    let m = synth(&dir.join("determinism"), 16, 41, 2);
    let mut config = trainable_config(3, 4);
    config.augment = AugmentConfig::default();
    let (a, b) = (dir.join("det_a"), dir.join("det_b"));
    let model = train_all(&config, &m, Some(&a));
    train_all(&config, &m, Some(&b));
    let same_ckpt =
        std::fs::read(a.join(FINAL_CHECKPOINT)).unwrap() == std::fs::read(b.join(FINAL_CHECKPOINT)).unwrap();

    let path = dir.join("roundtrip.ckpt");
    let meta = CheckpointMeta {
        config: config.clone(),
        variant: Variant::LearnedFusion,
        test_fold: None,
        epoch: 3,
        step: 0,
    };
    checkpoint::save_model(&path, &model, &meta, &[]).unwrap();
    let (loaded, _, _) = checkpoint::load_model::<f32>(&path).unwrap();
    let samples: Vec<Sample<f32>> = Loader::new(16, 2).unwrap().load_eval(&m.records).unwrap();
    let same_forward = samples.iter().all(|s| {
        let (x, y) = (model.predict(&s.pixels).unwrap(), loaded.predict(&s.pixels).unwrap());
        [x.fused, x.vit, x.mamba].map(f32::to_bits) == [y.fused, y.vit, y.mamba].map(f32::to_bits)
    });
    verdict(
        same_ckpt && same_forward,
        format!("identical checkpoints: {same_ckpt}; save/load forward bit-identical: {same_forward}"),
    )
}

fn causality_and_stability() -> Verdict {
    let mut cfg = ModelConfig::tiny();
    cfg.mamba.bidirectional = false;
    let mut causal = 0;
    for k in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let mut store = ParamStore::<f64>::new();
        let m = MambaBackbone::register(&mut store, &cfg, &mut rng).unwrap();
        let len = rng.random_range(2..24);
        let z = common::normal(&[len, cfg.mamba.embed_dim], 1.0, &mut rng);
        let j = rng.random_range(1..len);
        let mut z2 = z.clone();
        for v in &mut z2.data_mut()[j * cfg.mamba.embed_dim..] {
            *v += rng.random_range(-1.0..1.0);
        }
        let out = |z: &Tensor<f64>| {
            let tape = Tape::new();
            let p = store.bind(&tape);
            m.block_forward(&m.blocks[0], &p, tape.constant(z.clone()))
                .unwrap()
                .value()
        };
        let (y, y2) = (out(&z), out(&z2));
        let d = cfg.mamba.embed_dim;
        let prefix_same = y.data()[..j * d] == y2.data()[..j * d];
        let suffix_moved = y.data()[j * d..] != y2.data()[j * d..];
        if prefix_same && suffix_moved {
            causal += 1;
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let len = 4096;
    let (dims, [x, delta, a, b, c]) = random_scan::<f32>(len, &mut rng);
    let big_delta: Vec<f32> = delta.iter().map(|_| rng.random_range(1e-3..2.0)).collect();
    let tiny_a: Vec<f32> = a.iter().map(|v| v * 1e-4).collect();
    let mut finite = true;
    for (d, a) in [(&delta, &a), (&big_delta, &a), (&delta, &tiny_a)] {
        let y = scan_streaming(dims, &x, d, a, &b, &c);
        finite &= y.iter().all(|v| v.is_finite());
        let tape = Tape::<f32>::new();
        let leaf = |v: &Vec<f32>, shape: [usize; 2]| tape.leaf(Tensor::new(shape, v.clone()).unwrap(), true);
        let (xv, dv) = (leaf(&x, [len, 4]), leaf(d, [len, 4]));
        let (av, bv, cv) = (leaf(a, [4, 4]), leaf(&b, [len, 4]), leaf(&c, [len, 4]));
        let y = xv.selective_scan(&dv, &av, &bv, &cv).unwrap();
        finite &= y.value().is_finite();
        let g = tape.backward(y.sum().unwrap()).unwrap();
        finite &= [xv, dv, av, bv, cv].iter().all(|v| g.get_or_zeros(*v).is_finite());
    }
    verdict(
        causal == 50 && finite,
        format!("causal on {causal}/50 instances; S=4096 forward and backward finite: {finite}"),
    )
}

fn saliency_occlusion(dir: &Path, fit: &Overfit) -> Verdict {
    let m = synth(&dir.join("saliency"), 20, 51, 2);
    let samples: Vec<Sample<f32>> = Loader::new(16, 4).unwrap().load_eval(&m.records).unwrap();
    let model = &fit.model;
    let mut lines = Vec::new();
    let mut pass = true;
    for (bi, branch) in Branch::ALL.into_iter().enumerate() {
        let (mut top, mut median) = (0.0, 0.0);
        for s in &samples {
            let map = saliency_maps(model, &s.pixels).unwrap()[bi].clone();
            assert_eq!(map.branch, branch);
            let deltas = occlusion_deltas(model, &s.pixels, branch).unwrap();
            top += deltas[map.ranking()[0]];
            let mut sorted = deltas.clone();
            sorted.sort_by(f64::total_cmp);
            let n = sorted.len();
            median += if n % 2 == 1 {
                sorted[n / 2]
            } else {
                0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
            };
        }
        let k = samples.len() as f64;
        let (top, median) = (top / k, median / k);
        pass &= top > median;
        lines.push(format!("{} top {top:.2e} vs median {median:.2e}", branch.name()));
    }
    verdict(pass, format!("mean |Δscore| over 20 images: {}", lines.join("; ")))
}

type Check<'a> = Box<dyn FnOnce(&mut Option<Overfit>) -> Verdict + 'a>;

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let mut fit = None;
    let criteria: Vec<(&str, Duration, Check<'_>)> = vec![
        (
            "gradient correctness",
            Duration::from_secs(120),
            Box::new(|_| gradient_correctness()),
        ),
        (
            "scan equivalence",
            Duration::from_secs(60),
            Box::new(|_| scan_equivalence()),
        ),
        (
            "scan vs attention scaling",
            Duration::from_secs(300),
            Box::new(|_| bench_scaling()),
        ),
        (
            "overfit 32 samples",
            Duration::from_secs(300),
            Box::new(|fit| {
                let (v, o) = overfit(dir.path());
                *fit = Some(o);
                v
            }),
        ),
        (
            "fusion degeneracy",
            Duration::MAX,
            Box::new(|fit| fusion_degeneracy(fit.as_ref().unwrap())),
        ),
        ("metrics", Duration::MAX, Box::new(|_| metric_checks())),
        ("ablation", Duration::from_secs(900), Box::new(|_| ablation(dir.path()))),
        ("determinism", Duration::MAX, Box::new(|_| determinism(dir.path()))),
        (
            "causality and stability",
            Duration::MAX,
            Box::new(|_| causality_and_stability()),
        ),
        (
            "saliency occlusion",
            Duration::MAX,
            Box::new(|fit| saliency_occlusion(dir.path(), fit.as_ref().unwrap())),
        ),
    ];
    let mut failed = Vec::new();
    for (i, (name, budget, check)) in criteria.into_iter().enumerate() {
        let t0 = Instant::now();
        let v = check(&mut fit);
        let took = t0.elapsed();
        let in_time = took <= budget;
        let pass = v.pass && in_time;
        let limit = if budget == Duration::MAX {
            String::new()
        } else {
            format!(" / {}s", budget.as_secs())
        };
        writeln!(
            std::io::stderr(),
            "{} {:>2} {name}: {} ({:.1}s{limit})",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            v.detail,
            took.as_secs_f64()
        )
        .unwrap();
        if !pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
