//! Finite-difference oracle and fixtures shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use vmbeauty::config::ModelConfig;
use vmbeauty::train::mse_loss;
use vmbeauty::{Result, Tape, Tensor, Var, VmBeautyNet};

pub const H: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-4;

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, falling back to the absolute gap when both
/// norms are below `1e-8`.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub fn normal(shape: &[usize], std: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect::<Vec<f64>>();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

pub type Op = dyn for<'t> Fn(&[Var<'t, f64>]) -> Result<Var<'t, f64>> + Sync;

/// Scalar objective `Σ op(inputs) ⊙ r` for a fixed random `r`.
fn objective(op: &Op, inputs: &[Tensor<f64>], probe: Option<&Tensor<f64>>) -> (f64, Vec<Tensor<f64>>) {
    let tape = Tape::new();
    let vars: Vec<Var<'_, f64>> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = op(&vars).unwrap();
    let loss = match probe {
        Some(r) => out.mul(&tape.constant(r.clone())).unwrap().sum().unwrap(),
        None => out.sum().unwrap(),
    };
    let value = loss.item().unwrap();
    let grads = tape.backward(loss).unwrap();
    (value, vars.iter().map(|v| grads.get_or_zeros(*v)).collect())
}

/// Worst relative error over the inputs of `op` at the given point.
pub fn check_op(op: &Op, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> f64 {
    let out_shape = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        op(&vars).unwrap().shape()
    };
    let probe = normal(&out_shape, 1.0, rng);
    let (_, analytic) = objective(op, inputs, Some(&probe));
    let mut worst: f64 = 0.0;
    for (k, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.numel()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let mut shifted = inputs.to_vec();
            let x0 = shifted[k].data()[j];
            shifted[k].data_mut()[j] = x0 + H;
            let up = objective(op, &shifted, Some(&probe)).0;
            shifted[k].data_mut()[j] = x0 - H;
            let down = objective(op, &shifted, Some(&probe)).0;
            *slot = (up - down) / (2.0 * H);
        }
        worst = worst.max(rel_err(&a.to_f64_vec(), &numeric));
    }
    worst
}

/// Tiny model with every parameter jittered off its initialisation so no
/// gradient group is trivially zero.
pub fn tiny_model(seed: u64) -> VmBeautyNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = VmBeautyNet::<f64>::new(&ModelConfig::tiny(), &mut rng).unwrap();
    model.store.set_trainable("", true);
    for e in model.store.iter_mut() {
        for v in e.value.data_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v += 0.2 * z;
        }
    }
    model
}

fn model_loss(model: &VmBeautyNet<f64>, image: &Tensor<f64>, target: f64) -> f64 {
    model.predict(image).map(|p| (p.fused - target).powi(2)).unwrap()
}

/// End-to-end squared-error gradient check of every parameter group.
/// `coords` caps the finite-difference coordinates per group (all if `None`).
/// Returns the worst group error and that group's name.
pub fn check_model(seed: u64, coords: Option<usize>) -> (f64, String) {
    let model = tiny_model(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let image = normal(&[3, 8, 8], 1.0, &mut rng);
    let target = rng.random_range(1.0..5.0);

    let tape = model.new_tape();
    let p = model.store.bind(&tape);
    let out = model.forward(&p, &image, None).unwrap();
    let loss = mse_loss(&out.fused, &Tensor::from_f64([1], &[target]).unwrap()).unwrap();
    let grads = tape.backward(loss).unwrap();
    let analytic = p.collect_grads(&grads);

    let mut worst = (0.0, String::new());
    let mut probe = model.clone();
    for (k, entry) in model.store.iter().enumerate() {
        let n = entry.value.numel();
        let picks: Vec<usize> = match coords {
            Some(c) if c < n => (0..c).map(|_| rng.random_range(0..n)).collect(),
            _ => (0..n).collect(),
        };
        let mut a = Vec::with_capacity(picks.len());
        let mut num = Vec::with_capacity(picks.len());
        for &j in &picks {
            let id = model.store.id(&entry.name).unwrap();
            let x0 = entry.value.data()[j];
            probe.store.value_mut(id).data_mut()[j] = x0 + H;
            let up = model_loss(&probe, &image, target);
            probe.store.value_mut(id).data_mut()[j] = x0 - H;
            let down = model_loss(&probe, &image, target);
            probe.store.value_mut(id).data_mut()[j] = x0;
            num.push((up - down) / (2.0 * H));
            a.push(analytic[k].data()[j]);
        }
        let e = rel_err(&a, &num);
        if e > worst.0 || worst.1.is_empty() {
            worst = (e, entry.name.clone());
        }
    }
    worst
}

pub struct OpCase {
    pub name: &'static str,
    pub op: Box<Op>,
    pub inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
}

fn case(name: &'static str, inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, op: Box<Op>) -> OpCase {
    OpCase { name, op, inputs }
}

fn scan_inputs(rng: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    vec![
        normal(&[5, 3], 1.0, rng),
        uniform(&[5, 3], 0.05, 0.5, rng),
        uniform(&[3, 4], -1.5, -0.1, rng),
        normal(&[5, 4], 1.0, rng),
        normal(&[5, 4], 1.0, rng),
    ]
}

/// Every differentiable tape op with a random input generator.
pub fn op_cases() -> Vec<OpCase> {
    use vmbeauty::autograd::{concat, Unary};
    let m34 = |r: &mut ChaCha8Rng| vec![normal(&[3, 4], 1.0, r)];
    let mut cases = vec![
        case(
            "add",
            |r| vec![normal(&[3, 4], 1.0, r), normal(&[3, 4], 1.0, r)],
            Box::new(|v| v[0].add(&v[1])),
        ),
        case(
            "add_broadcast",
            |r| vec![normal(&[2, 3, 4], 1.0, r), normal(&[4], 1.0, r)],
            Box::new(|v| v[0].add(&v[1])),
        ),
        case(
            "sub",
            |r| vec![normal(&[3, 4], 1.0, r), normal(&[4], 1.0, r)],
            Box::new(|v| v[0].sub(&v[1])),
        ),
        case(
            "mul",
            |r| vec![normal(&[3, 4], 1.0, r), normal(&[3, 4], 1.0, r)],
            Box::new(|v| v[0].mul(&v[1])),
        ),
        case(
            "mul_broadcast",
            |r| vec![normal(&[3, 4], 1.0, r), normal(&[4], 1.0, r)],
            Box::new(|v| v[0].mul(&v[1])),
        ),
        case("scale", m34, Box::new(|v| v[0].scale(-1.7))),
        case(
            "matmul",
            |r| vec![normal(&[4, 5], 1.0, r), normal(&[5, 3], 1.0, r)],
            Box::new(|v| v[0].matmul(&v[1])),
        ),
        case(
            "matmul_batched",
            |r| vec![normal(&[2, 3, 4], 1.0, r), normal(&[4, 2], 1.0, r)],
            Box::new(|v| v[0].matmul(&v[1])),
        ),
        case(
            "linear",
            |r| vec![normal(&[3, 4], 1.0, r), normal(&[4, 2], 1.0, r), normal(&[2], 1.0, r)],
            Box::new(|v| v[0].linear(&v[1], Some(&v[2]))),
        ),
        case("softmax_rows", m34, Box::new(|v| v[0].softmax(1))),
        case("softmax_cols", m34, Box::new(|v| v[0].softmax(0))),
        case(
            "layernorm",
            |r| vec![normal(&[3, 8], 1.0, r), normal(&[8], 1.0, r), normal(&[8], 1.0, r)],
            Box::new(|v| v[0].layernorm(&v[1], &v[2], 1e-6)),
        ),
        case("sum", m34, Box::new(|v| v[0].sum())),
        case("mean", m34, Box::new(|v| v[0].mean())),
        case("reshape", m34, Box::new(|v| v[0].reshape([2, 6])?.square())),
        case(
            "transpose",
            |r| vec![normal(&[2, 3, 4], 1.0, r)],
            Box::new(|v| v[0].transpose(0, 2)),
        ),
        case("slice", m34, Box::new(|v| v[0].slice(1, 1, 2))),
        case("reverse", m34, Box::new(|v| v[0].reverse(0))),
        case(
            "concat",
            |r| vec![normal(&[2, 4], 1.0, r), normal(&[3, 4], 1.0, r)],
            Box::new(|v| concat(&[v[0], v[1]], 0)),
        ),
        case(
            "concat_inner",
            |r| vec![normal(&[3, 2], 1.0, r), normal(&[3, 1], 1.0, r)],
            Box::new(|v| concat(&[v[0], v[1]], 1)),
        ),
        case(
            "selective_scan",
            scan_inputs,
            Box::new(|v| v[0].selective_scan(&v[1], &v[2], &v[3], &v[4])),
        ),
        case(
            "mse_loss",
            |r| vec![normal(&[6], 1.0, r)],
            Box::new(|v| {
                let target = Tensor::from_f64([6], &[0.5, -1.0, 2.0, 0.0, 1.5, 3.0]).unwrap();
                mse_loss(&v[0], &target)
            }),
        ),
    ];
    for (name, kind) in [
        ("silu", Unary::Silu),
        ("gelu", Unary::Gelu),
        ("tanh", Unary::Tanh),
        ("exp", Unary::Exp),
        ("softplus", Unary::Softplus),
        ("sigmoid", Unary::Sigmoid),
        ("square", Unary::Square),
    ] {
        cases.push(case(name, m34, Box::new(move |v| v[0].unary(kind))));
    }
    cases
}

/// Worst error of one op over seeds `0..seeds`.
pub fn check_case(c: &OpCase, seeds: u64) -> f64 {
    (0..seeds)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let inputs = (c.inputs)(&mut rng);
            check_op(c.op.as_ref(), &inputs, &mut rng)
        })
        .fold(0.0, f64::max)
}
