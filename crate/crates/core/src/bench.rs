//! Sequence-length scaling of the selective scan against reference
//! softmax attention.

use std::fmt::Write as _;
use std::hint::black_box;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mamba::scan::{scan_streaming_into, ScanDims};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kernel {
    SelectiveScan,
    Attention,
}

impl Kernel {
    pub fn name(self) -> &'static str {
        match self {
            Kernel::SelectiveScan => "selective_scan",
            Kernel::Attention => "attention",
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub trials: usize,
    /// Scan channels and token width for attention.
    pub width: usize,
    pub d_state: usize,
    /// Minimum wall time per trial at the shortest length; sets the
    /// repetition count shared by every length.
    pub min_trial_secs: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![128, 256, 512, 1024],
            trials: 5,
            width: 64,
            d_state: 16,
            min_trial_secs: 2e-3,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub kernel: Kernel,
    pub length: usize,
    pub reps: usize,
    /// Median seconds per kernel call.
    pub median_secs: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub scan_exponent: f64,
    pub attention_exponent: f64,
}

impl BenchReport {
    pub fn table(&self) -> String {
        let mut s = format!("{:<16} {:>8} {:>14}\n", "kernel", "length", "median_us");
        for r in &self.rows {
            writeln!(
                s,
                "{:<16} {:>8} {:>14.3}",
                r.kernel.name(),
                r.length,
                r.median_secs * 1e6
            )
            .expect("string write");
        }
        writeln!(s, "fitted exponent selective_scan: {:.3}", self.scan_exponent).expect("string write");
        writeln!(s, "fitted exponent attention:      {:.3}", self.attention_exponent).expect("string write");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kernel,length,reps,median_secs\n");
        for r in &self.rows {
            writeln!(s, "{},{},{},{}", r.kernel.name(), r.length, r.reps, r.median_secs).expect("string write");
        }
        s
    }
}

/// Least-squares slope of `ln t` against `ln n`.
pub fn fit_exponent(lengths: &[usize], secs: &[f64]) -> Result<f64> {
    if lengths.len() != secs.len() {
        return Err(Error::LengthMismatch(lengths.len(), secs.len()));
    }
    let mut distinct = lengths.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "need at least 3 distinct lengths for a fit, got {}",
            distinct.len()
        )));
    }
    let xs: Vec<f64> = lengths.iter().map(|&n| (n as f64).ln()).collect();
    let ys: Vec<f64> = secs.iter().map(|t| t.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Input and output buffers for one length, allocated before timing.
struct Workspace {
    dims: ScanDims,
    width: usize,
    x: Vec<f32>,
    delta: Vec<f32>,
    a: Vec<f32>,
    b: Vec<f32>,
    c: Vec<f32>,
    h: Vec<f32>,
    y: Vec<f32>,
    scores: Vec<f32>,
    out: Vec<f32>,
}

impl Workspace {
    fn new(len: usize, width: usize, d_state: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut rand = |n: usize, lo: f32, hi: f32| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<f32>>();
        Self {
            dims: ScanDims {
                len,
                channels: width,
                state: d_state,
            },
            width,
            x: rand(len * width, -1.0, 1.0),
            delta: rand(len * width, 1e-3, 0.1),
            a: rand(width * d_state, -2.0, -0.1),
            b: rand(len * d_state, -1.0, 1.0),
            c: rand(len * d_state, -1.0, 1.0),
            h: vec![0.0; width * d_state],
            y: vec![0.0; len * width],
            scores: vec![0.0; len * len],
            out: vec![0.0; len * width],
        }
    }

    fn scan(&mut self) {
        let w = self;
        scan_streaming_into(w.dims, &w.x, &w.delta, &w.a, &w.b, &w.c, &mut w.h, &mut w.y);
        black_box(&w.y);
    }

    /// Single-head `softmax(X Xᵀ / √d) X` with the token matrix reused as
    /// queries, keys and values.
    fn attention(&mut self) {
        let (s, d) = (self.dims.len, self.width);
        let x = &self.x;
        let scale = 1.0 / (d as f32).sqrt();
        for i in 0..s {
            let qi = &x[i * d..(i + 1) * d];
            let row = &mut self.scores[i * s..(i + 1) * s];
            for (j, r) in row.iter_mut().enumerate() {
                let kj = &x[j * d..(j + 1) * d];
                *r = qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f32>() * scale;
            }
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                z += *r;
            }
            let o = &mut self.out[i * d..(i + 1) * d];
            o.fill(0.0);
            for (j, p) in row.iter().enumerate() {
                let w = p / z;
                for (ok, vk) in o.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                    *ok += w * vk;
                }
            }
        }
        black_box(&self.out);
    }

    fn run(&mut self, kernel: Kernel) {
        match kernel {
            Kernel::SelectiveScan => self.scan(),
            Kernel::Attention => self.attention(),
        }
    }
}

fn time_reps(ws: &mut Workspace, kernel: Kernel, reps: usize) -> f64 {
    let t0 = Instant::now();
    for _ in 0..reps {
        ws.run(kernel);
    }
    t0.elapsed().as_secs_f64() / reps as f64
}

/// Times both kernels at every length and fits their log-log slopes.
pub fn run(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    // Validates the length list before any timing.
    fit_exponent(&cfg.lengths, &vec![1.0; cfg.lengths.len()])?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut workspaces: Vec<Workspace> = cfg
        .lengths
        .iter()
        .map(|&n| Workspace::new(n, cfg.width, cfg.d_state, &mut rng))
        .collect();
    let shortest = (0..cfg.lengths.len())
        .min_by_key(|&i| cfg.lengths[i])
        .expect("non-empty");

    let mut rows = Vec::new();
    let mut exponents = Vec::new();
    for kernel in [Kernel::SelectiveScan, Kernel::Attention] {
        let ws = &mut workspaces[shortest];
        ws.run(kernel);
        let once = time_reps(ws, kernel, 1).max(1e-9);
        let reps = ((cfg.min_trial_secs / once).ceil() as usize).max(1);
        let mut medians = Vec::with_capacity(cfg.lengths.len());
        for (ws, &length) in workspaces.iter_mut().zip(&cfg.lengths) {
            ws.run(kernel);
            let times: Vec<f64> = (0..cfg.trials).map(|_| time_reps(ws, kernel, reps)).collect();
            let median_secs = median(times);
            medians.push(median_secs);
            rows.push(BenchRow {
                kernel,
                length,
                reps,
                median_secs,
            });
        }
        exponents.push(fit_exponent(&cfg.lengths, &medians)?);
    }
    Ok(BenchReport {
        rows,
        scan_exponent: exponents[0],
        attention_exponent: exponents[1],
    })
}
