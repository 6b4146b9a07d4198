//! Selective scan: the input-conditioned diagonal linear recurrence
//!
//! ```text
//! Ā[t,i,n] = exp(Δ[t,i] · A[i,n])
//! B̄[t,i,n] = Δ[t,i] · B[t,n]
//! h[t,i,n] = Ā[t,i,n] · h[t-1,i,n] + B̄[t,i,n] · x[t,i]      (h[-1] = 0)
//! y[t,i]   = Σ_n C[t,n] · h[t,i,n]
//! ```
//!
//! Two evaluation strategies exist: the sequential reference and a chunked
//! evaluation that scans fixed-size blocks independently (in parallel) and
//! then stitches them together by carrying the block-boundary state through
//! the cumulative decay of each block.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScanDims {
    pub len: usize,
    pub channels: usize,
    pub state: usize,
}

impl ScanDims {
    /// Validates `x[S,I]`, `delta[S,I]`, `a[I,N]`, `b[S,N]`, `c[S,N]`.
    pub fn check(x: &[usize], delta: &[usize], a: &[usize], b: &[usize], c: &[usize]) -> Result<Self> {
        let mismatch = |lhs: &[usize], rhs: &[usize]| Error::ShapeMismatch {
            op: "selective_scan",
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        if x.len() != 2 || a.len() != 2 {
            return Err(mismatch(x, a));
        }
        let (len, channels, state) = (x[0], x[1], a[1]);
        if len == 0 {
            return Err(Error::InvalidShape {
                op: "selective_scan",
                msg: "sequence must contain at least one token".into(),
            });
        }
        if delta != x {
            return Err(mismatch(x, delta));
        }
        if a[0] != channels {
            return Err(mismatch(x, a));
        }
        for m in [b, c] {
            if m != [len, state] {
                return Err(mismatch(a, m));
            }
        }
        Ok(Self { len, channels, state })
    }

    fn plane(&self) -> usize {
        self.channels * self.state
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ScanStrategy {
    /// Token-by-token recurrence; the reference.
    #[default]
    Sequential,
    /// Blocked evaluation with the given block length.
    Chunked(usize),
}

/// Discretised per-token operands, both laid out `[S, I, N]`.
#[derive(Clone, Debug)]
pub struct Discretized<F> {
    pub a_bar: Vec<F>,
    pub b_bar: Vec<F>,
}

/// Zero-order hold for the diagonal `A` and the Euler rule for `B`.
pub fn discretize<F: Scalar>(dims: ScanDims, a: &[F], b: &[F], delta: &[F]) -> Result<Discretized<F>> {
    let ScanDims { len, channels, state } = dims;
    if let Some(bad) = delta.iter().find(|d| d.is_nan() || **d <= F::zero()) {
        return Err(Error::NonPositiveStep(bad.as_f64()));
    }
    let n = len * channels * state;
    let mut a_bar = Vec::with_capacity(n);
    let mut b_bar = Vec::with_capacity(n);
    for t in 0..len {
        for i in 0..channels {
            let d = delta[t * channels + i];
            for k in 0..state {
                a_bar.push((d * a[i * state + k]).exp());
                b_bar.push(d * b[t * state + k]);
            }
        }
    }
    Ok(Discretized { a_bar, b_bar })
}

/// Evaluates the recurrence; returns `y[S,I]` and every state `h[S,I,N]`.
pub fn run<F: Scalar>(
    dims: ScanDims,
    disc: &Discretized<F>,
    c: &[F],
    x: &[F],
    strategy: ScanStrategy,
) -> (Vec<F>, Vec<F>) {
    let states = match strategy {
        ScanStrategy::Sequential => states_sequential(dims, disc, x),
        ScanStrategy::Chunked(block) => states_chunked(dims, disc, x, block.max(1)),
    };
    (readout(dims, &states, c), states)
}

fn states_sequential<F: Scalar>(dims: ScanDims, disc: &Discretized<F>, x: &[F]) -> Vec<F> {
    let p = dims.plane();
    let mut states = vec![F::zero(); dims.len * p];
    let mut h = vec![F::zero(); p];
    for t in 0..dims.len {
        step(dims, t, disc, x, &mut h);
        states[t * p..(t + 1) * p].copy_from_slice(&h);
    }
    states
}

#[inline]
fn step<F: Scalar>(dims: ScanDims, t: usize, disc: &Discretized<F>, x: &[F], h: &mut [F]) {
    let p = dims.plane();
    let a = &disc.a_bar[t * p..(t + 1) * p];
    let b = &disc.b_bar[t * p..(t + 1) * p];
    for i in 0..dims.channels {
        let xv = x[t * dims.channels + i];
        for k in 0..dims.state {
            let j = i * dims.state + k;
            h[j] = a[j] * h[j] + b[j] * xv;
        }
    }
}

fn states_chunked<F: Scalar>(dims: ScanDims, disc: &Discretized<F>, x: &[F], block: usize) -> Vec<F> {
    let p = dims.plane();
    let mut states = vec![F::zero(); dims.len * p];

    // Local scans from a zero state, plus each block's running decay product.
    let mut decays = vec![F::zero(); dims.len * p];
    states
        .par_chunks_mut(block * p)
        .zip(decays.par_chunks_mut(block * p))
        .enumerate()
        .for_each(|(ci, (hs, ds))| {
            let t0 = ci * block;
            let mut h = vec![F::zero(); p];
            let mut prod = vec![F::one(); p];
            for (local, (hrow, drow)) in hs.chunks_mut(p).zip(ds.chunks_mut(p)).enumerate() {
                let t = t0 + local;
                step(dims, t, disc, x, &mut h);
                for (pv, av) in prod.iter_mut().zip(&disc.a_bar[t * p..(t + 1) * p]) {
                    *pv *= *av;
                }
                hrow.copy_from_slice(&h);
                drow.copy_from_slice(&prod);
            }
        });

    // Carry the true state into each block: h_t = local_t + decay_t ⊙ carry.
    let blocks = dims.len.div_ceil(block);
    let mut carries = vec![vec![F::zero(); p]; blocks];
    for bi in 1..blocks {
        let last = bi * block - 1;
        let mut carry = carries[bi - 1].clone();
        for j in 0..p {
            carry[j] = states[last * p + j] + decays[last * p + j] * carry[j];
        }
        carries[bi] = carry;
    }
    states
        .par_chunks_mut(block * p)
        .zip(decays.par_chunks(block * p))
        .zip(carries.par_iter())
        .skip(1)
        .for_each(|((hs, ds), carry)| {
            for (hrow, drow) in hs.chunks_mut(p).zip(ds.chunks(p)) {
                for j in 0..p {
                    hrow[j] += drow[j] * carry[j];
                }
            }
        });
    states
}

fn readout<F: Scalar>(dims: ScanDims, states: &[F], c: &[F]) -> Vec<F> {
    let p = dims.plane();
    let mut y = vec![F::zero(); dims.len * dims.channels];
    for t in 0..dims.len {
        let ct = &c[t * dims.state..(t + 1) * dims.state];
        for i in 0..dims.channels {
            let h = &states[t * p + i * dims.state..t * p + (i + 1) * dims.state];
            y[t * dims.channels + i] = h.iter().zip(ct).map(|(&hv, &cv)| hv * cv).sum();
        }
    }
    y
}

/// Scan over already-discretised operands `a_bar[S,I,N]`, `b_bar[S,I,N]`,
/// `c[S,N]`, `x[S,I]`.
pub fn scan_discrete<F: Scalar>(
    dims: ScanDims,
    a_bar: &[F],
    b_bar: &[F],
    c: &[F],
    x: &[F],
    strategy: ScanStrategy,
) -> Vec<F> {
    let disc = Discretized {
        a_bar: a_bar.to_vec(),
        b_bar: b_bar.to_vec(),
    };
    run(dims, &disc, c, x, strategy).0
}

/// Forward-only scan that never materialises the discretised operands or the
/// state history. Used for inference timing.
pub fn scan_streaming<F: Scalar>(dims: ScanDims, x: &[F], delta: &[F], a: &[F], b: &[F], c: &[F]) -> Vec<F> {
    let mut h = vec![F::zero(); dims.channels * dims.state];
    let mut y = vec![F::zero(); dims.len * dims.channels];
    scan_streaming_into(dims, x, delta, a, b, c, &mut h, &mut y);
    y
}

/// [`scan_streaming`] into caller-provided buffers. `h` (`[I, N]`) is reset
/// to zero first.
#[allow(clippy::too_many_arguments)]
pub fn scan_streaming_into<F: Scalar>(
    dims: ScanDims,
    x: &[F],
    delta: &[F],
    a: &[F],
    b: &[F],
    c: &[F],
    h: &mut [F],
    y: &mut [F],
) {
    let (ch, ns) = (dims.channels, dims.state);
    h.fill(F::zero());
    for t in 0..dims.len {
        let bt = &b[t * ns..(t + 1) * ns];
        let ct = &c[t * ns..(t + 1) * ns];
        for i in 0..ch {
            let d = delta[t * ch + i];
            let dx = d * x[t * ch + i];
            let hrow = &mut h[i * ns..(i + 1) * ns];
            let arow = &a[i * ns..(i + 1) * ns];
            let mut acc = F::zero();
            for k in 0..ns {
                hrow[k] = (d * arow[k]).exp() * hrow[k] + bt[k] * dx;
                acc += ct[k] * hrow[k];
            }
            y[t * ch + i] = acc;
        }
    }
}

/// Reverse-time adjoint of the scan. Returns gradients for
/// `(x, delta, a, b, c)` in that order.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<F: Scalar>(
    dims: ScanDims,
    x: &[F],
    delta: &[F],
    a: &[F],
    b: &[F],
    c: &[F],
    states: &[F],
    dy: &[F],
) -> [Vec<F>; 5] {
    let ScanDims {
        len,
        channels: ch,
        state: ns,
    } = dims;
    let p = ch * ns;
    let mut dx = vec![F::zero(); x.len()];
    let mut ddelta = vec![F::zero(); delta.len()];
    let mut da = vec![F::zero(); a.len()];
    let mut db = vec![F::zero(); b.len()];
    let mut dc = vec![F::zero(); c.len()];

    // dh carries the adjoint of h_t; `next_decay` is Ā_{t+1}.
    let mut dh = vec![F::zero(); p];
    let mut next_decay = vec![F::zero(); p];
    for t in (0..len).rev() {
        let h = &states[t * p..(t + 1) * p];
        for i in 0..ch {
            let gy = dy[t * ch + i];
            let d = delta[t * ch + i];
            let xv = x[t * ch + i];
            let mut dd = F::zero();
            let mut dxv = F::zero();
            for k in 0..ns {
                let j = i * ns + k;
                dc[t * ns + k] += gy * h[j];
                let adj = c[t * ns + k] * gy + next_decay[j] * dh[j];
                dh[j] = adj;

                let abar = (d * a[j]).exp();
                let hprev = if t > 0 { states[(t - 1) * p + j] } else { F::zero() };
                // ∂/∂Ā then chain through Ā = exp(ΔA)
                let dabar = adj * hprev * abar;
                dd += dabar * a[j] + adj * b[t * ns + k] * xv;
                da[j] += dabar * d;
                db[t * ns + k] += adj * d * xv;
                dxv += adj * d * b[t * ns + k];
                next_decay[j] = abar;
            }
            ddelta[t * ch + i] += dd;
            dx[t * ch + i] += dxv;
        }
    }
    [dx, ddelta, da, db, dc]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn discretize_closed_forms() {
        let dims = ScanDims {
            len: 1,
            channels: 1,
            state: 1,
        };
        let d = discretize(dims, &[-1.0f64], &[3.0], &[std::f64::consts::LN_2]).unwrap();
        assert!((d.a_bar[0] - 0.5).abs() < 1e-15);
        assert!((d.b_bar[0] - 3.0 * std::f64::consts::LN_2).abs() < 1e-15);

        let tiny = discretize(dims, &[-1.0f64], &[3.0], &[1e-12]).unwrap();
        assert!((tiny.a_bar[0] - 1.0).abs() < 1e-11 && tiny.b_bar[0].abs() < 1e-11);

        assert!(matches!(
            discretize(dims, &[-1.0f64], &[3.0], &[0.0]),
            Err(Error::NonPositiveStep(_))
        ));
    }

    #[test]
    fn hand_unrolled_scalar_case() {
        let dims = ScanDims {
            len: 3,
            channels: 1,
            state: 1,
        };
        for strategy in [ScanStrategy::Sequential, ScanStrategy::Chunked(2)] {
            let y = scan_discrete(dims, &[0.5f64; 3], &[1.0; 3], &[1.0; 3], &[1.0; 3], strategy);
            assert_eq!(y, vec![1.0, 1.5, 1.75]);
        }
    }

    #[test]
    fn zero_input_matrix_never_charges() {
        let dims = ScanDims {
            len: 4,
            channels: 2,
            state: 3,
        };
        let y = scan_discrete(
            dims,
            &[0.9f64; 24],
            &[0.0; 24],
            &[1.0; 12],
            &[1.0, -2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            ScanStrategy::Sequential,
        );
        assert!(y.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn memoryless_when_decay_is_zero() {
        let dims = ScanDims {
            len: 3,
            channels: 1,
            state: 2,
        };
        let b_bar = [0.5, 1.0, 2.0, -1.0, 0.25, 0.75];
        let c = [1.0, 2.0, 0.5, 0.5, -1.0, 3.0];
        let x = [2.0, -1.0, 4.0];
        let y = scan_discrete(dims, &[0.0f64; 6], &b_bar, &c, &x, ScanStrategy::Sequential);
        for t in 0..3 {
            let expect = (c[2 * t] * b_bar[2 * t] + c[2 * t + 1] * b_bar[2 * t + 1]) * x[t];
            assert_eq!(y[t], expect);
        }
    }

    #[test]
    fn streaming_matches_materialised() {
        let dims = ScanDims {
            len: 5,
            channels: 2,
            state: 2,
        };
        let x: [f64; 10] = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6, 0.7, -0.8, 0.9, 1.0];
        let delta = [0.1, 0.2, 0.05, 0.3, 0.4, 0.01, 0.2, 0.2, 0.1, 0.5];
        let a = [-1.0, -2.0, -0.5, -3.0];
        let b = [0.3, -0.1, 0.2, 0.4, 0.5, 0.6, -0.7, 0.8, 0.9, 0.1];
        let c = [1.0, 0.5, -0.5, 0.2, 0.3, 0.3, 0.7, -0.1, 0.4, 0.9];
        let disc = discretize(dims, &a, &b, &delta).unwrap();
        let (y_ref, _) = run(dims, &disc, &c, &x, ScanStrategy::Sequential);
        let y = scan_streaming(dims, &x, &delta, &a, &b, &c);
        for (u, v) in y.iter().zip(&y_ref) {
            assert!((u - v).abs() < 1e-14);
        }
    }
}
