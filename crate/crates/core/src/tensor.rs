//! Dense row-major tensors and the raw kernels shared by the tape and the
//! benchmark harness.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::Arc;

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is the training default, `f64` the
/// verification precision.
pub trait Scalar:
    num_traits::Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Immutable-by-default N-d array. Cloning is cheap (shared storage);
/// mutation copies on write.
#[derive(Clone, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Arc<Vec<F>>,
}

impl<F: Scalar> Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                op: "tensor",
                msg: format!("shape {:?} needs {} elements, got {}", shape, numel(&shape), data.len()),
            });
        }
        Ok(Self {
            shape,
            data: Arc::new(data),
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<F>) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Self {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| F::of(v)).collect())
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let n = numel(&shape);
        Self::from_parts(shape, vec![value; n])
    }

    pub fn scalar(value: F) -> Self {
        Self::from_parts(vec![], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    /// Single element of a one-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape {
                op: "item",
                msg: format!("expected one element, shape is {:?}", self.shape),
            });
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape.clone(),
                rhs: shape,
            });
        }
        Ok(Self {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| G::of(v.as_f64())).collect(),
        )
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }

    /// Plain (non-recorded) matrix product with the same shape rules as the
    /// tape op.
    pub fn matmul(&self, rhs: &Tensor<F>) -> Result<Tensor<F>> {
        let dims = MatmulDims::resolve(&self.shape, &rhs.shape)?;
        let mut out = vec![F::zero(); dims.out_numel()];
        dims.forward(&self.data, &rhs.data, &mut out);
        Ok(Tensor::from_parts(dims.out_shape(&self.shape), out))
    }

    pub fn softmax(&self, axis: usize) -> Result<Tensor<F>> {
        let layout = AxisLayout::new(&self.shape, axis, "softmax")?;
        Ok(Tensor::from_parts(
            self.shape.clone(),
            softmax_along(&self.data, layout),
        ))
    }

    pub fn layernorm(&self, gain: &Tensor<F>, bias: &Tensor<F>, eps: f64) -> Result<Tensor<F>> {
        let d = check_norm_params(&self.shape, gain.shape(), bias.shape())?;
        let (out, _, _) = layernorm_rows(&self.data, &gain.data, &bias.data, d, F::of(eps));
        Ok(Tensor::from_parts(self.shape.clone(), out))
    }
}

/// Batched matrix-product geometry: `a[.., m, k] · b[.., k, n]` where `b` is
/// either a single matrix or carries the same batch extents as `a`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct MatmulDims {
    pub batch: usize,
    pub shared_rhs: bool,
    pub m: usize,
    pub k: usize,
    pub n: usize,
}

impl MatmulDims {
    pub fn resolve(a: &[usize], b: &[usize]) -> Result<Self> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        if a.len() < 2 || b.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != kb {
            return Err(mismatch());
        }
        let batch = numel(&a[..a.len() - 2]);
        let shared_rhs = b.len() == 2;
        if !shared_rhs && a[..a.len() - 2] != b[..b.len() - 2] {
            return Err(mismatch());
        }
        Ok(Self {
            batch,
            shared_rhs,
            m,
            k,
            n,
        })
    }

    pub fn out_numel(&self) -> usize {
        self.batch * self.m * self.n
    }

    pub fn out_shape(&self, a: &[usize]) -> Vec<usize> {
        let mut s = a[..a.len() - 2].to_vec();
        s.push(self.m);
        s.push(self.n);
        s
    }

    fn rhs_offset(&self, b: usize) -> usize {
        if self.shared_rhs {
            0
        } else {
            b * self.k * self.n
        }
    }

    pub fn forward<F: Scalar>(&self, a: &[F], b: &[F], out: &mut [F]) {
        let (m, k, n) = (self.m, self.k, self.n);
        if self.shared_rhs {
            gemm_nn(a, b, out, self.batch * m, k, n);
            return;
        }
        for bi in 0..self.batch {
            gemm_nn(
                &a[bi * m * k..(bi + 1) * m * k],
                &b[self.rhs_offset(bi)..self.rhs_offset(bi) + k * n],
                &mut out[bi * m * n..(bi + 1) * m * n],
                m,
                k,
                n,
            );
        }
    }

    /// Accumulates `dA += dY·Bᵀ` and `dB += Aᵀ·dY`.
    pub fn backward<F: Scalar>(&self, a: &[F], b: &[F], dy: &[F], da: Option<&mut [F]>, db: Option<&mut [F]>) {
        let (m, k, n) = (self.m, self.k, self.n);
        if let Some(da) = da {
            if self.shared_rhs {
                gemm_nt(dy, b, da, self.batch * m, n, k);
            } else {
                for bi in 0..self.batch {
                    let ro = self.rhs_offset(bi);
                    gemm_nt(
                        &dy[bi * m * n..(bi + 1) * m * n],
                        &b[ro..ro + k * n],
                        &mut da[bi * m * k..(bi + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
            }
        }
        if let Some(db) = db {
            if self.shared_rhs {
                gemm_tn(a, dy, db, self.batch * m, k, n);
            } else {
                for bi in 0..self.batch {
                    let ro = self.rhs_offset(bi);
                    gemm_tn(
                        &a[bi * m * k..(bi + 1) * m * k],
                        &dy[bi * m * n..(bi + 1) * m * n],
                        &mut db[ro..ro + k * n],
                        m,
                        k,
                        n,
                    );
                }
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[k,n]`
pub(crate) fn gemm_nn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// `out[m,n] += a[m,k] · b[n,k]ᵀ`
pub(crate) fn gemm_nt<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in arow.iter().zip(brow) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// `out[k,n] += a[m,k]ᵀ · b[m,n]`
pub(crate) fn gemm_tn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Decomposition of a shape around one axis: `outer × len × inner`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisLayout {
    pub outer: usize,
    pub len: usize,
    pub inner: usize,
}

impl AxisLayout {
    pub fn new(shape: &[usize], axis: usize, op: &'static str) -> Result<Self> {
        if axis >= shape.len() {
            return Err(Error::InvalidShape {
                op,
                msg: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        Ok(Self {
            outer: numel(&shape[..axis]),
            len: shape[axis],
            inner: numel(&shape[axis + 1..]),
        })
    }

    #[inline]
    pub fn index(&self, o: usize, i: usize, j: usize) -> usize {
        (o * self.len + i) * self.inner + j
    }
}

pub(crate) fn softmax_along<F: Scalar>(x: &[F], l: AxisLayout) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for o in 0..l.outer {
        for j in 0..l.inner {
            let mut max = F::neg_infinity();
            for i in 0..l.len {
                max = max.max(x[l.index(o, i, j)]);
            }
            let mut total = F::zero();
            for i in 0..l.len {
                let e = (x[l.index(o, i, j)] - max).exp();
                out[l.index(o, i, j)] = e;
                total += e;
            }
            for i in 0..l.len {
                out[l.index(o, i, j)] /= total;
            }
        }
    }
    out
}

pub(crate) fn check_norm_params(x: &[usize], gain: &[usize], bias: &[usize]) -> Result<usize> {
    let d = *x.last().ok_or_else(|| Error::InvalidShape {
        op: "layernorm",
        msg: "input must have at least one axis".into(),
    })?;
    for p in [gain, bias] {
        if p != [d] {
            return Err(Error::ShapeMismatch {
                op: "layernorm",
                lhs: x.to_vec(),
                rhs: p.to_vec(),
            });
        }
    }
    Ok(d)
}

/// Row-wise layer normalisation over the last axis. Returns the output and
/// the per-row mean and reciprocal standard deviation.
pub(crate) fn layernorm_rows<F: Scalar>(x: &[F], gain: &[F], bias: &[F], d: usize, eps: F) -> (Vec<F>, Vec<F>, Vec<F>) {
    let rows = x.len() / d.max(1);
    let mut out = vec![F::zero(); x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    let df = F::of(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() / df;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / df;
        let rstd = F::one() / (var + eps).sqrt();
        for (c, o) in out[r * d..(r + 1) * d].iter_mut().enumerate() {
            *o = (row[c] - mean) * rstd * gain[c] + bias[c];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inconsistent_shape() {
        assert!(Tensor::<f32>::new(vec![2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn matmul_identity_and_dot() {
        let i = Tensor::<f64>::from_f64([2, 2], &[1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::from_f64([2, 2], &[5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(i.matmul(&b).unwrap().data(), b.data());

        let r = Tensor::<f64>::from_f64([1, 2], &[1.0, 2.0]).unwrap();
        let c = Tensor::<f64>::from_f64([2, 1], &[3.0, 4.0]).unwrap();
        assert_eq!(r.matmul(&c).unwrap().data(), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]);
        let b = Tensor::<f32>::zeros([4, 2]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let x = Tensor::<f64>::from_f64([3], &[0.0, 0.0, 0.0]).unwrap();
        for v in x.softmax(0).unwrap().data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
        let x = Tensor::<f32>::from_f64([2], &[1000.0, 0.0]).unwrap();
        let s = x.softmax(0).unwrap();
        assert!(s.is_finite());
        assert!((s.data()[0] - 1.0).abs() < 1e-6 && s.data()[1].abs() < 1e-6);

        // exp-normalise directly at 64-bit
        let x = Tensor::<f64>::from_f64([3], &[1.0, 2.0, 3.0]).unwrap();
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        for (i, v) in x.softmax(0).unwrap().data().iter().enumerate() {
            assert!((v - ((i + 1) as f64).exp() / z).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_inner_axis() {
        let x = Tensor::<f64>::from_f64([2, 3], &[1.0, 2.0, 3.0, 0.5, 0.5, 4.0]).unwrap();
        let s = x.softmax(0).unwrap();
        for j in 0..3 {
            let col = s.data()[j] + s.data()[3 + j];
            assert!((col - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_examples() {
        let g = Tensor::<f64>::full([3], 1.0);
        let b = Tensor::<f64>::zeros([3]);
        let flat = Tensor::<f64>::from_f64([1, 3], &[5.0, 5.0, 5.0]).unwrap();
        assert_eq!(flat.layernorm(&g, &b, 1e-5).unwrap().data(), &[0.0, 0.0, 0.0]);

        let x = Tensor::<f64>::from_f64([1, 3], &[1.0, 2.0, 3.0]).unwrap();
        let y = x.layernorm(&g, &b, 1e-6).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 3.0;
        let var: f64 = y.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-5);
    }
}
