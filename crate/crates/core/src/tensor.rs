//! Dense row-major `f32` tensors and the numeric kernels the model is built from.
//!
//! Reductions (matmul dot products, normalization statistics, softmax
//! denominators) accumulate in `f64` and round once on the way out, so the
//! results are deterministic and do not depend on how work is split across
//! threads.

use rayon::prelude::*;
use thiserror::Error;

/// Rows handed to one rayon task in the row-parallel kernels.
const ROW_CHUNK: usize = 16;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} elements but {got} were supplied")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("invalid shape {0:?}: extents must be non-empty and >= 1")]
    InvalidShape(Vec<usize>),
    #[error("matmul shape mismatch: {left:?} x {right:?}")]
    MatmulMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("{op}: expected trailing extent {expected}, found shape {shape:?}")]
    TrailingExtent {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: expected a rank-{rank} tensor, found shape {shape:?}")]
    Rank {
        op: &'static str,
        rank: usize,
        shape: Vec<usize>,
    },
    #[error("{op}: non-finite input at flat index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dense n-dimensional array of `f32` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(TensorError::InvalidShape(shape.to_vec()));
    }
    shape
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or_else(|| TensorError::InvalidShape(shape.to_vec()))
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f32>) -> Result<Self> {
        let shape = shape.into();
        let expected = check_shape(&shape)?;
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f32) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; n],
        })
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> f32) -> Result<Self> {
        let shape = shape.into();
        let n = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: (0..n).map(&mut f).collect(),
        })
    }

    /// Builds a 2-D tensor from nested rows; panics on ragged input.
    pub fn from_rows(rows: &[&[f32]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::new(vec![rows.len(), cols], data).expect("non-empty rows")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Size of the last axis.
    pub fn last_dim(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        match check_shape(&shape) {
            Ok(n) if n == self.data.len() => Ok(Self {
                shape,
                data: self.data,
            }),
            _ => Err(TensorError::Reshape {
                from: self.shape,
                to: shape,
            }),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Elementwise sum with a tensor of identical shape.
    pub fn add(&self, other: &Tensor) -> Result<Self> {
        if self.shape != other.shape {
            return Err(TensorError::Reshape {
                from: other.shape.clone(),
                to: self.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a + b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn rows_cols(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::Rank {
                op,
                rank: 2,
                shape: self.shape.clone(),
            }),
        }
    }
}

/// `a[m×k] · b[k×n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mismatch = || TensorError::MatmulMismatch {
        left: a.shape.clone(),
        right: b.shape.clone(),
    };
    let (m, k) = a.rows_cols("matmul").map_err(|_| mismatch())?;
    let (k2, n) = b.rows_cols("matmul").map_err(|_| mismatch())?;
    if k != k2 {
        return Err(mismatch());
    }
    let mut out = vec![0f32; m * n];
    let bd = &b.data;
    out.par_chunks_mut(n * ROW_CHUNK)
        .zip(a.data.par_chunks(k * ROW_CHUNK))
        .for_each(|(out_rows, a_rows)| {
            let mut acc = vec![0f64; n];
            for (out_row, a_row) in out_rows.chunks_mut(n).zip(a_rows.chunks(k)) {
                acc.iter_mut().for_each(|x| *x = 0.0);
                for (p, &aip) in a_row.iter().enumerate() {
                    let aip = aip as f64;
                    let b_row = &bd[p * n..(p + 1) * n];
                    for (s, &bpj) in acc.iter_mut().zip(b_row) {
                        *s += aip * bpj as f64;
                    }
                }
                for (o, s) in out_row.iter_mut().zip(&acc) {
                    *o = *s as f32;
                }
            }
        });
    Tensor::new(vec![m, n], out)
}

/// `x[n×in] · w[in×out] + bias[out]`, the orientation every stored weight uses.
pub fn linear(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    let mut y = matmul(x, weight)?;
    if let Some(bias) = bias {
        let n = y.last_dim();
        if bias.len() != n {
            return Err(TensorError::TrailingExtent {
                op: "linear bias",
                expected: n,
                shape: bias.shape.clone(),
            });
        }
        for row in y.data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
    }
    Ok(y)
}

/// Row-wise softmax over the last axis of a 2-D tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (_, c) = x.rows_cols("softmax_rows")?;
    if let Some(index) = x.data.iter().position(|v| v.is_nan()) {
        return Err(TensorError::NonFinite {
            op: "softmax_rows",
            index,
        });
    }
    let mut out = x.data.clone();
    out.par_chunks_mut(c * ROW_CHUNK).for_each(|rows| {
        rows.chunks_mut(c).for_each(softmax_in_place)
    });
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Numerically stable softmax of one row, in place.
pub(crate) fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut denom = 0f64;
    let mut exps = Vec::with_capacity(row.len());
    for &v in row.iter() {
        let e = ((v - max) as f64).exp();
        denom += e;
        exps.push(e);
    }
    for (o, e) in row.iter_mut().zip(exps) {
        *o = (e / denom) as f32;
    }
}

/// Layer normalization over the last axis followed by the `gamma`/`beta` affine.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let c = x.last_dim();
    for p in [gamma, beta] {
        if p.len() != c {
            return Err(TensorError::TrailingExtent {
                op: "layer_norm",
                expected: p.len(),
                shape: x.shape.clone(),
            });
        }
    }
    let mut out = x.data.clone();
    let (g, b) = (&gamma.data, &beta.data);
    out.par_chunks_mut(c * ROW_CHUNK).for_each(|rows| {
        for row in rows.chunks_mut(c) {
            let mean = row.iter().map(|&v| v as f64).sum::<f64>() / c as f64;
            let var = row
                .iter()
                .map(|&v| {
                    let d = v as f64 - mean;
                    d * d
                })
                .sum::<f64>()
                / c as f64;
            let inv = 1.0 / (var + eps as f64).sqrt();
            for ((v, &gi), &bi) in row.iter_mut().zip(g).zip(b) {
                *v = ((*v as f64 - mean) * inv * gi as f64 + bi as f64) as f32;
            }
        }
    });
    Ok(Tensor {
        shape: x.shape.clone(),
        data: out,
    })
}

/// Exact (erf-based) Gaussian error linear unit.
pub fn gelu(x: &Tensor) -> Tensor {
    x.map(gelu_scalar)
}

pub fn gelu_scalar(x: f32) -> f32 {
    let x = x as f64;
    (0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))) as f32
}
