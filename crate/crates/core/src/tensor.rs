//! Minimal dense numeric core: vectors and matrices in row-major order,
//! the elementwise/linear ops the model needs, and a central-difference
//! gradient checker that pins down every analytic backward pass.
//!
//! Everything is `f64`; finite-difference checks at 1e-4 tolerance are not
//! reliable in single precision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense tensor with explicit shape, row-major storage.
///
/// Only rank-1 (vector) and rank-2 (matrix) shapes are used in practice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Rank-1 tensor from raw values.
    pub fn from_vec(values: Vec<f64>) -> Self {
        Tensor {
            shape: vec![values.len()],
            data: values,
        }
    }

    /// Rank-2 tensor from row-major values.
    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_rows",
                lhs: vec![rows, cols],
                rhs: vec![values.len()],
            });
        }
        Ok(Tensor {
            shape: vec![rows, cols],
            data: values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Number of rows; a vector counts as a single column of its length.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            2 => self.shape[0],
            _ => panic!("rows() on rank-{} tensor", self.shape.len()),
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            2 => self.shape[1],
            _ => panic!("cols() on rank-{} tensor", self.shape.len()),
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    /// Row `r` of a matrix as a slice.
    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.data[r * c..(r + 1) * c]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        let c = self.shape[1];
        &mut self.data[r * c..(r + 1) * c]
    }

    fn check_same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        Ok(())
    }

    /// Matrix product `self · rhs`.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || rhs.shape.len() != 2 || self.shape[1] != rhs.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let (n, k, m) = (self.shape[0], self.shape[1], rhs.shape[1]);
        let mut out = Tensor::zeros(&[n, m]);
        for i in 0..n {
            for l in 0..k {
                let a = self.at(i, l);
                for j in 0..m {
                    out.data[i * m + j] += a * rhs.at(l, j);
                }
            }
        }
        Ok(out)
    }

    /// Matrix–vector product `self · v`.
    pub fn matvec(&self, v: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || v.shape.len() != 1 || self.shape[1] != v.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                lhs: self.shape.clone(),
                rhs: v.shape.clone(),
            });
        }
        let (n, k) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; n];
        for i in 0..n {
            let row = &self.data[i * k..(i + 1) * k];
            let mut acc = 0.0;
            for j in 0..k {
                acc += row[j] * v.data[j];
            }
            out[i] = acc;
        }
        Ok(Tensor::from_vec(out))
    }

    /// Transposed matrix–vector product `selfᵀ · v`, without materializing
    /// the transpose.
    pub fn matvec_t(&self, v: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || v.shape.len() != 1 || self.shape[0] != v.shape[0] {
            return Err(Error::ShapeMismatch {
                op: "matvec_t",
                lhs: self.shape.clone(),
                rhs: v.shape.clone(),
            });
        }
        let (n, k) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0; k];
        for i in 0..n {
            let row = &self.data[i * k..(i + 1) * k];
            let s = v.data[i];
            for j in 0..k {
                out[j] += s * row[j];
            }
        }
        Ok(Tensor::from_vec(out))
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_shape(rhs, "add")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_shape(rhs, "sub")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise product.
    pub fn hadamard(&self, rhs: &Tensor) -> Result<Tensor> {
        self.check_same_shape(rhs, "hadamard")?;
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a * b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|a| a * s).collect(),
        }
    }

    pub fn sigmoid(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|a| sigmoid(*a)).collect(),
        }
    }

    pub fn tanh(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|a| a.tanh()).collect(),
        }
    }

    /// Concatenation of rank-1 tensors into one vector.
    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(data)
    }

    /// Inner product of two same-shape tensors, Σ aₖ·bₖ.
    pub fn inner(&self, rhs: &Tensor) -> Result<f64> {
        self.check_same_shape(rhs, "inner")?;
        Ok(self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Outer product of two vectors: result[i][j] = a[i]·b[j].
    pub fn outer(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        if a.shape.len() != 1 || b.shape.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "outer",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let (n, m) = (a.len(), b.len());
        let mut data = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                data.push(a.data[i] * b.data[j]);
            }
        }
        Tensor::from_rows(n, m, data)
    }

    /// In-place `self += rhs`.
    pub fn add_assign(&mut self, rhs: &Tensor) -> Result<()> {
        self.check_same_shape(rhs, "add_assign")?;
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
        Ok(())
    }

    /// In-place `self += s · rhs`.
    pub fn add_scaled(&mut self, rhs: &Tensor, s: f64) -> Result<()> {
        self.check_same_shape(rhs, "add_scaled")?;
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += s * b;
        }
        Ok(())
    }

    /// In-place rank-1 update `self += a ⊗ b` on a matrix.
    pub fn add_outer(&mut self, a: &Tensor, b: &Tensor) -> Result<()> {
        if self.shape.len() != 2 || self.shape[0] != a.len() || self.shape[1] != b.len() {
            return Err(Error::ShapeMismatch {
                op: "add_outer",
                lhs: self.shape.clone(),
                rhs: vec![a.len(), b.len()],
            });
        }
        let cols = self.shape[1];
        for i in 0..a.len() {
            let s = a.data[i];
            let row = &mut self.data[i * cols..(i + 1) * cols];
            for j in 0..cols {
                row[j] += s * b.data[j];
            }
        }
        Ok(())
    }

    /// Squared Frobenius norm Σ v².
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|a| a * a).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|a| a.is_finite())
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Inner product of two raw slices. Panics on length mismatch.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Maximum relative error of `analytic` against central differences of `f`
/// over the given coordinates:
///
/// |analytic − (f(θ+h·eₖ) − f(θ−h·eₖ)) / 2h| / max(1, |analytic|)
///
/// `f` must be a scalar objective of the full parameter slice. Checking a
/// subset of coordinates keeps the cost bounded on large blocks.
pub fn grad_check<F>(
    mut f: F,
    theta: &[f64],
    analytic: &[f64],
    h: f64,
    coords: &[usize],
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert_eq!(theta.len(), analytic.len());
    let mut buf = theta.to_vec();
    let mut max_rel = 0.0f64;
    for &k in coords {
        let orig = buf[k];
        buf[k] = orig + h;
        let fp = f(&buf)?;
        buf[k] = orig - h;
        let fm = f(&buf)?;
        buf[k] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFiniteValue(format!(
                "grad_check objective at coordinate {k}"
            )));
        }
        let central = (fp - fm) / (2.0 * h);
        let rel = (analytic[k] - central).abs() / 1.0f64.max(analytic[k].abs());
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}

/// `grad_check` over every coordinate.
pub fn grad_check_all<F>(f: F, theta: &[f64], analytic: &[f64], h: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let coords: Vec<usize> = (0..theta.len()).collect();
    grad_check(f, theta, analytic, h, &coords)
}
