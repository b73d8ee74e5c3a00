//! Dense linear algebra, activations, losses and analytic gradients for the
//! unit blocks the network is built from, plus a central finite-difference
//! gradient oracle used by the test suites.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probability clamp for binary cross-entropy, keeps the loss finite at
/// predictions of exactly 0 or 1.
pub const BCE_EPS: f64 = 1e-7;

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Matrix::new",
                format!("{} values ({rows}x{cols})", rows * cols),
                data.len().to_string(),
            ));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Elementwise activation of a unit block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply_scalar(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    pub fn apply(self, z: &[f64]) -> Vec<f64> {
        z.iter().map(|&v| self.apply_scalar(v)).collect()
    }

    /// Derivative with respect to the pre-activation value.
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => {
                let s = self.apply_scalar(z);
                s * (1.0 - s)
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Loss function over scalar predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    BinaryCrossEntropy,
    MeanSquaredError,
}

impl Loss {
    /// Mean loss over the sample vectors.
    pub fn value(self, y_pred: &[f64], y_true: &[f64]) -> Result<f64> {
        if y_pred.len() != y_true.len() {
            return Err(Error::dim(
                "loss_value",
                y_true.len().to_string(),
                y_pred.len().to_string(),
            ));
        }
        if y_pred.is_empty() {
            return Err(Error::EmptyDataset("loss_value on empty vectors".into()));
        }
        let n = y_pred.len() as f64;
        let total: f64 = y_pred
            .iter()
            .zip(y_true)
            .map(|(&p, &y)| self.sample_value(p, y))
            .sum();
        Ok(total / n)
    }

    pub fn sample_value(self, p: f64, y: f64) -> f64 {
        match self {
            Loss::MeanSquaredError => {
                let d = p - y;
                d * d
            }
            Loss::BinaryCrossEntropy => {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            }
        }
    }

    /// d(sample loss)/d(prediction), using the same clamp as `sample_value`.
    pub fn sample_grad(self, p: f64, y: f64) -> f64 {
        match self {
            Loss::MeanSquaredError => 2.0 * (p - y),
            Loss::BinaryCrossEntropy => {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                (p - y) / (p * (1.0 - p))
            }
        }
    }
}

/// W·x + b for a row-major weight matrix of shape n_out × n_in.
pub fn affine_forward(w: &Matrix, b: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    if w.cols() != x.len() {
        return Err(Error::dim(
            "affine_forward input",
            format!("{} (W is {}x{})", w.cols(), w.rows(), w.cols()),
            x.len().to_string(),
        ));
    }
    if w.rows() != b.len() {
        return Err(Error::dim(
            "affine_forward bias",
            format!("{} (W is {}x{})", w.rows(), w.rows(), w.cols()),
            b.len().to_string(),
        ));
    }
    let mut out = Vec::with_capacity(w.rows());
    for r in 0..w.rows() {
        let mut acc = b[r];
        for (wv, xv) in w.row(r).iter().zip(x) {
            acc += wv * xv;
        }
        out.push(acc);
    }
    Ok(out)
}

/// Gradients of a dense block `out = act(Wx + b)` given the upstream gradient
/// d(loss)/d(out). Returns (dW, db, dx).
pub fn dense_backward(
    w: &Matrix,
    x: &[f64],
    pre: &[f64],
    activation: Activation,
    upstream: &[f64],
) -> (Matrix, Vec<f64>, Vec<f64>) {
    debug_assert_eq!(w.cols(), x.len());
    debug_assert_eq!(w.rows(), pre.len());
    debug_assert_eq!(w.rows(), upstream.len());
    let delta: Vec<f64> = upstream
        .iter()
        .zip(pre)
        .map(|(&g, &z)| g * activation.derivative(z))
        .collect();
    let dw = Matrix::from_fn(w.rows(), w.cols(), |r, c| delta[r] * x[c]);
    let mut dx = vec![0.0; w.cols()];
    for r in 0..w.rows() {
        for (c, wv) in w.row(r).iter().enumerate() {
            dx[c] += wv * delta[r];
        }
    }
    (dw, delta, dx)
}

/// Central-difference gradient of `f` at `theta` — the independent oracle the
/// analytic backward pass is checked against.
pub fn finite_difference_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    theta: &[f64],
    h: f64,
) -> Vec<f64> {
    let mut grad = Vec::with_capacity(theta.len());
    let mut work = theta.to_vec();
    for i in 0..theta.len() {
        work[i] = theta[i] + h;
        let up = f(&work);
        work[i] = theta[i] - h;
        let down = f(&work);
        work[i] = theta[i];
        grad.push((up - down) / (2.0 * h));
    }
    grad
}
