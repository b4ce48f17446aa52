use serde::{Deserialize, Serialize};

use super::{expect_len, linalg, Tensor};
use crate::error::{config_err, Result};

/// Elementwise activations. Softmax is axis-wise and lives in [`softmax`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Elu,
    Tanh,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    y + 1.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// `∂L/∂x` from the pre-activation `x`, output `y` and upstream `dy`.
pub fn activation_backward(x: &Tensor, y: &Tensor, dy: &Tensor, kind: Activation) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(y.data())
        .zip(dy.data())
        .map(|((&xv, &yv), &g)| g * kind.derivative(xv, yv))
        .collect();
    Tensor {
        shape: x.shape().to_vec(),
        data,
    }
}

/// Numerically stable softmax over one slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// `dz = y ⊙ (dy − ⟨y, dy⟩)` for one softmax slice; written into `dy`.
pub(crate) fn softmax_backward_in_place(y: &[f64], dy: &mut [f64]) {
    let dot: f64 = y.iter().zip(dy.iter()).map(|(a, b)| a * b).sum();
    for (g, &p) in dy.iter_mut().zip(y) {
        *g = p * (*g - dot);
    }
}

/// Softmax along the last axis.
pub fn softmax(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let cols = x.cols().max(1);
    for row in out.data_mut().chunks_mut(cols) {
        softmax_in_place(row);
    }
    out
}

/// Gradient through [`softmax`] given its output `y`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let mut out = dy.clone();
    let cols = y.cols().max(1);
    for (yr, gr) in y.data().chunks(cols).zip(out.data_mut().chunks_mut(cols)) {
        softmax_backward_in_place(yr, gr);
    }
    out
}

fn affine_dims(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<(usize, usize, usize)> {
    if w.shape().len() != 2 {
        return config_err(format!("affine weight must be 2-D, got {:?}", w.shape()));
    }
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    expect_len("affine bias", b.len(), out)?;
    if x.cols() != inp {
        return config_err(format!(
            "affine input width {} does not match weight {:?}",
            x.cols(),
            w.shape()
        ));
    }
    Ok((x.rows(), inp, out))
}

/// `y = x Wᵀ + b` for a vector `x[in]` or a batch `x[rows×in]`.
pub fn affine_forward(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (rows, inp, out) = affine_dims(x, w, b)?;
    let mut y = vec![0.0; rows * out];
    for r in 0..rows {
        y[r * out..(r + 1) * out].copy_from_slice(b.data());
    }
    linalg::x_wt(x.data(), rows, inp, w.data(), out, &mut y, true);
    let shape = if x.shape().len() <= 1 {
        vec![out]
    } else {
        vec![rows, out]
    };
    Tensor::from_vec(&shape, y)
}

/// Returns `(∂L/∂x, ∂L/∂W, ∂L/∂b)` for [`affine_forward`].
pub fn affine_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    let rows = x.rows();
    expect_len("affine upstream gradient", dy.len(), rows * out)?;
    let mut dx = Tensor::zeros(x.shape());
    linalg::dy_w(dy.data(), rows, out, w.data(), inp, dx.data_mut(), false);
    let mut dw = Tensor::zeros(w.shape());
    linalg::dyt_x(dy.data(), rows, out, x.data(), inp, dw.data_mut());
    let mut db = Tensor::zeros(&[out]);
    linalg::col_sums(dy.data(), rows, out, db.data_mut());
    Ok((dx, dw, db))
}
