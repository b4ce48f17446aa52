use rand::Rng;

use super::ops::sigmoid;
use super::{expect_len, linalg, ParamBlock, ParamId, Tensor};
use crate::error::Result;

/// Gated recurrent unit.
///
/// ```text
/// r  = σ(W_ir x + b_ir + W_hr h + b_hr)
/// z  = σ(W_iz x + b_iz + W_hz h + b_hz)
/// n  = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))
/// h' = (1 − z) ⊙ h + z ⊙ n
/// ```
///
/// Gate rows are stacked `[r; z; n]` in `w_ih` (3H × in) and `w_hh` (3H × H).
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

/// Activations saved by [`GruCell::forward`] for the backward pass.
#[derive(Clone, Debug)]
pub struct GruCache {
    rows: usize,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`
    hn: Vec<f64>,
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        block: &mut ParamBlock,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let bound_in = 1.0 / (input as f64).sqrt();
        let w_ih = block.add(
            format!("{name}/w_ih"),
            Tensor::uniform(&[3 * hidden, input], bound_in, rng),
        );
        let w_hh = block.add(
            format!("{name}/w_hh"),
            Tensor::uniform(&[3 * hidden, hidden], bound, rng),
        );
        let b_ih = block.add(format!("{name}/b_ih"), Tensor::zeros(&[3 * hidden]));
        let b_hh = block.add(format!("{name}/b_hh"), Tensor::zeros(&[3 * hidden]));
        Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input,
            hidden,
        }
    }

    pub fn bind(block: &ParamBlock, name: &str) -> Option<Self> {
        let w_ih = block.id(&format!("{name}/w_ih"))?;
        let w_hh = block.id(&format!("{name}/w_hh"))?;
        let b_ih = block.id(&format!("{name}/b_ih"))?;
        let b_hh = block.id(&format!("{name}/b_hh"))?;
        let shape = block.value(w_ih).shape();
        Some(Self {
            w_ih,
            w_hh,
            b_ih,
            b_hh,
            input: shape[1],
            hidden: shape[0] / 3,
        })
    }

    /// One recurrence step over `rows` independent sequences.
    pub fn forward(&self, block: &ParamBlock, x: &[f64], h_prev: &[f64], rows: usize) -> (Vec<f64>, GruCache) {
        let hd = self.hidden;
        let g3 = 3 * hd;
        let mut gi = Vec::with_capacity(rows * g3);
        let mut gh = Vec::with_capacity(rows * g3);
        for _ in 0..rows {
            gi.extend_from_slice(block.value(self.b_ih).data());
            gh.extend_from_slice(block.value(self.b_hh).data());
        }
        linalg::x_wt(x, rows, self.input, block.value(self.w_ih).data(), g3, &mut gi, true);
        linalg::x_wt(h_prev, rows, hd, block.value(self.w_hh).data(), g3, &mut gh, true);

        let mut r = vec![0.0; rows * hd];
        let mut z = vec![0.0; rows * hd];
        let mut n = vec![0.0; rows * hd];
        let mut hn = vec![0.0; rows * hd];
        let mut h_new = vec![0.0; rows * hd];
        for row in 0..rows {
            let gi_r = &gi[row * g3..(row + 1) * g3];
            let gh_r = &gh[row * g3..(row + 1) * g3];
            for j in 0..hd {
                let k = row * hd + j;
                let rv = sigmoid(gi_r[j] + gh_r[j]);
                let zv = sigmoid(gi_r[hd + j] + gh_r[hd + j]);
                let hnv = gh_r[2 * hd + j];
                let nv = (gi_r[2 * hd + j] + rv * hnv).tanh();
                r[k] = rv;
                z[k] = zv;
                n[k] = nv;
                hn[k] = hnv;
                h_new[k] = (1.0 - zv) * h_prev[k] + zv * nv;
            }
        }
        let cache = GruCache {
            rows,
            x: x.to_vec(),
            h_prev: h_prev.to_vec(),
            r,
            z,
            n,
            hn,
        };
        (h_new, cache)
    }

    /// Accumulates parameter gradients; returns `∂L/∂h_prev` and writes `∂L/∂x` if asked.
    pub fn backward(
        &self,
        block: &mut ParamBlock,
        cache: &GruCache,
        dh_new: &[f64],
        dx: Option<&mut [f64]>,
    ) -> Vec<f64> {
        let hd = self.hidden;
        let g3 = 3 * hd;
        let rows = cache.rows;
        let mut dgi = vec![0.0; rows * g3];
        let mut dgh = vec![0.0; rows * g3];
        let mut dh_prev = vec![0.0; rows * hd];
        for row in 0..rows {
            for j in 0..hd {
                let k = row * hd + j;
                let (r, z, n, hn, hp) = (cache.r[k], cache.z[k], cache.n[k], cache.hn[k], cache.h_prev[k]);
                let g = dh_new[k];
                let dz = g * (n - hp);
                let dn = g * z;
                dh_prev[k] = g * (1.0 - z);
                let dan = dn * (1.0 - n * n);
                let dar = dan * hn * r * (1.0 - r);
                let daz = dz * z * (1.0 - z);
                let base = row * g3;
                dgi[base + j] = dar;
                dgi[base + hd + j] = daz;
                dgi[base + 2 * hd + j] = dan;
                dgh[base + j] = dar;
                dgh[base + hd + j] = daz;
                dgh[base + 2 * hd + j] = dan * r;
            }
        }
        {
            let (_, g) = block.value_and_grad_mut(self.w_ih);
            linalg::dyt_x(&dgi, rows, g3, &cache.x, self.input, g.data_mut());
        }
        {
            let (_, g) = block.value_and_grad_mut(self.w_hh);
            linalg::dyt_x(&dgh, rows, g3, &cache.h_prev, hd, g.data_mut());
        }
        linalg::col_sums(&dgi, rows, g3, block.grad_mut(self.b_ih).data_mut());
        linalg::col_sums(&dgh, rows, g3, block.grad_mut(self.b_hh).data_mut());
        linalg::dy_w(&dgh, rows, g3, block.value(self.w_hh).data(), hd, &mut dh_prev, true);
        if let Some(dx) = dx {
            linalg::dy_w(&dgi, rows, g3, block.value(self.w_ih).data(), self.input, dx, false);
        }
        dh_prev
    }
}

/// Single-sequence convenience wrapper around [`GruCell::forward`].
pub fn gru_step(x: &Tensor, h_prev: &Tensor, cell: &GruCell, block: &ParamBlock) -> Result<Tensor> {
    expect_len("gru input", x.len(), cell.input)?;
    expect_len("gru hidden state", h_prev.len(), cell.hidden)?;
    let (h, _) = cell.forward(block, x.data(), h_prev.data(), 1);
    Tensor::from_vec(&[cell.hidden], h)
}
