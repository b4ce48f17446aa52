use rand::Rng;

use super::{linalg, ParamBlock, ParamId, Tensor};

/// Fully connected layer `y = x Wᵀ + b` whose weights live in a [`ParamBlock`].
#[derive(Clone, Copy, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Dense {
    /// Registers `name/w` and `name/b`; weights uniform in ±1/√fan_in, zero bias.
    pub fn new<R: Rng + ?Sized>(
        block: &mut ParamBlock,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (input as f64).sqrt();
        let w = block.add(format!("{name}/w"), Tensor::uniform(&[output, input], bound, rng));
        let b = block.add(format!("{name}/b"), Tensor::zeros(&[output]));
        Self { w, b, input, output }
    }

    /// Rebinds a layer to an already-populated block (e.g. a loaded checkpoint).
    pub fn bind(block: &ParamBlock, name: &str) -> Option<Self> {
        let w = block.id(&format!("{name}/w"))?;
        let b = block.id(&format!("{name}/b"))?;
        let shape = block.value(w).shape();
        Some(Self {
            w,
            b,
            input: shape[1],
            output: shape[0],
        })
    }

    pub fn forward(&self, block: &ParamBlock, x: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(x.len(), rows * self.input);
        let mut y = Vec::with_capacity(rows * self.output);
        let bias = block.value(self.b).data();
        for _ in 0..rows {
            y.extend_from_slice(bias);
        }
        linalg::x_wt(
            x,
            rows,
            self.input,
            block.value(self.w).data(),
            self.output,
            &mut y,
            true,
        );
        y
    }

    /// Accumulates weight/bias gradients and optionally writes `∂L/∂x` into `dx`.
    pub fn backward(
        &self,
        block: &mut ParamBlock,
        x: &[f64],
        dy: &[f64],
        rows: usize,
        dx: Option<&mut [f64]>,
    ) {
        {
            let (_, gw) = block.value_and_grad_mut(self.w);
            linalg::dyt_x(dy, rows, self.output, x, self.input, gw.data_mut());
        }
        linalg::col_sums(dy, rows, self.output, block.grad_mut(self.b).data_mut());
        if let Some(dx) = dx {
            linalg::dy_w(
                dy,
                rows,
                self.output,
                block.value(self.w).data(),
                self.input,
                dx,
                false,
            );
        }
    }
}
