use log::warn;

use super::Tensor;
use crate::error::{config_err, Error, Result};

/// Handle to one parameter tensor inside a [`ParamBlock`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

/// Named parameters with gradient accumulators and Adam moments of the same shapes.
#[derive(Clone, Debug)]
pub struct ParamBlock {
    names: Vec<String>,
    values: Vec<Tensor>,
    grads: Vec<Tensor>,
    first_moment: Vec<Tensor>,
    second_moment: Vec<Tensor>,
    adam_steps: u64,
    version: u64,
}

impl Default for ParamBlock {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamBlock {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            first_moment: Vec::new(),
            second_moment: Vec::new(),
            adam_steps: 0,
            version: 0,
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.names.contains(&name),
            "duplicate parameter name {name}"
        );
        let shape = value.shape().to_vec();
        self.names.push(name);
        self.values.push(value);
        self.grads.push(Tensor::zeros(&shape));
        self.first_moment.push(Tensor::zeros(&shape));
        self.second_moment.push(Tensor::zeros(&shape));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total scalar count across all tensors.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn set_version(&mut self, version: u64) {
        self.version = version;
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.grads[id.0]
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.grads[id.0]
    }

    /// Read access to a value alongside write access to its own gradient.
    pub fn value_and_grad_mut(&mut self, id: ParamId) -> (&Tensor, &mut Tensor) {
        (&self.values[id.0], &mut self.grads[id.0])
    }

    pub fn named_values(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads
            .iter()
            .flat_map(|g| g.data())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Copies parameter values (not optimizer state) from a block of identical layout.
    pub fn copy_values_from(&mut self, other: &ParamBlock) -> Result<()> {
        self.check_same_layout(other)?;
        for (dst, src) in self.values.iter_mut().zip(&other.values) {
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamBlock) -> Result<()> {
        if self.names != other.names
            || self
                .values
                .iter()
                .zip(&other.values)
                .any(|(a, b)| !a.same_shape(b))
        {
            return config_err("parameter blocks have different layouts");
        }
        Ok(())
    }

    /// Bitwise equality of parameter values.
    pub fn values_equal(&self, other: &ParamBlock) -> bool {
        self.names == other.names
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()))
    }

    /// Writes every parameter into `ckpt` as `prefix/name`.
    pub fn export_to(&self, prefix: &str, ckpt: &mut super::Checkpoint) {
        for (name, value) in self.named_values() {
            ckpt.insert(format!("{prefix}/{name}"), value.clone());
        }
    }

    /// Loads every parameter from `ckpt`; shapes must match exactly.
    pub fn import_from(&mut self, prefix: &str, ckpt: &super::Checkpoint) -> Result<()> {
        for i in 0..self.values.len() {
            let key = format!("{prefix}/{}", self.names[i]);
            let t = ckpt
                .get(&key)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {key}")))?;
            if !t.same_shape(&self.values[i]) {
                return Err(Error::Format(format!(
                    "{key}: checkpoint shape {:?}, network expects {:?}",
                    t.shape(),
                    self.values[i].shape()
                )));
            }
            self.values[i].data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }
}

/// Adam with optional global-norm gradient clipping.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: Option<f64>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: None,
        }
    }

    pub fn with_clip(mut self, max_grad_norm: Option<f64>) -> Self {
        self.max_grad_norm = max_grad_norm;
        self
    }

    /// Applies one update from the accumulated gradients, then clears them.
    ///
    /// A non-finite gradient aborts the step: values and moments stay as they
    /// were, gradients are cleared and the version is not bumped.
    pub fn step(&self, block: &mut ParamBlock) -> Result<()> {
        if block.grads.iter().any(|g| !g.is_finite()) {
            warn!("non-finite gradient, optimizer step skipped");
            block.zero_grad();
            return Err(Error::NonFinite("gradient".into()));
        }
        let scale = match self.max_grad_norm {
            Some(max) => {
                let norm = block.grad_norm();
                if norm > max {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        block.adam_steps += 1;
        let t = block.adam_steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for i in 0..block.values.len() {
            let value = block.values[i].data_mut();
            let grad = block.grads[i].data();
            let m = block.first_moment[i].data_mut();
            let v = block.second_moment[i].data_mut();
            for j in 0..value.len() {
                let g = grad[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                value[j] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        block.zero_grad();
        block.version += 1;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_block(x: f64) -> (ParamBlock, ParamId) {
        let mut b = ParamBlock::new();
        let id = b.add("x", Tensor::vector(&[x]).unwrap());
        (b, id)
    }

    #[test]
    fn zero_gradient_leaves_values_and_bumps_version() {
        let (mut b, id) = scalar_block(1.5);
        Adam::new(5e-4).step(&mut b).unwrap();
        assert_eq!(b.value(id).data(), &[1.5]);
        assert_eq!(b.version(), 1);
    }

    #[test]
    fn zero_learning_rate_leaves_values() {
        let (mut b, id) = scalar_block(-0.25);
        b.grad_mut(id).data_mut()[0] = 3.0;
        Adam::new(0.0).step(&mut b).unwrap();
        assert_eq!(b.value(id).data(), &[-0.25]);
        assert_eq!(b.grad(id).data(), &[0.0]);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        // f(x) = (x - 0)^2 starting at x = 2: each step must strictly decrease x.
        let (mut b, id) = scalar_block(2.0);
        let adam = Adam::new(5e-4);
        let mut prev = 2.0;
        for _ in 0..200 {
            let x = b.value(id).data()[0];
            b.grad_mut(id).data_mut()[0] = 2.0 * x;
            adam.step(&mut b).unwrap();
            let now = b.value(id).data()[0];
            assert!(now < prev);
            prev = now;
        }
    }

    #[test]
    fn non_finite_gradient_aborts_step() {
        let (mut b, id) = scalar_block(1.0);
        b.grad_mut(id).data_mut()[0] = f64::NAN;
        let err = Adam::new(0.1).step(&mut b).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
        assert_eq!(b.value(id).data(), &[1.0]);
        assert_eq!(b.version(), 0);
        assert_eq!(b.grad(id).data(), &[0.0]);
    }

    #[test]
    fn step_is_deterministic() {
        let run = || {
            let (mut b, id) = scalar_block(0.3);
            for k in 0..10 {
                b.grad_mut(id).data_mut()[0] = (k as f64).sin();
                Adam::new(1e-2).with_clip(Some(0.5)).step(&mut b).unwrap();
            }
            b.value(id).data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }
}
