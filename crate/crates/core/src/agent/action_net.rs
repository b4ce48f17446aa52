use rand::Rng;

use crate::error::{config_err, Error, Result};
use crate::tensor::{Activation, Dense, GruCache, GruCell, ParamBlock};

const FC1_ACT: Activation = Activation::Elu;

/// Recurrent per-agent Q network shared by all agents: dense → GRU → dense.
///
/// Inputs are full observations (local features, last-action one-hot and
/// agent-id one-hot), so one parameter set serves every agent.
#[derive(Clone, Debug)]
pub struct ActionNet {
    pub block: ParamBlock,
    fc1: Dense,
    gru: GruCell,
    fc2: Dense,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Clone, Debug)]
struct StepCache {
    x: Vec<f64>,
    pre: Vec<f64>,
    act: Vec<f64>,
    gru: GruCache,
    h: Vec<f64>,
}

/// Result of unrolling the network over a batch of sequences.
#[derive(Clone, Debug)]
pub struct Unrolled {
    pub rows: usize,
    /// `q[t]` is `rows × n_actions`.
    pub q: Vec<Vec<f64>>,
    caches: Vec<StepCache>,
}

impl ActionNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, n_actions: usize, hidden: usize, rng: &mut R) -> Self {
        let mut block = ParamBlock::new();
        let fc1 = Dense::new(&mut block, "fc1", obs_dim, hidden, rng);
        let gru = GruCell::new(&mut block, "gru", hidden, hidden, rng);
        let fc2 = Dense::new(&mut block, "fc2", hidden, n_actions, rng);
        Self { block, fc1, gru, fc2 }
    }

    /// Rebinds layer handles to a block with the standard parameter names.
    pub fn from_block(block: ParamBlock) -> Result<Self> {
        let missing = || Error::Format("action network parameters incomplete".into());
        let fc1 = Dense::bind(&block, "fc1").ok_or_else(missing)?;
        let gru = GruCell::bind(&block, "gru").ok_or_else(missing)?;
        let fc2 = Dense::bind(&block, "fc2").ok_or_else(missing)?;
        if fc1.output != gru.input || gru.hidden != fc2.input {
            return Err(Error::Format("action network layer widths disagree".into()));
        }
        Ok(Self { block, fc1, gru, fc2 })
    }

    pub fn obs_dim(&self) -> usize {
        self.fc1.input
    }

    pub fn n_actions(&self) -> usize {
        self.fc2.output
    }

    pub fn hidden(&self) -> usize {
        self.gru.hidden
    }

    /// Single-agent step: `(Q-values, next hidden state)`.
    pub fn act_q(&self, obs: &[f64], hidden: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if obs.len() != self.obs_dim() {
            return config_err(format!("observation has {} values, network expects {}", obs.len(), self.obs_dim()));
        }
        if hidden.len() != self.hidden() {
            return config_err(format!("hidden state has {} values, network expects {}", hidden.len(), self.hidden()));
        }
        Ok(self.step(obs, hidden, 1))
    }

    /// Batched step without caching: `rows` observations and hidden states.
    pub fn step(&self, obs: &[f64], hidden: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
        let mut a = self.fc1.forward(&self.block, obs, rows);
        a.iter_mut().for_each(|v| *v = FC1_ACT.apply(*v));
        let (h, _) = self.gru.forward(&self.block, &a, hidden, rows);
        let q = self.fc2.forward(&self.block, &h, rows);
        (q, h)
    }

    /// Unrolls from a zero hidden state over `inputs[t]` (`rows × obs_dim` each).
    pub fn unroll(&self, inputs: &[Vec<f64>], rows: usize) -> Unrolled {
        let mut h = vec![0.0; rows * self.hidden()];
        let mut q = Vec::with_capacity(inputs.len());
        let mut caches = Vec::with_capacity(inputs.len());
        for x in inputs {
            let pre = self.fc1.forward(&self.block, x, rows);
            let act: Vec<f64> = pre.iter().map(|&v| FC1_ACT.apply(v)).collect();
            let (h_new, gru) = self.gru.forward(&self.block, &act, &h, rows);
            q.push(self.fc2.forward(&self.block, &h_new, rows));
            caches.push(StepCache {
                x: x.clone(),
                pre,
                act,
                gru,
                h: h_new.clone(),
            });
            h = h_new;
        }
        Unrolled { rows, q, caches }
    }

    /// Q-values only, for target evaluation.
    pub fn unroll_q(&self, inputs: &[Vec<f64>], rows: usize) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; rows * self.hidden()];
        inputs
            .iter()
            .map(|x| {
                let (q, h_new) = self.step(x, &h, rows);
                h = h_new;
                q
            })
            .collect()
    }

    /// Backpropagation through time; `dq[t]` matches `unrolled.q[t]`.
    /// Gradients accumulate into `self.block`.
    pub fn backward(&mut self, unrolled: &Unrolled, dq: &[Vec<f64>]) {
        let rows = unrolled.rows;
        let hd = self.hidden();
        let mut dh_next = vec![0.0; rows * hd];
        let mut dact = vec![0.0; rows * self.fc1.output];
        let mut dh = vec![0.0; rows * hd];
        for (cache, dq_t) in unrolled.caches.iter().zip(dq).rev() {
            self.fc2.backward(&mut self.block, &cache.h, dq_t, rows, Some(&mut dh));
            for (a, b) in dh.iter_mut().zip(&dh_next) {
                *a += b;
            }
            dh_next = self.gru.backward(&mut self.block, &cache.gru, &dh, Some(&mut dact));
            for ((g, &x), &y) in dact.iter_mut().zip(&cache.pre).zip(&cache.act) {
                *g *= FC1_ACT.derivative(x, y);
            }
            self.fc1.backward(&mut self.block, &cache.x, &dact, rows, None);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Objective, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_output_bias_and_zero_hidden() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = ActionNet::new(4, 3, 64, &mut rng);
        for id in net.block.ids().collect::<Vec<_>>() {
            net.block.value_mut(id).fill(0.0);
        }
        let b = net.fc2.b;
        net.block.value_mut(b).data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let (q, h) = net.act_q(&[1.0, -2.0, 0.3, 0.0], &[0.0; 64]).unwrap();
        assert_eq!(q, vec![0.5, -1.0, 2.0]);
        assert!(h.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pure_function_of_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = ActionNet::new(5, 4, 64, &mut rng);
        let obs = Tensor::uniform(&[5], 1.0, &mut rng).into_vec();
        let h = Tensor::uniform(&[64], 1.0, &mut rng).into_vec();
        assert_eq!(net.act_q(&obs, &h).unwrap(), net.act_q(&obs, &h).unwrap());
        assert!(net.act_q(&obs[..4], &h).is_err());
        assert!(net.act_q(&obs, &h[..10]).is_err());
    }

    struct Bptt {
        net: ActionNet,
        inputs: Vec<Vec<f64>>,
        probes: Vec<Vec<f64>>,
        rows: usize,
    }

    impl Bptt {
        fn eval(&mut self, grad: bool) -> f64 {
            let u = self.net.unroll(&self.inputs, self.rows);
            let loss = u
                .q
                .iter()
                .zip(&self.probes)
                .map(|(q, p)| q.iter().zip(p).map(|(a, b)| a * b).sum::<f64>())
                .sum();
            if grad {
                self.net.block.zero_grad();
                let probes = self.probes.clone();
                self.net.backward(&u, &probes);
            }
            loss
        }
    }

    impl Objective for Bptt {
        fn blocks(&mut self) -> Vec<&mut ParamBlock> {
            vec![&mut self.net.block]
        }
        fn value(&mut self) -> f64 {
            self.eval(false)
        }
        fn value_and_grad(&mut self) -> f64 {
            self.eval(true)
        }
    }

    #[test]
    fn bptt_through_four_steps_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let net = ActionNet::new(6, 3, 16, &mut rng);
        let rows = 2;
        let inputs = (0..4).map(|_| Tensor::uniform(&[rows * 6], 1.0, &mut rng).into_vec()).collect();
        let probes = (0..4).map(|_| Tensor::uniform(&[rows * 3], 1.0, &mut rng).into_vec()).collect();
        let mut obj = Bptt { net, inputs, probes, rows };
        let err = grad_check(&mut obj, 1e-4);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn unroll_matches_stepwise_serving() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = ActionNet::new(3, 2, 8, &mut rng);
        let inputs: Vec<Vec<f64>> = (0..3).map(|_| Tensor::uniform(&[3], 1.0, &mut rng).into_vec()).collect();
        let u = net.unroll(&inputs, 1);
        let mut h = vec![0.0; 8];
        for (t, x) in inputs.iter().enumerate() {
            let (q, hn) = net.act_q(x, &h).unwrap();
            assert_eq!(q, u.q[t]);
            h = hn;
        }
    }
}
