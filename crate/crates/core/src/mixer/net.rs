use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::tensor::{softmax_backward_in_place, softmax_in_place, Activation, Dense, ParamBlock};

/// How hypernetwork outputs are made non-negative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightConstraint {
    /// First-layer weights sum to one over agents, second-layer weights over
    /// the embedding.
    #[default]
    Softmax,
    /// Elementwise absolute value.
    Abs,
}

impl WeightConstraint {
    fn apply(self, z: &mut [f64], group: usize) {
        match self {
            WeightConstraint::Softmax => z.chunks_mut(group).for_each(softmax_in_place),
            WeightConstraint::Abs => z.iter_mut().for_each(|v| *v = v.abs()),
        }
    }

    /// Turns `dw` (w.r.t. the constrained weights `w`) into the gradient
    /// w.r.t. the raw outputs `z`.
    fn backward(self, z: &[f64], w: &[f64], dw: &mut [f64], group: usize) {
        match self {
            WeightConstraint::Softmax => {
                for (y, g) in w.chunks(group).zip(dw.chunks_mut(group)) {
                    softmax_backward_in_place(y, g);
                }
            }
            WeightConstraint::Abs => {
                for (g, &v) in dw.iter_mut().zip(z) {
                    *g *= if v >= 0.0 { 1.0 } else { -1.0 };
                }
            }
        }
    }
}

const HIDDEN_ACT: Activation = Activation::Elu;

/// One output head: weights over the shared hidden layer plus a two-layer bias.
#[derive(Clone, Debug)]
struct Head {
    w: Dense,
    b_hidden: Dense,
    b_out: Dense,
}

/// State-conditioned double monotonic mixer.
///
/// `hidden = elu(W1(s)·q + b1(s))`, then two heads
/// `q_jt = W2(s)·hidden + b2(s)` and `q_jt_inc = W2'(s)·hidden + b2'(s)`.
#[derive(Clone, Debug)]
pub struct MixerNet {
    pub block: ParamBlock,
    w1: Dense,
    b1: Dense,
    heads: [Head; 2],
    n_agents: usize,
    state_dim: usize,
    embed: usize,
    constraint: WeightConstraint,
}

/// Joint values for a batch of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct MixOutput {
    pub q_jt: Vec<f64>,
    pub q_jt_inc: Vec<f64>,
}

struct HeadCache {
    w_raw: Vec<f64>,
    w: Vec<f64>,
    b_pre: Vec<f64>,
    b_act: Vec<f64>,
}

/// Activations needed by [`MixerNet::backward`].
pub struct MixCache {
    rows: usize,
    states: Vec<f64>,
    qs: Vec<f64>,
    w1_raw: Vec<f64>,
    w1: Vec<f64>,
    pre: Vec<f64>,
    hidden: Vec<f64>,
    heads: [HeadCache; 2],
}

impl MixerNet {
    pub fn new<R: Rng + ?Sized>(
        n_agents: usize,
        state_dim: usize,
        embed: usize,
        constraint: WeightConstraint,
        rng: &mut R,
    ) -> Self {
        let mut block = ParamBlock::new();
        let w1 = Dense::new(&mut block, "hyper_w1", state_dim, embed * n_agents, rng);
        let b1 = Dense::new(&mut block, "hyper_b1", state_dim, embed, rng);
        let mut head = |k: usize| Head {
            w: Dense::new(&mut block, format!("hyper_w2_{k}").as_str(), state_dim, embed, rng),
            b_hidden: Dense::new(&mut block, format!("hyper_b2_{k}/hidden").as_str(), state_dim, embed, rng),
            b_out: Dense::new(&mut block, format!("hyper_b2_{k}/out").as_str(), embed, 1, rng),
        };
        let heads = [head(1), head(2)];
        Self {
            block,
            w1,
            b1,
            heads,
            n_agents,
            state_dim,
            embed,
            constraint,
        }
    }

    /// Rebinds layer handles to a block with the standard parameter names.
    pub fn from_block(block: ParamBlock, n_agents: usize, constraint: WeightConstraint) -> Result<Self> {
        let get = |n: &str| Dense::bind(&block, n).ok_or_else(|| Error::Format(format!("mixer layer {n} missing")));
        let w1 = get("hyper_w1")?;
        let b1 = get("hyper_b1")?;
        let head = |k: usize| -> Result<Head> {
            Ok(Head {
                w: get(&format!("hyper_w2_{k}"))?,
                b_hidden: get(&format!("hyper_b2_{k}/hidden"))?,
                b_out: get(&format!("hyper_b2_{k}/out"))?,
            })
        };
        let heads = [head(1)?, head(2)?];
        let embed = b1.output;
        if n_agents == 0 || w1.output != embed * n_agents {
            return Err(Error::Format("mixer width does not match the agent count".into()));
        }
        let state_dim = w1.input;
        Ok(Self {
            block,
            w1,
            b1,
            heads,
            n_agents,
            state_dim,
            embed,
            constraint,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n_agents
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn embed(&self) -> usize {
        self.embed
    }

    pub fn constraint(&self) -> WeightConstraint {
        self.constraint
    }

    /// Mixes one row of chosen-action agent Q-values.
    pub fn mix(&self, agent_qs: &[f64], state: &[f64]) -> Result<MixOutput> {
        if agent_qs.len() != self.n_agents {
            return config_err(format!("mixer expects {} agent values, got {}", self.n_agents, agent_qs.len()));
        }
        if state.len() != self.state_dim {
            return config_err(format!("mixer expects a {}-dim state, got {}", self.state_dim, state.len()));
        }
        Ok(self.forward(agent_qs, state, 1).0)
    }

    /// Batched forward: `qs` is `rows × n_agents`, `states` is `rows × state_dim`.
    pub fn forward(&self, qs: &[f64], states: &[f64], rows: usize) -> (MixOutput, MixCache) {
        let (n, e) = (self.n_agents, self.embed);
        let w1_raw = self.w1.forward(&self.block, states, rows);
        let mut w1 = w1_raw.clone();
        self.constraint.apply(&mut w1, n);
        let mut pre = self.b1.forward(&self.block, states, rows);
        for r in 0..rows {
            let q = &qs[r * n..(r + 1) * n];
            for k in 0..e {
                let w = &w1[(r * e + k) * n..(r * e + k + 1) * n];
                pre[r * e + k] += w.iter().zip(q).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let hidden: Vec<f64> = pre.iter().map(|&v| HIDDEN_ACT.apply(v)).collect();

        let mut outs = [vec![0.0; rows], vec![0.0; rows]];
        let heads = [0, 1].map(|k| {
            let head = &self.heads[k];
            let w_raw = head.w.forward(&self.block, states, rows);
            let mut w = w_raw.clone();
            self.constraint.apply(&mut w, e);
            let b_pre = head.b_hidden.forward(&self.block, states, rows);
            let b_act: Vec<f64> = b_pre.iter().map(|&v| v.max(0.0)).collect();
            let b = head.b_out.forward(&self.block, &b_act, rows);
            for r in 0..rows {
                let h = &hidden[r * e..(r + 1) * e];
                let wr = &w[r * e..(r + 1) * e];
                outs[k][r] = wr.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() + b[r];
            }
            HeadCache { w_raw, w, b_pre, b_act }
        });
        let [q_jt, q_jt_inc] = outs;
        (
            MixOutput { q_jt, q_jt_inc },
            MixCache {
                rows,
                states: states.to_vec(),
                qs: qs.to_vec(),
                w1_raw,
                w1,
                pre,
                hidden,
                heads,
            },
        )
    }

    /// Accumulates parameter gradients for upstream `d_jt`, `d_inc` (one per
    /// row) and returns `∂L/∂qs` (`rows × n_agents`).
    pub fn backward(&mut self, cache: &MixCache, d_jt: &[f64], d_inc: &[f64]) -> Vec<f64> {
        let (n, e, rows) = (self.n_agents, self.embed, cache.rows);
        let mut dhidden = vec![0.0; rows * e];
        for (k, dout) in [d_jt, d_inc].into_iter().enumerate() {
            let hc = &cache.heads[k];
            let head = self.heads[k].clone();
            let mut dw = vec![0.0; rows * e];
            for r in 0..rows {
                let g = dout[r];
                for j in 0..e {
                    dw[r * e + j] = g * cache.hidden[r * e + j];
                    dhidden[r * e + j] += g * hc.w[r * e + j];
                }
            }
            self.constraint.backward(&hc.w_raw, &hc.w, &mut dw, e);
            head.w.backward(&mut self.block, &cache.states, &dw, rows, None);
            let mut db_act = vec![0.0; rows * e];
            head.b_out.backward(&mut self.block, &hc.b_act, dout, rows, Some(&mut db_act));
            for (g, &x) in db_act.iter_mut().zip(&hc.b_pre) {
                if x <= 0.0 {
                    *g = 0.0;
                }
            }
            head.b_hidden.backward(&mut self.block, &cache.states, &db_act, rows, None);
        }
        let dpre: Vec<f64> = dhidden
            .iter()
            .zip(cache.pre.iter().zip(&cache.hidden))
            .map(|(g, (&x, &y))| g * HIDDEN_ACT.derivative(x, y))
            .collect();
        let mut dq = vec![0.0; rows * n];
        let mut dw1 = vec![0.0; rows * e * n];
        for r in 0..rows {
            let q = &cache.qs[r * n..(r + 1) * n];
            for k in 0..e {
                let g = dpre[r * e + k];
                let base = (r * e + k) * n;
                for i in 0..n {
                    dw1[base + i] = g * q[i];
                    dq[r * n + i] += g * cache.w1[base + i];
                }
            }
        }
        self.constraint.backward(&cache.w1_raw, &cache.w1, &mut dw1, n);
        let (w1, b1) = (self.w1.clone(), self.b1.clone());
        w1.backward(&mut self.block, &cache.states, &dw1, rows, None);
        b1.backward(&mut self.block, &cache.states, &dpre, rows, None);
        dq
    }

    /// Sets every hypernetwork bias path to produce zero.
    #[cfg(test)]
    pub(crate) fn zero_bias_hypernets(&mut self) {
        for d in [self.b1.w, self.b1.b] {
            self.block.value_mut(d).fill(0.0);
        }
        for h in &self.heads {
            for d in [h.b_out.w, h.b_out.b] {
                self.block.value_mut(d).fill(0.0);
            }
        }
    }
}
