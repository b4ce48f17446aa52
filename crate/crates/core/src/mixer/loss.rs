use rand::Rng;

use super::net::{MixerNet, WeightConstraint};
use crate::agent::{greedy, prepare_obs, ActionNet, IrdNet, RunningGaussian};
use crate::error::{config_err, contract_err, Result};
use crate::replay::EpisodeBatch;
use crate::tensor::{Checkpoint, ParamBlock};

/// Sizes needed to build every network of a learner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetShape {
    pub obs_dim: usize,
    pub n_actions: usize,
    pub n_agents: usize,
    pub state_dim: usize,
    pub rnn_hidden: usize,
    pub embed: usize,
    pub constraint: WeightConstraint,
}

/// Trainable networks plus their bootstrap copies.
#[derive(Clone, Debug)]
pub struct Networks {
    pub agent: ActionNet,
    pub mixer: MixerNet,
    pub ird: IrdNet,
    pub agent_target: ActionNet,
    pub mixer_target: MixerNet,
}

impl Networks {
    pub fn new<R: Rng + ?Sized>(shape: &NetShape, rng: &mut R) -> Self {
        let agent = ActionNet::new(shape.obs_dim, shape.n_actions, shape.rnn_hidden, rng);
        let mixer = MixerNet::new(shape.n_agents, shape.state_dim, shape.embed, shape.constraint, rng);
        let ird = IrdNet::new(shape.obs_dim, rng);
        Self {
            agent_target: agent.clone(),
            mixer_target: mixer.clone(),
            agent,
            mixer,
            ird,
        }
    }

    /// Copies online parameters into the bootstrap networks.
    pub fn sync_targets(&mut self) {
        self.agent_target
            .block
            .copy_values_from(&self.agent.block)
            .expect("target layout matches");
        self.mixer_target
            .block
            .copy_values_from(&self.mixer.block)
            .expect("target layout matches");
    }

    /// Blocks that receive gradients, in a fixed order.
    pub fn trainable(&mut self) -> [&mut ParamBlock; 3] {
        [&mut self.agent.block, &mut self.mixer.block, &mut self.ird.predictor]
    }

    pub fn zero_grad(&mut self) {
        self.trainable().into_iter().for_each(|b| b.zero_grad());
    }

    pub fn export_to(&self, ckpt: &mut Checkpoint) {
        self.agent.block.export_to("action_net", ckpt);
        self.agent_target.block.export_to("action_net_target", ckpt);
        self.mixer.block.export_to("mixer", ckpt);
        self.mixer_target.block.export_to("mixer_target", ckpt);
        self.ird.export_to("ird", ckpt);
    }

    pub fn import_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        self.agent.block.import_from("action_net", ckpt)?;
        self.agent_target.block.import_from("action_net_target", ckpt)?;
        self.mixer.block.import_from("mixer", ckpt)?;
        self.mixer_target.block.import_from("mixer_target", ckpt)?;
        self.ird.import_from("ird", ckpt)
    }
}

/// Discounts and the intrinsic/extrinsic trade-off.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub gamma_ext: f64,
    pub gamma_int: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma_ext: 0.99,
            gamma_int: 0.95,
            beta: 0.5,
        }
    }
}

/// Loss values and per-episode diagnostics from one pass over a batch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossOutput {
    pub total: f64,
    pub mix: f64,
    pub ird: f64,
    /// Extrinsic TD errors over the valid steps of each episode.
    pub td_ext: Vec<Vec<f64>>,
    pub mean_abs_td: f64,
    pub mean_intrinsic: f64,
}

/// One-step targets. Rows flagged in `terminal` do not bootstrap.
pub fn td_targets(
    reward: &[f64],
    intrinsic: &[f64],
    terminal: &[f64],
    next_jt: &[f64],
    next_inc: &[f64],
    w: &LossWeights,
) -> (Vec<f64>, Vec<f64>) {
    let y_ext = (0..reward.len())
        .map(|k| reward[k] + w.gamma_ext * (1.0 - terminal[k]) * next_jt[k])
        .collect();
    let y_inc = (0..reward.len())
        .map(|k| intrinsic[k] + w.gamma_int * (1.0 - terminal[k]) * next_inc[k])
        .collect();
    (y_ext, y_inc)
}

/// Per-row maximum of `q` (`rows × n_actions`) over available actions.
pub fn masked_max(q: &[f64], avail: &[bool], n_actions: usize) -> Vec<f64> {
    q.chunks(n_actions)
        .zip(avail.chunks(n_actions))
        .map(|(qr, ar)| match greedy(qr, ar) {
            Some(a) => qr[a],
            None => qr.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
        .collect()
}

fn check_inputs(batch: &EpisodeBatch, is_weights: &[f64], w: &LossWeights) -> Result<()> {
    if !(0.0..=1.0).contains(&w.beta) {
        return config_err(format!("beta = {} is outside [0, 1]", w.beta));
    }
    if batch.episodes == 0 || batch.steps == 0 {
        return contract_err("loss over an empty batch");
    }
    if is_weights.len() != batch.episodes {
        return contract_err(format!(
            "{} importance weights for {} episodes",
            is_weights.len(),
            batch.episodes
        ));
    }
    Ok(())
}

/// `Σ_j IS_j · mean_t ((1 − β)·δ_ext + β·δ_inc)²` over valid steps.
/// With `grad`, accumulates gradients into the agent network and mixer.
pub fn mixing_loss(
    nets: &mut Networks,
    batch: &EpisodeBatch,
    is_weights: &[f64],
    w: &LossWeights,
    grad: bool,
) -> Result<LossOutput> {
    check_inputs(batch, is_weights, w)?;
    let (b, steps, n, na) = (batch.episodes, batch.steps, batch.n_agents, batch.n_actions);
    let rows = b * n;

    let unrolled = nets.agent.unroll(&batch.obs[..steps], rows);
    let mut qs = Vec::with_capacity(steps * rows);
    for t in 0..steps {
        for r in 0..rows {
            qs.push(unrolled.q[t][r * na + batch.actions[t][r]]);
        }
    }
    let states: Vec<f64> = batch.state[..steps].concat();
    let (out, cache) = nets.mixer.forward(&qs, &states, steps * b);

    let target_q = nets.agent_target.unroll_q(&batch.obs, rows);
    let mut next_qs = Vec::with_capacity(steps * rows);
    for t in 1..=steps {
        next_qs.extend(masked_max(&target_q[t], &batch.avail[t], na));
    }
    let next_states: Vec<f64> = batch.state[1..=steps].concat();
    let (next, _) = nets.mixer_target.forward(&next_qs, &next_states, steps * b);
    let (y_ext, y_inc) = td_targets(
        &batch.reward.concat(),
        &batch.intrinsic.concat(),
        &batch.terminal.concat(),
        &next.q_jt,
        &next.q_jt_inc,
        w,
    );

    let beta = w.beta;
    let mut per_episode = vec![0.0; b];
    let mut td_ext = vec![Vec::new(); b];
    let mut d_jt = vec![0.0; steps * b];
    let mut d_inc = vec![0.0; steps * b];
    let (mut abs_td, mut intrinsic, mut valid) = (0.0, 0.0, 0usize);
    for t in 0..steps {
        for j in 0..b {
            if batch.mask[t][j] == 0.0 {
                continue;
            }
            let k = t * b + j;
            let de = out.q_jt[k] - y_ext[k];
            let di = out.q_jt_inc[k] - y_inc[k];
            let c = (1.0 - beta) * de + beta * di;
            per_episode[j] += c * c;
            td_ext[j].push(de);
            abs_td += de.abs();
            intrinsic += batch.intrinsic[t][j];
            valid += 1;
            let g = 2.0 * c * is_weights[j] / batch.lengths[j] as f64;
            d_jt[k] = g * (1.0 - beta);
            d_inc[k] = g * beta;
        }
    }
    let mix: f64 = per_episode
        .iter()
        .zip(&batch.lengths)
        .zip(is_weights)
        .map(|((s, &l), is)| is * s / l as f64)
        .sum();

    if grad {
        let dqs = nets.mixer.backward(&cache, &d_jt, &d_inc);
        let dq: Vec<Vec<f64>> = (0..steps)
            .map(|t| {
                let mut d = vec![0.0; rows * na];
                for r in 0..rows {
                    d[r * na + batch.actions[t][r]] = dqs[t * rows + r];
                }
                d
            })
            .collect();
        nets.agent.backward(&unrolled, &dq);
    }
    let valid = valid.max(1) as f64;
    Ok(LossOutput {
        total: mix,
        mix,
        ird: 0.0,
        td_ext,
        mean_abs_td: abs_td / valid,
        mean_intrinsic: intrinsic / valid,
    })
}

/// Normalised, clipped next-observations of every valid (episode, step, agent).
pub fn ird_inputs(batch: &EpisodeBatch, obs_norm: &RunningGaussian) -> (Vec<f64>, usize) {
    let (n, od) = (batch.n_agents, batch.obs_dim);
    let mut x = Vec::new();
    let mut rows = 0;
    for t in 0..batch.steps {
        for j in 0..batch.episodes {
            if batch.mask[t][j] == 0.0 {
                continue;
            }
            for i in 0..n {
                let row = (j * n + i) * od;
                prepare_obs(obs_norm, &batch.obs[t + 1][row..row + od], &mut x);
                rows += 1;
            }
        }
    }
    (x, rows)
}

/// Mean squared predictor error over valid next-observations.
pub fn ird_loss(ird: &mut IrdNet, batch: &EpisodeBatch, obs_norm: &RunningGaussian, grad: bool) -> Result<f64> {
    let (x, rows) = ird_inputs(batch, obs_norm);
    if grad {
        ird.loss_and_grad(&x, rows, 1.0)
    } else {
        ird.loss(&x, rows)
    }
}

/// Mixing loss plus predictor loss; one call fills every trainable gradient.
pub fn total_loss(
    nets: &mut Networks,
    batch: &EpisodeBatch,
    is_weights: &[f64],
    obs_norm: &RunningGaussian,
    w: &LossWeights,
    grad: bool,
) -> Result<LossOutput> {
    let mut out = mixing_loss(nets, batch, is_weights, w, grad)?;
    out.ird = ird_loss(&mut nets.ird, batch, obs_norm, grad)?;
    out.total = out.mix + out.ird;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{EnvConfig, EnvName};
    use crate::replay::{EpisodeBuilder, EpisodeRecord};
    use crate::tensor::{grad_check, Adam, Objective};
    use crate::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn corridor_records(seed: u64, count: usize, steps: usize) -> Vec<Arc<EpisodeRecord>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut env = EnvConfig::named(EnvName::SparseCorridor).build().unwrap();
        let spec = env.spec().clone();
        (0..count)
            .map(|e| {
                let first = env.reset(e as u64);
                let mut b = EpisodeBuilder::new(e as u64, &spec, &first);
                for _ in 0..steps - e {
                    let a: Vec<usize> = (0..spec.n_agents).map(|_| rng.gen_range(0..spec.n_actions)).collect();
                    let r = env.step(&a).unwrap();
                    b.push(&a, &r);
                    b.push_intrinsic(&[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
                }
                Arc::new(b.finish().unwrap())
            })
            .collect()
    }

    fn shape(hidden: usize) -> NetShape {
        let spec = EnvConfig::named(EnvName::SparseCorridor).spec().unwrap();
        NetShape {
            obs_dim: spec.obs_dim,
            n_actions: spec.n_actions,
            n_agents: spec.n_agents,
            state_dim: spec.state_dim,
            rnn_hidden: hidden,
            embed: 8,
            constraint: WeightConstraint::Softmax,
        }
    }

    /// Nets whose bootstrap copies differ from the online ones.
    fn perturbed_nets(seed: u64, hidden: usize) -> Networks {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nets = Networks::new(&shape(hidden), &mut rng);
        let other = Networks::new(&shape(hidden), &mut rng);
        nets.agent_target = other.agent;
        nets.mixer_target = other.mixer;
        nets
    }

    fn fitted_norm(batch: &EpisodeBatch) -> RunningGaussian {
        let mut g = RunningGaussian::new(batch.obs_dim);
        for slice in &batch.obs {
            for row in slice.chunks(batch.obs_dim) {
                g.update(row).unwrap();
            }
        }
        g
    }

    #[test]
    fn terminal_and_zero_discount_targets_are_the_reward() {
        let w = LossWeights {
            gamma_ext: 0.99,
            ..LossWeights::default()
        };
        let (y, _) = td_targets(&[10.0], &[0.0], &[1.0], &[123.0], &[4.0], &w);
        assert_eq!(y, vec![10.0]);
        let w0 = LossWeights {
            gamma_ext: 0.0,
            gamma_int: 0.0,
            beta: 0.5,
        };
        let (y, yi) = td_targets(&[1.0, -2.0], &[0.3, 0.1], &[0.0, 0.0], &[9.0, 9.0], &[9.0, 9.0], &w0);
        assert_eq!(y, vec![1.0, -2.0]);
        assert_eq!(yi, vec![0.3, 0.1]);
    }

    #[test]
    fn two_state_chain_matches_hand_backup() {
        // s0 --(r=1)--> s1 --(r=2)--> terminal, Q(s1, ·) = [5, 3], Q(s_term) irrelevant.
        let q_table = [[0.0, 0.0], [5.0, 3.0], [7.0, 7.0]];
        let next_vals: Vec<f64> = masked_max(&[q_table[1], q_table[2]].concat(), &[true; 4], 2);
        let w = LossWeights::default();
        let (y, _) = td_targets(&[1.0, 2.0], &[0.0, 0.0], &[0.0, 1.0], &next_vals, &[0.0, 0.0], &w);
        assert_eq!(y, vec![1.0 + 0.99 * 5.0, 2.0]);
    }

    #[test]
    fn masked_max_respects_availability() {
        assert_eq!(masked_max(&[1.0, 9.0, 3.0], &[true, false, true], 3), vec![3.0]);
    }

    #[test]
    fn beta_outside_unit_interval_is_rejected() {
        let mut nets = perturbed_nets(0, 8);
        let batch = EpisodeBatch::from_records(&corridor_records(0, 2, 3)).unwrap();
        for beta in [-0.1, 1.1] {
            let w = LossWeights {
                beta,
                ..LossWeights::default()
            };
            let r = mixing_loss(&mut nets, &batch, &[1.0, 1.0], &w, false);
            assert!(matches!(r, Err(Error::Config(_))));
        }
    }

    #[test]
    fn beta_zero_is_weighted_external_td_only() {
        let mut nets = perturbed_nets(1, 8);
        let batch = EpisodeBatch::from_records(&corridor_records(1, 3, 4)).unwrap();
        let is = [1.0, 0.4, 0.7];
        let w = LossWeights {
            beta: 0.0,
            ..LossWeights::default()
        };
        let out = mixing_loss(&mut nets, &batch, &is, &w, false).unwrap();
        let oracle: f64 = out
            .td_ext
            .iter()
            .zip(is)
            .map(|(d, s)| s * d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64)
            .sum();
        assert!((out.mix - oracle).abs() < 1e-12 * oracle.max(1.0));
        assert_eq!(out.td_ext.iter().map(|d| d.len()).collect::<Vec<_>>(), vec![4, 3, 2]);
    }

    #[test]
    fn total_is_the_sum_of_parts() {
        let mut nets = perturbed_nets(2, 8);
        let batch = EpisodeBatch::from_records(&corridor_records(2, 2, 3)).unwrap();
        let norm = fitted_norm(&batch);
        let w = LossWeights::default();
        let total = total_loss(&mut nets, &batch, &[1.0, 0.5], &norm, &w, false).unwrap();
        let mix = mixing_loss(&mut nets, &batch, &[1.0, 0.5], &w, false).unwrap().mix;
        let ird = ird_loss(&mut nets.ird, &batch, &norm, false).unwrap();
        assert!((total.total - (mix + ird)).abs() < 1e-12);
    }

    #[test]
    fn perfect_fit_has_zero_loss() {
        let mut nets = perturbed_nets(3, 8);
        let batch = EpisodeBatch::from_records(&corridor_records(3, 2, 2)).unwrap();
        let out = mixing_loss(&mut nets, &batch, &[0.0, 0.0], &LossWeights::default(), false).unwrap();
        assert_eq!(out.mix, 0.0);
    }

    struct Full {
        nets: Networks,
        batch: EpisodeBatch,
        norm: RunningGaussian,
        is: Vec<f64>,
    }

    impl Full {
        fn eval(&mut self, grad: bool) -> f64 {
            if grad {
                self.nets.zero_grad();
            }
            total_loss(&mut self.nets, &self.batch, &self.is, &self.norm, &LossWeights::default(), grad)
                .unwrap()
                .total
        }
    }

    impl Objective for Full {
        fn blocks(&mut self) -> Vec<&mut ParamBlock> {
            self.nets.trainable().into_iter().collect()
        }
        fn value(&mut self) -> f64 {
            self.eval(false)
        }
        fn value_and_grad(&mut self) -> f64 {
            self.eval(true)
        }
    }

    #[test]
    fn full_loss_gradient_matches_finite_differences() {
        let batch = EpisodeBatch::from_records(&corridor_records(4, 2, 3)).unwrap();
        let norm = fitted_norm(&batch);
        let mut obj = Full {
            nets: perturbed_nets(4, 8),
            batch,
            norm,
            is: vec![1.0, 0.6],
        };
        let err = grad_check(&mut obj, 1e-5);
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn one_adam_step_lowers_the_total_loss() {
        let batch = EpisodeBatch::from_records(&corridor_records(5, 4, 5)).unwrap();
        let norm = fitted_norm(&batch);
        let mut nets = perturbed_nets(5, 16);
        let w = LossWeights::default();
        let is = [1.0, 0.8, 0.5, 0.9];
        let adam = Adam::new(5e-4);
        nets.zero_grad();
        let before = total_loss(&mut nets, &batch, &is, &norm, &w, true).unwrap().total;
        let target_agent = nets.agent_target.block.clone();
        for b in nets.trainable() {
            adam.step(b).unwrap();
        }
        let after = total_loss(&mut nets, &batch, &is, &norm, &w, false).unwrap().total;
        assert!(after < before, "{after} !< {before}");
        assert!(nets.agent_target.block.values_equal(&target_agent));
    }

    #[test]
    fn checkpoint_round_trip_of_all_networks() {
        let nets = perturbed_nets(6, 8);
        let mut c = Checkpoint::new(3);
        nets.export_to(&mut c);
        let mut other = perturbed_nets(7, 8);
        other.import_from(&c).unwrap();
        assert!(other.agent.block.values_equal(&nets.agent.block));
        assert!(other.mixer_target.block.values_equal(&nets.mixer_target.block));
        assert!(other.ird.target.values_equal(&nets.ird.target));
    }
}
