use rand::Rng;

use super::normalizer::RunningGaussian;
use crate::error::{contract_err, Error, Result};
use crate::tensor::{Activation, Checkpoint, Dense, ParamBlock};

/// Width of the embedding both networks produce.
pub const EMBED_DIM: usize = 5;
pub const IRD_HIDDEN: usize = 32;
/// Normalised observations are clipped to this magnitude before embedding.
pub const OBS_CLIP: f64 = 5.0;

const HIDDEN_ACT: Activation = Activation::Elu;

/// Three-layer perceptron `obs_dim → 32 → 32 → 5`.
#[derive(Clone, Debug)]
struct Mlp {
    layers: [Dense; 3],
}

struct MlpTrace {
    inputs: [Vec<f64>; 3],
    pre: [Vec<f64>; 2],
    out: Vec<f64>,
}

impl Mlp {
    fn new<R: Rng + ?Sized>(block: &mut ParamBlock, obs_dim: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Dense::new(block, "fc1", obs_dim, IRD_HIDDEN, rng),
                Dense::new(block, "fc2", IRD_HIDDEN, IRD_HIDDEN, rng),
                Dense::new(block, "fc3", IRD_HIDDEN, EMBED_DIM, rng),
            ],
        }
    }

    fn bind(block: &ParamBlock) -> Result<Self> {
        let get = |n: &str| Dense::bind(block, n).ok_or_else(|| Error::Format(format!("ird layer {n} missing")));
        let layers = [get("fc1")?, get("fc2")?, get("fc3")?];
        if layers[0].output != layers[1].input || layers[1].output != layers[2].input || layers[2].output != EMBED_DIM {
            return Err(Error::Format("ird layer widths disagree".into()));
        }
        Ok(Self { layers })
    }

    fn forward(&self, block: &ParamBlock, x: &[f64], rows: usize) -> MlpTrace {
        let pre0 = self.layers[0].forward(block, x, rows);
        let a0: Vec<f64> = pre0.iter().map(|&v| HIDDEN_ACT.apply(v)).collect();
        let pre1 = self.layers[1].forward(block, &a0, rows);
        let a1: Vec<f64> = pre1.iter().map(|&v| HIDDEN_ACT.apply(v)).collect();
        let out = self.layers[2].forward(block, &a1, rows);
        MlpTrace {
            inputs: [x.to_vec(), a0, a1],
            pre: [pre0, pre1],
            out,
        }
    }

    fn backward(&self, block: &mut ParamBlock, trace: &MlpTrace, dout: &[f64], rows: usize) {
        let mut d1 = vec![0.0; rows * IRD_HIDDEN];
        self.layers[2].backward(block, &trace.inputs[2], dout, rows, Some(&mut d1));
        for ((g, &x), &y) in d1.iter_mut().zip(&trace.pre[1]).zip(&trace.inputs[2]) {
            *g *= HIDDEN_ACT.derivative(x, y);
        }
        let mut d0 = vec![0.0; rows * IRD_HIDDEN];
        self.layers[1].backward(block, &trace.inputs[1], &d1, rows, Some(&mut d0));
        for ((g, &x), &y) in d0.iter_mut().zip(&trace.pre[0]).zip(&trace.inputs[1]) {
            *g *= HIDDEN_ACT.derivative(x, y);
        }
        self.layers[0].backward(block, &trace.inputs[0], &d0, rows, None);
    }
}

/// Prediction-error novelty signal: a trained predictor chases a frozen,
/// randomly initialised target embedding.
#[derive(Clone, Debug)]
pub struct IrdNet {
    pub predictor: ParamBlock,
    pub target: ParamBlock,
    pred_net: Mlp,
    target_net: Mlp,
    obs_dim: usize,
}

impl IrdNet {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, rng: &mut R) -> Self {
        let mut predictor = ParamBlock::new();
        let pred_net = Mlp::new(&mut predictor, obs_dim, rng);
        let mut target = ParamBlock::new();
        let target_net = Mlp::new(&mut target, obs_dim, rng);
        Self {
            predictor,
            target,
            pred_net,
            target_net,
            obs_dim,
        }
    }

    pub fn from_blocks(predictor: ParamBlock, target: ParamBlock) -> Result<Self> {
        predictor.check_same_layout(&target)?;
        let pred_net = Mlp::bind(&predictor)?;
        let target_net = Mlp::bind(&target)?;
        let obs_dim = pred_net.layers[0].input;
        Ok(Self {
            predictor,
            target,
            pred_net,
            target_net,
            obs_dim,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// Per-row squared distance between predictor and target embeddings.
    pub fn squared_errors(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let p = self.pred_net.forward(&self.predictor, x, rows).out;
        let g = self.target_net.forward(&self.target, x, rows).out;
        p.chunks(EMBED_DIM)
            .zip(g.chunks(EMBED_DIM))
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum())
            .collect()
    }

    /// Unnormalised intrinsic reward: L2 distance of the embeddings.
    pub fn raw_error(&self, x: &[f64]) -> f64 {
        self.squared_errors(x, 1)[0].sqrt()
    }

    /// Mean squared embedding distance over `rows` inputs.
    pub fn loss(&self, x: &[f64], rows: usize) -> Result<f64> {
        if rows == 0 {
            return contract_err("prediction loss over an empty batch");
        }
        Ok(self.squared_errors(x, rows).iter().sum::<f64>() / rows as f64)
    }

    /// As [`IrdNet::loss`], accumulating `scale ×` the gradient into the
    /// predictor. The target never receives gradient.
    pub fn loss_and_grad(&mut self, x: &[f64], rows: usize, scale: f64) -> Result<f64> {
        if rows == 0 {
            return contract_err("prediction loss over an empty batch");
        }
        let trace = self.pred_net.forward(&self.predictor, x, rows);
        let g = self.target_net.forward(&self.target, x, rows).out;
        let k = 2.0 * scale / rows as f64;
        let mut loss = 0.0;
        let dout: Vec<f64> = trace
            .out
            .iter()
            .zip(&g)
            .map(|(p, t)| {
                let d = p - t;
                loss += d * d;
                k * d
            })
            .collect();
        self.pred_net.backward(&mut self.predictor, &trace, &dout, rows);
        Ok(loss / rows as f64)
    }

    pub fn export_to(&self, prefix: &str, ckpt: &mut Checkpoint) {
        self.predictor.export_to(&format!("{prefix}/predictor"), ckpt);
        self.target.export_to(&format!("{prefix}/target"), ckpt);
    }

    pub fn import_from(&mut self, prefix: &str, ckpt: &Checkpoint) -> Result<()> {
        self.predictor.import_from(&format!("{prefix}/predictor"), ckpt)?;
        self.target.import_from(&format!("{prefix}/target"), ckpt)
    }
}

/// Normalises with `obs_norm` and clips to `±OBS_CLIP`, appending to `out`.
pub fn prepare_obs(obs_norm: &RunningGaussian, obs: &[f64], out: &mut Vec<f64>) {
    obs_norm.normalize_clipped(obs, OBS_CLIP, out);
}

/// Intrinsic reward for one next-observation: `(raw, normalised)`.
pub fn intrinsic_reward(
    net: &IrdNet,
    obs_norm: &RunningGaussian,
    rw_norm: &RunningGaussian,
    next_obs: &[f64],
) -> (f64, f64) {
    let mut x = Vec::with_capacity(next_obs.len());
    prepare_obs(obs_norm, next_obs, &mut x);
    let raw = net.raw_error(&x);
    (raw, rw_norm.normalize_scalar(raw))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Adam, Objective, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn copy_target(net: &mut IrdNet) {
        let target = net.target.clone();
        net.predictor.copy_values_from(&target).unwrap();
    }

    #[test]
    fn identical_networks_give_zero_reward_and_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = IrdNet::new(7, &mut rng);
        copy_target(&mut net);
        let x = Tensor::uniform(&[4 * 7], 3.0, &mut rng).into_vec();
        for row in x.chunks(7) {
            assert_eq!(net.raw_error(row), 0.0);
        }
        assert_eq!(net.loss(&x, 4).unwrap(), 0.0);
    }

    #[test]
    fn empty_batch_is_a_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = IrdNet::new(3, &mut rng);
        assert!(matches!(net.loss(&[], 0), Err(Error::Contract(_))));
        assert!(matches!(net.loss_and_grad(&[], 0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn reward_normalisation_fixture() {
        let rw = RunningGaussian::from_parts(5, vec![2.0], vec![16.0]).unwrap();
        assert_eq!(rw.normalize_scalar(4.0), 1.0);
    }

    #[test]
    fn observations_are_clipped_after_normalisation() {
        let norm = RunningGaussian::from_parts(3, vec![0.0, 0.0], vec![2.0, 2.0]).unwrap();
        let mut out = Vec::new();
        prepare_obs(&norm, &[100.0, -0.5], &mut out);
        assert_eq!(out, vec![5.0, -0.5]);
    }

    #[test]
    fn one_adam_step_decreases_loss_and_leaves_target_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = IrdNet::new(6, &mut rng);
        let target_before = net.target.clone();
        let x = Tensor::uniform(&[16 * 6], 2.0, &mut rng).into_vec();
        let adam = Adam::new(5e-4);
        let before = net.loss_and_grad(&x, 16, 1.0).unwrap();
        adam.step(&mut net.predictor).unwrap();
        let after = net.loss(&x, 16).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert!(net.target.values_equal(&target_before));
    }

    #[test]
    fn training_on_a_set_makes_it_less_novel_than_held_out_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = IrdNet::new(4, &mut rng);
        let target_before = net.target.clone();
        // A lives in the positive orthant, B in the negative one.
        let a: Vec<f64> = (0..64 * 4).map(|_| rng.gen_range(0.5..2.0)).collect();
        let b: Vec<f64> = (0..64 * 4).map(|_| rng.gen_range(-2.0..-0.5)).collect();
        let adam = Adam::new(5e-3);
        for _ in 0..400 {
            net.predictor.zero_grad();
            net.loss_and_grad(&a, 64, 1.0).unwrap();
            adam.step(&mut net.predictor).unwrap();
        }
        let mean = |x: &[f64]| x.chunks(4).map(|r| net.raw_error(r)).sum::<f64>() / 64.0;
        assert!(mean(&a) < mean(&b), "A {} vs B {}", mean(&a), mean(&b));
        assert!(net.target.values_equal(&target_before));
    }

    struct Loss {
        net: IrdNet,
        x: Vec<f64>,
    }

    impl Objective for Loss {
        fn blocks(&mut self) -> Vec<&mut ParamBlock> {
            vec![&mut self.net.predictor]
        }
        fn value(&mut self) -> f64 {
            self.net.loss(&self.x, 3).unwrap()
        }
        fn value_and_grad(&mut self) -> f64 {
            self.net.predictor.zero_grad();
            self.net.loss_and_grad(&self.x, 3, 1.0).unwrap()
        }
    }

    #[test]
    fn predictor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = IrdNet::new(5, &mut rng);
        let x = Tensor::uniform(&[15], 1.5, &mut rng).into_vec();
        let mut obj = Loss { net, x };
        let err = grad_check(&mut obj, 1e-4);
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn loss_is_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let net = IrdNet::new(3, &mut rng);
            let x = Tensor::uniform(&[30], 10.0, &mut rng).into_vec();
            assert!(net.loss(&x, 10).unwrap() >= 0.0);
        }
    }

    #[test]
    fn checkpoint_round_trip_rebinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = IrdNet::new(3, &mut rng);
        let mut c = Checkpoint::new(1);
        net.export_to("ird", &mut c);
        let mut other = IrdNet::new(3, &mut rng);
        other.import_from("ird", &c).unwrap();
        assert!(other.predictor.values_equal(&net.predictor));
        assert!(other.target.values_equal(&net.target));
    }
}
