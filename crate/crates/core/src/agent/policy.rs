use rand::Rng;

use crate::error::{config_err, contract_err, Result};

/// ε-greedy choice restricted to available actions. Ties in the greedy
/// branch go to the lowest index.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], avail: &[bool], epsilon: f64, rng: &mut R) -> Result<usize> {
    if q.len() != avail.len() {
        return config_err(format!("{} Q-values but {} availability flags", q.len(), avail.len()));
    }
    let n_avail = avail.iter().filter(|&&a| a).count();
    if n_avail == 0 {
        return contract_err("no available action");
    }
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        let k = rng.gen_range(0..n_avail);
        return Ok(avail.iter().enumerate().filter(|(_, &a)| a).nth(k).unwrap().0);
    }
    Ok(greedy(q, avail).unwrap())
}

/// Argmax of `q` over available actions; `None` if nothing is available.
pub fn greedy(q: &[f64], avail: &[bool]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, (&v, &ok)) in q.iter().zip(avail).enumerate() {
        if ok && best.map_or(true, |b| v > q[b]) {
            best = Some(i);
        }
    }
    best
}

/// Linear anneal from `start` to `finish` over `anneal_steps`, then constant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub finish: f64,
    pub anneal_steps: u64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            finish: 0.05,
            anneal_steps: 50_000,
        }
    }
}

impl EpsilonSchedule {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("start", self.start), ("finish", self.finish)] {
            if !(0.0..=1.0).contains(&v) {
                return config_err(format!("schedule.epsilon_{name} = {v} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn at(&self, env_steps: u64) -> f64 {
        if self.anneal_steps == 0 || env_steps >= self.anneal_steps {
            return self.finish;
        }
        let frac = env_steps as f64 / self.anneal_steps as f64;
        self.start + (self.finish - self.start) * frac
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assume, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_picks_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[1.0, 5.0, 2.0], &[true; 3], 0.0, &mut rng).unwrap(), 1);
    }

    #[test]
    fn single_available_action_is_forced() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for eps in [0.0, 0.5, 1.0] {
            for _ in 0..50 {
                let a = select_action(&[9.0, 8.0, -3.0], &[false, false, true], eps, &mut rng).unwrap();
                assert_eq!(a, 2);
            }
        }
    }

    #[test]
    fn empty_mask_is_a_contract_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = select_action(&[1.0, 2.0], &[false, false], 0.1, &mut rng).unwrap_err();
        assert!(matches!(err, crate::Error::Contract(_)));
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(greedy(&[3.0, 3.0, 1.0], &[true; 3]), Some(0));
        assert_eq!(greedy(&[3.0, 3.0, 1.0], &[false, true, true]), Some(1));
    }

    #[test]
    fn uniform_exploration_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0usize; 3];
        let draws = 30_000;
        for _ in 0..draws {
            counts[select_action(&[0.0, 10.0, 0.0], &[true; 3], 1.0, &mut rng).unwrap()] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((0.323..=0.343).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        let s = EpsilonSchedule::default();
        assert_eq!(s.at(0), 1.0);
        assert!((s.at(25_000) - 0.525).abs() < 1e-12);
        assert_eq!(s.at(50_000), 0.05);
        assert_eq!(s.at(1_000_000), 0.05);
    }

    proptest! {
        #[test]
        fn masked_actions_are_never_returned(
            mask in proptest::collection::vec(any::<bool>(), 1..8),
            q_seed in any::<u64>(),
            eps in 0.0f64..=1.0,
        ) {
            prop_assume!(mask.iter().any(|&m| m));
            let mut rng = ChaCha8Rng::seed_from_u64(q_seed);
            let q: Vec<f64> = (0..mask.len()).map(|_| rng.gen_range(-5.0..5.0)).collect();
            for _ in 0..20 {
                let a = select_action(&q, &mask, eps, &mut rng).unwrap();
                prop_assert!(mask[a]);
            }
        }
    }
}
