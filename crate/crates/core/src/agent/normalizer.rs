use log::warn;

use crate::error::{Error, Result};
use crate::tensor::{Checkpoint, Tensor};

/// Streaming per-dimension mean/variance (Welford), mergeable across workers.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningGaussian {
    count: u64,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

/// Smallest standard deviation used when normalising.
pub const STD_FLOOR: f64 = 1e-8;

impl RunningGaussian {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn from_parts(count: u64, mean: Vec<f64>, m2: Vec<f64>) -> Result<Self> {
        if mean.len() != m2.len() {
            return Err(Error::Config("normalizer mean/m2 length mismatch".into()));
        }
        if m2.iter().any(|&v| v < 0.0 || !v.is_finite()) || mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("normalizer state must be finite with m2 ≥ 0".into()));
        }
        Ok(Self { count, mean, m2 })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn m2(&self) -> &[f64] {
        &self.m2
    }

    /// Unbiased variance `m2 / max(count − 1, 1)`.
    pub fn variance(&self) -> Vec<f64> {
        let d = (self.count.saturating_sub(1)).max(1) as f64;
        self.m2.iter().map(|m| m / d).collect()
    }

    fn std_at(&self, i: usize) -> f64 {
        // Fewer than two samples carry no spread information: leave the scale alone.
        if self.count < 2 {
            return 1.0;
        }
        let d = (self.count - 1) as f64;
        (self.m2[i] / d).sqrt().max(STD_FLOOR)
    }

    /// Adds one sample. Non-finite samples are rejected and leave the state untouched.
    pub fn update(&mut self, sample: &[f64]) -> Result<()> {
        if sample.len() != self.mean.len() {
            return Err(Error::Config(format!(
                "normalizer expects {} values, got {}",
                self.mean.len(),
                sample.len()
            )));
        }
        if sample.iter().any(|v| !v.is_finite()) {
            warn!("non-finite sample rejected by running normalizer");
            return Err(Error::NonFinite("normalizer sample".into()));
        }
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &x) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(sample) {
            let delta = x - *m;
            *m += delta / n;
            *s += delta * (x - *m);
        }
        Ok(())
    }

    /// Combines another estimator's statistics into this one (parallel Welford).
    pub fn merge(&mut self, other: &RunningGaussian) {
        assert_eq!(self.dim(), other.dim(), "normalizer dimension mismatch");
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = other.clone();
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        for i in 0..self.mean.len() {
            let delta = other.mean[i] - self.mean[i];
            self.mean[i] += delta * nb / n;
            self.m2[i] += other.m2[i] + delta * delta * na * nb / n;
        }
        self.count += other.count;
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| (v - self.mean[i]) / self.std_at(i))
            .collect()
    }

    /// Normalises then clips every component to `[-clip, clip]`.
    pub fn normalize_clipped(&self, x: &[f64], clip: f64, out: &mut Vec<f64>) {
        out.extend(
            x.iter()
                .enumerate()
                .map(|(i, &v)| ((v - self.mean[i]) / self.std_at(i)).clamp(-clip, clip)),
        );
    }

    pub fn normalize_scalar(&self, x: f64) -> f64 {
        (x - self.mean[0]) / self.std_at(0)
    }

    pub fn export_to(&self, prefix: &str, ckpt: &mut Checkpoint) {
        ckpt.insert(format!("{prefix}/count"), Tensor::filled(&[1], self.count as f64));
        ckpt.insert(format!("{prefix}/mean"), Tensor::vector(&self.mean).unwrap());
        ckpt.insert(format!("{prefix}/m2"), Tensor::vector(&self.m2).unwrap());
    }

    pub fn import_from(prefix: &str, ckpt: &Checkpoint) -> Result<Self> {
        let get = |k: &str| {
            ckpt.get(&format!("{prefix}/{k}"))
                .ok_or_else(|| Error::Format(format!("checkpoint is missing {prefix}/{k}")))
        };
        let count = get("count")?.data()[0];
        if count < 0.0 || count.fract() != 0.0 {
            return Err(Error::Format(format!("{prefix}/count is not a count")));
        }
        Self::from_parts(count as u64, get("mean")?.data().to_vec(), get("m2")?.data().to_vec())
            .map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr_free::standard_normal;

    /// Box–Muller so the oracle does not share code with the estimator.
    mod rand_distr_free {
        use rand::Rng;
        pub fn standard_normal<R: Rng>(rng: &mut R) -> f64 {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        }
    }

    #[test]
    fn constant_samples_have_zero_variance() {
        let mut g = RunningGaussian::new(1);
        for _ in 0..3 {
            g.update(&[1.0]).unwrap();
        }
        assert_eq!(g.mean(), &[1.0]);
        assert_eq!(g.variance(), vec![0.0]);
        assert_eq!(g.count(), 3);
    }

    #[test]
    fn two_point_unbiased_variance() {
        let mut g = RunningGaussian::new(1);
        g.update(&[0.0]).unwrap();
        g.update(&[2.0]).unwrap();
        assert_eq!(g.mean(), &[1.0]);
        assert_eq!(g.variance(), vec![2.0]);
    }

    #[test]
    fn non_finite_sample_is_rejected() {
        let mut g = RunningGaussian::new(2);
        g.update(&[1.0, 2.0]).unwrap();
        assert!(g.update(&[f64::NAN, 0.0]).is_err());
        assert!(g.update(&[0.0, f64::INFINITY]).is_err());
        assert_eq!(g.count(), 1);
        assert_eq!(g.mean(), &[1.0, 2.0]);
    }

    #[test]
    fn direct_formula_fixture() {
        // mean 2, variance 4 → (4 − 2)/2 = 1
        let g = RunningGaussian::from_parts(5, vec![2.0], vec![16.0]).unwrap();
        assert_eq!(g.variance(), vec![4.0]);
        assert_eq!(g.normalize_scalar(4.0), 1.0);
    }

    #[test]
    fn standard_normal_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut g = RunningGaussian::new(1);
        for _ in 0..100_000 {
            g.update(&[standard_normal(&mut rng)]).unwrap();
        }
        assert!(g.mean()[0].abs() < 0.02, "mean {}", g.mean()[0]);
        assert!((g.variance()[0] - 1.0).abs() < 0.03, "var {}", g.variance()[0]);
    }

    #[test]
    fn merge_matches_sequential_updates() {
        let data: Vec<f64> = (0..37).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let mut all = RunningGaussian::new(1);
        data.iter().for_each(|&x| all.update(&[x]).unwrap());
        let mut parts: Vec<RunningGaussian> = data
            .chunks(10)
            .map(|c| {
                let mut g = RunningGaussian::new(1);
                c.iter().for_each(|&x| g.update(&[x]).unwrap());
                g
            })
            .collect();
        // ((a ⊕ b) ⊕ c) ⊕ d and a ⊕ (b ⊕ (c ⊕ d)) agree with the sequential pass.
        let mut left = parts[0].clone();
        for p in &parts[1..] {
            left.merge(p);
        }
        let mut right = parts.pop().unwrap();
        while let Some(mut p) = parts.pop() {
            p.merge(&right);
            right = p;
        }
        for g in [&left, &right] {
            assert_eq!(g.count(), all.count());
            assert!((g.mean()[0] - all.mean()[0]).abs() < 1e-12);
            assert!((g.m2()[0] - all.m2()[0]).abs() < 1e-9);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let g = RunningGaussian::from_parts(9, vec![0.5, -1.0], vec![3.0, 0.25]).unwrap();
        let mut c = Checkpoint::new(0);
        g.export_to("norm/obs", &mut c);
        assert_eq!(RunningGaussian::import_from("norm/obs", &c).unwrap(), g);
    }
}
