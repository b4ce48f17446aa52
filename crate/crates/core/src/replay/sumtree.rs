use log::warn;

/// Binary tree of partial sums (and maxima) over a power-of-two leaf array.
#[derive(Clone, Debug)]
pub struct SumTree {
    leaves: usize,
    sum: Vec<f64>,
    max: Vec<f64>,
}

impl SumTree {
    /// A tree with at least `capacity` leaves, all zero.
    pub fn new(capacity: usize) -> Self {
        let leaves = capacity.max(1).next_power_of_two();
        Self {
            leaves,
            sum: vec![0.0; 2 * leaves],
            max: vec![0.0; 2 * leaves],
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    pub fn max_leaf(&self) -> f64 {
        self.max[1]
    }

    pub fn leaf(&self, i: usize) -> f64 {
        self.sum[self.leaves + i]
    }

    /// Sets leaf `i` and refreshes every ancestor from its children.
    pub fn set(&mut self, i: usize, value: f64) {
        assert!(i < self.leaves, "leaf {i} out of range");
        let value = if value.is_finite() && value >= 0.0 {
            value
        } else {
            warn!("invalid leaf value {value} stored as 0");
            0.0
        };
        let mut node = self.leaves + i;
        self.sum[node] = value;
        self.max[node] = value;
        while node > 1 {
            node /= 2;
            let (l, r) = (2 * node, 2 * node + 1);
            self.sum[node] = self.sum[l] + self.sum[r];
            self.max[node] = self.max[l].max(self.max[r]);
        }
    }

    /// Leaf whose cumulative range contains `prefix`. Never returns a
    /// zero-mass leaf while the total is positive.
    pub fn get(&self, prefix: f64) -> usize {
        let total = self.total();
        let mut p = prefix;
        if !(0.0..total).contains(&p) {
            warn!("prefix {prefix} outside [0, {total}); clamped");
            p = p.clamp(0.0, (total * (1.0 - f64::EPSILON)).max(0.0));
        }
        let mut node = 1;
        while node < self.leaves {
            let (l, r) = (2 * node, 2 * node + 1);
            if p < self.sum[l] || self.sum[r] <= 0.0 {
                node = l;
            } else {
                p -= self.sum[l];
                node = r;
            }
        }
        node - self.leaves
    }

    /// Recomputes the root from the leaves; used to check drift.
    pub fn leaf_sum(&self) -> f64 {
        self.sum[self.leaves..].iter().sum()
    }

    #[cfg(test)]
    fn internal_nodes_consistent(&self) -> bool {
        (1..self.leaves).all(|n| self.sum[n] == self.sum[2 * n] + self.sum[2 * n + 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tree_of(values: &[f64]) -> SumTree {
        let mut t = SumTree::new(values.len());
        for (i, &v) in values.iter().enumerate() {
            t.set(i, v);
        }
        t
    }

    #[test]
    fn prefix_descent_fixtures() {
        let t = tree_of(&[1.0, 2.0, 3.0]);
        assert_eq!(t.total(), 6.0);
        assert_eq!(t.get(0.5), 0);
        assert_eq!(t.get(1.5), 1);
        assert_eq!(t.get(5.9), 2);
        assert_eq!(t.leaf_count(), 4);
    }

    #[test]
    fn out_of_range_prefix_is_clamped_to_a_live_leaf() {
        let t = tree_of(&[1.0, 2.0, 3.0]);
        assert_eq!(t.get(6.0), 2);
        assert_eq!(t.get(100.0), 2);
        assert_eq!(t.get(-1.0), 0);
    }

    #[test]
    fn update_moves_root_by_delta() {
        let mut t = tree_of(&[2.0, 1.0]);
        t.set(0, 5.0);
        assert_eq!(t.total(), 6.0);
        let before = t.sum.clone();
        t.set(0, 5.0);
        assert_eq!(t.sum, before);
        assert_eq!(t.max_leaf(), 5.0);
    }

    #[test]
    fn proportional_selection_frequencies() {
        let t = tree_of(&[1.0, 2.0, 3.0, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[t.get(rng.gen::<f64>() * t.total())] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let f = *c as f64 / draws as f64;
            assert!((f - (i + 1) as f64 / 10.0).abs() < 0.02, "leaf {i}: {f}");
        }
    }

    #[test]
    fn many_random_updates_keep_the_root_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut t = SumTree::new(1000);
        for _ in 0..10_000 {
            t.set(rng.gen_range(0..1000), rng.gen_range(0.0..10.0));
        }
        assert!(t.internal_nodes_consistent());
        let rel = (t.total() - t.leaf_sum()).abs() / t.leaf_sum();
        assert!(rel < 1e-9, "relative drift {rel}");
    }

    #[test]
    fn linear_scan_oracle_agrees_with_descent() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let values: Vec<f64> = (0..37).map(|_| rng.gen_range(0.0..3.0)).collect();
        let t = tree_of(&values);
        for _ in 0..2000 {
            let p = rng.gen::<f64>() * t.total();
            let mut acc = 0.0;
            let scan = values.iter().position(|&v| {
                acc += v;
                p < acc
            });
            assert_eq!(Some(t.get(p)), scan);
        }
    }

    proptest! {
        #[test]
        fn internal_sums_hold_after_arbitrary_sets(ops in proptest::collection::vec((0usize..20, 0.0f64..100.0), 1..200)) {
            let mut t = SumTree::new(20);
            for (i, v) in ops {
                t.set(i, v);
            }
            prop_assert!(t.internal_nodes_consistent());
            prop_assert!(t.max_leaf() == (0..20).map(|i| t.leaf(i)).fold(0.0, f64::max));
        }
    }
}
