//! Binary-indexed tree over per-point rates, used for O(log n) victim
//! selection once the population outgrows a linear scan.

#[derive(Clone, Debug)]
pub struct Fenwick {
    tree: Vec<f64>,
    len: usize,
}

impl Fenwick {
    pub fn from_values(values: &[f64]) -> Self {
        let len = values.len();
        let mut tree = vec![0.0; len + 1];
        for (i, &v) in values.iter().enumerate() {
            let mut idx = i + 1;
            while idx <= len {
                tree[idx] += v;
                idx += idx & idx.wrapping_neg();
            }
        }
        Fenwick { tree, len }
    }

    pub fn capacity(&self) -> usize {
        self.len
    }

    pub fn add(&mut self, i: usize, delta: f64) {
        let mut idx = i + 1;
        while idx <= self.len {
            self.tree[idx] += delta;
            idx += idx & idx.wrapping_neg();
        }
    }

    pub fn prefix_sum(&self, mut n: usize) -> f64 {
        let mut acc = 0.0;
        while n > 0 {
            acc += self.tree[n];
            n -= n & n.wrapping_neg();
        }
        acc
    }

    pub fn total(&self) -> f64 {
        self.prefix_sum(self.len)
    }

    /// Smallest index with prefix sum exceeding `target`, clamped to the
    /// active range. Entries beyond the active points must be zero.
    pub fn select(&self, target: f64, active: usize) -> usize {
        let mut idx = 0usize;
        let mut rest = target;
        let mut bit = self.len.next_power_of_two();
        if bit > self.len {
            bit /= 2;
        }
        while bit > 0 {
            let next = idx + bit;
            if next <= self.len && self.tree[next] < rest {
                rest -= self.tree[next];
                idx = next;
            }
            bit /= 2;
        }
        idx.min(active.saturating_sub(1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_matches_linear_scan() {
        let values = [0.5, 0.0, 1.25, 0.25, 2.0, 0.0, 0.125];
        let f = Fenwick::from_values(&values);
        assert!((f.total() - 4.125).abs() < 1e-12);
        for i in 0..200 {
            let target = 4.125 * i as f64 / 200.0;
            let mut acc = 0.0;
            let mut expect = values.len() - 1;
            for (j, &v) in values.iter().enumerate() {
                acc += v;
                if acc > target {
                    expect = j;
                    break;
                }
            }
            assert_eq!(f.select(target, values.len()), expect, "target {target}");
        }
    }

    #[test]
    fn add_updates_prefixes() {
        let mut f = Fenwick::from_values(&[1.0, 1.0, 1.0, 1.0]);
        f.add(2, 5.0);
        assert!((f.prefix_sum(3) - 8.0).abs() < 1e-12);
        assert!((f.total() - 9.0).abs() < 1e-12);
    }
}
