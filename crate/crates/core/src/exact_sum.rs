//! Error-free vector accumulation.
//!
//! Each component keeps a list of non-overlapping partial sums (Shewchuk
//! expansions, as in `math.fsum`). Adding values and merging accumulators is
//! exact, and [`ExactAccumulator::round_into`] returns the correctly rounded
//! value of the exact sum. The rounded result therefore does not depend on
//! how the additions were grouped or ordered, which is what lets a
//! node-partitioned reduction reproduce a centralized sum bit for bit.

use smallvec::SmallVec;

type Partials = SmallVec<[f64; 6]>;

#[derive(Debug, Clone, Default)]
struct ExactScalar {
    partials: Partials,
}

impl ExactScalar {
    fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for k in 0..self.partials.len() {
            let mut y = self.partials[k];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    fn round(&self) -> f64 {
        let p = &self.partials;
        let mut n = p.len();
        if n == 0 {
            return 0.0;
        }
        n -= 1;
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        // Half-way case: the remaining partials decide the rounding direction.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            let yr = x - hi;
            if y == yr {
                hi = x;
            }
        }
        hi
    }
}

/// Exact running sum of equal-length vectors.
#[derive(Debug, Clone)]
pub struct ExactAccumulator {
    components: Vec<ExactScalar>,
}

impl ExactAccumulator {
    pub fn new(dim: usize) -> Self {
        Self {
            components: vec![ExactScalar::default(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn reset(&mut self) {
        for c in &mut self.components {
            c.partials.clear();
        }
    }

    /// Adds `v` exactly. Panics if the length differs from `dim()`.
    pub fn add(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.components.len());
        for (c, &x) in self.components.iter_mut().zip(v) {
            c.add(x);
        }
    }

    /// Folds another accumulator into this one without rounding.
    pub fn merge(&mut self, other: &ExactAccumulator) {
        assert_eq!(other.dim(), self.dim());
        for (c, o) in self.components.iter_mut().zip(&other.components) {
            for &p in &o.partials {
                c.add(p);
            }
        }
    }

    pub fn round_into(&self, out: &mut [f64]) {
        assert_eq!(out.len(), self.components.len());
        for (o, c) in out.iter_mut().zip(&self.components) {
            *o = c.round();
        }
    }

    pub fn round(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.round_into(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn exact_sum(xs: &[f64]) -> f64 {
        let mut acc = ExactAccumulator::new(1);
        for &x in xs {
            acc.add(&[x]);
        }
        acc.round()[0]
    }

    #[test]
    fn cancellation_is_exact() {
        assert_eq!(exact_sum(&[1e100, 1.0, -1e100]), 1.0);
        assert_eq!(exact_sum(&[0.1; 10]), 1.0);
        assert_eq!(exact_sum(&[]), 0.0);
    }

    #[test]
    fn half_way_rounding() {
        // 1 + 2^-53 + 2^-106 must round up.
        let xs = [1.0, 2f64.powi(-53), 2f64.powi(-106)];
        assert_eq!(exact_sum(&xs), 1.0 + f64::EPSILON);
    }

    proptest! {
        #[test]
        fn grouping_does_not_change_result(
            xs in prop::collection::vec(-1e6f64..1e6, 1..40),
            split in 0usize..40,
        ) {
            let split = split.min(xs.len());
            let whole = exact_sum(&xs);
            let mut left = ExactAccumulator::new(1);
            let mut right = ExactAccumulator::new(1);
            for &x in &xs[..split] { left.add(&[x]); }
            for &x in xs[split..].iter().rev() { right.add(&[x]); }
            right.merge(&left);
            prop_assert_eq!(right.round()[0].to_bits(), whole.to_bits());
        }
    }
}
