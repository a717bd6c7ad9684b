//! Weighted isotonic regression.
//!
//! [`isotonic_fit`] solves
//!
//! ```text
//! min  sum_i w_i (f(x_i) - y_i)^2   over non-decreasing f
//! ```
//!
//! with the pool-adjacent-violators algorithm. The result is a
//! [`StepFunction`] whose blocks are the pooled groups of inputs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Piecewise constant: the level of the block starting at or before `x`.
    Step,
    /// Linear between block centers, clamped outside the first and last center.
    #[default]
    LinearInX,
}

/// One pooled block of the isotonic solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Block {
    /// Smallest input x pooled into this block.
    pub x_start: f64,
    /// Largest input x pooled into this block.
    pub x_end: f64,
    /// Weighted mean of the pooled x values.
    pub center: f64,
    pub level: f64,
    /// Total weight of the pooled inputs.
    pub weight: f64,
}

/// Non-decreasing piecewise function produced by [`isotonic_fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    blocks: Vec<Block>,
    pub interpolation: Interpolation,
}

impl StepFunction {
    /// Builds a step function from explicit blocks. Blocks must have
    /// strictly increasing `x_start` and non-decreasing levels.
    pub fn from_blocks(blocks: Vec<Block>, interpolation: Interpolation) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::InvalidArgument("step function needs at least one block".into()));
        }
        for (i, pair) in blocks.windows(2).enumerate() {
            if !(pair[1].x_start > pair[0].x_start) {
                return Err(Error::Unsorted(i + 1));
            }
            if pair[1].level < pair[0].level {
                return Err(Error::InvalidArgument(format!(
                    "block levels decrease at index {}",
                    i + 1
                )));
            }
        }
        Ok(Self { blocks, interpolation })
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// `(x_start, level)` pairs, one per block.
    pub fn breakpoints(&self) -> Vec<(f64, f64)> {
        self.blocks.iter().map(|b| (b.x_start, b.level)).collect()
    }

    pub fn with_interpolation(mut self, interpolation: Interpolation) -> Self {
        self.interpolation = interpolation;
        self
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.blocks[0].x_start, self.blocks[self.blocks.len() - 1].x_end)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        match self.interpolation {
            Interpolation::Step => self.evaluate_step(x),
            Interpolation::LinearInX => self.evaluate_linear(x),
        }
    }

    fn evaluate_step(&self, x: f64) -> f64 {
        // index of the first block whose start is > x
        let idx = self.blocks.partition_point(|b| b.x_start <= x);
        if idx == 0 {
            self.blocks[0].level
        } else {
            self.blocks[idx - 1].level
        }
    }

    fn evaluate_linear(&self, x: f64) -> f64 {
        let first = &self.blocks[0];
        let last = &self.blocks[self.blocks.len() - 1];
        if x <= first.center {
            return first.level;
        }
        if x >= last.center {
            return last.level;
        }
        let idx = self.blocks.partition_point(|b| b.center <= x);
        let lo = &self.blocks[idx - 1];
        let hi = &self.blocks[idx];
        let t = (x - lo.center) / (hi.center - lo.center);
        lo.level + t * (hi.level - lo.level)
    }
}

/// Weighted least-squares non-decreasing fit of `ys` against sorted `xs`.
///
/// Inputs with equal x are pooled by weighted mean before the main pass,
/// so the solution does not depend on the order of tied points.
pub fn isotonic_fit(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<StepFunction> {
    validate(xs, ys, weights)?;
    let blocks = pava_blocks(xs, ys, weights);
    Ok(StepFunction {
        blocks,
        interpolation: Interpolation::default(),
    })
}

/// Fitted values of the isotonic regression, one per input.
///
/// Same solution as [`isotonic_fit`], returned per point rather than as
/// a function; cheaper when only the residuals are needed.
pub fn isotonic_values(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
    validate(xs, ys, weights)?;
    let blocks = pava_blocks(xs, ys, weights);
    let mut out = Vec::with_capacity(xs.len());
    let mut b = 0;
    for &x in xs {
        while x > blocks[b].x_end {
            b += 1;
        }
        out.push(blocks[b].level);
    }
    Ok(out)
}

/// Weighted squared error of the isotonic fit, `sum w_i (fit_i - y_i)^2`.
pub fn isotonic_loss(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<f64> {
    let fitted = isotonic_values(xs, ys, weights)?;
    Ok(fitted
        .iter()
        .zip(ys)
        .zip(weights)
        .map(|((f, y), w)| w * (f - y) * (f - y))
        .sum())
}

fn validate(xs: &[f64], ys: &[f64], weights: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::InvalidArgument(
            "isotonic regression needs at least one point".into(),
        ));
    }
    if xs.len() != ys.len() || xs.len() != weights.len() {
        return Err(Error::LengthMismatch(format!(
            "xs {}, ys {}, weights {}",
            xs.len(),
            ys.len(),
            weights.len()
        )));
    }
    for i in 1..xs.len() {
        if !(xs[i] >= xs[i - 1]) {
            return Err(Error::Unsorted(i));
        }
    }
    for (i, w) in weights.iter().enumerate() {
        if !(*w > 0.0 && w.is_finite()) {
            return Err(Error::NonPositiveWeight(i));
        }
    }
    Ok(())
}

#[derive(Clone, Copy)]
struct Pool {
    x_start: f64,
    x_end: f64,
    wx: f64,
    wy: f64,
    w: f64,
}

impl Pool {
    fn level(&self) -> f64 {
        self.wy / self.w
    }

    fn merge(&mut self, other: &Pool) {
        self.x_end = other.x_end;
        self.wx += other.wx;
        self.wy += other.wy;
        self.w += other.w;
    }
}

fn pava_blocks(xs: &[f64], ys: &[f64], weights: &[f64]) -> Vec<Block> {
    let mut stack: Vec<Pool> = Vec::with_capacity(xs.len());
    let mut i = 0;
    while i < xs.len() {
        // pre-pool tied x values
        let mut pool = Pool {
            x_start: xs[i],
            x_end: xs[i],
            wx: weights[i] * xs[i],
            wy: weights[i] * ys[i],
            w: weights[i],
        };
        let mut j = i + 1;
        while j < xs.len() && xs[j] == xs[i] {
            pool.wx += weights[j] * xs[j];
            pool.wy += weights[j] * ys[j];
            pool.w += weights[j];
            j += 1;
        }
        i = j;

        while let Some(top) = stack.last() {
            if top.level() >= pool.level() {
                let mut merged = stack.pop().expect("non-empty");
                merged.merge(&pool);
                pool = merged;
            } else {
                break;
            }
        }
        stack.push(pool);
    }

    stack
        .into_iter()
        .map(|p| Block {
            x_start: p.x_start,
            x_end: p.x_end,
            center: p.wx / p.w,
            level: p.level(),
            weight: p.w,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn levels(f: &StepFunction) -> Vec<f64> {
        f.blocks().iter().map(|b| b.level).collect()
    }

    /// Exhaustive oracle: the isotonic solution is a partition of the
    /// points into consecutive groups, each at its weighted mean. Among
    /// partitions whose group means are non-decreasing, pick the lowest loss.
    fn brute_force_loss(ys: &[f64], ws: &[f64]) -> f64 {
        let n = ys.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << (n - 1)) {
            let mut loss = 0.0;
            let mut prev = f64::NEG_INFINITY;
            let mut ok = true;
            let mut start = 0;
            for end in 0..n {
                let cut = end == n - 1 || mask & (1 << end) != 0;
                if !cut {
                    continue;
                }
                let w: f64 = ws[start..=end].iter().sum();
                let m: f64 = ys[start..=end]
                    .iter()
                    .zip(&ws[start..=end])
                    .map(|(y, w)| y * w)
                    .sum::<f64>()
                    / w;
                if m < prev - 1e-12 {
                    ok = false;
                    break;
                }
                prev = m;
                loss += ys[start..=end]
                    .iter()
                    .zip(&ws[start..=end])
                    .map(|(y, w)| w * (y - m) * (y - m))
                    .sum::<f64>();
                start = end + 1;
            }
            if ok && loss < best {
                best = loss;
            }
        }
        best
    }

    /// Grid oracle for the three-point example: search every
    /// non-decreasing vector on a 0.01 grid over [0, 4].
    fn grid_projection(ys: &[f64; 3]) -> [f64; 3] {
        let grid: Vec<f64> = (0..=400).map(|k| k as f64 * 0.01).collect();
        let mut best = (f64::INFINITY, [0.0; 3]);
        for (a_i, &a) in grid.iter().enumerate() {
            for (b_i, &b) in grid.iter().enumerate().skip(a_i) {
                for &c in grid.iter().skip(b_i) {
                    let loss = (a - ys[0]).powi(2) + (b - ys[1]).powi(2) + (c - ys[2]).powi(2);
                    if loss < best.0 {
                        best = (loss, [a, b, c]);
                    }
                }
            }
        }
        best.1
    }

    #[test]
    fn three_point_violation_pools_to_mean() {
        let oracle = grid_projection(&[3.0, 1.0, 2.0]);
        for v in oracle {
            assert!((v - 2.0).abs() < 1e-9);
        }
        let f = isotonic_fit(&[0.0, 1.0, 2.0], &[3.0, 1.0, 2.0], &[1.0; 3]).unwrap();
        let fitted = isotonic_values(&[0.0, 1.0, 2.0], &[3.0, 1.0, 2.0], &[1.0; 3]).unwrap();
        assert_eq!(levels(&f), vec![2.0]);
        assert_eq!(fitted, vec![2.0, 2.0, 2.0]);
    }

    #[test]
    fn monotone_input_is_returned_unchanged() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let ys = [0.5, 0.5, 1.0, 7.0];
        let fitted = isotonic_values(&xs, &ys, &[1.0; 4]).unwrap();
        assert_eq!(fitted, ys.to_vec());
        assert_eq!(isotonic_loss(&xs, &ys, &[1.0; 4]).unwrap(), 0.0);
    }

    #[test]
    fn weighted_pool_uses_weighted_mean() {
        let f = isotonic_fit(&[0.0, 1.0], &[3.0, 1.0], &[1.0, 3.0]).unwrap();
        assert_eq!(levels(&f), vec![1.5]);
    }

    #[test]
    fn tied_x_pooled_independent_of_order() {
        let a = isotonic_values(&[0.0, 1.0, 1.0, 2.0], &[0.0, 5.0, 1.0, 4.0], &[1.0, 1.0, 3.0, 1.0]).unwrap();
        let b = isotonic_values(&[0.0, 1.0, 1.0, 2.0], &[0.0, 1.0, 5.0, 4.0], &[1.0, 3.0, 1.0, 1.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[1], a[2]);
        assert_eq!(a[1], 2.0);
    }

    #[test]
    fn rejects_unsorted_and_bad_weights() {
        assert!(matches!(
            isotonic_fit(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]),
            Err(Error::Unsorted(1))
        ));
        assert!(matches!(
            isotonic_fit(&[0.0, 1.0], &[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::NonPositiveWeight(1))
        ));
        assert!(isotonic_fit(&[], &[], &[]).is_err());
    }

    #[test]
    fn evaluate_conventions() {
        let f = StepFunction::from_blocks(
            vec![
                Block {
                    x_start: 0.0,
                    x_end: 1.0,
                    center: 0.5,
                    level: 0.0,
                    weight: 1.0,
                },
                Block {
                    x_start: 2.0,
                    x_end: 3.0,
                    center: 2.5,
                    level: 2.0,
                    weight: 1.0,
                },
            ],
            Interpolation::Step,
        )
        .unwrap();
        assert_eq!(f.evaluate(0.0), 0.0);
        assert_eq!(f.evaluate(2.0), 2.0);
        assert_eq!(f.evaluate(-10.0), 0.0);
        assert_eq!(f.evaluate(1.5), 0.0);
        assert_eq!(f.evaluate(99.0), 2.0);

        let lin = f.with_interpolation(Interpolation::LinearInX);
        assert_eq!(lin.evaluate(1.5), 1.0);
        assert_eq!(lin.evaluate(0.5), 0.0);
        assert_eq!(lin.evaluate(-3.0), 0.0);
        assert_eq!(lin.evaluate(10.0), 2.0);
    }

    #[test]
    fn from_blocks_rejects_decreasing_levels() {
        let r = StepFunction::from_blocks(
            vec![
                Block {
                    x_start: 0.0,
                    x_end: 0.0,
                    center: 0.0,
                    level: 1.0,
                    weight: 1.0,
                },
                Block {
                    x_start: 1.0,
                    x_end: 1.0,
                    center: 1.0,
                    level: 0.0,
                    weight: 1.0,
                },
            ],
            Interpolation::Step,
        );
        assert!(r.is_err());
    }

    fn instance(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (1..=max_len).prop_flat_map(|n| {
            (
                prop::collection::vec(0i32..6, n),
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(0.1f64..5.0, n),
            )
                .prop_map(|(mut xs, ys, ws)| {
                    xs.sort();
                    (xs.into_iter().map(f64::from).collect(), ys, ws)
                })
        })
    }

    proptest! {
        #[test]
        fn levels_non_decreasing((xs, ys, ws) in instance(40)) {
            let fitted = isotonic_values(&xs, &ys, &ws).unwrap();
            for pair in fitted.windows(2) {
                prop_assert!(pair[1] >= pair[0]);
            }
        }

        #[test]
        fn weighted_mean_preserved((xs, ys, ws) in instance(40)) {
            let fitted = isotonic_values(&xs, &ys, &ws).unwrap();
            let lhs: f64 = fitted.iter().zip(&ws).map(|(f, w)| f * w).sum();
            let rhs: f64 = ys.iter().zip(&ws).map(|(y, w)| y * w).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn refit_is_idempotent((xs, ys, ws) in instance(40)) {
            let once = isotonic_values(&xs, &ys, &ws).unwrap();
            let twice = isotonic_values(&xs, &once, &ws).unwrap();
            for (a, b) in once.iter().zip(&twice) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
            }
        }

        #[test]
        fn matches_brute_force((_, ys, ws) in instance(8)) {
            let xs: Vec<f64> = (0..ys.len()).map(|i| i as f64).collect();
            let pava = isotonic_loss(&xs, &ys, &ws).unwrap();
            let oracle = brute_force_loss(&ys, &ws);
            prop_assert!((pava - oracle).abs() <= 1e-9);
        }
    }
}
