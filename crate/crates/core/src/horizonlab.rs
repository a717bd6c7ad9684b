//! Toy policy-gradient simulator for the effect of horizon length on
//! gradient variance, plus batch-size and learning-rate schedule utilities.
//!
//! The environment has independent timesteps: each step draws a context
//! from a fixed distribution, the policy picks an action, and the reward is
//! the table entry plus Gaussian noise. With a discount `gamma = 1 - 2/(h+1)`
//! and a baseline that has absorbed the mean of the discounted future, the
//! advantage at step `t` is the immediate advantage plus the noise term
//! `gamma * V_hat(t+1) - E[..]`, whose variance is `(h + 1/h - 2) / 4` times
//! the per-step reward variance. The gradient covariance trace is therefore
//! affine in `h + 1/h - 2`.

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub fn gamma_of_h(h: f64) -> Result<f64> {
    if !(h >= 1.0) || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("horizon must be >= 1, got {h}")));
    }
    Ok(1.0 - 2.0 / (h + 1.0))
}

/// `h + 1/h - 2`, the horizon term of the gradient variance.
pub fn horizon_term(h: f64) -> f64 {
    h + 1.0 / h - 2.0
}

/// Discounted returns with `lambda = 1` (truncated at the end of the
/// sequence) and advantages against `values`.
pub fn gae_lambda1(rewards: &[f64], values: &[f64], gamma: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("empty reward sequence".into()));
    }
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch(format!(
            "{} rewards vs {} values",
            rewards.len(),
            values.len()
        )));
    }
    let mut targets = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        targets[t] = acc;
    }
    let advantages = targets.iter().zip(values).map(|(v, b)| v - b).collect();
    Ok((targets, advantages))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseVariance {
    pub mc_estimate: f64,
    pub analytic: f64,
}

/// Monte-Carlo variance of `gamma * V_hat(t+1)` over i.i.d. Gaussian rewards
/// with variance `reward_var`, next to the closed form.
pub fn noise_variance(h: f64, reward_var: f64, n_samples: usize, seed: u64) -> Result<NoiseVariance> {
    let gamma = gamma_of_h(h)?;
    if n_samples < 10_000 {
        return Err(Error::InvalidArgument(format!(
            "need at least 10000 samples, got {n_samples}"
        )));
    }
    if !(reward_var >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "reward variance must be >= 0, got {reward_var}"
        )));
    }
    let analytic = 0.25 * horizon_term(h) * reward_var;
    if gamma == 0.0 {
        return Ok(NoiseVariance {
            mc_estimate: 0.0,
            analytic,
        });
    }
    // truncate once gamma^(2k) is below 1e-12
    let terms = ((1e-12f64).ln() / (2.0 * gamma.ln())).ceil() as usize + 1;
    let sd = reward_var.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for _ in 0..n_samples {
        let mut v = 0.0;
        let mut g = gamma;
        for _ in 0..terms {
            let z: f64 = rng.sample(StandardNormal);
            v += g * sd * z;
            g *= gamma;
        }
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    Ok(NoiseVariance {
        mc_estimate: (sum_sq - n * mean * mean) / (n - 1.0),
        analytic,
    })
}

/// Contextual environment whose timesteps are independent and identically
/// distributed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndepMDP {
    pub n_contexts: usize,
    pub n_actions: usize,
    /// Row-major `[context][action]` mean rewards.
    pub reward_table: Vec<f64>,
    pub reward_noise_sd: f64,
    pub context_dist: Vec<f64>,
}

impl IndepMDP {
    pub fn new(
        n_contexts: usize,
        n_actions: usize,
        reward_table: Vec<f64>,
        reward_noise_sd: f64,
        context_dist: Vec<f64>,
    ) -> Result<Self> {
        let mdp = Self {
            n_contexts,
            n_actions,
            reward_table,
            reward_noise_sd,
            context_dist,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    /// Uniform contexts and mean rewards drawn uniformly from `[0, 1)`.
    pub fn random(n_contexts: usize, n_actions: usize, reward_noise_sd: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = (0..n_contexts * n_actions).map(|_| rng.gen::<f64>()).collect();
        Self::new(
            n_contexts,
            n_actions,
            table,
            reward_noise_sd,
            vec![1.0 / n_contexts as f64; n_contexts],
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_contexts == 0 || self.n_actions == 0 {
            return Err(Error::InvalidArgument(
                "need at least one context and one action".into(),
            ));
        }
        if self.reward_table.len() != self.n_contexts * self.n_actions {
            return Err(Error::LengthMismatch(format!(
                "reward table has {} entries, expected {}",
                self.reward_table.len(),
                self.n_contexts * self.n_actions
            )));
        }
        if self.reward_table.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidArgument("reward table must be finite".into()));
        }
        if !(self.reward_noise_sd >= 0.0 && self.reward_noise_sd.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "invalid reward noise sd {}",
                self.reward_noise_sd
            )));
        }
        if self.context_dist.len() != self.n_contexts || self.context_dist.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::InvalidArgument(
                "context distribution must have one non-negative entry per context".into(),
            ));
        }
        let total: f64 = self.context_dist.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!("context distribution sums to {total}")));
        }
        Ok(())
    }

    pub fn mean_reward(&self, context: usize, action: usize) -> f64 {
        self.reward_table[context * self.n_actions + action]
    }

    /// Mean and variance of a single-step reward under `policy`.
    pub fn reward_moments(&self, policy: &SoftmaxPolicy) -> (f64, f64) {
        let (mut m1, mut m2) = (0.0, 0.0);
        for s in 0..self.n_contexts {
            let probs = policy.probs(s);
            for (a, p) in probs.iter().enumerate() {
                let w = self.context_dist[s] * p;
                let mu = self.mean_reward(s, a);
                m1 += w * mu;
                m2 += w * mu * mu;
            }
        }
        (m1, m2 - m1 * m1 + self.reward_noise_sd * self.reward_noise_sd)
    }

    /// Probability of choosing a best action, averaged over contexts.
    pub fn accuracy(&self, policy: &SoftmaxPolicy) -> f64 {
        (0..self.n_contexts)
            .map(|s| {
                let row = &self.reward_table[s * self.n_actions..(s + 1) * self.n_actions];
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let probs = policy.probs(s);
                let p: f64 = row
                    .iter()
                    .zip(&probs)
                    .filter(|(r, _)| **r == best)
                    .map(|(_, p)| p)
                    .sum();
                self.context_dist[s] * p
            })
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxPolicy {
    pub n_actions: usize,
    /// Row-major `[context][action]` logits.
    pub theta: Vec<f64>,
    /// Per-context value estimate.
    pub baseline: Vec<f64>,
}

impl SoftmaxPolicy {
    /// Uniform policy with a zero baseline.
    pub fn uniform(mdp: &IndepMDP) -> Self {
        Self {
            n_actions: mdp.n_actions,
            theta: vec![0.0; mdp.n_contexts * mdp.n_actions],
            baseline: vec![0.0; mdp.n_contexts],
        }
    }

    /// Logits drawn from `N(0, scale^2)` and a fitted baseline.
    pub fn random(mdp: &IndepMDP, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let theta = (0..mdp.n_contexts * mdp.n_actions)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut policy = Self {
            n_actions: mdp.n_actions,
            theta,
            baseline: vec![0.0; mdp.n_contexts],
        };
        policy.fit_baseline(mdp);
        policy
    }

    pub fn probs(&self, context: usize) -> Vec<f64> {
        let row = &self.theta[context * self.n_actions..(context + 1) * self.n_actions];
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    /// Immediate-reward value `V0(s) = sum_a pi(a|s) r(s, a)`.
    pub fn immediate_value(&self, mdp: &IndepMDP, context: usize) -> f64 {
        self.probs(context)
            .iter()
            .enumerate()
            .map(|(a, p)| p * mdp.mean_reward(context, a))
            .sum()
    }

    /// Sets the baseline to the immediate-reward value of every context.
    pub fn fit_baseline(&mut self, mdp: &IndepMDP) {
        self.baseline = (0..mdp.n_contexts).map(|s| self.immediate_value(mdp, s)).collect();
    }

    /// Largest gap between the baseline and the immediate-reward value.
    pub fn baseline_residual(&self, mdp: &IndepMDP) -> f64 {
        (0..mdp.n_contexts)
            .map(|s| (self.baseline[s] - self.immediate_value(mdp, s)).abs())
            .fold(0.0, f64::max)
    }

    fn validate(&self, mdp: &IndepMDP) -> Result<()> {
        if self.n_actions != mdp.n_actions
            || self.theta.len() != mdp.n_contexts * mdp.n_actions
            || self.baseline.len() != mdp.n_contexts
        {
            return Err(Error::LengthMismatch(
                "policy shape does not match the environment".into(),
            ));
        }
        if self.theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("policy logits must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonSweep {
    pub horizons: Vec<f64>,
    pub rollout_length: usize,
    pub n_rollouts: usize,
    pub seed: u64,
}

impl Default for HorizonSweep {
    fn default() -> Self {
        Self {
            horizons: vec![1.0, 3.0, 7.0, 15.0, 31.0],
            rollout_length: 62,
            n_rollouts: 10_000,
            seed: 0,
        }
    }
}

impl HorizonSweep {
    pub fn validate(&self) -> Result<()> {
        if self.horizons.is_empty() {
            return Err(Error::InvalidArgument("sweep needs at least one horizon".into()));
        }
        for &h in &self.horizons {
            gamma_of_h(h)?;
        }
        let h_max = self.horizons.iter().copied().fold(1.0, f64::max);
        if (self.rollout_length as f64) < 2.0 * h_max {
            return Err(Error::InvalidArgument(format!(
                "rollout length {} is shorter than twice the largest horizon {h_max}",
                self.rollout_length
            )));
        }
        if self.n_rollouts < 2 {
            return Err(Error::InvalidArgument("need at least 2 rollouts".into()));
        }
        Ok(())
    }
}

/// Largest allowed gap between the baseline and `V0` before a variance
/// measurement is refused.
pub const BASELINE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub h: f64,
    pub gamma: f64,
    pub trace_estimate: f64,
    pub stderr: f64,
    pub n_rollouts: usize,
}

/// One rollout's first-step gradient direction and reward stream.
struct Rollout {
    context: usize,
    /// `grad log pi(a|s)` restricted to the context's row.
    score: Vec<f64>,
    rewards: Vec<f64>,
}

fn sample_rollouts(mdp: &IndepMDP, policy: &SoftmaxPolicy, length: usize, n: usize, seed: u64) -> Result<Vec<Rollout>> {
    let contexts = WeightedIndex::new(&mdp.context_dist)
        .map_err(|e| Error::InvalidArgument(format!("context distribution: {e}")))?;
    let action_dists: Vec<WeightedIndex<f64>> = (0..mdp.n_contexts)
        .map(|s| WeightedIndex::new(policy.probs(s)).expect("softmax probabilities are valid"))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut rewards = Vec::with_capacity(length);
        let mut first = None;
        for t in 0..length {
            let s = contexts.sample(&mut rng);
            let a = action_dists[s].sample(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            rewards.push(mdp.mean_reward(s, a) + mdp.reward_noise_sd * z);
            if t == 0 {
                first = Some((s, a));
            }
        }
        let (s, a) = first.expect("rollout length >= 1");
        let mut score: Vec<f64> = policy.probs(s).iter().map(|p| -p).collect();
        score[a] += 1.0;
        out.push(Rollout {
            context: s,
            score,
            rewards,
        });
    }
    Ok(out)
}

/// Trace of the covariance of the first-step policy-gradient term
/// `grad log pi(a_0|s_0) * A_0` at fixed logits.
///
/// The baseline must match the immediate-reward value; the mean of the
/// discounted future rewards is added to it here. Every horizon draws the
/// same rollouts from `sweep.seed`.
pub fn gradient_covariance_trace(
    mdp: &IndepMDP,
    policy: &SoftmaxPolicy,
    h: f64,
    sweep: &HorizonSweep,
) -> Result<TraceEstimate> {
    mdp.validate()?;
    policy.validate(mdp)?;
    let residual = policy.baseline_residual(mdp);
    if residual > BASELINE_TOLERANCE {
        return Err(Error::UntrainedBaseline {
            residual,
            tolerance: BASELINE_TOLERANCE,
        });
    }
    let gamma = gamma_of_h(h)?;
    let rollouts = sample_rollouts(mdp, policy, sweep.rollout_length, sweep.n_rollouts, sweep.seed)?;
    Ok(trace_from_rollouts(mdp, policy, h, gamma, &rollouts))
}

fn trace_from_rollouts(
    mdp: &IndepMDP,
    policy: &SoftmaxPolicy,
    h: f64,
    gamma: f64,
    rollouts: &[Rollout],
) -> TraceEstimate {
    let (r_mean, _) = mdp.reward_moments(policy);
    let length = rollouts.first().map_or(0, |r| r.rewards.len());
    let future_mean: f64 = (1..length).map(|k| gamma.powi(k as i32) * r_mean).sum();
    let dim = mdp.n_contexts * mdp.n_actions;
    let mut mean_g = vec![0.0; dim];
    let mut sq_norms = Vec::with_capacity(rollouts.len());
    let values = vec![0.0; length];
    for r in rollouts {
        let (targets, _) = gae_lambda1(&r.rewards, &values, gamma).expect("non-empty rollout");
        let advantage = targets[0] - policy.baseline[r.context] - future_mean;
        let offset = r.context * mdp.n_actions;
        let mut sq = 0.0;
        for (a, s) in r.score.iter().enumerate() {
            let g = s * advantage;
            mean_g[offset + a] += g;
            sq += g * g;
        }
        sq_norms.push(sq);
    }
    let n = rollouts.len() as f64;
    let mean_sq = sq_norms.iter().sum::<f64>() / n;
    let mean_norm_sq: f64 = mean_g.iter().map(|g| (g / n) * (g / n)).sum();
    let var_sq = sq_norms.iter().map(|s| (s - mean_sq) * (s - mean_sq)).sum::<f64>() / (n - 1.0);
    TraceEstimate {
        h,
        gamma,
        trace_estimate: (mean_sq - mean_norm_sq) * n / (n - 1.0),
        stderr: (var_sq / n).sqrt(),
        n_rollouts: rollouts.len(),
    }
}

/// Trace estimates for every horizon of the sweep, on shared rollouts.
pub fn run_sweep(mdp: &IndepMDP, policy: &SoftmaxPolicy, sweep: &HorizonSweep) -> Result<Vec<TraceEstimate>> {
    sweep.validate()?;
    mdp.validate()?;
    policy.validate(mdp)?;
    let residual = policy.baseline_residual(mdp);
    if residual > BASELINE_TOLERANCE {
        return Err(Error::UntrainedBaseline {
            residual,
            tolerance: BASELINE_TOLERANCE,
        });
    }
    let rollouts = sample_rollouts(mdp, policy, sweep.rollout_length, sweep.n_rollouts, sweep.seed)?;
    sweep
        .horizons
        .iter()
        .map(|&h| Ok(trace_from_rollouts(mdp, policy, h, gamma_of_h(h)?, &rollouts)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineFit {
    pub intercept: f64,
    pub slope: f64,
    /// Defined as 1 when `y` has zero variance.
    pub r_squared: f64,
}

/// Ordinary least squares `y = intercept + slope x`.
pub fn affine_fit(points: &[(f64, f64)]) -> Result<AffineFit> {
    if points.len() < 3 {
        return Err(Error::TooFewPoints {
            found: points.len(),
            required: 3,
        });
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    if !(sxx > 0.0) {
        return Err(Error::DegenerateFit(
            "affine fit needs at least two distinct x values".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).min(1.0)
    };
    Ok(AffineFit {
        intercept,
        slope,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    /// Timesteps per update.
    pub batch_size: usize,
    pub target_accuracy: f64,
    pub max_updates: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            batch_size: 64,
            target_accuracy: 0.9,
            max_updates: 4000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub h: f64,
    /// `None` if the target was not reached within the update budget.
    pub interactions: Option<u64>,
}

/// Trains a uniform softmax policy with vanilla policy gradient at each
/// horizon and counts the interactions needed to reach the target accuracy.
pub fn sample_efficiency_sweep(
    mdp: &IndepMDP,
    sweep: &HorizonSweep,
    cfg: &TrainingConfig,
) -> Result<Vec<EfficiencyPoint>> {
    sweep.validate()?;
    mdp.validate()?;
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == 0 || !(cfg.target_accuracy > 0.0 && cfg.target_accuracy < 1.0) {
        return Err(Error::InvalidArgument(format!("invalid training config {cfg:?}")));
    }
    let mut out = Vec::new();
    for (i, &h) in sweep.horizons.iter().enumerate() {
        let gamma = gamma_of_h(h)?;
        let mut policy = SoftmaxPolicy::uniform(mdp);
        policy.fit_baseline(mdp);
        let mut reached = None;
        for update in 0..cfg.max_updates {
            if mdp.accuracy(&policy) >= cfg.target_accuracy {
                reached = Some((update * cfg.batch_size) as u64);
                break;
            }
            let seed = sweep.seed ^ ((i as u64) << 32) ^ update as u64;
            let rollouts = sample_rollouts(mdp, &policy, sweep.rollout_length, cfg.batch_size, seed)?;
            let (r_mean, _) = mdp.reward_moments(&policy);
            let future_mean: f64 = (1..sweep.rollout_length).map(|k| gamma.powi(k as i32) * r_mean).sum();
            let values = vec![0.0; sweep.rollout_length];
            let mut grad = vec![0.0; policy.theta.len()];
            for r in &rollouts {
                let (targets, _) = gae_lambda1(&r.rewards, &values, gamma)?;
                let advantage = targets[0] - policy.baseline[r.context] - future_mean;
                let offset = r.context * mdp.n_actions;
                for (a, s) in r.score.iter().enumerate() {
                    grad[offset + a] += s * advantage;
                }
            }
            let scale = cfg.learning_rate / cfg.batch_size as f64;
            for (t, g) in policy.theta.iter_mut().zip(&grad) {
                *t += scale * g;
            }
            policy.fit_baseline(mdp);
        }
        out.push(EfficiencyPoint {
            h,
            interactions: reached,
        });
    }
    Ok(out)
}

/// Batch size after `e` interactions: `max(b_min, e^0.84 / 80)`.
pub fn batch_schedule(e: f64, b_min: f64) -> f64 {
    b_min.max(e.powf(0.84) / 80.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Width,
    Depth,
}

/// Learning-rate multiplier when a network grows by `factor`; `layers` is
/// the number of layers per residual block.
pub fn lr_scale(kind: ScaleKind, factor: f64, layers: u32) -> Result<f64> {
    if !(factor > 0.0) {
        return Err(Error::InvalidArgument(format!("factor must be positive, got {factor}")));
    }
    match kind {
        ScaleKind::Width => Ok(1.0 / factor.sqrt()),
        ScaleKind::Depth => {
            if layers == 0 {
                return Err(Error::InvalidArgument("layers per block must be >= 1".into()));
            }
            Ok(1.0 / factor.powf(1.0 / layers as f64).sqrt())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, prop_assert_eq, proptest};

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma_of_h(1.0).unwrap(), 0.0);
        assert_eq!(gamma_of_h(3.0).unwrap(), 0.5);
        assert!((gamma_of_h(256.0).unwrap() - 0.992218).abs() < 1e-6);
        assert!(gamma_of_h(0.5).is_err());
    }

    #[test]
    fn gae_examples() {
        let (v, a) = gae_lambda1(&[1.0, 2.0], &[0.5, 0.5], 0.0).unwrap();
        assert_eq!(v, [1.0, 2.0]);
        assert_eq!(a, [0.5, 1.5]);
        let (v, _) = gae_lambda1(&[1.0; 4], &[0.0; 4], 1.0).unwrap();
        assert_eq!(v, [4.0, 3.0, 2.0, 1.0]);
        assert!(gae_lambda1(&[], &[], 0.5).is_err());
        assert!(gae_lambda1(&[1.0], &[], 0.5).is_err());
    }

    #[test]
    fn gamma_form_equivalence() {
        for h in [2.0, 10.0, 100.0] {
            let g = gamma_of_h(h).unwrap();
            assert!((g * g / (1.0 - g * g) - 0.25 * horizon_term(h)).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_variance_matches_closed_form() {
        assert_eq!(noise_variance(1.0, 1.0, 10_000, 0).unwrap().mc_estimate, 0.0);
        let nv = noise_variance(3.0, 1.0, 100_000, 1).unwrap();
        assert!((nv.analytic - 1.0 / 3.0).abs() < 1e-15);
        assert!((nv.mc_estimate / nv.analytic - 1.0).abs() < 0.05, "{nv:?}");
        assert!(noise_variance(3.0, 1.0, 100, 1).is_err());
    }

    #[test]
    fn noise_variance_error_shrinks_with_samples() {
        // mean absolute error over repeated seeds at n and 16n; 1/sqrt(n) gives a 4x drop
        let err = |n: usize| -> f64 {
            (0..8)
                .map(|s| {
                    let nv = noise_variance(7.0, 2.0, n, 100 + s).unwrap();
                    (nv.mc_estimate - nv.analytic).abs()
                })
                .sum::<f64>()
                / 8.0
        };
        let (coarse, fine) = (err(10_000), err(160_000));
        assert!(fine < coarse / 2.0, "{coarse} -> {fine}");
    }

    fn toy() -> (IndepMDP, SoftmaxPolicy) {
        let mdp = IndepMDP::random(6, 4, 1.0, 3).unwrap();
        let policy = SoftmaxPolicy::random(&mdp, 0.5, 4);
        (mdp, policy)
    }

    #[test]
    fn untrained_baseline_is_refused() {
        let (mdp, mut policy) = toy();
        policy.baseline[0] += 0.1;
        let sweep = HorizonSweep {
            n_rollouts: 100,
            ..Default::default()
        };
        assert!(matches!(
            gradient_covariance_trace(&mdp, &policy, 3.0, &sweep),
            Err(Error::UntrainedBaseline { .. })
        ));
    }

    #[test]
    fn single_action_has_zero_trace() {
        let mdp = IndepMDP::random(3, 1, 1.0, 0).unwrap();
        let policy = SoftmaxPolicy::random(&mdp, 1.0, 1);
        let sweep = HorizonSweep {
            n_rollouts: 500,
            ..Default::default()
        };
        for r in run_sweep(&mdp, &policy, &sweep).unwrap() {
            assert!(r.trace_estimate.abs() < 1e-20, "{r:?}");
        }
    }

    #[test]
    fn h1_trace_is_immediate_term() {
        // at h = 1 the trace is E|score|^2 (r - V0)^2 - |E g|^2; check against
        // an exact enumeration over contexts and actions
        let (mdp, policy) = toy();
        let sweep = HorizonSweep {
            n_rollouts: 200_000,
            ..Default::default()
        };
        let est = gradient_covariance_trace(&mdp, &policy, 1.0, &sweep).unwrap();
        let mut exact_sq = 0.0;
        let mut mean_g = vec![0.0; mdp.n_contexts * mdp.n_actions];
        for s in 0..mdp.n_contexts {
            let probs = policy.probs(s);
            for a in 0..mdp.n_actions {
                let w = mdp.context_dist[s] * probs[a];
                let adv = mdp.mean_reward(s, a) - policy.baseline[s];
                let norm: f64 = (0..mdp.n_actions)
                    .map(|b| {
                        let sc = if a == b { 1.0 - probs[b] } else { -probs[b] };
                        mean_g[s * mdp.n_actions + b] += w * sc * adv;
                        sc * sc
                    })
                    .sum();
                exact_sq += w * norm * (adv * adv + mdp.reward_noise_sd.powi(2));
            }
        }
        let exact = exact_sq - mean_g.iter().map(|g| g * g).sum::<f64>();
        assert!(
            (est.trace_estimate - exact).abs() < 4.0 * est.stderr,
            "{est:?} vs {exact}"
        );
    }

    #[test]
    fn trace_is_deterministic_and_increasing() {
        let (mdp, policy) = toy();
        let sweep = HorizonSweep {
            n_rollouts: 5_000,
            ..Default::default()
        };
        let a = run_sweep(&mdp, &policy, &sweep).unwrap();
        let b = run_sweep(&mdp, &policy, &sweep).unwrap();
        assert_eq!(a, b);
        for w in a.windows(2) {
            assert!(w[1].trace_estimate + 3.0 * w[1].stderr >= w[0].trace_estimate, "{w:?}");
        }
    }

    #[test]
    fn affine_examples() {
        let f = affine_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]).unwrap();
        assert!((f.intercept - 1.0).abs() < 1e-12 && (f.slope - 2.0).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let c = affine_fit(&[(0.0, 4.0), (1.0, 4.0), (2.0, 4.0)]).unwrap();
        assert_eq!((c.slope, c.r_squared), (0.0, 1.0));
        assert!(matches!(
            affine_fit(&[(0.0, 1.0), (1.0, 2.0)]),
            Err(Error::TooFewPoints { .. })
        ));
        assert!(affine_fit(&[(1.0, 1.0), (1.0, 2.0), (1.0, 3.0)]).is_err());
    }

    #[test]
    fn affine_noisy_line_within_three_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let sigma = 0.5;
        let pts: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let x = i as f64 / 20.0;
                (x, 1.5 + 0.7 * x + sigma * rng.sample::<f64, _>(StandardNormal))
            })
            .collect();
        let f = affine_fit(&pts).unwrap();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let sd_slope = sigma / sxx.sqrt();
        let sd_intercept = sigma * (1.0 / n + mx * mx / sxx).sqrt();
        assert!((f.slope - 0.7).abs() < 3.0 * sd_slope);
        assert!((f.intercept - 1.5).abs() < 3.0 * sd_intercept);
    }

    #[test]
    fn schedule_examples() {
        assert_eq!(batch_schedule(0.0, 256.0), 256.0);
        assert!((batch_schedule(2f64.powi(20), 256.0) - 1426.310).abs() < 1e-3);
        let cross = (256.0f64 * 80.0).powf(1.0 / 0.84);
        assert!((batch_schedule(cross, 256.0) - 256.0).abs() < 1e-9);
        assert_eq!(batch_schedule(cross * 0.99, 256.0), 256.0);
        assert!(batch_schedule(cross * 1.01, 256.0) > 256.0);
        assert_eq!(lr_scale(ScaleKind::Width, 4.0, 1).unwrap(), 0.5);
        assert!((lr_scale(ScaleKind::Depth, 4.0, 2).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(lr_scale(ScaleKind::Width, 1.0, 1).unwrap(), 1.0);
        assert!(lr_scale(ScaleKind::Depth, 4.0, 0).is_err());
    }

    #[test]
    fn sweep_validation() {
        let short = HorizonSweep {
            rollout_length: 10,
            ..Default::default()
        };
        assert!(short.validate().is_err());
        assert!(HorizonSweep::default().validate().is_ok());
    }

    #[test]
    fn training_reaches_target() {
        let mdp = IndepMDP::random(4, 3, 0.5, 11).unwrap();
        let sweep = HorizonSweep {
            horizons: vec![1.0, 7.0],
            rollout_length: 14,
            n_rollouts: 2,
            seed: 5,
        };
        let pts = sample_efficiency_sweep(
            &mdp,
            &sweep,
            &TrainingConfig {
                target_accuracy: 0.8,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(pts.iter().all(|p| p.interactions.is_some()), "{pts:?}");
    }

    proptest! {
        #[test]
        fn gae_recursion(rewards in prop::collection::vec(-5.0f64..5.0, 1..40), h in 1.0f64..50.0) {
            let g = gamma_of_h(h).unwrap();
            let values = vec![0.25; rewards.len()];
            let (v, a) = gae_lambda1(&rewards, &values, g).unwrap();
            for t in 0..rewards.len() - 1 {
                prop_assert!((v[t] - (rewards[t] + g * v[t + 1])).abs() < 1e-12);
            }
            prop_assert_eq!(v[rewards.len() - 1], rewards[rewards.len() - 1]);
            for t in 0..rewards.len() {
                prop_assert!((a[t] - (v[t] - 0.25)).abs() < 1e-15);
            }
        }
    }
}
