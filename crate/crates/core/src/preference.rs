//! Preference conditioning: style reward against the frozen path-following
//! policy, the adaptive alpha schedule, and combined-reward mixing.

use crate::tensor::divergence::kl_divergence;
use crate::{PpgtaError, Result};

pub const ALPHA_INIT: f32 = 0.8;
pub const ALPHA_MIN: f32 = 0.5;
pub const ALPHA_MAX: f32 = 0.8;
pub const ALPHA_DOWN_RATE: f32 = 0.05;
pub const ALPHA_UP_RATE: f32 = 0.1;
pub const ALPHA_EPSILON: f32 = 0.1;

#[derive(Debug, Clone, Copy)]
pub struct AlphaParams {
    pub init: f32,
    pub min: f32,
    pub max: f32,
    pub down_rate: f32,
    pub up_rate: f32,
    pub epsilon: f32,
}

impl Default for AlphaParams {
    fn default() -> Self {
        AlphaParams {
            init: ALPHA_INIT,
            min: ALPHA_MIN,
            max: ALPHA_MAX,
            down_rate: ALPHA_DOWN_RATE,
            up_rate: ALPHA_UP_RATE,
            epsilon: ALPHA_EPSILON,
        }
    }
}

/// Adapts alpha from the change in the intrinsic reward across adjacent
/// steps: a drop beyond epsilon lowers alpha (favor novelty), a rise beyond
/// epsilon restores it (favor style).
#[derive(Debug, Clone)]
pub struct AlphaController {
    params: AlphaParams,
    alpha: f32,
    prev_re: Option<f32>,
}

impl Default for AlphaController {
    fn default() -> Self {
        Self::new()
    }
}

impl AlphaController {
    pub fn new() -> Self {
        Self::with(AlphaParams::default())
    }

    pub fn with(params: AlphaParams) -> Self {
        AlphaController { params, alpha: params.init, prev_re: None }
    }

    pub fn alpha(&self) -> f32 {
        self.alpha
    }

    pub fn update(&mut self, re: f32) -> f32 {
        if let Some(prev) = self.prev_re {
            // small slack so thresholds specified in decimal (e.g. a drop of
            // exactly 0.1) behave as under exact arithmetic despite f32
            // rounding of the inputs
            const TOL: f32 = 1e-6;
            let delta = re - prev;
            if delta <= -self.params.epsilon + TOL {
                self.alpha = (self.alpha - self.params.down_rate).max(self.params.min);
            } else if delta >= self.params.epsilon - TOL {
                self.alpha = (self.alpha + self.params.up_rate).min(self.params.max);
            }
        }
        self.prev_re = Some(re);
        self.alpha
    }
}

/// Running per-episode mean action distributions for the exploration and
/// path-following policies.
#[derive(Debug, Clone)]
pub struct StyleContext {
    explore_sum: Vec<f64>,
    pref_sum: Vec<f64>,
    steps: usize,
}

impl StyleContext {
    pub fn new(n_actions: usize) -> Self {
        StyleContext {
            explore_sum: vec![0.0; n_actions],
            pref_sum: vec![0.0; n_actions],
            steps: 0,
        }
    }

    pub fn reset(&mut self) {
        self.explore_sum.iter_mut().for_each(|v| *v = 0.0);
        self.pref_sum.iter_mut().for_each(|v| *v = 0.0);
        self.steps = 0;
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Folds in one step's distributions and returns r^p over steps 1..t.
    pub fn style_reward(&mut self, explore_dist: &[f32], pref_dist: &[f32]) -> Result<f32> {
        if explore_dist.len() != self.explore_sum.len()
            || pref_dist.len() != self.pref_sum.len()
        {
            return Err(PpgtaError::Contract("style: distribution width mismatch".into()));
        }
        for (s, v) in self.explore_sum.iter_mut().zip(explore_dist) {
            *s += *v as f64;
        }
        for (s, v) in self.pref_sum.iter_mut().zip(pref_dist) {
            *s += *v as f64;
        }
        self.steps += 1;
        self.current()
    }

    /// r^p from the accumulators as they stand.
    pub fn current(&self) -> Result<f32> {
        if self.steps == 0 {
            return Err(PpgtaError::Contract("style: no steps accumulated".into()));
        }
        let n = self.steps as f64;
        let p: Vec<f32> = self.explore_sum.iter().map(|s| (s / n) as f32).collect();
        let q: Vec<f32> = self.pref_sum.iter().map(|s| (s / n) as f32).collect();
        Ok(-kl_divergence(&p, &q)?)
    }
}

/// r^c = alpha * r^p + (1 - alpha) * r^e.
pub fn combined_reward(alpha: f32, rp: f32, re: f32) -> f32 {
    alpha * rp + (1.0 - alpha) * re
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_trace_matches_hand_derivation() {
        let mut ctrl = AlphaController::new();
        let re = [1.0f32, 0.8, 0.85, 1.1, 0.9, 0.7, 0.5, 0.4];
        let expect = [0.8f32, 0.75, 0.75, 0.8, 0.75, 0.7, 0.65, 0.6];
        for (r, e) in re.iter().zip(expect) {
            let a = ctrl.update(*r);
            assert!((a - e).abs() < 1e-6, "r^e {r}: alpha {a} expected {e}");
        }
    }

    #[test]
    fn alpha_stays_clamped() {
        let mut ctrl = AlphaController::new();
        ctrl.update(10.0);
        for i in 0..10 {
            let a = ctrl.update(10.0 - i as f32);
            assert!((ALPHA_MIN..=ALPHA_MAX).contains(&a));
        }
        assert_eq!(ctrl.alpha(), ALPHA_MIN);
        for i in 0..10 {
            let a = ctrl.update(i as f32);
            assert!((ALPHA_MIN..=ALPHA_MAX).contains(&a));
        }
        assert_eq!(ctrl.alpha(), ALPHA_MAX);
    }

    #[test]
    fn combined_reward_endpoints_are_exact() {
        assert_eq!(combined_reward(1.0, -0.5, 0.3), -0.5);
        assert_eq!(combined_reward(0.0, -0.5, 0.3), 0.3);
        assert!((combined_reward(0.8, -0.5, 1.0) - -0.2).abs() < 1e-6);
    }

    #[test]
    fn style_reward_is_zero_for_matching_policies() {
        let mut ctx = StyleContext::new(3);
        let d = [0.2f32, 0.5, 0.3];
        for _ in 0..4 {
            let rp = ctx.style_reward(&d, &d).unwrap();
            assert!(rp.abs() < 1e-6);
        }
        assert_eq!(ctx.steps(), 4);
    }

    #[test]
    fn style_reward_penalizes_divergence_from_preference() {
        let mut ctx = StyleContext::new(2);
        let rp = ctx.style_reward(&[0.9, 0.1], &[0.1, 0.9]).unwrap();
        assert!(rp < -0.5, "strong mismatch should be strongly negative: {rp}");
    }

    #[test]
    fn empty_context_is_an_error() {
        let ctx = StyleContext::new(2);
        assert!(ctx.current().is_err());
        let mut ctx = StyleContext::new(2);
        assert!(ctx.style_reward(&[0.5, 0.5], &[1.0]).is_err());
    }
}
