//! Dual-branch optimization: advantage estimation and the clipped policy
//! update for the exploration policy, the group-relative likelihood update
//! for the denoiser, and the closed-loop iteration driver tying rollouts to
//! both.

mod driver;
mod grpo;
mod ppo;

pub use driver::{IterationMetrics, RftConfig, RftTrainer, RolloutMetrics};
pub use grpo::{chain_log_likelihood, group_advantages, grpo_update, GrpoStats};
pub use ppo::{ppo_update, PpoBatch, PpoStats};

use crate::diffusion::GuidanceScales;
use crate::geom::{SceneEmbedding, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("sequence length mismatch: rewards {rewards}, values {values}, dones {dones}")]
    LengthMismatch { rewards: usize, values: usize, dones: usize },
    #[error("group member chain has sigma = 0 at step {step}; training requires stochastic sampling")]
    DeterministicChain { step: usize },
    #[error("group needs at least 2 members, got {0}")]
    GroupTooSmall(usize),
}

/// Clipped-objective configuration for the exploration policy update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    /// Value-loss coefficient.
    pub c_v: f64,
    /// Entropy-bonus coefficient.
    pub c_e: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub envs: usize,
    pub steps_per_iter: usize,
    pub lr: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            c_v: 0.5,
            c_e: 0.01,
            epochs: 4,
            minibatch: 4096,
            envs: 128,
            steps_per_iter: 32,
            lr: 2.5e-4,
        }
    }
}

/// Group-relative configuration for the denoiser update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrpoConfig {
    pub group_size: usize,
    /// Discount over denoising steps, `gamma^(s-1)`.
    pub denoise_gamma: f64,
    /// Anchor (behavior-cloning) loss weight.
    pub c_b: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    /// Groups per gradient step.
    pub minibatch_groups: usize,
    pub lr: f64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 8,
            denoise_gamma: 0.8,
            c_b: 0.4,
            epochs: 1,
            steps_per_epoch: 6,
            minibatch_groups: 16,
            lr: 2.5e-4,
        }
    }
}

/// One on-policy step of the exploration policy.
#[derive(Debug, Clone)]
pub struct Transition {
    pub scene: SceneEmbedding,
    pub reference: Trajectory,
    pub scales: GuidanceScales,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Generalized advantage estimation by backward recursion. Returns raw
/// (unnormalized) advantages and value targets; batch normalization happens
/// inside the policy update.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let n = rewards.len();
    if values.len() != n || dones.len() != n {
        return Err(RlError::LengthMismatch {
            rewards: n,
            values: values.len(),
            dones: dones.len(),
        });
    }
    let mut advantages = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let not_done = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let delta = rewards[t] + gamma * next_value * not_done - values[t];
        acc = delta + gamma * lambda * not_done * acc;
        advantages[t] = acc;
    }
    let targets = advantages.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((advantages, targets))
}
