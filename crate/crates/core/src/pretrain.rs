//! Imitation pretraining: slices expert futures out of scenario logs,
//! conditions them on the frozen scene features, and fits the denoiser with
//! the clean-sample-prediction loss.

use crate::diffusion::{pretrain_loss_batch, Conditioning, Denoiser};
use crate::features::{encode_scene, FeatureConfig};
use crate::geom::{Trajectory, Waypoint};
use crate::nn::{optim_step, OptimConfig, OptimState};
use crate::scenario::{Scenario, CURRENT_FRAME};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Frame stride between anchor states sliced from each log.
    pub anchor_stride: usize,
    /// Perturbed copies per anchor; off-expert starts whose targets steer
    /// back onto the expert path. Without them the planner only ever sees
    /// on-path states and compounds its own drift in closed loop.
    pub jitter_variants: usize,
    /// Lateral offset bound for perturbed anchors, meters.
    pub jitter_lat: f64,
    /// Heading offset bound for perturbed anchors, radians.
    pub jitter_heading: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch: 16,
            lr: 1e-3,
            anchor_stride: 10,
            jitter_variants: 2,
            jitter_lat: 1.2,
            jitter_heading: 0.12,
            seed: 0,
        }
    }
}

/// Expert future of `horizon` steps in the frame of `pose`.
pub fn expert_future_from(
    scenario: &Scenario,
    anchor: usize,
    horizon: usize,
    pose: &crate::geom::EgoState,
) -> Trajectory {
    let pts = (1..=horizon)
        .map(|k| {
            let idx = (anchor + k).min(scenario.frame_count() - 1);
            let e = &scenario.ego_log[idx];
            let [vx, vy] = e.velocity();
            Waypoint::new(e.x, e.y, vx, vy)
        })
        .collect();
    Trajectory::new(pts).to_local(pose.x, pose.y, pose.heading)
}

/// Expert future of `horizon` steps in the anchor ego frame.
pub fn expert_future(scenario: &Scenario, anchor: usize, horizon: usize) -> Trajectory {
    expert_future_from(scenario, anchor, horizon, &scenario.ego_log[anchor])
}

/// Slices (expert future, conditioning) pairs from every scenario at a fixed
/// anchor stride. Each anchor also yields `jitter_variants` perturbed
/// copies: the start pose is offset laterally and in heading, the features
/// are encoded from the perturbed pose, and the target is the unchanged
/// expert future expressed in the perturbed frame, so the planner learns to
/// steer back onto the path.
pub fn build_expert_dataset(
    scenarios: &[Arc<Scenario>],
    features: &FeatureConfig,
    horizon: usize,
    cfg: &PretrainConfig,
) -> Vec<(Trajectory, Conditioning)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xDA7A);
    let mut out = Vec::new();
    for scenario in scenarios {
        let last_anchor = scenario.frame_count().saturating_sub(horizon + 1);
        let mut anchor = CURRENT_FRAME;
        while anchor <= last_anchor {
            let ego = scenario.ego_log[anchor];
            let emb = encode_scene(scenario, anchor, &ego, features);
            out.push((expert_future(scenario, anchor, horizon), Conditioning::from_embedding(&emb)));
            for _ in 0..cfg.jitter_variants {
                use rand::Rng;
                let lat: f64 = rng.random_range(-cfg.jitter_lat..cfg.jitter_lat);
                let dh: f64 = rng.random_range(-cfg.jitter_heading..cfg.jitter_heading);
                let (sin, cos) = ego.heading.sin_cos();
                let pose = crate::geom::EgoState {
                    x: ego.x - sin * lat,
                    y: ego.y + cos * lat,
                    heading: crate::geom::wrap_angle(ego.heading + dh),
                    ..ego
                };
                let emb = encode_scene(scenario, anchor, &pose, features);
                out.push((
                    expert_future_from(scenario, anchor, horizon, &pose),
                    Conditioning::from_embedding(&emb),
                ));
            }
            anchor += cfg.anchor_stride.max(1);
        }
    }
    out
}

/// Fits the denoiser on the expert dataset; returns the per-step loss curve.
pub fn pretrain(
    denoiser: &mut Denoiser,
    dataset: &[(Trajectory, Conditioning)],
    cfg: &PretrainConfig,
) -> Vec<f64> {
    assert!(!dataset.is_empty(), "empty pretraining dataset");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optim = OptimState::new(OptimConfig {
        base_lr: cfg.lr,
        total_steps: cfg.steps as u64,
        ..OptimConfig::default()
    });
    let mut indices: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut cursor = 0usize;
    for _ in 0..cfg.steps {
        if cursor + cfg.batch > indices.len() {
            indices.shuffle(&mut rng);
            cursor = 0;
        }
        let take = cfg.batch.min(indices.len());
        let batch: Vec<(&Trajectory, &Conditioning)> = indices[cursor..cursor + take]
            .iter()
            .map(|&i| (&dataset[i].0, &dataset[i].1))
            .collect();
        cursor += take;
        let (loss, grads) = pretrain_loss_batch(denoiser, &batch, &mut rng);
        optim_step(&mut denoiser.params, &grads, &mut optim);
        losses.push(loss);
    }
    losses
}
