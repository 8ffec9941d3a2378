//! Frozen scene feature encoder.
//!
//! Produces the scene and navigation embeddings conditioning the denoiser
//! and the exploration policy: per-agent relative pose tokens, a static
//! obstacle token, an ego state token, and route-relative navigation
//! features. Hand-crafted and parameter-free, so it stays fixed during
//! fine-tuning.

use crate::geom::{wrap_angle, EgoState, SceneEmbedding};
use crate::scenario::Scenario;
use serde::{Deserialize, Serialize};

/// Values per scene token; the policy reshapes the flat scene vector into
/// `(n_agent_slots + 2) x TOKEN_DIM` tokens.
pub const TOKEN_DIM: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub n_agent_slots: usize,
    pub pos_norm: f64,
    pub vel_norm: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { n_agent_slots: 6, pos_norm: 50.0, vel_norm: 15.0 }
    }
}

impl FeatureConfig {
    pub fn d_scene(&self) -> usize {
        (self.n_agent_slots + 2) * TOKEN_DIM
    }

    pub fn n_tokens(&self) -> usize {
        self.n_agent_slots + 2
    }

    pub const D_NAVI: usize = 8;
}

/// Encodes the world around `ego` at `frame` into flat feature vectors.
pub fn encode_scene(
    scenario: &Scenario,
    frame: usize,
    ego: &EgoState,
    cfg: &FeatureConfig,
) -> SceneEmbedding {
    let (sin, cos) = ego.heading.sin_cos();
    let to_ego = |x: f64, y: f64| -> [f64; 2] {
        let dx = x - ego.x;
        let dy = y - ego.y;
        [dx * cos + dy * sin, -dx * sin + dy * cos]
    };

    let mut scene = Vec::with_capacity(cfg.d_scene());

    // nearest agents first
    let mut agents: Vec<(f64, [f64; 2], f64, f64)> = scenario
        .agents
        .iter()
        .filter_map(|a| {
            let p = a.poses.get(frame)?;
            if !p.valid {
                return None;
            }
            let rel = to_ego(p.x, p.y);
            let d = rel[0].hypot(rel[1]);
            Some((d, rel, wrap_angle(p.heading - ego.heading), p.speed))
        })
        .collect();
    agents.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    for slot in 0..cfg.n_agent_slots {
        match agents.get(slot) {
            Some((_, rel, dh, speed)) => {
                scene.push(rel[0] / cfg.pos_norm);
                scene.push(rel[1] / cfg.pos_norm);
                scene.push(dh.cos());
                scene.push(dh.sin());
                scene.push(speed / cfg.vel_norm);
            }
            None => scene.extend_from_slice(&[0.0; TOKEN_DIM]),
        }
    }

    // nearest static obstacle
    let nearest_static = scenario
        .statics
        .iter()
        .map(|b| {
            let rel = to_ego(b.cx, b.cy);
            (rel[0].hypot(rel[1]), rel, wrap_angle(b.heading - ego.heading))
        })
        .min_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    match nearest_static {
        Some((_, rel, dh)) => {
            scene.push(rel[0] / cfg.pos_norm);
            scene.push(rel[1] / cfg.pos_norm);
            scene.push(dh.cos());
            scene.push(dh.sin());
            scene.push(1.0);
        }
        None => scene.extend_from_slice(&[0.0; TOKEN_DIM]),
    }

    // ego state token
    scene.push(ego.speed / cfg.vel_norm);
    scene.push(ego.accel / 4.0);
    scene.push(ego.steer / 0.6);
    scene.push(1.0);
    scene.push(1.0);

    // navigation features relative to the route
    let route = scenario.route_polyline();
    let s0 = route.project_arclength([ego.x, ego.y]);
    let near = route.point_at(s0);
    let tan = route.tangent_at(s0);
    let off_vec = [ego.x - near[0], ego.y - near[1]];
    let signed_offset = tan[0] * off_vec[1] - tan[1] * off_vec[0];
    let heading_err = wrap_angle(ego.heading - tan[1].atan2(tan[0]));
    let curvature = |ahead: f64| {
        let t1 = route.tangent_at(s0 + ahead);
        wrap_angle(t1[1].atan2(t1[0]) - tan[1].atan2(tan[0])) / ahead
    };
    let remaining = route.total_length() - s0;
    let limit = scenario.speed_limit_at([ego.x, ego.y]);

    let navi = vec![
        signed_offset / 5.0,
        heading_err.cos(),
        heading_err.sin(),
        (remaining / 200.0).min(1.0),
        (limit / cfg.vel_norm).min(2.0),
        curvature(20.0) * 10.0,
        curvature(40.0) * 10.0,
        1.0,
    ];

    SceneEmbedding { scene, navi }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_synthetic, ScenarioKind, CURRENT_FRAME};

    #[test]
    fn dimensions_match_config() {
        let cfg = FeatureConfig::default();
        let s = generate_synthetic(1, ScenarioKind::BlockedLane);
        let emb = encode_scene(&s, CURRENT_FRAME, &s.current_ego(), &cfg);
        assert_eq!(emb.scene.len(), cfg.d_scene());
        assert_eq!(emb.navi.len(), FeatureConfig::D_NAVI);
        assert!(emb.scene.iter().chain(emb.navi.iter()).all(|v| v.is_finite()));
    }

    #[test]
    fn deterministic_and_scene_dependent() {
        let cfg = FeatureConfig::default();
        let s = generate_synthetic(2, ScenarioKind::BlockedLane);
        let ego = s.current_ego();
        let a = encode_scene(&s, CURRENT_FRAME, &ego, &cfg);
        let b = encode_scene(&s, CURRENT_FRAME, &ego, &cfg);
        assert_eq!(a, b);
        let other = generate_synthetic(3, ScenarioKind::ConeGap);
        let c = encode_scene(&other, CURRENT_FRAME, &other.current_ego(), &cfg);
        assert_ne!(a.scene, c.scene);
    }

    #[test]
    fn blocked_lane_blocker_appears_in_an_agent_slot() {
        let cfg = FeatureConfig::default();
        let s = generate_synthetic(2, ScenarioKind::BlockedLane);
        let emb = encode_scene(&s, CURRENT_FRAME, &s.current_ego(), &cfg);
        // some agent slot holds a stopped vehicle ahead of the ego
        let found = (0..cfg.n_agent_slots).any(|slot| {
            let base = slot * TOKEN_DIM;
            let dx = emb.scene[base];
            let speed = emb.scene[base + 4];
            dx > 0.0 && dx < 1.3 && speed == 0.0
        });
        assert!(found, "no stopped vehicle ahead in {:?}", emb.scene);
    }
}
