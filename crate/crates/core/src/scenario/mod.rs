//! Scenario cache: the fixed-window log-replay world the simulator runs on.
//!
//! A scenario is 171 frames at 10 Hz (20 past, the current frame, 150
//! future) with map lanes, log-replay agents, static obstacles, and a route,
//! all cropped to a 200 m radius around the current-frame ego position.

mod codec;
mod synth;

pub use codec::{decode_scenario, encode_scenario, CodecError, FORMAT_VERSION, MAGIC};
pub use synth::{generate_synthetic, generate_synthetic_with, ScenarioKind, SynthConfig};

use crate::geom::{EgoState, OrientedBox, Polyline};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frames per scenario: 20 past + current + 150 future.
pub const FRAME_COUNT: usize = 171;

/// Index of the current frame inside the window.
pub const CURRENT_FRAME: usize = 20;

/// Spatial crop radius around the current-frame ego position, meters.
pub const CROP_RADIUS: f64 = 200.0;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario must have exactly {FRAME_COUNT} frames, got {0}")]
    FrameCount(usize),
    #[error("agent {id} has {got} poses, expected {expected}")]
    AgentPoseCount { id: u64, got: usize, expected: usize },
    #[error("agent {0} has invalid poses outside a contiguous prefix/suffix")]
    AgentValidityGap(u64),
    #[error("lane {0} centerline has fewer than 2 points")]
    ShortCenterline(u64),
    #[error("lane {id} direction hints ({got}) do not match centerline points ({expected})")]
    DirectionHintCount { id: u64, got: usize, expected: usize },
    #[error("lane {0} polygon is self-intersecting")]
    SelfIntersectingPolygon(u64),
    #[error("lane {lane} centerline point {index} lies outside its polygon")]
    CenterlineOutsidePolygon { lane: u64, index: usize },
    #[error("map element farther than crop radius: nearest point at {0:.1} m")]
    OutsideCrop(f64),
    #[error("route references unknown lane id {0}")]
    UnknownRouteLane(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentKind {
    Vehicle,
    Pedestrian,
    Cyclist,
}

/// One frame of an agent track. Invalid frames mean the agent is not present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub valid: bool,
}

/// A log-replay agent: fixed footprint, pre-scripted per-frame poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u64,
    pub kind: AgentKind,
    pub length: f64,
    pub width: f64,
    pub poses: Vec<AgentPose>,
}

impl AgentTrack {
    /// Footprint at a frame, `None` when the agent is not present.
    pub fn box_at(&self, frame: usize) -> Option<OrientedBox> {
        let p = self.poses.get(frame)?;
        p.valid
            .then(|| OrientedBox::new(p.x, p.y, p.heading, self.length, self.width))
    }
}

/// Lane geometry: centerline, closed boundary polygon, per-point direction
/// hints, and a speed limit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapLane {
    pub id: u64,
    pub centerline: Vec<[f64; 2]>,
    /// Closed simple polygon; the last point is not repeated.
    pub polygon: Vec<[f64; 2]>,
    /// Unit tangent per centerline point.
    pub direction_hint: Vec<[f64; 2]>,
    pub speed_limit: f64,
}

impl MapLane {
    pub fn centerline_polyline(&self) -> Polyline {
        Polyline::new(self.centerline.clone())
    }
}

/// The full cached world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub dt: f64,
    pub current_frame: usize,
    pub crop_radius: f64,
    /// Per-frame expert ego states, `FRAME_COUNT` long.
    pub ego_log: Vec<EgoState>,
    pub agents: Vec<AgentTrack>,
    pub statics: Vec<OrientedBox>,
    pub lanes: Vec<MapLane>,
    /// Ordered lane ids the expert intends to traverse.
    pub route: Vec<u64>,
}

impl Scenario {
    pub fn frame_count(&self) -> usize {
        self.ego_log.len()
    }

    pub fn current_ego(&self) -> EgoState {
        self.ego_log[self.current_frame]
    }

    /// All lane boundary polygons, union-ready.
    pub fn drivable_polygons(&self) -> Vec<&[[f64; 2]]> {
        self.lanes.iter().map(|l| l.polygon.as_slice()).collect()
    }

    /// Progress reference for the route.
    ///
    /// The expert-driven path is used as the route's arclength reference: it
    /// is monotone and well-defined even when the route hops between parallel
    /// lanes, where concatenated centerlines would double back. The lane ids
    /// in [`Scenario::route`] stay the semantic route.
    pub fn route_polyline(&self) -> Polyline {
        Polyline::new(self.ego_log.iter().map(|e| [e.x, e.y]).collect())
    }

    /// Footprints of all agents present at a frame.
    pub fn agent_boxes_at(&self, frame: usize) -> Vec<OrientedBox> {
        self.agents.iter().filter_map(|a| a.box_at(frame)).collect()
    }

    /// Agent footprints plus speeds at a frame, for time-to-collision
    /// projection.
    pub fn agent_motion_at(&self, frame: usize) -> Vec<(OrientedBox, f64)> {
        self.agents
            .iter()
            .filter_map(|a| {
                let b = a.box_at(frame)?;
                Some((b, a.poses[frame].speed))
            })
            .collect()
    }

    /// Speed limit of the lane whose centerline is closest to `p`.
    pub fn speed_limit_at(&self, p: [f64; 2]) -> f64 {
        self.nearest_lane(p).map(|l| l.speed_limit).unwrap_or(f64::INFINITY)
    }

    /// Lane whose centerline is closest to `p`.
    pub fn nearest_lane(&self, p: [f64; 2]) -> Option<&MapLane> {
        let mut best = f64::INFINITY;
        let mut found = None;
        for lane in &self.lanes {
            for w in lane.centerline.windows(2) {
                let d = crate::geom::dist_point_segment(p, w[0], w[1]);
                if d < best {
                    best = d;
                    found = Some(lane);
                }
            }
        }
        found
    }

    /// Checks every type invariant; generators and the decoder both rely on
    /// this as the single source of truth.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.ego_log.len() != FRAME_COUNT {
            return Err(ScenarioError::FrameCount(self.ego_log.len()));
        }
        for a in &self.agents {
            if a.poses.len() != FRAME_COUNT {
                return Err(ScenarioError::AgentPoseCount {
                    id: a.id,
                    got: a.poses.len(),
                    expected: FRAME_COUNT,
                });
            }
            if !contiguous_validity(&a.poses) {
                return Err(ScenarioError::AgentValidityGap(a.id));
            }
        }
        for lane in &self.lanes {
            if lane.centerline.len() < 2 {
                return Err(ScenarioError::ShortCenterline(lane.id));
            }
            if lane.direction_hint.len() != lane.centerline.len() {
                return Err(ScenarioError::DirectionHintCount {
                    id: lane.id,
                    got: lane.direction_hint.len(),
                    expected: lane.centerline.len(),
                });
            }
            if polygon_self_intersects(&lane.polygon) {
                return Err(ScenarioError::SelfIntersectingPolygon(lane.id));
            }
            for (i, p) in lane.centerline.iter().enumerate() {
                if !crate::geom::point_in_polygon(*p, &lane.polygon) {
                    return Err(ScenarioError::CenterlineOutsidePolygon { lane: lane.id, index: i });
                }
            }
        }
        for id in &self.route {
            if !self.lanes.iter().any(|l| l.id == *id) {
                return Err(ScenarioError::UnknownRouteLane(*id));
            }
        }
        let ego = self.current_ego();
        let origin = [ego.x, ego.y];
        for lane in &self.lanes {
            let d = lane
                .centerline
                .windows(2)
                .map(|w| crate::geom::dist_point_segment(origin, w[0], w[1]))
                .fold(f64::INFINITY, f64::min);
            if d > self.crop_radius {
                return Err(ScenarioError::OutsideCrop(d));
            }
        }
        for b in &self.statics {
            let d = (b.cx - origin[0]).hypot(b.cy - origin[1]);
            if d > self.crop_radius {
                return Err(ScenarioError::OutsideCrop(d));
            }
        }
        Ok(())
    }
}

fn contiguous_validity(poses: &[AgentPose]) -> bool {
    // valid frames must be one contiguous block (invalid prefix/suffix only)
    let first = poses.iter().position(|p| p.valid);
    let last = poses.iter().rposition(|p| p.valid);
    match (first, last) {
        (Some(a), Some(b)) => poses[a..=b].iter().all(|p| p.valid),
        _ => true,
    }
}

fn segments_properly_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    fn orient(p: [f64; 2], q: [f64; 2], r: [f64; 2]) -> f64 {
        (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0])
    }
    let o1 = orient(a, b, c);
    let o2 = orient(a, b, d);
    let o3 = orient(c, d, a);
    let o4 = orient(c, d, b);
    o1 * o2 < 0.0 && o3 * o4 < 0.0
}

fn polygon_self_intersects(poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 4 {
        return false;
    }
    for i in 0..n {
        for j in i + 1..n {
            // skip adjacent edges (they share an endpoint)
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            if segments_properly_intersect(poly[i], poly[(i + 1) % n], poly[j], poly[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}
