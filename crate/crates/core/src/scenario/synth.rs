//! Synthetic scenario generator.
//!
//! Replaces real-world data at desk scale with five archetypes: straight
//! cruising, a constant-radius curve, a crossing intersection, a
//! blocked lane requiring a lane change, and a traffic-cone gap requiring a
//! fine lateral adjustment. Generation is a pure function of `(seed, kind)`;
//! identical inputs produce byte-identical encodings.

use super::{AgentKind, AgentPose, AgentTrack, MapLane, Scenario, CROP_RADIUS, CURRENT_FRAME, FRAME_COUNT};
use crate::geom::{wrap_angle, EgoState, OrientedBox, Polyline, SIM_DT};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScenarioKind {
    Straight,
    Curve,
    Intersection,
    BlockedLane,
    ConeGap,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Straight,
        ScenarioKind::Curve,
        ScenarioKind::Intersection,
        ScenarioKind::BlockedLane,
        ScenarioKind::ConeGap,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::Curve => "curve",
            ScenarioKind::Intersection => "intersection",
            ScenarioKind::BlockedLane => "blocked_lane",
            ScenarioKind::ConeGap => "cone_gap",
        }
    }

    fn salt(&self) -> u64 {
        match self {
            ScenarioKind::Straight => 1,
            ScenarioKind::Curve => 2,
            ScenarioKind::Intersection => 3,
            ScenarioKind::BlockedLane => 4,
            ScenarioKind::ConeGap => 5,
        }
    }
}

impl std::str::FromStr for ScenarioKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "straight" => Ok(ScenarioKind::Straight),
            "curve" => Ok(ScenarioKind::Curve),
            "intersection" => Ok(ScenarioKind::Intersection),
            "blocked_lane" => Ok(ScenarioKind::BlockedLane),
            "cone_gap" => Ok(ScenarioKind::ConeGap),
            other => Err(format!("unknown scenario kind '{other}'")),
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub lane_width: f64,
    /// Clear width between the two cones in the cone-gap archetype.
    pub cone_gap_width: f64,
    pub cruise_speed_min: f64,
    pub cruise_speed_max: f64,
    pub speed_limit: f64,
    pub wheelbase: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            lane_width: 3.7,
            cone_gap_width: 2.6,
            cruise_speed_min: 8.0,
            cruise_speed_max: 12.0,
            speed_limit: 15.0,
            wheelbase: 3.089,
        }
    }
}

pub fn generate_synthetic(seed: u64, kind: ScenarioKind) -> Scenario {
    generate_synthetic_with(seed, kind, &SynthConfig::default())
}

pub fn generate_synthetic_with(seed: u64, kind: ScenarioKind, cfg: &SynthConfig) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ kind.salt());
    match kind {
        ScenarioKind::Straight => straight(&mut rng, cfg),
        ScenarioKind::Curve => curve(&mut rng, cfg),
        ScenarioKind::Intersection => intersection(&mut rng, cfg),
        ScenarioKind::BlockedLane => blocked_lane(&mut rng, cfg),
        ScenarioKind::ConeGap => cone_gap(&mut rng, cfg),
    }
}

/// Dense base path along +x starting at the origin.
fn straight_path(len: f64, step: f64) -> Vec<[f64; 2]> {
    let n = (len / step).ceil() as usize;
    (0..=n).map(|i| [i as f64 * step, 0.0]).collect()
}

/// Dense arc path of signed curvature `1/radius` (positive turns left).
fn arc_path(radius: f64, sign: f64, len: f64, step: f64) -> Vec<[f64; 2]> {
    let n = (len / step).ceil() as usize;
    (0..=n)
        .map(|i| {
            let s = i as f64 * step;
            let phi = s / radius;
            [radius * phi.sin(), sign * radius * (1.0 - phi.cos())]
        })
        .collect()
}

fn path_tangents(pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(pts.len());
    for i in 0..pts.len() {
        let (a, b) = if i + 1 < pts.len() { (pts[i], pts[i + 1]) } else { (pts[i - 1], pts[i]) };
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let n = dx.hypot(dy).max(1e-12);
        out.push([dx / n, dy / n]);
    }
    out
}

fn offset_path(pts: &[[f64; 2]], lateral: f64) -> Vec<[f64; 2]> {
    let tans = path_tangents(pts);
    pts.iter()
        .zip(&tans)
        .map(|(p, t)| [p[0] - t[1] * lateral, p[1] + t[0] * lateral])
        .collect()
}

/// Lane strip around a base path at a lateral offset. The polygon edges are
/// padded by 5 cm so that shared boundaries of adjacent lanes overlap and a
/// footprint corner on the seam stays drivable.
fn lane_from_path(id: u64, base: &[[f64; 2]], lateral: f64, width: f64, speed_limit: f64) -> MapLane {
    let centerline = offset_path(base, lateral);
    let pad = 0.05;
    let left = offset_path(base, lateral + width / 2.0 + pad);
    let right = offset_path(base, lateral - width / 2.0 - pad);
    let mut polygon = right;
    polygon.extend(left.into_iter().rev());
    let direction_hint = path_tangents(&centerline);
    MapLane { id, centerline, polygon, direction_hint, speed_limit }
}

/// Expert log driving along `path` with a per-frame speed profile.
fn ego_log_along(path: &Polyline, s0: f64, speeds: &[f64], wheelbase: f64) -> Vec<EgoState> {
    assert_eq!(speeds.len(), FRAME_COUNT);
    let mut out = Vec::with_capacity(FRAME_COUNT);
    let mut s = s0;
    let mut prev_heading: Option<f64> = None;
    for i in 0..FRAME_COUNT {
        let v = speeds[i];
        let p = path.point_at(s);
        let t = path.tangent_at(s);
        let heading = t[1].atan2(t[0]);
        let accel = if i + 1 < FRAME_COUNT { (speeds[i + 1] - v) / SIM_DT } else { 0.0 };
        // steer from the realized yaw rate: tan(delta) = L * dheading / ds
        let steer = match prev_heading {
            Some(ph) if v > 0.5 => (wheelbase * wrap_angle(heading - ph) / (v * SIM_DT)).atan(),
            _ => 0.0,
        };
        out.push(EgoState { x: p[0], y: p[1], heading, speed: v, accel, steer });
        prev_heading = Some(heading);
        s += v * SIM_DT;
    }
    out
}

fn constant_speeds(v: f64) -> Vec<f64> {
    vec![v; FRAME_COUNT]
}

/// Smooth speed ramp from `v0` to `v1` between frames `a..b`.
fn ramp_speeds(v0: f64, v1: f64, a: usize, b: usize) -> Vec<f64> {
    (0..FRAME_COUNT)
        .map(|i| {
            if i <= a {
                v0
            } else if i >= b {
                v1
            } else {
                let t = (i - a) as f64 / (b - a) as f64;
                let sm = t * t * (3.0 - 2.0 * t);
                v0 + (v1 - v0) * sm
            }
        })
        .collect()
}

/// Constant-speed agent track along a path.
fn agent_along(
    id: u64,
    kind: AgentKind,
    dims: (f64, f64),
    path: &Polyline,
    s0: f64,
    speed: f64,
) -> AgentTrack {
    let poses = (0..FRAME_COUNT)
        .map(|i| {
            let s = s0 + speed * SIM_DT * i as f64;
            let p = path.point_at(s);
            let t = path.tangent_at(s);
            AgentPose { x: p[0], y: p[1], heading: t[1].atan2(t[0]), speed, valid: true }
        })
        .collect();
    AgentTrack { id, kind, length: dims.0, width: dims.1, poses }
}

/// Smoothstep lateral blend from offset `from` to `to` between arclengths
/// `s_a..s_b` applied over a base path.
fn blended_path(base: &[[f64; 2]], from: f64, to: f64, s_a: f64, s_b: f64) -> Vec<[f64; 2]> {
    let tans = path_tangents(base);
    let line = Polyline::new(base.to_vec());
    base.iter()
        .zip(&tans)
        .map(|(p, t)| {
            let s = line.project_arclength(*p);
            let u = ((s - s_a) / (s_b - s_a)).clamp(0.0, 1.0);
            let sm = u * u * (3.0 - 2.0 * u);
            let off = from + (to - from) * sm;
            [p[0] - t[1] * off, p[1] + t[0] * off]
        })
        .collect()
}

const EGO_START_S: f64 = 40.0;
const VEHICLE_DIMS: (f64, f64) = (4.6, 1.9);

fn straight(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Scenario {
    let v: f64 = rng.random_range(cfg.cruise_speed_min..cfg.cruise_speed_max);
    let road_len = EGO_START_S + v * 17.1 + 80.0;
    let base = straight_path(road_len, 10.0);
    let lanes = vec![
        lane_from_path(1, &base, 0.0, cfg.lane_width, cfg.speed_limit),
        lane_from_path(2, &base, cfg.lane_width, cfg.lane_width, cfg.speed_limit),
    ];
    let path = Polyline::new(offset_path(&base, 0.0));
    let ego_log = ego_log_along(&path, EGO_START_S, &constant_speeds(v), cfg.wheelbase);

    let left = Polyline::new(offset_path(&base, cfg.lane_width));
    let mut agents = vec![agent_along(
        10,
        AgentKind::Vehicle,
        VEHICLE_DIMS,
        &path,
        EGO_START_S + rng.random_range(35.0..55.0),
        v, // same speed, constant gap
    )];
    if rng.random_bool(0.7) {
        agents.push(agent_along(
            11,
            AgentKind::Vehicle,
            VEHICLE_DIMS,
            &left,
            rng.random_range(10.0..30.0),
            rng.random_range(5.0..8.0),
        ));
    }

    recentre(Scenario {
        dt: SIM_DT,
        current_frame: CURRENT_FRAME,
        crop_radius: CROP_RADIUS,
        ego_log,
        agents,
        statics: vec![],
        lanes,
        route: vec![1],
    })
}

fn curve(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Scenario {
    let radius: f64 = rng.random_range(60.0..120.0);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    // keep lateral acceleration comfortable: v^2/R <= ~1.2
    let v = (1.2 * radius).sqrt().min(cfg.cruise_speed_max);
    let road_len = EGO_START_S + v * 17.1 + 80.0;
    let base = arc_path(radius, sign, road_len, 4.0);
    let lanes = vec![
        lane_from_path(1, &base, 0.0, cfg.lane_width, cfg.speed_limit),
        lane_from_path(2, &base, cfg.lane_width, cfg.lane_width, cfg.speed_limit),
    ];
    let path = Polyline::new(offset_path(&base, 0.0));
    let ego_log = ego_log_along(&path, EGO_START_S, &constant_speeds(v), cfg.wheelbase);
    let agents = vec![agent_along(
        10,
        AgentKind::Vehicle,
        VEHICLE_DIMS,
        &path,
        EGO_START_S + rng.random_range(45.0..65.0),
        v,
    )];

    recentre(Scenario {
        dt: SIM_DT,
        current_frame: CURRENT_FRAME,
        crop_radius: CROP_RADIUS,
        ego_log,
        agents,
        statics: vec![],
        lanes,
        route: vec![1],
    })
}

fn intersection(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Scenario {
    let v: f64 = rng.random_range(cfg.cruise_speed_min..cfg.cruise_speed_max);
    let road_len = EGO_START_S + v * 17.1 + 80.0;
    let base = straight_path(road_len, 10.0);
    let cross_x = EGO_START_S + v * 2.0 + rng.random_range(40.0..60.0);
    // crossing road along +y through (cross_x, 0)
    let cross_base: Vec<[f64; 2]> = (0..=16).map(|i| [cross_x, -80.0 + i as f64 * 10.0]).collect();
    let lanes = vec![
        lane_from_path(1, &base, 0.0, cfg.lane_width, cfg.speed_limit),
        lane_from_path(3, &cross_base, 0.0, cfg.lane_width, 10.0),
    ];
    let path = Polyline::new(offset_path(&base, 0.0));
    let ego_log = ego_log_along(&path, EGO_START_S, &constant_speeds(v), cfg.wheelbase);

    // crossing vehicle timed to clear the conflict point before the ego
    let ego_arrival = (cross_x - (EGO_START_S + v * 2.0)) / v + 2.0; // seconds after current frame
    let cross_speed: f64 = rng.random_range(6.0..9.0);
    let clearance: f64 = rng.random_range(3.0..5.0);
    let crossing_arrival = (ego_arrival - clearance).max(0.5);
    // crossing path arclength at the conflict point is 80
    let s0 = 80.0 - cross_speed * (2.0 + crossing_arrival);
    let cross_path = Polyline::new(cross_base.clone());
    let agents = vec![
        agent_along(20, AgentKind::Vehicle, VEHICLE_DIMS, &cross_path, s0, cross_speed),
        agent_along(10, AgentKind::Vehicle, VEHICLE_DIMS, &path, EGO_START_S + 50.0, v),
    ];

    recentre(Scenario {
        dt: SIM_DT,
        current_frame: CURRENT_FRAME,
        crop_radius: CROP_RADIUS,
        ego_log,
        agents,
        statics: vec![],
        lanes,
        route: vec![1],
    })
}

fn blocked_lane(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Scenario {
    let v: f64 = rng.random_range(cfg.cruise_speed_min..cfg.cruise_speed_max);
    let road_len = EGO_START_S + v * 17.1 + 80.0;
    let base = straight_path(road_len, 5.0);
    let lanes = vec![
        lane_from_path(1, &base, 0.0, cfg.lane_width, cfg.speed_limit),
        lane_from_path(2, &base, cfg.lane_width, cfg.lane_width, cfg.speed_limit),
    ];

    let s_ego_now = EGO_START_S + v * SIM_DT * CURRENT_FRAME as f64;
    let d_block: f64 = rng.random_range(42.0..56.0);
    let s_block = s_ego_now + d_block;

    // expert swerves to the left lane around the blocker
    let expert_pts =
        blended_path(&base, 0.0, cfg.lane_width, s_block - 35.0, s_block - 10.0);
    let path = Polyline::new(expert_pts);
    let slow = ramp_speeds(v, v * 0.8, 30, 60);
    let ego_log = ego_log_along(&path, EGO_START_S, &slow, cfg.wheelbase);

    // the blocker: a stopped vehicle in the ego lane
    let lane1 = Polyline::new(offset_path(&base, 0.0));
    let blocker = agent_along(30, AgentKind::Vehicle, VEHICLE_DIMS, &lane1, s_block, 0.0);
    let mut agents = vec![blocker];
    if rng.random_bool(0.6) {
        let left = Polyline::new(offset_path(&base, cfg.lane_width));
        agents.push(agent_along(
            31,
            AgentKind::Vehicle,
            VEHICLE_DIMS,
            &left,
            rng.random_range(5.0..20.0),
            rng.random_range(4.0..7.0),
        ));
    }

    recentre(Scenario {
        dt: SIM_DT,
        current_frame: CURRENT_FRAME,
        crop_radius: CROP_RADIUS,
        ego_log,
        agents,
        statics: vec![],
        lanes,
        route: vec![1, 2],
    })
}

fn cone_gap(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Scenario {
    let v: f64 = rng.random_range(cfg.cruise_speed_min..cfg.cruise_speed_max * 0.9);
    let road_len = EGO_START_S + v * 17.1 + 80.0;
    let base = straight_path(road_len, 5.0);
    let lanes = vec![lane_from_path(1, &base, 0.0, cfg.lane_width, cfg.speed_limit)];

    let s_ego_now = EGO_START_S + v * SIM_DT * CURRENT_FRAME as f64;
    let s_cones = s_ego_now + rng.random_range(40.0..55.0);
    let gap_centre: f64 = rng.random_range(-0.5..0.5);
    let cone = 0.5;
    let lat = cfg.cone_gap_width / 2.0 + cone / 2.0;
    let statics = vec![
        OrientedBox::new(s_cones, gap_centre + lat, 0.0, cone, cone),
        OrientedBox::new(s_cones, gap_centre - lat, 0.0, cone, cone),
    ];

    // expert threads the gap, slowing down through it
    let expert_pts = blended_path(&base, 0.0, gap_centre, s_cones - 30.0, s_cones - 8.0);
    let path = Polyline::new(expert_pts);
    let slow = ramp_speeds(v, 5.0_f64.min(v), 25, 55);
    let ego_log = ego_log_along(&path, EGO_START_S, &slow, cfg.wheelbase);

    recentre(Scenario {
        dt: SIM_DT,
        current_frame: CURRENT_FRAME,
        crop_radius: CROP_RADIUS,
        ego_log,
        agents: vec![],
        statics,
        lanes,
        route: vec![1],
    })
}

/// Shifts the whole world so the current-frame ego sits at the origin. Keeps
/// generated coordinates small and the crop invariant obviously satisfied.
fn recentre(mut s: Scenario) -> Scenario {
    let ego = s.current_ego();
    let (dx, dy) = (ego.x, ego.y);
    for e in &mut s.ego_log {
        e.x -= dx;
        e.y -= dy;
    }
    for a in &mut s.agents {
        for p in &mut a.poses {
            p.x -= dx;
            p.y -= dy;
        }
    }
    for b in &mut s.statics {
        b.cx -= dx;
        b.cy -= dy;
    }
    for l in &mut s.lanes {
        for p in l.centerline.iter_mut().chain(l.polygon.iter_mut()) {
            p[0] -= dx;
            p[1] -= dy;
        }
    }
    s
}
