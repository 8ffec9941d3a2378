//! Shared domain types and geometry primitives: ego state, waypoints,
//! trajectories with derived headings, Frenet frames, oriented boxes, and
//! angle/polyline helpers used across the simulator and the planner stack.

use serde::{Deserialize, Serialize};

/// Fixed simulation step, 10 Hz everywhere.
pub const SIM_DT: f64 = 0.1;

/// Planning horizon in steps (8 s at 10 Hz).
pub const DEFAULT_HORIZON: usize = 80;

/// Below this speed the waypoint heading is ill-conditioned and is carried
/// forward from the previous step instead of derived from velocity.
pub const HEADING_SPEED_FLOOR: f64 = 0.1;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::PI;
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

/// Full kinematic state of the ego vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoState {
    pub x: f64,
    pub y: f64,
    /// Radians, wrapped into `(-pi, pi]` after every update.
    pub heading: f64,
    /// m/s, never negative (no reverse gear).
    pub speed: f64,
    pub accel: f64,
    pub steer: f64,
}

impl EgoState {
    pub fn at_rest(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading, speed: 0.0, accel: 0.0, steer: 0.0 }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    pub fn velocity(&self) -> [f64; 2] {
        [self.speed * self.heading.cos(), self.speed * self.heading.sin()]
    }
}

/// One planned step: position plus velocity, both in the plan's frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, vx: f64, vy: f64) -> Self {
        Self { x, y, vx, vy }
    }

    pub fn speed(&self) -> f64 {
        self.vx.hypot(self.vy)
    }
}

/// A fixed-rate planned future of `(x, y, vx, vy)` steps at [`SIM_DT`].
///
/// Heading is not a channel; it is derived from velocity with a low-speed
/// carry-forward rule (see [`Trajectory::headings`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Waypoint>,
    dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>) -> Self {
        Self { points, dt: SIM_DT }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn points(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn point(&self, i: usize) -> Waypoint {
        self.points[i]
    }

    /// Per-step headings: `atan2(vy, vx)` where the speed exceeds
    /// [`HEADING_SPEED_FLOOR`], otherwise the previous step's heading
    /// (seeded with `initial`).
    pub fn headings(&self, initial: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len());
        let mut carry = initial;
        for p in &self.points {
            if p.speed() > HEADING_SPEED_FLOOR {
                carry = p.vy.atan2(p.vx);
            }
            out.push(carry);
        }
        out
    }

    /// Flattens to step-major `[x0, y0, vx0, vy0, x1, ...]`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.points.len() * 4);
        for p in &self.points {
            out.extend_from_slice(&[p.x, p.y, p.vx, p.vy]);
        }
        out
    }

    /// Inverse of [`Trajectory::to_flat`]; `flat.len()` must be a multiple of 4.
    pub fn from_flat(flat: &[f64]) -> Self {
        assert!(flat.len() % 4 == 0, "flat trajectory length must be 4*H");
        let points = flat
            .chunks_exact(4)
            .map(|c| Waypoint::new(c[0], c[1], c[2], c[3]))
            .collect();
        Self::new(points)
    }

    /// Rigid transform from a local frame at `(x, y, heading)` into the
    /// parent frame.
    pub fn to_world(&self, x: f64, y: f64, heading: f64) -> Trajectory {
        let (sin, cos) = heading.sin_cos();
        let points = self
            .points
            .iter()
            .map(|p| Waypoint {
                x: x + p.x * cos - p.y * sin,
                y: y + p.x * sin + p.y * cos,
                vx: p.vx * cos - p.vy * sin,
                vy: p.vx * sin + p.vy * cos,
            })
            .collect();
        Trajectory::new(points)
    }

    /// Rigid transform of world-frame points into the local frame at
    /// `(x, y, heading)`.
    pub fn to_local(&self, x: f64, y: f64, heading: f64) -> Trajectory {
        let (sin, cos) = heading.sin_cos();
        let points = self
            .points
            .iter()
            .map(|p| {
                let dx = p.x - x;
                let dy = p.y - y;
                Waypoint {
                    x: dx * cos + dy * sin,
                    y: -dx * sin + dy * cos,
                    vx: p.vx * cos + p.vy * sin,
                    vy: -p.vx * sin + p.vy * cos,
                }
            })
            .collect();
        Trajectory::new(points)
    }
}

/// Per-step unit tangent/normal pairs of a reference trajectory.
///
/// Normals point left of the tangent (tangent rotated +90 degrees).
#[derive(Debug, Clone, PartialEq)]
pub struct FrenetFrame {
    pub tangents: Vec<[f64; 2]>,
    pub normals: Vec<[f64; 2]>,
    /// Set when the reference was degenerate (all points coincident); the
    /// tangent then defaults to `(1, 0)`.
    pub degenerate: bool,
}

impl FrenetFrame {
    pub fn len(&self) -> usize {
        self.tangents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tangents.is_empty()
    }
}

/// Builds the Frenet frame of a reference trajectory.
///
/// The tangent at step `t` is the normalized direction from point `t` to
/// `t + 1`; the last step reuses the previous tangent. Steps whose forward
/// difference is (numerically) zero also reuse the previous tangent.
pub fn frenet_frame(reference: &Trajectory) -> FrenetFrame {
    let pts = reference.points();
    let n = pts.len();
    let mut raw: Vec<Option<[f64; 2]>> = Vec::with_capacity(n);
    for t in 0..n {
        if t + 1 < n {
            let dx = pts[t + 1].x - pts[t].x;
            let dy = pts[t + 1].y - pts[t].y;
            let norm = dx.hypot(dy);
            raw.push((norm > 1e-12).then(|| [dx / norm, dy / norm]));
        } else {
            raw.push(None); // last step reuses previous
        }
    }
    let degenerate = raw.iter().all(Option::is_none);
    let first_real = raw.iter().flatten().next().copied().unwrap_or([1.0, 0.0]);
    let mut tangents = Vec::with_capacity(n);
    let mut carry = first_real;
    for dir in raw {
        if let Some(d) = dir {
            carry = d;
        }
        tangents.push(carry);
    }
    let normals = tangents.iter().map(|t| [-t[1], t[0]]).collect();
    FrenetFrame { tangents, normals, degenerate }
}

/// Axis-aligned-in-body rectangle with a world pose; the collision footprint
/// for ego and agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub cx: f64,
    pub cy: f64,
    pub heading: f64,
    pub length: f64,
    pub width: f64,
}

impl OrientedBox {
    pub fn new(cx: f64, cy: f64, heading: f64, length: f64, width: f64) -> Self {
        Self { cx, cy, heading, length, width }
    }

    pub fn axes(&self) -> [[f64; 2]; 2] {
        let (sin, cos) = self.heading.sin_cos();
        [[cos, sin], [-sin, cos]]
    }

    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [ax, ay] = self.axes();
        let hl = 0.5 * self.length;
        let hw = 0.5 * self.width;
        let lx = [ax[0] * hl, ax[1] * hl];
        let wx = [ay[0] * hw, ay[1] * hw];
        [
            [self.cx + lx[0] + wx[0], self.cy + lx[1] + wx[1]],
            [self.cx + lx[0] - wx[0], self.cy + lx[1] - wx[1]],
            [self.cx - lx[0] - wx[0], self.cy - lx[1] - wx[1]],
            [self.cx - lx[0] + wx[0], self.cy - lx[1] + wx[1]],
        ]
    }

    fn project(&self, axis: [f64; 2]) -> (f64, f64) {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for c in self.corners() {
            let p = c[0] * axis[0] + c[1] * axis[1];
            min = min.min(p);
            max = max.max(p);
        }
        (min, max)
    }

    /// Separating-axis overlap test for two oriented rectangles.
    pub fn overlaps(&self, other: &OrientedBox) -> bool {
        for axis in self.axes().iter().chain(other.axes().iter()) {
            let (min_a, max_a) = self.project(*axis);
            let (min_b, max_b) = other.project(*axis);
            if max_a < min_b || max_b < min_a {
                return false;
            }
        }
        true
    }

    pub fn contains_point(&self, p: [f64; 2]) -> bool {
        let [ax, ay] = self.axes();
        let dx = p[0] - self.cx;
        let dy = p[1] - self.cy;
        let u = dx * ax[0] + dy * ax[1];
        let v = dx * ay[0] + dy * ay[1];
        u.abs() <= 0.5 * self.length && v.abs() <= 0.5 * self.width
    }
}

/// Scene and navigation feature vectors conditioning the denoiser and the
/// exploration policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneEmbedding {
    pub scene: Vec<f64>,
    pub navi: Vec<f64>,
}

/// Even-odd point-in-polygon test. Points on an edge are treated as inside
/// within a small tolerance so that shared lane boundaries do not flicker.
pub fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let [xi, yi] = poly[i];
        let [xj, yj] = poly[j];
        // edge proximity counts as inside
        if dist_point_segment(p, [xi, yi], [xj, yj]) < 1e-9 {
            return true;
        }
        if (yi > p[1]) != (yj > p[1]) {
            let x_cross = xi + (p[1] - yi) / (yj - yi) * (xj - xi);
            if p[0] < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

pub fn dist_point_segment(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let abx = b[0] - a[0];
    let aby = b[1] - a[1];
    let apx = p[0] - a[0];
    let apy = p[1] - a[1];
    let len2 = abx * abx + aby * aby;
    let t = if len2 > 0.0 { ((apx * abx + apy * aby) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let cx = a[0] + t * abx - p[0];
    let cy = a[1] + t * aby - p[1];
    cx.hypot(cy)
}

/// Polyline with cached cumulative arclength, used for route progress and
/// centerline projections.
#[derive(Debug, Clone)]
pub struct Polyline {
    pts: Vec<[f64; 2]>,
    cum: Vec<f64>,
}

impl Polyline {
    pub fn new(pts: Vec<[f64; 2]>) -> Self {
        assert!(pts.len() >= 2, "polyline needs at least two points");
        let mut cum = Vec::with_capacity(pts.len());
        let mut s = 0.0;
        cum.push(0.0);
        for w in pts.windows(2) {
            s += (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
            cum.push(s);
        }
        Self { pts, cum }
    }

    pub fn total_length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.pts
    }

    /// Arclength of the closest point on the polyline to `p`.
    pub fn project_arclength(&self, p: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        let mut best_s = 0.0;
        for i in 0..self.pts.len() - 1 {
            let a = self.pts[i];
            let b = self.pts[i + 1];
            let abx = b[0] - a[0];
            let aby = b[1] - a[1];
            let len2 = abx * abx + aby * aby;
            let t = if len2 > 0.0 {
                (((p[0] - a[0]) * abx + (p[1] - a[1]) * aby) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let cx = a[0] + t * abx - p[0];
            let cy = a[1] + t * aby - p[1];
            let d = cx * cx + cy * cy;
            if d < best {
                best = d;
                best_s = self.cum[i] + t * len2.sqrt();
            }
        }
        best_s
    }

    /// Lateral distance from `p` to the polyline.
    pub fn distance_to(&self, p: [f64; 2]) -> f64 {
        let mut best = f64::INFINITY;
        for w in self.pts.windows(2) {
            best = best.min(dist_point_segment(p, w[0], w[1]));
        }
        best
    }

    /// Point at arclength `s` (clamped to the ends).
    pub fn point_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.total_length());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        };
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        let a = self.pts[i];
        let b = self.pts[i + 1];
        [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
    }

    /// Unit tangent at arclength `s`.
    pub fn tangent_at(&self, s: f64) -> [f64; 2] {
        let s = s.clamp(0.0, self.total_length());
        let i = match self.cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        };
        let a = self.pts[i];
        let b = self.pts[i + 1];
        let dx = b[0] - a[0];
        let dy = b[1] - a[1];
        let n = dx.hypot(dy);
        if n > 0.0 {
            [dx / n, dy / n]
        } else {
            [1.0, 0.0]
        }
    }
}
