//! Deterministic SVG rendering of scenarios and rollouts: lane polygons in
//! gray with blue centerlines, the route highlighted, agents in black
//! (pedestrians and cyclists purple), statics in red, the ego in orange,
//! planned trajectories in orange, and the expert path in blue.

use crate::geom::{OrientedBox, Trajectory};
use crate::scenario::{AgentKind, Scenario};
use std::fmt::Write;

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    /// Square canvas edge, pixels.
    pub size_px: f64,
    /// Half-width of the world window around the ego, meters.
    pub view_radius: f64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self { size_px: 800.0, view_radius: 120.0 }
    }
}

/// Overlay content drawn on top of the world.
#[derive(Default)]
pub struct RenderOverlays<'a> {
    /// Candidate plans (world frame), drawn as orange polylines.
    pub plans: &'a [Trajectory],
    /// Reference trajectory, drawn as a dashed dark-blue polyline.
    pub reference: Option<&'a Trajectory>,
    /// Draw the expert future from the rendered frame.
    pub show_expert: bool,
}

struct Canvas {
    svg: String,
    cx: f64,
    cy: f64,
    scale: f64,
    size: f64,
}

impl Canvas {
    fn map(&self, p: [f64; 2]) -> (f64, f64) {
        (
            (p[0] - self.cx) * self.scale + self.size / 2.0,
            self.size / 2.0 - (p[1] - self.cy) * self.scale,
        )
    }

    fn polygon(&mut self, pts: &[[f64; 2]], fill: &str, stroke: &str) {
        let mut d = String::new();
        for p in pts {
            let (x, y) = self.map(*p);
            let _ = write!(d, "{x:.2},{y:.2} ");
        }
        let _ = writeln!(
            self.svg,
            "<polygon points=\"{}\" fill=\"{}\" stroke=\"{}\" stroke-width=\"1\"/>",
            d.trim_end(),
            fill,
            stroke
        );
    }

    fn polyline(&mut self, pts: impl Iterator<Item = [f64; 2]>, stroke: &str, width: f64, dashed: bool) {
        let mut d = String::new();
        for p in pts {
            let (x, y) = self.map(p);
            let _ = write!(d, "{x:.2},{y:.2} ");
        }
        let dash = if dashed { " stroke-dasharray=\"6 4\"" } else { "" };
        let _ = writeln!(
            self.svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"{width:.1}\"{dash}/>",
            d.trim_end(),
            stroke
        );
    }

    fn oriented_box(&mut self, b: &OrientedBox, fill: &str) {
        let corners = b.corners();
        self.polygon(&corners, fill, "none");
    }
}

/// Renders one frame as an SVG document. Identical inputs produce
/// byte-identical output.
pub fn render_frame(
    scenario: &Scenario,
    frame: usize,
    overlays: &RenderOverlays,
    opts: &RenderOptions,
) -> String {
    assert!(frame < scenario.frame_count(), "frame out of range");
    let ego = scenario.ego_log[frame];
    let size = opts.size_px;
    let mut canvas = Canvas {
        svg: String::new(),
        cx: ego.x,
        cy: ego.y,
        scale: size / (2.0 * opts.view_radius),
        size,
    };
    let _ = writeln!(
        canvas.svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {size:.0} {size:.0}\">"
    );
    let _ = writeln!(
        canvas.svg,
        "<rect x=\"0\" y=\"0\" width=\"{size:.0}\" height=\"{size:.0}\" fill=\"#f7f7f7\"/>"
    );

    // lanes: gray polygons, route lanes highlighted with a red edge
    for lane in &scenario.lanes {
        let on_route = scenario.route.contains(&lane.id);
        let stroke = if on_route { "#d04040" } else { "#bbbbbb" };
        canvas.polygon(&lane.polygon, "#d9d9d9", stroke);
    }
    for lane in &scenario.lanes {
        canvas.polyline(lane.centerline.iter().copied(), "#7799dd", 1.0, false);
    }

    for b in &scenario.statics {
        canvas.oriented_box(b, "#d03030");
    }
    for agent in &scenario.agents {
        if let Some(b) = agent.box_at(frame) {
            let fill = match agent.kind {
                AgentKind::Vehicle => "#222222",
                AgentKind::Pedestrian | AgentKind::Cyclist => "#9500ff",
            };
            canvas.oriented_box(&b, fill);
        }
    }

    if overlays.show_expert {
        canvas.polyline(
            scenario.ego_log[frame..].iter().map(|e| [e.x, e.y]),
            "#2255cc",
            2.0,
            false,
        );
    }
    if let Some(reference) = overlays.reference {
        canvas.polyline(reference.points().iter().map(|p| [p.x, p.y]), "#334488", 1.5, true);
    }
    for plan in overlays.plans {
        canvas.polyline(plan.points().iter().map(|p| [p.x, p.y]), "#ff8800", 2.0, false);
    }

    // ego on top
    let ego_box = OrientedBox::new(ego.x, ego.y, ego.heading, 4.6, 1.9);
    canvas.oriented_box(&ego_box, "#ff8800");

    canvas.svg.push_str("</svg>\n");
    canvas.svg
}
