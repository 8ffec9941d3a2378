//! Vehicle dynamics: kinematic bicycle integration and the two-stage
//! trajectory tracker (decoupled lateral/longitudinal LQR feeding the
//! bicycle model).

use crate::geom::{frenet_frame, wrap_angle, EgoState, Trajectory};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("Riccati iteration did not converge after {0} iterations")]
    RiccatiDiverged(usize),
    #[error("batch length mismatch: {states} states vs {plans} plans")]
    BatchLength { states: usize, plans: usize },
    #[error("matrix dimensions inconsistent: {0}")]
    BadDimensions(String),
}

/// Commanded longitudinal acceleration and steering angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub accel: f64,
    pub steer: f64,
}

impl Control {
    pub const ZERO: Control = Control { accel: 0.0, steer: 0.0 };

    pub fn clamped(self, p: &BicycleParams) -> Control {
        Control {
            accel: self.accel.clamp(-p.accel_max, p.accel_max),
            steer: self.steer.clamp(-p.steer_max, p.steer_max),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BicycleParams {
    pub wheelbase: f64,
    pub accel_max: f64,
    pub steer_max: f64,
}

impl Default for BicycleParams {
    fn default() -> Self {
        Self { wheelbase: 3.089, accel_max: 4.0, steer_max: 0.6 }
    }
}

/// Tracker configuration. The lateral loop regulates (lateral offset,
/// heading error); the longitudinal loop regulates velocity error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrConfig {
    pub q_lat: [[f64; 2]; 2],
    pub r_lat: f64,
    pub q_lon: f64,
    pub r_lon: f64,
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
    pub bicycle: BicycleParams,
}

impl Default for LqrConfig {
    fn default() -> Self {
        Self {
            q_lat: [[1.0, 0.0], [0.0, 2.0]],
            r_lat: 8.0,
            q_lon: 1.0,
            r_lon: 2.0,
            riccati_tol: 1e-9,
            riccati_max_iter: 10_000,
            bicycle: BicycleParams::default(),
        }
    }
}

/// One kinematic bicycle step. Controls are clamped to bounds before
/// integration; heading stays wrapped and speed stays non-negative.
pub fn bicycle_step(state: &EgoState, u: Control, dt: f64, p: &BicycleParams) -> EgoState {
    let u = u.clamped(p);
    let EgoState { x, y, heading, speed, .. } = *state;
    EgoState {
        x: x + speed * heading.cos() * dt,
        y: y + speed * heading.sin() * dt,
        heading: wrap_angle(heading + speed * u.steer.tan() / p.wheelbase * dt),
        speed: (speed + u.accel * dt).max(0.0),
        accel: u.accel,
        steer: u.steer,
    }
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration
/// and returns the LQR gain `K = (R + B'PB)^-1 B'PA`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>, DynamicsError> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n || r.nrows() != m || r.ncols() != m {
        return Err(DynamicsError::BadDimensions(format!(
            "A {}x{}, B {}x{}, Q {}x{}, R {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols(),
            q.nrows(),
            q.ncols(),
            r.nrows(),
            r.ncols()
        )));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    for _ in 0..max_iter {
        let rb = r + &bt * &p * b;
        let inv = rb
            .try_inverse()
            .ok_or_else(|| DynamicsError::BadDimensions("R + B'PB singular".into()))?;
        let p_next = &at * &p * a - &at * &p * b * &inv * &bt * &p * a + q;
        let delta = (&p_next - &p).abs().max();
        p = p_next;
        if delta < tol {
            let rb = r + &bt * &p * b;
            let inv = rb
                .try_inverse()
                .ok_or_else(|| DynamicsError::BadDimensions("R + B'PB singular".into()))?;
            return Ok(inv * &bt * &p * a);
        }
    }
    Err(DynamicsError::RiccatiDiverged(max_iter))
}

/// Tracker output; `degenerate` flags a plan the tracker could not use.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedControl {
    pub control: Control,
    pub degenerate: bool,
}

#[derive(Clone, Copy)]
struct Gains {
    k_lat: [f64; 2],
    k_lon: f64,
}

thread_local! {
    // gain cache keyed by (config bits, speed bucket); the error-state
    // matrices depend on speed, so one entry per 0.25 m/s bucket
    static GAIN_CACHE: RefCell<HashMap<(u64, i64), Gains>> = RefCell::new(HashMap::new());
}

fn config_key(cfg: &LqrConfig) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: f64| {
        h ^= v.to_bits();
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    };
    for row in cfg.q_lat {
        for v in row {
            mix(v);
        }
    }
    mix(cfg.r_lat);
    mix(cfg.q_lon);
    mix(cfg.r_lon);
    mix(cfg.bicycle.wheelbase);
    h
}

fn gains_for(cfg: &LqrConfig, speed: f64, dt: f64) -> Gains {
    let bucket = (speed / 0.25).round() as i64;
    let key = (config_key(cfg), bucket);
    GAIN_CACHE.with(|cache| {
        if let Some(g) = cache.borrow().get(&key) {
            return *g;
        }
        let v = (bucket as f64 * 0.25).max(0.5);
        // lateral error state: [offset, heading error]
        let a = DMatrix::from_row_slice(2, 2, &[1.0, v * dt, 0.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, v * dt / cfg.bicycle.wheelbase]);
        let q = DMatrix::from_row_slice(
            2,
            2,
            &[cfg.q_lat[0][0], cfg.q_lat[0][1], cfg.q_lat[1][0], cfg.q_lat[1][1]],
        );
        let r = DMatrix::from_element(1, 1, cfg.r_lat);
        let k = solve_dare(&a, &b, &q, &r, cfg.riccati_tol, cfg.riccati_max_iter)
            .expect("lateral DARE must converge for a controllable pair");
        // longitudinal: scalar velocity error
        let k_lon = solve_dare(
            &DMatrix::from_element(1, 1, 1.0),
            &DMatrix::from_element(1, 1, dt),
            &DMatrix::from_element(1, 1, cfg.q_lon),
            &DMatrix::from_element(1, 1, cfg.r_lon),
            cfg.riccati_tol,
            cfg.riccati_max_iter,
        )
        .expect("longitudinal DARE must converge")[(0, 0)];
        let g = Gains { k_lat: [k[(0, 0)], k[(0, 1)]], k_lon };
        cache.borrow_mut().insert(key, g);
        g
    })
}

/// Two-stage tracking law: errors are measured at the first plan step, the
/// lateral LQR maps (offset, heading error) in the plan's Frenet frame to
/// steering, and the longitudinal LQR maps velocity error to acceleration.
pub fn lqr_track(state: &EgoState, plan: &Trajectory, cfg: &LqrConfig) -> TrackedControl {
    let dt = plan.dt();
    if plan.len() < 2 {
        return TrackedControl { control: Control::ZERO, degenerate: true };
    }
    let frame = frenet_frame(plan);
    if frame.degenerate {
        return TrackedControl { control: Control::ZERO, degenerate: true };
    }
    let target = plan.point(0);
    let n_perp = frame.normals[0];
    let tangent = frame.tangents[0];
    let e_lat = (state.x - target.x) * n_perp[0] + (state.y - target.y) * n_perp[1];
    let plan_heading = tangent[1].atan2(tangent[0]);
    let e_head = wrap_angle(state.heading - plan_heading);
    let e_v = state.speed - target.speed();

    let g = gains_for(cfg, state.speed, dt);
    let control = Control {
        accel: -g.k_lon * e_v,
        steer: -(g.k_lat[0] * e_lat + g.k_lat[1] * e_head),
    }
    .clamped(&cfg.bicycle);
    TrackedControl { control, degenerate: false }
}

/// Batched tracking, elementwise identical to [`lqr_track`].
pub fn track_batch(
    states: &[EgoState],
    plans: &[Trajectory],
    cfg: &LqrConfig,
) -> Result<Vec<TrackedControl>, DynamicsError> {
    if states.len() != plans.len() {
        return Err(DynamicsError::BatchLength { states: states.len(), plans: plans.len() });
    }
    Ok(states.iter().zip(plans).map(|(s, p)| lqr_track(s, p, cfg)).collect())
}
