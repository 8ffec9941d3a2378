//! Lateral and longitudinal guidance energies with closed-form gradients,
//! and the guidance application shared by the sampler and the trajectory
//! update (including its exact linear backward rule).

use super::denoiser::TrajNorm;
use crate::geom::{FrenetFrame, Trajectory};
use crate::nn::{Arr, CustomOp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnergyError {
    #[error("length mismatch: trajectory {x} vs reference {reference} vs frame {frame}")]
    LengthMismatch { x: usize, reference: usize, frame: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    /// Maximum lateral offset target, meters.
    pub lambda_lat: f64,
    /// Maximum relative speed target, fraction of the reference speed.
    pub lambda_lon: f64,
    /// Scale on the injected energy gradient, constant across denoising
    /// steps.
    pub guide_step: f64,
    pub enable_lat: bool,
    pub enable_lon: bool,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { lambda_lat: 2.5, lambda_lon: 0.25, guide_step: 1.0, enable_lat: true, enable_lon: true }
    }
}

/// Bounded guidance scales selecting the energy targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceScales {
    pub eta_lat: f64,
    pub eta_lon: f64,
}

impl GuidanceScales {
    /// Clamps into the valid `[-1, 1]` range.
    pub fn new(eta_lat: f64, eta_lon: f64) -> Self {
        Self { eta_lat: eta_lat.clamp(-1.0, 1.0), eta_lon: eta_lon.clamp(-1.0, 1.0) }
    }

    pub const ZERO: GuidanceScales = GuidanceScales { eta_lat: 0.0, eta_lon: 0.0 };
}

/// Lateral energy: mean squared deviation of the signed lateral offset from
/// its target `lambda_lat * eta_lat`. Returns the value and the gradient
/// with respect to the waypoint positions.
pub fn energy_lat(
    x: &Trajectory,
    reference: &Trajectory,
    frame: &FrenetFrame,
    eta_lat: f64,
    cfg: &GuidanceConfig,
) -> Result<(f64, Vec<[f64; 2]>), EnergyError> {
    let t = x.len();
    if reference.len() != t || frame.len() != t {
        return Err(EnergyError::LengthMismatch {
            x: t,
            reference: reference.len(),
            frame: frame.len(),
        });
    }
    let target = cfg.lambda_lat * eta_lat;
    let inv_t = 1.0 / t as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(t);
    for tau in 0..t {
        let n = frame.normals[tau];
        let dx = x.point(tau).x - reference.point(tau).x;
        let dy = x.point(tau).y - reference.point(tau).y;
        let resid = n[0] * dx + n[1] * dy - target;
        value += resid * resid * inv_t;
        let c = 2.0 * inv_t * resid;
        grad.push([c * n[0], c * n[1]]);
    }
    Ok((value, grad))
}

/// Longitudinal energy: mean squared tangential component of the deviation
/// of per-step velocity from its target `lambda_lon * eta_lon * v_ref`.
/// Returns the value and the gradient with respect to the velocities.
pub fn energy_lon(
    v: &[[f64; 2]],
    v_ref: &[[f64; 2]],
    frame: &FrenetFrame,
    eta_lon: f64,
    cfg: &GuidanceConfig,
) -> Result<(f64, Vec<[f64; 2]>), EnergyError> {
    let t = v.len();
    if v_ref.len() != t || frame.len() != t {
        return Err(EnergyError::LengthMismatch { x: t, reference: v_ref.len(), frame: frame.len() });
    }
    let scale = cfg.lambda_lon * eta_lon;
    let inv_t = 1.0 / t as f64;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(t);
    for tau in 0..t {
        let n = frame.tangents[tau];
        let dvx = v[tau][0] - scale * v_ref[tau][0];
        let dvy = v[tau][1] - scale * v_ref[tau][1];
        let resid = n[0] * dvx + n[1] * dvy;
        value += resid * resid * inv_t;
        let c = 2.0 * inv_t * resid;
        grad.push([c * n[0], c * n[1]]);
    }
    Ok((value, grad))
}

/// Everything needed to evaluate the combined energy gradient on a
/// normalized flat trajectory row.
#[derive(Debug, Clone)]
pub struct GuidanceContext {
    pub reference: Trajectory,
    pub frame: FrenetFrame,
    pub cfg: GuidanceConfig,
    pub norm: TrajNorm,
}

impl GuidanceContext {
    pub fn new(reference: Trajectory, cfg: GuidanceConfig, norm: TrajNorm) -> Self {
        let frame = crate::geom::frenet_frame(&reference);
        Self { reference, frame, cfg, norm }
    }

    pub fn active(&self) -> bool {
        self.cfg.guide_step != 0.0 && (self.cfg.enable_lat || self.cfg.enable_lon)
    }
}

/// Applies one guidance gradient step to a normalized flat trajectory row in
/// place: denormalize, subtract `guide_step` times the physical energy
/// gradient, renormalize. A no-op (bitwise) when guidance is inactive.
pub fn apply_guidance_row(
    row: &mut [f64],
    ctx: &GuidanceContext,
    scales: GuidanceScales,
) {
    if !ctx.active() {
        return;
    }
    let t = ctx.reference.len();
    debug_assert_eq!(row.len(), 4 * t);
    let gs = ctx.cfg.guide_step;
    let inv_t = 1.0 / t as f64;
    let lat_target = ctx.cfg.lambda_lat * scales.eta_lat;
    let lon_scale = ctx.cfg.lambda_lon * scales.eta_lon;
    for tau in 0..t {
        let base = 4 * tau;
        let r = ctx.reference.point(tau);
        if ctx.cfg.enable_lat {
            let n = ctx.frame.normals[tau];
            let px = row[base] * ctx.norm.pos_scale;
            let py = row[base + 1] * ctx.norm.pos_scale;
            let resid = n[0] * (px - r.x) + n[1] * (py - r.y) - lat_target;
            let c = gs * 2.0 * inv_t * resid / ctx.norm.pos_scale;
            row[base] -= c * n[0];
            row[base + 1] -= c * n[1];
        }
        if ctx.cfg.enable_lon {
            let tn = ctx.frame.tangents[tau];
            let vx = row[base + 2] * ctx.norm.vel_scale;
            let vy = row[base + 3] * ctx.norm.vel_scale;
            let resid = tn[0] * (vx - lon_scale * r.vx) + tn[1] * (vy - lon_scale * r.vy);
            let c = gs * 2.0 * inv_t * resid / ctx.norm.vel_scale;
            row[base + 2] -= c * tn[0];
            row[base + 3] -= c * tn[1];
        }
    }
}

/// Tape op for the guided shift `y = x - guide_step * grad(Psi)(x)` on
/// normalized rows. The energies are quadratic, so the Jacobian is constant
/// and the backward rule is exact: `g_x = g_y - guide_step * H g_y` with the
/// scale factors of the normalize/denormalize round trip cancelling.
pub struct GuidedShiftOp {
    pub ctx: GuidanceContext,
    /// Per-row scales; rows of the input map one-to-one onto group members.
    pub scales: Vec<GuidanceScales>,
}

impl CustomOp for GuidedShiftOp {
    fn forward(&self, x: &Arr) -> Arr {
        let mut y = x.clone();
        for (k, mut row) in y.rows_mut().into_iter().enumerate() {
            let slice = row.as_slice_mut().expect("contiguous row");
            apply_guidance_row(slice, &self.ctx, self.scales[k]);
        }
        y
    }

    fn backward(&self, _x: &Arr, _y: &Arr, grad_y: &Arr) -> Arr {
        if !self.ctx.active() {
            return grad_y.clone();
        }
        let t = self.ctx.reference.len();
        let gs = self.ctx.cfg.guide_step;
        let inv_t = 1.0 / t as f64;
        let mut gx = grad_y.clone();
        for mut row in gx.rows_mut() {
            for tau in 0..t {
                let base = 4 * tau;
                if self.ctx.cfg.enable_lat {
                    let n = self.ctx.frame.normals[tau];
                    let dot = n[0] * row[base] + n[1] * row[base + 1];
                    let c = gs * 2.0 * inv_t * dot;
                    row[base] -= c * n[0];
                    row[base + 1] -= c * n[1];
                }
                if self.ctx.cfg.enable_lon {
                    let tn = self.ctx.frame.tangents[tau];
                    let dot = tn[0] * row[base + 2] + tn[1] * row[base + 3];
                    let c = gs * 2.0 * inv_t * dot;
                    row[base + 2] -= c * tn[0];
                    row[base + 3] -= c * tn[1];
                }
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{frenet_frame, Waypoint, SIM_DT};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_ref(n: usize, speed: f64) -> Trajectory {
        let pts = (0..n)
            .map(|i| Waypoint::new(speed * SIM_DT * (i + 1) as f64, 0.0, speed, 0.0))
            .collect();
        Trajectory::new(pts)
    }

    fn rand_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let pts = (0..n)
            .map(|_| {
                Waypoint::new(
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-20.0..20.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                )
            })
            .collect();
        Trajectory::new(pts)
    }

    #[test]
    fn lateral_zero_cases() {
        let cfg = GuidanceConfig::default();
        let reference = straight_ref(20, 8.0);
        let frame = frenet_frame(&reference);
        let (v, g) = energy_lat(&reference, &reference, &frame, 0.0, &cfg).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|g| g[0] == 0.0 && g[1] == 0.0));

        // offset exactly at the target
        let eta = 0.7;
        let target = cfg.lambda_lat * eta;
        let shifted = Trajectory::new(
            reference
                .points()
                .iter()
                .zip(&frame.normals)
                .map(|(p, n)| Waypoint::new(p.x + target * n[0], p.y + target * n[1], p.vx, p.vy))
                .collect(),
        );
        let (v, _) = energy_lat(&shifted, &reference, &frame, eta, &cfg).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-24);
    }

    #[test]
    fn longitudinal_zero_cases() {
        let cfg = GuidanceConfig::default();
        let reference = straight_ref(20, 8.0);
        let frame = frenet_frame(&reference);
        let v_ref: Vec<[f64; 2]> = reference.points().iter().map(|p| [p.vx, p.vy]).collect();
        let eta = -0.4;
        let scaled: Vec<[f64; 2]> = v_ref
            .iter()
            .map(|v| [cfg.lambda_lon * eta * v[0], cfg.lambda_lon * eta * v[1]])
            .collect();
        let (val, _) = energy_lon(&scaled, &v_ref, &frame, eta, &cfg).unwrap();
        assert_abs_diff_eq!(val, 0.0, epsilon = 1e-24);

        // zero target with zero velocity
        let zeros = vec![[0.0, 0.0]; 20];
        let (val, g) = energy_lon(&zeros, &v_ref, &frame, 0.0, &cfg).unwrap();
        assert_eq!(val, 0.0);
        assert!(g.iter().all(|g| g[0] == 0.0 && g[1] == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        let cfg = GuidanceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // the energies are quadratic, so central differences carry no
        // truncation error and a generous step keeps roundoff far below the
        // 1e-6 relative target
        let h = 1e-3;
        for _ in 0..200 {
            let n = rng.random_range(3..12);
            let reference = rand_traj(&mut rng, n);
            let frame = frenet_frame(&reference);
            let x = rand_traj(&mut rng, n);
            let eta: f64 = rng.random_range(-1.0..1.0);

            let (_, grad) = energy_lat(&x, &reference, &frame, eta, &cfg).unwrap();
            for tau in 0..n {
                for axis in 0..2 {
                    let perturb = |delta: f64| {
                        let mut pts = x.points().to_vec();
                        if axis == 0 {
                            pts[tau].x += delta;
                        } else {
                            pts[tau].y += delta;
                        }
                        energy_lat(&Trajectory::new(pts), &reference, &frame, eta, &cfg)
                            .unwrap()
                            .0
                    };
                    let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                    let an = grad[tau][axis];
                    let denom = fd.abs().max(an.abs()).max(1e-3);
                    assert!((fd - an).abs() / denom < 1e-6, "lat fd {fd} vs {an}");
                }
            }

            let v: Vec<[f64; 2]> = x.points().iter().map(|p| [p.vx, p.vy]).collect();
            let v_ref: Vec<[f64; 2]> = reference.points().iter().map(|p| [p.vx, p.vy]).collect();
            let (_, grad) = energy_lon(&v, &v_ref, &frame, eta, &cfg).unwrap();
            for tau in 0..n {
                for axis in 0..2 {
                    let perturb = |delta: f64| {
                        let mut vv = v.clone();
                        vv[tau][axis] += delta;
                        energy_lon(&vv, &v_ref, &frame, eta, &cfg).unwrap().0
                    };
                    let fd = (perturb(h) - perturb(-h)) / (2.0 * h);
                    let an = grad[tau][axis];
                    let denom = fd.abs().max(an.abs()).max(1e-3);
                    assert!((fd - an).abs() / denom < 1e-6, "lon fd {fd} vs {an}");
                }
            }
        }
    }

    #[test]
    fn lateral_energy_translation_invariant() {
        let cfg = GuidanceConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = 8;
            let reference = rand_traj(&mut rng, n);
            let frame = frenet_frame(&reference);
            let x = rand_traj(&mut rng, n);
            let eta: f64 = rng.random_range(-1.0..1.0);
            let (v0, g0) = energy_lat(&x, &reference, &frame, eta, &cfg).unwrap();

            let shift = [rng.random_range(-100.0..100.0), rng.random_range(-100.0..100.0)];
            let translate = |t: &Trajectory| {
                Trajectory::new(
                    t.points()
                        .iter()
                        .map(|p| Waypoint::new(p.x + shift[0], p.y + shift[1], p.vx, p.vy))
                        .collect(),
                )
            };
            // the frame comes from the translated reference: tangents are
            // unchanged by translation, so the frame is identical; the value
            // is invariant up to the rounding of the shifted differences
            let (v1, g1) =
                energy_lat(&translate(&x), &translate(&reference), &frame, eta, &cfg).unwrap();
            assert_abs_diff_eq!(v1, v0, epsilon = 1e-11 * v0.abs().max(1.0));
            for (a, b) in g0.iter().zip(&g1) {
                assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-11);
                assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let cfg = GuidanceConfig::default();
        let a = straight_ref(10, 5.0);
        let b = straight_ref(8, 5.0);
        let frame = frenet_frame(&a);
        assert!(matches!(
            energy_lat(&b, &a, &frame, 0.0, &cfg),
            Err(EnergyError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn guided_shift_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 6;
        let reference = rand_traj(&mut rng, n);
        let ctx = GuidanceContext::new(
            reference,
            GuidanceConfig { guide_step: 0.8, ..GuidanceConfig::default() },
            TrajNorm::default(),
        );
        let scales = vec![GuidanceScales::new(0.6, -0.3), GuidanceScales::new(-1.0, 1.0)];
        let op = GuidedShiftOp { ctx, scales };

        let x = Arr::from_shape_fn((2, 4 * n), |_| rng.random_range(-1.0..1.0));
        let w = Arr::from_shape_fn((2, 4 * n), |_| rng.random_range(-1.0..1.0));
        // scalar loss: sum(w * op(x))
        let loss = |x: &Arr| (&op.forward(x) * &w).sum();
        let y = op.forward(&x);
        let gx = op.backward(&x, &y, &w);
        let h = 1e-6;
        for r in 0..2 {
            for c in 0..4 * n {
                let mut xp = x.clone();
                xp[[r, c]] += h;
                let fp = loss(&xp);
                xp[[r, c]] -= 2.0 * h;
                let fm = loss(&xp);
                let fd = (fp - fm) / (2.0 * h);
                assert_abs_diff_eq!(gx[[r, c]], fd, epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn inactive_guidance_is_bitwise_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let reference = rand_traj(&mut rng, 10);
        let ctx = GuidanceContext::new(
            reference,
            GuidanceConfig { guide_step: 0.0, ..GuidanceConfig::default() },
            TrajNorm::default(),
        );
        let mut row: Vec<f64> = (0..40).map(|_| rng.random_range(-1.0..1.0)).collect();
        let before = row.clone();
        apply_guidance_row(&mut row, &ctx, GuidanceScales::new(1.0, -1.0));
        assert!(row.iter().zip(&before).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
