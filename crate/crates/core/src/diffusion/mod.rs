//! Diffusion planner internals: the variance-preserving noise schedule, the
//! stochastic short-chain sampler with energy-based guidance, the compact
//! denoiser, the trajectory-group sampler, and the footprint diversity
//! metric.

mod denoiser;
mod diversity;
mod energy;
mod sampler;

pub use denoiser::{
    pretrain_loss, pretrain_loss_batch, pretrain_loss_given, row_to_trajectory,
    timestep_embedding, trajectories_to_rows, Conditioning, Denoiser, DenoiserBinding,
    DenoiserConfig, DenoiserModel, TrajNorm,
};
pub use diversity::diversity_score;
pub use energy::{
    apply_guidance_row, energy_lat, energy_lon, EnergyError, GuidanceConfig, GuidanceContext,
    GuidanceScales, GuidedShiftOp,
};
pub use sampler::{
    ddim_step_rows, guided_sample_group, sample_trajectory, ChainRecord, GroupGuidance,
    GroupMember, StepResult, TrajectoryGroup,
};

use serde::{Deserialize, Serialize};

/// Training-time diffusion discretization depth.
pub const TRAIN_STEPS: usize = 1000;

/// Inference noise schedule: cumulative-product alphas of a linear-beta
/// variance-preserving schedule, subsampled to a short denoising chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// Denoising steps `S`; latents run `x_S .. x_0`.
    pub steps: usize,
    /// `alpha_bar[s]` for `s = 0..=S`; decreasing in `s`, near 1 at `s = 0`.
    pub alpha_bar: Vec<f64>,
    /// Training timestep backing each inference step `s = 1..=S`.
    pub timesteps: Vec<usize>,
    /// Stochasticity: 0 is deterministic sampling, 1 full training noise.
    pub eta_ddim: f64,
    /// Use the textbook variance (with the extra `1 - a_s/a_{s-1}` factor)
    /// instead of the plain ratio form.
    pub canonical_variance: bool,
}

/// Cumulative-product alphas of the full linear-beta training schedule.
pub fn train_alpha_bar() -> Vec<f64> {
    let beta_start = 1e-4;
    let beta_end = 0.02;
    let mut out = Vec::with_capacity(TRAIN_STEPS);
    let mut prod = 1.0;
    for t in 0..TRAIN_STEPS {
        let beta = beta_start + (beta_end - beta_start) * t as f64 / (TRAIN_STEPS - 1) as f64;
        prod *= 1.0 - beta;
        out.push(prod);
    }
    out
}

impl NoiseSchedule {
    /// Evenly subsampled schedule with `steps` inference steps.
    ///
    /// `final_alpha_one` pins `alpha_bar[0]` to exactly 1 so the last
    /// denoising step returns the predicted clean sample; leaving it false
    /// keeps the training-schedule value (within tolerance of 1) so the last
    /// transition stays stochastic under `eta_ddim = 1`.
    pub fn vp_linear(steps: usize, eta_ddim: f64, final_alpha_one: bool) -> Self {
        assert!(steps >= 1 && steps <= TRAIN_STEPS);
        let train = train_alpha_bar();
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(if final_alpha_one { 1.0 } else { train[0] });
        let mut timesteps = Vec::with_capacity(steps);
        for s in 1..=steps {
            let t = s * TRAIN_STEPS / steps - 1;
            timesteps.push(t);
            alpha_bar.push(train[t]);
        }
        let sch = Self { steps, alpha_bar, timesteps, eta_ddim, canonical_variance: false };
        sch.assert_valid();
        sch
    }

    fn assert_valid(&self) {
        assert_eq!(self.alpha_bar.len(), self.steps + 1);
        for s in 1..=self.steps {
            assert!(
                self.alpha_bar[s] < self.alpha_bar[s - 1],
                "alpha_bar must decrease in s"
            );
        }
        assert!(self.alpha_bar[0] > 0.999, "alpha_bar[0] must be 1 within tolerance");
    }

    /// Per-step noise scale for the transition `x_s -> x_{s-1}`.
    pub fn sigma(&self, s: usize) -> f64 {
        debug_assert!(s >= 1 && s <= self.steps);
        let ab_prev = self.alpha_bar[s - 1];
        let ab_s = self.alpha_bar[s];
        let base = self.eta_ddim * ((1.0 - ab_prev) / (1.0 - ab_s)).sqrt();
        if self.canonical_variance {
            base * (1.0 - ab_s / ab_prev).sqrt()
        } else {
            base
        }
    }

    pub fn with_eta(&self, eta_ddim: f64) -> Self {
        Self { eta_ddim, ..self.clone() }
    }
}
