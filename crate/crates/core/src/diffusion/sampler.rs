//! Short-chain stochastic sampler with per-member guidance, recording the
//! full chain of latents and Gaussian transition parameters for
//! likelihood-based fine-tuning.

use super::denoiser::{row_to_trajectory, Conditioning, DenoiserModel};
use super::energy::{apply_guidance_row, GuidanceConfig, GuidanceContext, GuidanceScales};
use super::NoiseSchedule;
use crate::geom::Trajectory;
use crate::nn::Arr;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Recorded denoising chain of one sample, in normalized latent space.
///
/// Index `i` holds the transition from step `s = S - i`: `latents[i]` is
/// `x_s`, `latents[i + 1]` is `x_{s-1}`, `means[i]`/`sigmas[i]` are its
/// Gaussian parameters. `latents` has `S + 1` entries ending at `x_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub latents: Vec<Vec<f64>>,
    pub means: Vec<Vec<f64>>,
    pub sigmas: Vec<f64>,
    /// Set when the direction coefficient radicand went negative and was
    /// clamped to zero.
    pub clamped: bool,
}

impl ChainRecord {
    pub fn steps(&self) -> usize {
        self.sigmas.len()
    }
}

/// Per-row guidance for a batched denoising step.
pub struct GroupGuidance<'a> {
    pub ctx: &'a GuidanceContext,
    pub scales: &'a [GuidanceScales],
}

/// Result of one batched denoising step.
pub struct StepResult {
    pub x_prev: Arr,
    pub means: Arr,
    pub sigma: f64,
    pub clamped: bool,
}

/// One denoising transition `x_s -> x_{s-1}` for a row-stack of samples.
///
/// The predicted clean sample is guided (when guidance is supplied and
/// active) before the update; the noise term draws one standard normal
/// vector per row from that row's stream, skipped entirely when the step is
/// deterministic.
pub fn ddim_step_rows(
    x: &Arr,
    s: usize,
    den: &dyn DenoiserModel,
    cond: &Conditioning,
    sch: &NoiseSchedule,
    guidance: Option<&GroupGuidance>,
    rngs: &mut [ChaCha8Rng],
) -> StepResult {
    assert!(s >= 1 && s <= sch.steps);
    assert_eq!(rngs.len(), x.nrows());
    let t = sch.timesteps[s - 1];
    let mut x0 = den.predict_x0_norm(x, t, cond);
    if let Some(g) = guidance {
        debug_assert_eq!(g.scales.len(), x.nrows());
        for (k, mut row) in x0.rows_mut().into_iter().enumerate() {
            let slice = row.as_slice_mut().expect("contiguous row");
            apply_guidance_row(slice, g.ctx, g.scales[k]);
        }
    }

    let ab_prev = sch.alpha_bar[s - 1];
    let ab_s = sch.alpha_bar[s];
    let sigma = sch.sigma(s);
    let radicand = 1.0 - ab_prev - sigma * sigma;
    let clamped = radicand < 0.0;
    let dir = radicand.max(0.0).sqrt();

    let means = if dir == 0.0 {
        // pure rescale of the prediction; keeps the endpoint exact
        x0.mapv(|v| ab_prev.sqrt() * v)
    } else {
        let eps = (x - &x0.mapv(|v| ab_s.sqrt() * v)).mapv(|v| v / (1.0 - ab_s).sqrt());
        x0.mapv(|v| ab_prev.sqrt() * v) + eps.mapv(|v| dir * v)
    };

    let x_prev = if sigma > 0.0 {
        let mut out = means.clone();
        for (k, mut row) in out.rows_mut().into_iter().enumerate() {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rngs[k]);
                *v += sigma * z;
            }
        }
        out
    } else {
        means.clone()
    };

    StepResult { x_prev, means, sigma, clamped }
}

/// One sampled group member with its full chain.
#[derive(Debug, Clone)]
pub struct GroupMember {
    pub trajectory: Trajectory,
    pub scales: GuidanceScales,
    pub chain: ChainRecord,
    /// Trajectory-level reward, filled in by the scorer.
    pub reward: f64,
}

/// A group of guided samples for one state: the group-relative optimization
/// unit.
#[derive(Debug, Clone)]
pub struct TrajectoryGroup {
    pub members: Vec<GroupMember>,
    pub cond: Conditioning,
    pub reference: Trajectory,
    pub guidance: GuidanceConfig,
}

/// Samples `seeds.len()` chains in lockstep (one batched denoiser forward
/// per step), each row with its own noise stream and guidance scales.
pub fn guided_sample_group(
    den: &dyn DenoiserModel,
    cond: &Conditioning,
    reference: &Trajectory,
    scales: &[GuidanceScales],
    sch: &NoiseSchedule,
    gcfg: &GuidanceConfig,
    seeds: &[u64],
) -> TrajectoryGroup {
    assert_eq!(scales.len(), seeds.len());
    let ctx = GuidanceContext::new(reference.clone(), *gcfg, den.norm());
    let (trajs, chains) = sample_rows(den, cond, sch, Some((&ctx, scales)), seeds);
    let members = trajs
        .into_iter()
        .zip(chains)
        .zip(scales)
        .map(|((trajectory, chain), s)| GroupMember {
            trajectory,
            scales: *s,
            chain,
            reward: 0.0,
        })
        .collect();
    TrajectoryGroup {
        members,
        cond: cond.clone(),
        reference: reference.clone(),
        guidance: *gcfg,
    }
}

/// Unguided single sample; used for the reference trajectory, evaluation,
/// and regenerating anchor chains.
pub fn sample_trajectory(
    den: &dyn DenoiserModel,
    cond: &Conditioning,
    sch: &NoiseSchedule,
    seed: u64,
) -> (Trajectory, ChainRecord) {
    let (mut trajs, mut chains) = sample_rows(den, cond, sch, None, &[seed]);
    (trajs.remove(0), chains.remove(0))
}

fn sample_rows(
    den: &dyn DenoiserModel,
    cond: &Conditioning,
    sch: &NoiseSchedule,
    guidance: Option<(&GuidanceContext, &[GuidanceScales])>,
    seeds: &[u64],
) -> (Vec<Trajectory>, Vec<ChainRecord>) {
    let g = seeds.len();
    let dim = 4 * den.horizon();
    let mut rngs: Vec<ChaCha8Rng> =
        seeds.iter().map(|s| ChaCha8Rng::seed_from_u64(*s)).collect();

    // initial latents from pure noise, one stream per member
    let mut x = Arr::zeros((g, dim));
    for (k, mut row) in x.rows_mut().into_iter().enumerate() {
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rngs[k]);
        }
    }

    let mut latents: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(sch.steps + 1); g];
    let mut means: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(sch.steps); g];
    let mut sigmas: Vec<Vec<f64>> = vec![Vec::with_capacity(sch.steps); g];
    let mut clamped = false;
    for k in 0..g {
        latents[k].push(x.row(k).to_vec());
    }

    for s in (1..=sch.steps).rev() {
        let gg = guidance.map(|(ctx, scales)| GroupGuidance { ctx, scales });
        let step = ddim_step_rows(&x, s, den, cond, sch, gg.as_ref(), &mut rngs);
        clamped |= step.clamped;
        for k in 0..g {
            means[k].push(step.means.row(k).to_vec());
            sigmas[k].push(step.sigma);
            latents[k].push(step.x_prev.row(k).to_vec());
        }
        x = step.x_prev;
    }

    let norm = den.norm();
    let trajs: Vec<Trajectory> =
        (0..g).map(|k| row_to_trajectory(x.row(k), &norm)).collect();
    let chains = (0..g)
        .map(|k| ChainRecord {
            latents: std::mem::take(&mut latents[k]),
            means: std::mem::take(&mut means[k]),
            sigmas: std::mem::take(&mut sigmas[k]),
            clamped,
        })
        .collect();
    (trajs, chains)
}
