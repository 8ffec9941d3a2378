//! Group-relative update for the denoiser: each denoising transition is a
//! Gaussian policy whose log-likelihood on the stored chains is pushed up or
//! down by the member's group-normalized reward, with a fresh-chain anchor
//! term against the frozen reference keeping the distribution from
//! collapsing.

use super::{GrpoConfig, RlError};
use crate::diffusion::{
    sample_trajectory, ChainRecord, Denoiser, DenoiserModel, GuidanceContext, GuidanceScales,
    GuidedShiftOp, NoiseSchedule, TrajectoryGroup,
};
use crate::nn::{optim_step, Arr, NodeId, OptimState, Tape};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct GrpoStats {
    pub policy_loss: f64,
    pub anchor_loss: f64,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub updates: usize,
}

/// Group-normalized advantages; exactly zero-mean per group.
pub fn group_advantages(rewards: &[f64]) -> Vec<f64> {
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    rewards.iter().map(|r| (r - mean) / (std + 1e-8)).collect()
}

/// Discounted per-chain log-likelihood of the stored transitions under the
/// current parameters, using the same (guided) means the update optimizes:
/// `(1/S) * sum_s gamma^(s-1) log N(x_{s-1}; mu(x_s), sigma_s^2)`.
pub fn chain_log_likelihood(
    den: &Denoiser,
    group: &TrajectoryGroup,
    member: usize,
    sch: &NoiseSchedule,
    denoise_gamma: f64,
) -> f64 {
    let chain = &group.members[member].chain;
    let steps = chain.steps();
    let dim = chain.latents[0].len() as f64;
    let ctx = GuidanceContext::new(group.reference.clone(), group.guidance, den.cfg.norm);
    let mut total = 0.0;
    for i in 0..steps {
        let s = steps - i;
        let sigma = chain.sigmas[i];
        let x_s = Arr::from_shape_vec((1, chain.latents[i].len()), chain.latents[i].clone()).unwrap();
        let mut x0 = den.predict_x0_norm(&x_s, sch.timesteps[s - 1], &group.cond);
        {
            let mut row = x0.row_mut(0);
            let slice = row.as_slice_mut().unwrap();
            crate::diffusion::apply_guidance_row(slice, &ctx, group.members[member].scales);
        }
        let mu = transition_mean_plain(&x0, &x_s, sch, s, sigma);
        let x_prev = &chain.latents[i + 1];
        let ssq: f64 = mu
            .row(0)
            .iter()
            .zip(x_prev)
            .map(|(m, x)| (x - m) * (x - m))
            .sum();
        let logp = -ssq / (2.0 * sigma * sigma)
            - 0.5 * dim * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
        total += denoise_gamma.powi((s - 1) as i32) * logp;
    }
    total / steps as f64
}

fn transition_mean_plain(x0: &Arr, x_s: &Arr, sch: &NoiseSchedule, s: usize, sigma: f64) -> Arr {
    let ab_prev = sch.alpha_bar[s - 1];
    let ab_s = sch.alpha_bar[s];
    let radicand = 1.0 - ab_prev - sigma * sigma;
    let dir = radicand.max(0.0).sqrt();
    if dir == 0.0 {
        x0.mapv(|v| ab_prev.sqrt() * v)
    } else {
        let eps = (x_s - &x0.mapv(|v| ab_s.sqrt() * v)).mapv(|v| v / (1.0 - ab_s).sqrt());
        x0.mapv(|v| ab_prev.sqrt() * v) + eps.mapv(|v| dir * v)
    }
}

/// Tape version of the transition mean.
fn transition_mean(
    tape: &mut Tape,
    x0: NodeId,
    x_s: NodeId,
    sch: &NoiseSchedule,
    s: usize,
    sigma: f64,
) -> NodeId {
    let ab_prev = sch.alpha_bar[s - 1];
    let ab_s = sch.alpha_bar[s];
    let radicand = 1.0 - ab_prev - sigma * sigma;
    let dir = radicand.max(0.0).sqrt();
    let scaled_x0 = tape.scale(x0, ab_prev.sqrt());
    if dir == 0.0 {
        scaled_x0
    } else {
        let noisy_part = tape.scale(x0, ab_s.sqrt());
        let diff = tape.sub(x_s, noisy_part);
        let eps = tape.scale(diff, 1.0 / (1.0 - ab_s).sqrt());
        let dir_term = tape.scale(eps, dir);
        tape.add(scaled_x0, dir_term)
    }
}

/// Per-member log-likelihood rows (`G x 1`) of one stored transition batch.
fn log_likelihood_rows(
    tape: &mut Tape,
    den: &Denoiser,
    bind: &crate::diffusion::DenoiserBinding,
    group_cond: &crate::diffusion::Conditioning,
    x_s_rows: Arr,
    x_prev_rows: Arr,
    s: usize,
    sigma: f64,
    sch: &NoiseSchedule,
    guidance: Option<(&GuidanceContext, &[GuidanceScales])>,
) -> NodeId {
    let g = x_s_rows.nrows();
    let dim = x_s_rows.ncols() as f64;
    let t = sch.timesteps[s - 1];
    let x_s = tape.constant(x_s_rows);
    let x_s_arr = tape.value(x_s).clone();
    let mut x0 = den.tape_forward(tape, bind, &x_s_arr, &vec![t; g], group_cond);
    if let Some((ctx, scales)) = guidance {
        x0 = tape.custom(
            x0,
            Box::new(GuidedShiftOp { ctx: ctx.clone(), scales: scales.to_vec() }),
        );
    }
    let mu = transition_mean(tape, x0, x_s, sch, s, sigma);
    let x_prev = tape.constant(x_prev_rows);
    let diff = tape.sub(x_prev, mu);
    let sq = tape.mul(diff, diff);
    let ssq = tape.row_sums(sq);
    let scaled = tape.scale(ssq, -1.0 / (2.0 * sigma * sigma));
    tape.add_scalar(scaled, -0.5 * dim * (2.0 * std::f64::consts::PI * sigma * sigma).ln())
}

fn stack_chain_rows(chains: &[&ChainRecord], index: usize) -> Arr {
    let dim = chains[0].latents[index].len();
    let mut out = Arr::zeros((chains.len(), dim));
    for (k, c) in chains.iter().enumerate() {
        out.row_mut(k).assign(&ndarray::Array1::from(c.latents[index].clone()));
    }
    out
}

/// One group-relative update pass: `epochs x steps_per_epoch` gradient steps
/// over minibatches of stored groups. Each step also regenerates fresh
/// anchor chains from the frozen reference and pushes their likelihood up
/// with weight `c_b`.
pub fn grpo_update(
    denoiser: &mut Denoiser,
    optim: &mut OptimState,
    reference: &Denoiser,
    groups: &[TrajectoryGroup],
    sch: &NoiseSchedule,
    cfg: &GrpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GrpoStats, RlError> {
    if groups.is_empty() {
        return Ok(GrpoStats::default());
    }
    for g in groups {
        if g.members.len() < 2 {
            return Err(RlError::GroupTooSmall(g.members.len()));
        }
        for m in &g.members {
            if let Some(step) = m.chain.sigmas.iter().position(|s| *s == 0.0) {
                return Err(RlError::DeterministicChain { step });
            }
        }
    }

    let mut stats = GrpoStats::default();
    let all_rewards: Vec<f64> =
        groups.iter().flat_map(|g| g.members.iter().map(|m| m.reward)).collect();
    stats.reward_mean = all_rewards.iter().sum::<f64>() / all_rewards.len() as f64;
    stats.reward_std = (all_rewards
        .iter()
        .map(|r| (r - stats.reward_mean) * (r - stats.reward_mean))
        .sum::<f64>()
        / all_rewards.len() as f64)
        .sqrt();

    let mb = cfg.minibatch_groups.max(1);
    for _epoch in 0..cfg.epochs {
        let mut indices: Vec<usize> = (0..groups.len()).collect();
        indices.shuffle(rng);
        let chunks: Vec<Vec<usize>> =
            indices.chunks(mb).map(|c| c.to_vec()).collect();
        for step in 0..cfg.steps_per_epoch {
            let chunk = &chunks[step % chunks.len()];
            let mut tape = Tape::new();
            let bind = denoiser.bind(&mut tape);
            let mut policy_terms: Vec<NodeId> = Vec::new();
            let mut anchor_terms: Vec<NodeId> = Vec::new();

            for &gi in chunk {
                let group = &groups[gi];
                let g = group.members.len();
                let steps = group.members[0].chain.steps();
                let advantages = group_advantages(
                    &group.members.iter().map(|m| m.reward).collect::<Vec<f64>>(),
                );
                let ctx =
                    GuidanceContext::new(group.reference.clone(), group.guidance, denoiser.cfg.norm);
                let scales: Vec<GuidanceScales> =
                    group.members.iter().map(|m| m.scales).collect();
                let chains: Vec<&ChainRecord> =
                    group.members.iter().map(|m| &m.chain).collect();

                // fresh anchor chains from the frozen reference
                let anchor_chains: Vec<ChainRecord> = (0..g)
                    .map(|_| sample_trajectory(reference, &group.cond, sch, rng.random()).1)
                    .collect();
                let anchor_refs: Vec<&ChainRecord> = anchor_chains.iter().collect();

                for i in 0..steps {
                    let s = steps - i;
                    let sigma = chains[0].sigmas[i];
                    debug_assert!(chains.iter().all(|c| c.sigmas[i] == sigma));
                    let weight_base =
                        cfg.denoise_gamma.powi((s - 1) as i32) / (steps * g * chunk.len()) as f64;

                    let lp = log_likelihood_rows(
                        &mut tape,
                        denoiser,
                        &bind,
                        &group.cond,
                        stack_chain_rows(&chains, i),
                        stack_chain_rows(&chains, i + 1),
                        s,
                        sigma,
                        sch,
                        Some((&ctx, &scales)),
                    );
                    let w =
                        Arr::from_shape_vec((g, 1), advantages.iter().map(|a| a * weight_base).collect())
                            .unwrap();
                    let w = tape.constant(w);
                    let weighted = tape.mul(lp, w);
                    policy_terms.push(tape.sum_all(weighted));

                    let anchor_sigma = anchor_chains[0].sigmas[i];
                    let lp_anchor = log_likelihood_rows(
                        &mut tape,
                        denoiser,
                        &bind,
                        &group.cond,
                        stack_chain_rows(&anchor_refs, i),
                        stack_chain_rows(&anchor_refs, i + 1),
                        s,
                        anchor_sigma,
                        sch,
                        None,
                    );
                    let sum_anchor = tape.sum_all(lp_anchor);
                    anchor_terms
                        .push(tape.scale(sum_anchor, 1.0 / (steps * g * chunk.len()) as f64));
                }
            }

            let pol = sum_nodes(&mut tape, &policy_terms);
            let anc = sum_nodes(&mut tape, &anchor_terms);
            let neg_pol = tape.scale(pol, -1.0);
            let neg_anc = tape.scale(anc, -cfg.c_b);
            let loss = tape.add(neg_pol, neg_anc);

            let grads = tape.backward(loss);
            let gm = tape.param_grads(&grads);
            optim_step(&mut denoiser.params, &gm, optim);

            stats.policy_loss += tape.scalar(neg_pol);
            stats.anchor_loss += tape.scalar(neg_anc);
            stats.updates += 1;
        }
    }
    if stats.updates > 0 {
        stats.policy_loss /= stats.updates as f64;
        stats.anchor_loss /= stats.updates as f64;
    }
    Ok(stats)
}

fn sum_nodes(tape: &mut Tape, nodes: &[NodeId]) -> NodeId {
    let mut acc = nodes[0];
    for n in &nodes[1..] {
        acc = tape.add(acc, *n);
    }
    acc
}
