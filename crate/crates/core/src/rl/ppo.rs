//! Clipped-surrogate update for the exploration policy with value and
//! entropy terms, run for several epochs over the on-policy batch.

use super::{PpoConfig, RlError, Transition};
use crate::explorer::Explorer;
use crate::nn::{optim_step, Arr, NodeId, OptimState, Tape};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// On-policy batch with precomputed raw advantages and value targets.
pub struct PpoBatch {
    pub transitions: Vec<Transition>,
    pub advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub dropped: usize,
    pub updates: usize,
}

/// Builds the per-transition log-prob node: slice the Beta parameter row
/// into (a, b) pairs and evaluate the affine-mapped density at the stored
/// draws.
fn log_prob_node(
    tape: &mut Tape,
    beta_row: NodeId,
    scales: &crate::diffusion::GuidanceScales,
) -> NodeId {
    let a_lat = tape.slice_cols(beta_row, 0, 1);
    let a_lon = tape.slice_cols(beta_row, 2, 3);
    let b_lat = tape.slice_cols(beta_row, 1, 2);
    let b_lon = tape.slice_cols(beta_row, 3, 4);
    let a = tape.concat_cols(a_lat, a_lon);
    let b = tape.concat_cols(b_lat, b_lon);
    let clamp = |eta: f64| eta.clamp(-(1.0 - 1e-9), 1.0 - 1e-9);
    let u = Arr::from_shape_vec(
        (1, 2),
        vec![(clamp(scales.eta_lat) + 1.0) / 2.0, (clamp(scales.eta_lon) + 1.0) / 2.0],
    )
    .unwrap();
    let lp = tape.beta_log_prob(a, b, u);
    let lp_sum = tape.sum_all(lp);
    tape.add_scalar(lp_sum, -2.0 * std::f64::consts::LN_2)
}

fn entropy_node(tape: &mut Tape, beta_row: NodeId) -> NodeId {
    let a_lat = tape.slice_cols(beta_row, 0, 1);
    let a_lon = tape.slice_cols(beta_row, 2, 3);
    let b_lat = tape.slice_cols(beta_row, 1, 2);
    let b_lon = tape.slice_cols(beta_row, 3, 4);
    let a = tape.concat_cols(a_lat, a_lon);
    let b = tape.concat_cols(b_lat, b_lon);
    let ent = tape.beta_entropy(a, b);
    let ent_sum = tape.sum_all(ent);
    tape.add_scalar(ent_sum, 2.0 * std::f64::consts::LN_2)
}

/// One full policy update: advantages are normalized over the batch, then
/// the clipped objective (plus value and entropy terms) is optimized for
/// `epochs` passes over shuffled minibatches. Samples whose importance
/// ratio turns non-finite are dropped and counted.
pub fn ppo_update(
    explorer: &mut Explorer,
    optim: &mut OptimState,
    batch: &PpoBatch,
    cfg: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<PpoStats, RlError> {
    let n = batch.transitions.len();
    if n == 0 {
        return Ok(PpoStats::default());
    }
    if batch.advantages.len() != n || batch.value_targets.len() != n {
        return Err(RlError::LengthMismatch {
            rewards: n,
            values: batch.advantages.len(),
            dones: batch.value_targets.len(),
        });
    }

    // batch normalization of advantages
    let mean = batch.advantages.iter().sum::<f64>() / n as f64;
    let var =
        batch.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    let advantages: Vec<f64> =
        batch.advantages.iter().map(|a| (a - mean) / (std + 1e-8)).collect();

    let mut stats = PpoStats::default();
    let mut indices: Vec<usize> = (0..n).collect();
    let mb = cfg.minibatch.max(1);

    for _epoch in 0..cfg.epochs {
        indices.shuffle(rng);
        for chunk in indices.chunks(mb) {
            let mut tape = Tape::new();
            let bind = explorer.bind(&mut tape);
            let mut policy_terms: Vec<NodeId> = Vec::with_capacity(chunk.len());
            let mut value_terms: Vec<NodeId> = Vec::with_capacity(chunk.len());
            let mut entropy_terms: Vec<NodeId> = Vec::with_capacity(chunk.len());
            let mut clipped = 0usize;

            for &i in chunk {
                let tr = &batch.transitions[i];
                let (beta_row, value) =
                    explorer.tape_forward(&mut tape, &bind, &tr.scene, &tr.reference);
                let lp = log_prob_node(&mut tape, beta_row, &tr.scales);
                let lp_diff = tape.add_scalar(lp, -tr.log_prob);
                let ratio = tape.exp(lp_diff);
                let ratio_val = tape.scalar(ratio);
                if !ratio_val.is_finite() {
                    stats.dropped += 1;
                    continue;
                }
                if (ratio_val - 1.0).abs() > cfg.clip_eps {
                    clipped += 1;
                }
                let adv = advantages[i];
                let surr1 = tape.scale(ratio, adv);
                let ratio_clip = tape.clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                let surr2 = tape.scale(ratio_clip, adv);
                policy_terms.push(tape.min_elem(surr1, surr2));

                let target = tape.constant(Arr::from_elem((1, 1), batch.value_targets[i]));
                let verr = tape.sub(value, target);
                value_terms.push(tape.mul(verr, verr));

                entropy_terms.push(entropy_node(&mut tape, beta_row));
            }

            if policy_terms.is_empty() {
                continue;
            }
            let m = policy_terms.len() as f64;
            let pol = sum_nodes(&mut tape, &policy_terms);
            let val = sum_nodes(&mut tape, &value_terms);
            let ent = sum_nodes(&mut tape, &entropy_terms);
            // maximize policy and entropy, minimize value error
            let neg_pol = tape.scale(pol, -1.0 / m);
            let val_term = tape.scale(val, cfg.c_v / m);
            let neg_ent = tape.scale(ent, -cfg.c_e / m);
            let partial = tape.add(neg_pol, val_term);
            let loss = tape.add(partial, neg_ent);

            let grads = tape.backward(loss);
            let gm = tape.param_grads(&grads);
            optim_step(&mut explorer.params, &gm, optim);

            stats.policy_loss += tape.scalar(neg_pol);
            stats.value_loss += tape.scalar(val) / m;
            stats.entropy += tape.scalar(ent) / m;
            stats.clip_fraction += clipped as f64 / m;
            stats.updates += 1;
        }
    }
    if stats.updates > 0 {
        let u = stats.updates as f64;
        stats.policy_loss /= u;
        stats.value_loss /= u;
        stats.entropy /= u;
        stats.clip_fraction /= u;
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
