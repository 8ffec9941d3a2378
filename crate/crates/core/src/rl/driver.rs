//! Closed-loop fine-tuning driver.
//!
//! Rollout phase: environment workers own disjoint env slots, consume
//! read-only snapshots of the two networks, and collect transitions plus
//! trajectory groups; buffers merge worker-major. Update phase: single
//! writer, after a barrier (the thread join). Per-env noise streams are
//! split from the master seed, so a run is reproducible for a fixed
//! configuration regardless of worker count.

use super::{compute_gae, grpo_update, ppo_update, GrpoConfig, GrpoStats, PpoBatch, PpoConfig, PpoStats, Transition};
use crate::diffusion::{
    diversity_score, guided_sample_group, sample_trajectory, Conditioning, Denoiser,
    GuidanceConfig, GuidanceScales, NoiseSchedule, TrajectoryGroup,
};
use crate::dynamics::LqrConfig;
use crate::engine::{env_step, DiffusionPlanner, DoneReason, EnvState, EvalReport};
use crate::explorer::{sample_scales, Explorer};
use crate::features::{encode_scene, FeatureConfig};
use crate::nn::{NnError, OptimConfig, OptimState};
use crate::scenario::Scenario;
use crate::scorer::{score_trajectory, RewardMode, ScorerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RftConfig {
    pub iterations: usize,
    pub workers: usize,
    pub denoise_steps: usize,
    pub reward_mode: RewardMode,
    /// Skip both updates; rollouts and metrics only.
    pub eval_only: bool,
    pub seed: u64,
    pub checkpoint_every: usize,
}

impl Default for RftConfig {
    fn default() -> Self {
        Self {
            iterations: 200,
            workers: 4,
            denoise_steps: 5,
            reward_mode: RewardMode::Survival,
            eval_only: false,
            seed: 0,
            checkpoint_every: 50,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub group_reward_mean: f64,
    pub group_reward_std: f64,
    pub diversity: f64,
    pub mean_step_reward: f64,
    pub episodes_ended: usize,
    pub collision_rate: f64,
    pub offroad_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub env_steps: u64,
    pub rollout: RolloutMetrics,
    pub entropy: f64,
    pub ppo: Option<PpoStats>,
    pub grpo: Option<GrpoStats>,
}

struct EnvSlot {
    env: EnvState,
    rng: ChaCha8Rng,
    cursor: usize,
}

struct EnvRollout {
    transitions: Vec<Transition>,
    bootstrap: f64,
    groups: Vec<TrajectoryGroup>,
    collisions: usize,
    offroads: usize,
    episodes: usize,
    reward_total: f64,
}

fn split_seed(master: u64, stream: u64) -> u64 {
    let mut z = master.wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub struct RftTrainer {
    pub denoiser: Denoiser,
    pub reference: Denoiser,
    pub explorer: Explorer,
    pub den_optim: OptimState,
    pub exp_optim: OptimState,
    pub ppo: PpoConfig,
    pub grpo: GrpoConfig,
    pub lqr: LqrConfig,
    pub scorer: ScorerConfig,
    pub guidance: GuidanceConfig,
    pub features: FeatureConfig,
    pub schedule: NoiseSchedule,
    pub cfg: RftConfig,
    scenarios: Vec<Arc<Scenario>>,
    envs: Vec<EnvSlot>,
    iteration_count: usize,
    total_env_steps: u64,
    ppo_rng: ChaCha8Rng,
    grpo_rng: ChaCha8Rng,
}

impl RftTrainer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        pretrained: Denoiser,
        explorer: Explorer,
        scenarios: Vec<Arc<Scenario>>,
        ppo: PpoConfig,
        grpo: GrpoConfig,
        lqr: LqrConfig,
        scorer: ScorerConfig,
        guidance: GuidanceConfig,
        features: FeatureConfig,
        cfg: RftConfig,
    ) -> Self {
        assert!(!scenarios.is_empty(), "need at least one scenario");
        let envs = (0..ppo.envs)
            .map(|i| {
                let cursor = i % scenarios.len();
                EnvSlot {
                    env: EnvState::new(scenarios[cursor].clone()),
                    rng: ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, i as u64)),
                    cursor,
                }
            })
            .collect();
        // the pretrained planner is duplicated and frozen as the reference
        let reference = pretrained.clone();
        let den_optim = OptimState::new(OptimConfig {
            base_lr: grpo.lr,
            total_steps: (cfg.iterations * grpo.epochs * grpo.steps_per_epoch) as u64,
            ..OptimConfig::default()
        });
        let exp_optim = OptimState::new(OptimConfig {
            base_lr: ppo.lr,
            total_steps: (cfg.iterations * ppo.epochs) as u64,
            ..OptimConfig::default()
        });
        let schedule = NoiseSchedule::vp_linear(cfg.denoise_steps, 1.0, false);
        Self {
            denoiser: pretrained,
            reference,
            explorer,
            den_optim,
            exp_optim,
            ppo,
            grpo,
            lqr,
            scorer,
            guidance,
            features,
            schedule,
            cfg,
            scenarios,
            envs,
            iteration_count: 0,
            total_env_steps: 0,
            ppo_rng: ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, 1_000_003)),
            grpo_rng: ChaCha8Rng::seed_from_u64(split_seed(cfg.seed, 2_000_003)),
        }
    }

    pub fn iteration_count(&self) -> usize {
        self.iteration_count
    }

    pub fn total_env_steps(&self) -> u64 {
        self.total_env_steps
    }

    /// One full iteration: parallel rollouts, then the two updates.
    pub fn iteration(&mut self) -> IterationMetrics {
        let steps = self.ppo.steps_per_iter;
        let workers = self.cfg.workers.max(1);
        let chunk = self.envs.len().div_ceil(workers);

        let denoiser = &self.denoiser;
        let reference = &self.reference;
        let explorer = &self.explorer;
        let scenarios = &self.scenarios;
        let scorer = &self.scorer;
        let lqr = &self.lqr;
        let guidance = &self.guidance;
        let features = &self.features;
        let schedule = &self.schedule;
        let grpo_cfg = &self.grpo;
        let reward_mode = self.cfg.reward_mode;

        let rollouts: Vec<EnvRollout> = std::thread::scope(|scope| {
            let handles: Vec<_> = self
                .envs
                .chunks_mut(chunk)
                .map(|slots| {
                    scope.spawn(move || {
                        slots
                            .iter_mut()
                            .map(|slot| {
                                run_env(
                                    slot, steps, denoiser, reference, explorer, scenarios,
                                    scorer, lqr, guidance, features, schedule,
                                    grpo_cfg.group_size, reward_mode,
                                )
                            })
                            .collect::<Vec<EnvRollout>>()
                    })
                })
                .collect();
            handles.into_iter().flat_map(|h| h.join().expect("rollout worker panicked")).collect()
        });

        self.total_env_steps += (steps * self.envs.len()) as u64;

        // merge: per-env advantage estimation, then flatten in env order
        let mut transitions = Vec::with_capacity(steps * rollouts.len());
        let mut advantages = Vec::with_capacity(steps * rollouts.len());
        let mut value_targets = Vec::with_capacity(steps * rollouts.len());
        let mut groups = Vec::new();
        let mut collisions = 0usize;
        let mut offroads = 0usize;
        let mut episodes = 0usize;
        let mut reward_total = 0.0;
        for r in rollouts {
            let rewards: Vec<f64> = r.transitions.iter().map(|t| t.reward).collect();
            let values: Vec<f64> = r.transitions.iter().map(|t| t.value).collect();
            let dones: Vec<bool> = r.transitions.iter().map(|t| t.done).collect();
            let (adv, tgt) = compute_gae(
                &rewards,
                &values,
                &dones,
                r.bootstrap,
                self.ppo.gamma,
                self.ppo.gae_lambda,
            )
            .expect("aligned rollout buffers");
            transitions.extend(r.transitions);
            advantages.extend(adv);
            value_targets.extend(tgt);
            groups.extend(r.groups);
            collisions += r.collisions;
            offroads += r.offroads;
            episodes += r.episodes;
            reward_total += r.reward_total;
        }

        let rollout = self.rollout_metrics(&transitions, &groups, collisions, offroads, episodes, reward_total);
        let entropy = {
            let beta = transitions
                .first()
                .map(|t| self.explorer.forward(&t.scene, &t.reference).beta);
            beta.map(|b| {
                crate::explorer::log_prob_and_entropy(&b, &GuidanceScales::ZERO).1
            })
            .unwrap_or(0.0)
        };

        let (ppo_stats, grpo_stats) = if self.cfg.eval_only {
            (None, None)
        } else {
            let batch = PpoBatch { transitions, advantages, value_targets };
            let ppo_stats =
                ppo_update(&mut self.explorer, &mut self.exp_optim, &batch, &self.ppo, &mut self.ppo_rng)
                    .expect("aligned batch");
            let grpo_stats = grpo_update(
                &mut self.denoiser,
                &mut self.den_optim,
                &self.reference,
                &groups,
                &self.schedule,
                &self.grpo,
                &mut self.grpo_rng,
            )
            .expect("valid groups");
            (Some(ppo_stats), Some(grpo_stats))
        };

        self.iteration_count += 1;
        IterationMetrics {
            iteration: self.iteration_count,
            env_steps: self.total_env_steps,
            rollout,
            entropy,
            ppo: ppo_stats,
            grpo: grpo_stats,
        }
    }

    fn rollout_metrics(
        &self,
        transitions: &[Transition],
        groups: &[TrajectoryGroup],
        collisions: usize,
        offroads: usize,
        episodes: usize,
        reward_total: f64,
    ) -> RolloutMetrics {
        let rewards: Vec<f64> =
            groups.iter().flat_map(|g| g.members.iter().map(|m| m.reward)).collect();
        let n = rewards.len().max(1) as f64;
        let mean = rewards.iter().sum::<f64>() / n;
        let std =
            (rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n).sqrt();
        // diversity on a small sample of groups
        let sample = 4usize.min(groups.len());
        let diversity = if sample > 0 {
            (0..sample)
                .map(|k| {
                    let g = &groups[k * groups.len() / sample];
                    let trajs: Vec<crate::geom::Trajectory> =
                        g.members.iter().map(|m| m.trajectory.clone()).collect();
                    diversity_score(&trajs, self.scorer.ego_length, self.scorer.ego_width)
                })
                .sum::<f64>()
                / sample as f64
        } else {
            0.0
        };
        RolloutMetrics {
            group_reward_mean: mean,
            group_reward_std: std,
            diversity,
            mean_step_reward: reward_total / transitions.len().max(1) as f64,
            episodes_ended: episodes,
            collision_rate: if episodes > 0 { collisions as f64 / episodes as f64 } else { 0.0 },
            offroad_rate: if episodes > 0 { offroads as f64 / episodes as f64 } else { 0.0 },
        }
    }

    /// Deterministic evaluation of the current fine-tuned denoiser.
    pub fn evaluate_current(&self, scenarios: &[Arc<Scenario>], seed: u64) -> EvalReport {
        let mut planner =
            DiffusionPlanner::for_eval(self.denoiser.clone(), self.cfg.denoise_steps);
        planner.features = self.features;
        crate::engine::evaluate(&mut planner, scenarios, seed, &self.lqr, &self.scorer)
    }

    /// Writes the fine-tuned and exploration checkpoints into `dir`.
    pub fn save_checkpoints(&self, dir: &Path, tag: &str) -> Result<(), NnError> {
        std::fs::create_dir_all(dir)?;
        crate::nn::save_checkpoint(&self.denoiser.params, &dir.join(format!("denoiser_{tag}.ckpt")))?;
        crate::nn::save_checkpoint(&self.explorer.params, &dir.join(format!("explorer_{tag}.ckpt")))?;
        Ok(())
    }

    /// Bitwise equality check of the frozen reference against a snapshot.
    pub fn reference_params(&self) -> &crate::nn::ParamStore {
        &self.reference.params
    }
}

#[allow(clippy::too_many_arguments)]
fn run_env(
    slot: &mut EnvSlot,
    steps: usize,
    denoiser: &Denoiser,
    reference: &Denoiser,
    explorer: &Explorer,
    scenarios: &[Arc<Scenario>],
    scorer: &ScorerConfig,
    lqr: &LqrConfig,
    guidance: &GuidanceConfig,
    features: &FeatureConfig,
    schedule: &NoiseSchedule,
    group_size: usize,
    reward_mode: RewardMode,
) -> EnvRollout {
    let mut out = EnvRollout {
        transitions: Vec::with_capacity(steps),
        bootstrap: 0.0,
        groups: Vec::with_capacity(steps),
        collisions: 0,
        offroads: 0,
        episodes: 0,
        reward_total: 0.0,
    };
    // episodes end early enough that every group can still be scored over
    // the full open-loop horizon
    let truncate_at = |env: &EnvState| env.frames_left() <= scorer.reward_horizon + 1;

    for _ in 0..steps {
        if slot.env.is_done() || truncate_at(&slot.env) {
            match slot.env.done {
                DoneReason::Collision => out.collisions += 1,
                DoneReason::Offroad => out.offroads += 1,
                _ => {}
            }
            out.episodes += 1;
            slot.cursor = (slot.cursor + 1) % scenarios.len();
            slot.env = EnvState::new(scenarios[slot.cursor].clone());
        }
        let env = &slot.env;
        let emb = encode_scene(&env.scenario, env.frame, &env.ego, features);
        let cond = Conditioning::from_embedding(&emb);
        let (ref_traj, _) = sample_trajectory(reference, &cond, schedule, slot.rng.random());
        let policy = explorer.forward(&emb, &ref_traj);

        let mut scales = Vec::with_capacity(group_size);
        let mut log_probs = Vec::with_capacity(group_size);
        for _ in 0..group_size {
            let (s, lp) = sample_scales(&policy.beta, &mut slot.rng);
            scales.push(s);
            log_probs.push(lp);
        }
        let seeds: Vec<u64> = (0..group_size).map(|_| slot.rng.random()).collect();
        let mut group =
            guided_sample_group(denoiser, &cond, &ref_traj, &scales, schedule, guidance, &seeds);

        let ego = env.ego;
        for member in &mut group.members {
            let plan_world = member.trajectory.to_world(ego.x, ego.y, ego.heading);
            let (reward, _) =
                score_trajectory(&plan_world, &env.scenario, env.frame, &ego, scorer, reward_mode)
                    .expect("reset keeps the scoring horizon inside the log");
            member.reward = reward;
        }

        let pick = slot.rng.random_range(0..group_size);
        let plan_world = group.members[pick].trajectory.to_world(ego.x, ego.y, ego.heading);
        let (next_env, reward, _comps) =
            env_step(env, &plan_world, lqr, scorer).expect("env not done");
        let done = next_env.is_done() || truncate_at(&next_env);

        out.transitions.push(Transition {
            scene: emb,
            reference: ref_traj,
            scales: group.members[pick].scales,
            log_prob: log_probs[pick],
            reward,
            value: policy.value,
            done,
        });
        out.groups.push(group);
        out.reward_total += reward;
        slot.env = next_env;
    }

    // bootstrap value for the unfinished episode
    out.bootstrap = if slot.env.is_done() || truncate_at(&slot.env) {
        0.0
    } else {
        let env = &slot.env;
        let emb = encode_scene(&env.scenario, env.frame, &env.ego, features);
        let cond = Conditioning::from_embedding(&emb);
        let (ref_traj, _) = sample_trajectory(reference, &cond, schedule, slot.rng.random());
        explorer.forward(&emb, &ref_traj).value
    };
    out
}
