//! Sweep machinery: short fine-tuning runs across the guidance-offset grid,
//! reward formulations and horizons, dataset difficulty tiers, and group
//! sizes, each emitting one comparable result row.

use crate::config::Config;
use crate::diffusion::Denoiser;
use crate::engine::{baseline_difficulty, DifficultyTier};
use crate::explorer::Explorer;
use crate::rl::{RftConfig, RftTrainer};
use crate::scenario::Scenario;
use crate::scorer::RewardMode;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AblationGrid {
    /// 3x3 grid over the maximum lateral/longitudinal guidance offsets.
    Lambda,
    /// Reward formulation x horizon.
    Reward,
    /// Training-set difficulty tiers.
    Dataset,
    /// Group sizes.
    GroupSize,
}

impl std::str::FromStr for AblationGrid {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" => Ok(AblationGrid::Lambda),
            "reward" => Ok(AblationGrid::Reward),
            "dataset" => Ok(AblationGrid::Dataset),
            "group" | "group-size" => Ok(AblationGrid::GroupSize),
            other => Err(format!("unknown ablation grid '{other}'")),
        }
    }
}

/// One sweep cell result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationRow {
    pub grid: String,
    pub cell: String,
    pub seed: u64,
    pub iterations: usize,
    /// Mean group reward over the final quarter of training iterations.
    pub train_reward: f64,
    /// Closed-loop evaluation score of the fine-tuned planner.
    pub eval_score: f64,
    pub collision_rate: f64,
}

fn run_cell(
    grid: &str,
    cell: String,
    config: &Config,
    pretrained: &Denoiser,
    scenarios: &[Arc<Scenario>],
    train_set: &[Arc<Scenario>],
    seed: u64,
    iterations: usize,
) -> AblationRow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAB1A_7E);
    let explorer = Explorer::init(&mut rng, config.explorer);
    let rft = RftConfig { iterations, seed, ..config.rft };
    let mut trainer = RftTrainer::new(
        pretrained.clone(),
        explorer,
        train_set.to_vec(),
        config.ppo,
        config.grpo,
        config.dynamics,
        config.scorer,
        config.guidance,
        config.features,
        rft,
    );
    let mut tail_rewards = Vec::new();
    let tail_from = iterations - iterations / 4;
    for i in 0..iterations {
        let m = trainer.iteration();
        if i >= tail_from {
            tail_rewards.push(m.rollout.group_reward_mean);
        }
    }
    let report = trainer.evaluate_current(scenarios, seed);
    AblationRow {
        grid: grid.to_string(),
        cell,
        seed,
        iterations,
        train_reward: tail_rewards.iter().sum::<f64>() / tail_rewards.len().max(1) as f64,
        eval_score: report.mean_score,
        collision_rate: report.collision_rate,
    }
}

/// Runs one sweep and returns its rows (the lambda grid yields 9).
pub fn run_ablation(
    grid: AblationGrid,
    config: &Config,
    pretrained: &Denoiser,
    scenarios: &[Arc<Scenario>],
    seed: u64,
    iterations: usize,
) -> Vec<AblationRow> {
    match grid {
        AblationGrid::Lambda => {
            let mut rows = Vec::with_capacity(9);
            for lat in [1.0, 2.5, 5.0] {
                for lon in [0.10, 0.25, 0.50] {
                    let mut cfg = config.clone();
                    cfg.guidance.lambda_lat = lat;
                    cfg.guidance.lambda_lon = lon;
                    rows.push(run_cell(
                        "lambda",
                        format!("lambda_lat={lat:.1} lambda_lon={lon:.2}"),
                        &cfg,
                        pretrained,
                        scenarios,
                        scenarios,
                        seed,
                        iterations,
                    ));
                }
            }
            rows
        }
        AblationGrid::Reward => {
            let cells = [
                (RewardMode::Terminal, 40usize),
                (RewardMode::Survival, 20),
                (RewardMode::Survival, 40),
                (RewardMode::Survival, 60),
            ];
            cells
                .iter()
                .map(|(mode, horizon)| {
                    let mut cfg = config.clone();
                    cfg.rft.reward_mode = *mode;
                    cfg.scorer.reward_horizon = *horizon;
                    run_cell(
                        "reward",
                        format!("mode={mode:?} horizon_steps={horizon}"),
                        &cfg,
                        pretrained,
                        scenarios,
                        scenarios,
                        seed,
                        iterations,
                    )
                })
                .collect()
        }
        AblationGrid::Dataset => {
            let tiers: Vec<(String, Vec<Arc<Scenario>>)> = {
                let tagged: Vec<(Arc<Scenario>, DifficultyTier)> = scenarios
                    .iter()
                    .map(|s| {
                        let (_, tier) = baseline_difficulty(s, &config.dynamics, &config.scorer);
                        (s.clone(), tier)
                    })
                    .collect();
                let fail: Vec<Arc<Scenario>> = tagged
                    .iter()
                    .filter(|(_, t)| *t == DifficultyTier::Fail)
                    .map(|(s, _)| s.clone())
                    .collect();
                let lt90: Vec<Arc<Scenario>> = tagged
                    .iter()
                    .filter(|(_, t)| *t != DifficultyTier::Regular)
                    .map(|(s, _)| s.clone())
                    .collect();
                let all: Vec<Arc<Scenario>> = tagged.iter().map(|(s, _)| s.clone()).collect();
                vec![("fail".into(), fail), ("lt90".into(), lt90), ("all".into(), all)]
            };
            tiers
                .into_iter()
                .map(|(name, subset)| {
                    let train: &[Arc<Scenario>] =
                        if subset.is_empty() { scenarios } else { &subset };
                    run_cell(
                        "dataset",
                        format!("tier={name} size={}", train.len()),
                        config,
                        pretrained,
                        scenarios,
                        train,
                        seed,
                        iterations,
                    )
                })
                .collect()
        }
        AblationGrid::GroupSize => [4usize, 8, 12]
            .iter()
            .map(|g| {
                let mut cfg = config.clone();
                cfg.grpo.group_size = *g;
                run_cell(
                    "group",
                    format!("group_size={g}"),
                    &cfg,
                    pretrained,
                    scenarios,
                    scenarios,
                    seed,
                    iterations,
                )
            })
            .collect(),
    }
}

/// Reward-type contrast: trains one planner per reward formulation per seed
/// and compares closed-loop evaluation means. Returns
/// `(survival_mean, terminal_mean)`.
pub fn reward_contrast(
    config: &Config,
    pretrained: &Denoiser,
    scenarios: &[Arc<Scenario>],
    seeds: &[u64],
    iterations: usize,
) -> (f64, f64) {
    let mut means = [0.0f64; 2];
    for (slot, mode) in [RewardMode::Survival, RewardMode::Terminal].iter().enumerate() {
        let mut acc = 0.0;
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.rft.reward_mode = *mode;
            let row = run_cell(
                "contrast",
                format!("mode={mode:?}"),
                &cfg,
                pretrained,
                scenarios,
                scenarios,
                seed,
                iterations,
            );
            acc += row.eval_score;
        }
        means[slot] = acc / seeds.len() as f64;
    }
    (means[0], means[1])
}
