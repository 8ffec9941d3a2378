//! Vectorized closed-loop simulation: per-environment stepping with the
//! tracked bicycle, episode management, evaluation scoring, and the
//! multi-worker throughput benchmark.

use crate::diffusion::{sample_trajectory, Conditioning, Denoiser, NoiseSchedule};
use crate::dynamics::{bicycle_step, lqr_track, LqrConfig};
use crate::features::{encode_scene, FeatureConfig};
use crate::geom::{wrap_angle, EgoState, Trajectory, Waypoint};
use crate::scenario::{Scenario, CURRENT_FRAME};
use crate::scorer::{
    aggregate_reward, check_collision, check_drivable, comfort_score, compute_ttc,
    progress_score, RewardComponents, ScorerConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("cannot step an environment that is already done ({0:?})")]
    SteppingDone(DoneReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    None,
    Collision,
    Offroad,
    Horizon,
}

/// One environment's full state. Stepping is pure: it consumes a state and
/// returns the successor, so replaying a transition log reproduces states
/// bitwise.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub scenario: Arc<Scenario>,
    pub frame: usize,
    pub ego: EgoState,
    /// Most recent states (oldest first, current last) for comfort checks.
    pub history: Vec<EgoState>,
    route_origin: f64,
    expert_origin: f64,
    wrong_dir_steps: usize,
    pub done: DoneReason,
    pub reward_sum: f64,
    pub steps: usize,
}

impl EnvState {
    pub fn new(scenario: Arc<Scenario>) -> Self {
        let ego = scenario.current_ego();
        let route = scenario.route_polyline();
        let route_origin = route.project_arclength([ego.x, ego.y]);
        Self {
            scenario,
            frame: CURRENT_FRAME,
            ego,
            history: vec![ego],
            route_origin,
            expert_origin: route_origin,
            wrong_dir_steps: 0,
            done: DoneReason::None,
            reward_sum: 0.0,
            steps: 0,
        }
    }

    pub fn is_done(&self) -> bool {
        self.done != DoneReason::None
    }

    /// Steps remaining until the log runs out.
    pub fn frames_left(&self) -> usize {
        self.scenario.frame_count() - 1 - self.frame
    }
}

/// Advances one environment by one simulation step: track the plan, integrate
/// the bicycle, replay the world, score. Collision and off-road end the
/// episode with a zero step reward.
pub fn env_step(
    env: &EnvState,
    plan: &Trajectory,
    lqr: &LqrConfig,
    cfg: &ScorerConfig,
) -> Result<(EnvState, f64, RewardComponents), EngineError> {
    if env.is_done() {
        return Err(EngineError::SteppingDone(env.done));
    }
    let tracked = lqr_track(&env.ego, plan, lqr);
    let ego = bicycle_step(&env.ego, tracked.control, env.scenario.dt, &lqr.bicycle);
    let frame = env.frame + 1;
    let scenario = &env.scenario;

    let ego_box = cfg.ego_box(ego.x, ego.y, ego.heading);
    let mut others = scenario.agent_boxes_at(frame);
    others.extend_from_slice(&scenario.statics);
    let col = check_collision(&ego_box, &others);
    let drivable = scenario.drivable_polygons();
    let dac = check_drivable(&ego_box, &drivable);

    let mut wrong_dir_steps = env.wrong_dir_steps;
    let wd = {
        let lane_dir = scenario
            .nearest_lane([ego.x, ego.y])
            .map(|l| nearest_direction(l, [ego.x, ego.y]))
            .unwrap_or([ego.heading.cos(), ego.heading.sin()]);
        let dot = ego.heading.cos() * lane_dir[0] + ego.heading.sin() * lane_dir[1];
        if dot < 0.0 {
            wrong_dir_steps += 1;
        } else {
            wrong_dir_steps = 0;
        }
        if wrong_dir_steps as f64 * scenario.dt > cfg.wrong_direction_duration {
            0.0
        } else {
            1.0
        }
    };

    let mut agents = scenario.agent_motion_at(frame);
    agents.extend(scenario.statics.iter().map(|b| (*b, 0.0)));
    let ttc = compute_ttc(&ego_box, ego.speed, &agents, cfg);

    let mut history = env.history.clone();
    history.push(ego);
    if history.len() > 4 {
        history.remove(0);
    }
    let (comfort, _) = comfort_score(&history, scenario.dt, &cfg.comfort);

    let limit = scenario.speed_limit_at([ego.x, ego.y]);
    let speed = if ego.speed <= limit + cfg.speed_tolerance { 1.0 } else { 0.0 };

    let route = scenario.route_polyline();
    let ego_progress = route.project_arclength([ego.x, ego.y]) - env.route_origin;
    let expert = &scenario.ego_log[frame];
    let expert_progress =
        route.project_arclength([expert.x, expert.y]) - env.expert_origin;
    let progress = progress_score(ego_progress, expert_progress);

    let components = RewardComponents { col, dac, wd, ttc, comfort, progress, speed };
    let (done, reward) = if col == 0.0 {
        (DoneReason::Collision, 0.0)
    } else if dac == 0.0 {
        (DoneReason::Offroad, 0.0)
    } else if frame >= scenario.frame_count() - 1 {
        (DoneReason::Horizon, aggregate_reward(&components, cfg))
    } else {
        (DoneReason::None, aggregate_reward(&components, cfg))
    };

    let next = EnvState {
        scenario: env.scenario.clone(),
        frame,
        ego,
        history,
        route_origin: env.route_origin,
        expert_origin: env.expert_origin,
        wrong_dir_steps,
        done,
        reward_sum: env.reward_sum + reward,
        steps: env.steps + 1,
    };
    Ok((next, reward, components))
}

fn nearest_direction(lane: &crate::scenario::MapLane, p: [f64; 2]) -> [f64; 2] {
    let mut best = f64::INFINITY;
    let mut dir = [1.0, 0.0];
    for (pt, hint) in lane.centerline.iter().zip(&lane.direction_hint) {
        let d = (pt[0] - p[0]).hypot(pt[1] - p[1]);
        if d < best {
            best = d;
            dir = *hint;
        }
    }
    dir
}

/// A planner queried once per simulation step; plans are in world frame.
pub trait Planner {
    fn plan(&mut self, env: &EnvState, rng: &mut ChaCha8Rng) -> Trajectory;
}

/// Replays the expert log as the plan; the cheap reference planner for
/// benchmarks and score ceilings.
pub struct ExpertReplayPlanner {
    pub horizon: usize,
}

impl Planner for ExpertReplayPlanner {
    fn plan(&mut self, env: &EnvState, _rng: &mut ChaCha8Rng) -> Trajectory {
        let log = &env.scenario.ego_log;
        let pts = (1..=self.horizon)
            .map(|k| {
                let idx = (env.frame + k).min(log.len() - 1);
                let e = &log[idx];
                let [vx, vy] = e.velocity();
                Waypoint::new(e.x, e.y, vx, vy)
            })
            .collect();
        Trajectory::new(pts)
    }
}

/// Follows the nearest lane centerline at the current speed, blind to
/// obstacles; the difficulty-tagging baseline.
pub struct LaneFollowPlanner {
    pub horizon: usize,
}

impl Planner for LaneFollowPlanner {
    fn plan(&mut self, env: &EnvState, _rng: &mut ChaCha8Rng) -> Trajectory {
        let ego = env.ego;
        let speed = env.scenario.current_ego().speed.max(1.0);
        let Some(lane) = env.scenario.nearest_lane([ego.x, ego.y]) else {
            // no map: drive straight
            let pts = (1..=self.horizon)
                .map(|k| {
                    let d = speed * env.scenario.dt * k as f64;
                    Waypoint::new(
                        ego.x + d * ego.heading.cos(),
                        ego.y + d * ego.heading.sin(),
                        speed * ego.heading.cos(),
                        speed * ego.heading.sin(),
                    )
                })
                .collect();
            return Trajectory::new(pts);
        };
        let line = lane.centerline_polyline();
        let s0 = line.project_arclength([ego.x, ego.y]);
        let pts = (1..=self.horizon)
            .map(|k| {
                let s = s0 + speed * env.scenario.dt * k as f64;
                let p = line.point_at(s);
                let t = line.tangent_at(s);
                Waypoint::new(p[0], p[1], speed * t[0], speed * t[1])
            })
            .collect();
        Trajectory::new(pts)
    }
}

/// The diffusion planner at inference: deterministic sampling, no guidance,
/// plans in the ego frame transformed to world.
pub struct DiffusionPlanner {
    pub denoiser: Denoiser,
    pub schedule: NoiseSchedule,
    pub features: FeatureConfig,
}

impl DiffusionPlanner {
    /// Deterministic-sampling runtime for a fine-tuned or pretrained
    /// checkpoint.
    pub fn for_eval(denoiser: Denoiser, steps: usize) -> Self {
        Self {
            denoiser,
            schedule: NoiseSchedule::vp_linear(steps, 0.0, true),
            features: FeatureConfig::default(),
        }
    }
}

impl Planner for DiffusionPlanner {
    fn plan(&mut self, env: &EnvState, rng: &mut ChaCha8Rng) -> Trajectory {
        let emb = encode_scene(&env.scenario, env.frame, &env.ego, &self.features);
        let cond = Conditioning::from_embedding(&emb);
        let (traj, _) = sample_trajectory(&self.denoiser, &cond, &self.schedule, rng.random());
        traj.to_world(env.ego.x, env.ego.y, env.ego.heading)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioScore {
    pub index: usize,
    pub score: f64,
    pub done: DoneReason,
    pub steps: usize,
    pub col_mean: f64,
    pub dac_mean: f64,
    pub ttc_mean: f64,
    pub comfort_mean: f64,
    pub progress_mean: f64,
    pub speed_mean: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub scores: Vec<ScenarioScore>,
    pub mean_score: f64,
    pub collision_rate: f64,
    pub offroad_rate: f64,
}

/// Closed-loop evaluation over a scenario set. The per-scenario episode
/// score is 100 times the mean per-step reward over the full episode length,
/// with terminal events zeroing the remainder.
pub fn evaluate(
    planner: &mut dyn Planner,
    scenarios: &[Arc<Scenario>],
    seed: u64,
    lqr: &LqrConfig,
    cfg: &ScorerConfig,
) -> EvalReport {
    let mut scores = Vec::with_capacity(scenarios.len());
    let mut collisions = 0usize;
    let mut offroad = 0usize;
    for (index, scenario) in scenarios.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9));
        let mut env = EnvState::new(scenario.clone());
        let episode_len = scenario.frame_count() - 1 - CURRENT_FRAME;
        let mut acc = RewardAcc::default();
        while !env.is_done() {
            let plan = planner.plan(&env, &mut rng);
            let (next, _, comps) = env_step(&env, &plan, lqr, cfg).expect("not done");
            acc.add(&comps);
            env = next;
        }
        match env.done {
            DoneReason::Collision => collisions += 1,
            DoneReason::Offroad => offroad += 1,
            _ => {}
        }
        let score = 100.0 * env.reward_sum / episode_len as f64;
        scores.push(ScenarioScore {
            index,
            score,
            done: env.done,
            steps: env.steps,
            col_mean: acc.mean(acc.col),
            dac_mean: acc.mean(acc.dac),
            ttc_mean: acc.mean(acc.ttc),
            comfort_mean: acc.mean(acc.comfort),
            progress_mean: acc.mean(acc.progress),
            speed_mean: acc.mean(acc.speed),
        });
    }
    let n = scores.len().max(1) as f64;
    EvalReport {
        mean_score: scores.iter().map(|s| s.score).sum::<f64>() / n,
        collision_rate: collisions as f64 / n,
        offroad_rate: offroad as f64 / n,
        scores,
    }
}

#[derive(Default)]
struct RewardAcc {
    col: f64,
    dac: f64,
    ttc: f64,
    comfort: f64,
    progress: f64,
    speed: f64,
    n: usize,
}

impl RewardAcc {
    fn add(&mut self, c: &RewardComponents) {
        self.col += c.col;
        self.dac += c.dac;
        self.ttc += c.ttc;
        self.comfort += c.comfort;
        self.progress += c.progress;
        self.speed += c.speed;
        self.n += 1;
    }
    fn mean(&self, sum: f64) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            sum / self.n as f64
        }
    }
}

/// Difficulty tier of a scenario under the lane-follow baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DifficultyTier {
    /// Baseline collides or leaves the road.
    Fail,
    /// Baseline survives but scores below 90.
    LowScore,
    /// Baseline handles it.
    Regular,
}

/// Scores a scenario with the blind lane-follow baseline and tags its tier.
pub fn baseline_difficulty(
    scenario: &Arc<Scenario>,
    lqr: &LqrConfig,
    cfg: &ScorerConfig,
) -> (f64, DifficultyTier) {
    let mut planner = LaneFollowPlanner { horizon: 40 };
    let report = evaluate(&mut planner, std::slice::from_ref(scenario), 0, lqr, cfg);
    let s = &report.scores[0];
    let tier = match s.done {
        DoneReason::Collision | DoneReason::Offroad => DifficultyTier::Fail,
        _ if s.score < 90.0 => DifficultyTier::LowScore,
        _ => DifficultyTier::Regular,
    };
    (s.score, tier)
}

/// Aggregate environment steps per second at each worker count, using the
/// expert-replay dummy planner. Workers own disjoint environments and share
/// nothing mutable.
pub fn bench_throughput(
    worker_counts: &[usize],
    scenarios: &[Arc<Scenario>],
    steps_per_worker: usize,
    lqr: &LqrConfig,
    cfg: &ScorerConfig,
) -> Vec<(usize, f64)> {
    let mut results = Vec::new();
    for &workers in worker_counts {
        let start = std::time::Instant::now();
        std::thread::scope(|scope| {
            for w in 0..workers {
                let scenarios = scenarios.to_vec();
                scope.spawn(move || {
                    let mut planner = ExpertReplayPlanner { horizon: 40 };
                    let mut rng = ChaCha8Rng::seed_from_u64(w as u64);
                    let mut cursor = w % scenarios.len();
                    let mut env = EnvState::new(scenarios[cursor].clone());
                    for _ in 0..steps_per_worker {
                        if env.is_done() {
                            cursor = (cursor + 1) % scenarios.len();
                            env = EnvState::new(scenarios[cursor].clone());
                        }
                        let plan = planner.plan(&env, &mut rng);
                        let (next, _, _) = env_step(&env, &plan, lqr, cfg).expect("not done");
                        env = next;
                    }
                });
            }
        });
        let secs = start.elapsed().as_secs_f64();
        results.push((workers, (workers * steps_per_worker) as f64 / secs));
    }
    results
}

/// Heading-consistency guard used in tests: an ego state whose wrapped
/// heading differs from the stored one indicates a missed wrap.
pub fn heading_wrapped(e: &EgoState) -> bool {
    (wrap_angle(e.heading) - e.heading).abs() < 1e-15
}
