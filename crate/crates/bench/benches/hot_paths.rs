//! Hot-path micro-benchmarks: single environment steps, denoiser sampling,
//! open-loop trajectory scoring, and the scenario codec.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use driverl_bench::bench_scenarios;
use driverl_core::diffusion::{
    guided_sample_group, sample_trajectory, Conditioning, Denoiser, DenoiserConfig,
    GuidanceConfig, GuidanceScales, NoiseSchedule,
};
use driverl_core::dynamics::LqrConfig;
use driverl_core::engine::{env_step, EnvState, ExpertReplayPlanner, Planner};
use driverl_core::features::encode_scene;
use driverl_core::scenario::{decode_scenario, encode_scenario, CURRENT_FRAME};
use driverl_core::scorer::{score_trajectory, RewardMode, ScorerConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn bench_env_step(c: &mut Criterion) {
    let scenarios = bench_scenarios();
    let lqr = LqrConfig::default();
    let cfg = ScorerConfig::default();
    c.bench_function("env_step_expert_replay", |b| {
        let mut planner = ExpertReplayPlanner { horizon: 40 };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.iter_batched(
            || EnvState::new(scenarios[0].clone()),
            |env| {
                let plan = planner.plan(&env, &mut rng);
                black_box(env_step(&env, &plan, &lqr, &cfg).unwrap())
            },
            BatchSize::SmallInput,
        )
    });
}

fn planner_fixture() -> (Denoiser, Conditioning, NoiseSchedule) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = DenoiserConfig::default();
    let den = Denoiser::init(&mut rng, cfg);
    let scenarios = bench_scenarios();
    let ego = scenarios[0].current_ego();
    let emb = encode_scene(&scenarios[0], CURRENT_FRAME, &ego, &Default::default());
    (den, Conditioning::from_embedding(&emb), NoiseSchedule::vp_linear(5, 1.0, false))
}

fn bench_sampling(c: &mut Criterion) {
    let (den, cond, sch) = planner_fixture();
    c.bench_function("sample_single_trajectory", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed += 1;
            black_box(sample_trajectory(&den, &cond, &sch, seed))
        })
    });
    c.bench_function("guided_sample_group_of_8", |b| {
        let reference = sample_trajectory(&den, &cond, &sch, 0).0;
        let scales: Vec<GuidanceScales> =
            (0..8).map(|k| GuidanceScales::new(-1.0 + 0.25 * k as f64, 0.1)).collect();
        let seeds: Vec<u64> = (0..8).collect();
        let gcfg = GuidanceConfig::default();
        b.iter(|| {
            black_box(guided_sample_group(&den, &cond, &reference, &scales, &sch, &gcfg, &seeds))
        })
    });
}

fn bench_scoring(c: &mut Criterion) {
    let scenarios = bench_scenarios();
    let cfg = ScorerConfig::default();
    let scenario = &scenarios[3]; // a blocked lane
    let ego = scenario.current_ego();
    let mut planner = ExpertReplayPlanner { horizon: 80 };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let plan = planner.plan(&EnvState::new(scenario.clone()), &mut rng);
    c.bench_function("score_trajectory_open_loop", |b| {
        b.iter(|| {
            black_box(
                score_trajectory(&plan, scenario, CURRENT_FRAME, &ego, &cfg, RewardMode::Survival)
                    .unwrap(),
            )
        })
    });
}

fn bench_codec(c: &mut Criterion) {
    let scenarios = bench_scenarios();
    let bytes = encode_scenario(&scenarios[2]).unwrap();
    c.bench_function("scenario_encode", |b| {
        b.iter(|| black_box(encode_scenario(&scenarios[2]).unwrap()))
    });
    c.bench_function("scenario_decode", |b| {
        b.iter(|| black_box(decode_scenario(&bytes).unwrap()))
    });
}

criterion_group!(benches, bench_env_step, bench_sampling, bench_scoring, bench_codec);
criterion_main!(benches);
