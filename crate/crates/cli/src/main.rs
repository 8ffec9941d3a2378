//! Operator surface: scenario generation, imitation pretraining, closed-loop
//! fine-tuning, evaluation, throughput benchmarking, rendering, and the
//! ablation sweeps, all driven by one TOML config whose effective values are
//! echoed into a per-run manifest.

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use driverl_core::ablate::{run_ablation, AblationGrid};
use driverl_core::diffusion::{Denoiser, GuidanceScales, NoiseSchedule};
use driverl_core::engine::{baseline_difficulty, bench_throughput, evaluate, DiffusionPlanner};
use driverl_core::explorer::Explorer;
use driverl_core::nn::{load_checkpoint, save_checkpoint};
use driverl_core::pretrain::{build_expert_dataset, pretrain};
use driverl_core::render::{render_frame, RenderOptions, RenderOverlays};
use driverl_core::rl::RftTrainer;
use driverl_core::scenario::{
    decode_scenario, encode_scenario, generate_synthetic, ScenarioKind,
};
use driverl_core::{Config, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

#[derive(Parser)]
#[command(name = "driverl", version, about = "Closed-loop fine-tuning workbench for diffusion trajectory planners")]
struct Cli {
    /// TOML config file; missing sections fall back to desk defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = "runs/latest")]
    out_dir: PathBuf,
    /// Rollout worker threads (defaults to the config value).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic `.nmx` scenarios with difficulty tags.
    GenScenarios {
        /// straight | curve | intersection | blocked_lane | cone_gap | mix
        #[arg(long, default_value = "mix")]
        kind: String,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Imitation-pretrain the denoiser on expert logs.
    Pretrain {
        /// Directory of `.nmx` files; generated when absent.
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        /// Override the configured number of optimizer steps.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Closed-loop reinforcement fine-tuning from a pretrained checkpoint.
    Rft {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint closed-loop over a scenario set.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
    },
    /// Measure environment stepping throughput across worker counts.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        worker_counts: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        steps: usize,
    },
    /// Render one scenario frame to SVG.
    Render {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 20)]
        frame: usize,
        /// Overlay the expert future.
        #[arg(long)]
        expert: bool,
        /// Overlay a guided candidate group sampled from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run a sweep: lambda | reward | dataset | group.
    Ablate {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        scenario_dir: Option<PathBuf>,
        /// Fine-tuning iterations per sweep cell.
        #[arg(long, default_value_t = 10)]
        iterations: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    run: RunInfo,
    config: &'a Config,
}

#[derive(Serialize)]
struct RunInfo {
    command: String,
    seed: u64,
    version: String,
    workers: usize,
}

fn write_manifest(out_dir: &Path, config: &Config, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out_dir)?;
    let command: Vec<String> = std::env::args().skip(1).collect();
    let manifest = Manifest {
        run: RunInfo {
            command: command.join(" "),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
            workers: config.rft.workers,
        },
        config,
    };
    let text = toml::to_string_pretty(&manifest).context("serialize manifest")?;
    std::fs::write(out_dir.join("manifest.toml"), text)?;
    Ok(())
}

fn effective_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("load {}", path.display()))?,
        None => Config::desk(),
    };
    config.rft.seed = cli.seed;
    config.pretrain.seed = cli.seed;
    if let Some(w) = cli.workers {
        config.rft.workers = w.max(1);
    }
    Ok(config)
}

fn run(cli: Cli) -> Result<()> {
    let config = effective_config(&cli)?;
    let out_dir = cli.out_dir.clone();
    write_manifest(&out_dir, &config, cli.seed)?;
    match cli.command {
        Command::GenScenarios { kind, count } => gen_scenarios(&config, &out_dir, cli.seed, &kind, count),
        Command::Pretrain { scenario_dir, steps } => {
            cmd_pretrain(&config, &out_dir, cli.seed, scenario_dir.as_deref(), steps)
        }
        Command::Rft { checkpoint, scenario_dir, iterations } => {
            cmd_rft(&config, &out_dir, cli.seed, &checkpoint, scenario_dir.as_deref(), iterations)
        }
        Command::Eval { checkpoint, scenario_dir } => {
            cmd_eval(&config, &out_dir, cli.seed, &checkpoint, scenario_dir.as_deref())
        }
        Command::Bench { worker_counts, steps } => cmd_bench(&config, &out_dir, &worker_counts, steps),
        Command::Render { scenario, frame, expert, checkpoint } => {
            cmd_render(&config, &out_dir, cli.seed, &scenario, frame, expert, checkpoint.as_deref())
        }
        Command::Ablate { grid, checkpoint, scenario_dir, iterations } => cmd_ablate(
            &config,
            &out_dir,
            cli.seed,
            &grid,
            &checkpoint,
            scenario_dir.as_deref(),
            iterations,
        ),
    }
}

fn parse_kinds(kind: &str) -> Result<Vec<ScenarioKind>> {
    if kind == "mix" {
        return Ok(ScenarioKind::ALL.to_vec());
    }
    Ok(vec![kind.parse::<ScenarioKind>().map_err(anyhow::Error::msg)?])
}

fn gen_scenarios(config: &Config, out_dir: &Path, seed: u64, kind: &str, count: usize) -> Result<()> {
    let kinds = parse_kinds(kind)?;
    let dir = out_dir.join("scenarios");
    std::fs::create_dir_all(&dir)?;
    #[derive(Serialize)]
    struct IndexRow {
        file: String,
        kind: String,
        seed: u64,
        baseline_score: f64,
        tier: String,
    }
    let mut index = Vec::with_capacity(count);
    for i in 0..count {
        let k = kinds[i % kinds.len()];
        let s = seed.wrapping_add(i as u64);
        let scenario = generate_synthetic(s, k);
        scenario.validate().map_err(anyhow::Error::msg)?;
        let bytes = encode_scenario(&scenario)?;
        let file = format!("{i:04}_{k}.nmx");
        std::fs::write(dir.join(&file), &bytes)?;
        let (score, tier) =
            baseline_difficulty(&Arc::new(scenario), &config.dynamics, &config.scorer);
        index.push(IndexRow {
            file,
            kind: k.to_string(),
            seed: s,
            baseline_score: score,
            tier: format!("{tier:?}"),
        });
    }
    let mut f = std::fs::File::create(dir.join("index.json"))?;
    for row in &index {
        writeln!(f, "{}", serde_json::to_string(row)?)?;
    }
    println!("wrote {count} scenarios to {}", dir.display());
    Ok(())
}

/// Loads every `.nmx` under `dir` (sorted by name), or generates a mixed set.
fn load_or_generate(
    scenario_dir: Option<&Path>,
    seed: u64,
    count: usize,
) -> Result<Vec<Arc<Scenario>>> {
    match scenario_dir {
        Some(dir) => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
                .with_context(|| format!("read {}", dir.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "nmx"))
                .collect();
            files.sort();
            if files.is_empty() {
                bail!("no .nmx scenarios in {}", dir.display());
            }
            files
                .iter()
                .map(|p| {
                    let bytes = std::fs::read(p)?;
                    let s = decode_scenario(&bytes)
                        .with_context(|| format!("decode {}", p.display()))?;
                    Ok(Arc::new(s))
                })
                .collect()
        }
        None => Ok((0..count)
            .map(|i| {
                let kind = ScenarioKind::ALL[i % ScenarioKind::ALL.len()];
                Arc::new(generate_synthetic(seed.wrapping_add(i as u64), kind))
            })
            .collect()),
    }
}

fn cmd_pretrain(
    config: &Config,
    out_dir: &Path,
    seed: u64,
    scenario_dir: Option<&Path>,
    steps: Option<usize>,
) -> Result<()> {
    let scenarios = load_or_generate(scenario_dir, seed, 40)?;
    let mut pcfg = config.pretrain;
    if let Some(s) = steps {
        pcfg.steps = s;
    }
    let dataset =
        build_expert_dataset(&scenarios, &config.features, config.denoiser.horizon, &pcfg);
    println!("pretraining on {} expert clips from {} scenarios", dataset.len(), scenarios.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut denoiser = Denoiser::init(&mut rng, config.denoiser);
    let losses = pretrain(&mut denoiser, &dataset, &pcfg);
    std::fs::create_dir_all(out_dir)?;
    let ckpt = out_dir.join("pretrained.ckpt");
    save_checkpoint(&denoiser.params, &ckpt)?;
    let mut f = std::fs::File::create(out_dir.join("pretrain_loss.jsonl"))?;
    for (step, loss) in losses.iter().enumerate() {
        writeln!(f, "{{\"step\":{step},\"loss\":{loss}}}")?;
    }
    let head: f64 = losses.iter().take(50).sum::<f64>() / losses.len().min(50) as f64;
    let tail: f64 =
        losses.iter().rev().take(50).sum::<f64>() / losses.len().min(50) as f64;
    println!("pretrain loss {head:.4} -> {tail:.4}; checkpoint at {}", ckpt.display());
    Ok(())
}

fn load_denoiser(config: &Config, checkpoint: &Path) -> Result<Denoiser> {
    if !checkpoint.exists() {
        bail!(
            "pretrained checkpoint not found at {}; run the pretrain subcommand first",
            checkpoint.display()
        );
    }
    let params = load_checkpoint(checkpoint)?;
    Ok(Denoiser::from_params(params, config.denoiser))
}

fn cmd_rft(
    config: &Config,
    out_dir: &Path,
    seed: u64,
    checkpoint: &Path,
    scenario_dir: Option<&Path>,
    iterations: Option<usize>,
) -> Result<()> {
    let denoiser = load_denoiser(config, checkpoint)?;
    let scenarios = load_or_generate(scenario_dir, seed, 40)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xE7);
    let explorer = Explorer::init(&mut rng, config.explorer);
    let mut rft = config.rft;
    rft.seed = seed;
    if let Some(it) = iterations {
        rft.iterations = it;
    }
    let iterations = rft.iterations;
    let checkpoint_every = rft.checkpoint_every.max(1);
    let mut trainer = RftTrainer::new(
        denoiser,
        explorer,
        scenarios,
        config.ppo,
        config.grpo,
        config.dynamics,
        config.scorer,
        config.guidance,
        config.features,
        rft,
    );
    std::fs::create_dir_all(out_dir)?;
    let mut metrics_file = std::fs::File::create(out_dir.join("metrics.jsonl"))?;
    for i in 0..iterations {
        let m = trainer.iteration();
        writeln!(metrics_file, "{}", serde_json::to_string(&m)?)?;
        if (i + 1) % checkpoint_every == 0 {
            trainer.save_checkpoints(out_dir, &format!("{:05}", i + 1))?;
        }
        if (i + 1) % 10 == 0 || i == 0 {
            println!(
                "iter {:4} steps {:7} group_reward {:.3}±{:.3} step_reward {:.3} D {:.3} col {:.2}",
                m.iteration,
                m.env_steps,
                m.rollout.group_reward_mean,
                m.rollout.group_reward_std,
                m.rollout.mean_step_reward,
                m.rollout.diversity,
                m.rollout.collision_rate,
            );
        }
    }
    trainer.save_checkpoints(out_dir, "final")?;
    println!("fine-tuning done: checkpoints and metrics.jsonl in {}", out_dir.display());
    Ok(())
}

fn cmd_eval(
    config: &Config,
    out_dir: &Path,
    seed: u64,
    checkpoint: &Path,
    scenario_dir: Option<&Path>,
) -> Result<()> {
    let denoiser = load_denoiser(config, checkpoint)?;
    let scenarios = load_or_generate(scenario_dir, seed, 40)?;
    let mut planner = DiffusionPlanner::for_eval(denoiser, config.rft.denoise_steps);
    planner.features = config.features;
    let report = evaluate(&mut planner, &scenarios, seed, &config.dynamics, &config.scorer);
    std::fs::create_dir_all(out_dir)?;
    let mut f = std::fs::File::create(out_dir.join("eval_report.jsonl"))?;
    for s in &report.scores {
        writeln!(f, "{}", serde_json::to_string(s)?)?;
    }
    println!(
        "eval over {} scenarios: mean score {:.2}, collisions {:.1}%, offroad {:.1}%",
        report.scores.len(),
        report.mean_score,
        report.collision_rate * 100.0,
        report.offroad_rate * 100.0
    );
    println!("note: scores use this simulator's surrogate scorer and are not comparable to external benchmark numbers");
    Ok(())
}

fn cmd_bench(config: &Config, out_dir: &Path, worker_counts: &[usize], steps: usize) -> Result<()> {
    let scenarios: Vec<Arc<Scenario>> = (0..4)
        .map(|i| Arc::new(generate_synthetic(i, ScenarioKind::Straight)))
        .collect();
    let results =
        bench_throughput(worker_counts, &scenarios, steps, &config.dynamics, &config.scorer);
    std::fs::create_dir_all(out_dir)?;
    let mut f = std::fs::File::create(out_dir.join("bench.json"))?;
    writeln!(f, "{}", serde_json::to_string(&results)?)?;
    println!("{:>8} {:>14}", "workers", "steps/second");
    for (w, rate) in &results {
        println!("{w:>8} {rate:>14.0}");
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_render(
    config: &Config,
    out_dir: &Path,
    seed: u64,
    scenario_path: &Path,
    frame: usize,
    expert: bool,
    checkpoint: Option<&Path>,
) -> Result<()> {
    let bytes = std::fs::read(scenario_path)
        .with_context(|| format!("read {}", scenario_path.display()))?;
    let scenario = decode_scenario(&bytes)?;
    let mut plans = Vec::new();
    if let Some(ckpt) = checkpoint {
        // overlay a guided candidate group across the scale extremes
        let denoiser = load_denoiser(config, ckpt)?;
        let ego = scenario.ego_log[frame.min(scenario.frame_count() - 1)];
        let emb = driverl_core::features::encode_scene(&scenario, frame, &ego, &config.features);
        let cond = driverl_core::diffusion::Conditioning::from_embedding(&emb);
        let schedule = NoiseSchedule::vp_linear(config.rft.denoise_steps, 1.0, false);
        let (reference, _) =
            driverl_core::diffusion::sample_trajectory(&denoiser, &cond, &schedule, seed);
        let scales: Vec<GuidanceScales> = (0..8)
            .map(|k| GuidanceScales::new(-1.0 + 2.0 * k as f64 / 7.0, 0.0))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds: Vec<u64> = (0..8).map(|_| rng.random()).collect();
        let group = driverl_core::diffusion::guided_sample_group(
            &denoiser,
            &cond,
            &reference,
            &scales,
            &schedule,
            &config.guidance,
            &seeds,
        );
        plans = group
            .members
            .iter()
            .map(|m| m.trajectory.to_world(ego.x, ego.y, ego.heading))
            .collect();
    }
    let overlays = RenderOverlays { plans: &plans, reference: None, show_expert: expert };
    let doc = render_frame(&scenario, frame, &overlays, &RenderOptions::default());
    std::fs::create_dir_all(out_dir)?;
    let out = out_dir.join(format!("frame_{frame:04}.svg"));
    std::fs::write(&out, doc)?;
    println!("rendered {}", out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_ablate(
    config: &Config,
    out_dir: &Path,
    seed: u64,
    grid: &str,
    checkpoint: &Path,
    scenario_dir: Option<&Path>,
    iterations: usize,
) -> Result<()> {
    let grid: AblationGrid = grid.parse().map_err(anyhow::Error::msg)?;
    let denoiser = load_denoiser(config, checkpoint)?;
    // default sweep set leans on the hard archetypes
    let scenarios = match scenario_dir {
        Some(dir) => load_or_generate(Some(dir), seed, 0)?,
        None => (0..10)
            .map(|i| {
                let kind = if i % 2 == 0 {
                    ScenarioKind::BlockedLane
                } else {
                    ScenarioKind::ConeGap
                };
                Arc::new(generate_synthetic(seed.wrapping_add(i), kind))
            })
            .collect(),
    };
    let rows = run_ablation(grid, config, &denoiser, &scenarios, seed, iterations);
    std::fs::create_dir_all(out_dir)?;
    let csv = out_dir.join("ablation.csv");
    let mut f = std::fs::File::create(&csv)?;
    writeln!(f, "grid,cell,seed,iterations,train_reward,eval_score,collision_rate")?;
    for r in &rows {
        writeln!(
            f,
            "{},{},{},{},{:.6},{:.3},{:.4}",
            r.grid, r.cell, r.seed, r.iterations, r.train_reward, r.eval_score, r.collision_rate
        )?;
    }
    let mut jf = std::fs::File::create(out_dir.join("ablation.jsonl"))?;
    for r in &rows {
        writeln!(jf, "{}", serde_json::to_string(r)?)?;
    }
    println!("{:>40} {:>12} {:>10} {:>10}", "cell", "train_reward", "eval", "col_rate");
    for r in &rows {
        println!(
            "{:>40} {:>12.4} {:>10.2} {:>10.3}",
            r.cell, r.train_reward, r.eval_score, r.collision_rate
        );
    }
    println!("{} rows written to {}", rows.len(), csv.display());
    Ok(())
}
