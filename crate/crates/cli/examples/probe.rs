//! Scratch probe: closed-loop trace of the pretrained planner.
use driverl_core::diffusion::{sample_trajectory, Conditioning, Denoiser, NoiseSchedule};
use driverl_core::engine::{env_step, DoneReason, EnvState};
use driverl_core::features::encode_scene;
use driverl_core::nn::load_checkpoint;
use driverl_core::scenario::{generate_synthetic, ScenarioKind};
use driverl_core::Config;
use std::path::Path;
use std::sync::Arc;

fn main() {
    let config = Config::desk();
    let params = load_checkpoint(Path::new("/tmp/study/pre2/pretrained.ckpt")).unwrap();
    let den = Denoiser::from_params(params, config.denoiser);
    let sch = NoiseSchedule::vp_linear(5, 0.0, true);

    let s = Arc::new(generate_synthetic(0, ScenarioKind::Straight));
    let mut env = EnvState::new(s.clone());
    let mut seed = 0u64;
    for step in 0..150 {
        let emb = encode_scene(&env.scenario, env.frame, &env.ego, &config.features);
        let cond = Conditioning::from_embedding(&emb);
        seed += 1;
        let (traj, _) = sample_trajectory(&den, &cond, &sch, seed);
        let plan = traj.to_world(env.ego.x, env.ego.y, env.ego.heading);
        // expert lateral position is y=0 in this recentred scenario
        if step % 10 == 0 || step > 140 {
            let p0 = traj.point(0);
            let p9 = traj.point(9);
            println!(
                "step {step:3} ego=({:7.2},{:6.3}) h={:6.3} v={:5.2} | plan0 local ({:5.2},{:6.3}) plan9 ({:5.2},{:6.3}) navi_off={:6.3}",
                env.ego.x, env.ego.y, env.ego.heading, env.ego.speed,
                p0.x, p0.y, p9.x, p9.y, emb.navi[0] * 5.0
            );
        }
        match env_step(&env, &plan, &config.dynamics, &config.scorer) {
            Ok((next, _r, comps)) => {
                if next.is_done() {
                    println!("done at step {step}: {:?} dac={} col={}", next.done, comps.dac, comps.col);
                    if next.done != DoneReason::Horizon { 
                        println!("final ego ({:.2},{:.3}) h={:.3}", next.ego.x, next.ego.y, next.ego.heading);
                    }
                    break;
                }
                env = next;
            }
            Err(e) => { println!("{e}"); break; }
        }
    }
}
