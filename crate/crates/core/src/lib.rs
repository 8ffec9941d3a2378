//! Closed-loop reinforcement fine-tuning for diffusion trajectory planners,
//! together with the batched driving simulator it trains against.
//!
//! The crate is organized around the training loop's data flow:
//!
//! - [`geom`], [`scenario`]: shared domain types, the `.nmx` scenario cache
//!   codec, and the synthetic scenario generator.
//! - [`dynamics`], [`scorer`], [`engine`]: LQR-tracked kinematic bicycle,
//!   the per-step reward stack, and the vectorized closed-loop environment.
//! - [`nn`], [`features`]: a minimal reverse-mode autodiff substrate, the
//!   optimizer, checkpointing, and the frozen scene feature encoder.
//! - [`diffusion`], [`explorer`]: the short-chain stochastic sampler with
//!   energy-based guidance, the compact denoiser, and the Beta-policy
//!   exploration head.
//! - [`pretrain`], [`rl`]: imitation pretraining, advantage estimation, the
//!   clipped policy update for the exploration policy, the group-relative
//!   update for the denoiser, and the full iteration driver.
//! - [`render`], [`config`], [`ablate`]: SVG debugging output, the TOML
//!   config surface, and the sweep machinery.

pub mod ablate;
pub mod config;
pub mod diffusion;
pub mod dynamics;
pub mod engine;
pub mod explorer;
pub mod features;
pub mod geom;
pub mod nn;
pub mod pretrain;
pub mod render;
pub mod rl;
pub mod scenario;
pub mod scorer;

pub use config::Config;
pub use geom::{
    frenet_frame, wrap_angle, EgoState, FrenetFrame, OrientedBox, SceneEmbedding, Trajectory,
    Waypoint, DEFAULT_HORIZON, SIM_DT,
};
pub use scenario::{decode_scenario, encode_scenario, generate_synthetic, Scenario, ScenarioKind};
