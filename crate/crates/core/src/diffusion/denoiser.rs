//! Compact trajectory denoiser: sinusoidal timestep embedding plus the
//! flattened noisy trajectory and the scene/navigation embeddings, through a
//! small stack of dense layers predicting the clean trajectory.

use super::{train_alpha_bar, TRAIN_STEPS};
use crate::geom::Trajectory;
use crate::nn::{Arr, GradMap, NodeId, ParamStore, Tape};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::sync::LazyLock;

static TRAIN_AB: LazyLock<Vec<f64>> = LazyLock::new(train_alpha_bar);

/// Fixed channel scales mapping physical trajectories into the unit-scale
/// latent space the diffusion runs in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrajNorm {
    pub pos_scale: f64,
    pub vel_scale: f64,
}

impl Default for TrajNorm {
    fn default() -> Self {
        Self { pos_scale: 50.0, vel_scale: 15.0 }
    }
}

impl TrajNorm {
    fn scale_of(&self, idx: usize) -> f64 {
        if idx % 4 < 2 {
            self.pos_scale
        } else {
            self.vel_scale
        }
    }

    pub fn to_norm(&self, flat_phys: &[f64]) -> Vec<f64> {
        flat_phys.iter().enumerate().map(|(i, v)| v / self.scale_of(i)).collect()
    }

    pub fn to_phys(&self, flat_norm: &[f64]) -> Vec<f64> {
        flat_norm.iter().enumerate().map(|(i, v)| v * self.scale_of(i)).collect()
    }
}

/// Conditioning inputs shared by every member of a trajectory group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditioning {
    pub scene: Vec<f64>,
    pub navi: Vec<f64>,
}

impl Conditioning {
    pub fn from_embedding(e: &crate::geom::SceneEmbedding) -> Self {
        Self { scene: e.scene.clone(), navi: e.navi.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub horizon: usize,
    pub width: usize,
    pub hidden_layers: usize,
    pub t_embed_dim: usize,
    pub d_scene: usize,
    pub d_navi: usize,
    pub norm: TrajNorm,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            horizon: crate::geom::DEFAULT_HORIZON,
            width: 256,
            hidden_layers: 3,
            t_embed_dim: 16,
            d_scene: 40,
            d_navi: 8,
            norm: TrajNorm::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn traj_dim(&self) -> usize {
        4 * self.horizon
    }

    pub fn input_dim(&self) -> usize {
        self.traj_dim() + self.d_scene + self.d_navi + self.t_embed_dim
    }
}

/// Sinusoidal embedding of a raw training timestep.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = (-(i as f64) * (10_000.0f64).ln() / half as f64).exp();
        let arg = t as f64 * freq;
        out.push(arg.sin());
        out.push(arg.cos());
    }
    while out.len() < dim {
        out.push(0.0);
    }
    out
}

/// Anything the sampler can denoise with: predicts the clean normalized
/// trajectory rows from noisy rows at a training timestep.
pub trait DenoiserModel {
    fn horizon(&self) -> usize;
    fn norm(&self) -> TrajNorm;
    fn predict_x0_norm(&self, x_norm: &Arr, t: usize, cond: &Conditioning) -> Arr;
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    pub params: ParamStore,
    pub cfg: DenoiserConfig,
}

/// Tape node ids of one registration of the denoiser parameters.
pub struct DenoiserBinding {
    layers: Vec<(NodeId, NodeId)>,
}

impl Denoiser {
    pub fn init(rng: &mut impl Rng, cfg: DenoiserConfig) -> Self {
        let mut params = ParamStore::new();
        let mut dims = vec![cfg.input_dim()];
        dims.extend(std::iter::repeat_n(cfg.width, cfg.hidden_layers));
        dims.push(cfg.traj_dim());
        for l in 0..dims.len() - 1 {
            params.init_dense(rng, &layer_name(l), dims[l], dims[l + 1]);
        }
        Self { params, cfg }
    }

    pub fn from_params(params: ParamStore, cfg: DenoiserConfig) -> Self {
        Self { params, cfg }
    }

    fn n_layers(&self) -> usize {
        self.cfg.hidden_layers + 1
    }

    /// Concatenates `[x_norm | scene | navi | t_embed]` per row.
    fn assemble(&self, x_norm: &Arr, ts: &[usize], cond: &Conditioning) -> Arr {
        let g = x_norm.nrows();
        assert_eq!(ts.len(), g);
        assert_eq!(x_norm.ncols(), self.cfg.traj_dim(), "trajectory dim mismatch");
        assert_eq!(cond.scene.len(), self.cfg.d_scene, "scene dim mismatch");
        assert_eq!(cond.navi.len(), self.cfg.d_navi, "navi dim mismatch");
        let mut out = Arr::zeros((g, self.cfg.input_dim()));
        for r in 0..g {
            let temb = timestep_embedding(ts[r], self.cfg.t_embed_dim);
            let mut row: Vec<f64> = Vec::with_capacity(self.cfg.input_dim());
            row.extend(x_norm.row(r).iter());
            row.extend_from_slice(&cond.scene);
            row.extend_from_slice(&cond.navi);
            row.extend_from_slice(&temb);
            out.row_mut(r).assign(&ndarray::Array1::from(row));
        }
        out
    }

    /// Registers every parameter once on a tape for reuse across forwards.
    pub fn bind(&self, tape: &mut Tape) -> DenoiserBinding {
        let layers = (0..self.n_layers())
            .map(|l| {
                let name = layer_name(l);
                let w = tape.param(&name, self.params.get(&name).clone());
                let bias_name = format!("{name}.bias");
                let b = tape.param(&bias_name, self.params.get(&bias_name).clone());
                (w, b)
            })
            .collect();
        DenoiserBinding { layers }
    }

    /// Differentiable forward on a tape; `x_norm` enters as a constant, so
    /// gradients flow to the parameters only.
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        bind: &DenoiserBinding,
        x_norm: &Arr,
        ts: &[usize],
        cond: &Conditioning,
    ) -> NodeId {
        let input = self.assemble(x_norm, ts, cond);
        let mut h = tape.constant(input);
        for (l, (w, b)) in bind.layers.iter().enumerate() {
            h = tape.dense(h, *w, *b);
            if l + 1 < self.n_layers() {
                h = tape.tanh(h);
            }
        }
        h
    }
}

impl DenoiserModel for Denoiser {
    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn norm(&self) -> TrajNorm {
        self.cfg.norm
    }

    fn predict_x0_norm(&self, x_norm: &Arr, t: usize, cond: &Conditioning) -> Arr {
        let ts = vec![t; x_norm.nrows()];
        let mut h = self.assemble(x_norm, &ts, cond);
        for l in 0..self.n_layers() {
            let name = layer_name(l);
            let w = self.params.get(&name);
            let b = self.params.get(&format!("{name}.bias"));
            h = h.dot(w) + &b.row(0);
            if l + 1 < self.n_layers() {
                h.mapv_inplace(f64::tanh);
            }
        }
        h
    }
}

fn layer_name(l: usize) -> String {
    format!("den.l{l}")
}

/// Clean-sample-prediction loss at a fixed `(timestep, noise)` draw;
/// the mean squared error is taken in the normalized latent space.
pub fn pretrain_loss_given(
    den: &Denoiser,
    experts: &[(&Trajectory, &Conditioning)],
    draws: &[(usize, Vec<f64>)],
) -> (f64, GradMap) {
    assert_eq!(experts.len(), draws.len());
    let mut tape = Tape::new();
    let bind = den.bind(&mut tape);
    let mut per_sample = Vec::with_capacity(experts.len());
    for ((expert, cond), (t, noise)) in experts.iter().zip(draws) {
        let x0: Vec<f64> = den.cfg.norm.to_norm(&expert.to_flat());
        let ab = TRAIN_AB[*t];
        let xs: Vec<f64> = x0
            .iter()
            .zip(noise)
            .map(|(x, z)| ab.sqrt() * x + (1.0 - ab).sqrt() * z)
            .collect();
        let xs = Arr::from_shape_vec((1, xs.len()), xs).unwrap();
        let pred = den.tape_forward(&mut tape, &bind, &xs, &[*t], cond);
        let target = tape.constant(Arr::from_shape_vec((1, x0.len()), x0).unwrap());
        let diff = tape.sub(pred, target);
        let sq = tape.mul(diff, diff);
        per_sample.push(tape.mean_all(sq));
    }
    let mut loss = per_sample[0];
    for node in &per_sample[1..] {
        loss = tape.add(loss, *node);
    }
    if per_sample.len() > 1 {
        loss = tape.scale(loss, 1.0 / per_sample.len() as f64);
    }
    let grads = tape.backward(loss);
    (tape.scalar(loss), tape.param_grads(&grads))
}

/// Single-sample pretraining loss with a uniformly sampled timestep.
pub fn pretrain_loss(
    den: &Denoiser,
    expert: &Trajectory,
    cond: &Conditioning,
    rng: &mut impl Rng,
) -> (f64, GradMap) {
    pretrain_loss_batch(den, &[(expert, cond)], rng)
}

/// Batched pretraining loss; each sample draws its own timestep and noise.
pub fn pretrain_loss_batch(
    den: &Denoiser,
    experts: &[(&Trajectory, &Conditioning)],
    rng: &mut impl Rng,
) -> (f64, GradMap) {
    let dim = den.cfg.traj_dim();
    let draws: Vec<(usize, Vec<f64>)> = experts
        .iter()
        .map(|_| {
            let t = rng.random_range(0..TRAIN_STEPS);
            let noise: Vec<f64> =
                (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            (t, noise)
        })
        .collect();
    pretrain_loss_given(den, experts, &draws)
}

/// Row-major stack of trajectories in normalized latent space.
pub fn trajectories_to_rows(trajs: &[&Trajectory], norm: &TrajNorm) -> Arr {
    let dim = trajs.first().map(|t| t.len() * 4).unwrap_or(0);
    let mut out = Arr::zeros((trajs.len(), dim));
    for (r, t) in trajs.iter().enumerate() {
        let flat = norm.to_norm(&t.to_flat());
        out.row_mut(r).assign(&ndarray::Array1::from(flat));
    }
    out
}

/// Inverse of [`trajectories_to_rows`] for one row.
pub fn row_to_trajectory(row: ndarray::ArrayView1<f64>, norm: &TrajNorm) -> Trajectory {
    let phys = norm.to_phys(row.as_slice().expect("contiguous row"));
    Trajectory::from_flat(&phys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Waypoint, SIM_DT};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg() -> DenoiserConfig {
        DenoiserConfig {
            horizon: 4,
            width: 8,
            hidden_layers: 2,
            t_embed_dim: 4,
            d_scene: 5,
            d_navi: 3,
            norm: TrajNorm::default(),
        }
    }

    fn tiny_cond() -> Conditioning {
        Conditioning { scene: vec![0.1, -0.2, 0.3, 0.0, 0.5], navi: vec![0.2, 0.0, -0.1] }
    }

    fn tiny_expert(speed: f64) -> Trajectory {
        Trajectory::new(
            (0..4)
                .map(|i| Waypoint::new(speed * SIM_DT * (i + 1) as f64, 0.0, speed, 0.0))
                .collect(),
        )
    }

    #[test]
    fn norm_round_trip() {
        let norm = TrajNorm::default();
        let flat = vec![10.0, -4.0, 3.0, 1.5, 100.0, 0.0, -12.0, 7.0];
        let back = norm.to_phys(&norm.to_norm(&flat));
        for (a, b) in flat.iter().zip(&back) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn timestep_embedding_shape_and_range() {
        let e = timestep_embedding(999, 16);
        assert_eq!(e.len(), 16);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(timestep_embedding(0, 16), timestep_embedding(500, 16));
    }

    #[test]
    fn inference_and_tape_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let den = Denoiser::init(&mut rng, tiny_cfg());
        let cond = tiny_cond();
        let x = Arr::from_shape_fn((3, 16), |_| rng.random_range(-1.0..1.0));
        let direct = den.predict_x0_norm(&x, 123, &cond);
        let mut tape = Tape::new();
        let bind = den.bind(&mut tape);
        let node = den.tape_forward(&mut tape, &bind, &x, &[123, 123, 123], &cond);
        let taped = tape.value(node);
        for (a, b) in direct.iter().zip(taped.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn zero_denoiser_on_zero_expert_has_zero_loss() {
        let cfg = tiny_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut den = Denoiser::init(&mut rng, cfg);
        // zero every parameter: the net returns the expert (all zeros) exactly
        let names: Vec<String> = den.params.iter().map(|(n, _)| n.clone()).collect();
        for n in &names {
            let shape = den.params.get(n).dim();
            den.params.insert(n, Arr::zeros(shape));
        }
        let expert = Trajectory::new(vec![Waypoint::default(); 4]);
        let cond = tiny_cond();
        let (loss, _) = pretrain_loss(&den, &expert, &cond, &mut rng);
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn pretrain_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let den = Denoiser::init(&mut rng, tiny_cfg());
        let expert = tiny_expert(5.0);
        let cond = tiny_cond();
        let dim = den.cfg.traj_dim();
        let noise: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let draws = vec![(700usize, noise)];
        let (_, grads) = pretrain_loss_given(&den, &[(&expert, &cond)], &draws);

        let h = 1e-6;
        for (name, g) in grads.iter() {
            // probe a few entries of each tensor
            let shape = g.dim();
            for probe in [(0usize, 0usize), (shape.0 / 2, shape.1 / 2)] {
                let mut plus = den.clone();
                plus.params.get_mut(name)[[probe.0, probe.1]] += h;
                let (fp, _) = pretrain_loss_given(&plus, &[(&expert, &cond)], &draws);
                let mut minus = den.clone();
                minus.params.get_mut(name)[[probe.0, probe.1]] -= h;
                let (fm, _) = pretrain_loss_given(&minus, &[(&expert, &cond)], &draws);
                let fd = (fp - fm) / (2.0 * h);
                let an = g[[probe.0, probe.1]];
                let denom = fd.abs().max(an.abs()).max(1e-4);
                assert!(
                    (fd - an).abs() / denom < 1e-5,
                    "{name}[{probe:?}]: fd {fd} vs analytic {an}"
                );
            }
        }
    }

    #[test]
    fn pretraining_reduces_loss_on_a_tiny_task() {
        use crate::nn::{optim_step, OptimConfig, OptimState};
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut den = Denoiser::init(&mut rng, tiny_cfg());
        let cond = tiny_cond();
        let experts: Vec<Trajectory> = (0..4).map(|i| tiny_expert(3.0 + i as f64)).collect();
        let mut opt = OptimState::new(OptimConfig {
            base_lr: 3e-3,
            total_steps: 4000,
            ..OptimConfig::default()
        });
        let mut first = 0.0;
        let mut last = 0.0;
        for step in 0..400 {
            let batch: Vec<(&Trajectory, &Conditioning)> =
                experts.iter().map(|e| (e, &cond)).collect();
            let (loss, grads) = pretrain_loss_batch(&den, &batch, &mut rng);
            if step == 0 {
                first = loss;
            }
            last = loss;
            optim_step(&mut den.params, &grads, &mut opt);
        }
        assert!(last < first * 0.5, "loss {first} -> {last}");
    }
}
