//! Exploration policy: encodes the reference trajectory through a small
//! token/channel mixer, fuses it with the scene tokens via single-head
//! cross-attention, and emits two Beta distributions over the guidance
//! scales plus a state-value estimate.
//!
//! Output heads are zero-initialized so a fresh policy samples symmetric
//! Beta distributions: zero-mean guidance scales and a zero value estimate.

use crate::diffusion::{GuidanceScales, TrajNorm};
use crate::geom::{SceneEmbedding, Trajectory};
use crate::nn::{func, Arr, NodeId, ParamStore, Tape};
use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplorerConfig {
    pub d_model: usize,
    /// Reference trajectory is downsampled to this many tokens before
    /// mixing.
    pub ref_tokens: usize,
    pub head_hidden: usize,
    pub scene_token_dim: usize,
    pub n_scene_tokens: usize,
    pub d_navi: usize,
    pub norm: TrajNorm,
}

impl Default for ExplorerConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            ref_tokens: 16,
            head_hidden: 64,
            scene_token_dim: crate::features::TOKEN_DIM,
            n_scene_tokens: 8,
            d_navi: 8,
            norm: TrajNorm::default(),
        }
    }
}

/// Parameters of the two guidance-scale Beta distributions; the softplus+1
/// head keeps every parameter above 1 (unimodal).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a_lat: f64,
    pub b_lat: f64,
    pub a_lon: f64,
    pub b_lon: f64,
}

impl BetaParams {
    pub fn as_array(&self) -> [f64; 4] {
        [self.a_lat, self.b_lat, self.a_lon, self.b_lon]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub beta: BetaParams,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct Explorer {
    pub params: ParamStore,
    pub cfg: ExplorerConfig,
}

pub struct ExplorerBinding {
    names: Vec<(String, NodeId)>,
}

impl ExplorerBinding {
    fn get(&self, name: &str) -> NodeId {
        self.names
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("unbound parameter {name}"))
            .1
    }
}

const PARAM_NAMES: [&str; 9] = [
    "exp.chan", "exp.tok", "exp.scene_proj", "exp.navi_proj", "exp.wq", "exp.wk", "exp.wv",
    "exp.head", "exp.val",
];

impl Explorer {
    pub fn init(rng: &mut impl Rng, cfg: ExplorerConfig) -> Self {
        let d = cfg.d_model;
        let mut params = ParamStore::new();
        params.init_dense(rng, "exp.chan", 4, d);
        params.init_dense(rng, "exp.tok", cfg.ref_tokens, cfg.ref_tokens);
        params.init_dense(rng, "exp.scene_proj", cfg.scene_token_dim, d);
        params.init_dense(rng, "exp.navi_proj", cfg.d_navi, d);
        params.init_dense(rng, "exp.wq", d, d);
        params.init_dense(rng, "exp.wk", d, d);
        params.init_dense(rng, "exp.wv", d, d);
        params.init_dense(rng, "exp.head.h", 2 * d, cfg.head_hidden);
        params.init_dense_zero("exp.head.out", cfg.head_hidden, 4);
        params.init_dense(rng, "exp.val.h", 2 * d, cfg.head_hidden);
        params.init_dense_zero("exp.val.out", cfg.head_hidden, 1);
        Self { params, cfg }
    }

    pub fn from_params(params: ParamStore, cfg: ExplorerConfig) -> Self {
        Self { params, cfg }
    }

    /// Downsampled, channel-normalized reference tokens (`ref_tokens x 4`).
    fn ref_matrix(&self, reference: &Trajectory) -> Arr {
        let t = self.cfg.ref_tokens;
        let n = reference.len().max(1);
        let mut out = Arr::zeros((t, 4));
        for i in 0..t {
            let idx = (i * n / t).min(n - 1);
            let p = reference.point(idx);
            out[[i, 0]] = p.x / self.cfg.norm.pos_scale;
            out[[i, 1]] = p.y / self.cfg.norm.pos_scale;
            out[[i, 2]] = p.vx / self.cfg.norm.vel_scale;
            out[[i, 3]] = p.vy / self.cfg.norm.vel_scale;
        }
        out
    }

    /// Scene tokens (`n_scene_tokens x token_dim`) plus the navigation row.
    fn scene_matrix(&self, scene: &SceneEmbedding) -> (Arr, Arr) {
        let n = self.cfg.n_scene_tokens;
        let d = self.cfg.scene_token_dim;
        assert_eq!(scene.scene.len(), n * d, "scene embedding dim mismatch");
        assert_eq!(scene.navi.len(), self.cfg.d_navi, "navi embedding dim mismatch");
        let tokens = Arr::from_shape_vec((n, d), scene.scene.clone()).unwrap();
        let navi = Arr::from_shape_vec((1, self.cfg.d_navi), scene.navi.clone()).unwrap();
        (tokens, navi)
    }

    pub fn bind(&self, tape: &mut Tape) -> ExplorerBinding {
        let mut names = Vec::new();
        for base in PARAM_NAMES {
            for name in bound_names(base) {
                let id = tape.param(&name, self.params.get(&name).clone());
                names.push((name, id));
            }
        }
        ExplorerBinding { names }
    }

    /// Differentiable forward; returns the Beta parameter row
    /// `[a_lat, b_lat, a_lon, b_lon]` (post-activation) and the value.
    pub fn tape_forward(
        &self,
        tape: &mut Tape,
        bind: &ExplorerBinding,
        scene: &SceneEmbedding,
        reference: &Trajectory,
    ) -> (NodeId, NodeId) {
        let d = self.cfg.d_model;
        // reference mixer: channel mix, token mix, mean-pool to one token
        let x = tape.constant(self.ref_matrix(reference));
        let w = bind.get("exp.chan");
        let b = bind.get("exp.chan.bias");
        let h = tape.dense(x, w, b);
        let h = tape.tanh(h);
        let ht = tape.transpose(h);
        let wt = bind.get("exp.tok");
        let bt = bind.get("exp.tok.bias");
        let mixed = tape.dense(ht, wt, bt);
        let mixed = tape.tanh(mixed);
        let back = tape.transpose(mixed);
        let ref_token = tape.mean_rows(back);

        // scene/navigation tokens
        let (scene_tokens, navi_row) = self.scene_matrix(scene);
        let st = tape.constant(scene_tokens);
        let sp = bind.get("exp.scene_proj");
        let spb = bind.get("exp.scene_proj.bias");
        let st = tape.dense(st, sp, spb);
        let st = tape.tanh(st);
        let nv = tape.constant(navi_row);
        let np = bind.get("exp.navi_proj");
        let npb = bind.get("exp.navi_proj.bias");
        let nv = tape.dense(nv, np, npb);
        let nv = tape.tanh(nv);
        let kv_in = concat_rows(tape, st, nv);

        // single-head cross-attention, query = reference token
        let wq = bind.get("exp.wq");
        let wqb = bind.get("exp.wq.bias");
        let q = tape.dense(ref_token, wq, wqb);
        let wk = bind.get("exp.wk");
        let wkb = bind.get("exp.wk.bias");
        let k = tape.dense(kv_in, wk, wkb);
        let wv = bind.get("exp.wv");
        let wvb = bind.get("exp.wv.bias");
        let v = tape.dense(kv_in, wv, wvb);
        let kt = tape.transpose(k);
        let logits = tape.matmul(q, kt);
        let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
        let attn = tape.softmax_rows(logits);
        let ctx = tape.matmul(attn, v);

        let fused = tape.concat_cols(ref_token, ctx);

        // guidance head: softplus(z) + 1 keeps the Beta unimodal
        let hw = bind.get("exp.head.h");
        let hb = bind.get("exp.head.h.bias");
        let hh = tape.dense(fused, hw, hb);
        let hh = tape.tanh(hh);
        let ow = bind.get("exp.head.out");
        let ob = bind.get("exp.head.out.bias");
        let z = tape.dense(hh, ow, ob);
        let sp_z = tape.softplus(z);
        let beta = tape.add_scalar(sp_z, 1.0);

        // value head
        let vw = bind.get("exp.val.h");
        let vb = bind.get("exp.val.h.bias");
        let vh = tape.dense(fused, vw, vb);
        let vh = tape.tanh(vh);
        let vow = bind.get("exp.val.out");
        let vob = bind.get("exp.val.out.bias");
        let value = tape.dense(vh, vow, vob);

        (beta, value)
    }

    /// Inference forward without a tape.
    pub fn forward(&self, scene: &SceneEmbedding, reference: &Trajectory) -> PolicyOutput {
        let mut tape = Tape::new();
        let bind = self.bind(&mut tape);
        let (beta, value) = self.tape_forward(&mut tape, &bind, scene, reference);
        let b = tape.value(beta);
        PolicyOutput {
            beta: BetaParams {
                a_lat: b[[0, 0]],
                b_lat: b[[0, 1]],
                a_lon: b[[0, 2]],
                b_lon: b[[0, 3]],
            },
            value: tape.scalar(value),
        }
    }
}

fn bound_names(base: &str) -> Vec<String> {
    match base {
        "exp.head" => vec![
            "exp.head.h".into(),
            "exp.head.h.bias".into(),
            "exp.head.out".into(),
            "exp.head.out.bias".into(),
        ],
        "exp.val" => vec![
            "exp.val.h".into(),
            "exp.val.h.bias".into(),
            "exp.val.out".into(),
            "exp.val.out.bias".into(),
        ],
        other => vec![other.to_string(), format!("{other}.bias")],
    }
}

fn concat_rows(tape: &mut Tape, a: NodeId, b: NodeId) -> NodeId {
    // stack row blocks via transpose + column concat
    let at = tape.transpose(a);
    let bt = tape.transpose(b);
    let cat = tape.concat_cols(at, bt);
    tape.transpose(cat)
}

/// Draws guidance scales from the Beta distributions through the affine map
/// `eta = 2u - 1`, returning the exact log-density of the draw.
pub fn sample_scales(
    beta: &BetaParams,
    rng: &mut impl Rng,
) -> (GuidanceScales, f64) {
    let u_lat = rand_distr::Beta::new(beta.a_lat, beta.b_lat)
        .expect("valid Beta parameters")
        .sample(rng);
    let u_lon = rand_distr::Beta::new(beta.a_lon, beta.b_lon)
        .expect("valid Beta parameters")
        .sample(rng);
    let scales = GuidanceScales::new(2.0 * u_lat - 1.0, 2.0 * u_lon - 1.0);
    // shared code path: the stored log-prob is exactly what evaluation of
    // the same draw returns
    let (log_prob, _) = log_prob_and_entropy(beta, &scales);
    (scales, log_prob)
}

/// Exact log-density and entropy of the scale distribution under the affine
/// map: per dimension, `log p(eta) = log Beta((eta+1)/2) - log 2` and
/// `H(eta) = H_Beta + log 2`.
pub fn log_prob_and_entropy(beta: &BetaParams, scales: &GuidanceScales) -> (f64, f64) {
    let clamp = |eta: f64| eta.clamp(-(1.0 - 1e-9), 1.0 - 1e-9);
    let u_lat = (clamp(scales.eta_lat) + 1.0) / 2.0;
    let u_lon = (clamp(scales.eta_lon) + 1.0) / 2.0;
    let ln2 = std::f64::consts::LN_2;
    let log_prob = func::beta_log_pdf(u_lat, beta.a_lat, beta.b_lat)
        + func::beta_log_pdf(u_lon, beta.a_lon, beta.b_lon)
        - 2.0 * ln2;
    let entropy = func::beta_entropy(beta.a_lat, beta.b_lat)
        + func::beta_entropy(beta.a_lon, beta.b_lon)
        + 2.0 * ln2;
    (log_prob, entropy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{encode_scene, FeatureConfig};
    use crate::scenario::{generate_synthetic, ScenarioKind, CURRENT_FRAME};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (Explorer, SceneEmbedding, Trajectory) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let explorer = Explorer::init(&mut rng, ExplorerConfig::default());
        let s = generate_synthetic(1, ScenarioKind::Straight);
        let ego = s.current_ego();
        let emb = encode_scene(&s, CURRENT_FRAME, &ego, &FeatureConfig::default());
        let pts = (1..=80)
            .map(|k| {
                let e = &s.ego_log[CURRENT_FRAME + k.min(150)];
                let [vx, vy] = e.velocity();
                crate::geom::Waypoint::new(e.x - ego.x, e.y - ego.y, vx, vy)
            })
            .collect();
        (explorer, emb, Trajectory::new(pts))
    }

    #[test]
    fn zero_init_heads_give_symmetric_beta_and_zero_value() {
        let (explorer, emb, reference) = fixture();
        let out = explorer.forward(&emb, &reference);
        let expect = func::softplus(0.0) + 1.0;
        for p in out.beta.as_array() {
            assert_abs_diff_eq!(p, expect, epsilon = 1e-12);
        }
        assert_eq!(out.value, 0.0);
    }

    #[test]
    fn beta_params_always_exceed_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut explorer, emb, reference) = fixture();
        // randomize the heads as if trained
        let shape = explorer.params.get("exp.head.out").dim();
        let w = Arr::from_shape_fn(shape, |_| rng.random_range(-2.0..2.0));
        explorer.params.insert("exp.head.out", w);
        let out = explorer.forward(&emb, &reference);
        for p in out.beta.as_array() {
            assert!(p > 1.0, "parameter {p} not > 1");
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let (explorer, emb, reference) = fixture();
        let a = explorer.forward(&emb, &reference);
        let b = explorer.forward(&emb, &reference);
        assert_eq!(a, b);
    }

    #[test]
    fn trained_heads_are_scene_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut explorer, emb, reference) = fixture();
        let shape = explorer.params.get("exp.head.out").dim();
        let w = Arr::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0));
        explorer.params.insert("exp.head.out", w);
        let base = explorer.forward(&emb, &reference);
        let mut nudged = emb.clone();
        nudged.scene[0] += 0.2;
        let out = explorer.forward(&nudged, &reference);
        assert_ne!(base.beta, out.beta, "policy ignores the scene embedding");
    }

    #[test]
    fn zero_init_scales_have_zero_mean() {
        let (explorer, emb, reference) = fixture();
        let beta = explorer.forward(&emb, &reference).beta;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let mut sum_lat = 0.0;
        let mut sum_lon = 0.0;
        for _ in 0..n {
            let (s, _) = sample_scales(&beta, &mut rng);
            sum_lat += s.eta_lat;
            sum_lon += s.eta_lon;
        }
        assert!((sum_lat / n as f64).abs() < 0.01, "lat mean {}", sum_lat / n as f64);
        assert!((sum_lon / n as f64).abs() < 0.01, "lon mean {}", sum_lon / n as f64);
    }

    #[test]
    fn density_integrates_to_one_by_quadrature() {
        let beta = BetaParams { a_lat: 1.6931, b_lat: 1.6931, a_lon: 2.4, b_lon: 1.3 };
        // tensor-product Simpson over [-1,1]^2 through the joint log-density
        let n = 200; // panels per axis (must be even)
        let h = 2.0 / n as f64;
        let weight = |i: usize| -> f64 {
            if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            }
        };
        let mut total = 0.0;
        for i in 0..=n {
            for j in 0..=n {
                let eta_lat = -1.0 + i as f64 * h;
                let eta_lon = -1.0 + j as f64 * h;
                let (lp, _) =
                    log_prob_and_entropy(&beta, &GuidanceScales { eta_lat, eta_lon });
                total += weight(i) * weight(j) * lp.exp();
            }
        }
        total *= h * h / 9.0;
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-3);
    }

    #[test]
    fn sampled_log_prob_equals_evaluated_log_prob() {
        let beta = BetaParams { a_lat: 2.1, b_lat: 1.4, a_lon: 1.9, b_lon: 3.0 };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let (scales, lp) = sample_scales(&beta, &mut rng);
            let (lp2, _) = log_prob_and_entropy(&beta, &scales);
            assert_eq!(lp.to_bits(), lp2.to_bits());
        }
    }

    #[test]
    fn entropy_matches_monte_carlo() {
        let beta = BetaParams { a_lat: 1.7, b_lat: 1.7, a_lon: 2.5, b_lon: 1.2 };
        let (_, entropy) = log_prob_and_entropy(&beta, &GuidanceScales::ZERO);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let n = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (scales, lp) = sample_scales(&beta, &mut rng);
            let _ = scales;
            acc -= lp;
        }
        assert_abs_diff_eq!(acc / n as f64, entropy, epsilon = 1e-2);
    }

    #[test]
    fn uniform_boundary_entropy_is_log_two_per_dimension() {
        let beta = BetaParams { a_lat: 1.0, b_lat: 1.0, a_lon: 1.0, b_lon: 1.0 };
        let (_, entropy) = log_prob_and_entropy(&beta, &GuidanceScales::ZERO);
        assert_abs_diff_eq!(entropy, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn large_symmetric_beta_concentrates_at_zero() {
        let a = 50.0;
        let beta = BetaParams { a_lat: a, b_lat: a, a_lon: a, b_lon: a };
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 10_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let (s, _) = sample_scales(&beta, &mut rng);
            sum_sq += s.eta_lat * s.eta_lat;
        }
        let var = sum_sq / n as f64;
        assert!(var < 4.0 / (8.0 * a + 4.0) * 1.1, "variance {var}");
    }

    #[test]
    fn chi_squared_fit_not_rejected() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let beta = BetaParams { a_lat: 1.6931, b_lat: 1.6931, a_lon: 2.2, b_lon: 1.5 };
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let n = 100_000;
        let bins = 40;
        let mut observed_lat = vec![0usize; bins];
        let mut observed_lon = vec![0usize; bins];
        for _ in 0..n {
            let (s, _) = sample_scales(&beta, &mut rng);
            let bin = |eta: f64| (((eta + 1.0) / 2.0 * bins as f64) as usize).min(bins - 1);
            observed_lat[bin(s.eta_lat)] += 1;
            observed_lon[bin(s.eta_lon)] += 1;
        }
        // expected bin mass by fine Simpson quadrature of the marginal
        let expected = |a: f64, b: f64| -> Vec<f64> {
            (0..bins)
                .map(|k| {
                    let lo = -1.0 + 2.0 * k as f64 / bins as f64;
                    let hi = lo + 2.0 / bins as f64;
                    let m = 64;
                    let h = (hi - lo) / m as f64;
                    let f = |eta: f64| {
                        let u = ((eta + 1.0) / 2.0).clamp(1e-12, 1.0 - 1e-12);
                        (func::beta_log_pdf(u, a, b) - std::f64::consts::LN_2).exp()
                    };
                    let mut s = f(lo) + f(hi);
                    for i in 1..m {
                        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(lo + i as f64 * h);
                    }
                    s * h / 3.0
                })
                .collect()
        };
        let critical = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.999);
        for (obs, (a, b)) in [
            (&observed_lat, (beta.a_lat, beta.b_lat)),
            (&observed_lon, (beta.a_lon, beta.b_lon)),
        ] {
            let exp = expected(a, b);
            let stat: f64 = obs
                .iter()
                .zip(&exp)
                .map(|(o, e)| {
                    let e = e * n as f64;
                    (*o as f64 - e).powi(2) / e
                })
                .sum();
            assert!(stat < critical, "chi2 {stat} >= {critical}");
        }
    }

    #[test]
    fn tape_gradients_flow_to_heads() {
        let (explorer, emb, reference) = fixture();
        let mut tape = Tape::new();
        let bind = explorer.bind(&mut tape);
        let (beta, value) = explorer.tape_forward(&mut tape, &bind, &emb, &reference);
        let bsum = tape.sum_all(beta);
        let loss = tape.add(bsum, value);
        let grads = tape.backward(loss);
        let gm = tape.param_grads(&grads);
        // zero-init output heads still receive gradients through softplus
        let g = gm.get("exp.head.out").unwrap();
        assert!(g.iter().any(|v| *v != 0.0));
        let gv = gm.get("exp.val.out").unwrap();
        assert!(gv.iter().any(|v| *v != 0.0));
    }
}
