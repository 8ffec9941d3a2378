//! Parameter store, adaptive-moment optimizer with cosine decay and global
//! gradient clipping, and exact-round-trip binary checkpoints.

pub mod func;
mod tape;

pub use tape::{Arr, CustomOp, NodeId, Tape};

use ndarray::Array2;
use rand::Rng;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Named `f64` matrices. Iteration order is the name order, which keeps
/// every gradient walk and update deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Arr>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Arr) {
        self.params.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> &Arr {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Arr {
        self.params
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter '{name}'"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arr)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_elements(&self) -> usize {
        self.params.values().map(|a| a.len()).sum()
    }

    /// Xavier-uniform initialized dense weight.
    pub fn init_dense(&mut self, rng: &mut impl Rng, name: &str, rows: usize, cols: usize) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        self.insert(name, w);
        self.insert(&format!("{name}.bias"), Arr::zeros((1, cols)));
    }

    /// Zero-initialized dense weight (used for output heads that must start
    /// silent).
    pub fn init_dense_zero(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Arr::zeros((rows, cols)));
        self.insert(&format!("{name}.bias"), Arr::zeros((1, cols)));
    }

    /// True when every entry of every tensor is bitwise equal.
    pub fn bitwise_eq(&self, other: &ParamStore) -> bool {
        if self.params.len() != other.params.len() {
            return false;
        }
        self.params.iter().zip(other.params.iter()).all(|((na, va), (nb, vb))| {
            na == nb
                && va.dim() == vb.dim()
                && va.iter().zip(vb.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
        })
    }
}

/// Gradients keyed like the [`ParamStore`] they belong to.
#[derive(Debug, Clone, Default)]
pub struct GradMap {
    grads: BTreeMap<String, Arr>,
}

impl GradMap {
    pub fn get(&self, name: &str) -> Option<&Arr> {
        self.grads.get(name)
    }

    pub fn accumulate(&mut self, name: &str, g: Arr) {
        match self.grads.get_mut(name) {
            Some(acc) => *acc += &g,
            None => {
                self.grads.insert(name.to_string(), g);
            }
        }
    }

    pub fn merge(&mut self, other: GradMap) {
        for (name, g) in other.grads {
            self.accumulate(&name, g);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.grads.values_mut() {
            *g *= c;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Arr)> {
        self.grads.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.values().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub base_lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_grad_norm: f64,
    /// Cosine-decay horizon in optimizer steps; the rate reaches zero here.
    pub total_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            base_lr: 2.5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 0.5,
            total_steps: 100_000,
        }
    }
}

/// Cosine-decayed learning rate; exactly zero at and beyond `total`.
pub fn cosine_lr(base: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return base;
    }
    let t = (step.min(total)) as f64 / total as f64;
    base * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Adaptive-moment optimizer state.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub cfg: OptimConfig,
    m: BTreeMap<String, Arr>,
    v: BTreeMap<String, Arr>,
    step: u64,
}

/// What an optimizer step actually did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub applied: bool,
    pub lr: f64,
    pub grad_norm: f64,
    pub clipped: bool,
}

impl OptimState {
    pub fn new(cfg: OptimConfig) -> Self {
        Self { cfg, m: BTreeMap::new(), v: BTreeMap::new(), step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Scale factor that brings the global gradient norm down to `max_norm`
/// (1.0 when already within bounds).
pub fn clip_scale(norm: f64, max_norm: f64) -> f64 {
    if norm > max_norm && norm > 0.0 {
        max_norm / norm
    } else {
        1.0
    }
}

/// One optimizer step: global-norm clipping, moment update, cosine-decayed
/// learning rate. Non-finite gradients skip the update entirely and report
/// `applied: false`.
pub fn optim_step(params: &mut ParamStore, grads: &GradMap, state: &mut OptimState) -> StepOutcome {
    let cfg = state.cfg;
    if !grads.is_finite() {
        return StepOutcome { applied: false, lr: 0.0, grad_norm: f64::NAN, clipped: false };
    }
    let norm = grads.global_norm();
    let clip = clip_scale(norm, cfg.max_grad_norm);
    let lr = cosine_lr(cfg.base_lr, state.step, cfg.total_steps);
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);

    for (name, p) in params.params.iter_mut() {
        let zero = Arr::zeros(p.dim());
        let g_src = grads.get(name).unwrap_or(&zero);
        assert_eq!(g_src.dim(), p.dim(), "gradient shape mismatch for '{name}'");
        let m = state.m.entry(name.clone()).or_insert_with(|| Arr::zeros(p.dim()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Arr::zeros(p.dim()));
        ndarray::Zip::from(p).and(m).and(v).and(g_src).for_each(|p, m, v, &graw| {
            let g = graw * clip;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            let mh = *m / bc1;
            let vh = *v / bc2;
            *p -= lr * mh / (vh.sqrt() + cfg.eps);
        });
    }
    StepOutcome { applied: true, lr, grad_norm: norm, clipped: clip < 1.0 }
}

const CKPT_MAGIC: [u8; 4] = *b"DPK1";
const CKPT_VERSION: u16 = 1;

/// Versioned binary dump of a parameter store; round-trips bit-exactly.
pub fn save_checkpoint(store: &ParamStore, path: &Path) -> Result<(), NnError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&CKPT_MAGIC);
    buf.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.params.len() as u32).to_le_bytes());
    for (name, arr) in &store.params {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(arr.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(arr.ncols() as u32).to_le_bytes());
        for v in arr.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore, NnError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8], NnError> {
        if *pos + n > bytes.len() {
            return Err(NnError::Corrupt(format!("truncated at byte {pos}", pos = *pos)));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != CKPT_MAGIC {
        return Err(NnError::BadMagic);
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != CKPT_VERSION {
        return Err(NnError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| NnError::Corrupt(e.to_string()))?;
        let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut data = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        let arr = Arr::from_shape_vec((rows, cols), data)
            .map_err(|e| NnError::Corrupt(e.to_string()))?;
        store.insert(&name, arr);
    }
    if pos != bytes.len() {
        return Err(NnError::Corrupt(format!("{} trailing bytes", bytes.len() - pos)));
    }
    Ok(store)
}
