use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{apply_output, forward, loss, loss_and_grad};
use super::params::{round_to_f32, ModelConfig, ModelParams};
use crate::dsp::{ErbFilterbank, Spectrogram};
use crate::error::{Error, Result};
use crate::par::{self, Exec};
use crate::scene::scene_seed;
use crate::score::ScoreFeature;

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const STATE_MAGIC: &[u8; 4] = b"BRS1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub grad_clip_norm: f64,
    pub lr_halving_patience: usize,
    pub alpha_choices: Vec<f64>,
    pub compression: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            grad_clip_norm: 3.0,
            lr_halving_patience: 3,
            alpha_choices: vec![0.0, 0.3, 0.5, 0.7, 1.0],
            compression: 0.3,
            epochs: 20,
            batch_size: 4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm > 0.0) {
            return Err(Error::invalid("learning rate and clip norm must be positive"));
        }
        if self.lr_halving_patience == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("patience, epochs and batch size must be positive"));
        }
        if self.alpha_choices.is_empty() || self.alpha_choices.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("alpha choices must be a nonempty subset of [0, 1]"));
        }
        if !(self.compression > 0.0 && self.compression <= 1.0) {
            return Err(Error::invalid("compression must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// One training utterance: features, reference spectrum and the two target
/// stems per ear. The target for any `alpha` is `clean + alpha * ambience`.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub feature: ScoreFeature,
    pub reference: Spectrogram,
    pub clean: [Spectrogram; 2],
    pub ambience: [Spectrogram; 2],
}

impl TrainItem {
    pub fn target(&self, alpha: f64) -> Result<[Spectrogram; 2]> {
        Ok([
            self.clean[0].add_scaled(&self.ambience[0], alpha)?,
            self.clean[1].add_scaled(&self.ambience[1], alpha)?,
        ])
    }
}

/// Per-bin normalized loss of one utterance without gradients.
pub fn item_loss(params: &ModelParams, item: &TrainItem, fb: &ErbFilterbank, alpha: f64, c: f64) -> Result<f64> {
    let out = forward(params, &item.feature, alpha)?;
    let est = apply_output(&out, &item.reference, fb)?;
    let n = (item.reference.frames() * item.reference.bins() * 2) as f64;
    Ok(loss(&item.target(alpha)?, &est, c)? / n)
}

fn alpha_key(a: f64) -> String {
    format!("{a}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// Whether the rate was halved after this epoch.
    pub lr_halved: bool,
    pub alpha_counts: BTreeMap<String, usize>,
    /// Largest global gradient norm after clipping.
    pub max_grad_norm: f64,
    pub max_raw_grad_norm: f64,
}

/// Everything needed to continue training bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub best: ModelParams,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub best_val: f64,
    pub stagnant: usize,
    pub log: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
struct StateHeader {
    config: ModelConfig,
    step: u64,
    lr: f64,
    best_val: f64,
    stagnant: usize,
    log: Vec<EpochLog>,
}

impl TrainState {
    pub fn new(params: ModelParams, lr: f64) -> Self {
        let n = params.data.len();
        Self {
            best: params.clone(),
            params,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            step: 0,
            lr,
            best_val: f64::INFINITY,
            stagnant: 0,
            log: Vec::new(),
        }
    }

    /// Keeps the best parameters and halves the learning rate after
    /// `patience` epochs without a new best; returns whether it halved.
    pub fn record_validation(&mut self, val_loss: f64, patience: usize) -> bool {
        if val_loss < self.best_val {
            self.best_val = val_loss;
            self.best = self.params.clone();
            self.stagnant = 0;
            return false;
        }
        self.stagnant += 1;
        if self.stagnant >= patience {
            self.lr *= 0.5;
            self.stagnant = 0;
            return true;
        }
        false
    }

    pub fn epochs_done(&self) -> usize {
        self.log.len()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = StateHeader {
            config: self.params.config,
            step: self.step,
            lr: self.lr,
            best_val: self.best_val,
            stagnant: self.stagnant,
            log: self.log.clone(),
        };
        let header = serde_json::to_vec(&header).expect("state header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for table in [&self.params.data, &self.best.data, &self.adam_m, &self.adam_v] {
            for v in table.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != STATE_MAGIC {
            return Err(Error::format("not a BRS1 training state"));
        }
        let hlen = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(12..12usize.saturating_add(hlen))
            .ok_or_else(|| Error::format("training state is truncated"))?;
        let header: StateHeader =
            serde_json::from_slice(body).map_err(|e| Error::format(format!("training state header: {e}")))?;
        let mut params = ModelParams::zeros(header.config)?;
        let n = params.data.len();
        let rest = &bytes[12 + hlen..];
        if rest.len() != 4 * 8 * n {
            return Err(Error::format("training state tables have the wrong size"));
        }
        let mut tables = rest
            .chunks_exact(8 * n)
            .map(|t| t.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect::<Vec<_>>());
        params.data = tables.next().expect("4 tables");
        let mut best = params.clone();
        best.data = tables.next().expect("4 tables");
        Ok(Self {
            params,
            best,
            adam_m: tables.next().expect("4 tables"),
            adam_v: tables.next().expect("4 tables"),
            step: header.step,
            lr: header.lr,
            best_val: header.best_val,
            stagnant: header.stagnant,
            log: header.log,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn global_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Scales `g` so its global norm is at most `max`; returns the norms
/// before and after.
pub fn clip_global_norm(g: &mut [f64], max: f64) -> (f64, f64) {
    let norm = global_norm(g);
    if norm > max {
        let s = max / norm;
        g.iter_mut().for_each(|v| *v *= s);
        (norm, global_norm(g))
    } else {
        (norm, norm)
    }
}

fn adam_step(state: &mut TrainState, g: &[f64]) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_B1.powi(t);
    let c2 = 1.0 - ADAM_B2.powi(t);
    let lr = state.lr;
    for (((p, m), v), gi) in state
        .params
        .data
        .iter_mut()
        .zip(state.adam_m.iter_mut())
        .zip(state.adam_v.iter_mut())
        .zip(g)
    {
        *m = ADAM_B1 * *m + (1.0 - ADAM_B1) * gi;
        *v = ADAM_B2 * *v + (1.0 - ADAM_B2) * gi * gi;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
    }
    round_to_f32(&mut state.params.data);
}

/// Runs one epoch of shuffled mini-batch updates and a validation pass,
/// updating `state` in place.
pub fn run_epoch(
    state: &mut TrainState,
    train: &[TrainItem],
    val: &[TrainItem],
    fb: &ErbFilterbank,
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<EpochLog> {
    let epoch = state.epochs_done() + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(cfg.seed, epoch as u64));
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let alphas: Vec<f64> = order
        .iter()
        .map(|_| *cfg.alpha_choices.choose(&mut rng).expect("validated nonempty"))
        .collect();
    let mut alpha_counts = BTreeMap::new();
    for a in &alphas {
        *alpha_counts.entry(alpha_key(*a)).or_insert(0) += 1;
    }
    let lr = state.lr;
    let mut loss_sum = 0.0;
    let (mut max_norm, mut max_raw) = (0.0f64, 0.0f64);
    for (batch, batch_alphas) in order.chunks(cfg.batch_size).zip(alphas.chunks(cfg.batch_size)) {
        let params = &state.params;
        let results = par::try_map_indexed(exec, batch.len(), |i| {
            let item = &train[batch[i]];
            let target = item.target(batch_alphas[i])?;
            loss_and_grad(params, &item.feature, &item.reference, &target, fb, batch_alphas[i], cfg.compression)
        })?;
        // fixed-order reduction keeps the update independent of scheduling
        let mut g = vec![0.0; params.data.len()];
        for (l, gi) in &results {
            loss_sum += l;
            for (a, b) in g.iter_mut().zip(gi) {
                *a += b;
            }
        }
        let inv = 1.0 / batch.len() as f64;
        g.iter_mut().for_each(|v| *v *= inv);
        let (raw, clipped) = clip_global_norm(&mut g, cfg.grad_clip_norm);
        max_raw = max_raw.max(raw);
        max_norm = max_norm.max(clipped);
        adam_step(state, &g);
    }
    let train_loss = loss_sum / train.len() as f64;
    if !train_loss.is_finite() {
        return Err(Error::Training(format!("epoch {epoch}: training loss is not finite")));
    }

    let params = &state.params;
    let val_losses = par::try_map_indexed(exec, val.len(), |i| {
        let alpha = cfg.alpha_choices[i % cfg.alpha_choices.len()];
        item_loss(params, &val[i], fb, alpha, cfg.compression)
    })?;
    let val_loss = val_losses.iter().sum::<f64>() / val.len() as f64;

    let lr_halved = state.record_validation(val_loss, cfg.lr_halving_patience);
    let entry = EpochLog {
        epoch,
        train_loss,
        val_loss,
        lr,
        lr_halved,
        alpha_counts,
        max_grad_norm: max_norm,
        max_raw_grad_norm: max_raw,
    };
    state.log.push(entry.clone());
    Ok(entry)
}

/// Trains until `cfg.epochs` epochs are done. With `state_path`, an existing
/// state file is resumed and the state is rewritten after every epoch.
#[allow(clippy::too_many_arguments)]
pub fn train(
    model: ModelConfig,
    train_items: &[TrainItem],
    val_items: &[TrainItem],
    fb: &ErbFilterbank,
    cfg: &TrainConfig,
    state_path: Option<&Path>,
    exec: Exec,
    on_epoch: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::invalid("training and validation splits must be nonempty"));
    }
    let mut state = match state_path {
        Some(p) if p.exists() => {
            let s = TrainState::load(p)?;
            if s.params.config != model {
                return Err(Error::invalid("saved training state has a different model size"));
            }
            s
        }
        _ => TrainState::new(ModelParams::init(model, cfg.seed)?, cfg.learning_rate),
    };
    while state.epochs_done() < cfg.epochs {
        let entry = run_epoch(&mut state, train_items, val_items, fb, cfg, exec)?;
        if let Some(p) = state_path {
            state.save(p)?;
        }
        on_epoch(&entry)?;
    }
    Ok(state)
}
