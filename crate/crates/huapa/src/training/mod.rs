//! Adam optimization, the epoch loop, and evaluation metrics.
//!
//! Training accumulates gradients of the weighted three-term loss over each
//! mini-batch (mean over the batch), takes one Adam step per batch, and
//! evaluates on the dev split after every epoch. The checkpoint with the
//! best dev accuracy wins, ties going to the earlier epoch; training stops
//! once `patience` consecutive epochs bring no improvement. The whole loop
//! is single-threaded and, for a fixed seed and configuration, bit-for-bit
//! reproducible.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{backward, clear_grads, Value};
use crate::data::EncodedDoc;
use crate::model::{
    combined_loss_parts, forward_huapa, predict, HuapaParams, ModelDims, ModelError,
};


#[derive(Debug, Clone, PartialEq)]
pub enum TrainError {
    EmptyDataset,
    InvalidConfig { msg: String },
    NonFiniteLoss { epoch: u32, batch: usize },
    NonFiniteGrad { param: String },
    Model(ModelError),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::EmptyDataset => write!(f, "dataset is empty"),
            TrainError::InvalidConfig { msg } => write!(f, "invalid configuration: {msg}"),
            TrainError::NonFiniteLoss { epoch, batch } => {
                write!(f, "non-finite loss at epoch {epoch}, batch {batch}")
            }
            TrainError::NonFiniteGrad { param } => {
                write!(f, "non-finite gradient in parameter {param}")
            }
            TrainError::Model(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<ModelError> for TrainError {
    fn from(e: ModelError) -> Self {
        TrainError::Model(e)
    }
}

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { lr: 0.005, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment buffers, one pair per registered parameter, plus
/// the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub hp: AdamParams,
}

impl AdamState {
    pub fn new(params: &[(String, Value)], hp: AdamParams) -> AdamState {
        AdamState {
            m: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|(_, p)| vec![0.0; p.len()]).collect(),
            t: 0,
            hp,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One Adam update over the registered parameters, reading each parameter's
/// accumulated gradient: `m` and `v` track first and second moments, both
/// bias-corrected by the shared step count before the update.
pub fn adam_step(state: &mut AdamState, params: &[(String, Value)]) -> Result<(), TrainError> {
    assert_eq!(state.m.len(), params.len(), "optimizer state does not match parameter set");
    state.t += 1;
    let AdamParams { lr, beta1, beta2, eps } = state.hp;
    let bc1 = 1.0 - beta1.powi(state.t as i32);
    let bc2 = 1.0 - beta2.powi(state.t as i32);
    for (k, (name, p)) in params.iter().enumerate() {
        let grad = p.grad();
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGrad { param: name.clone() });
        }
        let mut data = p.data().clone();
        let m = &mut state.m[k];
        let v = &mut state.v[k];
        for i in 0..data.len() {
            let g = grad[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        p.set_data(&data);
    }
    Ok(())
}

/// Scale all gradients down so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_gradients(params: &[(String, Value)], max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for (_, p) in params {
        for g in p.grad() {
            sq += g * g;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for (_, p) in params {
            let scaled: Vec<f64> = p.grad().iter().map(|g| g * scale).collect();
            p.set_grad(&scaled);
        }
    }
    norm
}

/// Everything the epoch loop needs to know.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weights of the combined, user-view and product-view loss terms.
    pub lambda: [f64; 3],
    pub batch_size: usize,
    pub max_epochs: u32,
    /// Consecutive non-improving epochs tolerated before stopping. Zero
    /// means exactly one epoch runs.
    pub patience: u32,
    pub seed: u64,
    /// Global gradient-norm clip; zero or negative disables clipping.
    pub clip_norm: f64,
    #[serde(skip)]
    pub dims: ModelDims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.005,
            lambda: [0.4, 0.3, 0.3],
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            seed: 1,
            clip_norm: 0.0,
            dims: ModelDims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig { msg: msg.to_string() });
        if self.lambda.iter().any(|&l| l < 0.0 || !l.is_finite()) {
            return bad("loss weights must be non-negative");
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1");
        }
        if self.max_epochs == 0 {
            return bad("max epochs must be at least 1");
        }
        let d = &self.dims;
        if d.word_dim == 0 || d.user_dim == 0 || d.product_dim == 0 || d.hidden == 0 || d.attention == 0
        {
            return bad("all dimensions must be positive");
        }
        if d.classes < 2 {
            return bad("need at least two classes");
        }
        Ok(())
    }
}

/// One line of the epoch log. `loss` is the doc-mean weighted total;
/// `loss1..loss3` are the unweighted per-head cross-entropy means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub schema: String,
    pub epoch: u32,
    pub loss: f64,
    pub loss1: f64,
    pub loss2: f64,
    pub loss3: f64,
    pub dev_acc: f64,
    pub dev_rmse: f64,
}

pub const EPOCH_SCHEMA: &str = "huapa.epoch.v1";

/// Accuracy, RMSE, and the gold-by-predicted confusion counts.
///
/// RMSE is measured between rating values, which are 1-based on disk; the
/// distance between two ratings equals the distance between their 0-based
/// class indices, so either labeling yields the same number.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub rmse: f64,
    pub confusion: Vec<Vec<u64>>,
}

impl EvalResult {
    pub fn from_pairs(gold: &[u32], pred: &[u32], classes: usize) -> EvalResult {
        assert_eq!(gold.len(), pred.len());
        assert!(!gold.is_empty());
        let mut confusion = vec![vec![0u64; classes]; classes];
        for (&g, &p) in gold.iter().zip(pred) {
            confusion[g as usize][p as usize] += 1;
        }
        let n = gold.len() as f64;
        let mut correct = 0u64;
        let mut sq = 0.0;
        for g in 0..classes {
            for p in 0..classes {
                let count = confusion[g][p];
                if g == p {
                    correct += count;
                }
                let d = g as f64 - p as f64;
                sq += count as f64 * d * d;
            }
        }
        EvalResult {
            accuracy: correct as f64 / n,
            rmse: (sq / n).sqrt(),
            confusion,
        }
    }
}

/// Run the model over a dataset and score predictions against gold labels.
pub fn evaluate(params: &HuapaParams, docs: &[EncodedDoc]) -> Result<EvalResult, TrainError> {
    if docs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut gold = Vec::with_capacity(docs.len());
    let mut pred = Vec::with_capacity(docs.len());
    for doc in docs {
        let out = forward_huapa(params, doc)?;
        gold.push(doc.label);
        pred.push(predict(&out) as u32);
    }
    Ok(EvalResult::from_pairs(&gold, &pred, params.dims.classes))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub log: Vec<EpochRecord>,
    pub best_epoch: u32,
    pub best_dev_accuracy: f64,
}

/// The epoch loop. On return the model holds the best-dev-accuracy weights.
pub fn train(
    cfg: &TrainConfig,
    params: &HuapaParams,
    train_docs: &[EncodedDoc],
    dev_docs: &[EncodedDoc],
) -> Result<TrainResult, TrainError> {
    cfg.validate()?;
    if train_docs.is_empty() || dev_docs.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let trainable = params.trainable();
    let leaves: Vec<Value> = trainable.iter().map(|(_, v)| v.clone()).collect();
    let mut adam = AdamState::new(&trainable, AdamParams { lr: cfg.lr, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_docs.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(f64, u32, Vec<Vec<f64>>)> = None;
    let mut stale_epochs = 0u32;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sum_total = 0.0;
        let mut sum_main = 0.0;
        let mut sum_user = 0.0;
        let mut sum_product = 0.0;
        for (batch_no, chunk) in order.chunks(cfg.batch_size).enumerate() {
            clear_grads(&leaves);
            let inv = 1.0 / chunk.len() as f64;
            for &di in chunk {
                let doc = &train_docs[di];
                let out = forward_huapa(params, doc)?;
                let parts = combined_loss_parts(&out, doc.label as usize, cfg.lambda)?;
                if !parts.total.item().is_finite() {
                    return Err(TrainError::NonFiniteLoss { epoch, batch: batch_no });
                }
                sum_total += parts.total.item();
                sum_main += parts.main;
                sum_user += parts.user;
                sum_product += parts.product;
                backward(&parts.total.scale(inv)).map_err(|e| TrainError::Model(e.into()))?;
            }
            if cfg.clip_norm > 0.0 {
                clip_gradients(&trainable, cfg.clip_norm);
            }
            adam_step(&mut adam, &trainable)?;
        }
        let n = train_docs.len() as f64;
        let (l1, l2, l3) = (sum_main / n, sum_user / n, sum_product / n);
        let dev = evaluate(params, dev_docs)?;
        log.push(EpochRecord {
            schema: EPOCH_SCHEMA.to_string(),
            epoch,
            loss: sum_total / n,
            loss1: l1,
            loss2: l2,
            loss3: l3,
            dev_acc: dev.accuracy,
            dev_rmse: dev.rmse,
        });
        let improved = best.as_ref().map_or(true, |(acc, _, _)| dev.accuracy > *acc);
        if improved {
            best = Some((dev.accuracy, epoch, params.snapshot()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
        }
        if stale_epochs >= cfg.patience {
            break;
        }
    }

    let (best_dev_accuracy, best_epoch, snapshot) = best.expect("at least one epoch ran");
    params.restore(&snapshot);
    Ok(TrainResult { log, best_epoch, best_dev_accuracy })
}
