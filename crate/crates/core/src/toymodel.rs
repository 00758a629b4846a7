//! Feature-hashing logistic classifier used to drive the optimizer, EMA,
//! oversampling and ensembling code end to end.
//!
//! Parameters live in one [`ParamVector`]: group `"backbone"` holds the `dim`
//! hashed feature weights and group `"head"` holds the bias, so AdamW can
//! apply separate learning rates and weight decay to each.

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use xxhash_rust::xxh64::xxh64;

use crate::ensemble::{self, EnsembleError, FoldSplit, LabeledDataset, Record};
use crate::optim::{
    adamw_step_in_place, sigmoid, AdamWConfig, EmaState, FocalParams, GroupHyper, Loss, OptState,
    OptimError, ParamGroup, ParamVector,
};
use crate::textnorm;

pub const DEFAULT_DIM: usize = 1 << 18;
pub const BACKBONE: &str = "backbone";
pub const HEAD: &str = "head";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("feature dimension {0} is not a power of two")]
    BadDim(usize),
    #[error("feature dimension {got} does not match model dimension {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("class {0} has no training records")]
    EmptyClass(u8),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
}

/// Sparse token counts in a hashed feature space of `dim` buckets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedFeatures {
    dim: usize,
    // (index, count), sorted by index
    entries: Vec<(usize, u32)>,
}

impl HashedFeatures {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(usize, u32)] {
        &self.entries
    }

    pub fn count(&self, index: usize) -> u32 {
        self.entries
            .binary_search_by_key(&index, |e| e.0)
            .map_or(0, |k| self.entries[k].1)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Bucket of a token under the seeded xxHash64.
pub fn hash_index(token: &str, dim: usize, seed: u64) -> usize {
    (xxh64(token.as_bytes(), seed) & (dim as u64 - 1)) as usize
}

pub fn featurize<S: AsRef<str>>(
    tokens: &[S],
    dim: usize,
    seed: u64,
) -> Result<HashedFeatures, ModelError> {
    if !dim.is_power_of_two() {
        return Err(ModelError::BadDim(dim));
    }
    let mut counts: BTreeMap<usize, u32> = BTreeMap::new();
    for t in tokens {
        *counts.entry(hash_index(t.as_ref(), dim, seed)).or_insert(0) += 1;
    }
    Ok(HashedFeatures {
        dim,
        entries: counts.into_iter().collect(),
    })
}

/// Lowercased token surfaces of `text`.
pub fn text_tokens(text: &str) -> Vec<String> {
    textnorm::tokenize(text)
        .into_iter()
        .map(|t| t.surface.to_lowercase())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    dim: usize,
    hash_seed: u64,
    params: ParamVector,
}

impl ToyModel {
    /// All-zero weights and bias.
    pub fn zeros(dim: usize, hash_seed: u64) -> Result<Self, ModelError> {
        if !dim.is_power_of_two() {
            return Err(ModelError::BadDim(dim));
        }
        Ok(Self {
            dim,
            hash_seed,
            params: Self::layout(vec![0.0; dim + 1], dim)?,
        })
    }

    fn layout(values: Vec<f64>, dim: usize) -> Result<ParamVector, OptimError> {
        ParamVector::new(
            values,
            vec![
                ParamGroup {
                    name: BACKBONE.into(),
                    start: 0,
                    end: dim,
                },
                ParamGroup {
                    name: HEAD.into(),
                    start: dim,
                    end: dim + 1,
                },
            ],
        )
    }

    /// Replaces the parameter values; `values` holds `dim` weights then the bias.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, ModelError> {
        Ok(Self {
            params: self.params.with_values(values)?,
            ..self.clone()
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn hash_seed(&self) -> u64 {
        self.hash_seed
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn weights(&self) -> &[f64] {
        &self.params.values()[..self.dim]
    }

    pub fn bias(&self) -> f64 {
        self.params.values()[self.dim]
    }

    pub fn featurize_text(&self, text: &str) -> HashedFeatures {
        featurize(&text_tokens(text), self.dim, self.hash_seed)
            .expect("model dim is a power of two")
    }

    pub fn logit(&self, x: &HashedFeatures) -> Result<f64, ModelError> {
        if x.dim != self.dim {
            return Err(ModelError::ShapeMismatch {
                expected: self.dim,
                got: x.dim,
            });
        }
        Ok(logit_of(self.params.values(), self.dim, x))
    }

    pub fn predict_proba(&self, x: &HashedFeatures) -> Result<f64, ModelError> {
        self.logit(x).map(sigmoid)
    }

    pub fn predict_text(&self, text: &str) -> f64 {
        sigmoid(logit_of(
            self.params.values(),
            self.dim,
            &self.featurize_text(text),
        ))
    }

    pub fn predict_records(&self, records: &[Record]) -> Vec<f64> {
        records.iter().map(|r| self.predict_text(&r.text)).collect()
    }
}

fn logit_of(values: &[f64], dim: usize, x: &HashedFeatures) -> f64 {
    x.entries
        .iter()
        .map(|&(i, c)| values[i] * c as f64)
        .sum::<f64>()
        + values[dim]
}

pub fn predict_proba(model: &ToyModel, features: &HashedFeatures) -> Result<f64, ModelError> {
    model.predict_proba(features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    pub adamw: AdamWConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub ema_decay: f64,
    pub oversample: bool,
    pub dim: usize,
    pub hash_seed: u64,
}

impl Default for TrainConfig {
    /// Focal loss (0.25, 2), 30 epochs of batch 32, EMA decay 0.99.
    ///
    /// Learning rates are sized for a from-scratch linear model
    /// (`backbone` 0.05 with weight decay 0.01, `head` 0.05 without decay).
    fn default() -> Self {
        Self {
            loss: Loss::Focal(FocalParams::default()),
            adamw: AdamWConfig::with_groups([
                (
                    BACKBONE,
                    GroupHyper {
                        lr: 0.05,
                        weight_decay: 0.01,
                    },
                ),
                (
                    HEAD,
                    GroupHyper {
                        lr: 0.05,
                        weight_decay: 0.0,
                    },
                ),
            ]),
            epochs: 30,
            batch_size: 32,
            seed: 0,
            ema_decay: 0.99,
            oversample: false,
            dim: DEFAULT_DIM,
            hash_seed: 0,
        }
    }
}

/// Losses are means over the training records (after oversampling).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Running mean of the per-batch loss in each epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
    /// Sum over the last epoch's steps of the max-abs parameter change.
    pub last_epoch_path: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub model: ToyModel,
    pub ema: EmaState,
    pub report: TrainReport,
}

impl Trained {
    /// The model with bias-corrected EMA shadow weights, used for evaluation.
    pub fn ema_model(&self) -> Result<ToyModel, ModelError> {
        self.model.with_values(self.ema.debiased()?)
    }
}

fn mean_loss(loss: &Loss, values: &[f64], dim: usize, data: &[(HashedFeatures, bool)]) -> f64 {
    let total: f64 = data
        .iter()
        .map(|(x, y)| loss.value(logit_of(values, dim, x), *y))
        .sum();
    total / data.len() as f64
}

/// Mini-batch AdamW training with EMA tracking after every step.
///
/// Records are reshuffled every epoch from a ChaCha8 stream seeded with
/// `config.seed`; the final short batch is kept. Runs are bitwise
/// reproducible for a given dataset and config.
pub fn train(ds: &LabeledDataset, config: &TrainConfig) -> Result<Trained, ModelError> {
    if config.batch_size == 0 || config.epochs == 0 {
        return Err(ModelError::InvalidConfig(
            "epochs and batch size must be positive".into(),
        ));
    }
    config.adamw.validate()?;
    match ds.class_counts() {
        (0, _) => return Err(ModelError::EmptyClass(0)),
        (_, 0) => return Err(ModelError::EmptyClass(1)),
        _ => {}
    }
    let balanced;
    let ds = if config.oversample {
        balanced = ensemble::oversample(ds, config.seed)?;
        &balanced
    } else {
        ds
    };

    let mut model = ToyModel::zeros(config.dim, config.hash_seed)?;
    let dim = config.dim;
    let data: Vec<(HashedFeatures, bool)> = ds
        .records()
        .iter()
        .map(|r| (model.featurize_text(&r.text), r.is_positive()))
        .collect();

    let mut opt = OptState::new(dim + 1);
    let mut ema = EmaState::new(config.ema_decay, dim + 1)?;
    let mut grads = vec![0.0; dim + 1];
    let mut touched: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let initial_loss = mean_loss(&config.loss, model.params.values(), dim, &data);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut last_epoch_path = 0.0;
    let mut before = vec![0.0; dim + 1];

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let last = epoch + 1 == config.epochs;
        for batch in order.chunks(config.batch_size) {
            let scale = 1.0 / batch.len() as f64;
            for &k in batch {
                let (x, y) = &data[k];
                let z = logit_of(model.params.values(), dim, x);
                epoch_loss += config.loss.value(z, *y);
                let g = config.loss.grad(z, *y) * scale;
                for &(i, c) in &x.entries {
                    grads[i] += g * c as f64;
                    touched.push(i);
                }
                grads[dim] += g;
            }
            if last {
                before.copy_from_slice(model.params.values());
            }
            adamw_step_in_place(&config.adamw, &mut opt, &mut model.params, &grads)?;
            ema.update_in_place(model.params.values())?;
            if last {
                last_epoch_path += model
                    .params
                    .values()
                    .iter()
                    .zip(&before)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
            }
            for &i in &touched {
                grads[i] = 0.0;
            }
            grads[dim] = 0.0;
            touched.clear();
        }
        epoch_losses.push(epoch_loss / data.len() as f64);
    }

    let final_loss = mean_loss(&config.loss, model.params.values(), dim, &data);
    let report = TrainReport {
        initial_loss,
        final_loss,
        epoch_losses,
        steps: opt.step,
        last_epoch_path,
    };
    Ok(Trained { model, ema, report })
}

/// Trains one model per fold, each on every record outside that fold.
/// Fold `i` trains with seed `config.seed + i`.
pub fn train_fold_models(
    ds: &LabeledDataset,
    split: &FoldSplit,
    config: &TrainConfig,
) -> Result<Vec<Trained>, ModelError> {
    split.check_against(ds)?;
    (0..split.k)
        .map(|i| {
            let cfg = TrainConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..config.clone()
            };
            train(&ds.subset(&split.train_ids(i)), &cfg)
        })
        .collect()
}

/// Mean-pooled probabilities of several models (EMA weights when available).
pub fn fused_predictions(models: &[ToyModel], records: &[Record]) -> Result<Vec<f64>, ModelError> {
    let members: Vec<Vec<f64>> = models.iter().map(|m| m.predict_records(records)).collect();
    Ok(ensemble::mean_pool_probs(&members)?)
}

/// On-disk checkpoint: `{dim, seed, weights, bias, ema: {decay, step, shadow}}`.
/// `weights` and `shadow` are sparse `[index, value]` lists; the shadow's
/// index `dim` is the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub dim: usize,
    pub seed: u64,
    pub weights: Vec<(usize, f64)>,
    pub bias: f64,
    pub ema: EmaCheckpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaCheckpoint {
    pub decay: f64,
    pub step: u64,
    pub shadow: Vec<(usize, f64)>,
}

fn sparse(values: &[f64]) -> Vec<(usize, f64)> {
    values
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(i, v)| (i, *v))
        .collect()
}

fn dense(entries: &[(usize, f64)], len: usize, what: &str) -> Result<Vec<f64>, ModelError> {
    let mut out = vec![0.0; len];
    let mut seen = HashSet::new();
    for &(i, v) in entries {
        if i >= len || !seen.insert(i) {
            return Err(ModelError::Checkpoint(format!(
                "{what} index {i} is out of range or repeated"
            )));
        }
        if !v.is_finite() {
            return Err(ModelError::Checkpoint(format!(
                "{what} value at {i} is not finite"
            )));
        }
        out[i] = v;
    }
    Ok(out)
}

impl Checkpoint {
    pub fn from_parts(model: &ToyModel, ema: &EmaState) -> Self {
        Self {
            dim: model.dim,
            seed: model.hash_seed,
            weights: sparse(model.weights()),
            bias: model.bias(),
            ema: EmaCheckpoint {
                decay: ema.decay,
                step: ema.step,
                shadow: sparse(&ema.shadow),
            },
        }
    }

    pub fn into_parts(self) -> Result<(ToyModel, EmaState), ModelError> {
        if !self.dim.is_power_of_two() || self.dim > (1 << 28) {
            return Err(ModelError::Checkpoint(format!(
                "unsupported dim {}",
                self.dim
            )));
        }
        let mut values = dense(&self.weights, self.dim, "weight")?;
        values.push(self.bias);
        let model = ToyModel::zeros(self.dim, self.seed)?.with_values(values)?;
        let mut ema = EmaState::new(self.ema.decay, self.dim + 1)?;
        ema.step = self.ema.step;
        ema.shadow = dense(&self.ema.shadow, self.dim + 1, "shadow")?;
        Ok((model, ema))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::threshold_labels;
    use crate::eval::binary_prf;
    use crate::synth;

    fn small_config(dim: usize) -> TrainConfig {
        TrainConfig {
            dim,
            epochs: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn featurize_examples() {
        let f = featurize(&["flu", "flu"], 1 << 10, 3).unwrap();
        assert_eq!(f.entries(), &[(hash_index("flu", 1 << 10, 3), 2)]);
        assert!(featurize::<&str>(&[], 1 << 10, 3).unwrap().is_empty());
        assert!(matches!(
            featurize(&["a"], 12, 0),
            Err(ModelError::BadDim(12))
        ));
    }

    #[test]
    fn featurize_collisions_add_up() {
        // dim 2 has only two buckets, so find two distinct tokens sharing one
        let a = "tok0";
        let b = (1..100)
            .map(|i| format!("tok{i}"))
            .find(|t| hash_index(t, 2, 0) == hash_index(a, 2, 0))
            .unwrap();
        let f = featurize(&[a, b.as_str(), a], 2, 0).unwrap();
        assert_eq!(f.count(hash_index(a, 2, 0)), 3);
        assert_eq!(f.entries().len(), 1);
    }

    #[test]
    fn hash_is_stable() {
        // frozen xxh64 values; changing them silently re-buckets every dataset
        assert_eq!(xxh64(b"flu", 0), 0xbd05_1216_ab31_1da3);
        assert_eq!(
            hash_index("flu", 1 << 18, 0),
            (0xbd05_1216_ab31_1da3u64 & ((1 << 18) - 1)) as usize
        );
    }

    #[test]
    fn predict_examples() {
        let m = ToyModel::zeros(8, 0).unwrap();
        let x = featurize(&["a", "b"], 8, 0).unwrap();
        assert_eq!(m.predict_proba(&x).unwrap(), 0.5);

        let mut v = vec![0.0; 9];
        v[8] = 800.0;
        assert_eq!(m.with_values(v).unwrap().predict_proba(&x).unwrap(), 1.0);

        let x = featurize(&["fever", "fever"], 8, 0).unwrap();
        let i = hash_index("fever", 8, 0);
        let mut v = vec![0.0; 9];
        v[i] = 0.75;
        v[8] = -0.5;
        let p = m.with_values(v).unwrap().predict_proba(&x).unwrap();
        assert!((p - 1.0 / (1.0 + (-(2.0 * 0.75 - 0.5f64)).exp())).abs() < 1e-15);

        let wrong = featurize(&["a"], 16, 0).unwrap();
        assert!(matches!(
            m.predict_proba(&wrong),
            Err(ModelError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = synth::generate(300, 0.2, 4);
        let cfg = small_config(1 << 10);
        let a = train(&ds, &cfg).unwrap();
        let b = train(&ds, &cfg).unwrap();
        let bits = |t: &Trained| {
            t.model
                .params()
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.ema, b.ema);
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn training_reduces_loss() {
        for loss in [Loss::CrossEntropy, Loss::Focal(FocalParams::default())] {
            let ds = synth::generate(300, 0.176, 11);
            let t = train(
                &ds,
                &TrainConfig {
                    loss,
                    ..small_config(1 << 10)
                },
            )
            .unwrap();
            assert!(t.report.final_loss < t.report.initial_loss, "{loss:?}");
            assert_eq!(t.report.steps, 10 * 300usize.div_ceil(32) as u64);
        }
    }

    #[test]
    fn separable_set_is_learned() {
        let train_set = synth::separable(200, 1);
        let test_set = synth::separable(200, 2);
        let cfg = TrainConfig {
            dim: 1 << 12,
            epochs: 200,
            ..TrainConfig::default()
        };
        let t = train(&train_set, &cfg).unwrap();
        let probs = t.ema_model().unwrap().predict_records(test_set.records());
        let f1 = binary_prf(&threshold_labels(&probs, 0.5), &test_set.labels())
            .unwrap()
            .f1;
        assert!(f1 >= 0.95, "f1 = {f1}");
    }

    #[test]
    fn frozen_head_keeps_bias() {
        let ds = synth::generate(200, 0.3, 5);
        let mut cfg = small_config(1 << 10);
        cfg.adamw.groups.get_mut(HEAD).unwrap().lr = 0.0;
        let t = train(&ds, &cfg).unwrap();
        assert_eq!(t.model.bias().to_bits(), 0f64.to_bits());
        assert!(t.model.weights().iter().any(|&w| w != 0.0));
    }

    #[test]
    fn ema_stays_near_converged_weights() {
        // 25 steps per epoch against an averaging horizon of about 10 steps
        let ds = synth::separable(200, 3);
        let cfg = TrainConfig {
            dim: 1 << 10,
            epochs: 60,
            batch_size: 8,
            ema_decay: 0.9,
            ..TrainConfig::default()
        };
        let t = train(&ds, &cfg).unwrap();
        let ema = t.ema.debiased().unwrap();
        let gap = ema
            .iter()
            .zip(t.model.params().values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            gap < t.report.last_epoch_path,
            "gap {gap} vs path {}",
            t.report.last_epoch_path
        );
    }

    #[test]
    fn ema_model_matches_raw_model_after_convergence() {
        let ds = synth::separable(200, 3);
        let test_set = synth::separable(200, 4);
        let cfg = TrainConfig {
            dim: 1 << 10,
            epochs: 60,
            ema_decay: 0.9,
            ..TrainConfig::default()
        };
        let t = train(&ds, &cfg).unwrap();
        let golds = test_set.labels();
        for m in [t.model.clone(), t.ema_model().unwrap()] {
            let f1 = binary_prf(
                &threshold_labels(&m.predict_records(test_set.records()), 0.5),
                &golds,
            )
            .unwrap()
            .f1;
            assert!(f1 >= 0.95, "f1 = {f1}");
        }
    }

    #[test]
    fn oversampling_balances_training_data() {
        let ds = synth::generate(100, 0.176, 6);
        let cfg = TrainConfig {
            oversample: true,
            ..small_config(1 << 8)
        };
        let t = train(&ds, &cfg).unwrap();
        let (neg, _) = ds.class_counts();
        assert_eq!(t.report.steps, 10 * (2 * neg).div_ceil(32) as u64);
    }

    #[test]
    fn training_errors() {
        let one_class = LabeledDataset::new(vec![Record {
            id: "a".into(),
            text: "x".into(),
            label: 0,
        }])
        .unwrap();
        assert!(matches!(
            train(&one_class, &TrainConfig::default()),
            Err(ModelError::EmptyClass(1))
        ));
        let ds = synth::generate(20, 0.5, 0);
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&ds, &bad),
            Err(ModelError::InvalidConfig(_))
        ));
        let bad = TrainConfig {
            dim: 100,
            ..TrainConfig::default()
        };
        assert!(matches!(train(&ds, &bad), Err(ModelError::BadDim(100))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let ds = synth::generate(100, 0.3, 8);
        let t = train(
            &ds,
            &TrainConfig {
                epochs: 2,
                ..small_config(1 << 8)
            },
        )
        .unwrap();
        let ck = Checkpoint::from_parts(&t.model, &t.ema);
        let js = serde_json::to_string(&ck).unwrap();
        let back: Checkpoint = serde_json::from_str(&js).unwrap();
        let (model, ema) = back.into_parts().unwrap();
        assert_eq!(model, t.model);
        assert_eq!(ema, t.ema);

        let mut broken = ck.clone();
        broken.weights.push((10_000, 1.0));
        assert!(matches!(
            broken.into_parts(),
            Err(ModelError::Checkpoint(_))
        ));
    }

    #[test]
    fn fold_models_share_fusion_path() {
        let ds = synth::generate(120, 0.25, 2);
        let split = ensemble::stratified_kfold(&ds, 3, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            ..small_config(1 << 8)
        };
        let trained = train_fold_models(&ds, &split, &cfg).unwrap();
        assert_eq!(trained.len(), 3);
        let direct = train(
            &ds.subset(&split.train_ids(1)),
            &TrainConfig {
                seed: cfg.seed + 1,
                ..cfg.clone()
            },
        )
        .unwrap();
        assert_eq!(trained[1], direct);
        let models: Vec<ToyModel> = trained.iter().map(|t| t.ema_model().unwrap()).collect();
        let fused = fused_predictions(&models, ds.records()).unwrap();
        let members: Vec<Vec<f64>> = models
            .iter()
            .map(|m| m.predict_records(ds.records()))
            .collect();
        assert_eq!(fused, ensemble::mean_pool_probs(&members).unwrap());
    }
}
