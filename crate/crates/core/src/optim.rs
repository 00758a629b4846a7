//! Binary losses with logit gradients, AdamW with per-group hyperparameters,
//! and EMA shadow weights with bias correction.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` before taking logs.
pub const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("no hyperparameters for parameter group {0:?}")]
    UnknownGroup(String),
    #[error("bias correction needs at least one EMA update")]
    ZeroSteps,
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn clip(p: f64) -> f64 {
    p.clamp(PROB_CLIP, 1.0 - PROB_CLIP)
}

/// Binary cross-entropy `-(y ln p + (1 - y) ln(1 - p))` on a clipped probability.
pub fn cross_entropy(p: f64, y: bool) -> f64 {
    let p = clip(p);
    if y {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Cross-entropy of `sigmoid(z)`, computed in log space.
pub fn cross_entropy_logit(z: f64, y: bool) -> f64 {
    if y {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// `d CE / dz = sigmoid(z) - y`.
pub fn cross_entropy_grad(z: f64, y: bool) -> f64 {
    if y {
        -sigmoid(-z)
    } else {
        sigmoid(z)
    }
}

/// Balance weight `alpha` and focusing exponent `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl FocalParams {
    /// `alpha` in `[0, 1]` (an endpoint weights a single class), `gamma >= 0`.
    pub fn new(alpha: f64, gamma: f64) -> Result<Self, OptimError> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(OptimError::InvalidParam(format!(
                "focal alpha {alpha} outside [0, 1]"
            )));
        }
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(OptimError::InvalidParam(format!(
                "focal gamma {gamma} must be >= 0"
            )));
        }
        Ok(Self { alpha, gamma })
    }
}

impl Default for FocalParams {
    fn default() -> Self {
        Self {
            alpha: 0.25,
            gamma: 2.0,
        }
    }
}

/// Focal loss on a clipped probability.
///
/// Positives: `-alpha (1 - p)^gamma ln p`.
/// Negatives: `-(1 - alpha) p^gamma ln(1 - p)`.
pub fn focal_loss(p: f64, y: bool, params: FocalParams) -> f64 {
    let p = clip(p);
    let FocalParams { alpha, gamma } = params;
    if y {
        -alpha * (1.0 - p).powf(gamma) * p.ln()
    } else {
        -(1.0 - alpha) * p.powf(gamma) * (1.0 - p).ln()
    }
}

/// Focal loss of `sigmoid(z)` without clipping; `1 - p` and the logs are
/// evaluated from `z` directly so saturated logits keep full precision.
pub fn focal_loss_logit(z: f64, y: bool, params: FocalParams) -> f64 {
    let FocalParams { alpha, gamma } = params;
    // q = probability of the observed class
    let (weight, q_logit) = if y { (alpha, z) } else { (1.0 - alpha, -z) };
    let miss = sigmoid(-q_logit);
    weight * miss.powf(gamma) * softplus(-q_logit)
}

/// Closed-form `d focal_loss_logit / dz`.
///
/// With `q = sigmoid(s z)`, `s = +1` for positives and `-1` for negatives,
/// and `w` the class weight, the loss is `-w (1 - q)^gamma ln q` and
///
/// ```text
/// dL/dz = s * w * (1 - q)^gamma * (gamma q ln q - (1 - q))
/// ```
pub fn focal_loss_grad(z: f64, y: bool, params: FocalParams) -> f64 {
    let FocalParams { alpha, gamma } = params;
    let (weight, sign) = if y { (alpha, 1.0) } else { (1.0 - alpha, -1.0) };
    let s = sign * z;
    let q = sigmoid(s);
    let miss = sigmoid(-s);
    let ln_q = -softplus(-s);
    // miss^gamma with gamma = 0 must stay 1 even when miss underflows to 0
    let modulator = if gamma == 0.0 { 1.0 } else { miss.powf(gamma) };
    sign * weight * modulator * (gamma * q * ln_q - miss)
}

/// Training objective for a binary logit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Loss {
    CrossEntropy,
    Focal(FocalParams),
}

impl Loss {
    pub fn value(&self, z: f64, y: bool) -> f64 {
        match self {
            Loss::CrossEntropy => cross_entropy_logit(z, y),
            Loss::Focal(p) => focal_loss_logit(z, y, *p),
        }
    }

    pub fn grad(&self, z: f64, y: bool) -> f64 {
        match self {
            Loss::CrossEntropy => cross_entropy_grad(z, y),
            Loss::Focal(p) => focal_loss_grad(z, y, *p),
        }
    }
}

/// A named contiguous slice of a [`ParamVector`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub start: usize,
    pub end: usize,
}

impl ParamGroup {
    pub fn range(&self) -> Range<usize> {
        self.start..self.end
    }
}

/// Finite parameter values partitioned into named groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    groups: Vec<ParamGroup>,
}

impl ParamVector {
    /// `groups` must tile `0..values.len()` in order, without gaps.
    pub fn new(values: Vec<f64>, groups: Vec<ParamGroup>) -> Result<Self, OptimError> {
        let mut at = 0;
        for g in &groups {
            if g.start != at || g.end < g.start {
                return Err(OptimError::InvalidParam(format!(
                    "group {:?} does not continue at {at}",
                    g.name
                )));
            }
            at = g.end;
        }
        if at != values.len() {
            return Err(OptimError::InvalidParam(format!(
                "groups cover {at} of {} parameters",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(OptimError::NonFinite(i));
        }
        Ok(Self { values, groups })
    }

    pub fn single_group(name: &str, values: Vec<f64>) -> Self {
        let end = values.len();
        Self::new(
            values,
            vec![ParamGroup {
                name: name.to_string(),
                start: 0,
                end,
            }],
        )
        .expect("single group covers everything")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn groups(&self) -> &[ParamGroup] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn group_of(&self, index: usize) -> Option<&str> {
        self.groups
            .iter()
            .find(|g| g.range().contains(&index))
            .map(|g| g.name.as_str())
    }

    pub fn group(&self, name: &str) -> Option<&[f64]> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .map(|g| &self.values[g.range()])
    }

    /// Same grouping, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self, OptimError> {
        if values.len() != self.values.len() {
            return Err(OptimError::LengthMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        Self::new(values, self.groups.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupHyper {
    pub lr: f64,
    pub weight_decay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub groups: BTreeMap<String, GroupHyper>,
}

impl Default for AdamWConfig {
    /// Backbone `lr = 3e-5, wd = 0.01`; head `lr = 3e-4, wd = 0`.
    fn default() -> Self {
        Self::with_groups([
            (
                "backbone",
                GroupHyper {
                    lr: 3e-5,
                    weight_decay: 0.01,
                },
            ),
            (
                "head",
                GroupHyper {
                    lr: 3e-4,
                    weight_decay: 0.0,
                },
            ),
        ])
    }
}

impl AdamWConfig {
    pub fn with_groups<'a>(groups: impl IntoIterator<Item = (&'a str, GroupHyper)>) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            groups: groups
                .into_iter()
                .map(|(k, v)| (k.to_string(), v))
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), OptimError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(OptimError::InvalidParam("betas must lie in [0, 1)".into()));
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(OptimError::InvalidParam("eps must be positive".into()));
        }
        for (name, h) in &self.groups {
            if !(h.lr >= 0.0 && h.lr.is_finite())
                || !(h.weight_decay >= 0.0 && h.weight_decay.is_finite())
            {
                return Err(OptimError::InvalidParam(format!(
                    "group {name:?} needs finite lr >= 0 and wd >= 0"
                )));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl OptState {
    pub fn new(len: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

/// One AdamW step, returning the new optimizer state and parameters.
pub fn adamw_step(
    config: &AdamWConfig,
    state: &OptState,
    params: &ParamVector,
    grads: &[f64],
) -> Result<(OptState, ParamVector), OptimError> {
    let mut state = state.clone();
    let mut params = params.clone();
    adamw_step_in_place(config, &mut state, &mut params, grads)?;
    Ok((state, params))
}

/// In-place form of [`adamw_step`]. On error nothing is modified.
pub fn adamw_step_in_place(
    config: &AdamWConfig,
    state: &mut OptState,
    params: &mut ParamVector,
    grads: &[f64],
) -> Result<(), OptimError> {
    let len = params.len();
    for got in [grads.len(), state.m.len(), state.v.len()] {
        if got != len {
            return Err(OptimError::LengthMismatch { expected: len, got });
        }
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(OptimError::NonFinite(i));
    }
    let hypers = params
        .groups
        .iter()
        .map(|g| {
            config
                .groups
                .get(&g.name)
                .copied()
                .ok_or_else(|| OptimError::UnknownGroup(g.name.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for (group, h) in params.groups.iter().zip(hypers) {
        let decay = 1.0 - h.lr * h.weight_decay;
        for i in group.range() {
            let g = grads[i];
            let m = b1 * state.m[i] + (1.0 - b1) * g;
            let v = b2 * state.v[i] + (1.0 - b2) * g * g;
            state.m[i] = m;
            state.v[i] = v;
            if h.lr == 0.0 {
                continue;
            }
            let update = (m / bc1) / ((v / bc2).sqrt() + config.eps);
            params.values[i] = params.values[i] * decay - h.lr * update;
        }
    }
    Ok(())
}

/// Shadow weights `v_n = decay * v_{n-1} + (1 - decay) * theta_n`, `v_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub decay: f64,
    pub step: u64,
    pub shadow: Vec<f64>,
}

impl EmaState {
    pub fn new(decay: f64, len: usize) -> Result<Self, OptimError> {
        if !(decay > 0.0 && decay < 1.0) {
            return Err(OptimError::InvalidParam(format!(
                "EMA decay {decay} outside (0, 1)"
            )));
        }
        Ok(Self {
            decay,
            step: 0,
            shadow: vec![0.0; len],
        })
    }

    pub fn update_in_place(&mut self, theta: &[f64]) -> Result<(), OptimError> {
        if theta.len() != self.shadow.len() {
            return Err(OptimError::LengthMismatch {
                expected: self.shadow.len(),
                got: theta.len(),
            });
        }
        let d = self.decay;
        for (s, &x) in self.shadow.iter_mut().zip(theta) {
            *s = d * *s + (1.0 - d) * x;
        }
        self.step += 1;
        Ok(())
    }

    /// `shadow / (1 - decay^step)`.
    pub fn debiased(&self) -> Result<Vec<f64>, OptimError> {
        if self.step == 0 {
            return Err(OptimError::ZeroSteps);
        }
        let corr = 1.0 - self.decay.powf(self.step as f64);
        Ok(self.shadow.iter().map(|s| s / corr).collect())
    }
}

pub fn ema_update(state: &EmaState, theta: &ParamVector) -> Result<EmaState, OptimError> {
    let mut next = state.clone();
    next.update_in_place(theta.values())?;
    Ok(next)
}

pub fn ema_debias(state: &EmaState) -> Result<Vec<f64>, OptimError> {
    state.debiased()
}
