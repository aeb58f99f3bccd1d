//! Detection and segmentation losses over a batch of subvolumes.
//!
//! Every loss is available as a plain value and as value plus gradient with
//! respect to the predicted probabilities. Labels are data, never variables.
//!
//! The volume-level terms use the hard per-subvolume maximum. At ties the
//! gradient goes to the first maximal voxel in storage order.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{n_voxels, Dims};

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Floor applied to predictions before taking logarithms in BCE.
pub const BCE_CLAMP: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1.0;

/// Paired labels and predictions for `B` subvolumes of one shape.
#[derive(Clone, Debug, PartialEq)]
pub struct SubvolumeBatch {
    shape: Dims,
    labels: Vec<Vec<u8>>,
    predictions: Vec<Vec<f64>>,
}

impl SubvolumeBatch {
    pub fn new(shape: Dims, labels: Vec<Vec<u8>>, predictions: Vec<Vec<f64>>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::invalid("batch must hold at least one subvolume"));
        }
        if labels.len() != predictions.len() {
            return Err(Error::invalid(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let n = n_voxels(shape);
        for (i, (y, p)) in labels.iter().zip(&predictions).enumerate() {
            if y.len() != n || p.len() != n {
                return Err(Error::invalid(format!(
                    "subvolume {i} does not match shape {shape:?}"
                )));
            }
            if y.iter().any(|&v| v > 1) {
                return Err(Error::invalid(format!("subvolume {i} has a non-binary label")));
            }
            if p.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::invalid(format!(
                    "subvolume {i} has a prediction outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            shape,
            labels,
            predictions,
        })
    }

    pub fn shape(&self) -> Dims {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Vec<u8>] {
        &self.labels
    }

    pub fn predictions(&self) -> &[Vec<f64>] {
        &self.predictions
    }

    /// Same labels, new predictions of the same shape.
    pub fn with_predictions(&self, predictions: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(self.shape, self.labels.clone(), predictions)
    }

    fn total_voxels(&self) -> usize {
        self.labels.len() * n_voxels(self.shape)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VssParams {
    pub alpha: f64,
    pub epsilon: f64,
}

impl VssParams {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        let p = Self { alpha, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn with_alpha(alpha: f64) -> Result<Self> {
        Self::new(alpha, DEFAULT_EPSILON)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::invalid(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }
}

impl Default for VssParams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// A scalar loss and the named terms it was built from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub total: f64,
    pub components: BTreeMap<String, f64>,
}

impl LossValue {
    fn new(total: f64, components: &[(&str, f64)]) -> Self {
        Self {
            total,
            components: components
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
        }
    }

    pub fn component(&self, name: &str) -> Option<f64> {
        self.components.get(name).copied()
    }
}

/// Gradient of a loss with respect to each predicted voxel, shaped like the batch.
pub type LossGradient = Vec<Vec<f64>>;

fn zeros_like(batch: &SubvolumeBatch) -> LossGradient {
    batch
        .predictions
        .iter()
        .map(|p| vec![0.0; p.len()])
        .collect()
}

/// First index of the maximum of `values` over positions where `keep` holds.
fn argmax_where(values: &[f64], keep: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if keep(i) && best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

fn has_positive(y: &[u8]) -> bool {
    y.iter().any(|&v| v != 0)
}

struct EtaTerm {
    value: f64,
    /// Per volume: voxel receiving the gradient and its weight.
    active: Vec<Option<(usize, f64)>>,
}

fn eta_sens_term(batch: &SubvolumeBatch, epsilon: f64) -> EtaTerm {
    let mut numer = 0.0;
    let mut denom = epsilon;
    let mut hits = Vec::with_capacity(batch.len());
    for (y, p) in batch.labels.iter().zip(&batch.predictions) {
        // max(ŷ·y) over a nonnegative ŷ is the max of ŷ over label voxels.
        match argmax_where(p, |i| y[i] != 0) {
            Some((i, v)) => {
                numer += v;
                denom += 1.0;
                hits.push(Some(i));
            }
            None => hits.push(None),
        }
    }
    EtaTerm {
        value: numer / denom,
        active: hits.into_iter().map(|h| h.map(|i| (i, 1.0 / denom))).collect(),
    }
}

fn eta_spec_term(batch: &SubvolumeBatch, epsilon: f64) -> EtaTerm {
    let mut numer = 0.0;
    let mut denom = epsilon;
    let mut hits = Vec::with_capacity(batch.len());
    for (y, p) in batch.labels.iter().zip(&batch.predictions) {
        if has_positive(y) {
            hits.push(None);
            continue;
        }
        let (i, v) = argmax_where(p, |_| true).expect("non-empty subvolume");
        numer += 1.0 - v;
        denom += 1.0;
        hits.push(Some(i));
    }
    EtaTerm {
        value: numer / denom,
        active: hits.into_iter().map(|h| h.map(|i| (i, -1.0 / denom))).collect(),
    }
}

/// Soft volume-level sensitivity: `Σ max(ŷᵢ·yᵢ) / (Σ max(yᵢ) + ε)`.
pub fn eta_sens(batch: &SubvolumeBatch, epsilon: f64) -> f64 {
    eta_sens_term(batch, epsilon).value
}

/// Soft volume-level specificity:
/// `Σ (1 − max yᵢ)(1 − max ŷᵢ) / (Σ (1 − max yᵢ) + ε)`.
pub fn eta_spec(batch: &SubvolumeBatch, epsilon: f64) -> f64 {
    eta_spec_term(batch, epsilon).value
}

fn vss_impl(batch: &SubvolumeBatch, params: VssParams, grad: Option<&mut LossGradient>) -> LossValue {
    let sens = eta_sens_term(batch, params.epsilon);
    let spec = eta_spec_term(batch, params.epsilon);
    let a = params.alpha;
    let total = 1.0 - (a * sens.value + (1.0 - a) * spec.value);
    if let Some(g) = grad {
        for (i, gi) in g.iter_mut().enumerate() {
            if let Some((v, w)) = sens.active[i] {
                gi[v] -= a * w;
            }
            if let Some((v, w)) = spec.active[i] {
                gi[v] -= (1.0 - a) * w;
            }
        }
    }
    LossValue::new(total, &[("eta_sens", sens.value), ("eta_spec", spec.value)])
}

/// `1 − (α·η_sens + (1 − α)·η_spec)`.
pub fn vss_loss(batch: &SubvolumeBatch, params: VssParams) -> LossValue {
    vss_impl(batch, params, None)
}

fn bce_impl(batch: &SubvolumeBatch, grad: Option<&mut LossGradient>) -> LossValue {
    let n = batch.total_voxels() as f64;
    let mut sum = 0.0;
    let mut grad = grad;
    for (i, (y, p)) in batch.labels.iter().zip(&batch.predictions).enumerate() {
        for (j, (&yv, &pv)) in y.iter().zip(p).enumerate() {
            let q = pv.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            let clamped = q != pv;
            if yv != 0 {
                sum -= q.ln();
                if let (Some(g), false) = (grad.as_deref_mut(), clamped) {
                    g[i][j] -= 1.0 / (q * n);
                }
            } else {
                sum -= (1.0 - q).ln();
                if let (Some(g), false) = (grad.as_deref_mut(), clamped) {
                    g[i][j] += 1.0 / ((1.0 - q) * n);
                }
            }
        }
    }
    let total = sum / n;
    LossValue::new(total, &[("bce", total)])
}

/// Voxel-mean binary cross-entropy with predictions clamped to `[δ, 1 − δ]`.
pub fn bce_loss(batch: &SubvolumeBatch) -> LossValue {
    bce_impl(batch, None)
}

fn jvss_impl(batch: &SubvolumeBatch, params: VssParams, mut grad: Option<&mut LossGradient>) -> LossValue {
    let vss = vss_impl(batch, params, grad.as_deref_mut());
    let bce = bce_impl(batch, grad);
    let mut components = vss.components;
    components.insert("vss".into(), vss.total);
    components.insert("bce".into(), bce.total);
    LossValue {
        total: vss.total + bce.total,
        components,
    }
}

/// VSS plus BCE.
pub fn jvss_loss(batch: &SubvolumeBatch, params: VssParams) -> LossValue {
    jvss_impl(batch, params, None)
}

fn sse_impl(batch: &SubvolumeBatch, alpha: f64, grad: Option<&mut LossGradient>) -> LossValue {
    let mut pos_err = 0.0;
    let mut neg_err = 0.0;
    let mut n_pos = 0.0;
    let mut n_neg = 0.0;
    for (y, p) in batch.labels.iter().zip(&batch.predictions) {
        for (&yv, &pv) in y.iter().zip(p) {
            let yf = yv as f64;
            let e = (yf - pv) * (yf - pv);
            if yv != 0 {
                pos_err += e;
                n_pos += 1.0;
            } else {
                neg_err += e;
                n_neg += 1.0;
            }
        }
    }
    // Empty classes contribute nothing.
    let sens_term = if n_pos > 0.0 { pos_err / n_pos } else { 0.0 };
    let spec_term = if n_neg > 0.0 { neg_err / n_neg } else { 0.0 };
    if let Some(g) = grad {
        for (i, (y, p)) in batch.labels.iter().zip(&batch.predictions).enumerate() {
            for (j, (&yv, &pv)) in y.iter().zip(p).enumerate() {
                let yf = yv as f64;
                g[i][j] += if yv != 0 {
                    -2.0 * alpha * (yf - pv) / n_pos
                } else {
                    -2.0 * (1.0 - alpha) * (yf - pv) / n_neg
                };
            }
        }
    }
    let total = alpha * sens_term + (1.0 - alpha) * spec_term;
    LossValue::new(
        total,
        &[("sse_sens_term", sens_term), ("sse_spec_term", spec_term)],
    )
}

/// Voxel-level sensitivity-specificity error over the whole batch.
pub fn sse_loss(batch: &SubvolumeBatch, alpha: f64) -> LossValue {
    sse_impl(batch, alpha, None)
}

fn dice_impl(batch: &SubvolumeBatch, grad: Option<&mut LossGradient>) -> LossValue {
    let s = DICE_SMOOTH;
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_y = 0.0;
    for (y, p) in batch.labels.iter().zip(&batch.predictions) {
        for (&yv, &pv) in y.iter().zip(p) {
            let yf = yv as f64;
            inter += yf * pv;
            sum_p += pv;
            sum_y += yf;
        }
    }
    let num = 2.0 * inter + s;
    let den = sum_p + sum_y + s;
    if let Some(g) = grad {
        for (i, y) in batch.labels.iter().enumerate() {
            for (j, &yv) in y.iter().enumerate() {
                g[i][j] -= (2.0 * yv as f64 * den - num) / (den * den);
            }
        }
    }
    let total = 1.0 - num / den;
    LossValue::new(total, &[("dice", total)])
}

/// `1 − (2Σŷy + s)/(Σŷ + Σy + s)` over the whole batch.
pub fn soft_dice_loss(batch: &SubvolumeBatch) -> LossValue {
    dice_impl(batch, None)
}

/// A training objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Loss {
    Bce,
    Vss(VssParams),
    Jvss(VssParams),
    Sse { alpha: f64 },
    Dice,
}

impl Loss {
    pub fn name(&self) -> &'static str {
        match self {
            Loss::Bce => "bce",
            Loss::Vss(_) => "vss",
            Loss::Jvss(_) => "jvss",
            Loss::Sse { .. } => "sse",
            Loss::Dice => "dice",
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match self {
            Loss::Vss(p) | Loss::Jvss(p) => Some(p.alpha),
            Loss::Sse { alpha } => Some(*alpha),
            Loss::Bce | Loss::Dice => None,
        }
    }

    pub fn epsilon(&self) -> Option<f64> {
        match self {
            Loss::Vss(p) | Loss::Jvss(p) => Some(p.epsilon),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Loss::Vss(p) | Loss::Jvss(p) => p.validate(),
            Loss::Sse { alpha } if !(0.0..=1.0).contains(alpha) => {
                Err(Error::invalid(format!("alpha {alpha} outside [0, 1]")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, batch: &SubvolumeBatch) -> LossValue {
        self.dispatch(batch, None)
    }

    pub fn value_and_grad(&self, batch: &SubvolumeBatch) -> (LossValue, LossGradient) {
        let mut g = zeros_like(batch);
        let v = self.dispatch(batch, Some(&mut g));
        (v, g)
    }

    fn dispatch(&self, batch: &SubvolumeBatch, grad: Option<&mut LossGradient>) -> LossValue {
        match *self {
            Loss::Bce => bce_impl(batch, grad),
            Loss::Vss(p) => vss_impl(batch, p, grad),
            Loss::Jvss(p) => jvss_impl(batch, p, grad),
            Loss::Sse { alpha } => sse_impl(batch, alpha, grad),
            Loss::Dice => dice_impl(batch, grad),
        }
    }
}
