//! Minibatch training of the patch network against any loss in [`crate::losses`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{Loss, LossValue, SubvolumeBatch};
use crate::model::{ModelCheckpoint, ModelConfig, Network, PatchInputs, TrainingFingerprint};
use crate::patching::{Augmentation, CenterSampler, SegmentSpec, TrainingSegment};
use crate::phantom::{LongitudinalStudy, TimepointSelection};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: Loss,
    /// Initial learning rate.
    pub learning_rate: f64,
    /// Learning rate multiplier applied after every epoch.
    #[serde(default = "unit")]
    pub lr_decay: f64,
    /// Nesterov momentum coefficient.
    pub momentum: f64,
    /// Decay of the squared-gradient moving average.
    pub rms_decay: f64,
    pub l1_weight: f64,
    pub l2_weight: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub segments_per_epoch: usize,
    pub validation_segments: usize,
    pub validation_fraction: f64,
    pub tumor_fraction: f64,
    pub augment: bool,
    /// Timepoints segments are drawn from.
    #[serde(default)]
    pub timepoints: TimepointSelection,
    pub seed: u64,
}

fn unit() -> f64 {
    1.0
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: Loss::Jvss(crate::losses::VssParams::default()),
            learning_rate: 0.001,
            lr_decay: 1.0,
            momentum: 0.6,
            rms_decay: 0.9,
            l1_weight: 1e-6,
            l2_weight: 1e-4,
            epochs: 15,
            batch_size: 16,
            segments_per_epoch: 200,
            validation_segments: 64,
            validation_fraction: 0.1,
            tumor_fraction: 0.5,
            augment: true,
            timepoints: TimepointSelection::All,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        let nonneg = [
            ("learning_rate", self.learning_rate),
            ("l1_weight", self.l1_weight),
            ("l2_weight", self.l2_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be a non-negative number")));
            }
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::invalid("lr_decay must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(0.0..1.0).contains(&self.rms_decay) {
            return Err(Error::invalid("momentum and rms_decay must lie in [0, 1)"));
        }
        if self.batch_size == 0 || self.segments_per_epoch == 0 {
            return Err(Error::invalid("batch_size and segments_per_epoch must be positive"));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::invalid("validation_fraction must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.tumor_fraction) {
            return Err(Error::invalid("tumor_fraction must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> TrainingFingerprint {
        TrainingFingerprint {
            loss: self.loss.name().to_string(),
            alpha: self.loss.alpha(),
            epsilon: self.loss.epsilon(),
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

/// RMSProp with Nesterov momentum and L1/L2 penalties on weights.
#[derive(Clone, Debug)]
pub struct Optimizer {
    learning_rate: f32,
    momentum: f32,
    decay: f32,
    l1: f32,
    l2: f32,
    weight_mask: Vec<bool>,
    mean_square: Vec<f32>,
    velocity: Vec<f32>,
}

const RMS_EPS: f32 = 1e-6;

impl Optimizer {
    pub fn new(config: &TrainConfig, weight_mask: Vec<bool>) -> Self {
        let n = weight_mask.len();
        Self {
            learning_rate: config.learning_rate as f32,
            momentum: config.momentum as f32,
            decay: config.rms_decay as f32,
            l1: config.l1_weight as f32,
            l2: config.l2_weight as f32,
            weight_mask,
            mean_square: vec![0.0; n],
            velocity: vec![0.0; n],
        }
    }

    pub fn learning_rate(&self) -> f32 {
        self.learning_rate
    }

    pub fn set_learning_rate(&mut self, lr: f32) {
        self.learning_rate = lr;
    }

    /// `l1·Σ|w| + l2·Σw²` over weights.
    pub fn penalty(&self, params: &[f32]) -> f64 {
        params
            .iter()
            .zip(&self.weight_mask)
            .filter(|(_, &w)| w)
            .map(|(p, _)| self.l1 as f64 * p.abs() as f64 + self.l2 as f64 * (*p as f64).powi(2))
            .sum()
    }

    /// One update from the data gradient; the penalty gradient is added here.
    pub fn step(&mut self, params: &mut [f32], data_grad: &[f32]) {
        assert_eq!(params.len(), data_grad.len());
        for i in 0..params.len() {
            let mut g = data_grad[i];
            if self.weight_mask[i] {
                g += self.l1 * params[i].signum() * (params[i] != 0.0) as i32 as f32
                    + 2.0 * self.l2 * params[i];
            }
            let ms = self.decay * self.mean_square[i] + (1.0 - self.decay) * g * g;
            self.mean_square[i] = ms;
            let update = -self.learning_rate * g / (ms + RMS_EPS).sqrt();
            let v = self.momentum * self.velocity[i] + update;
            self.velocity[i] = v;
            params[i] += self.momentum * v + update;
        }
    }
}

/// Loss on one optimizer step together with the batch it was computed on.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub loss: LossValue,
    pub batch: SubvolumeBatch,
}

/// Network plus optimizer state.
pub struct Trainer {
    net: Network,
    optimizer: Optimizer,
    loss: Loss,
}

impl Trainer {
    pub fn new(net: Network, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let mask = net.weight_mask();
        Ok(Self {
            optimizer: Optimizer::new(config, mask),
            net,
            loss: config.loss,
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn into_network(self) -> Network {
        self.net
    }

    fn forward_batch(&self, segments: &[TrainingSegment]) -> Result<(Vec<crate::model::ForwardOutput>, SubvolumeBatch)> {
        let mut outputs = Vec::with_capacity(segments.len());
        let mut labels = Vec::with_capacity(segments.len());
        let mut preds = Vec::with_capacity(segments.len());
        for seg in segments {
            let out = self.net.forward(&PatchInputs {
                main: &seg.main_patch,
                lowres: &seg.lowres_patches,
                prior: &seg.prior_patch,
            })?;
            if seg.label_patch.size() != out.output_size {
                return Err(Error::Shape {
                    pathway: "main".into(),
                    reason: format!(
                        "label patch {} does not match network output {}",
                        seg.label_patch.size(),
                        out.output_size
                    ),
                });
            }
            labels.push(seg.label_patch.data().to_vec());
            preds.push(out.probabilities.iter().map(|&p| p as f64).collect());
            outputs.push(out);
        }
        let o = outputs[0].output_size;
        let batch = SubvolumeBatch::new([o, o, o], labels, preds)?;
        Ok((outputs, batch))
    }

    /// Loss of the current network on `segments`, without updating it.
    pub fn evaluate(&self, segments: &[TrainingSegment]) -> Result<LossValue> {
        let (_, batch) = self.forward_batch(segments)?;
        Ok(self.loss.value(&batch))
    }

    pub fn step(&mut self, segments: &[TrainingSegment]) -> Result<StepReport> {
        if segments.is_empty() {
            return Err(Error::invalid("empty training batch"));
        }
        let (outputs, batch) = self.forward_batch(segments)?;
        let (loss, dprob) = self.loss.value_and_grad(&batch);
        if !loss.total.is_finite() {
            return Ok(StepReport { loss, batch });
        }
        let mut grad = vec![0f32; self.net.n_parameters()];
        for (out, g) in outputs.iter().zip(&dprob) {
            let g32: Vec<f32> = g.iter().map(|&v| v as f32).collect();
            self.net.backward(out, &g32, &mut grad);
        }
        self.optimizer.step(self.net.parameters_mut(), &grad);
        Ok(StepReport { loss, batch })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_components: std::collections::BTreeMap<String, f64>,
    pub validation_loss: Option<f64>,
    pub validation_components: std::collections::BTreeMap<String, f64>,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub validation_patients: Vec<String>,
    /// SHA-256 of the final parameter block.
    pub checkpoint_id: String,
}

pub fn parameter_digest(params: &[f32]) -> String {
    let mut h = Sha256::new();
    for p in params {
        h.update(p.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Default)]
struct Mean {
    n: usize,
    total: f64,
    components: std::collections::BTreeMap<String, f64>,
}

impl Mean {
    fn add(&mut self, v: &LossValue) {
        self.n += 1;
        self.total += v.total;
        for (k, c) in &v.components {
            *self.components.entry(k.clone()).or_default() += c;
        }
    }

    fn finish(self) -> (f64, std::collections::BTreeMap<String, f64>) {
        let n = self.n.max(1) as f64;
        (
            self.total / n,
            self.components.into_iter().map(|(k, v)| (k, v / n)).collect(),
        )
    }
}

fn draw_segments(
    samplers: &[CenterSampler<'_>],
    spec: &SegmentSpec,
    count: usize,
    augment: bool,
    rng: &mut ChaCha8Rng,
) -> Vec<TrainingSegment> {
    (0..count)
        .map(|_| {
            let sampler = &samplers[rng.gen_range(0..samplers.len())];
            let (c, tumor) = sampler.draw_center(rng, spec.tumor_fraction);
            let seg = sampler.segment_at(c, tumor, spec);
            if augment {
                Augmentation::draw(rng).apply(&seg)
            } else {
                seg
            }
        })
        .collect()
}

fn samplers_for<'a>(
    studies: &[&'a LongitudinalStudy],
    selection: TimepointSelection,
) -> Result<Vec<CenterSampler<'a>>> {
    let mut out = Vec::new();
    for s in studies {
        for t in selection.timepoints(s) {
            out.push(CenterSampler::new(s, t)?);
        }
    }
    Ok(out)
}

fn study_has_lesions(s: &LongitudinalStudy) -> bool {
    s.timepoints.iter().any(|tp| !tp.reference_mask.is_empty())
}

/// Trains a freshly initialized network and returns its checkpoint and log.
pub fn train(
    corpus: &[LongitudinalStudy],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelCheckpoint, TrainingLog)> {
    config.validate()?;
    model_config.validate()?;
    if corpus.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut rng);
    let n_val = ((corpus.len() as f64 * config.validation_fraction).floor() as usize)
        .min(corpus.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let train_studies: Vec<&LongitudinalStudy> = train_idx.iter().map(|&i| &corpus[i]).collect();
    let val_studies: Vec<&LongitudinalStudy> = val_idx.iter().map(|&i| &corpus[i]).collect();
    if !train_studies.iter().any(|s| study_has_lesions(s)) {
        return Err(Error::invalid("no training study contains a lesion"));
    }

    let spec = model_config.segment_spec(config.tumor_fraction);
    let train_samplers = samplers_for(&train_studies, config.timepoints)?;
    if train_samplers.is_empty() {
        return Err(Error::invalid("no training timepoint matches the timepoint selection"));
    }
    let val_samplers = samplers_for(&val_studies, config.timepoints)?;
    let mut val_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7a11d);
    let val_segments = if val_samplers.is_empty() || config.validation_segments == 0 {
        Vec::new()
    } else {
        draw_segments(&val_samplers, &spec, config.validation_segments, false, &mut val_rng)
    };

    let net = Network::new(ModelConfig {
        seed: model_config.seed,
        ..model_config.clone()
    })?;
    let mut trainer = Trainer::new(net, config)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let start = Instant::now();
        trainer
            .optimizer
            .set_learning_rate((config.learning_rate * config.lr_decay.powi(epoch as i32)) as f32);
        let segments = draw_segments(&train_samplers, &spec, config.segments_per_epoch, config.augment, &mut rng);
        let mut mean = Mean::default();
        for batch in segments.chunks(config.batch_size) {
            let report = trainer.step(batch)?;
            if !report.loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    components: format!("{:?}", report.loss.components),
                });
            }
            mean.add(&report.loss);
        }
        let (train_loss, train_components) = mean.finish();
        let (validation_loss, validation_components) = if val_segments.is_empty() {
            (None, Default::default())
        } else {
            let mut vmean = Mean::default();
            for batch in val_segments.chunks(config.batch_size) {
                vmean.add(&trainer.evaluate(batch)?);
            }
            let (l, c) = vmean.finish();
            (Some(l), c)
        };
        epochs.push(EpochRecord {
            epoch,
            train_loss,
            train_components,
            validation_loss,
            validation_components,
            wall_time_s: start.elapsed().as_secs_f64(),
        });
    }
    let net = trainer.into_network();
    let checkpoint = ModelCheckpoint::from_network(&net, config.fingerprint());
    let log = TrainingLog {
        epochs,
        validation_patients: val_studies.iter().map(|s| s.patient_id.clone()).collect(),
        checkpoint_id: parameter_digest(net.parameters()),
    };
    Ok((checkpoint, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn l2_only_shrinks_norm_every_step() {
        let config = TrainConfig {
            learning_rate: 1e-3,
            l1_weight: 0.0,
            l2_weight: 1e-4,
            ..TrainConfig::default()
        };
        let mut params: Vec<f32> = (0..50).map(|i| ((i as f32) * 0.37).sin()).collect();
        let mut opt = Optimizer::new(&config, vec![true; params.len()]);
        let zero = vec![0f32; params.len()];
        let mut prev: f32 = params.iter().map(|p| p * p).sum();
        for _ in 0..30 {
            opt.step(&mut params, &zero);
            let norm: f32 = params.iter().map(|p| p * p).sum();
            assert!(norm < prev);
            prev = norm;
        }
    }

    #[test]
    fn zero_learning_rate_freezes_parameters() {
        let config = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        let mut params = vec![0.5f32, -0.25, 1.0];
        let before = params.clone();
        let mut opt = Optimizer::new(&config, vec![true; 3]);
        opt.step(&mut params, &[1.0, -2.0, 3.0]);
        assert_eq!(params, before);
    }

    #[test]
    fn biases_are_not_regularized() {
        let config = TrainConfig::default();
        let mut params = vec![1.0f32, 1.0];
        let mut opt = Optimizer::new(&config, vec![true, false]);
        opt.step(&mut params, &[0.0, 0.0]);
        assert!(params[0] < 1.0);
        assert_eq!(params[1], 1.0);
    }

    #[test]
    fn rejects_bad_configs() {
        let bad = TrainConfig {
            validation_fraction: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            loss: Loss::Sse { alpha: 1.5 },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
