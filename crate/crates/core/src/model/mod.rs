//! Multi-pathway 3D patch network.
//!
//! A normal-resolution main pathway, one strided low-resolution pathway per
//! context factor, and optionally a separate pathway for the temporal prior.
//! Each pathway is a stack of valid 3³ convolutions with leaky ReLU. Pathway
//! outputs are aligned to the main output grid (low-resolution maps by
//! nearest-neighbour upsampling), concatenated, and fused by 1³ layers into a
//! single logit per voxel.

mod checkpoint;
pub(crate) mod ops;

pub use checkpoint::{read_checkpoint, write_checkpoint, ModelCheckpoint, TrainingFingerprint};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::{stitch_predictions, tile_volume, Cube, SegmentSpec};
use crate::volume::{Volume, VolumeKind, VolumeMeta};

/// How the temporal prior reaches the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorMode {
    None,
    /// Stacked with the current image as a second main-pathway channel.
    Channel,
    /// Its own normal-resolution pathway, merged before the head.
    Path,
}

impl std::str::FromStr for PriorMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PriorMode::None),
            "channel" => Ok(PriorMode::Channel),
            "path" => Ok(PriorMode::Path),
            other => Err(Error::invalid(format!("unknown prior mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_conv_layers: usize,
    pub channels_per_layer: Vec<usize>,
    pub prior_mode: PriorMode,
    pub lowres_factors: Vec<usize>,
    /// Number of 1³ fusion layers, the last of which emits the logit.
    pub head_layers: usize,
    pub head_channels: usize,
    /// Training segment edge length.
    pub main_size: usize,
    /// Inference tile edge length.
    pub infer_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_conv_layers: 9,
            channels_per_layer: vec![8, 8, 8, 8, 12, 12, 12, 16, 16],
            prior_mode: PriorMode::None,
            lowres_factors: vec![3, 5],
            head_layers: 2,
            head_channels: 16,
            main_size: 37,
            infer_size: 45,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Small configuration that trains in seconds on one core.
    pub fn desk() -> Self {
        Self {
            n_conv_layers: 5,
            channels_per_layer: vec![6, 6, 8, 8, 8],
            prior_mode: PriorMode::None,
            lowres_factors: vec![3, 5],
            head_layers: 2,
            head_channels: 8,
            main_size: 19,
            infer_size: 37,
            seed: 0,
        }
    }

    pub fn output_size_for(&self, input_size: usize) -> Option<usize> {
        input_size
            .checked_sub(2 * self.n_conv_layers)
            .filter(|&o| o > 0)
    }

    pub fn output_size(&self) -> usize {
        self.output_size_for(self.main_size).unwrap_or(0)
    }

    pub fn main_channels(&self) -> usize {
        if self.prior_mode == PriorMode::Channel {
            2
        } else {
            1
        }
    }

    pub fn segment_spec(&self, tumor_fraction: f64) -> SegmentSpec {
        SegmentSpec {
            main_size: self.main_size,
            n_conv_layers: self.n_conv_layers,
            infer_size: self.infer_size,
            lowres_factors: self.lowres_factors.clone(),
            tumor_fraction,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_conv_layers == 0 {
            return Err(Error::invalid("need at least one convolutional layer"));
        }
        if self.channels_per_layer.len() != self.n_conv_layers {
            return Err(Error::invalid(format!(
                "{} channel widths for {} layers",
                self.channels_per_layer.len(),
                self.n_conv_layers
            )));
        }
        if self.channels_per_layer.iter().any(|&c| c == 0) || self.head_channels == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.head_layers == 0 {
            return Err(Error::invalid("need at least one fusion layer"));
        }
        self.segment_spec(0.5).validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum PathwayKind {
    Main,
    Lowres(usize),
    Prior,
}

impl PathwayKind {
    fn label(&self) -> String {
        match self {
            PathwayKind::Main => "main".into(),
            PathwayKind::Lowres(f) => format!("low-resolution x{f}"),
            PathwayKind::Prior => "prior".into(),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LayerSlot {
    pub cin: usize,
    pub cout: usize,
    pub weight: usize,
    pub bias: usize,
}

impl LayerSlot {
    fn conv_weights(&self) -> usize {
        self.cout * self.cin * 27
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Pathway {
    pub kind: PathwayKind,
    pub layers: Vec<LayerSlot>,
}

#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub pathways: Vec<Pathway>,
    pub head: Vec<LayerSlot>,
    pub n_params: usize,
}

impl Layout {
    fn build(config: &ModelConfig) -> Self {
        let mut offset = 0;
        let mut slot = |cin: usize, cout: usize, taps: usize| {
            let s = LayerSlot {
                cin,
                cout,
                weight: offset,
                bias: offset + cout * cin * taps,
            };
            offset += cout * cin * taps + cout;
            s
        };
        let mut kinds = vec![PathwayKind::Main];
        kinds.extend(config.lowres_factors.iter().map(|&f| PathwayKind::Lowres(f)));
        if config.prior_mode == PriorMode::Path {
            kinds.push(PathwayKind::Prior);
        }
        let mut pathways = Vec::new();
        for kind in kinds {
            let mut cin = if kind == PathwayKind::Main {
                config.main_channels()
            } else {
                1
            };
            let mut layers = Vec::new();
            for &c in &config.channels_per_layer {
                layers.push(slot(cin, c, 27));
                cin = c;
            }
            pathways.push(Pathway { kind, layers });
        }
        let mut cin = pathways.len() * config.channels_per_layer[config.n_conv_layers - 1];
        let mut head = Vec::new();
        for i in 0..config.head_layers {
            let cout = if i + 1 == config.head_layers {
                1
            } else {
                config.head_channels
            };
            head.push(slot(cin, cout, 1));
            cin = cout;
        }
        Layout {
            pathways,
            head,
            n_params: offset,
        }
    }
}

/// Inputs for one forward pass; all patches are cubes centered on the same voxel.
#[derive(Clone, Copy, Debug)]
pub struct PatchInputs<'a> {
    pub main: &'a Cube<f32>,
    pub lowres: &'a [Cube<f32>],
    pub prior: &'a Cube<f32>,
}

struct PathwayTrace {
    /// Input map followed by every layer's activated output.
    maps: Vec<Vec<f32>>,
    input_size: usize,
}

/// Intermediate state kept for the backward pass.
pub struct ForwardTrace {
    pathways: Vec<PathwayTrace>,
    fused_input: Vec<f32>,
    head_maps: Vec<Vec<f32>>,
    output_size: usize,
}

pub struct ForwardOutput {
    pub output_size: usize,
    pub logits: Vec<f32>,
    pub probabilities: Vec<f32>,
    pub trace: ForwardTrace,
}

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Nearest low-resolution index for each output offset along one axis.
fn upsample_map(output_size: usize, factor: usize) -> (Vec<usize>, usize) {
    let ho = (output_size / 2) as isize;
    let hm = (ho as f64 / factor as f64).round() as isize;
    let map = (0..output_size as isize)
        .map(|u| (((u - ho) as f64 / factor as f64).round() as isize + hm) as usize)
        .collect();
    (map, (2 * hm + 1) as usize)
}

fn upsample(src: &[f32], channels: usize, m: usize, map: &[usize]) -> Vec<f32> {
    let o = map.len();
    let mut out = Vec::with_capacity(channels * o * o * o);
    for c in 0..channels {
        let chan = &src[c * m * m * m..(c + 1) * m * m * m];
        for &z in map {
            for &y in map {
                for &x in map {
                    out.push(chan[x + m * (y + m * z)]);
                }
            }
        }
    }
    out
}

fn upsample_backward(grad: &[f32], channels: usize, m: usize, map: &[usize]) -> Vec<f32> {
    let o = map.len();
    let mut out = vec![0f32; channels * m * m * m];
    let mut i = 0;
    for c in 0..channels {
        let chan = &mut out[c * m * m * m..(c + 1) * m * m * m];
        for &z in map {
            for &y in map {
                for &x in map {
                    chan[x + m * (y + m * z)] += grad[i];
                    i += 1;
                }
            }
        }
    }
    debug_assert_eq!(i, channels * o * o * o);
    out
}

#[derive(Clone, Debug)]
pub struct Network {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f32>,
}

impl Network {
    /// He-initialized network.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut params = vec![0f32; layout.n_params];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |slot: &LayerSlot, taps: usize, params: &mut [f32]| {
            let fan_in = (slot.cin * taps) as f32;
            let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
            for w in &mut params[slot.weight..slot.weight + slot.cout * slot.cin * taps] {
                *w = dist.sample(&mut rng);
            }
        };
        for p in &layout.pathways {
            for l in &p.layers {
                fill(l, 27, &mut params);
            }
        }
        for l in &layout.head {
            fill(l, 1, &mut params);
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn from_parameters(config: ModelConfig, params: Vec<f32>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        if params.len() != layout.n_params {
            return Err(Error::invalid(format!(
                "configuration needs {} parameters, got {}",
                layout.n_params,
                params.len()
            )));
        }
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[f32] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn n_parameters(&self) -> usize {
        self.layout.n_params
    }

    /// True at indices holding weights (as opposed to biases).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.layout.n_params];
        let slots = self
            .layout
            .pathways
            .iter()
            .flat_map(|p| p.layers.iter().map(|l| (*l, 27)))
            .chain(self.layout.head.iter().map(|l| (*l, 1)));
        for (slot, taps) in slots {
            mask[slot.weight..slot.weight + slot.cout * slot.cin * taps]
                .iter_mut()
                .for_each(|m| *m = true);
        }
        mask
    }

    fn check_inputs(&self, inputs: &PatchInputs) -> Result<usize> {
        let l = self.config.n_conv_layers;
        let s = inputs.main.size();
        let shape_err = |kind: PathwayKind, reason: String| Error::Shape {
            pathway: kind.label(),
            reason,
        };
        let o = self.config.output_size_for(s).filter(|_| s % 2 == 1).ok_or_else(|| {
            shape_err(
                PathwayKind::Main,
                format!("input size {s} must be odd and exceed {}", 2 * l),
            )
        })?;
        if inputs.lowres.len() != self.config.lowres_factors.len() {
            return Err(shape_err(
                PathwayKind::Lowres(0),
                format!(
                    "expected {} low-resolution patches, got {}",
                    self.config.lowres_factors.len(),
                    inputs.lowres.len()
                ),
            ));
        }
        for (&f, patch) in self.config.lowres_factors.iter().zip(inputs.lowres) {
            let (_, m) = upsample_map(o, f);
            let need = m + 2 * l;
            if patch.size() < need || (patch.size() - need) % 2 != 0 {
                return Err(shape_err(
                    PathwayKind::Lowres(f),
                    format!("patch size {} cannot supply a centered {need}-cube", patch.size()),
                ));
            }
        }
        if self.config.prior_mode != PriorMode::None && inputs.prior.size() != s {
            return Err(shape_err(
                PathwayKind::Prior,
                format!("prior size {} differs from main size {s}", inputs.prior.size()),
            ));
        }
        Ok(o)
    }

    fn run_pathway(&self, pathway: &Pathway, input: Vec<f32>, size: usize) -> PathwayTrace {
        let mut maps = vec![input];
        let mut s = size;
        for slot in &pathway.layers {
            let w = &self.params[slot.weight..slot.weight + slot.conv_weights()];
            let b = &self.params[slot.bias..slot.bias + slot.cout];
            let mut out = ops::conv3_forward(maps.last().unwrap(), slot.cin, s, w, b, slot.cout);
            ops::leaky_relu_in_place(&mut out);
            maps.push(out);
            s -= 2;
        }
        PathwayTrace {
            maps,
            input_size: size,
        }
    }

    pub fn forward(&self, inputs: &PatchInputs) -> Result<ForwardOutput> {
        let o = self.check_inputs(inputs)?;
        let n = o * o * o;
        let l = self.config.n_conv_layers;
        let c_last = self.config.channels_per_layer[l - 1];

        let mut traces = Vec::with_capacity(self.layout.pathways.len());
        let mut fused = Vec::with_capacity(self.layout.pathways.len() * c_last * n);
        let mut lowres_iter = inputs.lowres.iter();
        for pathway in &self.layout.pathways {
            let trace = match pathway.kind {
                PathwayKind::Main => {
                    let mut input = inputs.main.data().to_vec();
                    if self.config.prior_mode == PriorMode::Channel {
                        input.extend_from_slice(inputs.prior.data());
                    }
                    self.run_pathway(pathway, input, inputs.main.size())
                }
                PathwayKind::Lowres(f) => {
                    let patch = lowres_iter.next().expect("count checked");
                    let (_, m) = upsample_map(o, f);
                    let crop = patch.center_crop(m + 2 * l)?;
                    self.run_pathway(pathway, crop.into_data(), m + 2 * l)
                }
                PathwayKind::Prior => {
                    self.run_pathway(pathway, inputs.prior.data().to_vec(), inputs.prior.size())
                }
            };
            let last = trace.maps.last().unwrap();
            match pathway.kind {
                PathwayKind::Lowres(f) => {
                    let (map, m) = upsample_map(o, f);
                    fused.extend(upsample(last, c_last, m, &map));
                }
                _ => fused.extend_from_slice(last),
            }
            traces.push(trace);
        }

        let mut head_maps = Vec::with_capacity(self.layout.head.len());
        let mut current: &[f32] = &fused;
        for (i, slot) in self.layout.head.iter().enumerate() {
            let w = &self.params[slot.weight..slot.weight + slot.cout * slot.cin];
            let b = &self.params[slot.bias..slot.bias + slot.cout];
            let mut out = ops::pointwise_forward(current, slot.cin, n, w, b, slot.cout);
            if i + 1 < self.layout.head.len() {
                ops::leaky_relu_in_place(&mut out);
            }
            head_maps.push(out);
            current = head_maps.last().unwrap();
        }
        let logits = head_maps.last().unwrap().clone();
        let probabilities = logits.iter().map(|&z| sigmoid(z)).collect();
        Ok(ForwardOutput {
            output_size: o,
            logits,
            probabilities,
            trace: ForwardTrace {
                pathways: traces,
                fused_input: fused,
                head_maps,
                output_size: o,
            },
        })
    }

    /// Accumulates parameter gradients into `grad` given dLoss/dProbability.
    pub fn backward(&self, output: &ForwardOutput, dprob: &[f32], grad: &mut [f32]) {
        let dlogit: Vec<f32> = dprob
            .iter()
            .zip(&output.probabilities)
            .map(|(g, p)| g * p * (1.0 - p))
            .collect();
        self.backward_from_logits(&output.trace, dlogit, grad);
    }

    pub fn backward_from_logits(&self, trace: &ForwardTrace, dlogit: Vec<f32>, grad: &mut [f32]) {
        assert_eq!(grad.len(), self.layout.n_params);
        let o = trace.output_size;
        let n = o * o * o;
        let mut dcur = dlogit;
        for (i, slot) in self.layout.head.iter().enumerate().rev() {
            if i + 1 < self.layout.head.len() {
                ops::leaky_relu_backward_in_place(&trace.head_maps[i], &mut dcur);
            }
            let input: &[f32] = if i == 0 {
                &trace.fused_input
            } else {
                &trace.head_maps[i - 1]
            };
            let w = &self.params[slot.weight..slot.weight + slot.cout * slot.cin];
            let (dw, db) = split_grad(grad, slot, 1);
            dcur = ops::pointwise_backward(input, slot.cin, n, w, slot.cout, &dcur, dw, db);
        }

        let l = self.config.n_conv_layers;
        let c_last = self.config.channels_per_layer[l - 1];
        for (k, (pathway, ptrace)) in self.layout.pathways.iter().zip(&trace.pathways).enumerate() {
            let dslice = &dcur[k * c_last * n..(k + 1) * c_last * n];
            let mut dmap = match pathway.kind {
                PathwayKind::Lowres(f) => {
                    let (map, m) = upsample_map(o, f);
                    upsample_backward(dslice, c_last, m, &map)
                }
                _ => dslice.to_vec(),
            };
            let mut s = ptrace.input_size - 2 * (l - 1);
            for (j, slot) in pathway.layers.iter().enumerate().rev() {
                ops::leaky_relu_backward_in_place(&ptrace.maps[j + 1], &mut dmap);
                let w = &self.params[slot.weight..slot.weight + slot.conv_weights()];
                let (dw, db) = split_grad(grad, slot, 27);
                let next = ops::conv3_backward(
                    &ptrace.maps[j],
                    slot.cin,
                    s,
                    w,
                    slot.cout,
                    &dmap,
                    dw,
                    db,
                    j > 0,
                );
                if let Some(d) = next {
                    dmap = d;
                }
                s += 2;
            }
        }
    }
}

fn split_grad<'g>(grad: &'g mut [f32], slot: &LayerSlot, taps: usize) -> (&'g mut [f32], &'g mut [f32]) {
    let nw = slot.cout * slot.cin * taps;
    let (head, tail) = grad.split_at_mut(slot.bias);
    (&mut head[slot.weight..slot.weight + nw], &mut tail[..slot.cout])
}

/// Probability map for a whole volume, with a note of any prior substitution.
#[derive(Clone, Debug)]
pub struct VolumePrediction {
    pub probability: Volume,
    /// The model wanted a prior, none was given, and zeros were used.
    pub prior_substituted: bool,
}

/// Tiles the volume, runs the network per tile, and stitches the outputs.
pub fn predict_volume(
    checkpoint: &ModelCheckpoint,
    image: &Volume,
    prior: Option<&Volume>,
) -> Result<VolumePrediction> {
    let net = checkpoint.network()?;
    predict_with_network(&net, image, prior)
}

pub fn predict_with_network(net: &Network, image: &Volume, prior: Option<&Volume>) -> Result<VolumePrediction> {
    let config = net.config();
    let wants_prior = config.prior_mode != PriorMode::None;
    let prior = if wants_prior { prior } else { None };
    let tiling = tile_volume(image, prior, &config.segment_spec(0.5))?;
    let o = tiling.output_size;
    let mut outputs = Vec::with_capacity(tiling.tiles.len());
    for tile in &tiling.tiles {
        let out = net.forward(&PatchInputs {
            main: &tile.main_patch,
            lowres: &tile.lowres_patches,
            prior: &tile.prior_patch,
        })?;
        outputs.push(Cube::from_vec(o, out.probabilities)?);
    }
    let mut probability = stitch_predictions(&outputs, &tiling.placement, tiling.dims)?;
    probability.spacing_mm = image.spacing_mm;
    probability.meta = VolumeMeta {
        kind: VolumeKind::Probability,
        ..image.meta.clone()
    };
    Ok(VolumePrediction {
        probability,
        prior_substituted: wants_prior && prior.is_none(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(mode: PriorMode) -> ModelConfig {
        ModelConfig {
            n_conv_layers: 2,
            channels_per_layer: vec![3, 2],
            prior_mode: mode,
            lowres_factors: vec![3],
            head_layers: 2,
            head_channels: 3,
            main_size: 9,
            infer_size: 11,
            seed: 5,
        }
    }

    fn cube(size: usize, seed: u64) -> Cube<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0f32, 1.0).unwrap();
        Cube::from_vec(size, (0..size * size * size).map(|_| d.sample(&mut rng)).collect()).unwrap()
    }

    #[test]
    fn output_sizes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.output_size_for(37), Some(19));
        assert_eq!(cfg.output_size_for(45), Some(27));
        assert_eq!(upsample_map(19, 3).1, 7);
        assert_eq!(upsample_map(19, 5).1, 5);
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = Network::new(tiny_config(PriorMode::Path)).unwrap();
        let main = cube(9, 1);
        let lowres = vec![cube(9, 2)];
        let prior = cube(7, 3);
        match net.forward(&PatchInputs { main: &main, lowres: &lowres, prior: &prior }) {
            Err(Error::Shape { pathway, .. }) => assert_eq!(pathway, "prior"),
            _ => panic!("expected prior shape error"),
        }
        let prior = cube(9, 3);
        match net.forward(&PatchInputs { main: &main, lowres: &[], prior: &prior }) {
            Err(Error::Shape { pathway, .. }) => assert!(pathway.starts_with("low")),
            _ => panic!("expected low-resolution shape error"),
        }
    }

    /// Finite-difference check of backprop through every pathway and the head.
    #[test]
    fn backward_matches_finite_differences() {
        for mode in [PriorMode::None, PriorMode::Channel, PriorMode::Path] {
            let net = Network::new(tiny_config(mode)).unwrap();
            let main = cube(9, 10);
            let lowres = vec![cube(9, 11)];
            let prior = cube(9, 12);
            let inputs = PatchInputs { main: &main, lowres: &lowres, prior: &prior };
            let out = net.forward(&inputs).unwrap();
            // Loss = Σ c_i · p_i with fixed random weights c.
            let coeffs: Vec<f32> = cube(5, 13).into_data().into_iter().take(out.probabilities.len()).collect();
            let loss = |n: &Network| -> f64 {
                let o = n.forward(&inputs).unwrap();
                o.probabilities.iter().zip(&coeffs).map(|(p, c)| (*p as f64) * (*c as f64)).sum()
            };
            let mut grad = vec![0f32; net.n_parameters()];
            net.backward(&out, &coeffs, &mut grad);

            // Leaky-ReLU kinks make individual entries noisy in f32; compare
            // the sampled gradient as a vector.
            let h = 1e-3f32;
            let (mut diff2, mut norm2) = (0f64, 0f64);
            for idx in (0..net.n_parameters()).step_by(7) {
                let mut plus = net.clone();
                plus.params[idx] += h;
                let mut minus = net.clone();
                minus.params[idx] -= h;
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h as f64);
                let an = grad[idx] as f64;
                diff2 += (fd - an).powi(2);
                norm2 += an * an;
            }
            let worst = (diff2 / norm2).sqrt();
            assert!(worst < 3e-2, "{mode:?}: relative error {worst}");
        }
    }

    #[test]
    fn no_prior_mode_ignores_prior() {
        let net = Network::new(tiny_config(PriorMode::None)).unwrap();
        let main = cube(9, 1);
        let lowres = vec![cube(9, 2)];
        let a = net.forward(&PatchInputs { main: &main, lowres: &lowres, prior: &cube(9, 3) }).unwrap();
        let b = net.forward(&PatchInputs { main: &main, lowres: &lowres, prior: &Cube::zeros(9) }).unwrap();
        assert_eq!(a.logits, b.logits);
    }
}
