//! Corpus-level prediction, evaluation and ensembling.

use serde::{Deserialize, Serialize};

use crate::ensemble::{ensemble_union, AnnotatedMask, Source, Tag};
use crate::error::{Error, Result};
use crate::metrics::{
    binarize, lesion_match, subvolume_metrics, LesionMatchReport, LesionSummary, SubvolumeMetrics,
};
use crate::model::{predict_with_network, Network};
use crate::phantom::{LongitudinalStudy, TimepointSelection};
use crate::volume::{Volume, VolumeKind, VolumeMeta};

/// Anything that maps a study timepoint to a probability volume.
pub trait Predictor {
    fn predict(&self, study: &LongitudinalStudy, t: usize) -> Result<Volume>;
}

impl Predictor for Network {
    fn predict(&self, study: &LongitudinalStudy, t: usize) -> Result<Volume> {
        let image = &study.timepoints[t].image;
        Ok(predict_with_network(self, image, study.prior_image(t))?.probability)
    }
}

/// Returns the reference mask as a probability volume.
#[derive(Clone, Copy, Debug, Default)]
pub struct OraclePredictor;

impl Predictor for OraclePredictor {
    fn predict(&self, study: &LongitudinalStudy, t: usize) -> Result<Volume> {
        let tp = &study.timepoints[t];
        let mut v = tp.reference_mask.to_probability();
        v.spacing_mm = tp.image.spacing_mm;
        v.meta = probability_meta(&tp.image);
        Ok(v)
    }
}

/// Predicts zero everywhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroPredictor;

impl Predictor for ZeroPredictor {
    fn predict(&self, study: &LongitudinalStudy, t: usize) -> Result<Volume> {
        let image = &study.timepoints[t].image;
        let mut v = Volume::filled(image.dims(), 0.0, probability_meta(image))?;
        v.spacing_mm = image.spacing_mm;
        Ok(v)
    }
}

fn probability_meta(image: &Volume) -> VolumeMeta {
    VolumeMeta {
        kind: VolumeKind::Probability,
        ..image.meta.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub threshold: f32,
    pub tile_size: usize,
    pub timepoints: TimepointSelection,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: crate::metrics::DEFAULT_THRESHOLD,
            tile_size: 16,
            timepoints: TimepointSelection::All,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.tile_size == 0 {
            return Err(Error::invalid("tile size must be positive"));
        }
        Ok(())
    }
}

/// A probability map for one study timepoint.
#[derive(Clone, Debug)]
pub struct TimepointPrediction {
    pub study: usize,
    pub timepoint: usize,
    pub probability: Volume,
}

pub fn predict_corpus(
    predictor: &dyn Predictor,
    corpus: &[LongitudinalStudy],
    selection: TimepointSelection,
) -> Result<Vec<TimepointPrediction>> {
    let mut out = Vec::new();
    for (s, study) in corpus.iter().enumerate() {
        for t in selection.timepoints(study) {
            let probability = predictor.predict(study, t)?;
            if probability.dims() != study.dims() {
                return Err(Error::DimMismatch {
                    left: probability.dims(),
                    right: study.dims(),
                });
            }
            out.push(TimepointPrediction {
                study: s,
                timepoint: t,
                probability,
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimepointEval {
    pub patient_id: String,
    pub timepoint_index: usize,
    pub lesion: LesionMatchReport,
    pub subvolume: SubvolumeMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientEval {
    pub patient_id: String,
    pub lesion: LesionSummary,
    pub subvolume: SubvolumeMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub per_timepoint: Vec<TimepointEval>,
    pub per_patient: Vec<PatientEval>,
    pub lesion: LesionSummary,
    pub subvolume: SubvolumeMetrics,
}

pub const TABLE1_HEADER: &str = "model,sensitivity,specificity,precision,tp,tn,fp,fn";
pub const TABLE2_HEADER: &str = "model,sensitivity,precision,fp,mdsc";

impl EvalReport {
    /// Subvolume-level row.
    pub fn table1_row(&self, model: &str) -> String {
        let s = &self.subvolume;
        format!(
            "{model},{:.4},{:.4},{:.4},{},{},{},{}",
            s.sensitivity, s.specificity, s.precision, s.tp, s.tn, s.fp, s.fn_
        )
    }

    /// Lesion-level row.
    pub fn table2_row(&self, model: &str) -> String {
        let l = &self.lesion;
        let mdsc = l.mdsc.map(|m| format!("{m:.4}")).unwrap_or_default();
        format!("{model},{:.4},{:.4},{},{mdsc}", l.sensitivity, l.precision, l.fp)
    }
}

/// Scores precomputed probability maps against the reference masks.
pub fn evaluate_predictions(
    predictions: &[TimepointPrediction],
    corpus: &[LongitudinalStudy],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let mut per_timepoint = Vec::with_capacity(predictions.len());
    for p in predictions {
        let study = corpus
            .get(p.study)
            .ok_or_else(|| Error::invalid(format!("prediction refers to missing study {}", p.study)))?;
        let reference = &study.timepoints[p.timepoint].reference_mask;
        let mask = binarize(&p.probability, config.threshold);
        per_timepoint.push(TimepointEval {
            patient_id: study.patient_id.clone(),
            timepoint_index: p.timepoint,
            lesion: lesion_match(&mask, reference)?,
            subvolume: subvolume_metrics(&mask, reference, config.tile_size)?,
        });
    }
    let mut patients: Vec<&str> = Vec::new();
    for e in &per_timepoint {
        if !patients.contains(&e.patient_id.as_str()) {
            patients.push(&e.patient_id);
        }
    }
    let per_patient = patients
        .iter()
        .map(|&pid| {
            let rows: Vec<&TimepointEval> = per_timepoint.iter().filter(|e| e.patient_id == pid).collect();
            PatientEval {
                patient_id: pid.to_string(),
                lesion: LesionSummary::pooled(rows.iter().map(|e| &e.lesion)),
                subvolume: SubvolumeMetrics::pooled(rows.iter().map(|e| &e.subvolume)),
            }
        })
        .collect();
    Ok(EvalReport {
        config: config.clone(),
        per_patient,
        lesion: LesionSummary::pooled(per_timepoint.iter().map(|e| &e.lesion)),
        subvolume: SubvolumeMetrics::pooled(per_timepoint.iter().map(|e| &e.subvolume)),
        per_timepoint,
    })
}

pub fn evaluate_corpus(
    predictor: &dyn Predictor,
    corpus: &[LongitudinalStudy],
    config: &EvalConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let predictions = predict_corpus(predictor, corpus, config.timepoints)?;
    evaluate_predictions(&predictions, corpus, config)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewLesion {
    pub component_id: u32,
    pub n_voxels: usize,
    pub centroid_vox: [f64; 3],
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewEntry {
    pub patient_id: String,
    pub timepoint_index: usize,
    pub confirmed: Vec<ReviewLesion>,
    pub candidates: Vec<ReviewLesion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReviewQueue {
    pub threshold: f32,
    pub entries: Vec<ReviewEntry>,
    pub total_confirmed: usize,
    pub total_candidates: usize,
    pub candidates_per_volume: f64,
}

#[derive(Clone, Debug)]
pub struct EnsembleOutput {
    pub study: usize,
    pub timepoint: usize,
    pub annotated: AnnotatedMask,
}

/// Binarizes paired predictions and forms the tagged union per timepoint.
pub fn ensemble_predictions(
    sens: &[TimepointPrediction],
    spec: &[TimepointPrediction],
    threshold: f32,
) -> Result<Vec<EnsembleOutput>> {
    if sens.len() != spec.len() {
        return Err(Error::invalid(format!(
            "sensitivity model produced {} maps, specificity model {}",
            sens.len(),
            spec.len()
        )));
    }
    sens.iter()
        .zip(spec)
        .map(|(a, b)| {
            if (a.study, a.timepoint) != (b.study, b.timepoint) {
                return Err(Error::invalid("prediction lists are not aligned"));
            }
            let annotated = ensemble_union(&binarize(&a.probability, threshold), &binarize(&b.probability, threshold))?;
            Ok(EnsembleOutput {
                study: a.study,
                timepoint: a.timepoint,
                annotated,
            })
        })
        .collect()
}

pub fn ensemble_corpus(
    sens: &dyn Predictor,
    spec: &dyn Predictor,
    corpus: &[LongitudinalStudy],
    selection: TimepointSelection,
    threshold: f32,
) -> Result<Vec<EnsembleOutput>> {
    let a = predict_corpus(sens, corpus, selection)?;
    let b = predict_corpus(spec, corpus, selection)?;
    ensemble_predictions(&a, &b, threshold)
}

fn review_lesion(c: &crate::ensemble::TaggedComponent, dims: crate::volume::Dims) -> ReviewLesion {
    let mut sum = [0.0f64; 3];
    for &v in &c.voxels {
        let p = crate::volume::coords(dims, v);
        for a in 0..3 {
            sum[a] += p[a] as f64;
        }
    }
    let n = c.voxels.len().max(1) as f64;
    ReviewLesion {
        component_id: c.id,
        n_voxels: c.voxels.len(),
        centroid_vox: sum.map(|s| s / n),
        source: c.source,
    }
}

pub fn review_queue(outputs: &[EnsembleOutput], corpus: &[LongitudinalStudy], threshold: f32) -> ReviewQueue {
    let entries: Vec<ReviewEntry> = outputs
        .iter()
        .map(|o| {
            let dims = o.annotated.mask.dims();
            let pick = |tag| o.annotated.with_tag(tag).map(|c| review_lesion(c, dims)).collect();
            ReviewEntry {
                patient_id: corpus[o.study].patient_id.clone(),
                timepoint_index: o.timepoint,
                confirmed: pick(Tag::Confirmed),
                candidates: pick(Tag::Candidate),
            }
        })
        .collect();
    let total_confirmed = entries.iter().map(|e| e.confirmed.len()).sum();
    let total_candidates: usize = entries.iter().map(|e| e.candidates.len()).sum();
    ReviewQueue {
        threshold,
        candidates_per_volume: if entries.is_empty() {
            0.0
        } else {
            total_candidates as f64 / entries.len() as f64
        },
        entries,
        total_confirmed,
        total_candidates,
    }
}
