//! Subvolume-level and lesion-level detection metrics, connected components,
//! and ROC / precision-recall curves.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patching::tile_origins;
use crate::volume::{ensure_same_dims, linear_index, Dims, MaskVolume, Volume, VolumeKind};

pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Voxel is foreground iff `prob >= threshold`.
pub fn binarize(prob: &Volume, threshold: f32) -> MaskVolume {
    let dims = prob.dims();
    let data = prob.data().iter().map(|&p| (p >= threshold) as u8).collect();
    MaskVolume::new(dims, data, prob.meta.clone()).expect("binary by construction")
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    /// Face neighbours.
    Six,
    /// Face, edge and corner neighbours.
    #[default]
    TwentySix,
}

impl Connectivity {
    fn offsets(self) -> Vec<[isize; 3]> {
        let mut out = Vec::new();
        for dz in -1..=1isize {
            for dy in -1..=1isize {
                for dx in -1..=1isize {
                    let l1 = dx.abs() + dy.abs() + dz.abs();
                    let keep = match self {
                        Connectivity::Six => l1 == 1,
                        Connectivity::TwentySix => l1 > 0,
                    };
                    if keep {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

/// Component labels: 0 is background, components are numbered 1..=n in
/// order of their first voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledComponents {
    pub dims: Dims,
    pub labels: Vec<u32>,
    pub n_components: usize,
    /// Voxel indices of component `k + 1`, ascending.
    pub voxels: Vec<Vec<usize>>,
    pub connectivity: Connectivity,
}

impl LabeledComponents {
    pub fn sizes(&self) -> Vec<usize> {
        self.voxels.iter().map(Vec::len).collect()
    }

    /// Mask of the listed components (1-based ids).
    pub fn mask_of(&self, ids: &[u32]) -> MaskVolume {
        let mut m = MaskVolume::zeros(self.dims);
        let mut data = m.data().to_vec();
        for &id in ids {
            for &v in &self.voxels[id as usize - 1] {
                data[v] = 1;
            }
        }
        m = MaskVolume::new(self.dims, data, m.meta.clone()).expect("binary");
        m
    }
}

pub fn connected_components(mask: &MaskVolume, connectivity: Connectivity) -> LabeledComponents {
    let dims = mask.dims();
    let [nx, ny, nz] = dims.map(|d| d as isize);
    let offsets = connectivity.offsets();
    let mut labels = vec![0u32; mask.data().len()];
    let mut voxels: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..labels.len() {
        if !mask.is_set(start) || labels[start] != 0 {
            continue;
        }
        let id = voxels.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut members = Vec::new();
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let [x, y, z] = crate::volume::coords(dims, i).map(|c| c as isize);
            for o in &offsets {
                let (a, b, c) = (x + o[0], y + o[1], z + o[2]);
                if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                    continue;
                }
                let j = linear_index(dims, a as usize, b as usize, c as usize);
                if mask.is_set(j) && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        members.sort_unstable();
        voxels.push(members);
    }
    LabeledComponents {
        dims,
        labels,
        n_components: voxels.len(),
        voxels,
        connectivity,
    }
}

/// `2|a∩b| / (|a| + |b|)`, and 1 when both are empty.
pub fn dsc(a: &MaskVolume, b: &MaskVolume) -> Result<f64> {
    ensure_same_dims(a.dims(), b.dims())?;
    let (mut inter, mut na, mut nb) = (0usize, 0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        inter += (x & y) as usize;
        na += x as usize;
        nb += y as usize;
    }
    Ok(if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    })
}

/// Which rates had an empty denominator and were reported as 1.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UndefinedRates {
    pub sensitivity: bool,
    pub specificity: bool,
    pub precision: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubvolumeMetrics {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub n_subvolumes: usize,
    pub undefined: UndefinedRates,
}

fn ratio(num: usize, den: usize) -> (f64, bool) {
    if den == 0 {
        (1.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

impl SubvolumeMetrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let (sensitivity, us) = ratio(tp, tp + fn_);
        let (specificity, usp) = ratio(tn, tn + fp);
        let (precision, up) = ratio(tp, tp + fp);
        Self {
            sensitivity,
            specificity,
            precision,
            tp,
            tn,
            fp,
            fn_,
            n_subvolumes: tp + tn + fp + fn_,
            undefined: UndefinedRates {
                sensitivity: us,
                specificity: usp,
                precision: up,
            },
        }
    }

    /// Pools counts from several volumes.
    pub fn pooled<'a>(items: impl IntoIterator<Item = &'a SubvolumeMetrics>) -> Self {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for m in items {
            tp += m.tp;
            tn += m.tn;
            fp += m.fp;
            fn_ += m.fn_;
        }
        Self::from_counts(tp, tn, fp, fn_)
    }
}

/// Per-tile positivity on the inference tiling grid.
fn tile_positivity(mask: &MaskVolume, tile: usize) -> Vec<bool> {
    let dims = mask.dims();
    let origins: Vec<Vec<usize>> = (0..3).map(|a| tile_origins(dims[a], tile)).collect();
    let mut out = Vec::new();
    for &z0 in &origins[2] {
        for &y0 in &origins[1] {
            for &x0 in &origins[0] {
                let mut any = false;
                'scan: for z in z0..z0 + tile {
                    for y in y0..y0 + tile {
                        let row = linear_index(dims, x0, y, z);
                        if mask.data()[row..row + tile].iter().any(|&v| v != 0) {
                            any = true;
                            break 'scan;
                        }
                    }
                }
                out.push(any);
            }
        }
    }
    out
}

/// Sensitivity, specificity and precision over subvolumes; a subvolume is
/// positive iff any voxel in it is set.
pub fn subvolume_metrics(pred: &MaskVolume, reference: &MaskVolume, tile_size: usize) -> Result<SubvolumeMetrics> {
    ensure_same_dims(pred.dims(), reference.dims())?;
    if tile_size == 0 || pred.dims().iter().any(|&d| d < tile_size) {
        return Err(Error::invalid(format!(
            "tile size {tile_size} does not fit grid {:?}",
            pred.dims()
        )));
    }
    let p = tile_positivity(pred, tile_size);
    let r = tile_positivity(reference, tile_size);
    let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
    for (&pp, &rr) in p.iter().zip(&r) {
        match (pp, rr) {
            (true, true) => tp += 1,
            (false, false) => tn += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(SubvolumeMetrics::from_counts(tp, tn, fp, fn_))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionMatchReport {
    /// Reference component ids that at least one predicted voxel overlaps.
    pub tp_lesions: Vec<u32>,
    pub fn_lesions: Vec<u32>,
    /// Predicted component ids overlapping no reference lesion.
    pub fp_components: Vec<u32>,
    /// Predicted component ids overlapping at least one reference lesion.
    pub matched_components: Vec<u32>,
    /// DSC of each TP lesion against the union of predicted components touching it.
    pub tp_dsc: Vec<f64>,
    pub sensitivity: f64,
    pub precision: f64,
    pub fp_count: usize,
    /// Mean DSC over TP lesions; absent when there are none.
    pub mdsc: Option<f64>,
    pub undefined: UndefinedRates,
}

impl LesionMatchReport {
    pub fn n_reference(&self) -> usize {
        self.tp_lesions.len() + self.fn_lesions.len()
    }

    pub fn n_predicted(&self) -> usize {
        self.matched_components.len() + self.fp_components.len()
    }
}

/// Matches predicted to reference lesions by overlap of at least one voxel.
pub fn lesion_match(pred: &MaskVolume, reference: &MaskVolume) -> Result<LesionMatchReport> {
    lesion_match_with(pred, reference, Connectivity::default())
}

pub fn lesion_match_with(
    pred: &MaskVolume,
    reference: &MaskVolume,
    connectivity: Connectivity,
) -> Result<LesionMatchReport> {
    ensure_same_dims(pred.dims(), reference.dims())?;
    let pc = connected_components(pred, connectivity);
    let rc = connected_components(reference, connectivity);
    // Overlapping predicted ids per reference lesion.
    let mut touching: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); rc.n_components];
    let mut pred_hit = vec![false; pc.n_components];
    for (i, (&p, &r)) in pc.labels.iter().zip(&rc.labels).enumerate() {
        if p != 0 && r != 0 {
            touching[r as usize - 1].insert(p);
            pred_hit[p as usize - 1] = true;
            debug_assert!(pred.is_set(i) && reference.is_set(i));
        }
    }
    let mut tp_lesions = Vec::new();
    let mut fn_lesions = Vec::new();
    let mut tp_dsc = Vec::new();
    for (k, preds) in touching.iter().enumerate() {
        let id = k as u32 + 1;
        if preds.is_empty() {
            fn_lesions.push(id);
            continue;
        }
        tp_lesions.push(id);
        let lesion = &rc.voxels[k];
        let inter = lesion
            .iter()
            .filter(|&&v| preds.contains(&pc.labels[v]))
            .count();
        let pred_size: usize = preds.iter().map(|&p| pc.voxels[p as usize - 1].len()).sum();
        tp_dsc.push(2.0 * inter as f64 / (lesion.len() + pred_size) as f64);
    }
    let matched_components: Vec<u32> = (1..=pc.n_components as u32)
        .filter(|&p| pred_hit[p as usize - 1])
        .collect();
    let fp_components: Vec<u32> = (1..=pc.n_components as u32)
        .filter(|&p| !pred_hit[p as usize - 1])
        .collect();
    let (sensitivity, us) = ratio(tp_lesions.len(), rc.n_components);
    let (precision, up) = ratio(matched_components.len(), pc.n_components);
    let mdsc = (!tp_dsc.is_empty()).then(|| tp_dsc.iter().sum::<f64>() / tp_dsc.len() as f64);
    Ok(LesionMatchReport {
        fp_count: fp_components.len(),
        tp_lesions,
        fn_lesions,
        fp_components,
        matched_components,
        tp_dsc,
        sensitivity,
        precision,
        mdsc,
        undefined: UndefinedRates {
            sensitivity: us,
            specificity: false,
            precision: up,
        },
    })
}

/// Lesion-level counts pooled over many volumes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LesionSummary {
    pub n_volumes: usize,
    pub tp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fp: usize,
    pub matched_components: usize,
    pub sensitivity: f64,
    pub precision: f64,
    pub fp_per_volume: f64,
    pub mdsc: Option<f64>,
    pub undefined: UndefinedRates,
}

impl LesionSummary {
    pub fn pooled<'a>(reports: impl IntoIterator<Item = &'a LesionMatchReport>) -> Self {
        let mut s = LesionSummary::default();
        let mut dscs = Vec::new();
        for r in reports {
            s.n_volumes += 1;
            s.tp += r.tp_lesions.len();
            s.fn_ += r.fn_lesions.len();
            s.fp += r.fp_count;
            s.matched_components += r.matched_components.len();
            dscs.extend_from_slice(&r.tp_dsc);
        }
        let (sens, us) = ratio(s.tp, s.tp + s.fn_);
        let (prec, up) = ratio(s.matched_components, s.matched_components + s.fp);
        s.sensitivity = sens;
        s.precision = prec;
        s.undefined = UndefinedRates {
            sensitivity: us,
            specificity: false,
            precision: up,
        };
        s.fp_per_volume = if s.n_volumes > 0 {
            s.fp as f64 / s.n_volumes as f64
        } else {
            0.0
        };
        s.mdsc = (!dscs.is_empty()).then(|| dscs.iter().sum::<f64>() / dscs.len() as f64);
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoints {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl CurvePoints {
    pub fn new(points: Vec<(f64, f64)>) -> Self {
        let auc = trapezoid_auc(&points);
        Self { points, auc }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y\n");
        for (x, y) in &self.points {
            s.push_str(&format!("{x},{y}\n"));
        }
        s
    }
}

/// Trapezoidal area under points ordered by x.
pub fn trapezoid_auc(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Subvolume-level ROC: one point (1 − specificity, sensitivity) per threshold.
pub fn roc_points(
    prob: &Volume,
    reference: &MaskVolume,
    tile_size: usize,
    thresholds: &[f32],
) -> Result<CurvePoints> {
    roc_points_pooled(&[(prob, reference)], tile_size, thresholds)
}

/// ROC with subvolume counts pooled over several volumes.
pub fn roc_points_pooled(
    pairs: &[(&Volume, &MaskVolume)],
    tile_size: usize,
    thresholds: &[f32],
) -> Result<CurvePoints> {
    check_thresholds(thresholds)?;
    if pairs.is_empty() {
        return Err(Error::invalid("ROC needs at least one volume"));
    }
    if pairs.iter().any(|(p, _)| p.meta.kind != VolumeKind::Probability) {
        return Err(Error::invalid("ROC needs probability volumes"));
    }
    let mut points = Vec::with_capacity(thresholds.len());
    for &t in thresholds {
        let per_volume = pairs
            .iter()
            .map(|(p, r)| subvolume_metrics(&binarize(p, t), r, tile_size))
            .collect::<Result<Vec<_>>>()?;
        let m = SubvolumeMetrics::pooled(&per_volume);
        points.push((1.0 - m.specificity, m.sensitivity));
    }
    Ok(CurvePoints::new(points))
}

pub(crate) fn check_thresholds(thresholds: &[f32]) -> Result<()> {
    if thresholds.windows(2).any(|w| w[0] < w[1]) {
        return Err(Error::invalid("thresholds must be sorted in descending order"));
    }
    if thresholds.first() != Some(&1.0) || thresholds.last() != Some(&0.0) {
        return Err(Error::invalid("thresholds must run from 1 down to 0"));
    }
    Ok(())
}

/// `n + 1` evenly spaced thresholds from 1 down to 0.
pub fn descending_thresholds(n: usize) -> Vec<f32> {
    let n = n.max(1);
    (0..=n).map(|i| 1.0 - i as f32 / n as f32).collect()
}

/// Precision-recall curve across models: `(sensitivity, precision)` pairs
/// sorted by recall, area by trapezoid.
pub fn pr_points(points: &[(f64, f64)]) -> Result<CurvePoints> {
    if points.len() < 2 {
        return Err(Error::invalid("a precision-recall curve needs at least 2 points"));
    }
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    Ok(CurvePoints::new(pts))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VolumeMeta;

    fn prob(dims: Dims, data: Vec<f32>) -> Volume {
        Volume::new(dims, 1.0, data, VolumeMeta::anonymous(VolumeKind::Probability)).unwrap()
    }

    #[test]
    fn binarize_boundary() {
        let v = prob([2, 2, 2], vec![0.5; 8]);
        assert_eq!(binarize(&v, 0.5).count(), 8);
        assert_eq!(binarize(&prob([2, 2, 2], vec![0.0; 8]), 0.5).count(), 0);
    }

    #[test]
    fn diagonal_voxels() {
        let m = MaskVolume::from_fn([3, 3, 3], |x, y, z| (x, y, z) == (0, 0, 0) || (x, y, z) == (1, 1, 1));
        assert_eq!(connected_components(&m, Connectivity::TwentySix).n_components, 1);
        assert_eq!(connected_components(&m, Connectivity::Six).n_components, 2);
        assert_eq!(connected_components(&MaskVolume::zeros([3, 3, 3]), Connectivity::Six).n_components, 0);
    }

    #[test]
    fn degenerate_subvolume_precision() {
        let r = MaskVolume::from_fn([8, 8, 8], |x, y, z| x < 2 && y < 2 && z < 2);
        let m = subvolume_metrics(&MaskVolume::zeros([8, 8, 8]), &r, 4).unwrap();
        assert_eq!((m.sensitivity, m.specificity, m.precision), (0.0, 1.0, 1.0));
        assert!(m.undefined.precision);
        assert!(subvolume_metrics(&MaskVolume::zeros([8, 8, 4]), &r, 4).is_err());
    }

    #[test]
    fn lesion_match_examples() {
        let dims = [16, 8, 8];
        let two = MaskVolume::from_fn(dims, |x, y, z| (x < 2 || (x > 6 && x < 9)) && y < 2 && z < 2);
        let one_plus_blob = MaskVolume::from_fn(dims, |x, y, z| (x < 2 && y < 2 && z < 2) || (x > 12 && y > 5 && z > 5));
        let r = lesion_match(&one_plus_blob, &two).unwrap();
        assert_eq!((r.sensitivity, r.precision, r.fp_count), (0.5, 0.5, 1));

        // One predicted bar spanning both lesions.
        let bar = MaskVolume::from_fn(dims, |x, y, z| x < 9 && y < 2 && z < 2);
        let r = lesion_match(&bar, &two).unwrap();
        assert_eq!(r.tp_lesions, vec![1, 2]);
        assert_eq!(r.fp_count, 0);
        assert_eq!(r.precision, 1.0);
        assert_eq!(r.matched_components, vec![1]);
    }

    #[test]
    fn pr_examples() {
        assert_eq!(pr_points(&[(0.0, 1.0), (1.0, 1.0)]).unwrap().auc, 1.0);
        assert_eq!(pr_points(&[(1.0, 0.0), (0.0, 1.0)]).unwrap().auc, 0.5);
        assert!(pr_points(&[(0.5, 0.5)]).is_err());
    }

    #[test]
    fn roc_threshold_validation() {
        let v = prob([4, 4, 4], vec![0.2; 64]);
        let r = MaskVolume::zeros([4, 4, 4]);
        assert!(roc_points(&v, &r, 2, &[0.0, 1.0]).is_err());
        assert!(roc_points(&v, &r, 2, &[1.0, 0.5]).is_err());
        assert!(roc_points(&v, &r, 2, &[1.0, 0.5, 0.0]).is_ok());
    }
}
