//! Seeded synthetic longitudinal studies.
//!
//! Lesions are spheres that appear at some timepoint and only grow afterwards.
//! Vessels are static tubes along random polylines. Every timepoint except the
//! last is observed through a small random rigid transform, which is how
//! imperfect registration between scans shows up in the prior images.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{linear_index, n_voxels, Dims, MaskVolume, Volume, VolumeKind, VolumeMeta};

pub type Point3 = [f64; 3];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegistrationJitter {
    pub max_translation_vox: f64,
    pub max_rotation_deg: f64,
}

impl Default for RegistrationJitter {
    fn default() -> Self {
        Self {
            max_translation_vox: 2.0,
            max_rotation_deg: 2.0,
        }
    }
}

/// Parameters of a synthetic study. Unset JSON fields take the defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub grid_dims: Dims,
    pub spacing_mm: f64,
    pub n_lesions: usize,
    pub lesion_radius_range_vox: [f64; 2],
    pub n_vessels: usize,
    pub vessel_radius_range_vox: [f64; 2],
    pub lesion_intensity: f64,
    pub vessel_intensity: f64,
    pub background_intensity: f64,
    pub noise_sigma: f64,
    pub bias_amplitude: f64,
    pub growth_factor_range: [f64; 2],
    pub registration_jitter: RegistrationJitter,
    pub n_timepoints: usize,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            grid_dims: [64, 64, 64],
            spacing_mm: 1.0,
            n_lesions: 4,
            lesion_radius_range_vox: [1.5, 6.0],
            n_vessels: 4,
            vessel_radius_range_vox: [1.0, 2.0],
            lesion_intensity: 1.0,
            vessel_intensity: 1.0,
            background_intensity: 0.0,
            noise_sigma: 0.2,
            bias_amplitude: 0.1,
            growth_factor_range: [1.2, 1.6],
            registration_jitter: RegistrationJitter::default(),
            n_timepoints: 2,
            seed: 0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &'static str, reason: &str| {
            Err(Error::Generation {
                field,
                reason: reason.to_string(),
            })
        };
        if self.grid_dims.iter().any(|&d| d < 16) {
            return bad("grid_dims", "every axis must have at least 16 voxels");
        }
        if !(self.spacing_mm > 0.0) {
            return bad("spacing_mm", "must be positive");
        }
        let [lo, hi] = self.lesion_radius_range_vox;
        if !(lo >= 1.0 && hi >= lo) {
            return bad("lesion_radius_range_vox", "need 1 <= min <= max");
        }
        let [lo, hi] = self.vessel_radius_range_vox;
        if !(lo > 0.0 && hi >= lo) {
            return bad("vessel_radius_range_vox", "need 0 < min <= max");
        }
        let [lo, hi] = self.growth_factor_range;
        if !(lo >= 1.0 && hi >= lo) {
            return bad("growth_factor_range", "need 1 <= min <= max");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma", "must be non-negative");
        }
        if !(self.bias_amplitude >= 0.0) {
            return bad("bias_amplitude", "must be non-negative");
        }
        let j = self.registration_jitter;
        if !(j.max_translation_vox >= 0.0 && j.max_rotation_deg >= 0.0) {
            return bad("registration_jitter", "bounds must be non-negative");
        }
        if self.n_timepoints < 1 {
            return bad("n_timepoints", "need at least one timepoint");
        }
        let finite = [
            self.lesion_intensity,
            self.vessel_intensity,
            self.background_intensity,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("lesion_intensity", "intensities must be finite");
        }
        Ok(())
    }
}

/// Rigid map from a timepoint's voxel frame to the reference frame:
/// `w = R (v - c) + c + t` with `c` the grid center.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
    pub center: Point3,
}

impl RigidTransform {
    pub fn identity(center: Point3) -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
            center,
        }
    }

    /// Rotation from XYZ Euler angles in radians.
    pub fn from_euler(angles: [f64; 3], translation: Point3, center: Point3) -> Self {
        let [a, b, c] = angles;
        let (sa, ca) = a.sin_cos();
        let (sb, cb) = b.sin_cos();
        let (sc, cc) = c.sin_cos();
        let rx = [[1.0, 0.0, 0.0], [0.0, ca, -sa], [0.0, sa, ca]];
        let ry = [[cb, 0.0, sb], [0.0, 1.0, 0.0], [-sb, 0.0, cb]];
        let rz = [[cc, -sc, 0.0], [sc, cc, 0.0], [0.0, 0.0, 1.0]];
        Self {
            rotation: matmul(&rz, &matmul(&ry, &rx)),
            translation,
            center,
        }
    }

    pub fn apply(&self, v: Point3) -> Point3 {
        let d = sub(v, self.center);
        let r = &self.rotation;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r[i][0] * d[0] + r[i][1] * d[1] + r[i][2] * d[2]
                + self.center[i]
                + self.translation[i];
        }
        out
    }

    pub fn apply_inverse(&self, w: Point3) -> Point3 {
        let d = sub(sub(w, self.center), self.translation);
        let r = &self.rotation;
        let mut out = [0.0; 3];
        for i in 0..3 {
            out[i] = r[0][i] * d[0] + r[1][i] * d[1] + r[2][i] * d[2] + self.center[i];
        }
        out
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

#[inline]
fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

/// Squared distance from `p` to the segment `a..b`.
pub fn point_segment_dist2(p: Point3, a: Point3, b: Point3) -> f64 {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 == 0.0 {
        return dist2(p, a);
    }
    let t = (dot(sub(p, a), ab) / len2).clamp(0.0, 1.0);
    let q = [a[0] + t * ab[0], a[1] + t * ab[1], a[2] + t * ab[2]];
    dist2(p, q)
}

fn polyline_dist2(p: Point3, waypoints: &[Point3]) -> f64 {
    waypoints
        .windows(2)
        .map(|w| point_segment_dist2(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Integer voxel range `[lo, hi]` covering `[a - r, b + r]`, clipped to the axis.
fn axis_range(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    let lo = lo.floor().max(0.0);
    let hi = hi.ceil().min(n as f64 - 1.0);
    (lo <= hi).then(|| (lo as usize, hi as usize))
}

fn rasterize_where(
    dims: Dims,
    bbox_lo: Point3,
    bbox_hi: Point3,
    mask: &mut MaskVolume,
    inside: impl Fn(Point3) -> bool,
) {
    let ranges: Vec<_> = (0..3)
        .map(|a| axis_range(bbox_lo[a], bbox_hi[a], dims[a]))
        .collect();
    let (Some(rx), Some(ry), Some(rz)) = (ranges[0], ranges[1], ranges[2]) else {
        return;
    };
    for z in rz.0..=rz.1 {
        for y in ry.0..=ry.1 {
            for x in rx.0..=rx.1 {
                if inside([x as f64, y as f64, z as f64]) {
                    mask.set(x, y, z, true);
                }
            }
        }
    }
}

/// Partial-volume coverage: a linear ramp from 1 at `r - 0.5` to 0 at
/// `r + 0.5`, kept at or above one half exactly where the voxel center is
/// inside, so thresholding at one half reproduces the binary rasterization.
fn cover_where(
    dims: Dims,
    bbox_lo: Point3,
    bbox_hi: Point3,
    radius: f64,
    cover: &mut [f32],
    dist2: impl Fn(Point3) -> f64,
) {
    let lo = bbox_lo.map(|v| v - 0.5);
    let hi = bbox_hi.map(|v| v + 0.5);
    let ranges: Vec<_> = (0..3).map(|a| axis_range(lo[a], hi[a], dims[a])).collect();
    let (Some(rx), Some(ry), Some(rz)) = (ranges[0], ranges[1], ranges[2]) else {
        return;
    };
    let r2 = radius * radius;
    for z in rz.0..=rz.1 {
        for y in ry.0..=ry.1 {
            for x in rx.0..=rx.1 {
                let d2 = dist2([x as f64, y as f64, z as f64]);
                let ramp = radius - d2.sqrt() + 0.5;
                let c = if d2 <= r2 {
                    ramp.clamp(0.5, 1.0)
                } else {
                    ramp.clamp(0.0, 0.499)
                } as f32;
                let i = linear_index(dims, x, y, z);
                cover[i] = cover[i].max(c);
            }
        }
    }
}

fn cover_sphere(dims: Dims, cover: &mut [f32], center: Point3, radius: f64) {
    let lo = center.map(|c| c - radius);
    let hi = center.map(|c| c + radius);
    cover_where(dims, lo, hi, radius, cover, |p| dist2(p, center));
}

fn cover_tube(dims: Dims, cover: &mut [f32], waypoints: &[Point3], radius: f64) {
    for seg in waypoints.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let lo = [0, 1, 2].map(|i| a[i].min(b[i]) - radius);
        let hi = [0, 1, 2].map(|i| a[i].max(b[i]) + radius);
        cover_where(dims, lo, hi, radius, cover, |p| point_segment_dist2(p, a, b));
    }
}

/// Voxels whose centers lie within `radius_vox` of `center_vox`.
pub fn rasterize_sphere(center_vox: Point3, radius_vox: f64, dims: Dims) -> Result<MaskVolume> {
    if !(radius_vox > 0.0) {
        return Err(Error::invalid("sphere radius must be positive"));
    }
    for a in 0..3 {
        if !(center_vox[a] >= 0.0 && center_vox[a] <= dims[a] as f64 - 1.0) {
            return Err(Error::invalid(format!(
                "sphere center {center_vox:?} lies outside grid {dims:?}"
            )));
        }
    }
    let mut mask = MaskVolume::zeros(dims);
    draw_sphere(&mut mask, center_vox, radius_vox);
    Ok(mask)
}

fn draw_sphere(mask: &mut MaskVolume, center: Point3, radius: f64) {
    let dims = mask.dims();
    let r2 = radius * radius;
    let lo = [center[0] - radius, center[1] - radius, center[2] - radius];
    let hi = [center[0] + radius, center[1] + radius, center[2] + radius];
    rasterize_where(dims, lo, hi, mask, |p| dist2(p, center) <= r2);
}

/// Voxels whose centers lie within `radius_vox` of the polyline through `waypoints`.
pub fn rasterize_tube(waypoints: &[Point3], radius_vox: f64, dims: Dims) -> Result<MaskVolume> {
    if waypoints.len() < 2 {
        return Err(Error::invalid("a tube needs at least 2 waypoints"));
    }
    if !(radius_vox > 0.0) {
        return Err(Error::invalid("tube radius must be positive"));
    }
    let mut mask = MaskVolume::zeros(dims);
    draw_tube(&mut mask, waypoints, radius_vox);
    Ok(mask)
}

fn draw_tube(mask: &mut MaskVolume, waypoints: &[Point3], radius: f64) {
    let dims = mask.dims();
    let r2 = radius * radius;
    for seg in waypoints.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let lo = [0, 1, 2].map(|i| a[i].min(b[i]) - radius);
        let hi = [0, 1, 2].map(|i| a[i].max(b[i]) + radius);
        rasterize_where(dims, lo, hi, mask, |p| point_segment_dist2(p, a, b) <= r2);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionRecord {
    /// Stable across timepoints of one study.
    pub id: usize,
    /// Center in this timepoint's voxel frame.
    pub center_vox: Point3,
    pub radius_vox: f64,
    pub born_at_timepoint: usize,
}

impl LesionRecord {
    pub fn volume_mm3(&self, spacing_mm: f64) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * (self.radius_vox * spacing_mm).powi(3)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VesselRecord {
    /// Polyline in the reference frame.
    pub waypoints: Vec<Point3>,
    pub radius_vox: f64,
}

#[derive(Clone, Debug)]
pub struct Timepoint {
    pub image: Volume,
    pub reference_mask: MaskVolume,
    pub lesion_records: Vec<LesionRecord>,
    /// Maps this timepoint's voxel frame to the reference frame.
    pub transform: RigidTransform,
}

#[derive(Clone, Debug)]
pub struct LongitudinalStudy {
    pub patient_id: String,
    pub timepoints: Vec<Timepoint>,
    pub vessels: Vec<VesselRecord>,
}

impl LongitudinalStudy {
    pub fn has_prior(&self, t: usize) -> bool {
        t > 0 && t < self.timepoints.len()
    }

    /// The image of the preceding timepoint, if any.
    pub fn prior_image(&self, t: usize) -> Option<&Volume> {
        self.has_prior(t).then(|| &self.timepoints[t - 1].image)
    }

    pub fn dims(&self) -> Dims {
        self.timepoints[0].image.dims()
    }

    /// Vessel voxels as seen at timepoint `t`.
    pub fn vessel_mask(&self, t: usize) -> MaskVolume {
        let tp = &self.timepoints[t];
        let mut mask = MaskVolume::zeros(tp.image.dims());
        for v in &self.vessels {
            let local: Vec<Point3> = v
                .waypoints
                .iter()
                .map(|&w| tp.transform.apply_inverse(w))
                .collect();
            draw_tube(&mut mask, &local, v.radius_vox);
        }
        mask
    }
}

struct PlannedLesion {
    center: Point3,
    born_at: usize,
    radii: Vec<f64>,
}

const MAX_PLACEMENT_TRIES: usize = 2000;
const SEPARATION_VOX: f64 = 3.0;

/// Which timepoints of each study are used.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimepointSelection {
    #[default]
    All,
    WithPrior,
}

impl TimepointSelection {
    pub fn timepoints(self, study: &LongitudinalStudy) -> Vec<usize> {
        (0..study.timepoints.len())
            .filter(|&t| self == TimepointSelection::All || study.has_prior(t))
            .collect()
    }
}

/// Generates one study. Identical specs (seed included) give identical bytes.
pub fn generate_study(spec: &PhantomSpec) -> Result<LongitudinalStudy> {
    generate_study_with_id(spec, &format!("phantom-{}", spec.seed))
}

pub fn generate_study_with_id(spec: &PhantomSpec, patient_id: &str) -> Result<LongitudinalStudy> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dims = spec.grid_dims;
    let center = dims.map(|d| (d as f64 - 1.0) / 2.0);
    let n_t = spec.n_timepoints;

    let jitter = spec.registration_jitter;
    let max_rot = jitter.max_rotation_deg.to_radians();
    let transforms: Vec<RigidTransform> = (0..n_t)
        .map(|t| {
            if t + 1 == n_t {
                RigidTransform::identity(center)
            } else {
                let angles = [0; 3].map(|_| uniform(&mut rng, -max_rot, max_rot));
                let shift = [0; 3].map(|_| {
                    uniform(
                        &mut rng,
                        -jitter.max_translation_vox,
                        jitter.max_translation_vox,
                    )
                });
                RigidTransform::from_euler(angles, shift, center)
            }
        })
        .collect();

    // Reference-frame displacement a jittered voxel can undergo near the
    // grid boundary; keeps every lesion fully inside every timepoint.
    let half_diag = center.iter().map(|c| c * c).sum::<f64>().sqrt();
    let jitter_margin = jitter.max_translation_vox * 3f64.sqrt() + half_diag * 3.0 * max_rot.sin();

    let mut lesions: Vec<PlannedLesion> = Vec::with_capacity(spec.n_lesions);
    for _ in 0..spec.n_lesions {
        let born_at = rng.gen_range(0..n_t);
        let [rlo, rhi] = spec.lesion_radius_range_vox;
        let [glo, ghi] = spec.growth_factor_range;
        let mut radii = vec![0.0; n_t];
        radii[born_at] = uniform(&mut rng, rlo, rhi);
        for t in born_at + 1..n_t {
            radii[t] = radii[t - 1] * uniform(&mut rng, glo, ghi);
        }
        let r_final = radii[n_t - 1];
        let margin = r_final + jitter_margin + 1.0;

        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let mut c = [0.0; 3];
            let mut fits = true;
            for a in 0..3 {
                let hi = dims[a] as f64 - 1.0 - margin;
                if hi < margin {
                    fits = false;
                    break;
                }
                c[a] = uniform(&mut rng, margin, hi).round();
            }
            if !fits {
                break;
            }
            let clear_of_lesions = lesions.iter().all(|o| {
                let need = r_final + o.radii[n_t - 1] + SEPARATION_VOX;
                dist2(c, o.center) >= need * need
            });
            if clear_of_lesions {
                placed = Some(c);
                break;
            }
        }
        let Some(center) = placed else {
            return Err(Error::Generation {
                field: "n_lesions",
                reason: format!(
                    "could not place lesion {} of {} without overlapping other structures",
                    lesions.len() + 1,
                    spec.n_lesions
                ),
            });
        };
        lesions.push(PlannedLesion {
            center,
            born_at,
            radii,
        });
    }

    let mut vessels: Vec<VesselRecord> = Vec::with_capacity(spec.n_vessels);
    for _ in 0..spec.n_vessels {
        let mut placed = None;
        for _ in 0..MAX_PLACEMENT_TRIES {
            let v = plan_vessel(&mut rng, dims, spec.vessel_radius_range_vox, jitter_margin + 1.0);
            let clear = lesions.iter().all(|l| {
                let need = l.radii[n_t - 1] + v.radius_vox + SEPARATION_VOX;
                polyline_dist2(l.center, &v.waypoints) >= need * need
            });
            if clear {
                placed = Some(v);
                break;
            }
        }
        let Some(v) = placed else {
            return Err(Error::Generation {
                field: "n_vessels",
                reason: format!(
                    "could not route vessel {} of {} around the lesions",
                    vessels.len() + 1,
                    spec.n_vessels
                ),
            });
        };
        vessels.push(v);
    }

    let normal = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma validated"));
    let mut timepoints = Vec::with_capacity(n_t);
    for (t, transform) in transforms.into_iter().enumerate() {
        let n = n_voxels(dims);
        let mut lesion_mask = MaskVolume::zeros(dims);
        let mut lesion_cover = vec![0f32; n];
        let mut records = Vec::new();
        for (id, l) in lesions.iter().enumerate() {
            if t < l.born_at {
                continue;
            }
            let local = transform.apply_inverse(l.center);
            draw_sphere(&mut lesion_mask, local, l.radii[t]);
            cover_sphere(dims, &mut lesion_cover, local, l.radii[t]);
            records.push(LesionRecord {
                id,
                center_vox: local,
                radius_vox: l.radii[t],
                born_at_timepoint: l.born_at,
            });
        }
        let mut vessel_cover = vec![0f32; n];
        for v in &vessels {
            let local: Vec<Point3> = v.waypoints.iter().map(|&w| transform.apply_inverse(w)).collect();
            cover_tube(dims, &mut vessel_cover, &local, v.radius_vox);
        }

        let bias = BiasField::draw(&mut rng, spec.bias_amplitude);
        let mut data = vec![0f32; lesion_mask.data().len()];
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let i = linear_index(dims, x, y, z);
                    let bg = spec.background_intensity;
                    let (cl, cv) = (lesion_cover[i] as f64, vessel_cover[i] as f64);
                    let mut v = bg
                        + cl * (spec.lesion_intensity - bg)
                        + (1.0 - cl) * cv * (spec.vessel_intensity - bg);
                    if spec.bias_amplitude > 0.0 {
                        let u = [0, 1, 2].map(|a| {
                            let p = [x, y, z][a] as f64;
                            (p - center[a]) / center[a].max(1.0)
                        });
                        v *= 1.0 + bias.eval(u);
                    }
                    if let Some(n) = &normal {
                        v += n.sample(&mut rng);
                    }
                    data[i] = v as f32;
                }
            }
        }
        let image = Volume::new(
            dims,
            spec.spacing_mm,
            data,
            VolumeMeta::new(patient_id, t, VolumeKind::Image),
        )?;
        timepoints.push(Timepoint {
            image,
            reference_mask: lesion_mask.with_meta(VolumeMeta::new(patient_id, t, VolumeKind::Mask)),
            lesion_records: records,
            transform,
        });
    }

    Ok(LongitudinalStudy {
        patient_id: patient_id.to_string(),
        timepoints,
        vessels,
    })
}

/// A corpus of `n` studies with seeds derived from `spec.seed`.
pub fn generate_corpus(spec: &PhantomSpec, n: usize) -> Result<Vec<LongitudinalStudy>> {
    (0..n)
        .map(|i| {
            let s = PhantomSpec {
                seed: spec.seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
                ..spec.clone()
            };
            generate_study_with_id(&s, &format!("patient-{i:03}"))
        })
        .collect()
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

fn plan_vessel(rng: &mut impl Rng, dims: Dims, radius_range: [f64; 2], margin: f64) -> VesselRecord {
    let radius = uniform(rng, radius_range[0], radius_range[1]);
    let lo = (margin + radius).min(dims.iter().min().copied().unwrap_or(0) as f64 / 2.0 - 1.0);
    let hi = dims.map(|d| (d as f64 - 1.0 - lo).max(lo));
    let mut p = [0, 1, 2].map(|a| uniform(rng, lo, hi[a]));
    let mut dir = random_unit(rng);
    let n_segments = rng.gen_range(3..=6);
    let mut waypoints = vec![p];
    for _ in 0..n_segments {
        let bend = random_unit(rng);
        dir = normalize([0, 1, 2].map(|a| dir[a] + 0.6 * bend[a]));
        let len = uniform(rng, 6.0, 14.0);
        for a in 0..3 {
            let mut q = p[a] + len * dir[a];
            // Reflect off the margin box rather than sliding along it.
            if q < lo || q > hi[a] {
                dir[a] = -dir[a];
                q = (p[a] + len * dir[a]).clamp(lo, hi[a]);
            }
            p[a] = q;
        }
        waypoints.push(p);
    }
    VesselRecord {
        waypoints,
        radius_vox: radius,
    }
}

fn random_unit(rng: &mut impl Rng) -> Point3 {
    loop {
        let v = [0; 3].map(|_| rng.gen_range(-1.0..1.0));
        let n2 = dot(v, v);
        if n2 > 1e-6 && n2 <= 1.0 {
            return normalize(v);
        }
    }
}

fn normalize(v: Point3) -> Point3 {
    let n = dot(v, v).sqrt();
    if n == 0.0 {
        [1.0, 0.0, 0.0]
    } else {
        v.map(|c| c / n)
    }
}

/// Smooth multiplicative field `amplitude * p(u)`, `p` a quadratic in
/// normalized coordinates with `|p| <= 1` on the unit cube.
struct BiasField {
    linear: [f64; 3],
    quadratic: [f64; 3],
}

impl BiasField {
    fn draw(rng: &mut impl Rng, amplitude: f64) -> Self {
        if amplitude == 0.0 {
            return Self {
                linear: [0.0; 3],
                quadratic: [0.0; 3],
            };
        }
        let raw: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm: f64 = raw.iter().map(|c: &f64| c.abs()).sum::<f64>().max(1e-12);
        let c: Vec<f64> = raw.iter().map(|v| amplitude * v / norm).collect();
        Self {
            linear: [c[0], c[1], c[2]],
            quadratic: [c[3], c[4], c[5]],
        }
    }

    fn eval(&self, u: [f64; 3]) -> f64 {
        (0..3)
            .map(|a| self.linear[a] * u[a] + self.quadratic[a] * (u[a] * u[a]))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_sphere_count(c: Point3, r: f64, dims: Dims) -> usize {
        let mut n = 0;
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                    if d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r * r {
                        n += 1;
                    }
                }
            }
        }
        n
    }

    #[test]
    fn sphere_counts() {
        let dims = [16; 3];
        assert_eq!(rasterize_sphere([8.0; 3], 0.5, dims).unwrap().count(), 1);
        assert_eq!(brute_sphere_count([8.0; 3], 2.0, dims), 33);
        assert_eq!(rasterize_sphere([8.0; 3], 2.0, dims).unwrap().count(), 33);
        assert_eq!(brute_sphere_count([0.0; 3], 1.0, dims), 4);
        assert_eq!(rasterize_sphere([0.0; 3], 1.0, dims).unwrap().count(), 4);
    }

    #[test]
    fn sphere_rejects_bad_input() {
        assert!(rasterize_sphere([16.0, 0.0, 0.0], 1.0, [16; 3]).is_err());
        assert!(rasterize_sphere([-0.5, 0.0, 0.0], 1.0, [16; 3]).is_err());
        assert!(rasterize_sphere([4.0; 3], 0.0, [16; 3]).is_err());
    }

    #[test]
    fn tube_counts() {
        let dims = [16; 3];
        let line = [[3.0, 8.0, 8.0], [12.0, 8.0, 8.0]];
        assert_eq!(rasterize_tube(&line, 0.5, dims).unwrap().count(), 10);

        let thick = rasterize_tube(&line, 1.5, dims).unwrap();
        let mut brute = 0;
        for z in 0..16 {
            for y in 0..16 {
                for x in 0..16 {
                    let p = [x as f64, y as f64, z as f64];
                    if point_segment_dist2(p, line[0], line[1]) <= 2.25 {
                        brute += 1;
                        assert!(thick.get(x, y, z));
                    }
                }
            }
        }
        assert_eq!(thick.count(), brute);

        let point = [[5.0, 6.0, 7.0], [5.0, 6.0, 7.0]];
        assert_eq!(
            rasterize_tube(&point, 2.0, dims).unwrap(),
            rasterize_sphere([5.0, 6.0, 7.0], 2.0, dims).unwrap()
        );
        assert!(rasterize_tube(&line[..1], 1.0, dims).is_err());
    }

    #[test]
    fn transform_inverse_round_trip() {
        let t = RigidTransform::from_euler([0.02, -0.03, 0.01], [1.0, -2.0, 0.5], [31.5; 3]);
        let p = [3.0, 40.0, 17.0];
        let q = t.apply_inverse(t.apply(p));
        for a in 0..3 {
            assert!((p[a] - q[a]).abs() < 1e-10);
        }
    }

    #[test]
    fn empty_spec_gives_constant_background() {
        let spec = PhantomSpec {
            grid_dims: [16; 3],
            n_lesions: 0,
            n_vessels: 0,
            noise_sigma: 0.0,
            bias_amplitude: 0.0,
            background_intensity: 0.25,
            ..PhantomSpec::default()
        };
        let study = generate_study(&spec).unwrap();
        for tp in &study.timepoints {
            assert!(tp.image.data().iter().all(|&v| v == 0.25));
            assert!(tp.reference_mask.is_empty());
        }
    }

    #[test]
    fn lesions_grow() {
        let spec = PhantomSpec {
            grid_dims: [48; 3],
            n_lesions: 2,
            n_vessels: 1,
            n_timepoints: 2,
            growth_factor_range: [1.5, 1.5],
            lesion_radius_range_vox: [1.5, 3.0],
            seed: 11,
            ..PhantomSpec::default()
        };
        let study = generate_study(&spec).unwrap();
        for id in 0..2 {
            let count = |t: usize| {
                study.timepoints[t]
                    .lesion_records
                    .iter()
                    .find(|r| r.id == id)
                    .map(|r| rasterize_sphere(r.center_vox, r.radius_vox, spec.grid_dims).unwrap().count())
                    .unwrap_or(0)
            };
            assert!(count(1) > count(0), "lesion {id}: {} vs {}", count(0), count(1));
        }
    }

    #[test]
    fn overcrowded_spec_names_field() {
        let spec = PhantomSpec {
            grid_dims: [16; 3],
            n_lesions: 40,
            lesion_radius_range_vox: [3.0, 3.0],
            ..PhantomSpec::default()
        };
        match generate_study(&spec) {
            Err(Error::Generation { field, .. }) => assert_eq!(field, "n_lesions"),
            other => panic!("expected generation error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_spec_names_field() {
        let spec = PhantomSpec {
            growth_factor_range: [0.8, 1.2],
            ..PhantomSpec::default()
        };
        match spec.validate() {
            Err(Error::Generation { field, .. }) => assert_eq!(field, "growth_factor_range"),
            other => panic!("{other:?}"),
        }
    }
}
