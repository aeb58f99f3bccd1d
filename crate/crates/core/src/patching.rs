//! Training-segment sampling, augmentation, and inference tiling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::LongitudinalStudy;
use crate::volume::{n_voxels, Dims, MaskVolume, Volume, VolumeKind, VolumeMeta};

/// A cubic grid stored x-fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Cube<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Copy + Default> Cube<T> {
    pub fn zeros(size: usize) -> Self {
        Self {
            size,
            data: vec![T::default(); size * size * size],
        }
    }

    pub fn from_vec(size: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != size * size * size {
            return Err(Error::invalid(format!(
                "cube of size {size} needs {} values, got {}",
                size * size * size,
                data.len()
            )));
        }
        Ok(Self { size, data })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> T {
        self.data[x + self.size * (y + self.size * z)]
    }

    /// Centered sub-cube of size `size`.
    pub fn center_crop(&self, size: usize) -> Result<Self> {
        if size > self.size || (self.size - size) % 2 != 0 {
            return Err(Error::invalid(format!(
                "cannot center-crop a {}-cube to {size}",
                self.size
            )));
        }
        let off = (self.size - size) / 2;
        let mut out = Vec::with_capacity(size * size * size);
        for z in 0..size {
            for y in 0..size {
                let row = off + self.size * (off + y + self.size * (off + z));
                out.extend_from_slice(&self.data[row..row + size]);
            }
        }
        Ok(Self { size, data: out })
    }
}

/// Segment geometry shared by sampling, the network, and tiling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub main_size: usize,
    pub n_conv_layers: usize,
    pub infer_size: usize,
    pub lowres_factors: Vec<usize>,
    pub tumor_fraction: f64,
}

impl Default for SegmentSpec {
    fn default() -> Self {
        Self {
            main_size: 37,
            n_conv_layers: 9,
            infer_size: 45,
            lowres_factors: vec![3, 5],
            tumor_fraction: 0.5,
        }
    }
}

impl SegmentSpec {
    pub fn output_size(&self) -> usize {
        self.main_size.saturating_sub(2 * self.n_conv_layers)
    }

    pub fn infer_output_size(&self) -> usize {
        self.infer_size.saturating_sub(2 * self.n_conv_layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.main_size % 2 == 0 || self.infer_size % 2 == 0 {
            return Err(Error::invalid("main_size and infer_size must be odd"));
        }
        if self.main_size <= 2 * self.n_conv_layers || self.infer_size <= 2 * self.n_conv_layers {
            return Err(Error::invalid(format!(
                "segment sizes {} / {} leave no output after {} valid 3³ layers",
                self.main_size, self.infer_size, self.n_conv_layers
            )));
        }
        if self.lowres_factors.iter().any(|&f| f < 2) {
            return Err(Error::invalid("low-resolution factors must be at least 2"));
        }
        if !(0.0..=1.0).contains(&self.tumor_fraction) {
            return Err(Error::invalid("tumor_fraction must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Cube of `size` voxels centered at `center`, sampled every `stride`
/// voxels, zero outside the volume.
pub fn extract_patch(volume: &Volume, center: [isize; 3], size: usize, stride: usize) -> Cube<f32> {
    let h = (size / 2) as isize;
    let s = stride as isize;
    let mut out = Vec::with_capacity(size * size * size);
    for k in -h..=h {
        for j in -h..=h {
            for i in -h..=h {
                out.push(volume.get_padded(center[0] + i * s, center[1] + j * s, center[2] + k * s));
            }
        }
    }
    Cube { size, data: out }
}

pub fn extract_label(mask: &MaskVolume, center: [isize; 3], size: usize) -> Cube<u8> {
    let h = (size / 2) as isize;
    let [nx, ny, nz] = mask.dims().map(|d| d as isize);
    let mut out = Vec::with_capacity(size * size * size);
    for k in -h..=h {
        for j in -h..=h {
            for i in -h..=h {
                let (x, y, z) = (center[0] + i, center[1] + j, center[2] + k);
                let inside = x >= 0 && y >= 0 && z >= 0 && x < nx && y < ny && z < nz;
                out.push((inside && mask.get(x as usize, y as usize, z as usize)) as u8);
            }
        }
    }
    Cube { size, data: out }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSegment {
    pub main_patch: Cube<f32>,
    /// One per low-resolution factor, same order as the spec.
    pub lowres_patches: Vec<Cube<f32>>,
    /// All zeros when the timepoint has no prior.
    pub prior_patch: Cube<f32>,
    pub label_patch: Cube<u8>,
    pub center_vox: [usize; 3],
    pub is_tumor_sample: bool,
    pub has_prior: bool,
}

/// Segments drawn for one timepoint.
#[derive(Clone, Debug)]
pub struct SegmentDraw {
    pub segments: Vec<TrainingSegment>,
    /// Tumor centers were requested but the reference mask was empty.
    pub tumor_fallback: bool,
}

/// Cached voxel index lists for class-balanced center draws at one timepoint.
pub struct CenterSampler<'a> {
    study: &'a LongitudinalStudy,
    t: usize,
    tumor: Vec<usize>,
}

impl<'a> CenterSampler<'a> {
    pub fn new(study: &'a LongitudinalStudy, t: usize) -> Result<Self> {
        if t >= study.timepoints.len() {
            return Err(Error::invalid(format!(
                "timepoint {t} out of range for study {} with {} timepoints",
                study.patient_id,
                study.timepoints.len()
            )));
        }
        let mask = &study.timepoints[t].reference_mask;
        let tumor = (0..mask.data().len()).filter(|&i| mask.is_set(i)).collect();
        Ok(Self { study, t, tumor })
    }

    pub fn has_tumor(&self) -> bool {
        !self.tumor.is_empty()
    }

    /// Draws one center; returns it with a flag telling whether it is a tumor voxel.
    pub fn draw_center(&self, rng: &mut impl Rng, tumor_fraction: f64) -> ([usize; 3], bool) {
        let mask = &self.study.timepoints[self.t].reference_mask;
        let dims = mask.dims();
        let want_tumor = rng.gen_bool(tumor_fraction) && self.has_tumor();
        let idx = if want_tumor {
            self.tumor[rng.gen_range(0..self.tumor.len())]
        } else {
            let n = mask.data().len();
            let mut i = rng.gen_range(0..n);
            // Rejection sampling; the background dominates every realistic mask.
            for _ in 0..1000 {
                if !mask.is_set(i) {
                    break;
                }
                i = rng.gen_range(0..n);
            }
            i
        };
        (crate::volume::coords(dims, idx), want_tumor)
    }

    pub fn segment_at(&self, center: [usize; 3], is_tumor: bool, spec: &SegmentSpec) -> TrainingSegment {
        let tp = &self.study.timepoints[self.t];
        let c = center.map(|v| v as isize);
        let main_patch = extract_patch(&tp.image, c, spec.main_size, 1);
        let lowres_patches = spec
            .lowres_factors
            .iter()
            .map(|&f| extract_patch(&tp.image, c, spec.main_size, f))
            .collect();
        let has_prior = self.study.has_prior(self.t);
        let prior_patch = match self.study.prior_image(self.t) {
            Some(prior) => extract_patch(prior, c, spec.main_size, 1),
            None => Cube::zeros(spec.main_size),
        };
        let label_patch = extract_label(&tp.reference_mask, c, spec.output_size());
        TrainingSegment {
            main_patch,
            lowres_patches,
            prior_patch,
            label_patch,
            center_vox: center,
            is_tumor_sample: is_tumor,
            has_prior,
        }
    }
}

/// Class-balanced segment draw: each center is a tumor voxel with
/// probability `spec.tumor_fraction`, otherwise a non-tumor voxel.
pub fn sample_segments(
    study: &LongitudinalStudy,
    t: usize,
    spec: &SegmentSpec,
    count: usize,
    seed: u64,
) -> Result<SegmentDraw> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("segment count must be at least 1"));
    }
    let sampler = CenterSampler::new(study, t)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tumor_fallback = !sampler.has_tumor() && spec.tumor_fraction > 0.0;
    let segments = (0..count)
        .map(|_| {
            let (c, tumor) = sampler.draw_center(&mut rng, spec.tumor_fraction);
            sampler.segment_at(c, tumor, spec)
        })
        .collect();
    Ok(SegmentDraw {
        segments,
        tumor_fallback,
    })
}

/// A signed axis permutation of a cube about its center, plus an intensity scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Augmentation {
    pub intensity_scale: f32,
    /// Integer orthogonal matrix mapping input offsets to output offsets.
    pub orientation: [[i8; 3]; 3],
}

const IDENTITY3: [[i8; 3]; 3] = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];

impl Augmentation {
    pub fn identity() -> Self {
        Self {
            intensity_scale: 1.0,
            orientation: IDENTITY3,
        }
    }

    /// Reflection of one axis.
    pub fn flip(axis: usize) -> Self {
        let mut m = IDENTITY3;
        m[axis][axis] = -1;
        Self {
            intensity_scale: 1.0,
            orientation: m,
        }
    }

    /// `quarter_turns` right-angle rotations about `axis`.
    pub fn rotation(axis: usize, quarter_turns: u32) -> Self {
        let (a, b) = ((axis + 1) % 3, (axis + 2) % 3);
        let mut m = IDENTITY3;
        for _ in 0..quarter_turns % 4 {
            // (u_a, u_b) -> (-u_b, u_a)
            let mut r = IDENTITY3;
            r[a][a] = 0;
            r[a][b] = -1;
            r[b][b] = 0;
            r[b][a] = 1;
            m = mat_mul(&r, &m);
        }
        Self {
            intensity_scale: 1.0,
            orientation: m,
        }
    }

    /// Applies `self` after `first`.
    pub fn compose(&self, first: &Augmentation) -> Self {
        Self {
            intensity_scale: self.intensity_scale * first.intensity_scale,
            orientation: mat_mul(&self.orientation, &first.orientation),
        }
    }

    /// Random draw: scale in [0.9, 1.1], independent flips, a random number
    /// of quarter turns about a random axis.
    pub fn draw(rng: &mut impl Rng) -> Self {
        let mut aug = Self::identity();
        for axis in 0..3 {
            if rng.gen_bool(0.5) {
                aug = Self::flip(axis).compose(&aug);
            }
        }
        let axis = rng.gen_range(0..3);
        let turns = rng.gen_range(0..4);
        aug = Self::rotation(axis, turns).compose(&aug);
        aug.intensity_scale = rng.gen_range(0.9f32..1.1f32);
        aug
    }

    pub fn apply_cube<T: Copy + Default>(&self, cube: &Cube<T>) -> Cube<T> {
        let s = cube.size as isize;
        let h = s / 2;
        let m = &self.orientation;
        let mut out = Cube::zeros(cube.size);
        // out[M·u] = in[u] for centered offsets u.
        for z in -h..=h {
            for y in -h..=h {
                for x in -h..=h {
                    let u = [x, y, z];
                    let o: [isize; 3] = [0, 1, 2].map(|r| {
                        (0..3).map(|c| m[r][c] as isize * u[c]).sum::<isize>()
                    });
                    let src = ((x + h) + s * ((y + h) + s * (z + h))) as usize;
                    let dst = ((o[0] + h) + s * ((o[1] + h) + s * (o[2] + h))) as usize;
                    out.data[dst] = cube.data[src];
                }
            }
        }
        out
    }

    fn scaled(&self, cube: &Cube<f32>) -> Cube<f32> {
        let mut out = self.apply_cube(cube);
        if self.intensity_scale != 1.0 {
            for v in &mut out.data {
                *v *= self.intensity_scale;
            }
        }
        out
    }

    pub fn apply(&self, segment: &TrainingSegment) -> TrainingSegment {
        TrainingSegment {
            main_patch: self.scaled(&segment.main_patch),
            lowres_patches: segment.lowres_patches.iter().map(|p| self.scaled(p)).collect(),
            prior_patch: self.scaled(&segment.prior_patch),
            label_patch: self.apply_cube(&segment.label_patch),
            center_vox: segment.center_vox,
            is_tumor_sample: segment.is_tumor_sample,
            has_prior: segment.has_prior,
        }
    }
}

fn mat_mul(a: &[[i8; 3]; 3], b: &[[i8; 3]; 3]) -> [[i8; 3]; 3] {
    let mut out = [[0i8; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Random intensity scaling, flips and right-angle rotations; one geometric
/// transform shared by every patch of the segment.
pub fn augment(segment: &TrainingSegment, seed: u64) -> TrainingSegment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Augmentation::draw(&mut rng).apply(segment)
}

/// Start offsets of `tile`-sized windows covering `[0, dim)`; the last window
/// is shifted inward to end at the boundary.
pub fn tile_origins(dim: usize, tile: usize) -> Vec<usize> {
    assert!(tile >= 1 && tile <= dim, "tile {tile} must fit in axis of {dim}");
    let mut out = Vec::new();
    let mut s = 0;
    while s + tile < dim {
        out.push(s);
        s += tile;
    }
    out.push(dim - tile);
    out
}

#[derive(Clone, Debug)]
pub struct InferenceTile {
    pub main_patch: Cube<f32>,
    pub lowres_patches: Vec<Cube<f32>>,
    pub prior_patch: Cube<f32>,
    pub has_prior: bool,
}

#[derive(Clone, Debug)]
pub struct Tiling {
    pub tiles: Vec<InferenceTile>,
    /// Output-region origin of each tile, in tile order.
    pub placement: Vec<[usize; 3]>,
    pub output_size: usize,
    pub dims: Dims,
}

/// Cuts a volume into inference tiles whose output regions cover it.
pub fn tile_volume(volume: &Volume, prior: Option<&Volume>, spec: &SegmentSpec) -> Result<Tiling> {
    spec.validate()?;
    let dims = volume.dims();
    if let Some(p) = prior {
        crate::volume::ensure_same_dims(dims, p.dims())?;
    }
    let out = spec.infer_output_size();
    if dims.iter().any(|&d| d < out) {
        return Err(Error::invalid(format!(
            "volume {dims:?} is smaller than the output tile {out}"
        )));
    }
    let ox = tile_origins(dims[0], out);
    let oy = tile_origins(dims[1], out);
    let oz = tile_origins(dims[2], out);
    let half = (out / 2) as isize;
    let mut tiles = Vec::new();
    let mut placement = Vec::new();
    for &z in &oz {
        for &y in &oy {
            for &x in &ox {
                let c = [x, y, z].map(|o| o as isize + half);
                let tile = InferenceTile {
                    main_patch: extract_patch(volume, c, spec.infer_size, 1),
                    lowres_patches: spec
                        .lowres_factors
                        .iter()
                        .map(|&f| extract_patch(volume, c, spec.infer_size, f))
                        .collect(),
                    prior_patch: match prior {
                        Some(p) => extract_patch(p, c, spec.infer_size, 1),
                        None => Cube::zeros(spec.infer_size),
                    },
                    has_prior: prior.is_some(),
                };
                tiles.push(tile);
                placement.push([x, y, z]);
            }
        }
    }
    Ok(Tiling {
        tiles,
        placement,
        output_size: out,
        dims,
    })
}

/// Writes per-tile output cubes back into a volume, last write wins.
pub fn stitch_predictions(
    outputs: &[Cube<f32>],
    placement: &[[usize; 3]],
    dims: Dims,
) -> Result<Volume> {
    if outputs.len() != placement.len() {
        return Err(Error::Internal(format!(
            "{} tile outputs for {} placements",
            outputs.len(),
            placement.len()
        )));
    }
    let mut data = vec![0f32; n_voxels(dims)];
    let mut covered = vec![false; n_voxels(dims)];
    for (cube, origin) in outputs.iter().zip(placement) {
        let s = cube.size();
        if (0..3).any(|a| origin[a] + s > dims[a]) {
            return Err(Error::DimMismatch {
                left: [origin[0] + s, origin[1] + s, origin[2] + s],
                right: dims,
            });
        }
        for z in 0..s {
            for y in 0..s {
                let dst = crate::volume::linear_index(dims, origin[0], origin[1] + y, origin[2] + z);
                let src = s * (y + s * z);
                data[dst..dst + s].copy_from_slice(&cube.data()[src..src + s]);
                covered[dst..dst + s].iter_mut().for_each(|c| *c = true);
            }
        }
    }
    if let Some(i) = covered.iter().position(|c| !c) {
        return Err(Error::Internal(format!(
            "tile placement leaves voxel {:?} uncovered",
            crate::volume::coords(dims, i)
        )));
    }
    let clamped = data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Volume::new(dims, 1.0, clamped, VolumeMeta::anonymous(VolumeKind::Probability))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_study, PhantomSpec};

    fn small_study(n_lesions: usize, seed: u64) -> LongitudinalStudy {
        generate_study(&PhantomSpec {
            grid_dims: [32; 3],
            n_lesions,
            n_vessels: 1,
            lesion_radius_range_vox: [1.5, 3.0],
            seed,
            ..PhantomSpec::default()
        })
        .unwrap()
    }

    fn small_spec() -> SegmentSpec {
        SegmentSpec {
            main_size: 13,
            n_conv_layers: 3,
            infer_size: 17,
            lowres_factors: vec![3],
            tumor_fraction: 0.5,
        }
    }

    #[test]
    fn tiling_arithmetic() {
        assert_eq!(tile_origins(64, 27), vec![0, 27, 37]);
        assert_eq!(tile_origins(27, 27), vec![0]);
        assert_eq!(tile_origins(54, 27), vec![0, 27]);
    }

    #[test]
    fn empty_mask_falls_back() {
        let study = small_study(0, 1);
        let draw = sample_segments(&study, 1, &small_spec(), 20, 3).unwrap();
        assert!(draw.tumor_fallback);
        assert!(draw.segments.iter().all(|s| !s.is_tumor_sample));
    }

    #[test]
    fn corner_center_is_zero_padded() {
        let study = small_study(1, 2);
        let sampler = CenterSampler::new(&study, 1).unwrap();
        let spec = small_spec();
        let seg = sampler.segment_at([0, 0, 0], false, &spec);
        let h = spec.main_size / 2;
        // Everything with a negative coordinate is padding.
        for z in 0..spec.main_size {
            for y in 0..spec.main_size {
                for x in 0..h {
                    assert_eq!(seg.main_patch.get(x, y, z), 0.0);
                }
            }
        }
        let img = &study.timepoints[1].image;
        assert_eq!(seg.main_patch.get(h, h, h), img.get(0, 0, 0));
        assert_eq!(seg.main_patch.get(h + 2, h + 1, h + 3), img.get(2, 1, 3));
        let o = spec.output_size() / 2;
        let mask = &study.timepoints[1].reference_mask;
        assert_eq!(seg.label_patch.get(o + 1, o, o) != 0, mask.get(1, 0, 0));
    }

    #[test]
    fn prior_patch_zero_without_prior() {
        let study = small_study(2, 4);
        let spec = small_spec();
        let d0 = sample_segments(&study, 0, &spec, 5, 1).unwrap();
        assert!(d0.segments.iter().all(|s| !s.has_prior && s.prior_patch.data().iter().all(|&v| v == 0.0)));
        let d1 = sample_segments(&study, 1, &spec, 5, 1).unwrap();
        assert!(d1.segments.iter().all(|s| s.has_prior && s.prior_patch.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn sampling_is_seeded() {
        let study = small_study(2, 5);
        let a = sample_segments(&study, 1, &small_spec(), 8, 42).unwrap();
        let b = sample_segments(&study, 1, &small_spec(), 8, 42).unwrap();
        assert_eq!(a.segments, b.segments);
    }

    #[test]
    fn augmentation_identities() {
        let study = small_study(2, 6);
        let seg = sample_segments(&study, 1, &small_spec(), 1, 9).unwrap().segments.remove(0);
        assert_eq!(Augmentation::identity().apply(&seg), seg);
        for axis in 0..3 {
            let f = Augmentation::flip(axis);
            assert_eq!(f.apply(&f.apply(&seg)), seg);
            let r = Augmentation::rotation(axis, 1);
            let four = r.compose(&r).compose(&r).compose(&r);
            assert_eq!(four.orientation, IDENTITY3);
        }
    }

    #[test]
    fn stitch_rejects_bad_placement() {
        let cube = Cube::<f32>::zeros(4);
        assert!(stitch_predictions(&[cube.clone()], &[[0, 0, 0]], [8, 8, 8]).is_err());
        assert!(stitch_predictions(&[cube.clone()], &[[6, 0, 0]], [8, 8, 8]).is_err());
        assert!(stitch_predictions(&[cube], &[], [4, 4, 4]).is_err());
    }

    #[test]
    fn center_crop_picks_middle() {
        let data: Vec<u32> = (0..125).collect();
        let c = Cube::from_vec(5, data).unwrap().center_crop(3).unwrap();
        assert_eq!(c.get(0, 0, 0), 1 + 5 + 25);
        assert_eq!(c.get(2, 2, 2), 3 + 15 + 75);
        assert!(Cube::<u32>::zeros(5).center_crop(2).is_err());
    }
}
