//! Dense 3D grids: scalar volumes and binary masks.
//!
//! Voxels are stored x-fastest: the linear index of `(x, y, z)` is
//! `x + nx * (y + ny * z)` with `dims = [nx, ny, nz]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

#[inline]
pub fn n_voxels(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

#[inline]
pub fn coords(dims: Dims, idx: usize) -> [usize; 3] {
    let x = idx % dims[0];
    let y = (idx / dims[0]) % dims[1];
    let z = idx / (dims[0] * dims[1]);
    [x, y, z]
}

/// What a grid holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VolumeKind {
    Image,
    Probability,
    Mask,
}

impl VolumeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VolumeKind::Image => "image",
            VolumeKind::Probability => "probability",
            VolumeKind::Mask => "mask",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VolumeMeta {
    pub patient_id: String,
    pub timepoint_index: usize,
    pub kind: VolumeKind,
}

impl VolumeMeta {
    pub fn new(patient_id: impl Into<String>, timepoint_index: usize, kind: VolumeKind) -> Self {
        Self {
            patient_id: patient_id.into(),
            timepoint_index,
            kind,
        }
    }

    pub fn anonymous(kind: VolumeKind) -> Self {
        Self::new("", 0, kind)
    }
}

/// A scalar grid: an image or a probability map.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    dims: Dims,
    pub spacing_mm: f64,
    data: Vec<f32>,
    pub meta: VolumeMeta,
}

impl Volume {
    pub fn new(dims: Dims, spacing_mm: f64, data: Vec<f32>, meta: VolumeMeta) -> Result<Self> {
        if data.len() != n_voxels(dims) {
            return Err(Error::invalid(format!(
                "volume data has {} voxels but dims {:?} need {}",
                data.len(),
                dims,
                n_voxels(dims)
            )));
        }
        if !(spacing_mm > 0.0) {
            return Err(Error::invalid("spacing_mm must be positive"));
        }
        if meta.kind == VolumeKind::Mask {
            return Err(Error::invalid("a scalar volume cannot have kind `mask`"));
        }
        if meta.kind == VolumeKind::Probability
            && data.iter().any(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::invalid("probability volume has values outside [0, 1]"));
        }
        Ok(Self {
            dims,
            spacing_mm,
            data,
            meta,
        })
    }

    pub fn filled(dims: Dims, value: f32, meta: VolumeMeta) -> Result<Self> {
        Self::new(dims, 1.0, vec![value; n_voxels(dims)], meta)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Mutable access for images. Probability volumes go through
    /// [`Volume::new`] so the range check is never bypassed.
    pub fn data_mut(&mut self) -> Option<&mut [f32]> {
        match self.meta.kind {
            VolumeKind::Image => Some(&mut self.data),
            _ => None,
        }
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    /// Value at signed coordinates, zero outside the grid.
    #[inline]
    pub fn get_padded(&self, x: isize, y: isize, z: isize) -> f32 {
        let [nx, ny, nz] = self.dims;
        if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
            0.0
        } else {
            self.get(x as usize, y as usize, z as usize)
        }
    }
}

/// A binary grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskVolume {
    dims: Dims,
    data: Vec<u8>,
    pub meta: VolumeMeta,
}

impl MaskVolume {
    pub fn new(dims: Dims, data: Vec<u8>, meta: VolumeMeta) -> Result<Self> {
        if data.len() != n_voxels(dims) {
            return Err(Error::invalid(format!(
                "mask data has {} voxels but dims {:?} need {}",
                data.len(),
                dims,
                n_voxels(dims)
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("mask value {v} is not binary")));
        }
        Ok(Self {
            dims,
            data,
            meta: VolumeMeta {
                kind: VolumeKind::Mask,
                ..meta
            },
        })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![0; n_voxels(dims)],
            meta: VolumeMeta::anonymous(VolumeKind::Mask),
        }
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut m = Self::zeros(dims);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    if f(x, y, z) {
                        m.data[linear_index(dims, x, y, z)] = 1;
                    }
                }
            }
        }
        m
    }

    pub fn with_meta(mut self, meta: VolumeMeta) -> Self {
        self.meta = VolumeMeta {
            kind: VolumeKind::Mask,
            ..meta
        };
        self
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[linear_index(self.dims, x, y, z)] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, z: usize, value: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.data[i] = value as u8;
    }

    #[inline]
    pub fn is_set(&self, idx: usize) -> bool {
        self.data[idx] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Voxelwise OR.
    pub fn union(&self, other: &MaskVolume) -> Result<MaskVolume> {
        ensure_same_dims(self.dims, other.dims)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a | b)
            .collect();
        Ok(MaskVolume {
            dims: self.dims,
            data,
            meta: self.meta.clone(),
        })
    }

    pub fn union_in_place(&mut self, other: &MaskVolume) -> Result<()> {
        ensure_same_dims(self.dims, other.dims)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a |= b;
        }
        Ok(())
    }

    /// The mask as a 0/1 probability map.
    pub fn to_probability(&self) -> Volume {
        Volume {
            dims: self.dims,
            spacing_mm: 1.0,
            data: self.data.iter().map(|&v| v as f32).collect(),
            meta: VolumeMeta {
                kind: VolumeKind::Probability,
                ..self.meta.clone()
            },
        }
    }
}

pub(crate) fn ensure_same_dims(a: Dims, b: Dims) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::DimMismatch { left: a, right: b })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_round_trip() {
        let dims = [5, 7, 3];
        for i in 0..n_voxels(dims) {
            let [x, y, z] = coords(dims, i);
            assert_eq!(linear_index(dims, x, y, z), i);
        }
    }

    #[test]
    fn rejects_bad_lengths_and_ranges() {
        let meta = VolumeMeta::anonymous(VolumeKind::Probability);
        assert!(Volume::new([2, 2, 2], 1.0, vec![0.0; 7], meta.clone()).is_err());
        assert!(Volume::new([1, 1, 1], 1.0, vec![1.5], meta).is_err());
        assert!(MaskVolume::new([1, 1, 2], vec![0, 2], VolumeMeta::anonymous(VolumeKind::Mask)).is_err());
    }

    #[test]
    fn padded_reads_are_zero_outside() {
        let v = Volume::filled([2, 2, 2], 3.0, VolumeMeta::anonymous(VolumeKind::Image)).unwrap();
        assert_eq!(v.get_padded(-1, 0, 0), 0.0);
        assert_eq!(v.get_padded(1, 1, 1), 3.0);
        assert_eq!(v.get_padded(2, 0, 0), 0.0);
    }
}
