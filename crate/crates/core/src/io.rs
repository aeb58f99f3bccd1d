//! VXG volume files and corpus manifests.
//!
//! A VXG file is the 4-byte magic `VXG1`, a little-endian `u32` header
//! length, a UTF-8 JSON header, and the voxels in x-fastest order:
//! little-endian `f32` for images and probabilities, `u8` in {0, 1} for masks.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phantom::{LesionRecord, LongitudinalStudy, RigidTransform, Timepoint};
use crate::volume::{n_voxels, Dims, MaskVolume, Volume, VolumeKind, VolumeMeta};

pub const VXG_MAGIC: &[u8; 4] = b"VXG1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VxgHeader {
    pub dims: Dims,
    pub spacing_mm: f64,
    pub dtype: Dtype,
    pub kind: VolumeKind,
    pub patient_id: String,
    pub timepoint_index: usize,
}

/// Contents of a VXG file.
#[derive(Clone, Debug, PartialEq)]
pub enum VxgData {
    Volume(Volume),
    Mask(MaskVolume),
}

impl VxgData {
    pub fn into_volume(self) -> Option<Volume> {
        match self {
            VxgData::Volume(v) => Some(v),
            VxgData::Mask(_) => None,
        }
    }

    pub fn into_mask(self) -> Option<MaskVolume> {
        match self {
            VxgData::Mask(m) => Some(m),
            VxgData::Volume(_) => None,
        }
    }
}

fn encode(header: &VxgHeader, body: &[u8]) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(8 + json.len() + body.len());
    out.extend_from_slice(VXG_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(body);
    Ok(out)
}

pub fn encode_volume(volume: &Volume) -> Result<Vec<u8>> {
    let header = VxgHeader {
        dims: volume.dims(),
        spacing_mm: volume.spacing_mm,
        dtype: Dtype::F32,
        kind: volume.meta.kind,
        patient_id: volume.meta.patient_id.clone(),
        timepoint_index: volume.meta.timepoint_index,
    };
    let mut body = Vec::with_capacity(4 * volume.data().len());
    for v in volume.data() {
        body.extend_from_slice(&v.to_le_bytes());
    }
    encode(&header, &body)
}

pub fn encode_mask(mask: &MaskVolume) -> Result<Vec<u8>> {
    let header = VxgHeader {
        dims: mask.dims(),
        spacing_mm: 1.0,
        dtype: Dtype::U8,
        kind: VolumeKind::Mask,
        patient_id: mask.meta.patient_id.clone(),
        timepoint_index: mask.meta.timepoint_index,
    };
    encode(&header, mask.data())
}

pub fn decode_vxg(bytes: &[u8], path: &Path) -> Result<VxgData> {
    if bytes.len() < 8 || &bytes[..4] != VXG_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: "VXG1".into(),
        });
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() < 8 + hlen {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: hlen,
            found: bytes.len() - 8,
        });
    }
    let header: VxgHeader = serde_json::from_slice(&bytes[8..8 + hlen]).map_err(|e| Error::Header {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let expected = n_voxels(header.dims) * header.dtype.size();
    let body = &bytes[8 + hlen..];
    if body.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found: body.len(),
        });
    }
    if body.len() > expected {
        return Err(Error::Header {
            path: path.to_path_buf(),
            reason: format!(
                "dims {:?} imply {expected} payload bytes but the file has {}",
                header.dims,
                body.len()
            ),
        });
    }
    let mismatch = || Error::KindMismatch {
        path: path.to_path_buf(),
        dtype: header.dtype.as_str().into(),
        kind: header.kind.as_str().into(),
    };
    let meta = VolumeMeta::new(header.patient_id.clone(), header.timepoint_index, header.kind);
    let invalid = |reason: String| Error::Validation {
        path: path.to_path_buf(),
        reason,
    };
    match (header.dtype, header.kind) {
        (Dtype::U8, VolumeKind::Mask) => {
            if let Some((i, v)) = body.iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(invalid(format!("mask voxel {i} has value {v}")));
            }
            Ok(VxgData::Mask(MaskVolume::new(header.dims, body.to_vec(), meta)?))
        }
        (Dtype::F32, VolumeKind::Image | VolumeKind::Probability) => {
            let data: Vec<f32> = body
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if header.kind == VolumeKind::Probability {
                if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
                    return Err(invalid(format!("probability voxel {i} has value {v}")));
                }
            }
            if !(header.spacing_mm > 0.0) {
                return Err(invalid("spacing_mm must be positive".into()));
            }
            Ok(VxgData::Volume(Volume::new(header.dims, header.spacing_mm, data, meta)?))
        }
        _ => Err(mismatch()),
    }
}

/// Writes to a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_volume(volume: &Volume, path: &Path) -> Result<()> {
    write_atomic(path, &encode_volume(volume)?)
}

pub fn write_mask(mask: &MaskVolume, path: &Path) -> Result<()> {
    write_atomic(path, &encode_mask(mask)?)
}

pub fn read_vxg(path: &Path) -> Result<VxgData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_vxg(&bytes, path)
}

pub fn read_volume(path: &Path) -> Result<Volume> {
    match read_vxg(path)? {
        VxgData::Volume(v) => Ok(v),
        VxgData::Mask(_) => Err(Error::KindMismatch {
            path: path.to_path_buf(),
            dtype: "u8".into(),
            kind: "mask (expected a scalar volume)".into(),
        }),
    }
}

pub fn read_mask(path: &Path) -> Result<MaskVolume> {
    match read_vxg(path)? {
        VxgData::Mask(m) => Ok(m),
        VxgData::Volume(v) => Err(Error::KindMismatch {
            path: path.to_path_buf(),
            dtype: "f32".into(),
            kind: format!("{} (expected a mask)", v.meta.kind.as_str()),
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimepointEntry {
    pub image_path: PathBuf,
    pub mask_path: PathBuf,
    pub has_prior: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lesion_records: Vec<LesionRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientEntry {
    pub patient_id: String,
    pub timepoints: Vec<TimepointEntry>,
}

/// Patients with their ordered timepoints. Relative paths resolve against
/// the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub patients: Vec<PatientEntry>,
}

impl CorpusManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec_pretty(self)?)
    }
}

/// Loads every study a manifest lists, checking file consistency.
pub fn load_corpus(manifest_path: &Path) -> Result<Vec<LongitudinalStudy>> {
    let manifest = CorpusManifest::read(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest
        .patients
        .iter()
        .map(|p| load_patient(p, base))
        .collect()
}

fn load_patient(entry: &PatientEntry, base: &Path) -> Result<LongitudinalStudy> {
    let mut timepoints = Vec::with_capacity(entry.timepoints.len());
    for (t, tp) in entry.timepoints.iter().enumerate() {
        if tp.has_prior != (t > 0) {
            return Err(Error::Manifest(format!(
                "patient {} timepoint {t}: has_prior must be {}",
                entry.patient_id,
                t > 0
            )));
        }
        let image = read_volume(&base.join(&tp.image_path))?;
        let mask = read_mask(&base.join(&tp.mask_path))?;
        if image.dims() != mask.dims() {
            return Err(Error::DimMismatch {
                left: image.dims(),
                right: mask.dims(),
            });
        }
        if image.meta.timepoint_index != t || mask.meta.timepoint_index != t {
            return Err(Error::Manifest(format!(
                "patient {} timepoint {t}: files are labelled as timepoints {} / {}",
                entry.patient_id, image.meta.timepoint_index, mask.meta.timepoint_index
            )));
        }
        let dims = image.dims();
        timepoints.push(Timepoint {
            image,
            reference_mask: mask,
            lesion_records: tp.lesion_records.clone(),
            transform: RigidTransform::identity(dims.map(|d| (d as f64 - 1.0) / 2.0)),
        });
    }
    if timepoints.is_empty() {
        return Err(Error::Manifest(format!("patient {} has no timepoints", entry.patient_id)));
    }
    Ok(LongitudinalStudy {
        patient_id: entry.patient_id.clone(),
        timepoints,
        vessels: Vec::new(),
    })
}

/// Writes studies as VXG files under `out_dir` plus `manifest.json`.
pub fn write_corpus(studies: &[LongitudinalStudy], out_dir: &Path) -> Result<PathBuf> {
    let mut manifest = CorpusManifest::default();
    for study in studies {
        let mut entry = PatientEntry {
            patient_id: study.patient_id.clone(),
            timepoints: Vec::new(),
        };
        for (t, tp) in study.timepoints.iter().enumerate() {
            let image_path = PathBuf::from(format!("{}/t{t}_image.vxg", study.patient_id));
            let mask_path = PathBuf::from(format!("{}/t{t}_mask.vxg", study.patient_id));
            write_volume(&tp.image, &out_dir.join(&image_path))?;
            write_mask(&tp.reference_mask, &out_dir.join(&mask_path))?;
            entry.timepoints.push(TimepointEntry {
                image_path,
                mask_path,
                has_prior: t > 0,
                lesion_records: tp.lesion_records.clone(),
            });
        }
        manifest.patients.push(entry);
    }
    let path = out_dir.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.vxg")
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let mask = MaskVolume::from_fn([4, 4, 4], |x, y, _| x == y);
        let mut bytes = encode_mask(&mask).unwrap();
        assert!(matches!(decode_vxg(&bytes, p()), Ok(VxgData::Mask(m)) if m == mask));

        let last = bytes.len() - 1;
        bytes[last] = 2;
        assert!(matches!(decode_vxg(&bytes, p()), Err(Error::Validation { .. })));

        let mut bad_magic = bytes.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_vxg(&bad_magic, p()), Err(Error::BadMagic { .. })));

        assert!(matches!(decode_vxg(&bytes[..bytes.len() - 3], p()), Err(Error::Truncated { .. })));

        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_vxg(&long, p()), Err(Error::Header { .. })));
    }

    #[test]
    fn dtype_kind_mismatch() {
        let header = VxgHeader {
            dims: [1, 1, 1],
            spacing_mm: 1.0,
            dtype: Dtype::U8,
            kind: VolumeKind::Image,
            patient_id: "p".into(),
            timepoint_index: 0,
        };
        let bytes = encode(&header, &[0]).unwrap();
        assert!(matches!(decode_vxg(&bytes, p()), Err(Error::KindMismatch { .. })));
    }

    #[test]
    fn probability_range_checked_on_read() {
        let header = VxgHeader {
            dims: [1, 1, 1],
            spacing_mm: 1.0,
            dtype: Dtype::F32,
            kind: VolumeKind::Probability,
            patient_id: "p".into(),
            timepoint_index: 0,
        };
        let bytes = encode(&header, &1.5f32.to_le_bytes()).unwrap();
        assert!(matches!(decode_vxg(&bytes, p()), Err(Error::Validation { .. })));
    }

    #[test]
    fn body_is_little_endian_x_fastest() {
        let v = Volume::new(
            [2, 1, 1],
            1.0,
            vec![1.0, -2.0],
            VolumeMeta::new("a", 3, VolumeKind::Image),
        )
        .unwrap();
        let bytes = encode_volume(&v).unwrap();
        let n = bytes.len();
        assert_eq!(&bytes[n - 8..n - 4], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[n - 4..], &(-2.0f32).to_le_bytes());
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[8..8 + hlen]).unwrap();
        assert_eq!(header["dtype"], "f32");
        assert_eq!(header["kind"], "image");
        assert_eq!(header["timepoint_index"], 3);
    }
}
