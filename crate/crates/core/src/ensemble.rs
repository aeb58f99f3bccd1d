//! Union of a sensitivity-oriented and a specificity-oriented mask with a
//! confidence tag per lesion.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{connected_components, Connectivity};
use crate::volume::{ensure_same_dims, MaskVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    /// Overlaps the specificity model's mask.
    Confirmed,
    /// Found by the sensitivity model only; needs review.
    Candidate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Spec,
    Sens,
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedComponent {
    pub id: u32,
    pub voxels: Vec<usize>,
    pub tag: Tag,
    pub source: Source,
}

impl TaggedComponent {
    pub fn size(&self) -> usize {
        self.voxels.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedMask {
    pub mask: MaskVolume,
    pub components: Vec<TaggedComponent>,
}

impl AnnotatedMask {
    pub fn with_tag(&self, tag: Tag) -> impl Iterator<Item = &TaggedComponent> {
        self.components.iter().filter(move |c| c.tag == tag)
    }

    pub fn n_confirmed(&self) -> usize {
        self.with_tag(Tag::Confirmed).count()
    }

    pub fn n_candidate(&self) -> usize {
        self.with_tag(Tag::Candidate).count()
    }

    /// Mask of the components carrying `tag`.
    pub fn tag_mask(&self, tag: Tag) -> MaskVolume {
        let mut data = vec![0u8; self.mask.data().len()];
        for c in self.with_tag(tag) {
            for &v in &c.voxels {
                data[v] = 1;
            }
        }
        MaskVolume::new(self.mask.dims(), data, self.mask.meta.clone()).expect("binary")
    }

    /// Checks the union and tag partition invariants against the inputs.
    pub fn validate(&self, sens: &MaskVolume, spec: &MaskVolume) -> Result<()> {
        let union = sens.union(spec)?;
        if union.data() != self.mask.data() {
            return Err(Error::Internal("annotated mask is not the union of its inputs".into()));
        }
        let mut seen = vec![false; union.data().len()];
        for c in &self.components {
            let hits_spec = c.voxels.iter().any(|&v| spec.is_set(v));
            let hits_sens = c.voxels.iter().any(|&v| sens.is_set(v));
            let tag_ok = (c.tag == Tag::Confirmed) == hits_spec;
            let source_ok = c.source == source_of(hits_sens, hits_spec);
            if !tag_ok || !source_ok {
                return Err(Error::Internal(format!("component {} is mistagged", c.id)));
            }
            for &v in &c.voxels {
                if seen[v] || !union.is_set(v) {
                    return Err(Error::Internal(format!("component {} overlaps another", c.id)));
                }
                seen[v] = true;
            }
        }
        if seen.iter().filter(|&&s| s).count() != union.count() {
            return Err(Error::Internal("components do not cover the union".into()));
        }
        Ok(())
    }
}

fn source_of(hits_sens: bool, hits_spec: bool) -> Source {
    match (hits_sens, hits_spec) {
        (true, true) => Source::Both,
        (false, true) => Source::Spec,
        _ => Source::Sens,
    }
}

/// Voxelwise OR of both masks; each union component is confirmed iff it
/// overlaps the specificity mask.
pub fn ensemble_union(mask_sens: &MaskVolume, mask_spec: &MaskVolume) -> Result<AnnotatedMask> {
    ensure_same_dims(mask_sens.dims(), mask_spec.dims())?;
    let mut mask = mask_sens.union(mask_spec)?;
    mask.meta = mask_sens.meta.clone();
    let cc = connected_components(&mask, Connectivity::TwentySix);
    let components = cc
        .voxels
        .into_iter()
        .enumerate()
        .map(|(k, voxels)| {
            let hits_spec = voxels.iter().any(|&v| mask_spec.is_set(v));
            let hits_sens = voxels.iter().any(|&v| mask_sens.is_set(v));
            TaggedComponent {
                id: k as u32 + 1,
                tag: if hits_spec { Tag::Confirmed } else { Tag::Candidate },
                source: source_of(hits_sens, hits_spec),
                voxels,
            }
        })
        .collect();
    Ok(AnnotatedMask { mask, components })
}
