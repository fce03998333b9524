//! Segment masks, functional maps between an OOD image and an ID image, and
//! the summed-IoU alignment score.

use serde::{Deserialize, Serialize};

use super::grammar::{CorrespondenceDescription, CorrespondenceFeature, EdgeSide, VerticalAnchor};
use crate::model::{LabelGridImage, LabelId};
use crate::sim::ground_truth_segment;

/// Labeled cell set. Cells are `(row, col)`, sorted and unique; coordinates
/// are signed so that translated masks may hang off the grid.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub label: LabelId,
    cells: Vec<(i32, i32)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub top: i32,
    pub left: i32,
    pub bottom: i32,
    pub right: i32,
}

impl SegmentMask {
    /// Returns None for an empty cell list.
    pub fn new(label: LabelId, cells: Vec<(usize, usize)>) -> Option<SegmentMask> {
        Self::from_signed(
            label,
            cells
                .into_iter()
                .map(|(r, c)| (r as i32, c as i32))
                .collect(),
        )
    }

    pub fn from_signed(label: LabelId, mut cells: Vec<(i32, i32)>) -> Option<SegmentMask> {
        if cells.is_empty() {
            return None;
        }
        cells.sort_unstable();
        cells.dedup();
        Some(SegmentMask { label, cells })
    }

    pub fn cells(&self) -> &[(i32, i32)] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let mut b = BoundingBox {
            top: i32::MAX,
            left: i32::MAX,
            bottom: i32::MIN,
            right: i32::MIN,
        };
        for &(r, c) in &self.cells {
            b.top = b.top.min(r);
            b.bottom = b.bottom.max(r);
            b.left = b.left.min(c);
            b.right = b.right.max(c);
        }
        b
    }

    pub fn translated(&self, drow: i32, dcol: i32) -> SegmentMask {
        SegmentMask {
            label: self.label,
            cells: self
                .cells
                .iter()
                .map(|&(r, c)| (r + drow, c + dcol))
                .collect(),
        }
    }

    /// Number of shared cells (sorted merge).
    pub fn intersection(&self, other: &SegmentMask) -> usize {
        let (a, b) = (&self.cells, &other.cells);
        let (mut i, mut j, mut n) = (0, 0, 0);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    }

    pub fn iou(&self, other: &SegmentMask) -> f64 {
        let inter = self.intersection(other);
        let union = self.len() + other.len() - inter;
        inter as f64 / union as f64
    }
}

/// How the OOD mask of a pair was moved before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "shift")]
pub enum Transform {
    None,
    EdgeShift(i32),
    VerticalShift(i32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskPair {
    /// OOD-side mask after the transform.
    pub ood: SegmentMask,
    pub id: SegmentMask,
    pub transform: Transform,
    /// Index of the description feature that produced the pair.
    pub feature: usize,
}

impl MaskPair {
    pub fn iou(&self) -> f64 {
        self.ood.iou(&self.id)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FunctionalMap {
    pub pairs: Vec<MaskPair>,
}

impl FunctionalMap {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Ground-truth segmentation that treats every label in `backgrounds` as
/// background.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmenter {
    pub backgrounds: Vec<LabelId>,
    /// Labels at or above this id are unregistered in the training data.
    pub unknown: LabelId,
}

impl Segmenter {
    pub fn new(backgrounds: Vec<LabelId>, unknown: LabelId) -> Self {
        Self {
            backgrounds,
            unknown,
        }
    }

    pub fn segment(&self, image: &LabelGridImage) -> Vec<SegmentMask> {
        let bg = self.backgrounds.first().copied().unwrap_or(LabelId(0));
        ground_truth_segment(image, bg)
            .into_iter()
            .filter(|m| !self.backgrounds.contains(&m.label))
            .collect()
    }

    /// Whether a mask answers to `label` on the OOD side, where the reserved
    /// UNKNOWN id stands for any unregistered label.
    fn ood_matches(&self, mask: &SegmentMask, label: LabelId) -> bool {
        if label == self.unknown {
            mask.label >= self.unknown
        } else {
            mask.label == label
        }
    }
}

/// Pairs segments of the OOD image with segments of the ID image, one group
/// of pairs per description feature.
pub fn functional_map_from_masks(
    ood_masks: &[SegmentMask],
    id_masks: &[SegmentMask],
    desc: &CorrespondenceDescription,
    segmenter: &Segmenter,
) -> FunctionalMap {
    let mut pairs = Vec::new();
    for (fi, feature) in desc.features.iter().enumerate() {
        let Some((ood_label, id_label)) = feature.labels() else {
            continue;
        };
        for o in ood_masks
            .iter()
            .filter(|m| segmenter.ood_matches(m, ood_label.id))
        {
            for i in id_masks.iter().filter(|m| m.label == id_label.id) {
                let (ob, ib) = (o.bounding_box(), i.bounding_box());
                let (moved, transform) = match feature {
                    CorrespondenceFeature::AlignEdge { side, .. } => {
                        let d = match side {
                            EdgeSide::Left => ib.left - ob.left,
                            EdgeSide::Right => ib.right - ob.right,
                        };
                        (o.translated(0, d), Transform::EdgeShift(d))
                    }
                    CorrespondenceFeature::AlignVertical { anchor, .. } => {
                        let d = match anchor {
                            VerticalAnchor::Top => ib.top - ob.top,
                            VerticalAnchor::Base => ib.bottom - ob.bottom,
                        };
                        (o.translated(d, 0), Transform::VerticalShift(d))
                    }
                    _ => (o.clone(), Transform::None),
                };
                pairs.push(MaskPair {
                    ood: moved,
                    id: i.clone(),
                    transform,
                    feature: fi,
                });
            }
        }
    }
    FunctionalMap { pairs }
}

pub fn functional_map(
    ood_image: &LabelGridImage,
    id_image: &LabelGridImage,
    desc: &CorrespondenceDescription,
    segmenter: &Segmenter,
) -> FunctionalMap {
    functional_map_from_masks(
        &segmenter.segment(ood_image),
        &segmenter.segment(id_image),
        desc,
        segmenter,
    )
}

/// Summed IoU over all pairs; 0 for an empty map.
pub fn alignment(map: &FunctionalMap) -> f64 {
    map.pairs.iter().map(MaskPair::iou).sum()
}
