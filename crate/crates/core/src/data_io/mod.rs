//! Video sequences: synthetic generation and the DAVIS directory layout.

mod davis;
pub mod synthetic;

pub use davis::{
    davis_palette, read_davis_layout, read_label_dir, read_label_png, write_image, write_label_png,
    write_masks, write_sequences, LabelFile, ReadMode, ANNOTATIONS_DIR, IMAGES_DIR, MOTION_FILE,
};
pub use synthetic::{generate_synthetic, motion_records, MotionRecord, ObjectTrack, SyntheticSpec};

use crate::diffarray::Array;
use crate::error::{Error, Result};

/// Frames `[3, H, W]` in `[0, 1]` with per-object binary masks `[1, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoSequence {
    pub name: String,
    pub frames: Vec<Array<f32>>,
    /// Palette index of each object, ascending.
    pub object_ids: Vec<u8>,
    /// `masks[object][t]`; in inference mode only `t = 0` is present.
    pub masks: Vec<Vec<Array<f32>>>,
    /// Ground-truth motion for synthetic sequences.
    pub tracks: Option<Vec<ObjectTrack>>,
}

impl VideoSequence {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_objects(&self) -> usize {
        self.object_ids.len()
    }

    /// `(height, width)`
    pub fn dims(&self) -> Result<(usize, usize)> {
        let f = self
            .frames
            .first()
            .ok_or_else(|| Error::Data(format!("sequence {} has no frames", self.name)))?;
        let (_, h, w) = f.chw()?;
        Ok((h, w))
    }

    /// True when every object has a mask for every frame.
    pub fn fully_annotated(&self) -> bool {
        self.masks.iter().all(|m| m.len() == self.frames.len())
    }

    /// Merged label map of frame `t` (later objects win on overlap).
    pub fn label_map(&self, t: usize) -> Result<Vec<u8>> {
        let (h, w) = self.dims()?;
        let mut labels = vec![0u8; h * w];
        for (k, masks) in self.masks.iter().enumerate() {
            let m = masks.get(t).ok_or_else(|| {
                Error::Data(format!("sequence {}: no mask for frame {t}", self.name))
            })?;
            for (l, &v) in labels.iter_mut().zip(m.data()) {
                if v > 0.5 {
                    *l = self.object_ids[k];
                }
            }
        }
        Ok(labels)
    }

    /// Split label maps into per-object binary masks for `object_ids`.
    pub fn masks_from_labels(
        labels: &[Vec<u8>],
        object_ids: &[u8],
        height: usize,
        width: usize,
    ) -> Result<Vec<Vec<Array<f32>>>> {
        object_ids
            .iter()
            .map(|&id| {
                labels
                    .iter()
                    .map(|map| {
                        if map.len() != height * width {
                            return Err(Error::Data(format!(
                                "label map has {} pixels, expected {height}x{width}",
                                map.len()
                            )));
                        }
                        Array::new(
                            [1, height, width],
                            map.iter().map(|&l| f32::from(u8::from(l == id))).collect(),
                        )
                    })
                    .collect()
            })
            .collect()
    }

    /// Consecutive training pairs `(t - 1, t)` available in this sequence.
    pub fn num_pairs(&self) -> usize {
        self.len().saturating_sub(1)
    }
}
