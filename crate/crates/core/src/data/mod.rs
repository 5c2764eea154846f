//! Sequences on disk and in memory, the randomized training-pair generator,
//! patch cropping and the synthetic moving-object generator.

pub mod got;
pub mod raster;
pub mod sampler;
pub mod synth;

use std::path::PathBuf;
use std::sync::Arc;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, PatchSize};

pub use got::{export_got_style, load_got_style};
pub use raster::{crop_and_resize, image_to_map, Raster};
pub use sampler::{sample_pair, EdgeRule, PairSampler, PatchPair, Provenance};
pub use synth::{synth_sequence, SynthConfig};

/// A frame that is either resident or read from disk on demand.
#[derive(Debug, Clone)]
pub enum Frame {
    Memory(Arc<RgbImage>),
    File(PathBuf),
}

impl Frame {
    pub fn load(&self) -> Result<Arc<RgbImage>> {
        match self {
            Frame::Memory(img) => Ok(Arc::clone(img)),
            Frame::File(path) => {
                let img = image::open(path).map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?;
                Ok(Arc::new(img.to_rgb8()))
            }
        }
    }

    /// Resident copy of this frame.
    pub fn preload(&self) -> Result<Frame> {
        Ok(Frame::Memory(self.load()?))
    }
}

#[derive(Debug, Clone)]
pub struct SequenceRecord {
    pub name: String,
    pub frames: Vec<Frame>,
    /// Corner-form boxes in frame pixels, clamped to the frame.
    pub annotations: Vec<BoundingBox<f64>>,
    /// `true` when the target is fully in view.
    pub visible: Vec<bool>,
    pub frame_sizes: Vec<PatchSize<f64>>,
}

impl SequenceRecord {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if self.annotations.len() != n || self.visible.len() != n || self.frame_sizes.len() != n {
            return Err(Error::Structural(format!(
                "sequence {}: {} frames, {} annotations, {} visibility flags, {} sizes",
                self.name,
                n,
                self.annotations.len(),
                self.visible.len(),
                self.frame_sizes.len()
            )));
        }
        Ok(())
    }

    /// Copy with every frame loaded into memory.
    pub fn preloaded(&self) -> Result<SequenceRecord> {
        let frames = self.frames.iter().map(Frame::preload).collect::<Result<_>>()?;
        Ok(SequenceRecord {
            frames,
            ..self.clone()
        })
    }
}
