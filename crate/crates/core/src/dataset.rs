//! Labeled multimodal examples.

use crate::dst::Frame;
use crate::error::{Error, Result};
use crate::features::ModalityImage;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub id: String,
    /// One image per modality.
    pub images: Vec<ModalityImage>,
    /// Per-voxel class index, row-major.
    pub labels: Vec<u16>,
}

impl LabeledExample {
    pub fn new(id: String, images: Vec<ModalityImage>, labels: Vec<u16>) -> Result<Self> {
        let first = images.first().ok_or(Error::Empty("modality list"))?;
        let (w, h) = (first.width, first.height);
        for img in &images {
            if img.width != w || img.height != h {
                return Err(Error::DimensionMismatch { what: "modality grid", expected: w * h, got: img.width * img.height });
            }
        }
        if labels.len() != w * h {
            return Err(Error::DimensionMismatch { what: "label grid", expected: w * h, got: labels.len() });
        }
        Ok(Self { id, images, labels })
    }

    pub fn width(&self) -> usize {
        self.images[0].width
    }

    pub fn height(&self) -> usize {
        self.images[0].height
    }

    pub fn voxels(&self) -> usize {
        self.labels.len()
    }

    /// `G_kn`, voxel-major with stride `k`.
    pub fn one_hot(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.labels.len() * k];
        for (n, &l) in self.labels.iter().enumerate() {
            out[n * k + l as usize] = 1.0;
        }
        out
    }
}

/// A set of examples sharing frame, modalities and grid size.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub frame: Frame,
    pub modalities: Vec<String>,
    /// Channels per modality.
    pub channels: Vec<usize>,
    pub width: usize,
    pub height: usize,
    pub examples: Vec<LabeledExample>,
}

impl Dataset {
    pub fn new(
        frame: Frame,
        modalities: Vec<String>,
        channels: Vec<usize>,
        width: usize,
        height: usize,
        examples: Vec<LabeledExample>,
    ) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Empty("modality list"));
        }
        if channels.len() != modalities.len() {
            return Err(Error::DimensionMismatch { what: "channel list", expected: modalities.len(), got: channels.len() });
        }
        let k = frame.len();
        for ex in &examples {
            if ex.images.len() != modalities.len() {
                return Err(Error::DimensionMismatch { what: "modalities", expected: modalities.len(), got: ex.images.len() });
            }
            if ex.width() != width || ex.height() != height {
                return Err(Error::DimensionMismatch { what: "grid", expected: width * height, got: ex.voxels() });
            }
            for (img, &c) in ex.images.iter().zip(&channels) {
                if img.channels != c {
                    return Err(Error::DimensionMismatch { what: "channels", expected: c, got: img.channels });
                }
            }
            if let Some(&bad) = ex.labels.iter().find(|&&l| l as usize >= k) {
                return Err(Error::Format(format!("label {bad} outside 0..{k} in example {}", ex.id)));
            }
        }
        Ok(Self { frame, modalities, channels, width, height, examples })
    }

    pub fn n_classes(&self) -> usize {
        self.frame.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    /// Consecutive train/validation/test slices.
    pub fn split(&self, train: usize, val: usize, test: usize) -> Result<Splits<'_>> {
        let need = train + val + test;
        if need > self.examples.len() {
            return Err(Error::Config(vec![format!(
                "split needs {need} examples but the dataset has {}",
                self.examples.len()
            )]));
        }
        let (a, rest) = self.examples.split_at(train);
        let (b, rest) = rest.split_at(val);
        Ok(Splits { train: a, val: b, test: &rest[..test] })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a [LabeledExample],
    pub val: &'a [LabeledExample],
    pub test: &'a [LabeledExample],
}
