//! Dataset container.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "EVFDSET\0", version u16
//! T u32, K u32, width u32, height u32, example count u64
//! K class labels, T modality names (u32 length + UTF-8 each)
//! T channel counts u32
//! per example: id string, then per modality C×height×width f64,
//!              then height×width u16 labels
//! ```

use std::path::Path;

use crate::dataset::{Dataset, LabeledExample};
use crate::dst::Frame;
use crate::error::{Error, Result};
use crate::features::ModalityImage;
use crate::io::binio::{ByteReader, ByteWriter};

pub const DATASET_MAGIC: &[u8; 8] = b"EVFDSET\0";
pub const DATASET_VERSION: u16 = 1;

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.u16(DATASET_VERSION);
    w.u32(d.n_modalities() as u32);
    w.u32(d.n_classes() as u32);
    w.u32(d.width as u32);
    w.u32(d.height as u32);
    w.u64(d.examples.len() as u64);
    d.frame.labels().iter().for_each(|l| w.str(l));
    d.modalities.iter().for_each(|m| w.str(m));
    d.channels.iter().for_each(|&c| w.u32(c as u32));
    for ex in &d.examples {
        w.str(&ex.id);
        ex.images.iter().for_each(|img| w.f64s(&img.data));
        ex.labels.iter().for_each(|&l| w.u16(l));
    }
    w.into_inner()
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(bytes);
    if r.take(DATASET_MAGIC.len()).ok() != Some(&DATASET_MAGIC[..]) {
        return Err(Error::BadMagic("dataset container"));
    }
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(Error::Version { what: "dataset container", found: version as u32, expected: DATASET_VERSION as u32 });
    }
    let t = r.u32()? as usize;
    let k = r.u32()? as usize;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let count = r.usize()?;
    let labels = (0..k).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let modalities = (0..t).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
    let channels = (0..t).map(|_| r.u32().map(|c| c as usize)).collect::<Result<Vec<_>>>()?;
    let frame = Frame::new(labels)?;
    let n = width * height;
    let mut examples = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let id = r.str()?;
        let mut images = Vec::with_capacity(t);
        for &c in &channels {
            let len = c.checked_mul(n).ok_or(Error::Truncated)?;
            images.push(ModalityImage::new(width, height, c, r.f64s(len)?)?);
        }
        let raw = r.take(n.checked_mul(2).ok_or(Error::Truncated)?)?;
        let grid = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        examples.push(LabeledExample::new(id, images, grid)?);
    }
    r.finish()?;
    Dataset::new(frame, modalities, channels, width, height, examples)
}

pub fn save_dataset(d: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, encode_dataset(d))?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn small() -> Dataset {
        generate(&SyntheticSpec { width: 5, height: 4, channels: 2, ..Default::default() }, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_byte_identical() {
        let d = small();
        let bytes = encode_dataset(&d);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, d);
        assert_eq!(encode_dataset(&back), bytes);
    }

    #[test]
    fn truncation_and_magic_are_rejected() {
        let bytes = encode_dataset(&small());
        for cut in [9, 20, bytes.len() / 2, bytes.len() - 1] {
            let err = decode_dataset(&bytes[..cut]).unwrap_err();
            assert_eq!(err.to_string(), "unexpected end of payload", "cut at {cut}");
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(decode_dataset(&bad).unwrap_err().to_string(), "not a dataset container");
        assert_eq!(decode_dataset(b"EVF").unwrap_err().to_string(), "not a dataset container");
        let mut newer = bytes.clone();
        newer[8] = 9;
        assert_eq!(decode_dataset(&newer).unwrap_err().code(), "E_FORMAT");
        let mut extra = bytes;
        extra.push(0);
        assert!(decode_dataset(&extra).is_err());
    }

    #[test]
    fn out_of_range_label_is_rejected() {
        let mut bytes = encode_dataset(&small());
        let n = bytes.len();
        // The last label of the last example.
        bytes[n - 2] = 7;
        assert!(decode_dataset(&bytes).is_err());
    }
}
