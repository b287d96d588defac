//! Model checkpoints.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic "EVFCKPT\0", version u16
//! config echo (u32 length + UTF-8 JSON)
//! K u32, class labels; T u32, modality names
//! per modality: extractor (see FeatureExtractor::encode)
//! per modality: I u32, H u32, K u32, prototypes (I×H), alpha raw (I),
//!               gamma raw (I), membership raw (I×K), all f64
//! reliability logits T×K f64
//! optimizer flag u8; if 1: step u64, group count u32, per group
//!               length u64, first moments, second moments
//! best flag u8; if 1: epoch u64, stage u8, val Dice f64, val loss f64
//! ```
//!
//! Constrained parameters are stored as their unconstrained values so a
//! roundtrip reproduces every output bit for bit.

use std::path::Path;

use crate::dst::Frame;
use crate::enn::EnnParameters;
use crate::error::{Error, Result};
use crate::features::{FeatureExtractor, PatchExtractor};
use crate::fusion::ReliabilityMatrix;
use crate::io::binio::{ByteReader, ByteWriter};
use crate::training::{BestRecord, Model, OptimizerState};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EVFCKPT\0";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<E = PatchExtractor> {
    pub config_json: String,
    pub model: Model<E>,
    pub optimizer: Option<OptimizerState>,
    pub best: Option<BestRecord>,
}

impl<E: FeatureExtractor> Checkpoint<E> {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u16(CHECKPOINT_VERSION);
        w.str(&self.config_json);
        let m = &self.model;
        w.u32(m.frame.len() as u32);
        m.frame.labels().iter().for_each(|l| w.str(l));
        w.u32(m.modalities.len() as u32);
        m.modalities.iter().for_each(|n| w.str(n));
        m.extractors.iter().for_each(|e| e.encode(&mut w));
        for enn in &m.enns {
            w.u32(enn.n_prototypes() as u32);
            w.u32(enn.input_dim() as u32);
            w.u32(enn.n_classes() as u32);
            enn.param_slices().iter().for_each(|s| w.f64s(s));
        }
        w.f64s(&m.reliability.raw);
        match &self.optimizer {
            None => w.u8(0),
            Some(s) => {
                w.u8(1);
                w.u64(s.step);
                w.u32(s.first.len() as u32);
                for (a, b) in s.first.iter().zip(&s.second) {
                    w.u64(a.len() as u64);
                    w.f64s(a);
                    w.f64s(b);
                }
            }
        }
        match &self.best {
            None => w.u8(0),
            Some(b) => {
                w.u8(1);
                w.u64(b.epoch as u64);
                w.u8(b.stage);
                w.f64(b.val_dice_fused);
                w.f64(b.val_loss);
            }
        }
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(CHECKPOINT_MAGIC.len()).ok() != Some(&CHECKPOINT_MAGIC[..]) {
            return Err(Error::BadMagic("checkpoint"));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { what: "checkpoint", found: version as u32, expected: CHECKPOINT_VERSION as u32 });
        }
        let config_json = r.str()?;
        let k = r.u32()? as usize;
        let frame = Frame::new((0..k).map(|_| r.str()).collect::<Result<Vec<_>>>()?)?;
        let t = r.u32()? as usize;
        let modalities = (0..t).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let extractors = (0..t).map(|_| E::decode(&mut r)).collect::<Result<Vec<_>>>()?;
        let mut enns = Vec::with_capacity(t);
        for _ in 0..t {
            let i = r.u32()? as usize;
            let h = r.u32()? as usize;
            let kk = r.u32()? as usize;
            if kk != k {
                return Err(Error::Format(format!("evidence layer has {kk} classes, frame has {k}")));
            }
            let prototypes = r.f64s(i.checked_mul(h).ok_or(Error::Truncated)?)?;
            let alpha = r.f64s(i)?;
            let gamma = r.f64s(i)?;
            let memberships = r.f64s(i.checked_mul(k).ok_or(Error::Truncated)?)?;
            enns.push(EnnParameters::from_raw(i, h, k, prototypes, alpha, gamma, memberships)?);
        }
        let raw = r.f64s(t.checked_mul(k).ok_or(Error::Truncated)?)?;
        let reliability = ReliabilityMatrix::from_raw(&frame, modalities.clone(), raw)?;
        for (e, enn) in extractors.iter().zip(&enns) {
            if e.feature_dim() != enn.input_dim() {
                return Err(Error::Format(format!(
                    "extractor emits {} features but the evidence layer expects {}",
                    e.feature_dim(),
                    enn.input_dim()
                )));
            }
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let groups = r.u32()? as usize;
                let mut first = Vec::new();
                let mut second = Vec::new();
                for _ in 0..groups {
                    let n = r.usize()?;
                    first.push(r.f64s(n)?);
                    second.push(r.f64s(n)?);
                }
                Some(OptimizerState { first, second, step })
            }
            f => return Err(Error::Format(format!("invalid optimizer flag {f}"))),
        };
        let best = match r.u8()? {
            0 => None,
            1 => Some(BestRecord {
                epoch: r.usize()?,
                stage: r.u8()?,
                val_dice_fused: r.f64()?,
                val_loss: r.f64()?,
            }),
            f => return Err(Error::Format(format!("invalid best-record flag {f}"))),
        };
        r.finish()?;
        let model = Model { frame, modalities, extractors, enns, reliability };
        Ok(Self { config_json, model, optimizer, best })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&std::fs::read(path)?)
    }
}
