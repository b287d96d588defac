//! Synthetic multimodal segmentation data with planted per-class modality
//! fidelities.
//!
//! Each example partitions the grid into regions (Voronoi cells or parallel
//! bands) and draws every region's class independently from `prior`, so the
//! expected class frequencies equal the prior. Modality `t` renders class
//! `k` at intensity level `k`; with probability `1 - q^t_k` per voxel it
//! renders the confuser class instead (background for foreground classes,
//! class 1 for the background). Gaussian noise is added to every voxel.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LabeledExample};
use crate::dst::Frame;
use crate::error::{Error, Result};
use crate::features::ModalityImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shapes {
    Blobs,
    Stripes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub width: usize,
    pub height: usize,
    pub classes: usize,
    pub modalities: Vec<String>,
    pub channels: usize,
    /// `fidelity[t][k] ∈ [0.5, 1]`.
    pub fidelity: Vec<Vec<f64>>,
    /// Standard deviation of the additive noise.
    pub noise: f64,
    pub shapes: Shapes,
    /// Voronoi seeds or bands per example.
    pub regions: usize,
    /// Class probabilities of each region.
    pub prior: Vec<f64>,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            classes: 3,
            modalities: vec!["A".into(), "B".into()],
            channels: 1,
            fidelity: vec![vec![1.0, 1.0, 0.5], vec![1.0, 0.5, 1.0]],
            noise: 0.3,
            shapes: Shapes::Blobs,
            regions: 16,
            prior: vec![0.5, 0.25, 0.25],
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    /// Every violated constraint, prefixed with `prefix`.
    pub fn problems(&self, prefix: &str) -> Vec<String> {
        let mut out = Vec::new();
        if self.width == 0 || self.height == 0 {
            out.push(format!("{prefix}width and height must be at least 1"));
        }
        if self.classes < 2 {
            out.push(format!("{prefix}classes must be at least 2, got {}", self.classes));
        }
        if self.modalities.is_empty() {
            out.push(format!("{prefix}modalities must not be empty"));
        }
        if self.channels == 0 {
            out.push(format!("{prefix}channels must be at least 1"));
        }
        if self.fidelity.len() != self.modalities.len() {
            out.push(format!(
                "{prefix}fidelity has {} rows but there are {} modalities",
                self.fidelity.len(),
                self.modalities.len()
            ));
        }
        for (t, row) in self.fidelity.iter().enumerate() {
            if row.len() != self.classes {
                out.push(format!("{prefix}fidelity[{t}] has {} entries, expected {}", row.len(), self.classes));
            }
            for (k, q) in row.iter().enumerate() {
                if !(0.5..=1.0).contains(q) {
                    out.push(format!("{prefix}fidelity[{t}][{k}] = {q} is outside [0.5, 1]"));
                }
            }
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            out.push(format!("{prefix}noise must be a nonnegative finite number, got {}", self.noise));
        }
        if self.regions == 0 {
            out.push(format!("{prefix}regions must be at least 1"));
        }
        if self.prior.len() != self.classes {
            out.push(format!("{prefix}prior has {} entries, expected {}", self.prior.len(), self.classes));
        }
        if self.prior.iter().any(|p| !(*p >= 0.0 && p.is_finite())) || self.prior.iter().sum::<f64>() <= 0.0 {
            out.push(format!("{prefix}prior must be nonnegative with a positive sum"));
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.is_empty() || m.contains(|c: char| c.is_whitespace() || c == ',') {
                out.push(format!("{prefix}modality name {m:?} must be nonempty without whitespace or commas"));
            }
            if self.modalities[..i].contains(m) {
                out.push(format!("{prefix}modality name {m:?} is repeated"));
            }
        }
        out
    }

    fn validate(&self) -> Result<()> {
        let p = self.problems("");
        if p.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(p))
        }
    }
}

fn layout(spec: &SyntheticSpec, rng: &mut ChaCha8Rng) -> Vec<u16> {
    let classes = WeightedIndex::new(&spec.prior).expect("validated prior");
    let region_class: Vec<u16> = (0..spec.regions).map(|_| classes.sample(rng) as u16).collect();
    let (w, h) = (spec.width, spec.height);
    let mut labels = vec![0u16; w * h];
    match spec.shapes {
        Shapes::Blobs => {
            let seeds: Vec<(f64, f64)> =
                (0..spec.regions).map(|_| (rng.random::<f64>() * w as f64, rng.random::<f64>() * h as f64)).collect();
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let nearest = seeds
                        .iter()
                        .enumerate()
                        .map(|(i, (sx, sy))| (i, (px - sx).powi(2) + (py - sy).powi(2)))
                        .fold((0, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best })
                        .0;
                    labels[y * w + x] = region_class[nearest];
                }
            }
        }
        Shapes::Stripes => {
            let angle = rng.random::<f64>() * std::f64::consts::PI;
            let (dx, dy) = (angle.cos(), angle.sin());
            let proj = |x: usize, y: usize| (x as f64 + 0.5) * dx + (y as f64 + 0.5) * dy;
            let corners = [proj(0, 0), proj(w, 0), proj(0, h), proj(w, h)];
            let lo = corners.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = corners.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let band = (hi - lo) / spec.regions as f64;
            for y in 0..h {
                for x in 0..w {
                    let b = (((proj(x, y) - lo) / band) as usize).min(spec.regions - 1);
                    labels[y * w + x] = region_class[b];
                }
            }
        }
    }
    labels
}

fn confuser(k: usize) -> usize {
    if k == 0 {
        1
    } else {
        0
    }
}

fn render(spec: &SyntheticSpec, labels: &[u16], fidelity: &[f64], rng: &mut ChaCha8Rng) -> Result<ModalityImage> {
    let n = labels.len();
    let noise = Normal::new(0.0, spec.noise).expect("validated noise");
    let shown: Vec<usize> = labels
        .iter()
        .map(|&l| {
            let k = l as usize;
            if rng.random::<f64>() < fidelity[k] {
                k
            } else {
                confuser(k)
            }
        })
        .collect();
    let mut data = Vec::with_capacity(n * spec.channels);
    for _ in 0..spec.channels {
        data.extend(shown.iter().map(|&k| k as f64 + noise.sample(rng)));
    }
    ModalityImage::new(spec.width, spec.height, spec.channels, data)
}

/// `count` examples, deterministic in `spec.seed`.
pub fn generate(spec: &SyntheticSpec, count: usize) -> Result<Dataset> {
    spec.validate()?;
    let frame = Frame::numbered(spec.classes)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut examples = Vec::with_capacity(count);
    for i in 0..count {
        let labels = layout(spec, &mut rng);
        let images = spec
            .fidelity
            .iter()
            .map(|q| render(spec, &labels, q, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        examples.push(LabeledExample::new(format!("ex{i:04}"), images, labels)?);
    }
    Dataset::new(
        frame,
        spec.modalities.clone(),
        vec![spec.channels; spec.modalities.len()],
        spec.width,
        spec.height,
        examples,
    )
}
