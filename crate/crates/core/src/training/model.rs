//! The full per-voxel pipeline: feature extraction, evidence mapping and
//! fusion, with its reverse pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::LabeledExample;
use crate::dst::Frame;
use crate::enn::{init_enn, EnnParameters, EnnRawGradients, EnnTrace, NoCount};
use crate::error::{Error, Result};
use crate::features::{init_extractor, ExtractorGradients, FeatureExtractor, FeatureMap, PatchExtractor};
use crate::fusion::{fuse_voxel, fuse_voxel_backward, init_reliability, FusedPrediction, ReliabilityMatrix};
use crate::training::loss::dice_term;

/// Architecture sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelShape {
    /// Features per voxel (`H`).
    pub features: usize,
    /// Patch radius of the extractor.
    pub radius: usize,
    /// Hidden width of the extractor.
    pub hidden: usize,
    /// Prototypes per evidence layer (`I`).
    pub prototypes: usize,
}

impl Default for ModelShape {
    fn default() -> Self {
        Self {
            features: crate::features::DEFAULT_FEATURES,
            radius: crate::features::DEFAULT_RADIUS,
            hidden: crate::features::DEFAULT_HIDDEN,
            prototypes: crate::enn::DEFAULT_PROTOTYPES,
        }
    }
}

/// Which parameter groups an optimizer touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Trainable {
    pub extractors: bool,
    pub evidence: bool,
    pub reliability: bool,
}

impl Trainable {
    pub const ALL: Trainable = Trainable { extractors: true, evidence: true, reliability: true };
    pub const FROZEN_FEATURES: Trainable = Trainable { extractors: false, evidence: true, reliability: true };
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<E = PatchExtractor> {
    pub frame: Frame,
    pub modalities: Vec<String>,
    pub extractors: Vec<E>,
    pub enns: Vec<EnnParameters>,
    pub reliability: ReliabilityMatrix,
}

impl Model<PatchExtractor> {
    /// Fresh model; component seeds are drawn from one generator seeded
    /// with `seed`, modality by modality.
    pub fn init(frame: &Frame, modalities: Vec<String>, channels: &[usize], shape: ModelShape, seed: u64) -> Result<Self> {
        if channels.len() != modalities.len() {
            return Err(Error::DimensionMismatch { what: "channel list", expected: modalities.len(), got: channels.len() });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut extractors = Vec::new();
        let mut enns = Vec::new();
        for &c in channels {
            extractors.push(init_extractor(c, shape.features, shape.radius, shape.hidden, rng.random())?);
            enns.push(init_enn(shape.prototypes, frame.len(), shape.features, rng.random())?);
        }
        let reliability = init_reliability(frame, modalities.clone())?;
        Ok(Self { frame: frame.clone(), modalities, extractors, enns, reliability })
    }
}

/// Per-modality layer outputs over a grid.
#[derive(Debug, Clone)]
pub struct ModalityOutput {
    pub features: FeatureMap,
    /// `N × K`.
    pub singletons: Vec<f64>,
    pub theta: Vec<f64>,
    traces: Vec<EnnTrace>,
}

impl ModalityOutput {
    /// Normalized contour `pl_k / Σ pl`, `N × K`.
    pub fn probabilities(&self, k: usize) -> Vec<f64> {
        contour_probabilities(&self.singletons, &self.theta, k)
    }
}

pub fn contour_probabilities(singletons: &[f64], theta: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(singletons.len());
    for (row, &t) in singletons.chunks_exact(k).zip(theta) {
        let total: f64 = row.iter().sum::<f64>() + k as f64 * t;
        out.extend(row.iter().map(|m| (m + t) / total));
    }
    out
}

#[derive(Debug, Clone)]
pub struct ExampleOutput {
    pub modalities: Vec<ModalityOutput>,
    /// Per voxel.
    pub fused: Vec<FusedPrediction>,
}

impl ExampleOutput {
    /// Fused probabilities, `N × K`.
    pub fn fused_probabilities(&self) -> Vec<f64> {
        self.fused.iter().flat_map(|f| f.probabilities.iter().copied()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub source: f64,
    pub fused: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.source + self.fused
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradients {
    pub extractors: Vec<ExtractorGradients>,
    pub enns: Vec<EnnRawGradients>,
    pub raw_beta: Vec<f64>,
}

impl ModelGradients {
    pub fn zeros<E: FeatureExtractor>(model: &Model<E>) -> Self {
        Self {
            extractors: model.extractors.iter().map(|e| e.zero_gradients()).collect(),
            enns: model.enns.iter().map(EnnRawGradients::zeros).collect(),
            raw_beta: vec![0.0; model.reliability.raw.len()],
        }
    }

    pub fn accumulate(&mut self, other: &ModelGradients) {
        self.extractors.iter_mut().zip(&other.extractors).for_each(|(a, b)| a.accumulate(b));
        self.enns.iter_mut().zip(&other.enns).for_each(|(a, b)| a.accumulate(b));
        self.raw_beta.iter_mut().zip(&other.raw_beta).for_each(|(a, b)| *a += b);
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.groups_mut(Trainable::ALL) {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// Same order as [`Model::groups_mut`].
    pub fn groups(&self, sel: Trainable) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if sel.extractors {
            out.extend(self.extractors.iter().flat_map(|e| e.params.iter().map(Vec::as_slice)));
        }
        if sel.evidence {
            out.extend(self.enns.iter().flat_map(|e| e.slices()));
        }
        if sel.reliability {
            out.push(&self.raw_beta);
        }
        out
    }

    pub fn groups_mut(&mut self, sel: Trainable) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if sel.extractors {
            out.extend(self.extractors.iter_mut().flat_map(|e| e.params.iter_mut().map(Vec::as_mut_slice)));
        }
        if sel.evidence {
            out.extend(self.enns.iter_mut().flat_map(|e| e.slices_mut()));
        }
        if sel.reliability {
            out.push(&mut self.raw_beta);
        }
        out
    }
}

impl<E: FeatureExtractor> Model<E> {
    pub fn n_classes(&self) -> usize {
        self.frame.len()
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    /// Parameter slices: extractors (modality by modality), evidence layers,
    /// then the reliability logits.
    pub fn groups_mut(&mut self, sel: Trainable) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if sel.extractors {
            out.extend(self.extractors.iter_mut().flat_map(|e| e.params_mut()));
        }
        if sel.evidence {
            out.extend(self.enns.iter_mut().flat_map(|e| e.param_slices_mut()));
        }
        if sel.reliability {
            out.push(&mut self.reliability.raw);
        }
        out
    }

    pub fn groups(&self, sel: Trainable) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        if sel.extractors {
            out.extend(self.extractors.iter().flat_map(|e| e.params()));
        }
        if sel.evidence {
            out.extend(self.enns.iter().flat_map(|e| e.param_slices()));
        }
        if sel.reliability {
            out.push(&self.reliability.raw);
        }
        out
    }

    fn check_example(&self, ex: &LabeledExample) -> Result<()> {
        if ex.images.len() != self.n_modalities() {
            return Err(Error::DimensionMismatch { what: "modalities", expected: self.n_modalities(), got: ex.images.len() });
        }
        Ok(())
    }

    pub fn forward(&self, ex: &LabeledExample) -> Result<ExampleOutput> {
        self.check_example(ex)?;
        let k = self.n_classes();
        let n = ex.voxels();
        let mut modalities = Vec::with_capacity(self.n_modalities());
        for ((img, extractor), enn) in ex.images.iter().zip(&self.extractors).zip(&self.enns) {
            let features = extractor.extract(img)?;
            let layer = enn.resolve();
            let mut singletons = Vec::with_capacity(n * k);
            let mut theta = Vec::with_capacity(n);
            let mut traces = Vec::with_capacity(n);
            for v in 0..n {
                let (s, t, trace) = layer.forward(features.feature(v), &mut NoCount);
                singletons.extend(s);
                theta.push(t);
                traces.push(trace);
            }
            modalities.push(ModalityOutput { features, singletons, theta, traces });
        }
        let beta = self.reliability.betas();
        let t_count = self.n_modalities();
        let mut pl = vec![0.0; t_count * k];
        let mut fused = Vec::with_capacity(n);
        for v in 0..n {
            for (t, m) in modalities.iter().enumerate() {
                for c in 0..k {
                    pl[t * k + c] = m.singletons[v * k + c] + m.theta[v];
                }
            }
            fused.push(fuse_voxel(&pl, &beta, k)?);
        }
        Ok(ExampleOutput { modalities, fused })
    }

    /// `loss_s` and `loss_f` for one example.
    pub fn loss(&self, ex: &LabeledExample) -> Result<LossParts> {
        let out = self.forward(ex)?;
        let g = ex.one_hot(self.n_classes());
        let mut source = 0.0;
        for m in &out.modalities {
            source += dice_term(&m.singletons, &g)?.0;
        }
        let fused = dice_term(&out.fused_probabilities(), &g)?.0;
        Ok(LossParts { source, fused })
    }

    /// Loss and gradients of `loss_s + loss_f` with respect to the selected
    /// parameter groups (unselected groups are left zero).
    pub fn loss_and_gradients(&self, ex: &LabeledExample, sel: Trainable) -> Result<(LossParts, ModelGradients)> {
        let out = self.forward(ex)?;
        let k = self.n_classes();
        let n = ex.voxels();
        let g = ex.one_hot(k);
        let mut grads = ModelGradients::zeros(self);

        let mut source = 0.0;
        let mut grad_singletons = Vec::with_capacity(self.n_modalities());
        for m in &out.modalities {
            let (l, gs) = dice_term(&m.singletons, &g)?;
            source += l;
            grad_singletons.push(gs);
        }
        let probs = out.fused_probabilities();
        let (fused_loss, grad_probs) = dice_term(&probs, &g)?;

        let t_count = self.n_modalities();
        let beta = self.reliability.betas();
        let mut grad_theta: Vec<Vec<f64>> = vec![vec![0.0; n]; t_count];
        let mut pl = vec![0.0; t_count * k];
        let mut grad_pl = vec![0.0; t_count * k];
        for v in 0..n {
            for (t, m) in out.modalities.iter().enumerate() {
                for c in 0..k {
                    pl[t * k + c] = m.singletons[v * k + c] + m.theta[v];
                }
            }
            grad_pl.iter_mut().for_each(|x| *x = 0.0);
            fuse_voxel_backward(
                &pl,
                &beta,
                &out.fused[v],
                &grad_probs[v * k..(v + 1) * k],
                &mut grad_pl,
                &mut grads.raw_beta,
            );
            // pl_k = m({θ_k}) + m(Θ).
            for t in 0..t_count {
                for c in 0..k {
                    let gp = grad_pl[t * k + c];
                    grad_singletons[t][v * k + c] += gp;
                    grad_theta[t][v] += gp;
                }
            }
        }

        if sel.evidence || sel.extractors {
            for (t, m) in out.modalities.iter().enumerate() {
                let layer = self.enns[t].resolve();
                let mut upstream = FeatureMap::zeros(m.features.width, m.features.height, m.features.dim);
                for v in 0..n {
                    let eg = layer.backward(
                        m.features.feature(v),
                        &m.traces[v],
                        &grad_singletons[t][v * k..(v + 1) * k],
                        grad_theta[t][v],
                    );
                    if sel.evidence {
                        eg.add_raw_into(&layer, &mut grads.enns[t]);
                    }
                    upstream.feature_mut(v).copy_from_slice(&eg.input);
                }
                if sel.extractors {
                    grads.extractors[t] = self.extractors[t].extract_backward(&ex.images[t], &upstream, false)?;
                }
            }
        }
        if !sel.reliability {
            grads.raw_beta.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok((LossParts { source, fused: fused_loss }, grads))
    }
}
