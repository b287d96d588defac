//! Per-modality feature extraction.
//!
//! [`FeatureExtractor`] is the contract the evidence layers consume: one
//! `H`-dimensional feature vector per voxel. [`PatchExtractor`] is the small
//! reference network: it reads the `(2r+1)²` neighbourhood of each voxel
//! (edge-replicated) and applies a stack of affine layers with `tanh`
//! between consecutive layers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::binio::{ByteReader, ByteWriter};

pub const DEFAULT_RADIUS: usize = 1;
pub const DEFAULT_HIDDEN: usize = 16;
pub const DEFAULT_FEATURES: usize = 2;

/// Raw intensity planes of one modality, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityImage {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// `channels × height × width`.
    pub data: Vec<f64>,
}

impl ModalityImage {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || width == 0 || height == 0 {
            return Err(Error::Empty("image"));
        }
        let expected = width * height * channels;
        if data.len() != expected {
            return Err(Error::DimensionMismatch { what: "image data", expected, got: data.len() });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("image contains non-finite intensities".into()));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn voxels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn at(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Voxel-major features: the `dim` values of voxel `n` are contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(width: usize, height: usize, dim: usize) -> Self {
        Self { width, height, dim, data: vec![0.0; width * height * dim] }
    }

    pub fn voxels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn feature(&self, n: usize) -> &[f64] {
        &self.data[n * self.dim..(n + 1) * self.dim]
    }

    #[inline]
    pub fn feature_mut(&mut self, n: usize) -> &mut [f64] {
        &mut self.data[n * self.dim..(n + 1) * self.dim]
    }
}

/// Gradients from [`FeatureExtractor::extract_backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorGradients {
    /// One entry per slice of [`FeatureExtractor::params`], same order.
    pub params: Vec<Vec<f64>>,
    /// With respect to the image data, if requested.
    pub input: Option<Vec<f64>>,
}

impl ExtractorGradients {
    pub fn accumulate(&mut self, other: &ExtractorGradients) {
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

pub trait FeatureExtractor: Clone + Send + Sync {
    fn in_channels(&self) -> usize;
    fn feature_dim(&self) -> usize;
    fn extract(&self, img: &ModalityImage) -> Result<FeatureMap>;
    fn extract_backward(&self, img: &ModalityImage, upstream: &FeatureMap, want_input: bool)
        -> Result<ExtractorGradients>;
    fn params(&self) -> Vec<&[f64]>;
    fn params_mut(&mut self) -> Vec<&mut [f64]>;
    fn encode(&self, w: &mut ByteWriter);
    fn decode(r: &mut ByteReader<'_>) -> Result<Self>;

    fn zero_gradients(&self) -> ExtractorGradients {
        ExtractorGradients { params: self.params().iter().map(|p| vec![0.0; p.len()]).collect(), input: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub inputs: usize,
    pub outputs: usize,
    /// `outputs × inputs`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(Error::DimensionMismatch { what: "layer weights", expected: inputs * outputs, got: weights.len() });
        }
        if bias.len() != outputs {
            return Err(Error::DimensionMismatch { what: "layer bias", expected: outputs, got: bias.len() });
        }
        Ok(Self { inputs, outputs, weights, bias })
    }

    #[inline]
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        for (o, (row, b)) in out.iter_mut().zip(self.weights.chunks_exact(self.inputs).zip(&self.bias)) {
            *o = b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchExtractor {
    pub in_channels: usize,
    pub radius: usize,
    pub layers: Vec<DenseLayer>,
}

impl PatchExtractor {
    pub fn new(in_channels: usize, radius: usize, layers: Vec<DenseLayer>) -> Result<Self> {
        let first = layers.first().ok_or(Error::Empty("layer stack"))?;
        let patch = in_channels * (2 * radius + 1).pow(2);
        if first.inputs != patch {
            return Err(Error::DimensionMismatch { what: "first layer inputs", expected: patch, got: first.inputs });
        }
        for pair in layers.windows(2) {
            if pair[1].inputs != pair[0].outputs {
                return Err(Error::DimensionMismatch {
                    what: "layer chain",
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        Ok(Self { in_channels, radius, layers })
    }

    pub fn patch_len(&self) -> usize {
        self.in_channels * (2 * self.radius + 1).pow(2)
    }

    /// Gathers the edge-replicated patch around `(x, y)`, channel-major
    /// then row then column.
    fn gather(&self, img: &ModalityImage, x: usize, y: usize, out: &mut [f64]) {
        let r = self.radius as isize;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut i = 0;
        for c in 0..self.in_channels {
            for dy in -r..=r {
                let yy = clamp(y as isize + dy, img.height);
                for dx in -r..=r {
                    out[i] = img.at(c, clamp(x as isize + dx, img.width), yy);
                    i += 1;
                }
            }
        }
    }

    fn patch_source(&self, img: &ModalityImage, x: usize, y: usize, i: usize) -> usize {
        let side = 2 * self.radius + 1;
        let c = i / (side * side);
        let dy = (i / side) % side;
        let dx = i % side;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let yy = clamp(y as isize + dy as isize - self.radius as isize, img.height);
        let xx = clamp(x as isize + dx as isize - self.radius as isize, img.width);
        (c * img.height + yy) * img.width + xx
    }

    fn check_image(&self, img: &ModalityImage) -> Result<()> {
        if img.channels != self.in_channels {
            return Err(Error::DimensionMismatch { what: "image channels", expected: self.in_channels, got: img.channels });
        }
        Ok(())
    }

    /// Forward pass at one voxel; `acts[l]` receives the post-activation
    /// input of layer `l + 1` (the last entry is the feature vector).
    fn forward_voxel(&self, patch: &[f64], acts: &mut [Vec<f64>]) {
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = acts.split_at_mut(l);
            let input = if l == 0 { patch } else { &before[l - 1][..] };
            let out = &mut after[0];
            layer.apply(input, out);
            if l < last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
        }
    }

    fn act_buffers(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|l| vec![0.0; l.outputs]).collect()
    }
}

impl FeatureExtractor for PatchExtractor {
    fn in_channels(&self) -> usize {
        self.in_channels
    }

    fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    fn extract(&self, img: &ModalityImage) -> Result<FeatureMap> {
        self.check_image(img)?;
        let mut out = FeatureMap::zeros(img.width, img.height, self.feature_dim());
        let mut patch = vec![0.0; self.patch_len()];
        let mut acts = self.act_buffers();
        for y in 0..img.height {
            for x in 0..img.width {
                self.gather(img, x, y, &mut patch);
                self.forward_voxel(&patch, &mut acts);
                out.feature_mut(y * img.width + x).copy_from_slice(acts.last().unwrap());
            }
        }
        Ok(out)
    }

    fn extract_backward(
        &self,
        img: &ModalityImage,
        upstream: &FeatureMap,
        want_input: bool,
    ) -> Result<ExtractorGradients> {
        self.check_image(img)?;
        if upstream.width != img.width || upstream.height != img.height || upstream.dim != self.feature_dim() {
            return Err(Error::DimensionMismatch {
                what: "upstream feature gradient",
                expected: img.voxels() * self.feature_dim(),
                got: upstream.data.len(),
            });
        }
        let mut grads = self.zero_gradients();
        let mut input_grad = want_input.then(|| vec![0.0; img.data.len()]);
        let mut patch = vec![0.0; self.patch_len()];
        let mut acts = self.act_buffers();
        let mut delta: Vec<Vec<f64>> = self.act_buffers();
        let mut patch_grad = vec![0.0; self.patch_len()];
        let n_layers = self.layers.len();
        for y in 0..img.height {
            for x in 0..img.width {
                let n = y * img.width + x;
                let g_out = upstream.feature(n);
                if g_out.iter().all(|v| *v == 0.0) {
                    continue;
                }
                self.gather(img, x, y, &mut patch);
                self.forward_voxel(&patch, &mut acts);
                delta[n_layers - 1].copy_from_slice(g_out);
                for l in (0..n_layers).rev() {
                    let layer = &self.layers[l];
                    let input: &[f64] = if l == 0 { &patch } else { &acts[l - 1] };
                    let (gw, gb) = grads.params.split_at_mut(2 * l + 1);
                    let gw = &mut gw[2 * l];
                    let gb = &mut gb[0];
                    for o in 0..layer.outputs {
                        let d = delta[l][o];
                        if d == 0.0 {
                            continue;
                        }
                        gb[o] += d;
                        let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                        row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
                    }
                    if l > 0 {
                        let (below, here) = delta.split_at_mut(l);
                        let prev = &mut below[l - 1];
                        for (i, p) in prev.iter_mut().enumerate() {
                            let s: f64 = (0..layer.outputs).map(|o| layer.weights[o * layer.inputs + i] * here[0][o]).sum();
                            let a = acts[l - 1][i];
                            *p = s * (1.0 - a * a);
                        }
                    } else if let Some(ig) = input_grad.as_mut() {
                        for (i, pg) in patch_grad.iter_mut().enumerate() {
                            *pg = (0..layer.outputs).map(|o| layer.weights[o * layer.inputs + i] * delta[0][o]).sum();
                        }
                        for (i, pg) in patch_grad.iter().enumerate() {
                            ig[self.patch_source(img, x, y, i)] += pg;
                        }
                    }
                }
            }
        }
        grads.input = input_grad;
        Ok(grads)
    }

    /// Weights then bias, layer by layer.
    fn params(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [&l.weights[..], &l.bias[..]]).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weights[..], &mut l.bias[..]]).collect()
    }

    fn encode(&self, w: &mut ByteWriter) {
        w.u32(self.in_channels as u32);
        w.u32(self.radius as u32);
        w.u32(self.layers.len() as u32);
        for l in &self.layers {
            w.u32(l.inputs as u32);
            w.u32(l.outputs as u32);
            w.f64s(&l.weights);
            w.f64s(&l.bias);
        }
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self> {
        let in_channels = r.u32()? as usize;
        let radius = r.u32()? as usize;
        let n = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n.min(64));
        for _ in 0..n {
            let inputs = r.u32()? as usize;
            let outputs = r.u32()? as usize;
            let weights = r.f64s(inputs * outputs)?;
            let bias = r.f64s(outputs)?;
            layers.push(DenseLayer::new(inputs, outputs, weights, bias)?);
        }
        PatchExtractor::new(in_channels, radius, layers)
    }
}

/// Two-layer patch network with weights drawn from `N(0, 1/fan_in)` and
/// zero biases.
pub fn init_extractor(channels: usize, features: usize, radius: usize, hidden: usize, seed: u64) -> Result<PatchExtractor> {
    if channels == 0 || features == 0 || hidden == 0 {
        return Err(Error::Empty("extractor"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patch = channels * (2 * radius + 1).pow(2);
    let mut layer = |inputs: usize, outputs: usize| {
        let dist = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("positive variance");
        let weights = (0..inputs * outputs).map(|_| dist.sample(&mut rng)).collect();
        DenseLayer::new(inputs, outputs, weights, vec![0.0; outputs])
    };
    let first = layer(patch, hidden)?;
    let second = layer(hidden, features)?;
    PatchExtractor::new(channels, radius, vec![first, second])
}
