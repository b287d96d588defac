//! Prototype-based evidence mapping.
//!
//! Each prototype `p_i` turns an input `x` into a simple mass function
//! `m_i({θ_k}) = u_ik s_i`, `m_i(Θ) = 1 - s_i` with similarity
//! `s_i = α_i exp(-γ_i ‖x - p_i‖²)`. The layer output is the Dempster
//! combination of the `I` prototype masses, folded pairwise in index order.
//!
//! Constrained parameters are stored unconstrained: `α = sigmoid(a)`,
//! `γ` through a softplus anchored at its initial value (see
//! [`AnchoredSoftplus`]), and each membership row is a softmax of raw scores.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::dst::{Frame, SimpleMassFunction, TOTAL_CONFLICT_EPS};
use crate::error::{Error, Result};
use crate::param::{exact_inverse, sigmoid, AnchoredSoftplus};

pub const DEFAULT_PROTOTYPES: usize = 10;
pub const INITIAL_ALPHA: f64 = 0.5;
pub const INITIAL_GAMMA: f64 = 0.01;

#[derive(Debug, Clone, PartialEq)]
pub struct EnnParameters {
    n_prototypes: usize,
    input_dim: usize,
    n_classes: usize,
    /// `I × H`, row-major.
    pub prototypes: Vec<f64>,
    pub alpha_raw: Vec<f64>,
    pub gamma_raw: Vec<f64>,
    /// `I × K`, row-major.
    pub membership_raw: Vec<f64>,
}

impl EnnParameters {
    pub fn from_raw(
        n_prototypes: usize,
        input_dim: usize,
        n_classes: usize,
        prototypes: Vec<f64>,
        alpha_raw: Vec<f64>,
        gamma_raw: Vec<f64>,
        membership_raw: Vec<f64>,
    ) -> Result<Self> {
        let check = |what, got: usize, expected| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::DimensionMismatch { what, expected, got })
            }
        };
        check("prototypes", prototypes.len(), n_prototypes * input_dim)?;
        check("alpha", alpha_raw.len(), n_prototypes)?;
        check("gamma", gamma_raw.len(), n_prototypes)?;
        check("memberships", membership_raw.len(), n_prototypes * n_classes)?;
        if n_prototypes == 0 || input_dim == 0 || n_classes < 2 {
            return Err(Error::Empty("evidence layer"));
        }
        Ok(Self { n_prototypes, input_dim, n_classes, prototypes, alpha_raw, gamma_raw, membership_raw })
    }

    /// Builds from constrained values: `alpha ∈ (0,1)`, `gamma > 0`,
    /// membership rows strictly positive and summing to one.
    pub fn from_values(
        n_classes: usize,
        prototypes: Vec<Vec<f64>>,
        alpha: &[f64],
        gamma: &[f64],
        memberships: &[Vec<f64>],
    ) -> Result<Self> {
        let i = prototypes.len();
        let h = prototypes.first().map_or(0, Vec::len);
        let alpha_raw = alpha.iter().map(|&a| exact_inverse(sigmoid, a, logit(a))).collect();
        let gamma_raw = gamma.iter().map(|&g| gamma_map().inverse(g)).collect();
        let membership_raw = memberships.iter().flat_map(|row| row.iter().map(|u| u.ln())).collect();
        Self::from_raw(i, h, n_classes, prototypes.concat(), alpha_raw, gamma_raw, membership_raw)
    }

    pub fn n_prototypes(&self) -> usize {
        self.n_prototypes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn prototype(&self, i: usize) -> &[f64] {
        &self.prototypes[i * self.input_dim..(i + 1) * self.input_dim]
    }

    pub fn alpha(&self, i: usize) -> f64 {
        sigmoid(self.alpha_raw[i])
    }

    pub fn gamma(&self, i: usize) -> f64 {
        gamma_map().value(self.gamma_raw[i])
    }

    pub fn membership_row(&self, i: usize) -> Vec<f64> {
        softmax(&self.membership_raw[i * self.n_classes..(i + 1) * self.n_classes])
    }

    pub fn param_slices(&self) -> [&[f64]; 4] {
        [&self.prototypes, &self.alpha_raw, &self.gamma_raw, &self.membership_raw]
    }

    pub fn param_slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.prototypes, &mut self.alpha_raw, &mut self.gamma_raw, &mut self.membership_raw]
    }

    /// Permutes the prototype index.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let (h, k) = (self.input_dim, self.n_classes);
        let mut out = self.clone();
        for (dst, &src) in order.iter().enumerate() {
            out.prototypes[dst * h..(dst + 1) * h].copy_from_slice(self.prototype(src));
            out.alpha_raw[dst] = self.alpha_raw[src];
            out.gamma_raw[dst] = self.gamma_raw[src];
            out.membership_raw[dst * k..(dst + 1) * k]
                .copy_from_slice(&self.membership_raw[src * k..(src + 1) * k]);
        }
        out
    }
}

fn gamma_map() -> AnchoredSoftplus {
    AnchoredSoftplus::new(INITIAL_GAMMA)
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn softmax(raw: &[f64]) -> Vec<f64> {
    let max = raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = raw.iter().map(|r| (r - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

/// Fresh layer: `α = 0.5`, `γ = 0.01`, memberships uniform draws normalized
/// per row, prototypes standard normal.
pub fn init_enn(n_prototypes: usize, n_classes: usize, input_dim: usize, seed: u64) -> Result<EnnParameters> {
    if n_prototypes == 0 || n_classes == 0 || input_dim == 0 {
        return Err(Error::Empty("evidence layer"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prototypes: Vec<Vec<f64>> = (0..n_prototypes)
        .map(|_| (0..input_dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect();
    let memberships: Vec<Vec<f64>> = (0..n_prototypes)
        .map(|_| {
            let row: Vec<f64> = (0..n_classes).map(|_| rng.random_range(f64::EPSILON..1.0)).collect();
            let total: f64 = row.iter().sum();
            row.into_iter().map(|u| u / total).collect()
        })
        .collect();
    EnnParameters::from_values(
        n_classes,
        prototypes,
        &vec![INITIAL_ALPHA; n_prototypes],
        &vec![INITIAL_GAMMA; n_prototypes],
        &memberships,
    )
}

/// Lloyd's k-means with k-means++ seeding over `points` (`n × dim`,
/// row-major); returns `k × dim` centers. Empty clusters keep their
/// previous center. Used as an optional prototype warm start.
pub fn kmeans_centers(points: &[f64], dim: usize, k: usize, seed: u64, iterations: usize) -> Result<Vec<f64>> {
    let n = points.len() / dim.max(1);
    if dim == 0 || n < k || k == 0 {
        return Err(Error::Empty("clustering sample"));
    }
    let point = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<f64> = point(rng.random_range(0..n)).to_vec();
    let mut nearest = vec![f64::INFINITY; n];
    while centers.len() < k * dim {
        let last = &centers[centers.len() - dim..];
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), last, &mut NoCount));
        }
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                target -= d;
                if target < 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.extend_from_slice(point(pick));
    }
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for _ in 0..iterations {
        sums.iter_mut().for_each(|v| *v = 0.0);
        counts.iter_mut().for_each(|v| *v = 0);
        for i in 0..n {
            let p = point(i);
            let best = (0..k)
                .map(|c| (c, sq_dist(p, &centers[c * dim..(c + 1) * dim], &mut NoCount)))
                .fold((0, f64::INFINITY), |b, c| if c.1 < b.1 { c } else { b })
                .0;
            counts[best] += 1;
            sums[best * dim..(best + 1) * dim].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centers[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    Ok(centers)
}

/// Counts arithmetic operations of a forward pass.
pub trait OpCounter {
    fn add(&mut self, n: usize);
}

pub struct NoCount;

impl OpCounter for NoCount {
    #[inline(always)]
    fn add(&mut self, _: usize) {}
}

impl OpCounter for usize {
    fn add(&mut self, n: usize) {
        *self += n;
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct EnnTrace {
    /// Squared distances `‖x - p_i‖²`.
    pub sq_dist: Vec<f64>,
    /// Similarities `s_i`.
    pub similarity: Vec<f64>,
    /// Running combination after each prototype: `I × (K + 1)`, last entry
    /// of each row is the mass on the frame.
    pub states: Vec<f64>,
    /// Largest conflict met while folding in the prototypes.
    pub max_conflict: f64,
}

/// `s_i = α_i exp(-γ_i ‖x - p_i‖²)` for every prototype.
pub fn prototype_activation(x: &[f64], params: &EnnParameters) -> Result<Vec<f64>> {
    check_input(x, params)?;
    Ok((0..params.n_prototypes)
        .map(|i| {
            let d = sq_dist(x, params.prototype(i), &mut NoCount);
            params.alpha(i) * (-params.gamma(i) * d).exp()
        })
        .collect())
}

/// Mass function of one prototype.
pub fn prototype_mass(frame: &Frame, similarity: f64, membership_row: &[f64]) -> Result<SimpleMassFunction> {
    if !(0.0..=1.0).contains(&similarity) {
        return Err(Error::OutOfUnitInterval { what: "similarity", value: similarity });
    }
    let singletons = membership_row.iter().map(|u| u * similarity).collect();
    SimpleMassFunction::new(frame, singletons, 1.0 - similarity)
}

fn check_input(x: &[f64], params: &EnnParameters) -> Result<()> {
    if x.len() != params.input_dim {
        return Err(Error::DimensionMismatch { what: "feature vector", expected: params.input_dim, got: x.len() });
    }
    Ok(())
}

#[inline]
fn sq_dist<C: OpCounter>(x: &[f64], p: &[f64], ops: &mut C) -> f64 {
    ops.add(3 * x.len());
    x.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Parameters with the reparameterizations evaluated once, for repeated
/// evaluation at many inputs.
#[derive(Debug, Clone)]
pub struct EnnLayer<'a> {
    pub params: &'a EnnParameters,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// `I × K`, row-major.
    pub memberships: Vec<f64>,
}

impl EnnParameters {
    pub fn resolve(&self) -> EnnLayer<'_> {
        let n = self.n_prototypes;
        EnnLayer {
            params: self,
            alpha: (0..n).map(|i| self.alpha(i)).collect(),
            gamma: (0..n).map(|i| self.gamma(i)).collect(),
            memberships: (0..n).flat_map(|i| self.membership_row(i)).collect(),
        }
    }
}

impl EnnLayer<'_> {
    pub fn membership_row(&self, i: usize) -> &[f64] {
        let k = self.params.n_classes;
        &self.memberships[i * k..(i + 1) * k]
    }

    /// Layer output for `x` as raw `(singletons, theta)` plus the trace
    /// needed by [`EnnLayer::backward`].
    pub fn forward<C: OpCounter>(&self, x: &[f64], ops: &mut C) -> (Vec<f64>, f64, EnnTrace) {
        let (n, k) = (self.params.n_prototypes, self.params.n_classes);
        let mut trace = EnnTrace {
            sq_dist: Vec::with_capacity(n),
            similarity: Vec::with_capacity(n),
            states: Vec::with_capacity(n * (k + 1)),
            max_conflict: 0.0,
        };
        let mut singletons = vec![0.0; k];
        let mut theta = 1.0;
        for i in 0..n {
            let d = sq_dist(x, self.params.prototype(i), ops);
            let s = self.alpha[i] * (-self.gamma[i] * d).exp();
            ops.add(4);
            let u = self.membership_row(i);
            let s_theta = 1.0 - s;
            if i == 0 {
                singletons.iter_mut().zip(u).for_each(|(m, u)| *m = u * s);
                theta = s_theta;
                ops.add(k + 1);
            } else {
                let mut agree = 0.0;
                for (m, &uk) in singletons.iter_mut().zip(u) {
                    let a = uk * s;
                    *m = *m * (a + s_theta) + theta * a;
                    agree += *m;
                }
                theta *= s_theta;
                agree += theta;
                trace.max_conflict = trace.max_conflict.max(1.0 - agree);
                if agree > 0.0 {
                    singletons.iter_mut().for_each(|m| *m /= agree);
                    theta /= agree;
                }
                ops.add(7 * k + 4);
            }
            trace.sq_dist.push(d);
            trace.similarity.push(s);
            trace.states.extend_from_slice(&singletons);
            trace.states.push(theta);
        }
        (singletons, theta, trace)
    }

    /// Reverse pass of [`EnnLayer::forward`] given the upstream gradient
    /// with respect to the output singleton masses and the output frame mass.
    pub fn backward(&self, x: &[f64], trace: &EnnTrace, grad_singletons: &[f64], grad_theta: f64) -> EnnGradients {
        let params = self.params;
        let (n, k, h) = (params.n_prototypes, params.n_classes, params.input_dim);
        let mut g = EnnGradients {
            input: vec![0.0; h],
            prototypes: vec![0.0; n * h],
            alpha: vec![0.0; n],
            gamma: vec![0.0; n],
            memberships: vec![0.0; n * k],
        };
        let mut gs: Vec<f64> = grad_singletons.to_vec();
        let mut gt = grad_theta;
        let mut ga = vec![0.0; k];
        let mut gu = vec![0.0; k];
        for i in (0..n).rev() {
            let s = trace.similarity[i];
            let a_theta = 1.0 - s;
            let u = self.membership_row(i);
            // Gradient wrt this prototype's masses (a_k, a_theta).
            let ga_theta;
            if i == 0 {
                ga.copy_from_slice(&gs);
                ga_theta = gt;
            } else {
                let prev = &trace.states[(i - 1) * (k + 1)..i * (k + 1)];
                let cur = &trace.states[i * (k + 1)..(i + 1) * (k + 1)];
                let (pm, pt) = (&prev[..k], prev[k]);
                // Back through the normalization by the agreement mass first.
                let mut agree = pt * a_theta;
                for c in 0..k {
                    let a = u[c] * s;
                    agree += pm[c] * (a + a_theta) + pt * a;
                }
                let dot: f64 = gs.iter().zip(&cur[..k]).map(|(a, b)| a * b).sum::<f64>() + gt * cur[k];
                for c in 0..k {
                    gu[c] = (gs[c] - dot) / agree;
                }
                let gu_theta = (gt - dot) / agree;
                let mut acc_theta = gu_theta * pt;
                let mut gpt = gu_theta * a_theta;
                for c in 0..k {
                    let a = u[c] * s;
                    gpt += gu[c] * a;
                    ga[c] = gu[c] * (pm[c] + pt);
                    acc_theta += gu[c] * pm[c];
                    gs[c] = gu[c] * (a + a_theta);
                }
                gt = gpt;
                ga_theta = acc_theta;
            }
            let mut g_s = -ga_theta;
            let row = &mut g.memberships[i * k..(i + 1) * k];
            for c in 0..k {
                g_s += ga[c] * u[c];
                row[c] = ga[c] * s;
            }
            let mean = row.iter().sum::<f64>() / k as f64;
            row.iter_mut().for_each(|v| *v -= mean);

            let d = trace.sq_dist[i];
            let gamma = self.gamma[i];
            g.alpha[i] = g_s * (-gamma * d).exp();
            g.gamma[i] = -g_s * s * d;
            let g_d = -g_s * s * gamma;
            let p = params.prototype(i);
            for j in 0..h {
                let diff = 2.0 * (x[j] - p[j]) * g_d;
                g.input[j] += diff;
                g.prototypes[i * h + j] = -diff;
            }
        }
        g
    }
}

/// Layer output as a simple mass function over `frame`.
pub fn enn_forward(frame: &Frame, x: &[f64], params: &EnnParameters) -> Result<SimpleMassFunction> {
    check_input(x, params)?;
    if frame.len() != params.n_classes {
        return Err(Error::DimensionMismatch { what: "classes", expected: params.n_classes, got: frame.len() });
    }
    let (singletons, theta, trace) = params.resolve().forward(x, &mut NoCount);
    if trace.max_conflict >= 1.0 - TOTAL_CONFLICT_EPS {
        return Err(Error::TotalConflict { kappa: trace.max_conflict });
    }
    Ok(SimpleMassFunction::from_parts_unchecked(frame, singletons, theta))
}

/// Gradients of a scalar objective through one forward pass at `x`, given
/// its gradient with respect to the output singleton masses and frame mass.
pub fn enn_backward(x: &[f64], params: &EnnParameters, grad_singletons: &[f64], grad_theta: f64) -> Result<EnnGradients> {
    check_input(x, params)?;
    if grad_singletons.len() != params.n_classes {
        return Err(Error::DimensionMismatch {
            what: "upstream gradient",
            expected: params.n_classes,
            got: grad_singletons.len(),
        });
    }
    let layer = params.resolve();
    let (_, _, trace) = layer.forward(x, &mut NoCount);
    Ok(layer.backward(x, &trace, grad_singletons, grad_theta))
}

/// Gradients with respect to the natural (constrained) parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EnnGradients {
    pub input: Vec<f64>,
    pub prototypes: Vec<f64>,
    pub alpha: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Projected onto the tangent of each membership simplex row.
    pub memberships: Vec<f64>,
}

/// Gradients with respect to the stored unconstrained parameters, in the
/// order of [`EnnParameters::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnnRawGradients {
    pub prototypes: Vec<f64>,
    pub alpha_raw: Vec<f64>,
    pub gamma_raw: Vec<f64>,
    pub membership_raw: Vec<f64>,
}

impl EnnRawGradients {
    pub fn zeros(params: &EnnParameters) -> Self {
        Self {
            prototypes: vec![0.0; params.prototypes.len()],
            alpha_raw: vec![0.0; params.alpha_raw.len()],
            gamma_raw: vec![0.0; params.gamma_raw.len()],
            membership_raw: vec![0.0; params.membership_raw.len()],
        }
    }

    pub fn slices(&self) -> [&[f64]; 4] {
        [&self.prototypes, &self.alpha_raw, &self.gamma_raw, &self.membership_raw]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.prototypes, &mut self.alpha_raw, &mut self.gamma_raw, &mut self.membership_raw]
    }

    pub fn accumulate(&mut self, other: &EnnRawGradients) {
        for (a, b) in self.slices_mut().into_iter().zip(other.slices()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }
}

impl EnnGradients {
    /// Chains through the parameterization to the stored raw values.
    pub fn to_raw(&self, layer: &EnnLayer<'_>) -> EnnRawGradients {
        let mut out = EnnRawGradients::zeros(layer.params);
        self.add_raw_into(layer, &mut out);
        out
    }

    pub fn add_raw_into(&self, layer: &EnnLayer<'_>, out: &mut EnnRawGradients) {
        let params = layer.params;
        let k = params.n_classes;
        let gamma = gamma_map();
        out.prototypes.iter_mut().zip(&self.prototypes).for_each(|(o, g)| *o += g);
        for i in 0..params.n_prototypes {
            let a = layer.alpha[i];
            out.alpha_raw[i] += self.alpha[i] * a * (1.0 - a);
            out.gamma_raw[i] += self.gamma[i] * gamma.derivative(params.gamma_raw[i]);
            let u = layer.membership_row(i);
            let g = &self.memberships[i * k..(i + 1) * k];
            let dot: f64 = u.iter().zip(g).map(|(a, b)| a * b).sum();
            for c in 0..k {
                out.membership_raw[i * k + c] += u[c] * (g[c] - dot);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(k: usize) -> Frame {
        Frame::numbered(k).unwrap()
    }

    #[test]
    fn init_values_are_exact() {
        for seed in 0..5 {
            let p = init_enn(7, 3, 2, seed).unwrap();
            for i in 0..7 {
                assert_eq!(p.alpha(i), 0.5);
                assert_eq!(p.gamma(i), 0.01);
                let row = p.membership_row(i);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
            assert_eq!(p, init_enn(7, 3, 2, seed).unwrap());
        }
        assert_ne!(init_enn(3, 2, 2, 1).unwrap(), init_enn(3, 2, 2, 2).unwrap());
    }

    #[test]
    fn activation_cases() {
        let p = EnnParameters::from_values(2, vec![vec![0.0, 0.0]], &[0.5], &[0.01], &[vec![0.5, 0.5]]).unwrap();
        let s = prototype_activation(&[0.0, 0.0], &p).unwrap();
        assert_eq!(s[0], 0.5);
        let far = prototype_activation(&[1e3, 1e3], &p).unwrap();
        assert!(far[0] < 1e-300);

        let p = EnnParameters::from_values(2, vec![vec![0.0, 0.0]], &[1.0], &[0.01], &[vec![0.5, 0.5]]).unwrap();
        let s = prototype_activation(&[1.0, 0.0], &p).unwrap();
        assert_eq!(s[0], (-0.01f64).exp());
        assert!(prototype_activation(&[1.0], &p).is_err());
    }

    #[test]
    fn prototype_mass_cases() {
        let m = prototype_mass(&frame(2), 0.5, &[1.0, 0.0]).unwrap();
        assert_eq!(m.singletons(), &[0.5, 0.0]);
        assert_eq!(m.theta(), 0.5);
        let m = prototype_mass(&frame(2), 0.0, &[0.3, 0.7]).unwrap();
        assert_eq!(m, SimpleMassFunction::vacuous(&frame(2)));
        let m = prototype_mass(&frame(2), 0.8, &[0.25, 0.75]).unwrap();
        assert_eq!(m.singletons(), &[0.2, 0.6000000000000001]);
        assert!((m.theta() - 0.2).abs() < 1e-15);
    }

    #[test]
    fn single_prototype_forward_is_its_mass() {
        let p = init_enn(1, 3, 2, 9).unwrap();
        let x = [0.3, -0.4];
        let out = enn_forward(&frame(3), &x, &p).unwrap();
        let s = prototype_activation(&x, &p).unwrap()[0];
        let want = prototype_mass(&frame(3), s, &p.membership_row(0)).unwrap();
        assert_eq!(out, want);
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let p = init_enn(3, 2, 2, 4).unwrap();
        let x = [0.1, 0.2];
        let layer = p.resolve();
        let (_, _, trace) = layer.forward(&x, &mut NoCount);
        let g = layer.backward(&x, &trace, &[0.0, 0.0], 0.0);
        assert!(g.input.iter().chain(&g.prototypes).chain(&g.alpha).chain(&g.gamma).chain(&g.memberships).all(|v| *v == 0.0));
    }

    #[test]
    fn gamma_gradient_vanishes_at_zero_similarity() {
        let p = EnnParameters::from_values(2, vec![vec![0.0]], &[0.5], &[1.0], &[vec![0.4, 0.6]]).unwrap();
        let x = [1e3];
        let layer = p.resolve();
        let (_, _, trace) = layer.forward(&x, &mut NoCount);
        assert_eq!(trace.similarity[0], 0.0);
        let g = layer.backward(&x, &trace, &[1.0, -2.0], 0.5);
        assert_eq!(g.gamma[0], 0.0);
    }
}
