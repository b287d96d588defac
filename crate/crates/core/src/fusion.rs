//! Multimodal evidence fusion.
//!
//! Each modality's contour is contextually discounted with its own
//! reliability vector, the discounted contours are multiplied across
//! modalities and the product is normalized into a class distribution.
//! The conflict constant of Dempster's rule cancels in the normalization.

use std::fmt::Write as _;

use crate::dst::contour::discounted_plausibility;
use crate::dst::{ContourFunction, Frame, ReliabilityVector, SimpleMassFunction};
use crate::error::{Error, Result};
use crate::param::sigmoid;

/// Learned reliability coefficients `β^t_k ∈ (0,1)`, stored as logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityMatrix {
    frame: Frame,
    modalities: Vec<String>,
    /// `T × K`, row-major.
    pub raw: Vec<f64>,
}

impl ReliabilityMatrix {
    pub fn from_raw(frame: &Frame, modalities: Vec<String>, raw: Vec<f64>) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::Empty("modality list"));
        }
        let expected = modalities.len() * frame.len();
        if raw.len() != expected {
            return Err(Error::DimensionMismatch { what: "reliability parameters", expected, got: raw.len() });
        }
        Ok(Self { frame: frame.clone(), modalities, raw })
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn modalities(&self) -> &[String] {
        &self.modalities
    }

    pub fn n_modalities(&self) -> usize {
        self.modalities.len()
    }

    pub fn beta(&self, t: usize, k: usize) -> f64 {
        sigmoid(self.raw[t * self.frame.len() + k])
    }

    /// All coefficients, `T × K` row-major.
    pub fn betas(&self) -> Vec<f64> {
        self.raw.iter().map(|&r| sigmoid(r)).collect()
    }

    pub fn vector(&self, t: usize) -> ReliabilityVector {
        let k = self.frame.len();
        let beta = (0..k).map(|c| self.beta(t, c)).collect();
        ReliabilityVector::new(&self.frame, beta).expect("sigmoid stays in [0, 1]")
    }

    /// `modality,class,beta` rows, coefficients rounded to 3 decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("modality,class,beta\n");
        for (t, m) in self.modalities.iter().enumerate() {
            for (k, c) in self.frame.labels().iter().enumerate() {
                let _ = writeln!(out, "{m},{c},{:.3}", self.beta(t, k));
            }
        }
        out
    }
}

/// All coefficients start at exactly 0.5.
pub fn init_reliability(frame: &Frame, modalities: Vec<String>) -> Result<ReliabilityMatrix> {
    let n = modalities.len() * frame.len();
    ReliabilityMatrix::from_raw(frame, modalities, vec![0.0; n])
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrediction {
    pub probabilities: Vec<f64>,
    /// `T × K`, row-major.
    pub discounted_contours: Vec<f64>,
}

/// Discounted contour of one modality.
pub fn discount_modality(pl: &ContourFunction, beta: &ReliabilityVector) -> Result<ContourFunction> {
    pl.contextual_discount(beta)
}

/// Fuses `T` contours with reliability matrix `betas`.
pub fn fuse(contours: &[ContourFunction], betas: &ReliabilityMatrix) -> Result<FusedPrediction> {
    let pl = flatten_contours(contours, betas)?;
    fuse_voxel(&pl, &betas.betas(), betas.frame.len())
}

fn flatten_contours(contours: &[ContourFunction], betas: &ReliabilityMatrix) -> Result<Vec<f64>> {
    if contours.len() != betas.n_modalities() {
        return Err(Error::DimensionMismatch {
            what: "modalities",
            expected: betas.n_modalities(),
            got: contours.len(),
        });
    }
    let mut pl = Vec::with_capacity(contours.len() * betas.frame.len());
    for c in contours {
        c.frame().ensure_same(&betas.frame)?;
        pl.extend_from_slice(c.values());
    }
    Ok(pl)
}

/// Per-voxel fusion on flat `T × K` arrays of contours and coefficients.
pub fn fuse_voxel(pl: &[f64], beta: &[f64], k: usize) -> Result<FusedPrediction> {
    let discounted: Vec<f64> = pl.iter().zip(beta).map(|(&p, &b)| discounted_plausibility(p, b)).collect();
    let mut prod = vec![1.0; k];
    for row in discounted.chunks_exact(k) {
        prod.iter_mut().zip(row).for_each(|(p, q)| *p *= q);
    }
    let total: f64 = prod.iter().sum();
    let probabilities = if total > 0.0 && total.is_finite() {
        prod.into_iter().map(|p| p / total).collect()
    } else {
        normalize_in_logs(&discounted, k)?
    };
    Ok(FusedPrediction { probabilities, discounted_contours: discounted })
}

/// Fallback when the plain product underflows: normalize in log space.
/// Fails only if every class has a zero factor.
fn normalize_in_logs(discounted: &[f64], k: usize) -> Result<Vec<f64>> {
    let mut logs = vec![0.0; k];
    for row in discounted.chunks_exact(k) {
        logs.iter_mut().zip(row).for_each(|(l, q)| *l += q.ln());
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::DegenerateFusion);
    }
    let e: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

/// Gradients of a scalar objective through [`fuse`].
#[derive(Debug, Clone, PartialEq)]
pub struct FuseGradients {
    /// With respect to each input contour, `T × K`.
    pub contours: Vec<f64>,
    /// With respect to the logits in [`ReliabilityMatrix::raw`], `T × K`.
    pub raw_beta: Vec<f64>,
}

pub fn fuse_backward(
    contours: &[ContourFunction],
    betas: &ReliabilityMatrix,
    upstream: &[f64],
) -> Result<FuseGradients> {
    let k = betas.frame.len();
    if upstream.len() != k {
        return Err(Error::DimensionMismatch { what: "upstream gradient", expected: k, got: upstream.len() });
    }
    let pl = flatten_contours(contours, betas)?;
    let beta = betas.betas();
    let fused = fuse_voxel(&pl, &beta, k)?;
    let mut out = FuseGradients { contours: vec![0.0; pl.len()], raw_beta: vec![0.0; pl.len()] };
    fuse_voxel_backward(&pl, &beta, &fused, upstream, &mut out.contours, &mut out.raw_beta);
    Ok(out)
}

/// Accumulates the voxel's contribution into `grad_pl` and `grad_raw_beta`.
pub fn fuse_voxel_backward(
    pl: &[f64],
    beta: &[f64],
    fused: &FusedPrediction,
    upstream: &[f64],
    grad_pl: &mut [f64],
    grad_raw_beta: &mut [f64],
) {
    let k = upstream.len();
    let t_count = pl.len() / k;
    let p = &fused.probabilities;
    let q = &fused.discounted_contours;
    let dot: f64 = upstream.iter().zip(p).map(|(g, p)| g * p).sum();
    // p_c = P_c / S with P_c = Π_t q_tc, so dL/dq_tc = (g_c - Σ g p) / S · Π_{t'≠t} q_t'c.
    let total: f64 = (0..k).map(|c| q.chunks_exact(k).map(|row| row[c]).product::<f64>()).sum();
    if !(total > 0.0) {
        // Underflowed product; the distribution is saturated.
        return;
    }
    let inv_total = 1.0 / total;
    for c in 0..k {
        let g_norm = upstream[c] - dot;
        if g_norm == 0.0 {
            continue;
        }
        for t in 0..t_count {
            let g_q = g_norm * product_except(q, t, c, k) * inv_total;
            let i = t * k + c;
            grad_pl[i] += g_q * beta[i];
            grad_raw_beta[i] += g_q * (pl[i] - 1.0) * beta[i] * (1.0 - beta[i]);
        }
    }
}

fn product_except(q: &[f64], t_skip: usize, c: usize, k: usize) -> f64 {
    q.chunks_exact(k).enumerate().filter(|(t, _)| *t != t_skip).map(|(_, row)| row[c]).product()
}

/// Total Dempster conflict of combining the contextually discounted
/// modality masses, `1 - Π_i (1 - κ_i)` over the pairwise steps.
///
/// Diagnostic only (needs the general algebra, so K ≤ 16); training never
/// uses it.
pub fn fusion_conflict(masses: &[SimpleMassFunction], betas: &ReliabilityMatrix) -> Result<f64> {
    let mut acc: Option<crate::dst::MassFunction> = None;
    let mut agreement = 1.0;
    for (t, m) in masses.iter().enumerate() {
        let d = m.to_mass_function()?.contextual_discount(&betas.vector(t))?;
        acc = Some(match acc {
            None => d,
            Some(prev) => {
                let (c, kappa) = prev.dempster_combine(&d)?;
                agreement *= 1.0 - kappa;
                c
            }
        });
    }
    Ok(1.0 - agreement)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(k: usize) -> Frame {
        Frame::numbered(k).unwrap()
    }

    fn mods(t: usize) -> Vec<String> {
        (0..t).map(|i| format!("m{i}")).collect()
    }

    fn matrix(k: usize, betas: &[f64]) -> ReliabilityMatrix {
        let raw = betas.iter().map(|&b| (b / (1.0 - b)).ln()).collect();
        ReliabilityMatrix::from_raw(&frame(k), mods(betas.len() / k), raw).unwrap()
    }

    #[test]
    fn init_is_one_half() {
        let r = init_reliability(&frame(2), mods(2)).unwrap();
        assert_eq!(r.betas(), vec![0.5; 4]);
        assert_eq!(r.to_csv(), "modality,class,beta\nm0,c1,0.500\nm0,c2,0.500\nm1,c1,0.500\nm1,c2,0.500\n");
    }

    #[test]
    fn discount_modality_cases() {
        let f = frame(2);
        let pl = ContourFunction::new(&f, vec![0.8, 0.3]).unwrap();
        let out = discount_modality(&pl, &ReliabilityVector::new(&f, vec![1.0, 0.6]).unwrap()).unwrap();
        assert!((out.values()[0] - 0.8).abs() < 1e-12 && (out.values()[1] - 0.58).abs() < 1e-12);
        let same = discount_modality(&pl, &ReliabilityVector::uniform(&f, 1.0).unwrap()).unwrap();
        assert_eq!(same, pl);
        let ignored = discount_modality(&pl, &ReliabilityVector::uniform(&f, 0.0).unwrap()).unwrap();
        assert_eq!(ignored.values(), &[1.0, 1.0]);
    }

    #[test]
    fn two_modality_hand_case() {
        let f = frame(2);
        let pls = [
            ContourFunction::new(&f, vec![0.9, 0.2]).unwrap(),
            ContourFunction::new(&f, vec![0.3, 0.8]).unwrap(),
        ];
        // Saturated logits give β = 1 to double precision.
        let ones = ReliabilityMatrix::from_raw(&f, mods(2), vec![40.0; 4]).unwrap();
        let out = fuse(&pls, &ones).unwrap();
        assert!((out.probabilities[0] - 0.27 / 0.43).abs() < 1e-12);
        assert!((out.probabilities[1] - 0.16 / 0.43).abs() < 1e-12);
    }

    #[test]
    fn single_modality_recovers_normalized_contour() {
        let f = frame(3);
        let pl = ContourFunction::new(&f, vec![0.9, 0.4, 0.1]).unwrap();
        let ones = ReliabilityMatrix::from_raw(&f, mods(1), vec![40.0; 3]).unwrap();
        let out = fuse(std::slice::from_ref(&pl), &ones).unwrap();
        let want = pl.to_probability().unwrap();
        for (a, b) in out.probabilities.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ignored_modality_has_no_effect() {
        let f = frame(3);
        let a = ContourFunction::new(&f, vec![0.9, 0.4, 0.1]).unwrap();
        let b = ContourFunction::new(&f, vec![0.2, 1.0, 0.7]).unwrap();
        let with = ReliabilityMatrix::from_raw(&f, mods(2), vec![0.3, -1.0, 2.0, -800.0, -800.0, -800.0]).unwrap();
        let without = ReliabilityMatrix::from_raw(&f, mods(1), vec![0.3, -1.0, 2.0]).unwrap();
        let p2 = fuse(&[a.clone(), b], &with).unwrap().probabilities;
        let p1 = fuse(&[a], &without).unwrap().probabilities;
        assert_eq!(p1, p2);
    }

    #[test]
    fn degenerate_and_underflow() {
        let f = frame(2);
        let zero = ContourFunction::new(&f, vec![0.0, 0.0]).unwrap();
        let ones = ReliabilityMatrix::from_raw(&f, mods(1), vec![800.0; 2]).unwrap();
        assert!(matches!(fuse(&[zero], &ones), Err(Error::DegenerateFusion)));

        // 80 modalities each favouring class 1 by a factor 1e-5 underflow the
        // plain product but not the normalized result.
        let tiny = ContourFunction::new(&f, vec![1e-5, 1e-9]).unwrap();
        let many = ReliabilityMatrix::from_raw(&f, mods(80), vec![800.0; 160]).unwrap();
        let out = fuse(&vec![tiny; 80], &many).unwrap();
        assert_eq!(out.probabilities[0], 1.0);
        assert!(out.probabilities[1] > 0.0 && out.probabilities[1] < 1e-300);
    }

    #[test]
    fn uniform_upstream_gives_zero_gradient() {
        let f = frame(3);
        let pls = [
            ContourFunction::new(&f, vec![0.9, 0.4, 0.1]).unwrap(),
            ContourFunction::new(&f, vec![0.2, 1.0, 0.7]).unwrap(),
        ];
        let b = matrix(3, &[0.3, 0.6, 0.9, 0.5, 0.5, 0.2]);
        let g = fuse_backward(&pls, &b, &[0.7; 3]).unwrap();
        assert!(g.contours.iter().chain(&g.raw_beta).all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn beta_gradient_vanishes_at_full_plausibility() {
        let f = frame(2);
        let pls = [ContourFunction::new(&f, vec![1.0, 0.4]).unwrap()];
        let b = matrix(2, &[0.3, 0.6]);
        let g = fuse_backward(&pls, &b, &[1.0, -0.5]).unwrap();
        assert_eq!(g.raw_beta[0], 0.0);
        assert!(g.raw_beta[1] != 0.0);
    }

    #[test]
    fn conflict_diagnostic() {
        let f = frame(2);
        let a = SimpleMassFunction::new(&f, vec![1.0, 0.0], 0.0).unwrap();
        let b = SimpleMassFunction::new(&f, vec![0.0, 1.0], 0.0).unwrap();
        let half = init_reliability(&f, mods(2)).unwrap();
        // β = 0.5 everywhere: discounted masses are ({θ1}: .5, Θ: .5) and
        // ({θ2}: .5, Θ: .5); conflict .25.
        assert!((fusion_conflict(&[a, b], &half).unwrap() - 0.25).abs() < 1e-15);
    }
}
