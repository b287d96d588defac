//! Segmentation and calibration metrics.
//!
//! Probabilities are voxel-major slices with stride `k`; labels are class
//! indices with `0` the background class. Region-restricted metrics take an
//! [`EvaluationRegion`] over a `width`-wide grid.

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 10;
pub const PROB_FLOOR: f64 = 1e-12;

/// Inclusive axis-aligned voxel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvaluationRegion {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl EvaluationRegion {
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, y0: 0, x1: width - 1, y1: height - 1 }
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn len(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Flat voxel indices, row by row.
    pub fn indices(&self, width: usize) -> impl Iterator<Item = usize> + '_ {
        (self.y0..=self.y1).flat_map(move |y| (self.x0..=self.x1).map(move |x| y * width + x))
    }
}

/// Tightest box around all non-background voxels.
pub fn foreground_box(labels: &[u16], width: usize) -> Result<EvaluationRegion> {
    let mut region: Option<EvaluationRegion> = None;
    for (n, _) in labels.iter().enumerate().filter(|(_, &l)| l != 0) {
        let (x, y) = (n % width, n / width);
        region = Some(match region {
            None => EvaluationRegion { x0: x, y0: y, x1: x, y1: y },
            Some(r) => EvaluationRegion { x0: r.x0.min(x), y0: r.y0.min(y), x1: r.x1.max(x), y1: r.y1.max(y) },
        });
    }
    region.ok_or(Error::NoForeground)
}

/// Lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub fn argmax_labels(probs: &[f64], k: usize) -> Vec<u16> {
    probs.chunks_exact(k).map(|p| argmax(p) as u16).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn dice(&self) -> f64 {
        let den = self.fp + 2 * self.tp + self.fn_;
        if den == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / den as f64
        }
    }
}

/// Which labels count as positive.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Selector {
    Class(u16),
    AnyOf(Vec<u16>),
}

impl Selector {
    fn matches(&self, label: u16) -> bool {
        match self {
            Selector::Class(c) => *c == label,
            Selector::AnyOf(cs) => cs.contains(&label),
        }
    }
}

pub fn confusion(pred: &[u16], truth: &[u16], selector: &Selector) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (selector.matches(p), selector.matches(t)) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    c
}

/// `2TP / (FP + 2TP + FN)`, with `1` when all three counts are zero.
pub fn dice_score(pred: &[u16], truth: &[u16], selector: &Selector) -> f64 {
    confusion(pred, truth, selector).dice()
}

/// Mean Dice over the foreground classes `1..k`.
pub fn mean_foreground_dice(pred: &[u16], truth: &[u16], k: usize) -> f64 {
    let sum: f64 = (1..k).map(|c| dice_score(pred, truth, &Selector::Class(c as u16))).sum();
    sum / (k - 1) as f64
}

fn region_voxels(region: &EvaluationRegion, width: usize) -> Result<Vec<usize>> {
    let v: Vec<usize> = region.indices(width).collect();
    if v.is_empty() {
        return Err(Error::Empty("evaluation region"));
    }
    Ok(v)
}

/// Mean over region voxels of `Σ_k (p_k - G_k)²`.
pub fn brier(probs: &[f64], k: usize, labels: &[u16], region: &EvaluationRegion, width: usize) -> Result<f64> {
    let voxels = region_voxels(region, width)?;
    let total: f64 = voxels
        .iter()
        .map(|&n| {
            let p = &probs[n * k..(n + 1) * k];
            p.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let g = if c == labels[n] as usize { 1.0 } else { 0.0 };
                    (v - g) * (v - g)
                })
                .sum::<f64>()
        })
        .sum();
    Ok(total / voxels.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NllMode {
    /// `-log p_true`.
    #[default]
    TrueClass,
    /// `-Σ_k [G_k log p_k + (1-G_k) log(1-p_k)]`.
    OneVsRest,
}

/// Sum over region voxels, probabilities floored at [`PROB_FLOOR`].
pub fn nll(probs: &[f64], k: usize, labels: &[u16], region: &EvaluationRegion, width: usize, mode: NllMode) -> Result<f64> {
    let voxels = region_voxels(region, width)?;
    let ln = |v: f64| v.max(PROB_FLOOR).ln();
    Ok(voxels
        .iter()
        .map(|&n| {
            let p = &probs[n * k..(n + 1) * k];
            let t = labels[n] as usize;
            match mode {
                NllMode::TrueClass => -ln(p[t]),
                NllMode::OneVsRest => -(0..k).map(|c| if c == t { ln(p[c]) } else { ln(1.0 - p[c]) }).sum::<f64>(),
            }
        })
        .sum())
}

/// Equal-width confidence bins over `[0, 1]`; `[b/B, (b+1)/B)` with the last
/// bin closed.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationBins {
    pub counts: Vec<usize>,
    pub correct: Vec<usize>,
    pub confidence_sum: Vec<f64>,
}

impl CalibrationBins {
    pub fn new(bins: usize) -> Self {
        Self { counts: vec![0; bins], correct: vec![0; bins], confidence_sum: vec![0.0; bins] }
    }

    pub fn n_bins(&self) -> usize {
        self.counts.len()
    }

    pub fn bin_of(&self, confidence: f64) -> usize {
        let b = self.n_bins();
        ((confidence * b as f64).floor().max(0.0) as usize).min(b - 1)
    }

    pub fn add(&mut self, confidence: f64, correct: bool) {
        let b = self.bin_of(confidence);
        self.counts[b] += 1;
        self.correct[b] += usize::from(correct);
        self.confidence_sum[b] += confidence;
    }

    pub fn merge(&mut self, other: &CalibrationBins) {
        for b in 0..self.n_bins() {
            self.counts[b] += other.counts[b];
            self.correct[b] += other.correct[b];
            self.confidence_sum[b] += other.confidence_sum[b];
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn accuracy(&self, b: usize) -> Option<f64> {
        (self.counts[b] > 0).then(|| self.correct[b] as f64 / self.counts[b] as f64)
    }

    pub fn confidence(&self, b: usize) -> Option<f64> {
        (self.counts[b] > 0).then(|| self.confidence_sum[b] / self.counts[b] as f64)
    }

    /// `Σ_b (|E_b|/N) |acc(E_b) - conf(E_b)|`.
    pub fn ece(&self) -> Result<f64> {
        let n = self.total();
        if n == 0 {
            return Err(Error::Empty("calibration bins"));
        }
        Ok((0..self.n_bins())
            .filter_map(|b| {
                let gap = (self.accuracy(b)? - self.confidence(b)?).abs();
                Some(self.counts[b] as f64 / n as f64 * gap)
            })
            .sum())
    }
}

pub fn calibration_bins(
    probs: &[f64],
    k: usize,
    labels: &[u16],
    region: &EvaluationRegion,
    width: usize,
    bins: usize,
) -> Result<CalibrationBins> {
    let voxels = region_voxels(region, width)?;
    let mut out = CalibrationBins::new(bins);
    for n in voxels {
        let p = &probs[n * k..(n + 1) * k];
        let s = argmax(p);
        out.add(p[s], s == labels[n] as usize);
    }
    Ok(out)
}

pub fn ece(probs: &[f64], k: usize, labels: &[u16], region: &EvaluationRegion, width: usize, bins: usize) -> Result<f64> {
    calibration_bins(probs, k, labels, region, width, bins)?.ece()
}

/// Unweighted mean of per-example values.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one_hot(labels: &[u16], k: usize) -> Vec<f64> {
        let mut out = vec![0.0; labels.len() * k];
        for (n, &l) in labels.iter().enumerate() {
            out[n * k + l as usize] = 1.0;
        }
        out
    }

    #[test]
    fn dice_from_counts() {
        let c = Confusion { tp: 5, fp: 2, fn_: 3 };
        assert_eq!(c.dice(), 2.0 / 3.0);
        assert_eq!(Confusion::default().dice(), 1.0);
        let truth = [0, 1, 1, 2, 0];
        assert_eq!(dice_score(&truth, &truth, &Selector::Class(1)), 1.0);
        assert_eq!(dice_score(&[1, 0, 0], &[0, 1, 1], &Selector::Class(1)), 0.0);
        assert_eq!(dice_score(&[1, 2, 0], &[2, 1, 0], &Selector::AnyOf(vec![1, 2])), 1.0);
    }

    #[test]
    fn brier_cases() {
        let labels = [0u16, 1, 1, 0];
        let full = EvaluationRegion::full(2, 2);
        assert_eq!(brier(&one_hot(&labels, 2), 2, &labels, &full, 2).unwrap(), 0.0);
        assert_eq!(brier(&[0.5; 8], 2, &labels, &full, 2).unwrap(), 0.5);
        let wrong: Vec<u16> = labels.iter().map(|l| 1 - l).collect();
        assert_eq!(brier(&one_hot(&wrong, 2), 2, &labels, &full, 2).unwrap(), 2.0);
    }

    #[test]
    fn nll_cases() {
        let labels = [0u16, 1, 2];
        let full = EvaluationRegion::full(3, 1);
        assert_eq!(nll(&one_hot(&labels, 3), 3, &labels, &full, 3, NllMode::TrueClass).unwrap(), 0.0);
        assert_eq!(nll(&one_hot(&labels, 3), 3, &labels, &full, 3, NllMode::OneVsRest).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let p: Vec<f64> = (0..3).flat_map(|n| {
            let mut v = vec![(1.0 - 1.0 / e) / 2.0; 3];
            v[n] = 1.0 / e;
            v
        }).collect();
        let got = nll(&p, 3, &labels, &full, 3, NllMode::TrueClass).unwrap();
        assert!((got - 3.0).abs() < 1e-15);

        // Hand case: true-class probabilities 0.5, 0.25, 0.8.
        let p = [0.5, 0.5, 0.0, 0.75, 0.25, 0.0, 0.1, 0.1, 0.8];
        let want = -(0.5f64.ln() + 0.25f64.ln() + 0.8f64.ln());
        assert!((nll(&p, 3, &labels, &full, 3, NllMode::TrueClass).unwrap() - want).abs() < 1e-15);

        // Zero probability on the truth is floored.
        let p = [0.0, 1.0, 0.0];
        let r = EvaluationRegion::full(1, 1);
        assert!((nll(&p, 3, &[0], &r, 1, NllMode::TrueClass).unwrap() - 1e-12f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn ece_hand_case() {
        // 10 voxels at confidence 0.95 with 8 correct, 10 at 0.55 with 5 correct.
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..10 {
            probs.extend([0.95, 0.05]);
            labels.push(if i < 8 { 0 } else { 1 });
        }
        for i in 0..10 {
            probs.extend([0.45, 0.55]);
            labels.push(if i < 5 { 1 } else { 0 });
        }
        let region = EvaluationRegion::full(20, 1);
        let bins = calibration_bins(&probs, 2, &labels, &region, 20, DEFAULT_BINS).unwrap();
        assert_eq!(bins.counts[9], 10);
        assert_eq!(bins.counts[5], 10);
        assert_eq!(bins.total(), 20);
        let want = 0.5 * 0.15 + 0.5 * 0.05;
        assert!((bins.ece().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ece_zero_when_calibrated() {
        let region = EvaluationRegion::full(4, 1);
        assert_eq!(ece(&[1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0], 2, &[0, 1, 0, 1], &region, 4, 10).unwrap(), 0.0);
        // Confidence 0.5 and half right.
        assert_eq!(ece(&[0.5; 8], 2, &[0, 1, 0, 1], &region, 4, 10).unwrap(), 0.0);
    }

    #[test]
    fn bin_edges() {
        let b = CalibrationBins::new(10);
        assert_eq!(b.bin_of(0.0), 0);
        assert_eq!(b.bin_of(0.1), 1);
        assert_eq!(b.bin_of(0.0999), 0);
        assert_eq!(b.bin_of(1.0), 9);
    }

    #[test]
    fn foreground_box_cases() {
        let mut labels = vec![0u16; 6 * 5];
        labels[4 * 6 + 3] = 2;
        assert_eq!(foreground_box(&labels, 6).unwrap(), EvaluationRegion { x0: 3, y0: 4, x1: 3, y1: 4 });
        assert_eq!(foreground_box(&[1u16; 30], 6).unwrap(), EvaluationRegion::full(6, 5));
        assert!(matches!(foreground_box(&[0u16; 30], 6), Err(Error::NoForeground)));
    }

    fn simplex_rows(k: usize, n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.001f64..1.0, k * n).prop_map(move |raw| {
            raw.chunks(k).flat_map(|c| {
                let s: f64 = c.iter().sum();
                c.iter().map(move |v| v / s).collect::<Vec<_>>()
            }).collect()
        })
    }

    proptest! {
        #[test]
        fn dice_symmetric(a in prop::collection::vec(0u16..3, 40), b in prop::collection::vec(0u16..3, 40), c in 0u16..3) {
            prop_assert_eq!(dice_score(&a, &b, &Selector::Class(c)), dice_score(&b, &a, &Selector::Class(c)));
        }

        #[test]
        fn foreground_box_matches_scan(mask in prop::collection::vec(prop::bool::weighted(0.1), 48)) {
            let labels: Vec<u16> = mask.iter().map(|&m| u16::from(m)).collect();
            let w = 8;
            let fg: Vec<(usize, usize)> = (0..48).filter(|&n| mask[n]).map(|n| (n % w, n / w)).collect();
            match foreground_box(&labels, w) {
                Err(_) => prop_assert!(fg.is_empty()),
                Ok(r) => {
                    prop_assert_eq!(r.x0, fg.iter().map(|p| p.0).min().unwrap());
                    prop_assert_eq!(r.x1, fg.iter().map(|p| p.0).max().unwrap());
                    prop_assert_eq!(r.y0, fg.iter().map(|p| p.1).min().unwrap());
                    prop_assert_eq!(r.y1, fg.iter().map(|p| p.1).max().unwrap());
                }
            }
        }

        #[test]
        fn ece_bounded_and_relabel_invariant(p in simplex_rows(3, 30), labels in prop::collection::vec(0u16..3, 30)) {
            let region = EvaluationRegion::full(6, 5);
            let e = ece(&p, 3, &labels, &region, 6, 10).unwrap();
            prop_assert!((0.0..=1.0).contains(&e));
            // Cyclic relabeling applied to both. Ties in argmax could pick a
            // different class, so only compare when rows have a unique max.
            let unique = p.chunks(3).all(|r| {
                let m = r.iter().cloned().fold(f64::MIN, f64::max);
                r.iter().filter(|&&v| v == m).count() == 1
            });
            let perm = [1usize, 2, 0];
            let mut q = vec![0.0; p.len()];
            for n in 0..30 {
                for c in 0..3 {
                    q[n * 3 + perm[c]] = p[n * 3 + c];
                }
            }
            let relabeled: Vec<u16> = labels.iter().map(|&l| perm[l as usize] as u16).collect();
            if unique {
                prop_assert_eq!(e, ece(&q, 3, &relabeled, &region, 6, 10).unwrap());
            }
        }

        #[test]
        fn truth_minimizes_brier_and_nll(p in simplex_rows(3, 20), labels in prop::collection::vec(0u16..3, 20)) {
            let region = EvaluationRegion::full(5, 4);
            let truth = one_hot(&labels, 3);
            prop_assert_eq!(brier(&truth, 3, &labels, &region, 5).unwrap(), 0.0);
            prop_assert_eq!(nll(&truth, 3, &labels, &region, 5, NllMode::TrueClass).unwrap(), 0.0);
            prop_assert!(brier(&p, 3, &labels, &region, 5).unwrap() > 0.0);
            prop_assert!(nll(&p, 3, &labels, &region, 5, NllMode::TrueClass).unwrap() > 0.0);
        }
    }
}
