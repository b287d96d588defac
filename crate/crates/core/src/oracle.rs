//! Brute-force reference implementations over dense powerset arrays.
//!
//! Nothing here shares code with the production paths in [`crate::dst`];
//! every function enumerates subsets directly from the definitions. The
//! test suites and the `selftest` command compare the two.

use crate::dst::{MassFunction, Subset};

/// Dense mass vector indexed by subset bitmask, length `2^K`.
pub type Dense = Vec<f64>;

pub fn dense(m: &MassFunction) -> Dense {
    let mut out = vec![0.0; 1 << m.frame().len()];
    for (a, v) in m.focal_sets() {
        out[a.bits() as usize] = v;
    }
    out
}

pub fn belief(m: &Dense, a: usize) -> f64 {
    (0..m.len()).filter(|&b| b & !a == 0).map(|b| m[b]).sum()
}

pub fn plausibility(m: &Dense, a: usize) -> f64 {
    (0..m.len()).filter(|&b| b & a != 0).map(|b| m[b]).sum()
}

pub fn contour(m: &Dense, k: usize) -> Vec<f64> {
    (0..k).map(|i| plausibility(m, 1 << i)).collect()
}

/// Unnormalized conjunctive sum over all pairs, then Dempster normalization.
/// Returns `None` on total conflict.
pub fn combine(m1: &Dense, m2: &Dense) -> Option<(Dense, f64)> {
    let n = m1.len();
    let mut raw = vec![0.0; n];
    for b in 0..n {
        for c in 0..n {
            raw[b & c] += m1[b] * m2[c];
        }
    }
    let kappa = raw[0];
    if kappa >= 1.0 - 1e-12 {
        return None;
    }
    raw[0] = 0.0;
    Some((raw.into_iter().map(|v| v / (1.0 - kappa)).collect(), kappa))
}

/// `Σ_{B⊆A} m(B) Π_{k∈A∖B}(1-β_k) Π_{l∉A} β_l`, evaluated literally.
pub fn contextual_discount(m: &Dense, beta: &[f64]) -> Dense {
    let k = beta.len();
    let n = 1usize << k;
    let mut out = vec![0.0; n];
    for (a, slot) in out.iter_mut().enumerate() {
        for b in 0..n {
            if b & !a != 0 {
                continue;
            }
            let mut w = m[b];
            for (i, &bi) in beta.iter().enumerate() {
                let in_a = a >> i & 1 == 1;
                let in_b = b >> i & 1 == 1;
                if in_a && !in_b {
                    w *= 1.0 - bi;
                } else if !in_a {
                    w *= bi;
                }
            }
            *slot += w;
        }
    }
    out
}

/// Conditioning via the definition `m(B|A) = Σ_{C∩A=B} m(C) / Pl(A)`.
pub fn condition(m: &Dense, a: usize) -> Option<Dense> {
    let pl = plausibility(m, a);
    if pl <= 1e-12 {
        return None;
    }
    let mut out = vec![0.0; m.len()];
    for (c, &v) in m.iter().enumerate() {
        if c & a != 0 {
            out[c & a] += v / pl;
        }
    }
    Some(out)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Mass on `A` read back from a dense vector.
pub fn at(m: &Dense, a: Subset) -> f64 {
    m[a.bits() as usize]
}

/// Simple per-voxel fusion straight from the defining formula:
/// `p_k ∝ Π_t (1 - β_tk + β_tk pl_tk)`.
pub fn fuse(pl: &[Vec<f64>], beta: &[Vec<f64>]) -> Vec<f64> {
    let k = pl[0].len();
    let prods: Vec<f64> = (0..k)
        .map(|c| {
            pl.iter()
                .zip(beta)
                .map(|(p, b)| 1.0 - b[c] + b[c] * p[c])
                .product()
        })
        .collect();
    let total: f64 = prods.iter().sum();
    prods.into_iter().map(|v| v / total).collect()
}
