//! General (sparse) mass functions and the exact operations on them.

use std::collections::BTreeMap;
use std::fmt;

use super::{ContourFunction, Frame, ReliabilityVector, Subset, TOTAL_CONFLICT_EPS};
use crate::error::{Error, Result};

/// Tolerance on the total mass of a stored mass function.
pub const SUM_TOLERANCE: f64 = 1e-12;

/// Accumulated drift up to this size is renormalized away; anything larger
/// is reported as an invalid mass function.
pub const DRIFT_REPAIR_LIMIT: f64 = 1e-9;

/// One failed invariant of a mass function.
#[derive(Debug, Clone, PartialEq)]
pub enum MassViolation {
    NonFinite { subset: Subset },
    Negative { subset: Subset, mass: f64 },
    AboveOne { subset: Subset, mass: f64 },
    EmptySetMass { mass: f64 },
    SumNotOne { sum: f64 },
}

impl fmt::Display for MassViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MassViolation::NonFinite { subset } => write!(f, "m({subset:?}) is not finite"),
            MassViolation::Negative { subset, mass } => write!(f, "m({subset:?}) = {mass} < 0"),
            MassViolation::AboveOne { subset, mass } => write!(f, "m({subset:?}) = {mass} > 1"),
            MassViolation::EmptySetMass { mass } => write!(f, "m(∅) = {mass} ≠ 0"),
            MassViolation::SumNotOne { sum } => write!(f, "sum ≠ 1 (sum = {sum})"),
        }
    }
}

/// Basic belief assignment over the subsets of a frame (K ≤ 16).
#[derive(Clone, PartialEq)]
pub struct MassFunction {
    frame: Frame,
    masses: BTreeMap<Subset, f64>,
}

impl fmt::Debug for MassFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.masses.iter()).finish()
    }
}

impl MassFunction {
    /// Builds a mass function without checking the mass invariants.
    ///
    /// Repeated subsets accumulate. Use [`MassFunction::validate`] to inspect
    /// the result.
    pub fn from_raw<I>(frame: &Frame, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Subset, f64)>,
    {
        frame.ensure_general()?;
        let mut masses = BTreeMap::new();
        for (a, m) in entries {
            a.check(frame.len())?;
            *masses.entry(a).or_insert(0.0) += m;
        }
        Ok(Self { frame: frame.clone(), masses })
    }

    /// Builds and validates a mass function. Drift in the total up to
    /// [`DRIFT_REPAIR_LIMIT`] is renormalized.
    pub fn new<I>(frame: &Frame, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Subset, f64)>,
    {
        Self::from_raw(frame, entries)?.finish()
    }

    pub fn vacuous(frame: &Frame) -> Result<Self> {
        Self::new(frame, [(frame.full(), 1.0)])
    }

    /// All mass on `a`.
    pub fn categorical(frame: &Frame, a: Subset) -> Result<Self> {
        Self::new(frame, [(a, 1.0)])
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn mass(&self, a: Subset) -> f64 {
        self.masses.get(&a).copied().unwrap_or(0.0)
    }

    /// Focal sets with their masses, in ascending bitmask order.
    pub fn focal_sets(&self) -> impl Iterator<Item = (Subset, f64)> + '_ {
        self.masses.iter().map(|(&a, &m)| (a, m))
    }

    pub fn validate(&self) -> std::result::Result<(), Vec<MassViolation>> {
        let mut out = Vec::new();
        let mut sum = 0.0;
        for (&a, &m) in &self.masses {
            if !m.is_finite() {
                out.push(MassViolation::NonFinite { subset: a });
                continue;
            }
            if a.is_empty() && m != 0.0 {
                out.push(MassViolation::EmptySetMass { mass: m });
            }
            if m < 0.0 {
                out.push(MassViolation::Negative { subset: a, mass: m });
            } else if m > 1.0 {
                out.push(MassViolation::AboveOne { subset: a, mass: m });
            }
            sum += m;
        }
        if sum.is_finite() && (sum - 1.0).abs() > SUM_TOLERANCE {
            out.push(MassViolation::SumNotOne { sum });
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    fn finish(mut self) -> Result<Self> {
        // Rounding can push a mass just outside [0, 1].
        for m in self.masses.values_mut() {
            if *m > 1.0 && *m <= 1.0 + DRIFT_REPAIR_LIMIT {
                *m = 1.0;
            } else if *m < 0.0 && *m >= -DRIFT_REPAIR_LIMIT {
                *m = 0.0;
            }
        }
        self.masses.retain(|_, m| *m != 0.0);
        let sum: f64 = self.masses.values().sum();
        let drift = (sum - 1.0).abs();
        if drift > SUM_TOLERANCE && drift <= DRIFT_REPAIR_LIMIT {
            for m in self.masses.values_mut() {
                *m /= sum;
            }
        }
        self.validate().map_err(Error::InvalidMass)?;
        Ok(self)
    }

    fn check_subset(&self, a: Subset) -> Result<Subset> {
        a.check(self.frame.len())
    }

    /// `Bel(A)`: total mass of focal sets contained in `A`.
    pub fn belief(&self, a: Subset) -> Result<f64> {
        let a = self.check_subset(a)?;
        Ok(self
            .focal_sets()
            .filter(|(b, _)| b.is_subset_of(a))
            .map(|(_, m)| m)
            .sum())
    }

    /// `Pl(A)`: total mass of focal sets meeting `A`.
    pub fn plausibility(&self, a: Subset) -> Result<f64> {
        let a = self.check_subset(a)?;
        Ok(self
            .focal_sets()
            .filter(|(b, _)| !b.intersect(a).is_empty())
            .map(|(_, m)| m)
            .sum())
    }

    /// Plausibilities of the singletons.
    pub fn contour(&self) -> ContourFunction {
        let mut pl = vec![0.0; self.frame.len()];
        for (b, m) in self.focal_sets() {
            for k in b.indices() {
                pl[k] += m;
            }
        }
        ContourFunction::from_values_clamped(&self.frame, pl)
    }

    /// Dempster's rule. Returns the orthogonal sum and the conflict `κ`.
    pub fn dempster_combine(&self, other: &MassFunction) -> Result<(MassFunction, f64)> {
        self.frame.ensure_same(&other.frame)?;
        let mut kappa = 0.0;
        let mut acc: BTreeMap<Subset, f64> = BTreeMap::new();
        for (b, mb) in self.focal_sets() {
            for (c, mc) in other.focal_sets() {
                let a = b.intersect(c);
                let w = mb * mc;
                if a.is_empty() {
                    kappa += w;
                } else {
                    *acc.entry(a).or_insert(0.0) += w;
                }
            }
        }
        if kappa >= 1.0 - TOTAL_CONFLICT_EPS {
            return Err(Error::TotalConflict { kappa });
        }
        let norm = 1.0 - kappa;
        let out = MassFunction {
            frame: self.frame.clone(),
            masses: acc.into_iter().map(|(a, m)| (a, m / norm)).collect(),
        }
        .finish()?;
        Ok((out, kappa))
    }

    /// `m(·|A)`: combination with the categorical mass on `A`.
    pub fn condition(&self, a: Subset) -> Result<MassFunction> {
        let a = self.check_subset(a)?;
        if a.is_empty() || self.plausibility(a)? <= TOTAL_CONFLICT_EPS {
            return Err(Error::ZeroPlausibility);
        }
        let cat = MassFunction::categorical(&self.frame, a)?;
        match self.dempster_combine(&cat) {
            Ok((m, _)) => Ok(m),
            Err(Error::TotalConflict { .. }) => Err(Error::ZeroPlausibility),
            Err(e) => Err(e),
        }
    }

    /// Least committed mass function whose conditioning on `context` gives
    /// `self`: each focal set `C ⊆ A` moves to `C ∪ Ā`.
    pub fn conditional_embed(&self, context: Subset) -> Result<MassFunction> {
        let context = self.check_subset(context)?;
        let outside = context.complement(self.frame.len());
        let mut entries = Vec::with_capacity(self.masses.len());
        for (c, m) in self.focal_sets() {
            if !c.is_subset_of(context) {
                return Err(Error::FocalSetOutsideContext { bits: c.bits(), context: context.bits() });
            }
            entries.push((c.union(outside), m));
        }
        MassFunction::new(&self.frame, entries)
    }

    /// Classical discounting: `β·m + (1-β)·m_?`.
    pub fn discount(&self, beta: f64) -> Result<MassFunction> {
        if !(0.0..=1.0).contains(&beta) {
            return Err(Error::OutOfUnitInterval { what: "reliability", value: beta });
        }
        let full = self.frame.full();
        let mut entries: Vec<(Subset, f64)> =
            self.focal_sets().map(|(a, m)| (a, beta * m)).collect();
        entries.push((full, 1.0 - beta));
        MassFunction::new(&self.frame, entries)
    }

    /// Contextual discounting with one reliability coefficient per class.
    ///
    /// Computed as the disjunctive combination of `m` with the masses
    /// `m_k(∅) = β_k, m_k({θ_k}) = 1 - β_k`, whose disjunctive product puts
    /// weight `Π_{k∈C}(1-β_k) Π_{l∉C} β_l` on each `C`.
    pub fn contextual_discount(&self, beta: &ReliabilityVector) -> Result<MassFunction> {
        self.frame.ensure_same(beta.frame())?;
        let k = self.frame.len();
        let n = 1usize << k;
        let b = beta.values();
        let mut weight = vec![1.0; n];
        for (c, w) in weight.iter_mut().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                *w *= if c >> j & 1 == 1 { 1.0 - bj } else { bj };
            }
        }
        let mut acc = vec![0.0; n];
        for (focal, m) in self.focal_sets() {
            for (c, &w) in weight.iter().enumerate() {
                if w != 0.0 {
                    acc[(focal.bits() as usize) | c] += m * w;
                }
            }
        }
        MassFunction::new(
            &self.frame,
            acc.into_iter().enumerate().map(|(a, m)| (Subset(a as u32), m)),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dst::Subset;

    fn frame2() -> Frame {
        Frame::numbered(2).unwrap()
    }

    fn example_one() -> MassFunction {
        let f = frame2();
        MassFunction::new(
            &f,
            [(Subset::singleton(0), 0.7), (Subset::singleton(1), 0.2), (f.full(), 0.1)],
        )
        .unwrap()
    }

    #[test]
    fn validate_reports_each_violation() {
        let f = frame2();
        assert!(MassFunction::vacuous(&f).unwrap().validate().is_ok());

        let short = MassFunction::from_raw(&f, [(f.full(), 0.9)]).unwrap();
        let v = short.validate().unwrap_err();
        assert!(matches!(v[..], [MassViolation::SumNotOne { .. }]));
        assert!(v[0].to_string().contains("sum ≠ 1"));

        let empty = MassFunction::from_raw(&f, [(Subset::EMPTY, 0.1), (f.full(), 0.9)]).unwrap();
        let v = empty.validate().unwrap_err();
        assert_eq!(v, vec![MassViolation::EmptySetMass { mass: 0.1 }]);
        assert!(v[0].to_string().contains("m(∅)"));

        assert!(MassFunction::new(&f, [(f.full(), 0.9)]).is_err());
    }

    #[test]
    fn drift_is_repaired_only_when_small() {
        let f = frame2();
        let m = MassFunction::new(&f, [(Subset::singleton(0), 0.5), (f.full(), 0.5 + 5e-10)]).unwrap();
        assert!(m.validate().is_ok());
        assert!(MassFunction::new(&f, [(Subset::singleton(0), 0.5), (f.full(), 0.5 + 1e-8)]).is_err());
    }

    #[test]
    fn belief_and_plausibility() {
        let m = example_one();
        assert_eq!(m.belief(Subset::singleton(0)).unwrap(), 0.7);
        assert!((m.plausibility(Subset::singleton(1)).unwrap() - 0.3).abs() < 1e-15);
        let vac = MassFunction::vacuous(m.frame()).unwrap();
        assert_eq!(vac.belief(Subset::singleton(0)).unwrap(), 0.0);
        assert_eq!(vac.plausibility(Subset::singleton(1)).unwrap(), 1.0);
        assert!(m.belief(Subset(0b100)).is_err());
    }

    #[test]
    fn contour_of_example_one() {
        let pl = example_one().contour();
        assert!((pl.values()[0] - 0.8).abs() < 1e-15);
        assert!((pl.values()[1] - 0.3).abs() < 1e-15);
        let vac = MassFunction::vacuous(&Frame::numbered(4).unwrap()).unwrap();
        assert_eq!(vac.contour().values(), &[1.0; 4]);
    }

    #[test]
    fn combine_hand_case() {
        let f = Frame::numbered(3).unwrap();
        let (a, b) = (Subset::singleton(0), Subset::singleton(1));
        let m1 = MassFunction::new(&f, [(a, 0.6), (f.full(), 0.4)]).unwrap();
        let m2 = MassFunction::new(&f, [(b, 0.5), (f.full(), 0.5)]).unwrap();
        let (m, kappa) = m1.dempster_combine(&m2).unwrap();
        assert!((kappa - 0.3).abs() < 1e-15);
        assert!((m.mass(a) - 3.0 / 7.0).abs() < 1e-15);
        assert!((m.mass(b) - 2.0 / 7.0).abs() < 1e-15);
        assert!((m.mass(f.full()) - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn combine_total_conflict() {
        let f = frame2();
        let m1 = MassFunction::categorical(&f, Subset::singleton(0)).unwrap();
        let m2 = MassFunction::categorical(&f, Subset::singleton(1)).unwrap();
        assert!(matches!(m1.dempster_combine(&m2), Err(Error::TotalConflict { .. })));
    }

    #[test]
    fn combine_with_vacuous_is_identity() {
        let m = example_one();
        let (out, kappa) = m.dempster_combine(&MassFunction::vacuous(m.frame()).unwrap()).unwrap();
        assert_eq!(kappa, 0.0);
        assert_eq!(out, m);
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let m = example_one();
        let other = MassFunction::vacuous(&Frame::new(["x", "y"]).unwrap()).unwrap();
        assert!(matches!(m.dempster_combine(&other), Err(Error::FrameMismatch { .. })));
    }

    #[test]
    fn conditioning() {
        let m = example_one();
        let c = m.condition(Subset::singleton(0)).unwrap();
        assert!((c.mass(Subset::singleton(0)) - 1.0).abs() < 1e-15);

        let f = Frame::numbered(3).unwrap();
        let a = Subset::from_indices([0, 1]);
        let c = MassFunction::vacuous(&f).unwrap().condition(a).unwrap();
        assert_eq!(c.mass(a), 1.0);

        let m2 = MassFunction::categorical(m.frame(), Subset::singleton(1)).unwrap();
        assert!(matches!(m2.condition(Subset::singleton(0)), Err(Error::ZeroPlausibility)));
        assert!(matches!(m.condition(Subset::EMPTY), Err(Error::ZeroPlausibility)));
    }

    #[test]
    fn conditional_embedding() {
        let f = Frame::numbered(3).unwrap();
        let a = Subset::from_indices([0, 1]);
        let m0 = MassFunction::categorical(&f, Subset::singleton(0)).unwrap();
        let m = m0.conditional_embed(a).unwrap();
        assert_eq!(m.mass(Subset::from_indices([0, 2])), 1.0);

        let ex = example_one();
        assert_eq!(ex.conditional_embed(ex.frame().full()).unwrap(), ex);

        let outside = MassFunction::categorical(&f, Subset::singleton(2)).unwrap();
        assert!(matches!(
            outside.conditional_embed(a),
            Err(Error::FocalSetOutsideContext { .. })
        ));
    }

    #[test]
    fn classical_discount() {
        let m = example_one();
        assert_eq!(m.discount(1.0).unwrap(), m);
        assert_eq!(m.discount(0.0).unwrap(), MassFunction::vacuous(m.frame()).unwrap());
        let d = m.discount(0.6).unwrap();
        assert!((d.mass(Subset::singleton(0)) - 0.42).abs() < 1e-15);
        assert!((d.mass(Subset::singleton(1)) - 0.12).abs() < 1e-15);
        assert!((d.mass(m.frame().full()) - 0.46).abs() < 1e-15);
        assert!(m.discount(1.5).is_err());
    }

    #[test]
    fn contextual_discount_example_one() {
        let m = example_one();
        let beta = ReliabilityVector::new(m.frame(), vec![1.0, 0.6]).unwrap();
        let d = m.contextual_discount(&beta).unwrap();
        assert!((d.mass(Subset::singleton(0)) - 0.42).abs() < 1e-12);
        assert!((d.mass(Subset::singleton(1)) - 0.2).abs() < 1e-12);
        assert!((d.mass(m.frame().full()) - 0.38).abs() < 1e-12);

        let ones = ReliabilityVector::uniform(m.frame(), 1.0).unwrap();
        assert_eq!(m.contextual_discount(&ones).unwrap(), m);
    }
}
