//! Singleton-plus-frame mass functions and contour-level operations.
//!
//! Everything here runs in time linear in the number of classes.

use super::mass::{DRIFT_REPAIR_LIMIT, SUM_TOLERANCE};
use super::{Frame, MassFunction, Subset, TOTAL_CONFLICT_EPS};
use crate::error::{Error, Result};

/// Slack allowed on unit-interval entries before they are clamped.
const UNIT_SLACK: f64 = 1e-12;

/// Mass function whose focal sets are among the singletons and the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SimpleMassFunction {
    frame: Frame,
    singletons: Vec<f64>,
    theta: f64,
}

impl SimpleMassFunction {
    pub fn new(frame: &Frame, singletons: Vec<f64>, theta: f64) -> Result<Self> {
        if singletons.len() != frame.len() {
            return Err(Error::DimensionMismatch {
                what: "singleton masses",
                expected: frame.len(),
                got: singletons.len(),
            });
        }
        let mut out = Self { frame: frame.clone(), singletons, theta };
        let entries = out.singletons.iter().chain(std::iter::once(&out.theta));
        if let Some(&bad) = entries.clone().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(Error::OutOfUnitInterval { what: "simple mass", value: bad });
        }
        let sum: f64 = entries.sum();
        let drift = (sum - 1.0).abs();
        if drift > DRIFT_REPAIR_LIMIT {
            return Err(Error::InvalidMass(vec![super::MassViolation::SumNotOne { sum }]));
        }
        if drift > SUM_TOLERANCE {
            out.singletons.iter_mut().for_each(|m| *m /= sum);
            out.theta /= sum;
        }
        Ok(out)
    }

    pub(crate) fn from_parts_unchecked(frame: &Frame, singletons: Vec<f64>, theta: f64) -> Self {
        Self { frame: frame.clone(), singletons, theta }
    }

    pub fn vacuous(frame: &Frame) -> Self {
        Self { frame: frame.clone(), singletons: vec![0.0; frame.len()], theta: 1.0 }
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn singletons(&self) -> &[f64] {
        &self.singletons
    }

    /// Mass on the whole frame.
    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn contour(&self) -> ContourFunction {
        let pl = self.singletons.iter().map(|m| m + self.theta).collect();
        ContourFunction::from_values_clamped(&self.frame, pl)
    }

    /// The same belief state as a general mass function (requires K ≤ 16).
    pub fn to_mass_function(&self) -> Result<MassFunction> {
        let entries = self
            .singletons
            .iter()
            .enumerate()
            .map(|(k, &m)| (Subset::singleton(k), m))
            .chain(std::iter::once((self.frame.full(), self.theta)));
        MassFunction::new(&self.frame, entries)
    }

    /// Dempster's rule restricted to the family; the result stays in it.
    /// Returns the combined mass and the conflict.
    pub fn dempster_combine(&self, other: &SimpleMassFunction) -> Result<(SimpleMassFunction, f64)> {
        self.frame.ensure_same(&other.frame)?;
        let (out, kappa) = combine_simple(&self.singletons, self.theta, &other.singletons, other.theta);
        if kappa >= 1.0 - TOTAL_CONFLICT_EPS {
            return Err(Error::TotalConflict { kappa });
        }
        let (singletons, theta) = out;
        Ok((Self { frame: self.frame.clone(), singletons, theta }, kappa))
    }
}

/// Normalized pairwise combination of two simple mass functions given as
/// raw slices. Returns `((singletons, theta), conflict)`.
pub(crate) fn combine_simple(a: &[f64], a_theta: f64, b: &[f64], b_theta: f64) -> ((Vec<f64>, f64), f64) {
    let mut out: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(&ak, &bk)| ak * bk + ak * b_theta + a_theta * bk)
        .collect();
    let theta = a_theta * b_theta;
    let agree: f64 = out.iter().sum::<f64>() + theta;
    let kappa = 1.0 - agree;
    if agree > 0.0 {
        out.iter_mut().for_each(|m| *m /= agree);
    }
    ((out, theta / agree), kappa)
}

/// Plausibilities of the singletons of a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ContourFunction {
    frame: Frame,
    values: Vec<f64>,
}

impl ContourFunction {
    pub fn new(frame: &Frame, values: Vec<f64>) -> Result<Self> {
        if values.len() != frame.len() {
            return Err(Error::DimensionMismatch {
                what: "contour values",
                expected: frame.len(),
                got: values.len(),
            });
        }
        for &v in &values {
            if !(-UNIT_SLACK..=1.0 + UNIT_SLACK).contains(&v) {
                return Err(Error::OutOfUnitInterval { what: "plausibility", value: v });
            }
        }
        Ok(Self::from_values_clamped(frame, values))
    }

    pub(crate) fn from_values_clamped(frame: &Frame, mut values: Vec<f64>) -> Self {
        values.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        Self { frame: frame.clone(), values }
    }

    pub fn vacuous(frame: &Frame) -> Self {
        Self { frame: frame.clone(), values: vec![1.0; frame.len()] }
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Contour of the orthogonal sum: `pl1·pl2 / (1 - κ)`.
    pub fn combine(&self, other: &ContourFunction, conflict: f64) -> Result<ContourFunction> {
        self.frame.ensure_same(&other.frame)?;
        if !(0.0..1.0).contains(&conflict) {
            return Err(Error::TotalConflict { kappa: conflict });
        }
        let norm = 1.0 - conflict;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b / norm).collect();
        ContourFunction::new(&self.frame, values)
    }

    /// Contour of the contextually discounted mass: `1 - β_k + β_k·pl_k`.
    pub fn contextual_discount(&self, beta: &ReliabilityVector) -> Result<ContourFunction> {
        self.frame.ensure_same(beta.frame())?;
        let values = self
            .values
            .iter()
            .zip(beta.values())
            .map(|(&pl, &b)| discounted_plausibility(pl, b))
            .collect();
        Ok(Self::from_values_clamped(&self.frame, values))
    }

    /// Normalizes the contour into a probability distribution.
    pub fn to_probability(&self) -> Result<Vec<f64>> {
        let total: f64 = self.values.iter().sum();
        if total <= 0.0 {
            return Err(Error::ZeroContour);
        }
        Ok(self.values.iter().map(|v| v / total).collect())
    }
}

#[inline]
pub(crate) fn discounted_plausibility(pl: f64, beta: f64) -> f64 {
    1.0 - beta + beta * pl
}

/// Per-class reliability coefficients of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityVector {
    frame: Frame,
    beta: Vec<f64>,
}

impl ReliabilityVector {
    pub fn new(frame: &Frame, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != frame.len() {
            return Err(Error::DimensionMismatch {
                what: "reliability coefficients",
                expected: frame.len(),
                got: beta.len(),
            });
        }
        if let Some(&b) = beta.iter().find(|b| !(0.0..=1.0).contains(*b)) {
            return Err(Error::OutOfUnitInterval { what: "reliability", value: b });
        }
        Ok(Self { frame: frame.clone(), beta })
    }

    pub fn uniform(frame: &Frame, beta: f64) -> Result<Self> {
        Self::new(frame, vec![beta; frame.len()])
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn values(&self) -> &[f64] {
        &self.beta
    }
}
