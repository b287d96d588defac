//! Adam with bias-corrected moments.

use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
    pub step: u64,
}

impl OptimizerState {
    /// Zero moments shaped like `params`.
    pub fn new(shapes: &[usize]) -> Self {
        Self {
            first: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            second: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.first.iter().map(Vec::len).collect()
    }
}

/// One update. Fails without modifying anything if a gradient is not finite.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut OptimizerState, lr: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::DimensionMismatch { what: "parameter groups", expected: state.first.len(), got: params.len() });
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.first[i].len() {
            return Err(Error::DimensionMismatch { what: "parameter group size", expected: p.len(), got: g.len() });
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { what: format!("gradient group {i} entry {j}"), step: state.step + 1 });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.first[i], &mut state.second[i]);
        for j in 0..p.len() {
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            p[j] -= lr * m_hat / (v_hat.sqrt() + EPSILON);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = vec![1.0, -2.0];
        let mut s = OptimizerState::new(&[2]);
        adam_step(&mut [&mut p], &[&[0.0, 0.0]], &mut s, 0.01).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0, 0.0];
        let mut s = OptimizerState::new(&[2]);
        adam_step(&mut [&mut p], &[&[3.0, -0.5]], &mut s, 0.01).unwrap();
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+ε).
        assert!((p[0] + 0.01).abs() < 1e-9);
        assert!((p[1] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_gradient_aborts_untouched() {
        let mut p = vec![1.0];
        let mut s = OptimizerState::new(&[1]);
        let err = adam_step(&mut [&mut p], &[&[f64::NAN]], &mut s, 0.01).unwrap_err();
        assert_eq!(err.code(), "E_DIVERGED");
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = vec![0.5, 0.5];
            let mut s = OptimizerState::new(&[2]);
            for i in 0..50 {
                let g = [p[0] - 1.0 + i as f64 * 1e-3, 2.0 * p[1]];
                adam_step(&mut [&mut p], &[&g], &mut s, 0.01).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
