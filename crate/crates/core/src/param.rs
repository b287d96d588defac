//! Smooth reparameterizations used to keep constrained parameters in range.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(e^y - 1)` for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// Positive reparameterization with softplus dynamics, anchored so that a
/// raw value of 0 maps to exactly `anchor`:
/// `anchor · softplus(r0 + raw) / softplus(r0)` with `softplus(r0) ≈ anchor`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnchoredSoftplus {
    anchor: f64,
    offset: f64,
    scale: f64,
}

impl AnchoredSoftplus {
    pub fn new(anchor: f64) -> Self {
        let offset = softplus_inverse(anchor);
        Self { anchor, offset, scale: softplus(offset) }
    }

    #[inline]
    pub fn value(&self, raw: f64) -> f64 {
        self.anchor * (softplus(self.offset + raw) / self.scale)
    }

    /// `d value / d raw`.
    #[inline]
    pub fn derivative(&self, raw: f64) -> f64 {
        self.anchor * sigmoid(self.offset + raw) / self.scale
    }

    pub fn inverse(&self, value: f64) -> f64 {
        let guess = softplus_inverse(value / self.anchor * self.scale) - self.offset;
        exact_inverse(|r| self.value(r), value, guess)
    }
}

/// Searches a few ulps around `guess` for an `x` with `f(x) == target`, so
/// that round-trips through a reparameterization reproduce the constrained
/// value bit-for-bit. Falls back to the closest candidate.
pub fn exact_inverse(f: impl Fn(f64) -> f64, target: f64, guess: f64) -> f64 {
    if !guess.is_finite() || f(guess) == target {
        return guess;
    }
    let mut best = guess;
    let mut best_err = (f(guess) - target).abs();
    let (mut up, mut down) = (guess, guess);
    for _ in 0..256 {
        up = up.next_up();
        down = down.next_down();
        for x in [up, down] {
            let err = (f(x) - target).abs();
            if err == 0.0 {
                return x;
            }
            if err < best_err {
                best = x;
                best_err = err;
            }
        }
    }
    best
}
