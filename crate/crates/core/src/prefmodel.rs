//! Pointwise preference primitives: Bradley-Terry probability, the
//! disagreement indicator, Bernoulli Jensen-Shannon divergence and the
//! pairwise cross-entropy loss. Logarithms are natural.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Clamp applied to probabilities before taking logs.
pub const PROB_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct PreferenceProbability<S>(S);

impl<S: Scalar> PreferenceProbability<S> {
    pub fn new(p: S) -> Result<Self> {
        if p >= S::zero() && p <= S::one() {
            Ok(Self(p))
        } else {
            Err(Error::Data(format!("probability {p} outside [0, 1]")))
        }
    }

    #[inline]
    pub fn get(self) -> S {
        self.0
    }
}

/// Probability that the left entity is preferred given the score difference
/// `left - right`.
///
/// Negative differences are computed as the exact complement of the positive
/// branch, so `logistic(d) + logistic(-d) == 1` holds bit-exactly.
#[inline]
pub fn logistic<S: Scalar>(diff: S) -> S {
    if diff >= S::zero() {
        S::one() / (S::one() + (-diff).exp())
    } else {
        S::one() - S::one() / (S::one() + diff.exp())
    }
}

/// `exp(a) / (exp(a) + exp(b))` in logistic form.
pub fn bradley_terry<S: Scalar>(a_left: S, a_right: S) -> Result<PreferenceProbability<S>> {
    if !a_left.is_finite() || !a_right.is_finite() {
        return Err(Error::NonFinite(format!("alignment pair ({a_left}, {a_right})")));
    }
    Ok(PreferenceProbability(logistic(a_left - a_right)))
}

/// 0 when both probabilities express the same preference (both one half,
/// both above, or both below), 1 otherwise. Comparisons are exact.
#[inline]
pub fn delta<S: Scalar>(p: S, q: S) -> u8 {
    let half = S::half();
    let agree = (p == half && q == half) || (p > half && q > half) || (p < half && q < half);
    u8::from(!agree)
}

#[inline]
fn xlogy_ratio<S: Scalar>(x: S, y: S) -> S {
    if x > S::zero() {
        x * (x / y).ln()
    } else {
        S::zero()
    }
}

/// Jensen-Shannon divergence between Bernoulli(p1) and Bernoulli(p2), in
/// `[0, ln 2]`.
pub fn jsd_bernoulli<S: Scalar>(p1: S, p2: S) -> S {
    let m = (p1 + p2) * S::half();
    let one = S::one();
    let kl = |p: S| xlogy_ratio(p, m) + xlogy_ratio(one - p, one - m);
    let js = S::half() * (kl(p1) + kl(p2));
    js.max(S::zero()).min(S::lit(std::f64::consts::LN_2))
}

#[inline]
pub(crate) fn clamp_probability<S: Scalar>(p: S) -> S {
    let eps = S::lit(PROB_EPS);
    p.max(eps).min(S::one() - eps)
}

/// `-y ln p - (1 - y) ln(1 - p)` with `p` clamped to `[eps, 1 - eps]`.
pub fn bt_cross_entropy<S: Scalar>(p: PreferenceProbability<S>, y: S) -> S {
    cross_entropy_raw(p.get(), y)
}

#[inline]
pub(crate) fn cross_entropy_raw<S: Scalar>(p: S, y: S) -> S {
    let p = clamp_probability(p);
    let one = S::one();
    let mut loss = S::zero();
    if y > S::zero() {
        loss -= y * p.ln();
    }
    if y < one {
        loss -= (one - y) * (one - p).ln();
    }
    loss
}

/// Derivative of the cross-entropy with respect to the score difference,
/// zero where the clamp is active.
#[inline]
pub(crate) fn cross_entropy_grad_diff<S: Scalar>(p: S, y: S) -> S {
    let eps = S::lit(PROB_EPS);
    if p <= eps || p >= S::one() - eps {
        S::zero()
    } else {
        p - y
    }
}

/// Derivative of `jsd_bernoulli(logistic(d), q)` with respect to `d`
/// (holding `q` fixed).
#[inline]
pub(crate) fn jsd_grad_diff<S: Scalar>(p: S, diff: S, q: S) -> S {
    let slope = p * (S::one() - p);
    if slope == S::zero() {
        return S::zero();
    }
    let m = (p + q) * S::half();
    if m <= S::zero() || m >= S::one() {
        return S::zero();
    }
    let logit_m = m.ln() - (S::one() - m).ln();
    S::half() * slope * (diff - logit_m)
}
