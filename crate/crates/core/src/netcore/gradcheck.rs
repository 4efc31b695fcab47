use rand::seq::index::sample;
use rand::Rng;

use super::model::ModelParameters;
use crate::error::Result;
use crate::scalar::Scalar;

/// A scalar objective of the model parameters with an analytic gradient.
pub trait Objective<S: Scalar> {
    fn value(&self, params: &ModelParameters<S>) -> Result<S>;

    fn value_and_gradient(&self, params: &ModelParameters<S>) -> Result<(S, ModelParameters<S>)>;
}

/// Analytic gradient of `objective`; non-finite components surface as
/// divergence errors.
pub fn grad_loss<S: Scalar, O: Objective<S> + ?Sized>(
    params: &ModelParameters<S>,
    objective: &O,
) -> Result<ModelParameters<S>> {
    let (_, g) = objective.value_and_gradient(params)?;
    if let Some(index) = g.first_non_finite() {
        return Err(crate::Error::Divergence { index });
    }
    Ok(g)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_relative_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub checked: usize,
}

/// Compares the analytic gradient against central differences on
/// `samples` random coordinates (all coordinates when there are fewer).
pub fn finite_difference_check<S: Scalar, O: Objective<S> + ?Sized, R: Rng>(
    params: &ModelParameters<S>,
    objective: &O,
    h: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradientCheck> {
    let analytic = grad_loss(params, objective)?.to_flat();
    check_against(params, objective, &analytic, h, samples, rng)
}

/// Like [`finite_difference_check`] with a caller-supplied gradient.
pub fn check_against<S: Scalar, O: Objective<S> + ?Sized, R: Rng>(
    params: &ModelParameters<S>,
    objective: &O,
    analytic: &[S],
    h: f64,
    samples: usize,
    rng: &mut R,
) -> Result<GradientCheck> {
    let len = params.len();
    let mut coords: Vec<usize> = if samples >= len {
        (0..len).collect()
    } else {
        sample(rng, len, samples).into_vec()
    };
    coords.sort_unstable();
    let mut probe = params.clone();
    let mut worst = (0.0f64, coords.first().copied().unwrap_or(0));
    for &i in &coords {
        let orig = *probe.coordinate_mut(i);
        *probe.coordinate_mut(i) = orig + S::lit(h);
        let up = objective.value(&probe)?.as_f64();
        *probe.coordinate_mut(i) = orig - S::lit(h);
        let down = objective.value(&probe)?.as_f64();
        *probe.coordinate_mut(i) = orig;
        let numeric = (up - down) / (2.0 * h);
        let a = analytic[i].as_f64();
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > worst.0 {
            worst = (rel, i);
        }
    }
    Ok(GradientCheck {
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked: coords.len(),
    })
}
