//! Alignment networks, softmax value-system weights, cached batched forward
//! passes with a hand-written reverse pass, and a finite-difference gradient
//! checker.

mod gradcheck;
mod mlp;
mod model;
mod tape;

pub use gradcheck::{check_against, finite_difference_check, grad_loss, GradientCheck, Objective};
pub use mlp::{softplus, Architecture, DenseLayer, MlpParameters, MlpTape};
pub use model::{
    init_parameters, softmax_weights, vs_forward, GroundingParameters, ModelParameters, ValueSystemFunction,
    WeightParameters,
};
pub use tape::{Cotangent, ModelTape};

/// Shorthand for [`MlpParameters::forward`].
pub fn mlp_forward<S: crate::Scalar>(params: &MlpParameters<S>, features: &[S]) -> crate::Result<S> {
    params.forward(features)
}
