//! Learning the value system of a society from pairwise preferences.
//!
//! A society is described by a shared *value grounding* (one small network per
//! value, scoring how aligned an entity is with that value) and a handful of
//! cluster *value systems* (softmax weights over the values). Agents are
//! assigned to the cluster that best explains their stated choices.
//!
//! The crate is organised bottom-up:
//!
//! - [`dataset`] / [`route_choice`]: entities, preference records, CSV ingestion.
//! - [`prefmodel`]: Bradley-Terry probability, disagreement, divergences, losses.
//! - [`metrics`]: coherence, discordance, representativeness, conciseness, Dunn.
//! - [`netcore`]: alignment networks, softmax weights and their gradients.
//! - [`emtrain`]: the Lagrangian EM trainer.
//! - [`evolution`]: the population-memory search wrapped around the trainer.
//! - [`synthlab`]: planted synthetic societies, baselines, feasibility scan.
//! - [`experiment`]: configuration profiles, commands and result bundles.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix it to `f64`, which is what the experiment pipeline uses.

pub mod dataset;
pub mod emtrain;
pub mod error;
pub mod evolution;
pub mod experiment;
pub mod metrics;
pub mod netcore;
pub mod prefmodel;
pub mod rng;
pub mod route_choice;
pub mod scalar;
pub mod synthlab;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Exact rational scalar used by the linear feasibility scan.
pub type Rational = num_rational::Ratio<i64>;

pub type Entity = dataset::Entity<f64>;
pub type EntityPool = dataset::EntityPool<f64>;
pub type Society = dataset::Society<f64>;
pub type MlpParameters = netcore::MlpParameters<f64>;
pub type GroundingParameters = netcore::GroundingParameters<f64>;
pub type WeightParameters = netcore::WeightParameters<f64>;
pub type ModelParameters = netcore::ModelParameters<f64>;
pub type TrainConfig = emtrain::TrainConfig<f64>;
pub type TrainState = emtrain::TrainState<f64>;
pub type LagrangeState = emtrain::LagrangeState<f64>;
pub type CandidateSolution = evolution::CandidateSolution<f64>;
pub type SolutionMemory = evolution::SolutionMemory<f64>;
pub type SearchConfig = evolution::SearchConfig<f64>;
pub type SocietyScores = metrics::SocietyScores<f64>;
