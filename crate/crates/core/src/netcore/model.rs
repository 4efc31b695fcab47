use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::mlp::{Architecture, MlpParameters};
use crate::dataset::Entity;
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::scalar::Scalar;

/// Softmax with max-subtraction.
pub fn softmax_weights<S: Scalar>(omega: &[S]) -> Vec<S> {
    let max = omega.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = omega.iter().map(|&w| (w - max).exp()).collect();
    let total: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Unnormalized value-system weights of one cluster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParameters<S> {
    pub omega: Vec<S>,
}

impl<S: Scalar> WeightParameters<S> {
    pub fn new(omega: Vec<S>) -> Result<Self> {
        if omega.is_empty() {
            return Err(Error::Data("empty weight vector".into()));
        }
        if omega.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("weight logits".into()));
        }
        Ok(Self { omega })
    }

    pub fn zeros(values: usize) -> Self {
        Self {
            omega: vec![S::zero(); values],
        }
    }

    pub fn weights(&self) -> Vec<S> {
        softmax_weights(&self.omega)
    }
}

/// One alignment network per value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingParameters<S> {
    pub nets: Vec<MlpParameters<S>>,
}

impl<S: Scalar> GroundingParameters<S> {
    pub fn new(nets: Vec<MlpParameters<S>>) -> Result<Self> {
        let Some(first) = nets.first() else {
            return Err(Error::Data("grounding needs at least one value".into()));
        };
        let dim = first.input_dim();
        if let Some(bad) = nets.iter().find(|n| n.input_dim() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                got: bad.input_dim(),
            });
        }
        Ok(Self { nets })
    }

    pub fn value_count(&self) -> usize {
        self.nets.len()
    }

    pub fn input_dim(&self) -> usize {
        self.nets[0].input_dim()
    }

    /// `(A_1(x), ..., A_m(x))`.
    pub fn evaluate(&self, features: &[S]) -> Result<Vec<S>> {
        self.nets.iter().map(|n| n.forward(features)).collect()
    }
}

/// A cluster's value-system function: softmax weights over the shared
/// grounding.
#[derive(Clone, Copy, Debug)]
pub struct ValueSystemFunction<'a, S> {
    pub grounding: &'a GroundingParameters<S>,
    pub weights: &'a WeightParameters<S>,
}

impl<'a, S: Scalar> ValueSystemFunction<'a, S> {
    pub fn new(grounding: &'a GroundingParameters<S>, weights: &'a WeightParameters<S>) -> Result<Self> {
        if grounding.value_count() != weights.omega.len() {
            return Err(Error::Dimension {
                expected: grounding.value_count(),
                got: weights.omega.len(),
            });
        }
        Ok(Self { grounding, weights })
    }

    pub fn evaluate(&self, features: &[S]) -> Result<S> {
        let a = self.grounding.evaluate(features)?;
        Ok(self.weights.weights().iter().zip(&a).map(|(&w, &x)| w * x).sum())
    }
}

pub fn vs_forward<S: Scalar>(vsf: &ValueSystemFunction<'_, S>, e: &Entity<S>) -> Result<S> {
    vsf.evaluate(&e.features)
}

/// Grounding parameters plus one weight vector per cluster slot.
///
/// The flat view orders every network's parameters (value order, then
/// storage order) before the cluster logits (cluster order, then value
/// order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParameters<S> {
    pub grounding: GroundingParameters<S>,
    pub clusters: Vec<WeightParameters<S>>,
}

impl<S: Scalar> ModelParameters<S> {
    pub fn new(grounding: GroundingParameters<S>, clusters: Vec<WeightParameters<S>>) -> Result<Self> {
        if clusters.is_empty() {
            return Err(Error::config("lmax", "must be at least 1"));
        }
        for c in &clusters {
            if c.omega.len() != grounding.value_count() {
                return Err(Error::Dimension {
                    expected: grounding.value_count(),
                    got: c.omega.len(),
                });
            }
        }
        Ok(Self { grounding, clusters })
    }

    pub fn value_count(&self) -> usize {
        self.grounding.value_count()
    }

    pub fn cluster_count(&self) -> usize {
        self.clusters.len()
    }

    pub fn function(&self, cluster: usize) -> ValueSystemFunction<'_, S> {
        ValueSystemFunction {
            grounding: &self.grounding,
            weights: &self.clusters[cluster],
        }
    }

    /// Same shapes, every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for p in z.parameters_mut() {
            *p = S::zero();
        }
        z
    }

    /// Number of network parameters (the leading block of the flat view).
    pub fn theta_len(&self) -> usize {
        self.grounding.nets.iter().map(|n| n.parameter_count()).sum()
    }

    pub fn len(&self) -> usize {
        self.theta_len() + self.clusters.len() * self.value_count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn parameters(&self) -> impl Iterator<Item = &S> {
        self.grounding
            .nets
            .iter()
            .flat_map(|n| n.parameters())
            .chain(self.clusters.iter().flat_map(|c| c.omega.iter()))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.grounding
            .nets
            .iter_mut()
            .flat_map(|n| n.parameters_mut())
            .chain(self.clusters.iter_mut().flat_map(|c| c.omega.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<S> {
        self.parameters().copied().collect()
    }

    pub fn set_flat(&mut self, flat: &[S]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: flat.len(),
            });
        }
        for (p, &v) in self.parameters_mut().zip(flat) {
            *p = v;
        }
        Ok(())
    }

    /// Mutable access to one coordinate of the flat view.
    pub fn coordinate_mut(&mut self, index: usize) -> &mut S {
        let m = self.grounding.value_count();
        let mut rest = index;
        for net in &mut self.grounding.nets {
            let n = net.parameter_count();
            if rest < n {
                return net.parameters_mut().nth(rest).expect("index within network");
            }
            rest -= n;
        }
        &mut self.clusters[rest / m].omega[rest % m]
    }

    /// `self -= rate_theta * grad` on the networks and `rate_omega * grad` on
    /// the cluster logits.
    pub fn descend(&mut self, grad: &ModelParameters<S>, rate_theta: S, rate_omega: S) {
        for (net, g) in self.grounding.nets.iter_mut().zip(&grad.grounding.nets) {
            for (p, &d) in net.parameters_mut().zip(g.parameters()) {
                *p -= rate_theta * d;
            }
        }
        for (c, g) in self.clusters.iter_mut().zip(&grad.clusters) {
            for (p, &d) in c.omega.iter_mut().zip(&g.omega) {
                *p -= rate_omega * d;
            }
        }
    }

    /// Index of the first non-finite coordinate, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.parameters().position(|p| !p.is_finite())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)?;
        if let Some(i) = p.first_non_finite() {
            return Err(Error::Divergence { index: i });
        }
        Ok(p)
    }
}

/// Glorot-uniform network weights scaled by `scale`, zero biases and
/// `N(0, 1) * 0.1` logits. The networks draw from stream `"theta"` and the
/// logits from `"omega"`, one sub-stream per value or cluster.
pub fn init_parameters<S: Scalar>(
    seeds: &SeedTree,
    arch: &Architecture,
    values: usize,
    clusters: usize,
    scale: f64,
) -> Result<ModelParameters<S>> {
    if values == 0 {
        return Err(Error::config("values", "must be at least 1"));
    }
    let mut nets = Vec::with_capacity(values);
    for i in 0..values {
        let mut rng = seeds.stream("theta", i as u64);
        let mut net = MlpParameters::zeros(arch);
        for layer in net.layers_mut() {
            let bound = scale * (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = if bound > 0.0 {
                    S::lit(rng.gen_range(-bound..=bound))
                } else {
                    S::zero()
                };
            }
        }
        nets.push(net);
    }
    let weights = (0..clusters)
        .map(|l| {
            let mut rng = seeds.stream("omega", l as u64);
            WeightParameters {
                omega: (0..values)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        S::lit(0.1 * z)
                    })
                    .collect(),
            }
        })
        .collect();
    ModelParameters::new(GroundingParameters::new(nets)?, weights)
}
