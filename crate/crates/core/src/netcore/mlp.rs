use serde::{Deserialize, Serialize};

use crate::dataset::EntityPool;
use crate::error::{Error, Result};
use crate::prefmodel::logistic;
use crate::scalar::Scalar;

/// Layer widths of an alignment network. The output layer (width 1) is
/// implicit.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
}

impl Architecture {
    /// Three tanh hidden layers of widths 16, 24, 16.
    pub fn standard(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: vec![16, 24, 16],
        }
    }

    /// `(fan_in, fan_out)` per dense layer, output layer included.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(1);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer<S> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: Vec<S>,
    pub bias: Vec<S>,
}

impl<S: Scalar> DenseLayer<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![S::zero(); inputs * outputs],
            bias: vec![S::zero(); outputs],
        }
    }

    #[inline]
    fn apply(&self, x: &[S], out: &mut [S]) {
        for (o, out_o) in out.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let mut acc = self.bias[o];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            *out_o = acc;
        }
    }
}

/// Stable `ln(1 + e^x)`.
#[inline]
pub fn softplus<S: Scalar>(x: S) -> S {
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

/// Parameters of one alignment network: tanh hidden layers and a negated
/// softplus output, so outputs are always strictly negative.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters<S> {
    layers: Vec<DenseLayer<S>>,
}

impl<S: Scalar> MlpParameters<S> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layers: arch
                .layer_shapes()
                .into_iter()
                .map(|(i, o)| DenseLayer::zeros(i, o))
                .collect(),
        }
    }

    /// Validates shapes and finiteness.
    pub fn from_layers(layers: Vec<DenseLayer<S>>) -> Result<Self> {
        if layers.is_empty() || layers.last().map(|l| l.outputs) != Some(1) {
            return Err(Error::Data("network must end in a single output".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].outputs != pair[1].inputs {
                return Err(Error::Dimension {
                    expected: pair[0].outputs,
                    got: pair[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Data("dense layer storage does not match its shape".into()));
            }
            if l.weights.iter().chain(&l.bias).any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("network parameter".into()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer<S>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer<S>] {
        &mut self.layers
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            input_dim: self.layers[0].inputs,
            hidden: self.layers[..self.layers.len() - 1].iter().map(|l| l.outputs).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters in storage order: per layer, weights then biases.
    pub fn parameters(&self) -> impl Iterator<Item = &S> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(&l.bias))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    fn pre_output(&self, features: &[S]) -> S {
        let width = self.layers.iter().map(|l| l.outputs.max(l.inputs)).max().unwrap_or(1);
        let mut x = features.to_vec();
        let mut y = vec![S::zero(); width];
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let out = &mut y[..layer.outputs];
            layer.apply(&x, out);
            if k < last {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
            }
            x.clear();
            x.extend_from_slice(out);
        }
        x[0]
    }

    /// Alignment of a single feature vector.
    pub fn forward(&self, features: &[S]) -> Result<S> {
        if features.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        Ok(-softplus(self.pre_output(features)))
    }

    /// Forward pass over every entity of the pool, keeping activations for
    /// the backward pass.
    pub fn forward_batch(&self, pool: &EntityPool<S>) -> Result<MlpTape<S>> {
        if pool.dim() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: pool.dim(),
            });
        }
        let n = pool.len();
        let last = self.layers.len() - 1;
        let mut hidden: Vec<Vec<S>> = Vec::with_capacity(last);
        let mut pre_output = vec![S::zero(); n];
        for (k, layer) in self.layers.iter().enumerate() {
            let mut out = vec![S::zero(); n * layer.outputs];
            for s in 0..n {
                let x: &[S] = if k == 0 {
                    pool.features(crate::dataset::EntityId(s as u32))
                } else {
                    let w = layer.inputs;
                    &hidden[k - 1][s * w..(s + 1) * w]
                };
                layer.apply(x, &mut out[s * layer.outputs..(s + 1) * layer.outputs]);
            }
            if k < last {
                for v in out.iter_mut() {
                    *v = v.tanh();
                }
                hidden.push(out);
            } else {
                pre_output = out;
            }
        }
        let output = pre_output.iter().map(|&z| -softplus(z)).collect();
        Ok(MlpTape {
            hidden,
            pre_output,
            output,
        })
    }

    /// Accumulates into `grad` the gradient of `sum_s d_output[s] * out[s]`.
    pub fn backward_batch(&self, pool: &EntityPool<S>, tape: &MlpTape<S>, d_output: &[S], grad: &mut MlpParameters<S>) {
        let n = tape.output.len();
        debug_assert_eq!(d_output.len(), n);
        let last = self.layers.len() - 1;
        // Gradient with respect to the current layer's pre-activation.
        let mut delta: Vec<S> = tape
            .pre_output
            .iter()
            .zip(d_output)
            .map(|(&z, &g)| -g * logistic(z))
            .collect();
        for k in (0..=last).rev() {
            let layer = &self.layers[k];
            let g = &mut grad.layers[k];
            let (ni, no) = (layer.inputs, layer.outputs);
            let mut d_input = if k > 0 { vec![S::zero(); n * ni] } else { Vec::new() };
            for s in 0..n {
                let x: &[S] = if k == 0 {
                    pool.features(crate::dataset::EntityId(s as u32))
                } else {
                    &tape.hidden[k - 1][s * ni..(s + 1) * ni]
                };
                let ds = &delta[s * no..(s + 1) * no];
                for (o, &d) in ds.iter().enumerate() {
                    if d == S::zero() {
                        continue;
                    }
                    g.bias[o] += d;
                    let grow = &mut g.weights[o * ni..(o + 1) * ni];
                    for (gw, xi) in grow.iter_mut().zip(x) {
                        *gw += d * *xi;
                    }
                    if k > 0 {
                        let wrow = &layer.weights[o * ni..(o + 1) * ni];
                        let di = &mut d_input[s * ni..(s + 1) * ni];
                        for (dv, w) in di.iter_mut().zip(wrow) {
                            *dv += d * *w;
                        }
                    }
                }
            }
            if k > 0 {
                let h = &tape.hidden[k - 1];
                for (dv, hv) in d_input.iter_mut().zip(h) {
                    *dv *= S::one() - *hv * *hv;
                }
                delta = d_input;
            }
        }
    }
}

/// Activations of a batched forward pass.
#[derive(Clone, Debug)]
pub struct MlpTape<S> {
    hidden: Vec<Vec<S>>,
    pre_output: Vec<S>,
    output: Vec<S>,
}

impl<S: Scalar> MlpTape<S> {
    /// Network output per entity (indexed by entity id).
    pub fn output(&self) -> &[S] {
        &self.output
    }
}
