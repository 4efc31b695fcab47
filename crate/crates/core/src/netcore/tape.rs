use super::mlp::MlpTape;
use super::model::{softmax_weights, ModelParameters};
use crate::dataset::{EntityId, EntityPool};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Cached forward pass of every network and every cluster function over the
/// whole entity pool.
#[derive(Clone, Debug)]
pub struct ModelTape<S> {
    nets: Vec<MlpTape<S>>,
    weights: Vec<Vec<S>>,
    scores: Vec<Vec<S>>,
}

/// Loss sensitivities fed to [`ModelTape::backward`]: per cluster and entity
/// (`d_scores[l][e]`) and per value and entity (`d_alignments[i][e]`).
#[derive(Clone, Debug)]
pub struct Cotangent<S> {
    pub d_scores: Vec<Vec<S>>,
    pub d_alignments: Vec<Vec<S>>,
}

impl<S: Scalar> Cotangent<S> {
    pub fn zeros(values: usize, clusters: usize, entities: usize) -> Self {
        Self {
            d_scores: vec![vec![S::zero(); entities]; clusters],
            d_alignments: vec![vec![S::zero(); entities]; values],
        }
    }
}

impl<S: Scalar> ModelTape<S> {
    pub fn forward(params: &ModelParameters<S>, pool: &EntityPool<S>) -> Result<Self> {
        let nets = params
            .grounding
            .nets
            .iter()
            .map(|n| n.forward_batch(pool))
            .collect::<Result<Vec<_>>>()?;
        let weights: Vec<Vec<S>> = params.clusters.iter().map(|c| softmax_weights(&c.omega)).collect();
        let n = pool.len();
        let scores = weights
            .iter()
            .map(|w| {
                (0..n)
                    .map(|e| w.iter().zip(&nets).map(|(&wi, t)| wi * t.output()[e]).sum())
                    .collect()
            })
            .collect();
        Ok(Self { nets, weights, scores })
    }

    #[inline]
    pub fn alignment(&self, value: usize, e: EntityId) -> S {
        self.nets[value].output()[e.index()]
    }

    pub fn alignments(&self, value: usize) -> &[S] {
        self.nets[value].output()
    }

    #[inline]
    pub fn score(&self, cluster: usize, e: EntityId) -> S {
        self.scores[cluster][e.index()]
    }

    pub fn scores(&self, cluster: usize) -> &[S] {
        &self.scores[cluster]
    }

    pub fn weights(&self, cluster: usize) -> &[S] {
        &self.weights[cluster]
    }

    pub fn entity_count(&self) -> usize {
        self.nets.first().map_or(0, |t| t.output().len())
    }

    /// Reverse pass. Returns the gradient with respect to every parameter;
    /// a non-finite component is reported as divergence at its flat index.
    pub fn backward(
        &self,
        params: &ModelParameters<S>,
        pool: &EntityPool<S>,
        cot: &Cotangent<S>,
    ) -> Result<ModelParameters<S>> {
        let m = params.value_count();
        let n = self.entity_count();
        let mut grad = params.zeros_like();
        let mut d_g: Vec<Vec<S>> = cot.d_alignments.clone();
        for (l, d_a) in cot.d_scores.iter().enumerate() {
            if d_a.iter().all(|&d| d == S::zero()) {
                continue;
            }
            let w = &self.weights[l];
            let mut d_w = vec![S::zero(); m];
            for i in 0..m {
                let g = self.nets[i].output();
                let mut acc = S::zero();
                for e in 0..n {
                    acc += d_a[e] * g[e];
                }
                d_w[i] = acc;
                let wi = w[i];
                for (dg, &da) in d_g[i].iter_mut().zip(d_a) {
                    *dg += wi * da;
                }
            }
            let dot: S = w.iter().zip(&d_w).map(|(&a, &b)| a * b).sum();
            for k in 0..m {
                grad.clusters[l].omega[k] = w[k] * (d_w[k] - dot);
            }
        }
        for i in 0..m {
            if d_g[i].iter().any(|&d| d != S::zero()) {
                params.grounding.nets[i].backward_batch(pool, &self.nets[i], &d_g[i], &mut grad.grounding.nets[i]);
            }
        }
        if let Some(index) = grad.first_non_finite() {
            return Err(Error::Divergence { index });
        }
        Ok(grad)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{init_parameters, Architecture};
    use crate::rng::SeedTree;

    fn pool() -> EntityPool<f64> {
        let mut p = EntityPool::new(2);
        for k in 0..6 {
            let x = k as f64 / 5.0;
            p.push(&[x, 1.0 - x * x]).unwrap();
        }
        p
    }

    #[test]
    fn two_value_weight_jacobian_matches_hand_derivation() {
        // Loss = sum_e A_0(e). With weights (w, 1 - w), w = sigmoid(o_0 - o_1):
        // dL/do_0 = w (1 - w) sum_e (G_0(e) - G_1(e)) = -dL/do_1.
        let params: ModelParameters<f64> =
            init_parameters(&SeedTree::new(4), &Architecture::standard(2), 2, 1, 1.0).unwrap();
        let pool = pool();
        let tape = ModelTape::forward(&params, &pool).unwrap();
        let mut cot = Cotangent::zeros(2, 1, pool.len());
        cot.d_scores[0] = vec![1.0; pool.len()];
        let grad = tape.backward(&params, &pool, &cot).unwrap();
        let w = tape.weights(0)[0];
        let diff: f64 = (0..pool.len())
            .map(|e| tape.alignments(0)[e] - tape.alignments(1)[e])
            .sum();
        let expected = w * (1.0 - w) * diff;
        assert!((grad.clusters[0].omega[0] - expected).abs() < 1e-14);
        assert!((grad.clusters[0].omega[1] + expected).abs() < 1e-14);
    }

    #[test]
    fn unused_value_gets_zero_gradient_block() {
        let params: ModelParameters<f64> =
            init_parameters(&SeedTree::new(5), &Architecture::standard(2), 3, 1, 1.0).unwrap();
        let pool = pool();
        let tape = ModelTape::forward(&params, &pool).unwrap();
        let mut cot = Cotangent::zeros(3, 1, pool.len());
        cot.d_alignments[0] = vec![1.0; pool.len()];
        let grad = tape.backward(&params, &pool, &cot).unwrap();
        assert!(grad.grounding.nets[1].parameters().all(|&g| g == 0.0));
        assert!(grad.grounding.nets[2].parameters().all(|&g| g == 0.0));
        assert!(grad.grounding.nets[0].parameters().any(|&g| g != 0.0));
    }
}
