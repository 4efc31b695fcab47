//! Synthetic societies with planted clusters, the linear feasibility scan
//! used as a bi-level counterexample witness, and the flat and sequential
//! baselines.

use std::io::Write;

use num_traits::{FromPrimitive, Num};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    AgentDataset, EntityId, EntityPool, GroundingDataset, Label, PreferenceRecord, Society, ValueSystemDataset,
};
use crate::emtrain::{self, grounding_term, representativeness_term};
use crate::error::{Error, Result};
use crate::metrics::{self, Assignment, SocietyScores};
use crate::netcore::{init_parameters, Architecture, Cotangent, MlpParameters, ModelParameters, ModelTape};
use crate::rng::SeedTree;
use crate::route_choice::{write_choice_csv, ChoiceInstance, ChoiceSchema, Chosen};
use crate::scalar::Scalar;

/// A planted society: `grounding[i]` is the row of the linear map giving
/// alignment `A_i(x) = -(grounding[i] . x)`, and cluster `k` scores entities
/// by `sum_i cluster_weights[k][i] * A_i(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub agents: usize,
    pub cluster_weights: Vec<Vec<f64>>,
    pub grounding: Vec<Vec<f64>>,
    pub pairs_per_agent: usize,
    /// Probability of flipping each value-system label.
    pub noise: f64,
    /// When set, pairs are drawn from a shared pool of this many entities
    /// instead of fresh entities per pair.
    pub entity_pool: Option<usize>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Identity grounding in `weights[0].len()` dimensions, no noise.
    pub fn planted(agents: usize, cluster_weights: Vec<Vec<f64>>, pairs_per_agent: usize, seed: u64) -> Self {
        let m = cluster_weights.first().map_or(0, Vec::len);
        let grounding = (0..m)
            .map(|i| (0..m).map(|k| f64::from(u8::from(i == k))).collect())
            .collect();
        Self {
            agents,
            cluster_weights,
            grounding,
            pairs_per_agent,
            noise: 0.0,
            entity_pool: None,
            seed,
        }
    }

    pub fn value_count(&self) -> usize {
        self.grounding.len()
    }

    pub fn dim(&self) -> usize {
        self.grounding.first().map_or(0, Vec::len)
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_weights.len()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.value_count();
        if m == 0 || self.dim() == 0 {
            return Err(Error::config(
                "synthetic.grounding",
                "needs at least one value and one feature",
            ));
        }
        if self
            .grounding
            .iter()
            .any(|r| r.len() != self.dim() || r.iter().any(|x| !x.is_finite()))
        {
            return Err(Error::config(
                "synthetic.grounding",
                "rows must be finite and of equal length",
            ));
        }
        if self.cluster_weights.is_empty() {
            return Err(Error::config("synthetic.clusters", "needs at least one cluster"));
        }
        for w in &self.cluster_weights {
            let sum: f64 = w.iter().sum();
            if w.len() != m || w.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
                return Err(Error::config(
                    "synthetic.clusters",
                    "weight vectors must lie on the simplex",
                ));
            }
        }
        if self.agents < self.cluster_count() {
            return Err(Error::config("synthetic.agents", "fewer agents than planted clusters"));
        }
        if self.pairs_per_agent == 0 {
            return Err(Error::config("synthetic.pairs", "must be at least 1"));
        }
        if !(0.0..0.5).contains(&self.noise) {
            return Err(Error::config("synthetic.noise", "must lie in [0, 0.5)"));
        }
        if matches!(self.entity_pool, Some(n) if n < 2) {
            return Err(Error::config("synthetic.entity_pool", "needs at least two entities"));
        }
        Ok(())
    }

    /// Planted alignment of value `i`.
    pub fn alignment(&self, i: usize, x: &[f64]) -> f64 {
        -self.grounding[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Planted value-system function of cluster `k`.
    pub fn score(&self, k: usize, x: &[f64]) -> f64 {
        self.cluster_weights[k]
            .iter()
            .enumerate()
            .map(|(i, w)| w * self.alignment(i, x))
            .sum()
    }

    /// Planted cluster of agent `j`: contiguous blocks of near-equal size.
    pub fn planted_cluster(&self, j: usize) -> usize {
        j * self.cluster_count() / self.agents
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticSociety<S> {
    pub society: Society<S>,
    pub truth: Assignment,
    /// Entity features in `f64`, as used for labelling.
    pub features: EntityPool<f64>,
}

pub fn generate_society<S: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticSociety<S>> {
    spec.validate()?;
    let seeds = SeedTree::new(spec.seed);
    let dim = spec.dim();
    let mut features = EntityPool::<f64>::new(dim);
    let draw = |rng: &mut crate::rng::StreamRng, pool: &mut EntityPool<f64>| -> Result<EntityId> {
        let x: Vec<f64> = (0..dim).map(|_| rng.gen::<f64>()).collect();
        pool.push(&x)
    };
    if let Some(n) = spec.entity_pool {
        let mut rng = seeds.stream("entities", 0);
        for _ in 0..n {
            draw(&mut rng, &mut features)?;
        }
    }
    let m = spec.value_count();
    let mut vs_agents = Vec::with_capacity(spec.agents);
    let mut grounding: Vec<Vec<AgentDataset>> = vec![Vec::with_capacity(spec.agents); m];
    let mut truth = Vec::with_capacity(spec.agents);
    for j in 0..spec.agents {
        let k = spec.planted_cluster(j);
        truth.push(k);
        let mut rng = seeds.stream("pairs", j as u64);
        let mut noise = seeds.stream("noise", j as u64);
        let mut pairs = Vec::with_capacity(spec.pairs_per_agent);
        for _ in 0..spec.pairs_per_agent {
            let (a, b) = match spec.entity_pool {
                Some(n) => {
                    let a = rng.gen_range(0..n);
                    let mut b = rng.gen_range(0..n - 1);
                    if b >= a {
                        b += 1;
                    }
                    (EntityId(a as u32), EntityId(b as u32))
                }
                None => (draw(&mut rng, &mut features)?, draw(&mut rng, &mut features)?),
            };
            pairs.push((a, b));
        }
        let id = (j + 1).to_string();
        let records = pairs
            .iter()
            .map(|&(a, b)| {
                let label =
                    Label::from_scores(spec.score(k, features.features(a)), spec.score(k, features.features(b)));
                let label = if spec.noise > 0.0 && noise.gen::<f64>() < spec.noise {
                    label.flipped()
                } else {
                    label
                };
                PreferenceRecord::new(a, b, label)
            })
            .collect();
        vs_agents.push(AgentDataset::new(id.clone(), records));
        for (i, per_value) in grounding.iter_mut().enumerate() {
            let records = pairs
                .iter()
                .map(|&(a, b)| {
                    let label = Label::from_scores(
                        spec.alignment(i, features.features(a)),
                        spec.alignment(i, features.features(b)),
                    );
                    PreferenceRecord::new(a, b, label)
                })
                .collect();
            per_value.push(AgentDataset::new(id.clone(), records));
        }
    }
    let mut entities = EntityPool::<S>::new(dim);
    for row in features.rows() {
        let x: Vec<S> = row.iter().map(|&v| S::lit(v)).collect();
        entities.push(&x)?;
    }
    let value_names = (1..=m).map(|i| format!("v{i}")).collect();
    let society = Society::new(
        entities,
        ValueSystemDataset::new(vs_agents)?,
        GroundingDataset::new(grounding)?,
        value_names,
    )?;
    Ok(SyntheticSociety {
        society,
        truth: Assignment::new(truth, spec.cluster_count())?,
        features,
    })
}

/// Writes the value-system preferences in the generic choice layout
/// (`ID, choice, x1_r1.., x1_r2..`). Tied pairs have no strict choice and
/// are skipped; the number skipped is returned.
pub fn export_choice_csv<W: Write>(synthetic: &SyntheticSociety<impl Scalar>, writer: W) -> Result<usize> {
    let mut instances = Vec::new();
    let mut skipped = 0;
    for agent in synthetic.society.vs.agents() {
        for r in &agent.records {
            let chosen = match r.label {
                Label::Left => Chosen::First,
                Label::Right => Chosen::Second,
                Label::Tie => {
                    skipped += 1;
                    continue;
                }
            };
            instances.push(ChoiceInstance {
                agent: agent.agent_id.clone(),
                first: synthetic.features.features(r.left).to_vec(),
                second: synthetic.features.features(r.right).to_vec(),
                chosen,
            });
        }
    }
    write_choice_csv(
        writer,
        &ChoiceSchema::generic(synthetic.features.dim()),
        &instances,
        &[],
    )?;
    Ok(skipped)
}

/// Simplex grid points `w` (step `1/resolution`) for which the linear score
/// `w . g(e)` orders the entities exactly as `ranking` (best first), with
/// every pairwise preference strict.
pub fn linear_feasibility_scan<T>(grounding: &[Vec<T>], ranking: &[usize], resolution: usize) -> Result<Vec<Vec<T>>>
where
    T: Num + PartialOrd + Clone + FromPrimitive,
{
    let m = grounding.first().map_or(0, Vec::len);
    if m == 0 || grounding.iter().any(|g| g.len() != m) {
        return Err(Error::Data(
            "grounding vectors must be non-empty and of equal length".into(),
        ));
    }
    if resolution == 0 {
        return Err(Error::config("resolution", "must be at least 1"));
    }
    if let Some(&bad) = ranking.iter().find(|&&e| e >= grounding.len()) {
        return Err(Error::Data(format!("ranking references unknown entity {bad}")));
    }
    let denom = T::from_usize(resolution).ok_or_else(|| Error::config("resolution", "not representable"))?;
    let mut feasible = Vec::new();
    let mut counts = vec![0usize; m];
    counts[m - 1] = resolution;
    loop {
        if counts.iter().sum::<usize>() == resolution {
            let w: Vec<T> = counts
                .iter()
                .map(|&c| T::from_usize(c).expect("grid count representable") / denom.clone())
                .collect();
            let score = |e: usize| {
                grounding[e]
                    .iter()
                    .zip(&w)
                    .fold(T::zero(), |acc, (g, wi)| acc + g.clone() * wi.clone())
            };
            let scores: Vec<T> = ranking.iter().map(|&e| score(e)).collect();
            let ok = (0..scores.len()).all(|a| (a + 1..scores.len()).all(|b| scores[a] > scores[b]));
            if ok {
                feasible.push(w);
            }
        }
        // Odometer over the first m-1 coordinates; the last is implied.
        let mut k = 0;
        loop {
            if k + 1 >= m {
                return Ok(feasible);
            }
            counts[k] += 1;
            let head: usize = counts[..m - 1].iter().sum();
            if head <= resolution {
                counts[m - 1] = resolution - head;
                break;
            }
            counts[k] = 0;
            k += 1;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatBtConfig<S> {
    pub steps: usize,
    pub lr: S,
    pub init_scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlatBtResult<S> {
    pub network: MlpParameters<S>,
    pub representativeness: S,
    /// Coherence of the single network's output with each value.
    pub coherence: Vec<S>,
    pub final_loss: S,
}

/// One network fitted to the pooled society preferences, ignoring values.
pub fn baseline_flat_bt<S: Scalar>(society: &Society<S>, config: &FlatBtConfig<S>) -> Result<FlatBtResult<S>> {
    let arch = Architecture::standard(society.entities.dim());
    let params: ModelParameters<S> = init_parameters(
        &SeedTree::new(config.seed).child("flat", 0),
        &arch,
        1,
        1,
        config.init_scale,
    )?;
    let mut net = params.grounding.nets.into_iter().next().expect("one network");
    let agents: Vec<&AgentDataset> = society.vs.agents().iter().collect();
    let pool = &society.entities;
    let mut loss = S::zero();
    for _ in 0..config.steps {
        let tape = net.forward_batch(pool)?;
        let mut d = vec![S::zero(); pool.len()];
        loss = emtrain::agent_cross_entropy(tape.output(), &agents, S::one(), Some(&mut d));
        let mut grad = MlpParameters::zeros(&arch);
        net.backward_batch(pool, &tape, &d, &mut grad);
        for (p, g) in net.parameters_mut().zip(grad.parameters()) {
            *p -= config.lr * *g;
        }
        if net.parameters().any(|p| !p.is_finite()) {
            return Err(Error::Divergence {
                index: net.parameters().position(|p| !p.is_finite()).unwrap_or(0),
            });
        }
    }
    let out = net.forward_batch(pool)?.output().to_vec();
    if config.steps == 0 {
        loss = emtrain::agent_cross_entropy(&out, &agents, S::one(), None);
    }
    let single = Assignment::single(society.agent_count(), 1);
    let representativeness = metrics::representativeness(|_, e: EntityId| out[e.index()], &single, &society.vs)?;
    let coherence = (0..society.value_count())
        .map(|i| metrics::coherence_value(|e: EntityId| out[e.index()], society.grounding.value(i)))
        .collect::<Result<Vec<S>>>()?;
    Ok(FlatBtResult {
        network: net,
        representativeness,
        coherence,
        final_loss: loss,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequentialConfig<S> {
    pub grounding_steps: usize,
    pub weight_steps: usize,
    pub lr_theta: S,
    pub lr_omega: S,
    pub init_scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SequentialResult<S> {
    pub params: ModelParameters<S>,
    pub scores: SocietyScores<S>,
}

/// Fits each grounding network alone, then freezes them and fits a single
/// cluster's weights.
pub fn baseline_sequential<S: Scalar>(
    society: &Society<S>,
    config: &SequentialConfig<S>,
) -> Result<SequentialResult<S>> {
    let m = society.value_count();
    let arch = Architecture::standard(society.entities.dim());
    let mut params: ModelParameters<S> = init_parameters(&SeedTree::new(config.seed), &arch, m, 1, config.init_scale)?;
    let pool = &society.entities;
    for _ in 0..config.grounding_steps {
        let tape = ModelTape::forward(&params, pool)?;
        let mut cot = Cotangent::zeros(m, 1, pool.len());
        for i in 0..m {
            grounding_term(&tape, society, i, S::one(), Some(&mut cot))?;
        }
        let grad = tape.backward(&params, pool, &cot)?;
        params.descend(&grad, config.lr_theta, S::zero());
    }
    let single = Assignment::single(society.agent_count(), 1);
    for _ in 0..config.weight_steps {
        let tape = ModelTape::forward(&params, pool)?;
        let mut cot = Cotangent::zeros(m, 1, pool.len());
        representativeness_term(&tape, society, &single, Some(&mut cot));
        let grad = tape.backward(&params, pool, &cot)?;
        params.descend(&grad, S::zero(), config.lr_omega);
    }
    if let Some(index) = params.first_non_finite() {
        return Err(Error::Divergence { index });
    }
    let scores = emtrain::score_state(&params, &single, society)?;
    Ok(SequentialResult { params, scores })
}

/// Fraction of labels on which the planted functions agree with the emitted
/// value-system dataset.
pub fn planted_representativeness<S: Scalar>(spec: &SyntheticSpec, synthetic: &SyntheticSociety<S>) -> Result<f64> {
    let f = |k: usize, e: EntityId| spec.score(k, synthetic.features.features(e));
    metrics::representativeness(f, &synthetic.truth, &synthetic.society.vs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn counterexample_witness() {
        let g1 = vec![vec![r(1, 1), r(0, 1)], vec![r(0, 1), r(1, 1)], vec![r(3, 10), r(3, 10)]];
        let feasible = linear_feasibility_scan(&g1, &[0, 1, 2], 200).unwrap();
        assert!(feasible.contains(&vec![r(3, 5), r(2, 5)]));
        let g2 = vec![vec![r(1, 1), r(0, 1)], vec![r(0, 1), r(1, 1)], vec![r(3, 10), r(7, 10)]];
        assert!(linear_feasibility_scan(&g2, &[0, 1, 2], 200).unwrap().is_empty());
    }

    #[test]
    fn single_entity_leaves_whole_grid() {
        let g = vec![vec![r(1, 2), r(1, 3), r(1, 5)]];
        let all = linear_feasibility_scan(&g, &[0], 10).unwrap();
        assert_eq!(all.len(), 66);
        assert!(all.iter().all(|w| w.iter().cloned().sum::<Rational>() == r(1, 1)));
        let two = linear_feasibility_scan(&[vec![1.0f64, 2.0]], &[0], 4).unwrap();
        assert_eq!(two.len(), 5);
    }

    #[test]
    fn scan_is_monotone_in_resolution() {
        let g1 = vec![vec![r(1, 1), r(0, 1)], vec![r(0, 1), r(1, 1)], vec![r(3, 10), r(3, 10)]];
        let coarse = linear_feasibility_scan(&g1, &[0, 1, 2], 20).unwrap();
        let fine = linear_feasibility_scan(&g1, &[0, 1, 2], 200).unwrap();
        assert!(!coarse.is_empty());
        assert!(coarse.iter().all(|w| fine.contains(w)));
    }

    fn spec() -> SyntheticSpec {
        SyntheticSpec::planted(
            12,
            vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8]],
            10,
            3,
        )
    }

    #[test]
    fn noiseless_society_is_fit_by_planted_functions() {
        let s = spec();
        let syn = generate_society::<f64>(&s).unwrap();
        assert_eq!(planted_representativeness(&s, &syn).unwrap(), 1.0);
        for i in 0..3 {
            let c = metrics::coherence_value(
                |e: EntityId| s.alignment(i, syn.features.features(e)),
                syn.society.grounding.value(i),
            )
            .unwrap();
            assert_eq!(c, 1.0);
        }
        assert_eq!(syn.truth.sizes(), vec![4, 4, 4]);
        assert_eq!(syn.society.entities.len(), 12 * 10 * 2);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_society::<f64>(&spec()).unwrap();
        let b = generate_society::<f64>(&spec()).unwrap();
        assert_eq!(a.society, b.society);
        let mut other = spec();
        other.seed = 4;
        assert_ne!(generate_society::<f64>(&other).unwrap().society, a.society);
    }

    #[test]
    fn noise_rate_shows_in_planted_fit() {
        let mut s = SyntheticSpec::planted(20, vec![vec![0.5, 0.5]], 100, 11);
        s.noise = 0.1;
        s.entity_pool = Some(300);
        let syn = generate_society::<f64>(&s).unwrap();
        let repr = planted_representativeness(&s, &syn).unwrap();
        assert!((repr - 0.9).abs() < 0.03, "{repr}");
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let mut s = spec();
        s.noise = 0.5;
        assert_eq!(s.validate().unwrap_err().exit_code(), 2);
        let mut s = spec();
        s.cluster_weights[0] = vec![0.5, 0.1, 0.1];
        assert!(s.validate().is_err());
    }

    #[test]
    fn flat_baseline_fits_a_single_cluster() {
        let mut s = SyntheticSpec::planted(6, vec![vec![0.6, 0.4]], 20, 5);
        s.entity_pool = Some(60);
        let syn = generate_society::<f64>(&s).unwrap();
        let untrained = baseline_flat_bt(
            &syn.society,
            &FlatBtConfig {
                steps: 0,
                lr: 0.5,
                init_scale: 1.0,
                seed: 1,
            },
        )
        .unwrap();
        let trained = baseline_flat_bt(
            &syn.society,
            &FlatBtConfig {
                steps: 400,
                lr: 0.5,
                init_scale: 1.0,
                seed: 1,
            },
        )
        .unwrap();
        assert!(trained.final_loss < untrained.final_loss);
        assert!(trained.representativeness >= 0.9, "{}", trained.representativeness);
    }

    #[test]
    fn export_writes_one_row_per_strict_pair() {
        let syn = generate_society::<f64>(&spec()).unwrap();
        let mut buf = Vec::new();
        let skipped = export_choice_csv(&syn, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 120 - skipped);
        assert!(text.starts_with("ID,choice,x1_r1,x2_r1,x3_r1,x1_r2"));
    }
}
