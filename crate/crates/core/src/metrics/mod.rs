//! Evaluation quantities of a social value system: coherence, discordance,
//! representativeness, conciseness, the adapted Dunn index, plus
//! adjusted-Rand scoring of assignments.
//!
//! Alignment and value-system functions are passed as closures over entity
//! ids, so callers can hand in either a cached score table or a direct model
//! evaluation. Per-agent terms are always reduced in dataset (ascending
//! agent id) order.

mod report;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use report::{context_report, ClusterReport, ClusterRow, ContextCell, ContextReport, TotalRow};

use crate::dataset::{AgentDataset, EntityId, GroundingDataset, ValueSystemDataset};
use crate::error::{Error, Result};
use crate::prefmodel::{bradley_terry, delta};
use crate::scalar::{from_usize, Scalar};

/// Agent-to-cluster assignment. `labels[j]` is the zero-based cluster of the
/// `j`-th agent of the value-system dataset.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    max_clusters: usize,
}

impl Assignment {
    pub fn new(labels: Vec<usize>, max_clusters: usize) -> Result<Self> {
        if max_clusters == 0 {
            return Err(Error::config("lmax", "must be at least 1"));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= max_clusters) {
            return Err(Error::Data(format!(
                "cluster index {bad} out of range for {max_clusters} clusters"
            )));
        }
        Ok(Self { labels, max_clusters })
    }

    /// Everyone in cluster 0.
    pub fn single(agents: usize, max_clusters: usize) -> Self {
        Self {
            labels: vec![0; agents],
            max_clusters: max_clusters.max(1),
        }
    }

    #[inline]
    pub fn cluster_of(&self, agent: usize) -> usize {
        self.labels[agent]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_clusters(&self) -> usize {
        self.max_clusters
    }

    pub fn set(&mut self, agent: usize, cluster: usize) {
        assert!(cluster < self.max_clusters, "cluster index out of range");
        self.labels[agent] = cluster;
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.max_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    /// Populated clusters in ascending order.
    pub fn populated(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.labels.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn populated_count(&self) -> usize {
        self.populated().len()
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.labels
            .iter()
            .enumerate()
            .filter(move |(_, &l)| l == cluster)
            .map(|(j, _)| j)
    }

    /// Number of agents mapped to the same cluster index in both assignments.
    pub fn identical_mappings(&self, other: &Assignment) -> usize {
        self.labels.iter().zip(&other.labels).filter(|(a, b)| a == b).count()
    }
}

#[inline]
fn pair_disagreement<S: Scalar, F: Fn(EntityId) -> S>(f: &F, left: EntityId, right: EntityId, y: S) -> Result<u8> {
    let p = bradley_terry(f(left), f(right))?.get();
    Ok(delta(p, y))
}

/// Mean disagreement of a function with one agent's labelled pairs.
pub fn discordance_agent<S: Scalar, F: Fn(EntityId) -> S>(f: F, dataset: &AgentDataset) -> Result<S> {
    if dataset.is_empty() {
        return Err(Error::Data(format!("agent {} has no records", dataset.agent_id)));
    }
    let mut count = 0usize;
    for r in &dataset.records {
        count += pair_disagreement(&f, r.left, r.right, r.label.value())? as usize;
    }
    Ok(from_usize::<S>(count) / from_usize(dataset.len()))
}

/// One minus the agent-averaged disagreement of an alignment function with
/// the per-value preferences.
pub fn coherence_value<S: Scalar, F: Fn(EntityId) -> S>(alignment: F, agents: &[AgentDataset]) -> Result<S> {
    if agents.is_empty() {
        return Err(Error::Data("coherence over an empty agent list".into()));
    }
    let mut total = S::zero();
    for agent in agents {
        total += discordance_agent(&alignment, agent)?;
    }
    Ok(S::one() - total / from_usize(agents.len()))
}

/// Per-value coherences and their mean.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundingCoherence<S> {
    pub per_value: Vec<S>,
    pub mean: S,
}

/// `alignment(i, e)` is the alignment of entity `e` with value `i`.
pub fn coherence_grounding<S: Scalar, F: Fn(usize, EntityId) -> S>(
    alignment: F,
    grounding: &GroundingDataset,
) -> Result<GroundingCoherence<S>> {
    let per_value = (0..grounding.value_count())
        .map(|i| coherence_value(|e| alignment(i, e), grounding.value(i)))
        .collect::<Result<Vec<S>>>()?;
    let mean = mean_coherence(&per_value)?;
    Ok(GroundingCoherence { per_value, mean })
}

pub fn mean_coherence<S: Scalar>(per_value: &[S]) -> Result<S> {
    crate::scalar::mean(per_value).ok_or_else(|| Error::Data("no values".into()))
}

fn check_cover(assignment: &Assignment, vs: &ValueSystemDataset) -> Result<()> {
    if assignment.len() != vs.len() {
        return Err(Error::Data(format!(
            "assignment covers {} agents, dataset has {}",
            assignment.len(),
            vs.len()
        )));
    }
    Ok(())
}

/// Per-agent discordance with the function of the agent's own cluster.
/// `cluster_fn(l, e)` evaluates cluster `l`'s value-system function.
pub fn agent_discordances<S: Scalar, F: Fn(usize, EntityId) -> S>(
    cluster_fn: F,
    assignment: &Assignment,
    vs: &ValueSystemDataset,
) -> Result<Vec<S>> {
    check_cover(assignment, vs)?;
    vs.agents()
        .iter()
        .enumerate()
        .map(|(j, agent)| {
            let l = assignment.cluster_of(j);
            discordance_agent(|e| cluster_fn(l, e), agent)
        })
        .collect()
}

pub fn representativeness<S: Scalar, F: Fn(usize, EntityId) -> S>(
    cluster_fn: F,
    assignment: &Assignment,
    vs: &ValueSystemDataset,
) -> Result<S> {
    if vs.is_empty() {
        return Err(Error::Data("representativeness over an empty society".into()));
    }
    let d = agent_discordances(cluster_fn, assignment, vs)?;
    let total: S = d.iter().copied().sum();
    Ok(S::one() - total / from_usize(vs.len()))
}

/// Representativeness restricted to the members of each populated cluster.
pub fn cluster_representativeness<S: Scalar, F: Fn(usize, EntityId) -> S>(
    cluster_fn: F,
    assignment: &Assignment,
    vs: &ValueSystemDataset,
) -> Result<BTreeMap<usize, S>> {
    let d = agent_discordances(cluster_fn, assignment, vs)?;
    let mut out = BTreeMap::new();
    for l in assignment.populated() {
        let members: Vec<S> = assignment.members(l).map(|j| d[j]).collect();
        let total: S = members.iter().copied().sum();
        out.insert(l, S::one() - total / from_usize(members.len()));
    }
    Ok(out)
}

/// Agent-averaged fraction of each agent's pairs on which two functions
/// disagree. Labels are ignored.
pub fn inter_cluster_discordance<S: Scalar, F1: Fn(EntityId) -> S, F2: Fn(EntityId) -> S>(
    f1: F1,
    f2: F2,
    vs: &ValueSystemDataset,
) -> Result<S> {
    if vs.is_empty() {
        return Err(Error::Data("inter-cluster discordance over an empty society".into()));
    }
    let mut total = S::zero();
    for agent in vs.agents() {
        if agent.is_empty() {
            return Err(Error::Data(format!("agent {} has no records", agent.agent_id)));
        }
        let mut count = 0usize;
        for r in &agent.records {
            let p = bradley_terry(f1(r.left), f1(r.right))?.get();
            let q = bradley_terry(f2(r.left), f2(r.right))?.get();
            count += delta(p, q) as usize;
        }
        total += from_usize::<S>(count) / from_usize(agent.len());
    }
    Ok(total / from_usize(vs.len()))
}

/// Minimum inter-cluster discordance over pairs of populated clusters;
/// `None` with fewer than two populated clusters.
pub fn conciseness<S: Scalar, F: Fn(usize, EntityId) -> S>(
    cluster_fn: F,
    assignment: &Assignment,
    vs: &ValueSystemDataset,
) -> Result<Option<S>> {
    check_cover(assignment, vs)?;
    let populated = assignment.populated();
    let mut best: Option<S> = None;
    for (a, &l1) in populated.iter().enumerate() {
        for &l2 in &populated[a + 1..] {
            let d = inter_cluster_discordance(|e| cluster_fn(l1, e), |e| cluster_fn(l2, e), vs)?;
            best = Some(match best {
                Some(b) if b <= d => b,
                _ => d,
            });
        }
    }
    Ok(best)
}

/// `conciseness / (1 - representativeness)`.
///
/// `None` when conciseness is undefined; `+inf` for a perfect fit with
/// positive conciseness; 0 whenever conciseness is 0.
pub fn dunn_index<S: Scalar>(representativeness: S, conciseness: Option<S>) -> Option<S> {
    let c = conciseness?;
    if c == S::zero() {
        return Some(S::zero());
    }
    let gap = S::one() - representativeness;
    if gap <= S::zero() {
        Some(S::infinity())
    } else {
        Some(c / gap)
    }
}

/// Headline scores of a social value system on its training data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "S: Scalar")]
pub struct SocietyScores<S> {
    pub coherence: Vec<S>,
    pub grounding_coherence: S,
    pub representativeness: S,
    pub conciseness: Option<S>,
    #[serde(with = "crate::metrics::dunn_serde")]
    pub dunn: Option<S>,
    pub populated: usize,
}

/// Serializes an optional Dunn index, writing `+inf` as the string `"inf"`
/// since JSON has no infinity.
pub(crate) mod dunn_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::scalar::Scalar;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr<S> {
        Num(S),
        Text(String),
    }

    pub fn serialize<S: Scalar, Z: Serializer>(value: &Option<S>, ser: Z) -> Result<Z::Ok, Z::Error> {
        match value {
            None => ser.serialize_none(),
            Some(v) if v.is_infinite() => ser.serialize_some("inf"),
            Some(v) => ser.serialize_some(v),
        }
    }

    pub fn deserialize<'de, S: Scalar, D: Deserializer<'de>>(de: D) -> Result<Option<S>, D::Error> {
        match Option::<Repr<S>>::deserialize(de)? {
            None => Ok(None),
            Some(Repr::Num(v)) => Ok(Some(v)),
            Some(Repr::Text(t)) if t == "inf" => Ok(Some(S::infinity())),
            Some(Repr::Text(t)) => Err(serde::de::Error::custom(format!("bad Dunn value `{t}`"))),
        }
    }
}

fn choose2(n: u64) -> f64 {
    (n * n.saturating_sub(1) / 2) as f64
}

/// Adjusted Rand index between two partitions of the same agents.
pub fn adjusted_rand_index(a: &Assignment, b: &Assignment) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Data(format!(
            "assignments cover different agent sets ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&n| choose2(n)).sum();
    let sum_rows: f64 = rows.values().map(|&n| choose2(n)).sum();
    let sum_cols: f64 = cols.values().map(|&n| choose2(n)).sum();
    let total = choose2(a.len() as u64);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if max_index == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Label, PreferenceRecord};

    fn rec(l: u32, r: u32, label: Label) -> PreferenceRecord {
        PreferenceRecord::new(EntityId(l), EntityId(r), label)
    }

    fn table(values: &[f64]) -> impl Fn(EntityId) -> f64 + '_ {
        move |e| values[e.index()]
    }

    #[test]
    fn coherence_hand_example() {
        // A = {e1: 0, e2: -1, e3: -1}; (e1,e2,1) agrees, (e2,e3,1) ties → δ = 1.
        let agent = AgentDataset::new("a", vec![rec(0, 1, Label::Left), rec(1, 2, Label::Left)]);
        let a = [0.0, -1.0, -1.0];
        assert_eq!(coherence_value(table(&a), &[agent.clone()]).unwrap(), 0.5);
        let exact = [0.0, -1.0, -2.0];
        assert_eq!(coherence_value(table(&exact), &[agent.clone()]).unwrap(), 1.0);
        let flat = [-1.0, -1.0, -1.0];
        assert_eq!(coherence_value(table(&flat), &[agent]).unwrap(), 0.0);
        assert!(coherence_value(table(&flat), &[]).is_err());
    }

    #[test]
    fn grounding_coherence_is_mean() {
        assert_eq!(mean_coherence(&[1.0, 1.0, 1.0]).unwrap(), 1.0);
        assert!((mean_coherence(&[1.0f64, 0.0, 1.0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(mean_coherence(&[0.5, 0.5, 0.5]).unwrap(), 0.5);
    }

    #[test]
    fn discordance_examples() {
        let agent = AgentDataset::new(
            "a",
            vec![rec(0, 1, Label::Left), rec(1, 2, Label::Left), rec(2, 0, Label::Right)],
        );
        let fits = [3.0, 2.0, 1.0];
        assert_eq!(discordance_agent(table(&fits), &agent).unwrap(), 0.0);
        let reversed = [1.0, 2.0, 3.0];
        assert_eq!(discordance_agent(table(&reversed), &agent).unwrap(), 1.0);
        // Brute force: only (1,2) disagrees under this function.
        let one_off = [3.0, 1.0, 2.0];
        let expected = agent
            .records
            .iter()
            .filter(|r| {
                let s = one_off[r.left.index()] - one_off[r.right.index()];
                (s > 0.0) != (r.label == Label::Left)
            })
            .count() as f64
            / 3.0;
        assert_eq!(expected, 1.0 / 3.0);
        assert_eq!(discordance_agent(table(&one_off), &agent).unwrap(), expected);
        assert!(discordance_agent(table(&fits), &AgentDataset::new("e", vec![])).is_err());
    }

    #[test]
    fn representativeness_averages_agents() {
        // Agent 1: 5 records, 1 wrong (0.2); agent 2: 5 records, 2 wrong (0.4).
        let scores = [1.0, 0.0];
        let good = rec(0, 1, Label::Left);
        let bad = rec(1, 0, Label::Left);
        let vs = ValueSystemDataset::new(vec![
            AgentDataset::new("1", vec![good, good, good, good, bad]),
            AgentDataset::new("2", vec![good, good, good, bad, bad]),
        ])
        .unwrap();
        let beta = Assignment::single(2, 1);
        let r: f64 = representativeness(|_, e| scores[e.index()], &beta, &vs).unwrap();
        assert!((r - 0.7).abs() < 1e-15);
    }

    #[test]
    fn inter_cluster_examples() {
        let vs = ValueSystemDataset::new(vec![AgentDataset::new(
            "1",
            vec![
                rec(0, 1, Label::Left),
                rec(1, 2, Label::Left),
                rec(2, 3, Label::Left),
                rec(0, 3, Label::Left),
            ],
        )])
        .unwrap();
        let f = [4.0, 3.0, 2.0, 1.0];
        let neg: Vec<f64> = f.iter().map(|x| -x).collect();
        assert_eq!(inter_cluster_discordance(table(&f), table(&f), &vs).unwrap(), 0.0);
        assert_eq!(inter_cluster_discordance(table(&f), table(&neg), &vs).unwrap(), 1.0);
        // Swapping entities 2 and 3 flips exactly the pair (2,3).
        let g = [4.0, 3.0, 1.0, 2.0];
        assert_eq!(inter_cluster_discordance(table(&f), table(&g), &vs).unwrap(), 0.25);
    }

    #[test]
    fn conciseness_undefined_for_single_cluster_and_minimum_otherwise() {
        let vs = ValueSystemDataset::new(vec![
            AgentDataset::new("1", vec![rec(0, 1, Label::Left)]),
            AgentDataset::new("2", vec![rec(2, 3, Label::Left)]),
        ])
        .unwrap();
        let f = |_: usize, e: EntityId| e.index() as f64;
        assert_eq!(conciseness(f, &Assignment::single(2, 3), &vs).unwrap(), None);

        // Clusters: 0 = increasing, 1 = decreasing, 2 = decreasing except pair (2,3).
        let scores = [[0.0, 1.0, 2.0, 3.0], [3.0, 2.0, 1.0, 0.0], [3.0, 2.0, 0.0, 1.0]];
        let f = |l: usize, e: EntityId| scores[l][e.index()];
        let beta = Assignment::new(vec![0, 1], 3).unwrap();
        // Only clusters 0 and 1 are populated: discordance 1.
        assert_eq!(conciseness(f, &beta, &vs).unwrap(), Some(1.0));
        let beta = Assignment::new(vec![1, 2], 3).unwrap();
        assert_eq!(conciseness(f, &beta, &vs).unwrap(), Some(0.5));
    }

    #[test]
    fn dunn_examples() {
        let d = dunn_index(0.845f64, Some(0.429)).unwrap();
        assert!((d - 2.767_741_935_483_870_4).abs() < 1e-12);
        assert_eq!(dunn_index(0.5, Some(0.0)), Some(0.0));
        assert_eq!(dunn_index(1.0, Some(0.3)), Some(f64::INFINITY));
        assert_eq!(dunn_index::<f64>(0.9, None), None);
    }

    #[test]
    fn dunn_serializes_infinity() {
        let s = SocietyScores {
            coherence: vec![1.0],
            grounding_coherence: 1.0,
            representativeness: 1.0,
            conciseness: Some(0.3),
            dunn: Some(f64::INFINITY),
            populated: 2,
        };
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"dunn\":\"inf\""));
        let back: SocietyScores<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    fn contingency_oracle(a: &[usize], b: &[usize]) -> f64 {
        // Hand-rolled pair counting over all agent pairs.
        let n = a.len();
        let (mut same_both, mut same_a, mut same_b) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                let sa = a[i] == a[j];
                let sb = b[i] == b[j];
                same_a += sa as u8 as f64;
                same_b += sb as u8 as f64;
                same_both += (sa && sb) as u8 as f64;
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        let expected = same_a * same_b / pairs;
        (same_both - expected) / (0.5 * (same_a + same_b) - expected)
    }

    #[test]
    fn ari_examples() {
        let a = Assignment::new(vec![0, 0, 0, 1, 1, 1], 2).unwrap();
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        let relabeled = Assignment::new(vec![1, 1, 1, 0, 0, 0], 2).unwrap();
        assert_eq!(adjusted_rand_index(&a, &relabeled).unwrap(), 1.0);
        let swapped = Assignment::new(vec![0, 0, 1, 1, 1, 1], 2).unwrap();
        let ari = adjusted_rand_index(&a, &swapped).unwrap();
        let oracle = contingency_oracle(a.labels(), swapped.labels());
        assert!((ari - oracle).abs() < 1e-12);
        // Contingency [[2,1],[0,3]]: (4 - 2.8) / (6.5 - 2.8).
        assert!((ari - 1.2 / 3.7).abs() < 1e-12);
        let short = Assignment::new(vec![0, 1], 2).unwrap();
        assert!(adjusted_rand_index(&a, &short).is_err());
    }

    #[test]
    fn affine_transform_leaves_metrics_unchanged() {
        let agent = AgentDataset::new(
            "a",
            vec![
                rec(0, 1, Label::Left),
                rec(1, 2, Label::Tie),
                rec(2, 3, Label::Right),
                rec(3, 0, Label::Left),
            ],
        );
        let f = [0.5, -1.0, -1.0, 2.0];
        let g: Vec<f64> = f.iter().map(|x| 2.0 * x + 3.0).collect();
        assert_eq!(
            discordance_agent(table(&f), &agent).unwrap(),
            discordance_agent(table(&g), &agent).unwrap()
        );
    }
}
